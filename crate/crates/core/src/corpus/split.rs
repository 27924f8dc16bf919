use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::CaseRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub train: Vec<CaseRecord>,
    pub test: Vec<CaseRecord>,
    pub seed: u64,
}

/// Stratified split: each charge contributes `round(ratio · count)` cases
/// to train, chosen by a seeded shuffle. Both halves keep corpus order.
pub fn split(corpus: &[CaseRecord], ratio: f64, seed: u64) -> Result<CorpusSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Argument(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in corpus.iter().enumerate() {
        groups.entry(c.charge.as_str()).or_default().push(i);
    }
    let mut in_train = vec![false; corpus.len()];
    for (k, (charge, idx)) in groups.into_iter().enumerate() {
        if idx.len() < 2 {
            log::warn!("charge `{charge}` has {} case(s); cannot stratify", idx.len());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut shuffled = idx.clone();
        shuffled.shuffle(&mut rng);
        let n_train = (ratio * idx.len() as f64).round() as usize;
        for &i in &shuffled[..n_train] {
            in_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (c, t) in corpus.iter().zip(in_train) {
        if t {
            train.push(c.clone());
        } else {
            test.push(c.clone());
        }
    }
    Ok(CorpusSplit { train, test, seed })
}
