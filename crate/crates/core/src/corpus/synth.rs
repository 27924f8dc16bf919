//! Deterministic synthetic cases built from the chain library.
//!
//! Each case instantiates one chain of its charge: a minimal satisfying set
//! of premise and situation labels is drawn, the facts realise those labels
//! with randomly chosen lexicon phrases and the opinion restates them with
//! canonical phrases before a sentence drawn uniformly from the chain's
//! range. Distractor statements built the same way from other charges make
//! the facts alone ambiguous about the charge.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CaseRecord;
use crate::chain::{ChainLibrary, LegalChain};
use crate::error::{Error, Result};
use crate::evaluation::sentencing_char_span;

const SURNAMES: &[&str] = &[
    "Wang", "Li", "Zhang", "Liu", "Chen", "Yang", "Zhao", "Huang", "Zhou", "Wu", "Xu", "Sun", "Hu", "Zhu", "Gao",
    "Lin", "Song", "Guo", "Ma", "Luo",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub cases_per_charge: usize,
    /// Charges to generate, in order; empty means every library charge.
    pub charges: Vec<String>,
    /// Statements from other charges mixed into each fact.
    pub distractors: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            cases_per_charge: 20,
            charges: Vec::new(),
            distractors: 1,
        }
    }
}

pub fn charge_name(charge: &str) -> String {
    charge.replace('_', " ")
}

/// A minimal satisfying set of premise labels and of situation labels.
fn witness<R: Rng>(rng: &mut R, chain: &LegalChain) -> (Vec<String>, Vec<String>) {
    (
        chain.premise.expr.sample_witness(rng),
        chain.situation.expr.sample_witness(rng),
    )
}

/// Fact statement realising `labels` with randomly chosen phrases.
fn statement<R: Rng>(rng: &mut R, defendant: &str, chain: &LegalChain, labels: &[String]) -> String {
    let phrases: Vec<String> = labels
        .iter()
        .map(|l| {
            let p = chain.phrases(l);
            p[rng.gen_range(0..p.len())].clone()
        })
        .collect();
    format!("The prosecution alleges that {defendant} {}.", phrases.join(", "))
}

pub fn synthesize_corpus(cfg: &SynthConfig, library: &ChainLibrary) -> Result<Vec<CaseRecord>> {
    if library.is_empty() {
        return Err(Error::Argument("chain library is empty".into()));
    }
    let charges = if cfg.charges.is_empty() {
        library.charges()
    } else {
        cfg.charges.clone()
    };
    for c in &charges {
        library.require(c)?;
    }
    let all = library.charges();
    let mut out = Vec::with_capacity(charges.len() * cfg.cases_per_charge);
    let mut stream = 0u64;
    for charge in &charges {
        let cs = library.require(charge)?;
        for i in 0..cfg.cases_per_charge {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(stream);
            stream += 1;

            let defendant = format!("Defendant {}", pick_str(&mut rng, SURNAMES));
            let chain_idx = rng.gen_range(0..cs.len());
            let chain = &cs.chains[chain_idx];

            let (premise, situation) = witness(&mut rng, chain);
            let labels: Vec<String> = premise.iter().chain(&situation).cloned().collect();
            let mut statements = vec![statement(&mut rng, &defendant, chain, &labels)];
            let others: Vec<&String> = all.iter().filter(|c| *c != charge).collect();
            for _ in 0..cfg.distractors.min(others.len()) {
                let other = library.require(others[rng.gen_range(0..others.len())])?;
                let oc = &other.chains[rng.gen_range(0..other.len())];
                let (p, q) = witness(&mut rng, oc);
                let labels: Vec<String> = p.into_iter().chain(q).collect();
                statements.push(statement(&mut rng, &defendant, oc, &labels));
            }
            statements.shuffle(&mut rng);
            let fact = statements.join(" ");

            let r = &chain.conclusion;
            let months = rng.gen_range(r.min_months..=r.max_months);
            let opinion = opinion_text(&defendant, charge, chain, &premise, &situation, months);
            let (span, parsed) = sentencing_char_span(&opinion).expect("template carries a sentencing clause");
            debug_assert_eq!(parsed, months);

            out.push(CaseRecord {
                case_id: format!("{charge}-{i:03}"),
                fact,
                charge: charge.clone(),
                opinion,
                sentence_months: months,
                sentencing_span: [span.start, span.end],
                defendant,
            });
        }
    }
    Ok(out)
}

fn pick_str<R: Rng>(rng: &mut R, v: &[&str]) -> String {
    v[rng.gen_range(0..v.len())].to_string()
}

fn opinion_text(
    defendant: &str,
    charge: &str,
    chain: &LegalChain,
    premise: &[String],
    situation: &[String],
    months: u32,
) -> String {
    let canon = |v: &[String]| v.iter().map(|l| chain.canonical_phrase(l)).collect::<Vec<_>>().join(", ");
    format!(
        "This court holds that {defendant}, {} {}. The actions constitute the crime of {}. In accordance with {} \
of the Criminal Law, the judgment is as follows: {months} months of fixed-term imprisonment.",
        canon(premise),
        canon(situation),
        charge_name(charge),
        chain.source_provision,
    )
}
