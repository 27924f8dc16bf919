//! Sentencing error and lexical overlap metrics.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What to do with a prediction that carries no sentencing clause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsentPolicy {
    /// Score as a prediction of 0 months.
    #[default]
    Zero,
    /// Leave the case out and report how many were dropped.
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorStats {
    pub mae: f64,
    pub rmse: f64,
    /// Cases that entered the averages.
    pub counted: usize,
    pub dropped: usize,
}

pub fn mae_rmse(preds: &[Option<u32>], golds: &[u32], policy: AbsentPolicy) -> Result<ErrorStats> {
    if preds.len() != golds.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} gold values",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Argument("no predictions to score".into()));
    }
    let (mut abs, mut sq, mut counted, mut dropped) = (0.0, 0.0, 0usize, 0usize);
    for (p, &g) in preds.iter().zip(golds) {
        let p = match (p, policy) {
            (Some(p), _) => *p as f64,
            (None, AbsentPolicy::Zero) => 0.0,
            (None, AbsentPolicy::Drop) => {
                dropped += 1;
                continue;
            }
        };
        let e = p - g as f64;
        abs += e.abs();
        sq += e * e;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::Argument("every prediction was dropped".into()));
    }
    let n = counted as f64;
    Ok(ErrorStats {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        counted,
        dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(overlap: usize, cand: usize, reference: usize) -> Prf {
        let precision = if cand == 0 { 0.0 } else { overlap as f64 / cand as f64 };
        let recall = if reference == 0 { 0.0 } else { overlap as f64 / reference as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf { precision, recall, f1 }
    }
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
    }
    out
}

fn clipped_overlap<S: AsRef<str>>(cand: &[S], reference: &[S], n: usize) -> (usize, usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let overlap = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    let total = |len: usize| len.saturating_sub(n - 1).min(len);
    (overlap, total(cand.len()), total(reference.len()))
}

/// ROUGE-N with clipped n-gram counts.
pub fn rouge_n<S: AsRef<str>>(cand: &[S], reference: &[S], n: usize) -> Prf {
    if reference.is_empty() {
        log::warn!("ROUGE-{n} against an empty reference is defined as zero");
        return Prf::default();
    }
    let (overlap, c, r) = clipped_overlap(cand, reference, n);
    Prf::from_counts(overlap, c, r)
}

pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L from the longest common subsequence.
pub fn rouge_l<S: AsRef<str>>(cand: &[S], reference: &[S]) -> Prf {
    if reference.is_empty() {
        log::warn!("ROUGE-L against an empty reference is defined as zero");
        return Prf::default();
    }
    Prf::from_counts(lcs_len(cand, reference), cand.len(), reference.len())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuScore {
    /// Modified precision per order, `precisions[k]` for order `k + 1`.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    /// `cumulative[k]` = BP · geometric mean of precisions 1..=k+1.
    pub cumulative: Vec<f64>,
}

impl BleuScore {
    /// Cumulative BLEU of order `n` (1-based).
    pub fn at(&self, n: usize) -> f64 {
        self.cumulative[n - 1]
    }
}

/// Sentence BLEU against one reference. With `smoothing`, orders ≥ 2 use
/// add-one counts.
pub fn bleu<S: AsRef<str>>(cand: &[S], reference: &[S], max_n: usize, smoothing: bool) -> BleuScore {
    let c = cand.len();
    let r = reference.len();
    let brevity_penalty = if c == 0 {
        0.0
    } else if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    let precisions: Vec<f64> = (1..=max_n)
        .map(|n| {
            let (m, total, _) = clipped_overlap(cand, reference, n);
            if smoothing && n >= 2 {
                (m + 1) as f64 / (total + 1) as f64
            } else if total == 0 {
                0.0
            } else {
                m as f64 / total as f64
            }
        })
        .collect();
    let mut cumulative = Vec::with_capacity(max_n);
    let mut log_sum = 0.0;
    let mut zero = false;
    for (k, &p) in precisions.iter().enumerate() {
        if p == 0.0 {
            zero = true;
        } else {
            log_sum += p.ln();
        }
        cumulative.push(if zero || brevity_penalty == 0.0 {
            0.0
        } else {
            brevity_penalty * (log_sum / (k + 1) as f64).exp()
        });
    }
    BleuScore {
        precisions,
        brevity_penalty,
        cumulative,
    }
}
