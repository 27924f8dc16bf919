//! Sentencing and lexical metrics, rule-based screening and the pairwise
//! judge prompt.

mod judge;
mod metrics;
mod screening;
mod sentence;

use std::collections::HashMap;

use serde::Serialize;

pub use judge::{build_pairwise_prompt, judge_pair, parse_verdict, CompletionClient, Verdict};
pub use metrics::{bleu, lcs_len, mae_rmse, rouge_l, rouge_n, AbsentPolicy, BleuScore, ErrorStats, Prf};
pub use screening::{combined_score, screen_corpus, screen_opinion, CaseScreening, ScreeningReport};
pub use sentence::{extract_sentence_months, sentencing_char_span};

use crate::corpus::CaseRecord;
use crate::error::{Error, Result};
use crate::tokenizer::normalized_tokens;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseMetrics {
    pub case_id: String,
    pub predicted_months: Option<u32>,
    pub gold_months: u32,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu_n: f64,
}

/// Corpus-level scores. Text metrics are F1 (ROUGE) or cumulative BLEU,
/// macro-averaged over cases.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub mae: f64,
    pub rmse: f64,
    pub dropped: usize,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu_n: f64,
    pub bleu_order: usize,
    pub per_case: Vec<CaseMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricOptions {
    pub absent: AbsentPolicy,
    pub bleu_smoothing: bool,
    pub bleu_order: usize,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            absent: AbsentPolicy::Zero,
            bleu_smoothing: false,
            bleu_order: 4,
        }
    }
}

/// Scores `(case_id, generated opinion)` pairs against their gold cases.
pub fn evaluate_opinions(
    generated: &[(String, String)],
    gold: &[CaseRecord],
    opts: MetricOptions,
) -> Result<MetricReport> {
    if generated.is_empty() {
        return Err(Error::Argument("no opinions to evaluate".into()));
    }
    if opts.bleu_order < 2 {
        return Err(Error::Argument("BLEU order must be at least 2".into()));
    }
    let by_id: HashMap<&str, &CaseRecord> = gold.iter().map(|c| (c.case_id.as_str(), c)).collect();
    let mut per_case = Vec::with_capacity(generated.len());
    for (id, text) in generated {
        let case = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Evaluation(format!("no gold case `{id}`")))?;
        let cand = normalized_tokens(text);
        let reference = normalized_tokens(&case.opinion);
        let b = bleu(&cand, &reference, opts.bleu_order, opts.bleu_smoothing);
        per_case.push(CaseMetrics {
            case_id: id.clone(),
            predicted_months: extract_sentence_months(text),
            gold_months: case.sentence_months,
            rouge1: rouge_n(&cand, &reference, 1).f1,
            rouge2: rouge_n(&cand, &reference, 2).f1,
            rouge_l: rouge_l(&cand, &reference).f1,
            bleu1: b.at(1),
            bleu2: b.at(2),
            bleu_n: b.at(opts.bleu_order),
        });
    }
    let preds: Vec<Option<u32>> = per_case.iter().map(|c| c.predicted_months).collect();
    let golds: Vec<u32> = per_case.iter().map(|c| c.gold_months).collect();
    let err = mae_rmse(&preds, &golds, opts.absent)?;
    let mean = |f: fn(&CaseMetrics) -> f64| per_case.iter().map(f).sum::<f64>() / per_case.len() as f64;
    Ok(MetricReport {
        mae: err.mae,
        rmse: err.rmse,
        dropped: err.dropped,
        rouge1: mean(|c| c.rouge1),
        rouge2: mean(|c| c.rouge2),
        rouge_l: mean(|c| c.rouge_l),
        bleu1: mean(|c| c.bleu1),
        bleu2: mean(|c| c.bleu2),
        bleu_n: mean(|c| c.bleu_n),
        bleu_order: opts.bleu_order,
        per_case,
    })
}
