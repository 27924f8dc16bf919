//! Rule-based screening of an opinion along three dimensions: defendant,
//! situation and sentencing.

use std::collections::BTreeSet;

use serde::Serialize;

use super::sentence::extract_sentence_months;
use crate::chain::{ChainLibrary, ChainSet, LegalChain};
use crate::corpus::CaseRecord;
use crate::error::{Error, Result};
use crate::tokenizer::normalized_tokens;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CaseScreening {
    pub case_id: String,
    pub defendant_ok: bool,
    pub situation_ok: bool,
    pub sentencing_ok: bool,
    /// Index of the chain the opinion was matched against.
    pub matched_chain: usize,
    /// Labels of the matched chain realised in the opinion.
    pub realized: Vec<String>,
    pub extracted_months: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreeningReport {
    /// Percentages.
    pub defendant_acc: f64,
    pub situation_acc: f64,
    pub sentencing_acc: f64,
    pub combined: f64,
    pub cases: Vec<CaseScreening>,
}

fn contains_run(hay: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

/// Labels of `chain` for which some lexicon phrase occurs in `tokens`.
fn realized_labels(chain: &LegalChain, tokens: &[String]) -> BTreeSet<String> {
    let mut labels = chain.premise.expr.labels();
    labels.extend(chain.situation.expr.labels());
    labels
        .into_iter()
        .filter(|l| {
            chain
                .phrases(l)
                .iter()
                .any(|p| contains_run(tokens, &normalized_tokens(p)))
        })
        .collect()
}

pub fn screen_opinion(opinion: &str, case: &CaseRecord, chains: &ChainSet) -> Result<CaseScreening> {
    if chains.is_empty() {
        return Err(Error::Config(format!("no chains for charge `{}`", chains.charge)));
    }
    let tokens = normalized_tokens(opinion);
    let defendant_ok = contains_run(&tokens, &normalized_tokens(&case.defendant));

    let mut best = (0usize, BTreeSet::new());
    for (i, chain) in chains.chains.iter().enumerate() {
        let r = realized_labels(chain, &tokens);
        if i == 0 || r.len() > best.1.len() {
            best = (i, r);
        }
    }
    let (idx, realized) = best;
    let chain = &chains.chains[idx];
    let situation_ok = chain.premise.expr.eval(&realized) && chain.situation.expr.eval(&realized);

    let months = extract_sentence_months(opinion);
    let sentencing_ok = months.is_some_and(|m| chain.conclusion.contains(m));
    Ok(CaseScreening {
        case_id: case.case_id.clone(),
        defendant_ok,
        situation_ok,
        sentencing_ok,
        matched_chain: idx,
        realized: realized.into_iter().collect(),
        extracted_months: months,
    })
}

/// Product of three percentages taken as fractions, in percent.
pub fn combined_score(defendant_acc: f64, situation_acc: f64, sentencing_acc: f64) -> Result<f64> {
    for (name, v) in [
        ("defendant", defendant_acc),
        ("situation", situation_acc),
        ("sentencing", sentencing_acc),
    ] {
        if !(0.0..=100.0).contains(&v) {
            return Err(Error::Argument(format!("{name} accuracy {v} outside [0, 100]")));
        }
    }
    Ok(defendant_acc * situation_acc * sentencing_acc / 10_000.0)
}

/// Screens `(opinion, gold case)` pairs against the library.
pub fn screen_corpus(items: &[(String, CaseRecord)], library: &ChainLibrary) -> Result<ScreeningReport> {
    if items.is_empty() {
        return Err(Error::Argument("nothing to screen".into()));
    }
    let mut cases = Vec::with_capacity(items.len());
    for (opinion, case) in items {
        cases.push(screen_opinion(opinion, case, library.require(&case.charge)?)?);
    }
    let pct = |f: fn(&CaseScreening) -> bool| {
        100.0 * cases.iter().filter(|c| f(c)).count() as f64 / cases.len() as f64
    };
    let (d, s, t) = (pct(|c| c.defendant_ok), pct(|c| c.situation_ok), pct(|c| c.sentencing_ok));
    Ok(ScreeningReport {
        defendant_acc: d,
        situation_acc: s,
        sentencing_acc: t,
        combined: combined_score(d, s, t)?,
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::builtin_chain_set;

    fn robbery_case() -> CaseRecord {
        CaseRecord {
            case_id: "b1".into(),
            fact: "fact".into(),
            charge: "robbery".into(),
            opinion: String::new(),
            sentence_months: 42,
            sentencing_span: [0, 0],
            defendant: "Defendant A".into(),
        }
    }

    #[test]
    fn wrong_defendant() {
        let cs = builtin_chain_set("robbery").unwrap();
        let op = "This court holds that Li XX, with the purpose of illegal possession, used violence and threats \
to rob others' property. The judgment is as follows: 36 months of fixed-term imprisonment.";
        let r = screen_opinion(op, &robbery_case(), &cs).unwrap();
        assert!(!r.defendant_ok);
        assert!(r.situation_ok);
        assert!(r.sentencing_ok);
    }

    #[test]
    fn missing_clause_fails_sentencing() {
        let cs = builtin_chain_set("robbery").unwrap();
        let r = screen_opinion("Defendant A robbed.", &robbery_case(), &cs).unwrap();
        assert!(!r.sentencing_ok);
        assert!(!r.situation_ok);
        assert_eq!(r.extracted_months, None);
    }

    #[test]
    fn aggravated_chain_wins_on_overlap() {
        let cs = builtin_chain_set("robbery").unwrap();
        let op = "Defendant A, with the purpose of illegal possession, used violence to rob others' property \
while armed with a knife. The judgment is as follows: 130 months of fixed-term imprisonment.";
        let r = screen_opinion(op, &robbery_case(), &cs).unwrap();
        assert_eq!(r.matched_chain, 1);
        assert!(r.situation_ok && r.sentencing_ok);
    }

    #[test]
    fn combined_examples() {
        assert!((combined_score(100.0, 100.0, 100.0).unwrap() - 100.0).abs() < 1e-12);
        assert!((combined_score(8.45, 42.26, 76.15).unwrap() - 2.72).abs() <= 0.01);
        assert!(combined_score(101.0, 1.0, 1.0).is_err());
        assert!(combined_score(-0.1, 1.0, 1.0).is_err());
    }

    #[test]
    fn empty_chain_set_is_a_configuration_error() {
        let cs = ChainSet {
            charge: "robbery".into(),
            chains: vec![],
        };
        assert!(matches!(screen_opinion("x", &robbery_case(), &cs), Err(Error::Config(_))));
    }
}
