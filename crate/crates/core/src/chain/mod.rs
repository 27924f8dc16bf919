//! Legal chains: premise / situation / conclusion triplets decomposed from
//! statutory provisions, their file format, validation and extraction.

mod expr;
mod extract;
mod file;
mod library;
mod validate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use expr::{eval_condition, normalize_label, parse_condition, ConditionExpr, LogicOp};
pub use extract::{build_extraction_prompt, parse_extraction_response, Diagnostic, ExtractionOutcome};
pub use file::{parse_chain_file, serialize_chain_set};
pub use library::{builtin_chain_set, builtin_chain_sets, builtin_charges, ChainLibrary};
pub use validate::{
    validate_chain_set, validate_chain_set_with, CheckStatus, Constraint, ConstraintCheck, ValidationReport,
    DEFAULT_PRONOUNS,
};

/// One side of a chain: surface text used for embedding plus its logic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub text: String,
    pub expr: ConditionExpr,
}

/// Prescribed sentence in months.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencingRange {
    pub min_months: u32,
    pub max_months: u32,
    #[serde(default)]
    pub label: String,
    /// Surface text for embedding; rendered from the range when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl SentencingRange {
    pub fn new(min_months: u32, max_months: u32, label: impl Into<String>) -> Self {
        SentencingRange {
            min_months,
            max_months,
            label: label.into(),
            text: None,
        }
    }

    pub fn contains(&self, months: u32) -> bool {
        self.min_months <= months && months <= self.max_months
    }

    pub fn display_text(&self) -> String {
        if let Some(t) = &self.text {
            return t.clone();
        }
        let range = format!(
            "{} to {} months of fixed-term imprisonment",
            self.min_months, self.max_months
        );
        if self.label.trim().is_empty() {
            range
        } else {
            format!("{}: {range}", self.label.trim())
        }
    }
}

/// ⟨premise, situation, conclusion⟩ plus provenance and surface lexicon.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegalChain {
    pub premise: Component,
    pub situation: Component,
    pub conclusion: SentencingRange,
    pub source_provision: String,
    /// Surface phrases per predicate label. The first phrase is canonical;
    /// a label without an entry is realised by its own text.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub lexicon: BTreeMap<String, Vec<String>>,
}

impl LegalChain {
    /// Phrases that realise `label` in running text, canonical first.
    pub fn phrases(&self, label: &str) -> Vec<String> {
        let key = normalize_label(label);
        for (k, v) in &self.lexicon {
            if normalize_label(k) == key && !v.is_empty() {
                return v.clone();
            }
        }
        vec![label.trim().to_string()]
    }

    pub fn canonical_phrase(&self, label: &str) -> String {
        self.phrases(label).into_iter().next().unwrap_or_default()
    }

    /// The three display strings in premise, situation, conclusion order.
    pub fn display_texts(&self) -> [String; 3] {
        [
            self.premise.text.clone(),
            self.situation.text.clone(),
            self.conclusion.display_text(),
        ]
    }
}

/// Φ_C: the ordered chains of one charge. Order fixes the row order of the
/// encoded chain matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSet {
    pub charge: String,
    pub chains: Vec<LegalChain>,
}

impl ChainSet {
    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }

    /// Every display string across the set.
    pub fn texts(&self) -> Vec<String> {
        self.chains.iter().flat_map(|c| c.display_texts()).collect()
    }
}
