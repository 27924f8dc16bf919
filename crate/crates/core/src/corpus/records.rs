use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One criminal case: facts, charge and the gold opinion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseRecord {
    pub case_id: String,
    pub fact: String,
    pub charge: String,
    pub opinion: String,
    pub sentence_months: u32,
    /// Character interval `[start, end)` of the sentencing clause in `opinion`.
    pub sentencing_span: [usize; 2],
    pub defendant: String,
}

impl CaseRecord {
    /// The opinion text covered by `sentencing_span`.
    pub fn span_text(&self) -> Option<String> {
        let [s, e] = self.sentencing_span;
        if s > e || e > self.opinion.chars().count() {
            return None;
        }
        Some(self.opinion.chars().skip(s).take(e - s).collect())
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        if self.case_id.trim().is_empty() {
            return Err("empty case_id".into());
        }
        if self.fact.trim().is_empty() {
            return Err(format!("case `{}` has an empty fact", self.case_id));
        }
        let span = self
            .span_text()
            .ok_or_else(|| format!("case `{}`: sentencing_span {:?} is out of bounds", self.case_id, self.sentencing_span))?;
        if !span.contains(&self.sentence_months.to_string()) {
            return Err(format!(
                "case `{}`: sentencing span {span:?} does not contain {} months",
                self.case_id, self.sentence_months
            ));
        }
        Ok(())
    }
}

/// A generated opinion as written by `generate`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpinionRecord {
    pub case_id: String,
    pub opinion: String,
    #[serde(default)]
    pub extracted_months: Option<u32>,
    /// Token interval `[start, end)` of the sentencing clause.
    #[serde(default)]
    pub sentencing_span: Option<[usize; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    /// First bad line is an error.
    #[default]
    Strict,
    /// Bad lines are skipped and reported.
    Lenient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadOutcome<T> {
    pub records: Vec<T>,
    /// `(1-based line, message)` for every skipped line.
    pub skipped: Vec<(usize, String)>,
}

/// Parses JSON lines; blank lines are ignored. `check` validates each
/// decoded record.
pub fn parse_jsonl_with<T, F>(text: &str, mode: LoadMode, check: F) -> Result<LoadOutcome<T>>
where
    T: serde::de::DeserializeOwned,
    F: Fn(&T) -> std::result::Result<(), String>,
{
    let mut out = LoadOutcome {
        records: Vec::new(),
        skipped: Vec::new(),
    };
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 1;
        let res = serde_json::from_str::<T>(line)
            .map_err(|e| Error::parse(format!("line {n}"), e.to_string()))
            .and_then(|r| match check(&r) {
                Ok(()) => Ok(r),
                Err(m) => Err(Error::Validation(format!("line {n}: {m}"))),
            });
        match (res, mode) {
            (Ok(r), _) => out.records.push(r),
            (Err(e), LoadMode::Strict) => return Err(e),
            (Err(e), LoadMode::Lenient) => {
                log::warn!("skipping line {n}: {e}");
                out.skipped.push((n, e.to_string()));
            }
        }
    }
    Ok(out)
}

pub fn parse_cases(text: &str, mode: LoadMode) -> Result<LoadOutcome<CaseRecord>> {
    parse_jsonl_with(text, mode, CaseRecord::check)
}

pub fn load_jsonl(path: &Path, mode: LoadMode) -> Result<LoadOutcome<CaseRecord>> {
    parse_cases(&std::fs::read_to_string(path)?, mode)
}

/// One compact JSON object per line, LF-terminated.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("records serialise"));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str) -> CaseRecord {
        let opinion = "The judgment is as follows: 42 months of fixed-term imprisonment.".to_string();
        CaseRecord {
            case_id: id.into(),
            fact: "Defendant A robbed a shop.".into(),
            charge: "robbery".into(),
            sentence_months: 42,
            sentencing_span: [28, 64],
            opinion,
            defendant: "Defendant A".into(),
        }
    }

    #[test]
    fn three_lines_in_order() {
        let recs = vec![rec("a"), rec("b"), rec("c")];
        let out = parse_cases(&to_jsonl(&recs), LoadMode::Strict).unwrap();
        assert_eq!(out.records, recs);
    }

    #[test]
    fn missing_field_names_the_line() {
        let mut text = to_jsonl(&[rec("a")]);
        let bad = to_jsonl(&[rec("b")]).replace("\"sentence_months\":42,", "");
        text.push_str(&bad);
        match parse_cases(&text, LoadMode::Strict).unwrap_err() {
            Error::Parse { location, message } => {
                assert_eq!(location, "line 2");
                assert!(message.contains("sentence_months"));
            }
            other => panic!("{other}"),
        }
        let lenient = parse_cases(&text, LoadMode::Lenient).unwrap();
        assert_eq!(lenient.records.len(), 1);
        assert_eq!(lenient.skipped[0].0, 2);
    }

    #[test]
    fn span_without_months_is_a_validation_error() {
        let mut r = rec("a");
        r.sentencing_span = [0, 10];
        let err = parse_cases(&to_jsonl(&[r]), LoadMode::Strict).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn span_text_slices_characters() {
        assert_eq!(rec("a").span_text().unwrap(), "42 months of fixed-term imprisonment");
    }
}
