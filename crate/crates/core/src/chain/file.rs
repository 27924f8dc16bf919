use super::ChainSet;
use crate::error::{Error, Result};

/// Reads a JSON chain file.
///
/// Schema problems are parse errors carrying line and column; an empty
/// chain list, an inverted range or an empty display text are validation
/// errors naming the chain.
pub fn parse_chain_file(text: &str) -> Result<ChainSet> {
    let cs: ChainSet = serde_json::from_str(text)
        .map_err(|e| Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
    if cs.charge.trim().is_empty() {
        return Err(Error::Validation("chain set has an empty charge".into()));
    }
    if cs.chains.is_empty() {
        return Err(Error::Validation(format!("chain set `{}` has no chains", cs.charge)));
    }
    for (i, c) in cs.chains.iter().enumerate() {
        let r = &c.conclusion;
        if r.min_months > r.max_months {
            return Err(Error::Validation(format!(
                "chains[{i}].conclusion: min_months {} exceeds max_months {}",
                r.min_months, r.max_months
            )));
        }
        if c.premise.text.trim().is_empty() {
            return Err(Error::Validation(format!("chains[{i}].premise.text is empty")));
        }
        if c.situation.text.trim().is_empty() {
            return Err(Error::Validation(format!("chains[{i}].situation.text is empty")));
        }
        if r.display_text().trim().is_empty() {
            return Err(Error::Validation(format!("chains[{i}].conclusion.text is empty")));
        }
    }
    Ok(cs)
}

/// Pretty JSON with a trailing newline.
pub fn serialize_chain_set(cs: &ChainSet) -> String {
    let mut s = serde_json::to_string_pretty(cs).expect("chain sets always serialise");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROBBERY: &str = r#"{
      "charge": "robbery",
      "chains": [{
        "premise": {"text": "uses violence for illegal possession",
                    "expr": {"and": [{"pred": "purpose of illegal possession"}, {"pred": "used violence"}]}},
        "situation": {"text": "takes property of others",
                      "expr": {"pred": "rob others' property"}},
        "conclusion": {"min_months": 36, "max_months": 120, "label": "Article 263 base"},
        "source_provision": "Article 263"
      }]
    }"#;

    #[test]
    fn parses_robbery_range() {
        let cs = parse_chain_file(ROBBERY).unwrap();
        assert_eq!(cs.charge, "robbery");
        assert_eq!(cs.chains[0].conclusion.min_months, 36);
        assert_eq!(cs.chains[0].conclusion.max_months, 120);
    }

    #[test]
    fn round_trip() {
        let cs = parse_chain_file(ROBBERY).unwrap();
        let again = parse_chain_file(&serialize_chain_set(&cs)).unwrap();
        assert_eq!(cs, again);
    }

    #[test]
    fn empty_chain_list_is_a_validation_error() {
        let err = parse_chain_file(r#"{"charge": "robbery", "chains": []}"#).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn inverted_range_is_a_validation_error() {
        let text = ROBBERY.replace("\"min_months\": 36, \"max_months\": 120", "\"min_months\": 48, \"max_months\": 36");
        let err = parse_chain_file(&text).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("48")), "{err}");
    }

    #[test]
    fn schema_violation_names_line_and_field() {
        let text = ROBBERY.replace("\"max_months\": 120,", "");
        let err = parse_chain_file(&text).unwrap_err();
        match err {
            Error::Parse { location, message } => {
                assert!(location.starts_with("line "), "{location}");
                assert!(message.contains("max_months"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_expression_shape_is_rejected() {
        let text = ROBBERY.replace("{\"pred\": \"rob others' property\"}", "{\"not\": []}");
        assert!(matches!(parse_chain_file(&text), Err(Error::Parse { .. })));
    }
}
