//! Extraction prompt construction and parsing of the delimited response.
//! No model is called here; see the CLI for the completion client.

use std::sync::OnceLock;

use regex::Regex;
use serde::Serialize;

use super::{parse_condition, ChainSet, Component, LegalChain, SentencingRange};
use crate::error::{Error, Result};

pub const CHAIN_DELIMITER: &str = "===CHAIN===";

/// Builds the chain-extraction instruction for one provision.
pub fn build_extraction_prompt(provision_text: &str, charge: &str) -> Result<String> {
    let provision = provision_text.trim();
    if provision.is_empty() {
        return Err(Error::Argument("provision text is empty".into()));
    }
    let charge = charge.trim();
    if charge.is_empty() {
        return Err(Error::Argument("charge is empty".into()));
    }
    Ok(format!(
        "You are assisting a criminal-law analyst. Decompose the statutory provision below into \
legal chains for the charge \"{charge}\".

A legal chain has three parts:
- PREMISE: the conduct that constitutes the offence.
- SITUATION: the circumstances or results that set the severity.
- CONCLUSION: the sentencing range the provision prescribes when the premise and the situation hold.

Follow these constraints:
1. Exhaustiveness: every behaviour and every circumstance named in the provision must appear in some chain.
2. Semantic separation: a premise lists conduct only; a situation lists states, results or circumstances only.
3. Logical coherence: combine conditions with explicit AND / OR and parentheses so the provision's structure is kept.
4. Referential specificity: replace each pronoun or indirect reference with the content it stands for.
5. Sentencing specificity: each conclusion gives the prescribed range itself, in months, without further decomposition.

Answer with one block per chain and nothing else:
{CHAIN_DELIMITER}
PREMISE: <condition> AND <condition>
SITUATION: <condition> OR (<condition> AND <condition>)
CONCLUSION: <description>; range: <min>-<max> months
SOURCE: <article>

Charge: {charge}
Provision:
\"\"\"
{provision}
\"\"\"
"
    ))
}

/// A triplet that could not be turned into a chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    /// Zero-based position of the block in the response.
    pub block: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExtractionOutcome {
    pub chains: ChainSet,
    pub diagnostics: Vec<Diagnostic>,
}

fn range_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)range:\s*(\d+)\s*-\s*(\d+)\s*months?").expect("valid regex"))
}

/// Turns a delimited response into chains, in response order. Text before
/// the first delimiter is ignored; every malformed block yields a
/// diagnostic.
pub fn parse_extraction_response(text: &str, charge: &str) -> Result<ExtractionOutcome> {
    let mut blocks: Vec<Vec<&str>> = Vec::new();
    for line in text.lines() {
        if line.trim() == CHAIN_DELIMITER {
            blocks.push(Vec::new());
        } else if let Some(b) = blocks.last_mut() {
            b.push(line);
        }
    }

    let mut chains = Vec::new();
    let mut diagnostics = Vec::new();
    for (i, lines) in blocks.iter().enumerate() {
        match parse_block(lines) {
            Ok(c) => chains.push(c),
            Err(message) => diagnostics.push(Diagnostic { block: i, message }),
        }
    }
    if chains.is_empty() {
        let detail = if blocks.is_empty() {
            format!("no `{CHAIN_DELIMITER}` blocks in response")
        } else {
            diagnostics
                .iter()
                .map(|d| format!("block {}: {}", d.block, d.message))
                .collect::<Vec<_>>()
                .join("; ")
        };
        return Err(Error::Extraction(format!("no well-formed chain ({detail})")));
    }
    Ok(ExtractionOutcome {
        chains: ChainSet {
            charge: charge.trim().to_string(),
            chains,
        },
        diagnostics,
    })
}

fn header<'a>(lines: &[&'a str], name: &str) -> Option<&'a str> {
    lines.iter().find_map(|l| {
        let t = l.trim();
        let (head, rest) = t.split_once(':')?;
        head.trim().eq_ignore_ascii_case(name).then(|| rest.trim())
    })
}

fn parse_block(lines: &[&str]) -> std::result::Result<LegalChain, String> {
    let premise = header(lines, "PREMISE").ok_or("missing PREMISE")?;
    let situation = header(lines, "SITUATION").ok_or("missing SITUATION")?;
    let conclusion = header(lines, "CONCLUSION").ok_or("missing CONCLUSION")?;
    let source = header(lines, "SOURCE").unwrap_or("").to_string();

    let p = parse_condition(premise).map_err(|e| format!("PREMISE: {e}"))?;
    let s = parse_condition(situation).map_err(|e| format!("SITUATION: {e}"))?;
    let caps = range_re()
        .captures(conclusion)
        .ok_or_else(|| format!("CONCLUSION has no `range: <min>-<max> months`: \"{conclusion}\""))?;
    let num = |k: usize| caps[k].parse::<u32>().map_err(|e| format!("CONCLUSION: {e}"));
    let (lo, hi) = (num(1)?, num(2)?);
    if lo > hi {
        return Err(format!("CONCLUSION range {lo}-{hi} is inverted"));
    }
    let whole = caps.get(0).expect("match");
    let label = format!("{}{}", &conclusion[..whole.start()], &conclusion[whole.end()..]);
    let label = label.trim_matches(|c: char| c.is_whitespace() || ";,.".contains(c)).to_string();

    Ok(LegalChain {
        premise: Component {
            text: premise.to_string(),
            expr: p,
        },
        situation: Component {
            text: situation.to_string(),
            expr: s,
        },
        conclusion: SentencingRange::new(lo, hi, label),
        source_provision: source,
        lexicon: Default::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::ConditionExpr;

    const ARTICLE_263: &str = "Whoever robs public or private property by violence, coercion or other methods \
shall be sentenced to fixed-term imprisonment of not less than three years and not more than ten years.";

    #[test]
    fn prompt_names_all_constraints_and_is_stable() {
        let a = build_extraction_prompt(ARTICLE_263, "robbery").unwrap();
        for name in [
            "Exhaustiveness",
            "Semantic separation",
            "Logical coherence",
            "Referential specificity",
            "Sentencing specificity",
        ] {
            assert!(a.contains(name), "missing {name}");
        }
        assert!(a.contains(ARTICLE_263));
        assert!(a.contains("\"robbery\""));
        assert_eq!(a, build_extraction_prompt(ARTICLE_263, "robbery").unwrap());
    }

    #[test]
    fn empty_provision_is_an_argument_error() {
        assert!(matches!(build_extraction_prompt("", "robbery"), Err(Error::Argument(_))));
        assert!(matches!(build_extraction_prompt("  \n", "robbery"), Err(Error::Argument(_))));
    }

    const TWO: &str = "Here are the chains.
===CHAIN===
PREMISE: purpose of illegal possession AND (used violence OR used coercion)
SITUATION: rob others' property
CONCLUSION: base sentence; range: 36-120 months
SOURCE: Article 263
===CHAIN===
PREMISE: purpose of illegal possession AND used violence
SITUATION: broke into a residence OR robbed a financial institution
CONCLUSION: aggravated; range: 120-180 months
SOURCE: Article 263
";

    #[test]
    fn two_triplets_in_order() {
        let out = parse_extraction_response(TWO, "robbery").unwrap();
        assert!(out.diagnostics.is_empty());
        let cs = out.chains;
        assert_eq!(cs.len(), 2);
        assert_eq!(cs.chains[0].conclusion, SentencingRange::new(36, 120, "base sentence"));
        assert_eq!(cs.chains[1].conclusion.min_months, 120);
        assert_eq!(cs.chains[0].source_provision, "Article 263");
        assert_eq!(
            cs.chains[0].situation.expr,
            ConditionExpr::pred("rob others' property")
        );
    }

    #[test]
    fn malformed_triplet_becomes_a_diagnostic() {
        let text = format!(
            "{TWO}===CHAIN===\nPREMISE: a AND b\nSITUATION: c\nCONCLUSION: punish severely\n"
        );
        let out = parse_extraction_response(&text, "robbery").unwrap();
        assert_eq!(out.chains.len(), 2);
        assert_eq!(out.diagnostics.len(), 1);
        assert_eq!(out.diagnostics[0].block, 2);
    }

    #[test]
    fn empty_response_is_an_extraction_error() {
        assert!(matches!(parse_extraction_response("", "robbery"), Err(Error::Extraction(_))));
        let bad = "===CHAIN===\nPREMISE: a AND\nSITUATION: b\nCONCLUSION: range: 1-2 months\n";
        assert!(matches!(parse_extraction_response(bad, "robbery"), Err(Error::Extraction(_))));
    }

    #[test]
    fn inverted_range_is_reported() {
        let text = format!("{TWO}===CHAIN===\nPREMISE: a\nSITUATION: b\nCONCLUSION: range: 48-36 months\n");
        let out = parse_extraction_response(&text, "robbery").unwrap();
        assert!(out.diagnostics[0].message.contains("inverted"));
    }
}
