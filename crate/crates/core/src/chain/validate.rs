use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use super::ChainSet;
use crate::tokenizer::normalized_tokens;

/// Pronouns and indirect references flagged by the referential check.
pub const DEFAULT_PRONOUNS: &[&str] = &[
    "he", "she", "it", "they", "him", "her", "them", "his", "hers", "its", "their", "theirs", "this", "that",
    "these", "those", "such", "said", "aforementioned", "former", "latter", "其", "该", "此", "他", "她", "它",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Exhaustiveness,
    SemanticSeparation,
    LogicalCoherence,
    ReferentialSpecificity,
    SentencingSpecificity,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Constraint::Exhaustiveness => "exhaustiveness",
            Constraint::SemanticSeparation => "semantic separation",
            Constraint::LogicalCoherence => "logical coherence",
            Constraint::ReferentialSpecificity => "referential specificity",
            Constraint::SentencingSpecificity => "sentencing specificity",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "findings", rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail(Vec<String>),
    NotCheckable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConstraintCheck {
    pub constraint: Constraint,
    /// Advisory checks are heuristics; their failures do not fail the set.
    pub advisory: bool,
    #[serde(flatten)]
    pub status: CheckStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub charge: String,
    pub checks: Vec<ConstraintCheck>,
}

impl ValidationReport {
    pub fn check(&self, c: Constraint) -> &ConstraintCheck {
        self.checks
            .iter()
            .find(|k| k.constraint == c)
            .expect("every constraint is reported")
    }

    /// True when no machine-checkable constraint failed (advisory included).
    pub fn all_checkable_pass(&self) -> bool {
        self.checks.iter().all(|k| !matches!(k.status, CheckStatus::Fail(_)))
    }

    /// True when no non-advisory constraint failed.
    pub fn passes(&self) -> bool {
        self.checks
            .iter()
            .all(|k| k.advisory || !matches!(k.status, CheckStatus::Fail(_)))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "chain set `{}`", self.charge)?;
        for k in &self.checks {
            let tag = if k.advisory { " (advisory)" } else { "" };
            match &k.status {
                CheckStatus::Pass => writeln!(f, "  PASS {}{tag}", k.constraint)?,
                CheckStatus::NotCheckable(why) => writeln!(f, "  N/A  {}{tag}: {why}", k.constraint)?,
                CheckStatus::Fail(findings) => {
                    writeln!(f, "  FAIL {}{tag}", k.constraint)?;
                    for x in findings {
                        writeln!(f, "       - {x}")?;
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn validate_chain_set(cs: &ChainSet) -> ValidationReport {
    validate_chain_set_with(cs, DEFAULT_PRONOUNS)
}

/// Checks the machine-checkable constraints; `pronouns` is the stoplist for
/// the referential heuristic.
pub fn validate_chain_set_with<S: AsRef<str>>(cs: &ChainSet, pronouns: &[S]) -> ValidationReport {
    let stop: BTreeSet<String> = pronouns.iter().map(|p| p.as_ref().to_lowercase()).collect();
    let mut separation = Vec::new();
    let mut coherence = Vec::new();
    let mut referential = Vec::new();
    let mut sentencing = Vec::new();

    if cs.chains.is_empty() {
        coherence.push("chain set has no chains".to_string());
    }
    for (i, c) in cs.chains.iter().enumerate() {
        let p = c.premise.expr.labels();
        let s = c.situation.expr.labels();
        for shared in p.intersection(&s) {
            separation.push(format!("chain {i}: `{shared}` is both a premise and a situation label"));
        }

        for (side, comp) in [("premise", &c.premise), ("situation", &c.situation)] {
            for issue in comp.expr.structural_issues() {
                coherence.push(format!("chain {i} {side}: {issue}"));
            }
            if comp.text.trim().is_empty() {
                coherence.push(format!("chain {i} {side}: empty display text"));
            }
            let mut texts = vec![comp.text.clone()];
            texts.extend(comp.expr.labels());
            for t in texts {
                for tok in normalized_tokens(&t) {
                    if stop.contains(&tok) {
                        referential.push(format!("chain {i} {side}: indirect reference `{tok}` in \"{t}\""));
                    }
                }
            }
        }

        let r = &c.conclusion;
        if r.min_months > r.max_months {
            sentencing.push(format!(
                "chain {i}: range {}-{} months is inverted",
                r.min_months, r.max_months
            ));
        } else if r.max_months == 0 {
            sentencing.push(format!(
                "chain {i}: conclusion \"{}\" prescribes no sentencing range",
                r.display_text()
            ));
        }
    }
    referential.dedup();

    let status = |v: Vec<String>| if v.is_empty() { CheckStatus::Pass } else { CheckStatus::Fail(v) };
    ValidationReport {
        charge: cs.charge.clone(),
        checks: vec![
            ConstraintCheck {
                constraint: Constraint::Exhaustiveness,
                advisory: false,
                status: CheckStatus::NotCheckable(
                    "coverage of the provision needs expert review".to_string(),
                ),
            },
            ConstraintCheck {
                constraint: Constraint::SemanticSeparation,
                advisory: false,
                status: status(separation),
            },
            ConstraintCheck {
                constraint: Constraint::LogicalCoherence,
                advisory: false,
                status: status(coherence),
            },
            ConstraintCheck {
                constraint: Constraint::ReferentialSpecificity,
                advisory: true,
                status: status(referential),
            },
            ConstraintCheck {
                constraint: Constraint::SentencingSpecificity,
                advisory: false,
                status: status(sentencing),
            },
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{builtin_chain_set, Component, ConditionExpr, LegalChain, SentencingRange};

    fn chain(premise: ConditionExpr, situation: ConditionExpr, range: SentencingRange) -> LegalChain {
        LegalChain {
            premise: Component {
                text: "premise text".into(),
                expr: premise,
            },
            situation: Component {
                text: "situation text".into(),
                expr: situation,
            },
            conclusion: range,
            source_provision: "Article 1".into(),
            lexicon: Default::default(),
        }
    }

    fn set(chains: Vec<LegalChain>) -> ChainSet {
        ChainSet {
            charge: "test".into(),
            chains,
        }
    }

    #[test]
    fn builtin_robbery_passes_every_checkable_constraint() {
        let report = validate_chain_set(&builtin_chain_set("robbery").unwrap());
        assert!(report.all_checkable_pass(), "{report}");
        assert!(matches!(
            report.check(Constraint::Exhaustiveness).status,
            CheckStatus::NotCheckable(_)
        ));
    }

    #[test]
    fn shared_label_fails_separation() {
        let c = chain(
            ConditionExpr::and(vec![ConditionExpr::pred("a"), ConditionExpr::pred("Serious Injury")]),
            ConditionExpr::pred("serious  injury"),
            SentencingRange::new(6, 36, "x"),
        );
        let report = validate_chain_set(&set(vec![c]));
        assert!(matches!(
            report.check(Constraint::SemanticSeparation).status,
            CheckStatus::Fail(_)
        ));
        assert!(!report.passes());
    }

    #[test]
    fn conclusion_without_range_fails_sentencing() {
        let c = chain(
            ConditionExpr::pred("a"),
            ConditionExpr::pred("b"),
            SentencingRange::new(0, 0, "punish severely"),
        );
        let report = validate_chain_set(&set(vec![c]));
        assert!(matches!(
            report.check(Constraint::SentencingSpecificity).status,
            CheckStatus::Fail(_)
        ));
    }

    #[test]
    fn pronoun_is_advisory() {
        let mut c = chain(
            ConditionExpr::pred("took it by force"),
            ConditionExpr::pred("b"),
            SentencingRange::new(6, 36, "x"),
        );
        c.premise.text = "took property".into();
        let report = validate_chain_set(&set(vec![c]));
        let k = report.check(Constraint::ReferentialSpecificity);
        assert!(k.advisory);
        assert!(matches!(k.status, CheckStatus::Fail(_)));
        assert!(!report.all_checkable_pass());
        assert!(report.passes());
    }

    #[test]
    fn unary_node_fails_coherence() {
        let c = chain(
            ConditionExpr::and(vec![ConditionExpr::pred("a")]),
            ConditionExpr::pred("b"),
            SentencingRange::new(6, 36, "x"),
        );
        let report = validate_chain_set(&set(vec![c]));
        assert!(matches!(
            report.check(Constraint::LogicalCoherence).status,
            CheckStatus::Fail(_)
        ));
    }

    #[test]
    fn validation_is_pure() {
        let cs = builtin_chain_set("theft").unwrap();
        assert_eq!(validate_chain_set(&cs), validate_chain_set(&cs));
    }
}
