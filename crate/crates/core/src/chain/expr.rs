//! AND/OR condition trees over predicate labels.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LogicOp {
    And,
    Or,
}

/// A predicate leaf or an n-ary AND/OR node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "ExprRepr", try_from = "ExprRepr")]
pub enum ConditionExpr {
    Predicate(String),
    Node {
        op: LogicOp,
        children: Vec<ConditionExpr>,
    },
}

/// Canonical form used for every label comparison: trimmed, lower-cased,
/// internal whitespace collapsed to single spaces.
pub fn normalize_label(label: &str) -> String {
    label
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

impl ConditionExpr {
    pub fn pred(label: impl Into<String>) -> Self {
        ConditionExpr::Predicate(label.into())
    }

    pub fn and(children: Vec<ConditionExpr>) -> Self {
        ConditionExpr::Node {
            op: LogicOp::And,
            children,
        }
    }

    pub fn or(children: Vec<ConditionExpr>) -> Self {
        ConditionExpr::Node {
            op: LogicOp::Or,
            children,
        }
    }

    /// Normalised labels of every predicate in the tree.
    pub fn labels(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_labels(&mut out);
        out
    }

    fn collect_labels(&self, out: &mut BTreeSet<String>) {
        match self {
            ConditionExpr::Predicate(l) => {
                out.insert(normalize_label(l));
            }
            ConditionExpr::Node { children, .. } => {
                for c in children {
                    c.collect_labels(out);
                }
            }
        }
    }

    /// Number of AND/OR nodes.
    pub fn operator_count(&self) -> usize {
        match self {
            ConditionExpr::Predicate(_) => 0,
            ConditionExpr::Node { children, .. } => {
                1 + children.iter().map(ConditionExpr::operator_count).sum::<usize>()
            }
        }
    }

    /// Structural problems: nodes with fewer than two children, empty labels.
    pub fn structural_issues(&self) -> Vec<String> {
        let mut issues = Vec::new();
        self.collect_issues(&mut issues);
        issues
    }

    fn collect_issues(&self, issues: &mut Vec<String>) {
        match self {
            ConditionExpr::Predicate(l) => {
                if normalize_label(l).is_empty() {
                    issues.push("empty predicate label".into());
                }
            }
            ConditionExpr::Node { op, children } => {
                if children.len() < 2 {
                    issues.push(format!("{op} node with {} child(ren)", children.len()));
                }
                for c in children {
                    c.collect_issues(issues);
                }
            }
        }
    }

    /// Boolean value under `facts`, a set of labels that hold. Labels are
    /// compared after normalisation.
    pub fn eval(&self, facts: &BTreeSet<String>) -> bool {
        match self {
            ConditionExpr::Predicate(l) => facts.contains(&normalize_label(l)),
            ConditionExpr::Node {
                op: LogicOp::And,
                children,
            } => children.iter().all(|c| c.eval(facts)),
            ConditionExpr::Node {
                op: LogicOp::Or,
                children,
            } => children.iter().any(|c| c.eval(facts)),
        }
    }

    /// A minimal satisfying set of labels: every child of an AND, one
    /// randomly chosen child of an OR.
    pub fn sample_witness<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<String> {
        let mut out = Vec::new();
        self.witness_into(rng, &mut out);
        out
    }

    fn witness_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<String>) {
        match self {
            ConditionExpr::Predicate(l) => {
                let n = normalize_label(l);
                if !out.contains(&n) {
                    out.push(n);
                }
            }
            ConditionExpr::Node {
                op: LogicOp::And,
                children,
            } => {
                for c in children {
                    c.witness_into(rng, out);
                }
            }
            ConditionExpr::Node {
                op: LogicOp::Or,
                children,
            } => {
                if !children.is_empty() {
                    let pick = rng.gen_range(0..children.len());
                    children[pick].witness_into(rng, out);
                }
            }
        }
    }
}

/// [`ConditionExpr::eval`] over a slice of fact labels.
pub fn eval_condition<S: AsRef<str>>(expr: &ConditionExpr, facts: &[S]) -> bool {
    let facts: BTreeSet<String> = facts.iter().map(|f| normalize_label(f.as_ref())).collect();
    expr.eval(&facts)
}

impl fmt::Display for LogicOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogicOp::And => f.write_str("AND"),
            LogicOp::Or => f.write_str("OR"),
        }
    }
}

impl fmt::Display for ConditionExpr {
    /// Infix form accepted by [`parse_condition`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConditionExpr::Predicate(l) => f.write_str(l),
            ConditionExpr::Node { op, children } => {
                for (i, c) in children.iter().enumerate() {
                    if i > 0 {
                        write!(f, " {op} ")?;
                    }
                    match c {
                        ConditionExpr::Node { .. } => write!(f, "({c})")?,
                        ConditionExpr::Predicate(_) => write!(f, "{c}")?,
                    }
                }
                Ok(())
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ExprRepr {
    Pred(String),
    And(Vec<ExprRepr>),
    Or(Vec<ExprRepr>),
}

impl From<ConditionExpr> for ExprRepr {
    fn from(e: ConditionExpr) -> Self {
        match e {
            ConditionExpr::Predicate(l) => ExprRepr::Pred(l),
            ConditionExpr::Node { op, children } => {
                let kids = children.into_iter().map(ExprRepr::from).collect();
                match op {
                    LogicOp::And => ExprRepr::And(kids),
                    LogicOp::Or => ExprRepr::Or(kids),
                }
            }
        }
    }
}

impl TryFrom<ExprRepr> for ConditionExpr {
    type Error = String;

    fn try_from(r: ExprRepr) -> std::result::Result<Self, Self::Error> {
        Ok(match r {
            ExprRepr::Pred(l) => ConditionExpr::Predicate(l),
            ExprRepr::And(kids) => ConditionExpr::and(convert(kids)?),
            ExprRepr::Or(kids) => ConditionExpr::or(convert(kids)?),
        })
    }
}

fn convert(kids: Vec<ExprRepr>) -> std::result::Result<Vec<ConditionExpr>, String> {
    kids.into_iter().map(ConditionExpr::try_from).collect()
}

/// Parses infix conditions such as `a AND (b OR c)`.
///
/// Only upper-case `AND` / `OR` standing alone are operators, so labels may
/// contain lower-case "and"/"or". AND binds tighter than OR and chains of
/// the same operator flatten into one n-ary node.
pub fn parse_condition(text: &str) -> Result<ConditionExpr> {
    let tokens = lex(text);
    if tokens.is_empty() {
        return Err(Error::parse("condition", "empty condition"));
    }
    let mut p = Parser { tokens, pos: 0 };
    let expr = p.or_expr()?;
    if p.pos != p.tokens.len() {
        return Err(Error::parse(
            "condition",
            format!("unexpected `{}` in `{text}`", p.tokens[p.pos].as_str()),
        ));
    }
    Ok(expr)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Open,
    Close,
    And,
    Or,
    Word(String),
}

impl Tok {
    fn as_str(&self) -> &str {
        match self {
            Tok::Open => "(",
            Tok::Close => ")",
            Tok::And => "AND",
            Tok::Or => "OR",
            Tok::Word(w) => w,
        }
    }
}

fn lex(text: &str) -> Vec<Tok> {
    let spaced = text.replace('(', " ( ").replace(')', " ) ");
    spaced
        .split_whitespace()
        .map(|w| match w {
            "(" => Tok::Open,
            ")" => Tok::Close,
            "AND" => Tok::And,
            "OR" => Tok::Or,
            other => Tok::Word(other.to_string()),
        })
        .collect()
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn or_expr(&mut self) -> Result<ConditionExpr> {
        let mut kids = vec![self.and_expr()?];
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            kids.push(self.and_expr()?);
        }
        Ok(flatten(LogicOp::Or, kids))
    }

    fn and_expr(&mut self) -> Result<ConditionExpr> {
        let mut kids = vec![self.atom()?];
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            kids.push(self.atom()?);
        }
        Ok(flatten(LogicOp::And, kids))
    }

    fn atom(&mut self) -> Result<ConditionExpr> {
        match self.peek() {
            Some(Tok::Open) => {
                self.pos += 1;
                let e = self.or_expr()?;
                if self.peek() != Some(&Tok::Close) {
                    return Err(Error::parse("condition", "missing `)`"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(Tok::Word(_)) => {
                let mut words = Vec::new();
                while let Some(Tok::Word(w)) = self.peek() {
                    words.push(w.clone());
                    self.pos += 1;
                }
                Ok(ConditionExpr::Predicate(words.join(" ")))
            }
            Some(t) => Err(Error::parse("condition", format!("expected a label, found `{}`", t.as_str()))),
            None => Err(Error::parse("condition", "expression ends after an operator")),
        }
    }
}

fn flatten(op: LogicOp, kids: Vec<ConditionExpr>) -> ConditionExpr {
    if kids.len() == 1 {
        return kids.into_iter().next().expect("one child");
    }
    let mut flat = Vec::new();
    for k in kids {
        match k {
            ConditionExpr::Node { op: o, children } if o == op => flat.extend(children),
            other => flat.push(other),
        }
    }
    ConditionExpr::Node { op, children: flat }
}
