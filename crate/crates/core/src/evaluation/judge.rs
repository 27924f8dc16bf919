//! Pairwise LLM-as-judge prompt and verdict parsing. The model call goes
//! through a [`CompletionClient`] supplied by the caller.

use serde::Serialize;

use crate::error::{Error, Result};

/// Text-in / text-out completion service.
pub trait CompletionClient {
    fn complete(&self, prompt: &str) -> Result<String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    A,
    B,
    Tie,
}

pub fn build_pairwise_prompt(fact: &str, opinion_a: &str, opinion_b: &str) -> Result<String> {
    if fact.trim().is_empty() {
        return Err(Error::Argument("fact description is empty".into()));
    }
    if opinion_a.trim().is_empty() || opinion_b.trim().is_empty() {
        return Err(Error::Argument("candidate opinion is empty".into()));
    }
    Ok(format!(
        "You are reviewing two candidate judicial opinions written for the same criminal case.

Judge them on:
- whether the legal reasoning follows from the facts and the applicable provisions;
- whether the defendant and the offence are identified correctly;
- whether the sentence is consistent with the reasoning and the prescribed range.

Case facts:
<<<
{fact}
>>>

Opinion A:
<<<
{opinion_a}
>>>

Opinion B:
<<<
{opinion_b}
>>>

Reply with one line: `VERDICT: A`, `VERDICT: B` or `VERDICT: TIE`.
"
    ))
}

/// Reads the last `VERDICT:` line of a judge reply.
pub fn parse_verdict(reply: &str) -> Option<Verdict> {
    reply.lines().rev().find_map(|l| {
        let rest = l.trim().trim_matches('`').strip_prefix("VERDICT:")?;
        match rest.trim().trim_matches('`').to_ascii_uppercase().as_str() {
            "A" => Some(Verdict::A),
            "B" => Some(Verdict::B),
            "TIE" => Some(Verdict::Tie),
            _ => None,
        }
    })
}

/// Asks the judge once; an unparseable reply is an evaluation error.
pub fn judge_pair(client: &dyn CompletionClient, fact: &str, a: &str, b: &str) -> Result<Verdict> {
    let prompt = build_pairwise_prompt(fact, a, b)?;
    let reply = client.complete(&prompt)?;
    parse_verdict(&reply).ok_or_else(|| Error::Evaluation(format!("judge reply has no verdict: {reply:?}")))
}
