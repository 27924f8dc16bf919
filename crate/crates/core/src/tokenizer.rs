//! Word-level tokenizer with byte fallback.
//!
//! Text is split on whitespace; letter runs and ASCII digit runs form one
//! piece each, every CJK character and punctuation mark is its own piece. Pieces missing from
//! the vocabulary fall back to `<0xNN>` byte tokens when all of their bytes
//! are known, and to UNK otherwise.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;

pub const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// One piece of raw text with its character offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Piece {
    pub text: String,
    pub chars: Range<usize>,
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x20000..=0x2FA1F | 0x3000..=0x303F | 0xFF00..=0xFFEF)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Run {
    Letters,
    Digits,
}

fn run_kind(c: char) -> Option<Run> {
    if c.is_ascii_digit() {
        Some(Run::Digits)
    } else if c.is_alphabetic() && !is_cjk(c) {
        Some(Run::Letters)
    } else {
        None
    }
}

pub fn pretokenize(text: &str) -> Vec<Piece> {
    let mut out = Vec::new();
    let mut word = String::new();
    let mut word_start = 0;
    let mut kind = None;
    let flush = |word: &mut String, start: usize, end: usize, out: &mut Vec<Piece>| {
        if !word.is_empty() {
            out.push(Piece {
                text: std::mem::take(word),
                chars: start..end,
            });
        }
    };
    let mut n = 0;
    for (i, c) in text.chars().enumerate() {
        n = i + 1;
        let k = run_kind(c);
        if k.is_some() && k == kind {
            word.push(c);
            continue;
        }
        flush(&mut word, word_start, i, &mut out);
        kind = k;
        if k.is_some() {
            word_start = i;
            word.push(c);
        } else if !c.is_whitespace() {
            out.push(Piece {
                text: c.to_string(),
                chars: i..i + 1,
            });
        }
    }
    flush(&mut word, word_start, n, &mut out);
    out
}

/// Lower-cased piece texts, the form used for phrase matching.
pub fn normalized_tokens(text: &str) -> Vec<String> {
    pretokenize(text).into_iter().map(|p| p.text.to_lowercase()).collect()
}

fn byte_token(b: u8) -> String {
    format!("<0x{b:02X}>")
}

fn parse_byte_token(t: &str) -> Option<u8> {
    let hex = t.strip_prefix("<0x")?.strip_suffix('>')?;
    if hex.len() != 2 {
        return None;
    }
    u8::from_str_radix(hex, 16).ok()
}

/// Encoded token with the character span of the piece it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub id: u32,
    pub chars: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Specials, then every piece and every byte seen in `texts`, sorted.
    pub fn build<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut pieces = BTreeSet::new();
        let mut bytes = BTreeSet::new();
        for t in texts {
            for p in pretokenize(t.as_ref()) {
                bytes.extend(p.text.bytes());
                pieces.insert(p.text);
            }
        }
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(bytes.into_iter().map(byte_token));
        tokens.extend(pieces);
        Self::from_tokens(tokens).expect("built vocabularies are well-formed")
    }

    /// Rebuilds a vocabulary from its token list (e.g. from a checkpoint).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Contract("vocabulary must start with <pad> <unk> <bos> <eos>".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Contract(format!("duplicate vocabulary entry `{t}`")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map(String::as_str).unwrap_or(SPECIALS[UNK as usize])
    }

    pub fn encode(&self, text: &str) -> Vec<Token> {
        let mut out = Vec::new();
        for p in pretokenize(text) {
            if let Some(id) = self.id(&p.text) {
                out.push(Token { id, chars: p.chars });
                continue;
            }
            let ids: Option<Vec<u32>> = p.text.bytes().map(|b| self.id(&byte_token(b))).collect();
            match ids {
                Some(ids) => out.extend(ids.into_iter().map(|id| Token {
                    id,
                    chars: p.chars.clone(),
                })),
                None => out.push(Token { id: UNK, chars: p.chars }),
            }
        }
        out
    }

    pub fn encode_ids(&self, text: &str) -> Vec<u32> {
        self.encode(text).into_iter().map(|t| t.id).collect()
    }

    /// Piece strings for `ids`; specials are dropped and runs of byte
    /// tokens are reassembled.
    pub fn pieces(&self, ids: &[u32]) -> Vec<String> {
        let mut out = Vec::new();
        let mut pending: Vec<u8> = Vec::new();
        for &id in ids {
            if (id as usize) < SPECIALS.len() && id != UNK {
                continue;
            }
            let t = self.token(id);
            if let Some(b) = parse_byte_token(t) {
                pending.push(b);
                continue;
            }
            if !pending.is_empty() {
                out.push(String::from_utf8_lossy(&std::mem::take(&mut pending)).into_owned());
            }
            out.push(t.to_string());
        }
        if !pending.is_empty() {
            out.push(String::from_utf8_lossy(&pending).into_owned());
        }
        out
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        detokenize(&self.pieces(ids))
    }
}

fn no_space_before(p: &str) -> bool {
    matches!(p, "." | "," | ";" | ":" | "!" | "?" | ")" | "]" | "'" | "%" | "-" | "/")
}

fn no_space_after(p: &str) -> bool {
    matches!(p, "(" | "[" | "-" | "/")
}

fn is_cjk_piece(p: &str) -> bool {
    let mut it = p.chars();
    matches!((it.next(), it.next()), (Some(c), None) if is_cjk(c))
}

/// Joins pieces with single spaces except where punctuation or CJK text
/// attach directly.
pub fn detokenize<S: AsRef<str>>(pieces: &[S]) -> String {
    let mut out = String::new();
    let mut prev: Option<&str> = None;
    for p in pieces {
        let p = p.as_ref();
        if let Some(q) = prev {
            let attach = no_space_before(p)
                || no_space_after(q)
                || (is_cjk_piece(q) || is_cjk_piece(p));
            if !attach {
                out.push(' ');
            }
        }
        out.push_str(p);
        prev = Some(p);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_words_digits_punctuation_and_cjk() {
        let pieces: Vec<String> = pretokenize("Rob 42 months, 判处有期徒刑").into_iter().map(|p| p.text).collect();
        assert_eq!(
            pieces,
            ["Rob", "42", "months", ",", "判", "处", "有", "期", "徒", "刑"]
        );
    }

    #[test]
    fn char_offsets() {
        let p = pretokenize("ab  1é");
        assert_eq!(p[0].chars, 0..2);
        assert_eq!(p[1].chars, 4..5);
        assert_eq!(p[2].text, "é");
        assert_eq!(p[2].chars, 5..6);
        let q = pretokenize("a12b 3");
        assert_eq!(q.iter().map(|p| p.text.as_str()).collect::<Vec<_>>(), ["a", "12", "b", "3"]);
        assert_eq!(q[1].chars, 1..3);
    }

    #[test]
    fn specials_are_fixed() {
        let v = Vocab::build(["hello world"]);
        assert_eq!(v.id("<pad>"), Some(PAD));
        assert_eq!(v.id("<unk>"), Some(UNK));
        assert_eq!(v.id("<bos>"), Some(BOS));
        assert_eq!(v.id("<eos>"), Some(EOS));
    }

    #[test]
    fn byte_fallback_for_unseen_word() {
        let v = Vocab::build(["hello world"]);
        let ids = v.encode_ids("hold");
        assert_eq!(ids.len(), 4);
        assert_eq!(v.decode(&ids), "hold");
        assert_eq!(v.encode_ids("zebra"), vec![UNK]);
    }

    #[test]
    fn round_trip_of_opinion_text() {
        let text = "This court holds that Defendant Wang, with the purpose of illegal possession, used violence \
and threats to rob others' property. In accordance with Article 133-1 of the Criminal Law, the judgment is as \
follows: 42 months of fixed-term imprisonment.";
        let v = Vocab::build([text]);
        assert_eq!(v.decode(&v.encode_ids(text)), text);
        let cjk = "判处有期徒刑42个月。";
        let v = Vocab::build([cjk]);
        assert_eq!(v.decode(&v.encode_ids(cjk)), cjk);
    }

    #[test]
    fn from_tokens_rejects_bad_lists() {
        assert!(Vocab::from_tokens(vec!["a".into()]).is_err());
        let mut t: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        t.push("x".into());
        t.push("x".into());
        assert!(Vocab::from_tokens(t).is_err());
    }
}
