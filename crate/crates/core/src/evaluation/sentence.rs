//! The sentencing-clause grammar shared by span marking, corpus checks and
//! screening.

use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;

fn patterns() -> &'static [Regex; 2] {
    static RE: OnceLock<[Regex; 2]> = OnceLock::new();
    RE.get_or_init(|| {
        [
            Regex::new(r"(?i)(\d+)\s*months?\s+of\s+fixed-term\s+imprisonment").expect("valid regex"),
            Regex::new(r"判处有期徒刑\s*(\d+)\s*个月").expect("valid regex"),
        ]
    })
}

/// The last sentencing clause in `text`: its character span and months.
pub fn sentencing_char_span(text: &str) -> Option<(Range<usize>, u32)> {
    let mut best: Option<(Range<usize>, u32)> = None;
    for re in patterns() {
        for caps in re.captures_iter(text) {
            let m = caps.get(0).expect("whole match");
            let Ok(months) = caps[1].parse::<u32>() else {
                continue;
            };
            if best.as_ref().is_none_or(|(r, _)| m.start() > r.start) {
                best = Some((m.start()..m.end(), months));
            }
        }
    }
    best.map(|(bytes, months)| {
        let start = text[..bytes.start].chars().count();
        let len = text[bytes.clone()].chars().count();
        (start..start + len, months)
    })
}

/// Months in the last sentencing clause, if any.
pub fn extract_sentence_months(text: &str) -> Option<u32> {
    sentencing_char_span(text).map(|(_, m)| m)
}

#[cfg(test)]
mod tests {
    use super::*;

    const REFERENCE: &str = "This court holds that Defendant A, with the purpose of illegal possession, used violence \
and threats to rob others' property. His actions constitute the crime of robbery. In accordance with Articles \
263, 25(1), 52, and 53 of the Criminal Law of the People's Republic of China, the judgment is as follows: 42 \
months of fixed-term imprisonment.";

    #[test]
    fn reference_opinion_gives_42() {
        assert_eq!(extract_sentence_months(REFERENCE), Some(42));
    }

    #[test]
    fn chinese_clause() {
        assert_eq!(extract_sentence_months("判处有期徒刑42个月"), Some(42));
        let (span, _) = sentencing_char_span("本院认为，判处有期徒刑42个月。").unwrap();
        assert_eq!(span, 5..15);
    }

    #[test]
    fn no_clause() {
        assert_eq!(extract_sentence_months("The defendant is acquitted."), None);
    }

    #[test]
    fn last_occurrence_wins() {
        let t = "Earlier 12 months of fixed-term imprisonment was sought; now 30 months of fixed-term imprisonment.";
        assert_eq!(extract_sentence_months(t), Some(30));
        let (span, _) = sentencing_char_span(t).unwrap();
        let s: String = t.chars().skip(span.start).take(span.len()).collect();
        assert_eq!(s, "30 months of fixed-term imprisonment");
    }
}
