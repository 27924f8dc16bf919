use chain_reasoner::chain::builtin_chain_set;
use chain_reasoner::corpus::CaseRecord;
use chain_reasoner::evaluation::{combined_score, screen_opinion};
use serde::Deserialize;

#[derive(Deserialize)]
struct Candidate {
    system: String,
    opinion: String,
    expected: [bool; 3],
}

#[derive(Deserialize)]
struct Fixture {
    case: CaseRecord,
    candidates: Vec<Candidate>,
}

#[test]
fn robbery_fixture_screens_as_expected() {
    let f: Fixture = serde_json::from_str(include_str!("fixtures/robbery_case.json")).unwrap();
    f.case.check().unwrap();
    let cs = builtin_chain_set("robbery").unwrap();
    let gold = screen_opinion(&f.case.opinion, &f.case, &cs).unwrap();
    assert!(gold.defendant_ok && gold.situation_ok && gold.sentencing_ok);
    for c in &f.candidates {
        let r = screen_opinion(&c.opinion, &f.case, &cs).unwrap();
        assert_eq!([r.defendant_ok, r.situation_ok, r.sentencing_ok], c.expected, "{}: {r:?}", c.system);
    }
}

#[test]
fn published_combined_scores() {
    let rows = [
        (8.45, 42.26, 76.15, 2.72, 0.01),
        (99.50, 65.27, 12.22, 7.93, 0.1),
        (99.08, 56.82, 71.30, 40.12, 0.1),
        (99.41, 63.18, 74.39, 46.66, 0.1),
        (99.41, 67.20, 78.49, 52.39, 0.1),
    ];
    for (d, s, t, want, tol) in rows {
        let got = combined_score(d, s, t).unwrap();
        assert!((got - want).abs() <= tol, "{d} {s} {t}: {got} vs {want}");
    }
}
