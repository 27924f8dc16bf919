//! Case records, JSONL ingestion, the synthetic corpus and splits.

mod records;
mod split;
mod synth;

pub use records::{
    load_jsonl, parse_cases, parse_jsonl_with, to_jsonl, CaseRecord, LoadMode, LoadOutcome, OpinionRecord,
};
pub use split::{split, CorpusSplit};
pub use synth::{charge_name, synthesize_corpus, SynthConfig};
