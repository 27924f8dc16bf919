//! Legal-chain-aware judicial opinion generation at desk scale.
//!
//! Statutory provisions are decomposed into premise / situation / conclusion
//! chains ([`chain`]), encoded into one vector per chain ([`encoder`]),
//! prepended to the embedded case facts and decoded into an opinion by a
//! small causal transformer ([`model`]) trained on a reasoning plus
//! sentencing objective ([`training`]). [`evaluation`] holds the metric suite
//! and rule-based screening; [`corpus`] the case schema and the synthetic
//! corpus generator.

pub mod chain;
pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod model;
mod nn;
pub mod params;
pub mod tensor;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
pub use params::ParamStore;
pub use tensor::{Graph, Tensor, Var};
