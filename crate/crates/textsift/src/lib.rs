//! Order-altering text perturbations and the metrics that quantify them.
//!
//! The crate perturbs text at word, subword, or character granularity with
//! three reordering functions (full shuffle, phrase shuffle, neighbor
//! flip), measures the structural damage (character-bigram F-score, index
//! displacement, broken-neighbor fraction, BPE compression rate,
//! normalized edit distance), sweeps perturbation grids over tabular
//! corpora, and correlates the resulting metrics against externally
//! supplied model scores.

pub mod analyze;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod perturb;
pub mod rng;
pub mod tokenize;

pub use error::{Error, Result};
