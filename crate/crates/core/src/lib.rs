//! Core library for building and evaluating intangible-cultural-heritage language resources:
//! corpus statistics, inline entity markup, instruction datasets, review state, text-generation
//! metrics and benchmark reports.
//!
//! Everything here is pure and free of network or async code, so it also compiles to
//! `wasm32-unknown-unknown` for the browser demo.

pub mod annotation;
pub mod bench;
pub mod corpus;
mod error;
pub mod instruct;
pub mod jsonl;
pub mod metrics;
pub mod review;

pub use error::Error;
