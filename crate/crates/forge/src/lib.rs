//! Runtime half of the toolkit: the chat-completion client, QA synthesis, the benchmark
//! runner and the review HTTP service. Pure data handling lives in `forge-core`.

pub mod bench;
pub mod client;
pub mod server;
pub mod synth;

pub use forge_core as core;
