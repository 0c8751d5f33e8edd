//! Social-bot detection from account timelines.
//!
//! The pipeline: ingest labeled JSONL corpora, encode each account's
//! chronological actions as a digital-DNA string, render the string as
//! a fixed-size 3-channel image, and classify accounts with unimodal
//! and multimodal fusion heads (concatenation, gated multimodal unit,
//! cross-modal attention) trained on a self-contained f64 autodiff
//! core. An unsupervised longest-common-substring curve detector
//! serves as the group-level baseline.

pub mod dna;
pub mod encoders;
pub mod eval;
pub mod imagify;
pub mod ingest;
pub mod lcs;
pub mod models;
pub mod synth;
pub mod tensor;
