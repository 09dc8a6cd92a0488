//! k-mer tokenization, curriculum span masking and a small trainable
//! masked-language-model encoder for DNA, with the diagnostics used to study
//! its pre-training dynamics.

pub mod analysis;
pub mod config;
pub mod corpus;
pub mod masking;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod tokenizer;
