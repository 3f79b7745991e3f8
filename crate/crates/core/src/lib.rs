//! Toolchain for reasoning-data RTL code generation: corpus curation and
//! decontamination, chain-of-thought data synthesis, loss-masked SFT
//! packing, iterative test-time scaling, and pass@k evaluation.

pub mod bencheval;
pub mod corpus;
pub mod cotgen;
pub mod llmclient;
pub mod ngram;
pub mod rules;
pub mod sftpack;
pub mod ttscale;
pub mod util;
