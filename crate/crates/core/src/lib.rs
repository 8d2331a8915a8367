//! Retrieval-augmented, chunked mutation generation and the mutation
//! analysis that scores it: validity, kill matrices, effectiveness,
//! test prioritization and fault localization.

pub mod chunker;
pub mod corpus;
pub mod embedder;
pub mod execution;
pub mod llm;
pub mod mbfl;
pub mod metrics;
pub mod pipeline;
pub mod process;
pub mod promptgen;
pub mod sft;
pub mod tcp;
pub mod validity;
