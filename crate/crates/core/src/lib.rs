//! Personalized medical-jargon extraction harness: corpus and annotation
//! handling, prompt construction, a cached completion gateway, term
//! alignment, and scoring with paired significance tests.

pub mod cohort;
pub mod corpus;
pub mod evalstat;
pub mod exec;
pub mod extraction;
pub mod llmgate;
pub mod pipeline;
pub mod promptkit;

pub use exec::ExecMode;
