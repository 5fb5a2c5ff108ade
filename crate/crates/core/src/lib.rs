//! Document-level translation refinement toolkit: corpus handling, prompt
//! construction, LLM and scorer clients, quality-aware dataset building,
//! evaluation metrics, reranking and error annotation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotate;
pub mod corpus;
pub mod llm_client;
pub mod metrics;
pub mod prompting;
pub mod quality;
pub mod rerank;
pub mod scorer;
pub mod translate;
