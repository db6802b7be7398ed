//! Dense retrieval training by relevance distillation.
//!
//! A linear dual encoder is trained to imitate pointwise and pairwise teacher
//! rerankers. Each training iteration retrieves the top-k documents with the
//! current model, reranks them with the pointwise teacher, samples nearby
//! pairs from the reranked list for the pairwise teacher, and fine-tunes on a
//! weighted sum of contrastive, pointwise KL and pairwise KL losses.
//!
//! Module map:
//!
//! - [`corpus`]: documents, queries, judgments, TREC runs and synthetic data
//! - [`encoder`]: embedding-table dual encoder with dot, cosine and maxsim
//! - [`index`]: exact top-k retrieval with stale-index detection
//! - [`teacher`]: pointwise and pairwise teachers, prompts, LLM adapter
//! - [`distill`]: pair sampling and the loss functions with gradients
//! - [`trainer`]: configuration and the iterative training loop
//! - [`eval`]: ranking metrics and reranker disagreement

pub mod corpus;
pub mod distill;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod index;
pub mod seed;
pub mod teacher;
pub mod trainer;

pub use error::{Error, Result};
