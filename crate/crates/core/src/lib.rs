//! Training-free text-embedding steering sliders.
//!
//! The crate turns a named concept into a calibrated slider for a
//! text-conditioned generator:
//!
//! 1. [`dataset`] collects contrastive prompt pairs and builds a unit
//!    steering direction from pooled style-token embeddings.
//! 2. [`select`] decides which prompt tokens receive the steering.
//! 3. [`elastic`] searches the steering magnitudes that give evenly spaced,
//!    perceptually valid edits.
//! 4. [`metrics`] scores how continuously a slider behaves.
//!
//! Models stay behind the [`backend::Backend`] trait and the [`llm::LlmClient`]
//! trait; both have HTTP implementations and deterministic doubles.

pub mod backend;
pub mod http;
pub mod tensor;
pub mod text;
pub mod llm;
pub mod prompts;
pub mod dataset;
pub mod select;
pub mod elastic;
pub mod metrics;
pub mod profile;
