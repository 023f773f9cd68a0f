//! Query-oriented visual token assignment for video embeddings.
//!
//! Frames are scored for relevance to a text query, the scores become
//! per-frame token quotas under a total budget, and each frame's token grid
//! is resized, pooled, or merged to its quota.

pub mod allocator;
pub mod assigner;
pub mod decouple;
pub mod error;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod sampler;
pub mod scorer;

pub use error::{QuotaError, Result};
pub use model::{
    validate, AllocationPlan, AssignerKind, Clue, DecoupledQuery, FrameEmbedding, Grid,
    NormalizedScores, ReducedVideoEmbeddings, ScoreVector, Strategy, VideoEmbeddings,
};
