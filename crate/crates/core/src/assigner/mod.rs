//! Token assigners mapping each frame's grid to its planned grid.

mod bilinear;
mod merge;
mod pool;

use rayon::prelude::*;

pub use bilinear::resize_bilinear;
pub use merge::{cosine_similarity, merge_tokens};
pub use pool::pool_adaptive;

use crate::error::{QuotaError, Result};
use crate::model::{
    AllocationPlan, AssignerKind, FrameEmbedding, Grid, ReducedVideoEmbeddings, VideoEmbeddings,
};

pub fn assign_frame(
    frame: &FrameEmbedding,
    grid: Grid,
    kind: AssignerKind,
) -> Result<FrameEmbedding> {
    match kind {
        AssignerKind::Bilinear => resize_bilinear(frame, grid),
        AssignerKind::Pool => pool_adaptive(frame, grid),
        AssignerKind::Merge => merge_tokens(frame, grid),
    }
}

/// Applies `kind` to every frame in parallel. Output frame `i` has grid
/// `plan.grids()[i]`; errors carry the failing frame's index.
pub fn assign_all(
    video: &VideoEmbeddings,
    plan: &AllocationPlan,
    kind: AssignerKind,
) -> Result<ReducedVideoEmbeddings> {
    if plan.len() != video.len() {
        return Err(QuotaError::DimensionMismatch(format!(
            "plan covers {} frames, video has {}",
            plan.len(),
            video.len()
        )));
    }
    let frames = video
        .frames()
        .par_iter()
        .zip(plan.grids().par_iter())
        .enumerate()
        .map(|(i, (frame, &grid))| assign_frame(frame, grid, kind).map_err(|e| e.at_frame(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ReducedVideoEmbeddings::new(frames, kind))
}
