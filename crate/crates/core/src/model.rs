//! Domain types shared across the pipeline.
//!
//! Every type validates its invariants on construction and is immutable
//! afterwards. Token order inside a frame is row-major with the width axis
//! fastest, and each token occupies `dim` consecutive `f32` values.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{QuotaError, Result};

/// Tolerance on the sum of normalized weights.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// One frame's token grid: `height x width` tokens of `dim` channels each.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEmbedding {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f32>,
    sizes: Option<Vec<u32>>,
}

impl FrameEmbedding {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        Self::with_sizes(height, width, dim, data, None)
    }

    /// Builds a frame that carries per-token merge counters.
    pub fn with_sizes(
        height: usize,
        width: usize,
        dim: usize,
        data: Vec<f32>,
        sizes: Option<Vec<u32>>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || dim == 0 {
            return Err(QuotaError::DimensionMismatch(format!(
                "frame dims must be positive, got {height}x{width}x{dim}"
            )));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(dim))
            .ok_or_else(|| QuotaError::DimensionMismatch("frame size overflows".into()))?;
        if data.len() != expected {
            return Err(QuotaError::DimensionMismatch(format!(
                "{height}x{width}x{dim} frame needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(QuotaError::NonFiniteValue { index });
        }
        if let Some(sizes) = &sizes {
            if sizes.len() != height * width {
                return Err(QuotaError::DimensionMismatch(format!(
                    "{} size counters for {} tokens",
                    sizes.len(),
                    height * width
                )));
            }
            if sizes.contains(&0) {
                return Err(QuotaError::InvalidValue("token size must be >= 1".into()));
            }
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
            sizes,
        })
    }

    /// A frame whose every channel of every token equals `value`.
    pub fn filled(height: usize, width: usize, dim: usize, value: f32) -> Result<Self> {
        Self::new(height, width, dim, vec![value; height * width * dim])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn token_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn sizes(&self) -> Option<&[u32]> {
        self.sizes.as_deref()
    }

    /// Merge counter for a token, 1 when no counters are tracked.
    pub fn size_of(&self, row: usize, col: usize) -> u32 {
        self.sizes.as_ref().map_or(1, |s| s[row * self.width + col])
    }

    pub fn token(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Same tokens without merge counters.
    pub fn without_sizes(&self) -> Self {
        Self {
            sizes: None,
            ..self.clone()
        }
    }

    fn check(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.dim == 0 {
            return Err(QuotaError::DimensionMismatch(
                "frame dims must be positive".into(),
            ));
        }
        if self.data.len() != self.height * self.width * self.dim {
            return Err(QuotaError::DimensionMismatch("data length".into()));
        }
        if let Some(index) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(QuotaError::NonFiniteValue { index });
        }
        if let Some(sizes) = &self.sizes {
            if sizes.len() != self.token_count() || sizes.contains(&0) {
                return Err(QuotaError::InvalidValue("size counters".into()));
            }
        }
        Ok(())
    }
}

/// Ordered frames sharing one channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoEmbeddings {
    frames: Vec<FrameEmbedding>,
}

impl VideoEmbeddings {
    pub fn new(frames: Vec<FrameEmbedding>) -> Result<Self> {
        let video = Self { frames };
        validate(&video)?;
        Ok(video)
    }

    pub fn frames(&self) -> &[FrameEmbedding] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<FrameEmbedding> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames[0].dim()
    }

    pub fn total_tokens(&self) -> usize {
        self.frames.iter().map(FrameEmbedding::token_count).sum()
    }

    /// `(height, width)` of the first frame. Input videos share one grid shape.
    pub fn grid(&self) -> (usize, usize) {
        (self.frames[0].height(), self.frames[0].width())
    }

    pub fn has_uniform_grid(&self) -> bool {
        let grid = self.grid();
        self.frames.iter().all(|f| (f.height(), f.width()) == grid)
    }
}

/// Checks every invariant of a video: non-empty, uniform channels, finite values.
pub fn validate(video: &VideoEmbeddings) -> Result<()> {
    let first = video.frames.first().ok_or(QuotaError::EmptyVideo)?;
    for (i, frame) in video.frames.iter().enumerate() {
        frame.check().map_err(|e| e.at_frame(i))?;
        if frame.dim() != first.dim() {
            return Err(QuotaError::DimensionMismatch(format!(
                "frame {i} has {} channels, frame 0 has {}",
                frame.dim(),
                first.dim()
            )));
        }
    }
    Ok(())
}

/// Raw per-frame relevance scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(QuotaError::ZeroFrames);
        }
        for (index, &value) in scores.iter().enumerate() {
            if !value.is_finite() {
                return Err(QuotaError::NonFiniteValue { index });
            }
            if value < 0.0 {
                return Err(QuotaError::NegativeScore { index, value });
            }
        }
        Ok(Self(scores))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-frame weights in `[0, 1]` summing to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizedScores(Vec<f64>);

impl NormalizedScores {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(QuotaError::ZeroFrames);
        }
        for (index, &w) in weights.iter().enumerate() {
            if !w.is_finite() {
                return Err(QuotaError::NonFiniteValue { index });
            }
            if !(0.0..=1.0).contains(&w) {
                return Err(QuotaError::InvalidValue(format!(
                    "weight {w} at frame {index} outside [0, 1]"
                )));
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(QuotaError::InvalidValue(format!("weights sum to {sum}")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(frames: usize) -> Result<Self> {
        if frames == 0 {
            return Err(QuotaError::ZeroFrames);
        }
        Self::new(vec![1.0 / frames as f64; frames])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// How the query is rewritten before frame scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Direct,
    EntityList,
    EventQuestion,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Direct => "direct",
            Strategy::EntityList => "entity-list",
            Strategy::EventQuestion => "event-question",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = QuotaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Strategy::Direct),
            "entity" | "entity-list" => Ok(Strategy::EntityList),
            "event" | "event-question" => Ok(Strategy::EventQuestion),
            other => Err(QuotaError::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

/// The clue a decoupled query carries into frame scoring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Clue {
    Direct,
    Entities(Vec<String>),
    Event(String),
}

/// Outcome of query decoupling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoupledQuery {
    source_query: String,
    clue: Clue,
}

impl DecoupledQuery {
    pub fn direct(source_query: impl Into<String>) -> Self {
        Self {
            source_query: source_query.into(),
            clue: Clue::Direct,
        }
    }

    pub fn entities(source_query: impl Into<String>, objects: Vec<String>) -> Result<Self> {
        if objects.is_empty() || objects.iter().any(|o| o.trim().is_empty()) {
            return Err(QuotaError::InvalidValue(
                "object list must be non-empty with non-empty items".into(),
            ));
        }
        Ok(Self {
            source_query: source_query.into(),
            clue: Clue::Entities(objects),
        })
    }

    pub fn event(source_query: impl Into<String>, question: impl Into<String>) -> Result<Self> {
        let question = question.into();
        if question.trim().is_empty() {
            return Err(QuotaError::InvalidValue("event question is empty".into()));
        }
        Ok(Self {
            source_query: source_query.into(),
            clue: Clue::Event(question),
        })
    }

    pub fn strategy(&self) -> Strategy {
        match self.clue {
            Clue::Direct => Strategy::Direct,
            Clue::Entities(_) => Strategy::EntityList,
            Clue::Event(_) => Strategy::EventQuestion,
        }
    }

    pub fn clue(&self) -> &Clue {
        &self.clue
    }

    pub fn source_query(&self) -> &str {
        &self.source_query
    }

    pub fn object_list(&self) -> Option<&[String]> {
        match &self.clue {
            Clue::Entities(objects) => Some(objects),
            _ => None,
        }
    }

    pub fn event_question(&self) -> Option<&str> {
        match &self.clue {
            Clue::Event(q) => Some(q),
            _ => None,
        }
    }
}

/// Token grid dimensions of one reduced frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub const fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub const fn tokens(self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

/// Per-frame token targets and solved grids under a total budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationPlan {
    budget: usize,
    targets: Vec<usize>,
    grids: Vec<Grid>,
}

impl AllocationPlan {
    pub fn new(budget: usize, targets: Vec<usize>, grids: Vec<Grid>) -> Result<Self> {
        if budget == 0 {
            return Err(QuotaError::InvalidValue("budget must be positive".into()));
        }
        if targets.is_empty() {
            return Err(QuotaError::ZeroFrames);
        }
        if targets.len() != grids.len() {
            return Err(QuotaError::DimensionMismatch(format!(
                "{} targets for {} grids",
                targets.len(),
                grids.len()
            )));
        }
        for (i, (grid, &target)) in grids.iter().zip(&targets).enumerate() {
            if grid.height == 0 || grid.width == 0 {
                return Err(QuotaError::InvalidValue(format!(
                    "frame {i} has an empty grid"
                )));
            }
            if grid.tokens() > target.max(1) {
                return Err(QuotaError::InvalidValue(format!(
                    "frame {i} grid {grid} exceeds target {target}"
                )));
            }
        }
        let used: usize = grids.iter().map(|g| g.tokens()).sum();
        if used > budget {
            return Err(QuotaError::InvalidValue(format!(
                "grids use {used} tokens, budget is {budget}"
            )));
        }
        Ok(Self {
            budget,
            targets,
            grids,
        })
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn grids(&self) -> &[Grid] {
        &self.grids
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn used(&self) -> usize {
        self.grids.iter().map(|g| g.tokens()).sum()
    }
}

/// The three token assigners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignerKind {
    Bilinear,
    Pool,
    Merge,
}

impl AssignerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AssignerKind::Bilinear => "bilinear",
            AssignerKind::Pool => "pool",
            AssignerKind::Merge => "merge",
        }
    }

    /// Pooling and merging can only shrink a grid, so their weights are
    /// capped at the source grid size before allocation.
    pub fn downsample_only(self) -> bool {
        !matches!(self, AssignerKind::Bilinear)
    }
}

impl fmt::Display for AssignerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AssignerKind {
    type Err = QuotaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(AssignerKind::Bilinear),
            "pool" => Ok(AssignerKind::Pool),
            "merge" => Ok(AssignerKind::Merge),
            other => Err(QuotaError::Config(format!("unknown assigner {other:?}"))),
        }
    }
}

/// Frames after token assignment, with per-frame grids.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedVideoEmbeddings {
    frames: Vec<FrameEmbedding>,
    assigner: AssignerKind,
}

impl ReducedVideoEmbeddings {
    pub(crate) fn new(frames: Vec<FrameEmbedding>, assigner: AssignerKind) -> Self {
        Self { frames, assigner }
    }

    pub fn frames(&self) -> &[FrameEmbedding] {
        &self.frames
    }

    pub fn assigner(&self) -> AssignerKind {
        self.assigner
    }

    pub fn total_tokens(&self) -> usize {
        self.frames.iter().map(FrameEmbedding::token_count).sum()
    }

    /// Drops merge counters and returns a plain video.
    pub fn into_video(self) -> VideoEmbeddings {
        let frames = self.frames.into_iter().map(|f| f.without_sizes()).collect();
        VideoEmbeddings { frames }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(dim: usize) -> FrameEmbedding {
        FrameEmbedding::new(2, 2, dim, (0..4 * dim).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn well_formed_video_validates() {
        let video = VideoEmbeddings::new(vec![frame(4), frame(4)]).unwrap();
        assert!(validate(&video).is_ok());
        assert!(validate(&video).is_ok());
    }

    #[test]
    fn mixed_channels_rejected() {
        let err = VideoEmbeddings::new(vec![frame(4), frame(8)]).unwrap_err();
        assert_eq!(err.kind(), "dimension-mismatch");
    }

    #[test]
    fn nan_rejected() {
        let mut data = vec![0.0f32; 16];
        data[5] = f32::NAN;
        let err = FrameEmbedding::new(2, 2, 4, data).unwrap_err();
        assert!(matches!(err, QuotaError::NonFiniteValue { index: 5 }));
    }

    #[test]
    fn empty_video_rejected() {
        assert_eq!(
            VideoEmbeddings::new(vec![]).unwrap_err().kind(),
            "empty-video"
        );
    }

    #[test]
    fn bad_lengths_and_sizes() {
        assert!(FrameEmbedding::new(2, 2, 4, vec![0.0; 15]).is_err());
        assert!(FrameEmbedding::new(0, 2, 4, vec![]).is_err());
        assert!(FrameEmbedding::with_sizes(1, 2, 1, vec![0.0; 2], Some(vec![1])).is_err());
        assert!(FrameEmbedding::with_sizes(1, 2, 1, vec![0.0; 2], Some(vec![1, 0])).is_err());
        let f = FrameEmbedding::with_sizes(1, 2, 1, vec![0.0; 2], Some(vec![1, 3])).unwrap();
        assert_eq!(f.size_of(0, 1), 3);
        assert_eq!(f.without_sizes().size_of(0, 1), 1);
    }

    #[test]
    fn scores_and_weights_validate() {
        assert!(ScoreVector::new(vec![0.5, 2.0]).is_ok());
        assert_eq!(
            ScoreVector::new(vec![0.5, -1.0]).unwrap_err().kind(),
            "negative-score"
        );
        assert!(NormalizedScores::new(vec![0.5, 0.5]).is_ok());
        assert!(NormalizedScores::new(vec![0.5, 0.6]).is_err());
        assert!(NormalizedScores::new(vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn decoupled_query_invariants() {
        assert!(DecoupledQuery::entities("q", vec![]).is_err());
        assert!(DecoupledQuery::event("q", "  ").is_err());
        let dq = DecoupledQuery::entities("q", vec!["cup".into()]).unwrap();
        assert_eq!(dq.strategy(), Strategy::EntityList);
        assert_eq!(dq.event_question(), None);
        assert_eq!(DecoupledQuery::direct("q").object_list(), None);
    }

    #[test]
    fn plan_invariants() {
        let ok = AllocationPlan::new(400, vec![196, 196], vec![Grid::new(14, 14); 2]).unwrap();
        assert_eq!(ok.used(), 392);
        assert!(AllocationPlan::new(300, vec![196, 196], vec![Grid::new(14, 14); 2]).is_err());
        assert!(AllocationPlan::new(400, vec![100, 196], vec![Grid::new(14, 14); 2]).is_err());
        assert!(AllocationPlan::new(400, vec![1], vec![Grid::new(0, 1)]).is_err());
    }
}
