//! File formats.
//!
//! Embeddings (`QTEM`, little-endian):
//!
//! ```text
//! magic    b"QTEM"
//! version  u32 = 1
//! frames   u32
//! per frame:
//!   height u32, width u32, dim u32
//!   height * width * dim f32, row-major, channels fastest
//! ```
//!
//! Scores are a JSON array of numbers. The allocation report is a JSON object
//! described by [`Report`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{QuotaError, Result};
use crate::model::{
    AllocationPlan, FrameEmbedding, NormalizedScores, ScoreVector, VideoEmbeddings,
};

pub const MAGIC: [u8; 4] = *b"QTEM";
pub const VERSION: u32 = 1;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| {
                QuotaError::TruncatedFile(format!(
                    "{what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Decodes a `QTEM` byte buffer.
pub fn decode_embeddings(bytes: &[u8]) -> Result<VideoEmbeddings> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(QuotaError::BadMagic([
            magic[0], magic[1], magic[2], magic[3],
        ]));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(QuotaError::VersionUnsupported(version));
    }
    let count = cur.u32("frame count")? as usize;
    // Each frame needs at least its 12-byte header; reject absurd counts before allocating.
    if count.saturating_mul(12) > cur.remaining() {
        return Err(QuotaError::TruncatedFile(format!(
            "header promises {count} frames, only {} bytes follow",
            cur.remaining()
        )));
    }
    let mut frames = Vec::with_capacity(count);
    for i in 0..count {
        let what = format!("frame {i}");
        let h = cur.u32(&what)? as usize;
        let w = cur.u32(&what)? as usize;
        let c = cur.u32(&what)? as usize;
        let n = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(c))
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| QuotaError::TruncatedFile(format!("{what}: size overflows")))?;
        let raw = cur.take(n, &what)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        frames.push(FrameEmbedding::new(h, w, c, data).map_err(|e| e.at_frame(i))?);
    }
    if cur.remaining() > 0 {
        return Err(QuotaError::TrailingBytes(cur.remaining()));
    }
    VideoEmbeddings::new(frames)
}

/// Encodes frames as `QTEM`. Merge counters are not stored.
pub fn encode_embeddings<'a>(
    frames: impl IntoIterator<Item = &'a FrameEmbedding>,
) -> Result<Vec<u8>> {
    let frames: Vec<&FrameEmbedding> = frames.into_iter().collect();
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| QuotaError::InvalidValue(format!("{v} does not fit in u32")))
    };
    let payload: usize = frames.iter().map(|f| 12 + f.data().len() * 4).sum();
    let mut out = Vec::with_capacity(12 + payload);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(frames.len())?.to_le_bytes());
    for f in frames {
        for v in [f.height(), f.width(), f.dim()] {
            out.extend_from_slice(&to_u32(v)?.to_le_bytes());
        }
        for v in f.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<VideoEmbeddings> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_embeddings(&bytes)
}

pub fn write_embeddings(video: &VideoEmbeddings, path: impl AsRef<Path>) -> Result<()> {
    write_frames(video.frames(), path)
}

pub fn write_frames(frames: &[FrameEmbedding], path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_embeddings(frames)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Parses a JSON array of non-negative numbers.
pub fn parse_scores(text: &str) -> Result<ScoreVector> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| QuotaError::MalformedJson(e.to_string()))?;
    let items = value
        .as_array()
        .ok_or_else(|| QuotaError::MalformedJson("scores must be a JSON array".into()))?;
    let scores = items
        .iter()
        .enumerate()
        .map(|(index, v)| v.as_f64().ok_or(QuotaError::NonNumericScore { index }))
        .collect::<Result<Vec<_>>>()?;
    ScoreVector::new(scores)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreVector> {
    parse_scores(&std::fs::read_to_string(path)?)
}

/// How the query was decoupled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoupledInfo {
    pub requested: String,
    pub object_list: Option<Vec<String>>,
    pub event_question: Option<String>,
    /// Why the requested strategy fell back to direct scoring, if it did.
    pub fallback: Option<String>,
}

/// Frame sampling metadata, present when the sampler ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingInfo {
    pub duration_s: f64,
    pub t_base: usize,
    pub alpha: usize,
    pub frame_count: usize,
    pub timestamps: Vec<f64>,
    pub source_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub index: usize,
    pub score: f64,
    pub weight: f64,
    pub target: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub budget: usize,
    pub used: usize,
}

/// Allocation report written next to the reduced embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub query: String,
    pub strategy: String,
    pub decoupled: DecoupledInfo,
    pub assigner: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingInfo>,
    pub frames: Vec<FrameReport>,
    pub totals: Totals,
}

/// Per-frame rows and totals for a plan.
pub fn frame_rows(
    scores: &ScoreVector,
    weights: &NormalizedScores,
    plan: &AllocationPlan,
) -> Result<(Vec<FrameReport>, Totals)> {
    if scores.len() != plan.len() || weights.len() != plan.len() {
        return Err(QuotaError::DimensionMismatch(format!(
            "{} scores, {} weights, {} planned frames",
            scores.len(),
            weights.len(),
            plan.len()
        )));
    }
    let rows = (0..plan.len())
        .map(|i| FrameReport {
            index: i,
            score: scores.as_slice()[i],
            weight: weights.as_slice()[i],
            target: plan.targets()[i],
            grid_h: plan.grids()[i].height,
            grid_w: plan.grids()[i].width,
        })
        .collect();
    let totals = Totals {
        budget: plan.budget(),
        used: plan.used(),
    };
    Ok((rows, totals))
}

impl Report {
    /// Checks that totals agree with the per-frame grids.
    pub fn check(&self) -> Result<()> {
        let used: usize = self.frames.iter().map(|f| f.grid_h * f.grid_w).sum();
        if used != self.totals.used || used > self.totals.budget {
            return Err(QuotaError::InvalidValue(format!(
                "report uses {used} tokens, totals say {} of {}",
                self.totals.used, self.totals.budget
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| QuotaError::MalformedJson(e.to_string()))?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Report =
            serde_json::from_str(text).map_err(|e| QuotaError::MalformedJson(e.to_string()))?;
        report.check()?;
        Ok(report)
    }
}

pub fn write_report(report: &Report, path: impl AsRef<Path>) -> Result<()> {
    report.check()?;
    std::fs::write(path, report.to_json()?)?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Report> {
    Report::from_json(&std::fs::read_to_string(path)?)
}
