//! Duration-adaptive frame counts and uniform sampling timestamps.

use serde::{Deserialize, Serialize};

use crate::error::{QuotaError, Result};

const SECONDS_PER_HOUR: f64 = 3600.0;

/// Base frame count plus the cap on extra frames granted to long videos.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    t_base: usize,
    alpha: usize,
}

impl SamplingConfig {
    pub fn new(t_base: usize, alpha: usize) -> Result<Self> {
        if t_base == 0 {
            return Err(QuotaError::ZeroFrames);
        }
        Ok(Self { t_base, alpha })
    }

    pub fn t_base(&self) -> usize {
        self.t_base
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            t_base: 96,
            alpha: 64,
        }
    }
}

fn check_duration(duration_s: f64) -> Result<()> {
    if duration_s.is_nan() || duration_s <= 0.0 || duration_s.is_infinite() {
        return Err(QuotaError::NonPositiveDuration(duration_s));
    }
    Ok(())
}

/// Frames to sample from a video of `duration_s` seconds: one extra frame per
/// `1/alpha` hour, at most `alpha` extra.
pub fn compute_frame_count(duration_s: f64, cfg: SamplingConfig) -> Result<usize> {
    check_duration(duration_s)?;
    let extra = (duration_s / SECONDS_PER_HOUR * cfg.alpha as f64).floor();
    // The float comparison happens before the cast so very long durations saturate.
    let extra = if extra >= cfg.alpha as f64 {
        cfg.alpha
    } else {
        extra as usize
    };
    Ok(cfg.t_base + extra)
}

/// Centers of `frames` equal intervals covering `(0, duration_s)`.
pub fn sample_timestamps(duration_s: f64, frames: usize) -> Result<Vec<f64>> {
    check_duration(duration_s)?;
    if frames == 0 {
        return Err(QuotaError::ZeroFrames);
    }
    let step = duration_s / frames as f64;
    Ok((0..frames).map(|i| (i as f64 + 0.5) * step).collect())
}

/// Index of the source frame nearest each timestamp, when `available` frames
/// are spread uniformly (interval centers) over the same duration.
pub fn select_source_frames(
    timestamps: &[f64],
    duration_s: f64,
    available: usize,
) -> Result<Vec<usize>> {
    check_duration(duration_s)?;
    if timestamps.len() > available {
        return Err(QuotaError::TooFewFrames {
            requested: timestamps.len(),
            available,
        });
    }
    Ok(timestamps
        .iter()
        .map(|&t| ((t / duration_s * available as f64).floor() as usize).min(available - 1))
        .collect())
}
