//! End-to-end orchestration: sample, decouple, score, normalize, allocate,
//! assign, serialize.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::allocator::plan_allocation;
use crate::assigner::assign_all;
use crate::decouple::{
    build_decouple_prompt, build_frame_scoring_prompt, decouple_or_direct, Decoupling,
};
use crate::error::{QuotaError, Result};
use crate::io::{self, DecoupledInfo, Report, SamplingInfo};
use crate::model::{
    AssignerKind, DecoupledQuery, Grid, ReducedVideoEmbeddings, Strategy, VideoEmbeddings,
};
use crate::sampler::{
    compute_frame_count, sample_timestamps, select_source_frames, SamplingConfig,
};
use crate::scorer::{
    normalize_scores, score_frames, FrameRef, RemoteClient, ScorerBinding, SCORER_URL_ENV,
};

/// Everything a run needs. Mirrors the CLI flags; also loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub embeddings: PathBuf,
    pub query: String,
    /// Total token budget; defaults to every input token of the sampled frames.
    pub budget: Option<usize>,
    pub assigner: AssignerKind,
    /// `mock[:seed]`, `file:PATH` or `http:URL`.
    pub scorer: Option<String>,
    pub strategy: Strategy,
    pub out_embeddings: Option<PathBuf>,
    pub out_report: PathBuf,
    pub duration: Option<f64>,
    pub t_base: usize,
    pub alpha: usize,
    pub frames_are_presampled: bool,
    pub max_in_flight: usize,
    /// Canned decoupling response, used instead of calling `/generate`.
    pub decouple_response: Option<PathBuf>,
    /// Directory of encoded frame images, one per input frame in name order.
    pub frame_images: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sampling = SamplingConfig::default();
        Self {
            embeddings: PathBuf::new(),
            query: String::new(),
            budget: None,
            assigner: AssignerKind::Bilinear,
            scorer: None,
            strategy: Strategy::Direct,
            out_embeddings: None,
            out_report: PathBuf::new(),
            duration: None,
            t_base: sampling.t_base(),
            alpha: sampling.alpha(),
            frames_are_presampled: false,
            max_in_flight: 8,
            decouple_response: None,
            frame_images: None,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| QuotaError::Config(e.to_string()))
    }

    /// Scorer binding, falling back to the endpoint in `QUOTA_SCORER_URL`
    /// and then to the seed-0 mock.
    pub fn scorer_binding(&self) -> Result<ScorerBinding> {
        let spec = match &self.scorer {
            Some(s) => s.clone(),
            None => match std::env::var(SCORER_URL_ENV) {
                Ok(url) if !url.trim().is_empty() => format!("http:{url}"),
                _ => "mock:0".to_string(),
            },
        };
        ScorerBinding::parse(&spec, self.max_in_flight)
    }
}

/// Which stages to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Stop after writing the allocation report.
    Plan,
    /// Also reduce the embeddings and write them.
    Run,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub reduced: Option<ReducedVideoEmbeddings>,
}

fn sample(
    video: VideoEmbeddings,
    cfg: &RunConfig,
) -> Result<(VideoEmbeddings, Vec<usize>, Option<SamplingInfo>)> {
    if cfg.frames_are_presampled {
        let indices = (0..video.len()).collect();
        return Ok((video, indices, None));
    }
    let duration = cfg.duration.ok_or_else(|| {
        QuotaError::Config("--duration is required unless frames are presampled".into())
    })?;
    let sampling = SamplingConfig::new(cfg.t_base, cfg.alpha)?;
    let count = compute_frame_count(duration, sampling)?;
    let timestamps = sample_timestamps(duration, count)?;
    let indices = select_source_frames(&timestamps, duration, video.len())?;
    let frames = indices.iter().map(|&i| video.frames()[i].clone()).collect();
    let info = SamplingInfo {
        duration_s: duration,
        t_base: cfg.t_base,
        alpha: cfg.alpha,
        frame_count: count,
        timestamps,
        source_indices: indices.clone(),
    };
    Ok((VideoEmbeddings::new(frames)?, indices, Some(info)))
}

fn decouple(cfg: &RunConfig, client: Option<&RemoteClient>) -> Result<Decoupling> {
    if cfg.strategy == Strategy::Direct {
        return Ok(Decoupling {
            requested: Strategy::Direct,
            query: DecoupledQuery::direct(&cfg.query),
            fallback: None,
        });
    }
    let prompt = build_decouple_prompt(&cfg.query, cfg.strategy)?;
    let response = if let Some(path) = &cfg.decouple_response {
        std::fs::read_to_string(path)?
    } else if let Some(client) = client {
        match client.generate(&prompt) {
            Ok(text) => text,
            Err(e) => {
                return Ok(Decoupling {
                    requested: cfg.strategy,
                    query: DecoupledQuery::direct(&cfg.query),
                    fallback: Some(format!("decoupling request failed: {e}")),
                })
            }
        }
    } else {
        return Ok(Decoupling {
            requested: cfg.strategy,
            query: DecoupledQuery::direct(&cfg.query),
            fallback: Some("no decoupling model configured".into()),
        });
    };
    Ok(decouple_or_direct(&response, cfg.strategy, &cfg.query))
}

fn frame_refs(
    cfg: &RunConfig,
    source_indices: &[usize],
    available: usize,
) -> Result<Vec<FrameRef>> {
    let id = |i: usize| format!("frame-{i:05}");
    let Some(dir) = &cfg.frame_images else {
        return Ok(source_indices
            .iter()
            .map(|&i| FrameRef::new(id(i)))
            .collect());
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|entry| entry.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    if files.len() != available {
        return Err(QuotaError::Config(format!(
            "{} frame images for {available} frames in {}",
            files.len(),
            dir.display()
        )));
    }
    source_indices
        .iter()
        .map(|&i| Ok(FrameRef::with_image(id(i), std::fs::read(&files[i])?)))
        .collect()
}

fn decoupled_info(d: &Decoupling) -> DecoupledInfo {
    DecoupledInfo {
        requested: d.requested.as_str().to_string(),
        object_list: d.query.object_list().map(<[String]>::to_vec),
        event_question: d.query.event_question().map(str::to_string),
        fallback: d.fallback.clone(),
    }
}

/// Runs the pipeline and writes the report (and, in [`Mode::Run`], the
/// reduced embeddings).
pub fn execute(cfg: &RunConfig, mode: Mode) -> Result<Outcome> {
    if cfg.query.trim().is_empty() {
        return Err(QuotaError::EmptyQuery);
    }
    if cfg.out_report.as_os_str().is_empty() {
        return Err(QuotaError::Config(
            "an output report path is required".into(),
        ));
    }
    let out_embeddings =
        match mode {
            Mode::Run => Some(cfg.out_embeddings.as_ref().ok_or_else(|| {
                QuotaError::Config("an output embeddings path is required".into())
            })?),
            Mode::Plan => None,
        };
    let binding = cfg.scorer_binding()?;

    let input = io::read_embeddings(&cfg.embeddings)?;
    if !input.has_uniform_grid() {
        return Err(QuotaError::DimensionMismatch(
            "input frames must share one token grid".into(),
        ));
    }
    let available = input.len();
    let (video, source_indices, sampling) = sample(input, cfg)?;
    let (height, width) = video.grid();
    let budget = cfg.budget.unwrap_or(video.total_tokens());

    let generate_endpoint = binding.remote_endpoint().map(str::to_string).or_else(|| {
        std::env::var(SCORER_URL_ENV)
            .ok()
            .filter(|u| !u.trim().is_empty())
    });
    let client = generate_endpoint.as_deref().map(RemoteClient::new);
    let decoupling = decouple(cfg, client.as_ref())?;
    let prompt = build_frame_scoring_prompt(&decoupling.query);

    let refs = frame_refs(cfg, &source_indices, available)?;
    let scores = score_frames(&refs, &prompt, &binding)?;
    let normalized = normalize_scores(&scores);
    let (weights, plan) = plan_allocation(
        &normalized,
        budget,
        Grid::new(height, width),
        cfg.assigner.downsample_only(),
    )?;

    let reduced = match out_embeddings {
        Some(path) => {
            let reduced = assign_all(&video, &plan, cfg.assigner)?;
            io::write_frames(reduced.frames(), path)?;
            Some(reduced)
        }
        None => None,
    };

    let (frames, totals) = io::frame_rows(&scores, &weights, &plan)?;
    let report = Report {
        query: cfg.query.clone(),
        strategy: decoupling.query.strategy().as_str().to_string(),
        decoupled: decoupled_info(&decoupling),
        assigner: cfg.assigner.as_str().to_string(),
        sampling,
        frames,
        totals,
    };
    io::write_report(&report, &cfg.out_report)?;
    Ok(Outcome { report, reduced })
}
