//! Frame relevance scoring and score normalization.
//!
//! A score is the scoring model's probability of answering "A" (yes) to the
//! binary-choice frame prompt. Scores come from one of three backends: a
//! seeded deterministic mock, a JSON file, or a remote HTTP service.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{QuotaError, Result};
use crate::io;
use crate::model::{NormalizedScores, ScoreVector};

/// Environment variable consulted when no scorer endpoint is configured.
pub const SCORER_URL_ENV: &str = "QUOTA_SCORER_URL";

/// A frame handed to the scorer: a stable id plus optional encoded image bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameRef {
    pub id: String,
    pub image: Option<Vec<u8>>,
}

impl FrameRef {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            image: None,
        }
    }

    pub fn with_image(id: impl Into<String>, image: Vec<u8>) -> Self {
        Self {
            id: id.into(),
            image: Some(image),
        }
    }

    /// Ids `frame-00000`, `frame-00001`, ... for `count` frames.
    pub fn sequence(count: usize) -> Vec<Self> {
        (0..count)
            .map(|i| Self::new(format!("frame-{i:05}")))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScorerBackend {
    Mock { seed: u64 },
    File { path: PathBuf },
    Remote { endpoint: String },
}

/// Which scorer to use and how many requests may be in flight at once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScorerBinding {
    backend: ScorerBackend,
    max_in_flight: usize,
}

impl ScorerBinding {
    pub fn new(backend: ScorerBackend, max_in_flight: usize) -> Result<Self> {
        if max_in_flight == 0 {
            return Err(QuotaError::Config(
                "max_in_flight must be at least 1".into(),
            ));
        }
        match &backend {
            ScorerBackend::File { path } if path.as_os_str().is_empty() => {
                return Err(QuotaError::Config("file scorer needs a path".into()))
            }
            ScorerBackend::Remote { endpoint } if endpoint.trim().is_empty() => {
                return Err(QuotaError::Config("remote scorer needs an endpoint".into()))
            }
            _ => {}
        }
        Ok(Self {
            backend,
            max_in_flight,
        })
    }

    pub fn mock(seed: u64) -> Self {
        Self {
            backend: ScorerBackend::Mock { seed },
            max_in_flight: 1,
        }
    }

    /// Parses `mock[:seed]`, `file:PATH` or `http:URL`. A bare `http` (or
    /// `http:` with nothing after it) reads the endpoint from
    /// [`SCORER_URL_ENV`].
    pub fn parse(spec: &str, max_in_flight: usize) -> Result<Self> {
        let (kind, rest) = match spec.split_once(':') {
            Some((k, r)) => (k, Some(r)),
            None => (spec, None),
        };
        let backend = match kind {
            "mock" => {
                let seed = match rest {
                    None | Some("") => 0,
                    Some(s) => s
                        .parse()
                        .map_err(|_| QuotaError::Config(format!("bad mock seed {s:?}")))?,
                };
                ScorerBackend::Mock { seed }
            }
            "file" => ScorerBackend::File {
                path: PathBuf::from(rest.unwrap_or_default()),
            },
            "http" | "https" => {
                let endpoint = match rest {
                    None | Some("") => std::env::var(SCORER_URL_ENV).map_err(|_| {
                        QuotaError::Config(format!(
                            "no scorer URL given and {SCORER_URL_ENV} unset"
                        ))
                    })?,
                    // `http://host` was given whole rather than as `http:URL`.
                    Some(r) if r.starts_with("//") => spec.to_string(),
                    Some(r) => r.to_string(),
                };
                ScorerBackend::Remote { endpoint }
            }
            other => return Err(QuotaError::Config(format!("unknown scorer kind {other:?}"))),
        };
        Self::new(backend, max_in_flight)
    }

    pub fn backend(&self) -> &ScorerBackend {
        &self.backend
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    pub fn remote_endpoint(&self) -> Option<&str> {
        match &self.backend {
            ScorerBackend::Remote { endpoint } => Some(endpoint),
            _ => None,
        }
    }
}

/// Deterministic pseudo-score in `[0, 1)` for a frame position and prompt.
pub fn mock_score(seed: u64, frame_index: usize, prompt: &str) -> f64 {
    // FNV-1a over the prompt, then splitmix64 finalization.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in prompt.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ seed.rotate_left(17) ^ (frame_index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    prompt: &'a str,
    frame_id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_b64: Option<String>,
}

#[derive(Deserialize)]
struct ScoreResponse {
    p_a: f64,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

/// Blocking client for the `/score` and `/generate` endpoints.
#[derive(Debug, Clone)]
pub struct RemoteClient {
    agent: ureq::Agent,
    endpoint: String,
    retries: usize,
    backoff: Duration,
}

impl RemoteClient {
    pub fn new(endpoint: &str) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            endpoint: endpoint.trim_end_matches('/').to_string(),
            retries: 3,
            backoff: Duration::from_millis(200),
        }
    }

    /// Retries after the first failed attempt, and the first backoff delay
    /// (doubled after every retry).
    pub fn with_retry(mut self, retries: usize, backoff: Duration) -> Self {
        self.retries = retries;
        self.backoff = backoff;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn post<Req: Serialize, Resp: serde::de::DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp> {
        let url = format!("{}{path}", self.endpoint);
        let mut delay = self.backoff;
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                thread::sleep(delay);
                delay *= 2;
            }
            match self.agent.post(&url).send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if status >= 500 {
                        last = format!("{url} returned {status}");
                        continue;
                    }
                    if status != 200 {
                        let text = resp.body_mut().read_to_string().unwrap_or_default();
                        return Err(QuotaError::ScorerProtocol(format!(
                            "{url} returned {status}: {text}"
                        )));
                    }
                    return resp.body_mut().read_json::<Resp>().map_err(|e| {
                        QuotaError::ScorerProtocol(format!("bad response from {url}: {e}"))
                    });
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(QuotaError::ScorerUnreachable {
            attempts: self.retries + 1,
            message: last,
        })
    }

    /// Probability that the scoring model answers "A" for this frame.
    pub fn score(&self, prompt: &str, frame: &FrameRef) -> Result<f64> {
        let request = ScoreRequest {
            prompt,
            frame_id: &frame.id,
            image_b64: frame
                .image
                .as_ref()
                .map(|bytes| base64::engine::general_purpose::STANDARD.encode(bytes)),
        };
        let resp: ScoreResponse = self.post("/score", &request)?;
        Ok(resp.p_a)
    }

    /// Text completion from the language model behind `/generate`.
    pub fn generate(&self, prompt: &str) -> Result<String> {
        let resp: GenerateResponse = self.post("/generate", &GenerateRequest { prompt })?;
        Ok(resp.text)
    }
}

fn check_probability(index: usize, value: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&value) {
        return Err(QuotaError::OutOfRangeScore { index, value });
    }
    Ok(value)
}

/// Scores each frame with `binding`, using the default remote client settings.
pub fn score_frames(
    frames: &[FrameRef],
    prompt: &str,
    binding: &ScorerBinding,
) -> Result<ScoreVector> {
    match binding.backend() {
        ScorerBackend::Remote { endpoint } => score_frames_remote(
            frames,
            prompt,
            &RemoteClient::new(endpoint),
            binding.max_in_flight(),
        ),
        _ => score_frames_local(frames, prompt, binding),
    }
}

fn check_request(frames: &[FrameRef], prompt: &str) -> Result<()> {
    if frames.is_empty() {
        return Err(QuotaError::ZeroFrames);
    }
    if prompt.trim().is_empty() {
        return Err(QuotaError::EmptyQuery);
    }
    Ok(())
}

fn score_frames_local(
    frames: &[FrameRef],
    prompt: &str,
    binding: &ScorerBinding,
) -> Result<ScoreVector> {
    check_request(frames, prompt)?;
    let scores = match binding.backend() {
        ScorerBackend::Mock { seed } => (0..frames.len())
            .map(|i| mock_score(*seed, i, prompt))
            .collect(),
        ScorerBackend::File { path } => {
            let scores = io::read_scores(path)?;
            if scores.len() != frames.len() {
                return Err(QuotaError::ScoreCountMismatch {
                    expected: frames.len(),
                    actual: scores.len(),
                });
            }
            for (i, &s) in scores.as_slice().iter().enumerate() {
                check_probability(i, s)?;
            }
            return Ok(scores);
        }
        ScorerBackend::Remote { .. } => unreachable!("remote handled by caller"),
    };
    ScoreVector::new(scores)
}

/// Scores frames against a remote service with at most `max_in_flight`
/// concurrent requests. Results are placed by frame position, so completion
/// order does not affect the output.
pub fn score_frames_remote(
    frames: &[FrameRef],
    prompt: &str,
    client: &RemoteClient,
    max_in_flight: usize,
) -> Result<ScoreVector> {
    check_request(frames, prompt)?;
    let workers = max_in_flight.clamp(1, frames.len());
    let next = AtomicUsize::new(0);
    let failed = AtomicUsize::new(usize::MAX);
    let slots: Mutex<Vec<Option<Result<f64>>>> =
        Mutex::new((0..frames.len()).map(|_| None).collect());

    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= frames.len() || failed.load(Ordering::Relaxed) != usize::MAX {
                    break;
                }
                let result = client
                    .score(prompt, &frames[i])
                    .and_then(|p| check_probability(i, p));
                if result.is_err() {
                    failed.fetch_min(i, Ordering::Relaxed);
                }
                slots.lock().expect("score slots poisoned")[i] = Some(result);
            });
        }
    });

    let slots = slots.into_inner().expect("score slots poisoned");
    let mut scores = Vec::with_capacity(frames.len());
    for slot in slots {
        match slot {
            Some(Ok(p)) => scores.push(p),
            Some(Err(e)) => return Err(e),
            // Indices are claimed in order, so every unclaimed slot lies
            // after the lowest failed one and is never reached.
            None => unreachable!("unscored frame without an earlier failure"),
        }
    }
    ScoreVector::new(scores)
}

/// Divides each score by the total. All-zero scores map to uniform weights.
pub fn normalize_scores(scores: &ScoreVector) -> NormalizedScores {
    let s = scores.as_slice();
    let total: f64 = s.iter().sum();
    let weights = if total > 0.0 {
        s.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / s.len() as f64; s.len()]
    };
    NormalizedScores::new(weights).expect("normalized non-negative scores form a distribution")
}
