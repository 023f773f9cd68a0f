#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};
use tiny_http::{Header, Response, Server};

/// What the stub does with each request.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StubMode {
    /// Deterministic `p_a` derived from the frame id.
    Normal,
    /// Answer 503 to the first `n` requests, then behave normally.
    FailFirst(usize),
    /// Return `p_a` outside [0, 1].
    OutOfRange,
}

/// A local HTTP server speaking the `/score` + `/generate` protocol.
pub struct StubServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<Value>>>,
    pub max_concurrent: Arc<AtomicUsize>,
    server: Arc<Server>,
    workers: Vec<thread::JoinHandle<()>>,
}

/// `p_a` the stub returns for a frame id.
pub fn stub_p_a(frame_id: &str) -> f64 {
    let h = frame_id.bytes().fold(17u64, |acc, b| {
        acc.wrapping_mul(31).wrapping_add(u64::from(b))
    });
    (h % 1000) as f64 / 999.0
}

impl StubServer {
    pub fn start(mode: StubMode, generate_text: &str) -> Self {
        let server = Arc::new(Server::http("127.0.0.1:0").expect("bind stub"));
        let url = format!("http://{}", server.server_addr().to_ip().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let served = Arc::new(AtomicUsize::new(0));
        let in_flight = Arc::new(AtomicUsize::new(0));
        let max_concurrent = Arc::new(AtomicUsize::new(0));
        let generate_text = generate_text.to_string();
        let workers = (0..16)
            .map(|_| {
                let server = Arc::clone(&server);
                let requests = Arc::clone(&requests);
                let served = Arc::clone(&served);
                let in_flight = Arc::clone(&in_flight);
                let max_concurrent = Arc::clone(&max_concurrent);
                let generate_text = generate_text.clone();
                thread::spawn(move || {
                    while let Ok(mut req) = server.recv() {
                        let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                        max_concurrent.fetch_max(now, Ordering::SeqCst);
                        let n = served.fetch_add(1, Ordering::SeqCst);
                        let mut body = String::new();
                        req.as_reader().read_to_string(&mut body).unwrap();
                        let parsed: Value = serde_json::from_str(&body).unwrap_or(Value::Null);
                        requests
                            .lock()
                            .unwrap()
                            .push(json!({"path": req.url(), "body": parsed.clone()}));

                        let (status, reply) = match (req.url(), mode) {
                            (_, StubMode::FailFirst(k)) if n < k => {
                                (503, json!({"error": "not ready"}))
                            }
                            ("/score", _) => match (
                                parsed.get("prompt"),
                                parsed.get("frame_id").and_then(Value::as_str),
                            ) {
                                (Some(_), Some(id)) => {
                                    // Scramble completion order.
                                    let delay = (stub_p_a(id) * 7.0) as u64;
                                    thread::sleep(Duration::from_millis(delay));
                                    let p = if mode == StubMode::OutOfRange {
                                        1.5
                                    } else {
                                        stub_p_a(id)
                                    };
                                    (200, json!({"p_a": p}))
                                }
                                _ => (400, json!({"error": "missing field"})),
                            },
                            ("/generate", _) => match parsed.get("prompt") {
                                Some(_) => (200, json!({"text": generate_text})),
                                None => (400, json!({"error": "missing prompt"})),
                            },
                            _ => (404, json!({"error": "not found"})),
                        };
                        let header =
                            Header::from_bytes("Content-Type", "application/json").unwrap();
                        let response = Response::from_string(reply.to_string())
                            .with_status_code(status)
                            .with_header(header);
                        in_flight.fetch_sub(1, Ordering::SeqCst);
                        let _ = req.respond(response);
                    }
                })
            })
            .collect();
        Self {
            url,
            requests,
            max_concurrent,
            server,
            workers,
        }
    }

    pub fn request_count(&self, path: &str) -> usize {
        self.requests
            .lock()
            .unwrap()
            .iter()
            .filter(|r| r["path"] == path)
            .count()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        for _ in 1..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

/// Independent reference for bipartite grid merging.
///
/// Works on plain nested vectors, picks pairs by repeatedly scanning all free
/// A-B pairs for the maximum similarity, and re-derives the pass order from
/// scratch. Shares no code with the library kernel.
pub mod merge_oracle {
    #[derive(Clone, Debug)]
    pub struct Tok {
        pub v: Vec<f64>,
        pub size: u64,
    }

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }

    /// Merges `r` disjoint (even, odd) pairs within one line.
    pub fn merge_line(line: &[Tok], r: usize) -> Vec<Tok> {
        let evens: Vec<usize> = (0..line.len()).filter(|i| i % 2 == 0).collect();
        let odds: Vec<usize> = (0..line.len()).filter(|i| i % 2 == 1).collect();
        let mut taken_a = vec![false; evens.len()];
        let mut taken_b = vec![false; odds.len()];
        let mut into: Vec<Option<usize>> = vec![None; line.len()];
        for _ in 0..r {
            let mut best: Option<(f64, usize, usize)> = None;
            for (ai, &a) in evens.iter().enumerate() {
                if taken_a[ai] {
                    continue;
                }
                for (bi, &b) in odds.iter().enumerate() {
                    if taken_b[bi] {
                        continue;
                    }
                    let s = cos(&line[a].v, &line[b].v);
                    if best.is_none_or(|(bs, _, _)| s > bs) {
                        best = Some((s, ai, bi));
                    }
                }
            }
            let (_, ai, bi) = best.expect("enough free pairs");
            taken_a[ai] = true;
            taken_b[bi] = true;
            into[evens[ai]] = Some(odds[bi]);
        }
        let mut out = Vec::new();
        for (pos, tok) in line.iter().enumerate() {
            if into[pos].is_some() {
                continue;
            }
            let sources: Vec<&Tok> = std::iter::once(tok)
                .chain(
                    (0..line.len())
                        .filter(|&a| into[a] == Some(pos))
                        .map(|a| &line[a]),
                )
                .collect();
            if sources.len() == 1 {
                out.push(tok.clone());
            } else {
                // sources = [b, a]
                let (b, a) = (sources[0], sources[1]);
                let size = a.size + b.size;
                let v =
                    a.v.iter()
                        .zip(&b.v)
                        .map(|(x, y)| (a.size as f64 * x + b.size as f64 * y) / size as f64)
                        .collect();
                out.push(Tok { v, size });
            }
        }
        out
    }

    /// `grid[row][col]` merged down to `th x tw`.
    pub fn merge(mut grid: Vec<Vec<Tok>>, th: usize, tw: usize) -> Vec<Vec<Tok>> {
        loop {
            let h = grid.len();
            let w = grid[0].len();
            if h == th && w == tw {
                return grid;
            }
            let rel_w = (w - tw) as f64 / w as f64;
            let rel_h = (h - th) as f64 / h as f64;
            if w > tw && rel_w >= rel_h {
                let r = (w - tw).min(w / 2);
                grid = grid.iter().map(|row| merge_line(row, r)).collect();
            } else {
                let r = (h - th).min(h / 2);
                let cols: Vec<Vec<Tok>> = (0..w)
                    .map(|c| {
                        merge_line(
                            &grid.iter().map(|row| row[c].clone()).collect::<Vec<_>>(),
                            r,
                        )
                    })
                    .collect();
                let nh = cols[0].len();
                grid = (0..nh)
                    .map(|rr| cols.iter().map(|col| col[rr].clone()).collect())
                    .collect();
            }
        }
    }
}
