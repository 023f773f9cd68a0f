mod common;

use std::time::Duration;

use common::{stub_p_a, StubMode, StubServer};
use quota::scorer::{score_frames, score_frames_remote, FrameRef, RemoteClient, ScorerBinding};
use quota::QuotaError;

fn client(url: &str) -> RemoteClient {
    RemoteClient::new(url).with_retry(3, Duration::from_millis(5))
}

#[test]
fn scores_follow_frame_order() {
    let stub = StubServer::start(StubMode::Normal, "");
    let frames = FrameRef::sequence(24);
    let scores = score_frames_remote(&frames, "Does it?", &client(&stub.url), 6).unwrap();
    let expected: Vec<f64> = frames.iter().map(|f| stub_p_a(&f.id)).collect();
    assert_eq!(scores.as_slice(), expected.as_slice());
    assert_eq!(stub.request_count("/score"), 24);
}

#[test]
fn concurrency_is_bounded() {
    let stub = StubServer::start(StubMode::Normal, "");
    score_frames_remote(&FrameRef::sequence(32), "p", &client(&stub.url), 3).unwrap();
    let peak = stub
        .max_concurrent
        .load(std::sync::atomic::Ordering::SeqCst);
    assert!((1..=3).contains(&peak), "peak {peak}");
}

#[test]
fn request_body_matches_protocol() {
    let stub = StubServer::start(StubMode::Normal, "");
    let frames = vec![FrameRef::with_image("frame-00007", vec![0xff, 0xd8, 0x00])];
    score_frames_remote(&frames, "Question: x?", &client(&stub.url), 1).unwrap();
    let requests = stub.requests.lock().unwrap();
    let body = &requests[0]["body"];
    assert_eq!(requests[0]["path"], "/score");
    assert_eq!(body["prompt"], "Question: x?");
    assert_eq!(body["frame_id"], "frame-00007");
    assert_eq!(body["image_b64"], "/9gA");

    drop(requests);
    score_frames_remote(&FrameRef::sequence(1), "p", &client(&stub.url), 1).unwrap();
    let requests = stub.requests.lock().unwrap();
    assert!(requests[1]["body"].get("image_b64").is_none());
}

#[test]
fn transient_failures_are_retried() {
    let stub = StubServer::start(StubMode::FailFirst(2), "");
    let scores = score_frames_remote(&FrameRef::sequence(1), "p", &client(&stub.url), 1).unwrap();
    assert_eq!(scores.as_slice(), &[stub_p_a("frame-00000")]);
    assert_eq!(stub.request_count("/score"), 3);
}

#[test]
fn persistent_failure_is_unreachable() {
    let stub = StubServer::start(StubMode::FailFirst(usize::MAX), "");
    let err = score_frames_remote(&FrameRef::sequence(1), "p", &client(&stub.url), 1).unwrap_err();
    assert!(
        matches!(err, QuotaError::ScorerUnreachable { attempts: 4, .. }),
        "{err}"
    );
    assert_eq!(stub.request_count("/score"), 4);
}

#[test]
fn out_of_range_probability_rejected() {
    let stub = StubServer::start(StubMode::OutOfRange, "");
    let err = score_frames_remote(&FrameRef::sequence(4), "p", &client(&stub.url), 2).unwrap_err();
    assert!(
        matches!(err, QuotaError::OutOfRangeScore { index: 0, .. }),
        "{err}"
    );
}

#[test]
fn generate_returns_text() {
    let stub = StubServer::start(StubMode::Normal, "Step 3: [cup]");
    assert_eq!(
        client(&stub.url).generate("decouple this").unwrap(),
        "Step 3: [cup]"
    );
    let requests = stub.requests.lock().unwrap();
    assert_eq!(requests[0]["path"], "/generate");
    assert_eq!(requests[0]["body"]["prompt"], "decouple this");
}

#[test]
fn binding_dispatches_to_remote() {
    let stub = StubServer::start(StubMode::Normal, "");
    let binding = ScorerBinding::parse(&format!("http:{}", stub.url), 4).unwrap();
    let scores = score_frames(&FrameRef::sequence(5), "p", &binding).unwrap();
    assert_eq!(scores.len(), 5);
}
