use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use herdid_cli::labels::{LabelRecord, Rank};
use herdid_cli::server::{router, AppState, IdentityView, LabelMetrics, NextTracklet};
use herdid_core::embedder::TrainConfig;
use herdid_core::pipeline::{load_report, run_pipeline, DataSource, PipelineConfig};
use herdid_core::synthherd::{DetectorNoise, SynthScenario};
use serde::de::DeserializeOwned;
use tower::ServiceExt;

/// A small finished run shared by every test; labels go to per-test files.
fn run_dir() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("herdid-service-run");
        let cfg = PipelineConfig {
            source: DataSource::Synthetic {
                scenario: SynthScenario {
                    n_individuals: 8,
                    n_videos: 16,
                    frames_per_video: 120,
                    stills_per_identity: 12,
                    ..Default::default()
                },
                detector_noise: DetectorNoise::default(),
            },
            training: TrainConfig {
                epochs: 3,
                batches_per_epoch: 10,
                ..Default::default()
            },
            output_dir: dir.clone(),
            ..Default::default()
        };
        run_pipeline(&cfg).unwrap();
        dir
    })
}

struct Client {
    state: Arc<AppState>,
}

impl Client {
    fn open(labels: &Path) -> Self {
        Self {
            state: Arc::new(AppState::load(run_dir(), labels).unwrap()),
        }
    }

    async fn send(&self, req: Request<Body>) -> (StatusCode, Vec<u8>) {
        let resp = router(self.state.clone(), None).oneshot(req).await.unwrap();
        let status = resp.status();
        let body = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
        (status, body.to_vec())
    }

    async fn get<T: DeserializeOwned>(&self, uri: &str) -> (StatusCode, Option<T>) {
        let (status, body) = self.send(Request::get(uri).body(Body::empty()).unwrap()).await;
        (status, serde_json::from_slice(&body).ok())
    }

    async fn post(&self, rec: &LabelRecord) -> StatusCode {
        self.post_raw(serde_json::to_string(rec).unwrap()).await
    }

    async fn post_raw(&self, body: String) -> StatusCode {
        let req = Request::post("/api/labels")
            .header("content-type", "application/json")
            .body(Body::from(body))
            .unwrap();
        self.send(req).await.0
    }

    async fn next(&self, n: usize) -> Option<NextTracklet> {
        let (status, body) = self.get(&format!("/api/tracklets/next?n={n}")).await;
        match status {
            StatusCode::OK => body,
            StatusCode::NO_CONTENT => None,
            s => panic!("unexpected status {s}"),
        }
    }

    async fn metrics(&self) -> LabelMetrics {
        self.get("/api/metrics").await.1.unwrap()
    }
}

fn label(t: &NextTracklet, rank: usize) -> LabelRecord {
    LabelRecord {
        tracklet_id: t.tracklet_id,
        identity: Some(t.candidates[rank - 1].identity),
        rank: Rank::listed(rank as u32).unwrap(),
        annotator: "test".into(),
        timestamp: Some(1_700_000_000),
    }
}

#[tokio::test]
async fn fresh_state_has_no_labels() {
    let dir = tempfile::tempdir().unwrap();
    let c = Client::open(&dir.path().join("labels.jsonl"));
    let m = c.metrics().await;
    assert_eq!(m.labels, 0);
    assert_eq!(m.remaining, m.tracklets);
    assert_eq!(m.hit_rate, None);
    assert_eq!(m.n, 4);
}

#[tokio::test]
async fn posted_label_shows_in_metrics_and_next_moves_on() {
    let dir = tempfile::tempdir().unwrap();
    let c = Client::open(&dir.path().join("labels.jsonl"));
    let first = c.next(4).await.unwrap();
    assert_eq!(first.candidates.len(), 4);
    assert_eq!(c.post(&label(&first, 3)).await, StatusCode::CREATED);
    let m = c.metrics().await;
    assert_eq!(m.labels, 1);
    assert_eq!(m.hit_rate, Some(1.0));
    assert_eq!(m.hit_rates["2"], 0.0);
    assert_eq!(m.hit_rates["4"], 1.0);
    let second = c.next(4).await.unwrap();
    assert_ne!(second.tracklet_id, first.tracklet_id);
    assert_eq!(second.remaining, first.remaining - 1);
}

#[tokio::test]
async fn restart_replays_every_label() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("labels.jsonl");
    let mut posted = Vec::new();
    {
        let c = Client::open(&path);
        for _ in 0..5 {
            let t = c.next(4).await.unwrap();
            let rec = label(&t, 1);
            assert_eq!(c.post(&rec).await, StatusCode::CREATED);
            posted.push(rec);
        }
    }
    let c = Client::open(&path);
    assert_eq!(c.metrics().await.labels, 5);
    let (_, listed): (_, Option<Vec<LabelRecord>>) = c.get("/api/labels").await;
    assert_eq!(listed.unwrap(), posted);
    let t = c.next(4).await.unwrap();
    assert!(posted.iter().all(|r| r.tracklet_id != t.tracklet_id));
}

#[tokio::test]
async fn invalid_labels_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let c = Client::open(&dir.path().join("labels.jsonl"));
    let t = c.next(4).await.unwrap();

    let mut rec = label(&t, 1);
    rec.tracklet_id = 999_999;
    assert_eq!(c.post(&rec).await, StatusCode::UNPROCESSABLE_ENTITY);

    let mut rec = label(&t, 1);
    rec.identity = Some(4242);
    assert_eq!(c.post(&rec).await, StatusCode::UNPROCESSABLE_ENTITY);

    let mut rec = label(&t, 1);
    rec.rank = Rank::listed(2).unwrap();
    assert_eq!(c.post(&rec).await, StatusCode::UNPROCESSABLE_ENTITY);

    let bad_rank = format!(r#"{{"tracklet_id":{},"identity":0,"rank":0,"annotator":"x"}}"#, t.tracklet_id);
    assert_eq!(c.post_raw(bad_rank).await, StatusCode::UNPROCESSABLE_ENTITY);

    assert_eq!(c.metrics().await.labels, 0);
    assert_eq!(c.post(&label(&t, 1)).await, StatusCode::CREATED);
    assert_eq!(c.post(&label(&t, 1)).await, StatusCode::CONFLICT);

    let (status, _): (_, Option<()>) = c.get("/api/tracklets/next?n=0").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn new_individual_is_recorded_as_not_in_list() {
    let dir = tempfile::tempdir().unwrap();
    let c = Client::open(&dir.path().join("labels.jsonl"));
    let t = c.next(4).await.unwrap();
    let rec = LabelRecord {
        tracklet_id: t.tracklet_id,
        identity: None,
        rank: Rank::not_in_list(),
        annotator: "test".into(),
        timestamp: None,
    };
    assert_eq!(c.post(&rec).await, StatusCode::CREATED);
    let m = c.metrics().await;
    assert_eq!((m.labels, m.not_in_list, m.hit_rate), (1, 1, Some(0.0)));
}

#[tokio::test]
async fn expanding_doubles_the_candidate_count() {
    let dir = tempfile::tempdir().unwrap();
    let c = Client::open(&dir.path().join("labels.jsonl"));
    let four = c.next(4).await.unwrap();
    let eight = c.next(8).await.unwrap();
    assert_eq!(four.tracklet_id, eight.tracklet_id);
    assert_eq!(eight.candidates.len(), 2 * four.candidates.len());
    assert_eq!(four.candidates[..], eight.candidates[..4]);
    assert!(eight.candidates.iter().enumerate().all(|(i, c)| c.rank == i + 1));
}

#[tokio::test]
async fn identities_and_crops_are_served() {
    let dir = tempfile::tempdir().unwrap();
    let c = Client::open(&dir.path().join("labels.jsonl"));
    let (_, ids): (_, Option<Vec<IdentityView>>) = c.get("/api/identities").await;
    let ids = ids.unwrap();
    assert_eq!(ids.iter().map(|i| i.identity).collect::<Vec<_>>(), (0..8).collect::<Vec<_>>());
    let t = c.next(4).await.unwrap();
    for url in t.crops.iter().take(1).chain(&ids[0].exemplars) {
        let (status, body) = c.send(Request::get(url.as_str()).body(Body::empty()).unwrap()).await;
        assert_eq!(status, StatusCode::OK, "{url}");
        assert_eq!(&body[1..4], b"PNG");
    }
    let (status, _) = c.send(Request::get("/crops/missing.png").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

/// An annotator that always picks the true identity, expanding the list
/// until it appears.
#[tokio::test]
async fn scripted_annotator_hit_rate_matches_top_n_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let c = Client::open(&dir.path().join("labels.jsonl"));
    let suggestions = herdid_core::pipeline::load_suggestions(run_dir()).unwrap();
    let truth: std::collections::HashMap<u64, Option<u32>> =
        suggestions.tracklets.iter().map(|t| (t.tracklet_id, t.gt_identity)).collect();
    let mut posted = 0;
    while let Some(mut t) = c.next(4).await {
        let rec = match truth[&t.tracklet_id] {
            Some(gt) => loop {
                if let Some(pos) = t.candidates.iter().position(|x| x.identity == gt) {
                    break label(&t, pos + 1);
                }
                assert!(t.candidates.len() < t.total_candidates);
                let expanded = c.next(2 * t.n).await.unwrap();
                assert_eq!(expanded.candidates.len(), (2 * t.n).min(t.total_candidates));
                t = expanded;
            },
            None => LabelRecord {
                tracklet_id: t.tracklet_id,
                identity: None,
                rank: Rank::not_in_list(),
                annotator: "script".into(),
                timestamp: None,
            },
        };
        assert_eq!(c.post(&rec).await, StatusCode::CREATED);
        posted += 1;
    }
    let m = c.metrics().await;
    assert_eq!((m.labels, m.remaining), (posted, 0));
    let report = load_report(run_dir()).unwrap();
    let scored = truth.values().filter(|g| g.is_some()).count() as f64;
    // Hit-rate over all labels; tracklets without ground truth count as misses.
    for n in ["1", "2", "4"] {
        let expected = report.tracklet_top_n[n] * scored / posted as f64;
        let got = m.hit_rates[n];
        assert!((got - expected).abs() <= 0.02, "N={n}: hit-rate {got} vs top-N accuracy {expected}");
    }
    assert!(m.hit_rates["1"] < 1.0);
}
