use std::time::{Duration, Instant};

use reqwest::{Client, StatusCode};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use vitalcam_core::frame::Frame;
use vitalcam_core::synth::{generate_pulse_video, PulseScene};
use vitalcam_service::{http, Ack, Created, ErrorBody, FrameBatch, Results, Service, ServiceConfig, Summary};

struct Server {
    base: String,
    stop: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
    _consumers: vitalcam_service::Consumers,
}

impl Server {
    async fn start(config: ServiceConfig) -> Self {
        let svc = Service::new(config);
        let consumers = svc.spawn_consumers(2);
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = oneshot::channel();
        let task = tokio::spawn(http::serve(listener, svc, async {
            let _ = rx.await;
        }));
        Self {
            base,
            stop: Some(tx),
            task,
            _consumers: consumers,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn stop(mut self) {
        self.stop.take().unwrap().send(()).unwrap();
        (&mut self.task).await.unwrap().unwrap();
    }
}

async fn create(client: &Client, server: &Server) -> String {
    let resp = client.post(server.url("/v1/sessions")).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);
    resp.json::<Created>().await.unwrap().session_id
}

async fn results(client: &Client, server: &Server, id: &str) -> Results {
    let resp = client
        .get(server.url(&format!("/v1/sessions/{id}/results")))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    resp.json().await.unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pulse_session_over_http() {
    let server = Server::start(ServiceConfig::default()).await;
    let client = Client::new();
    let id = create(&client, &server).await;

    let fresh = results(&client, &server, &id).await;
    assert!(fresh.calibrating);
    assert_eq!(fresh.bpm, None);

    let frames: Vec<Frame> = generate_pulse_video(PulseScene::default()).unwrap().collect();
    for chunk in frames.chunks(30) {
        let wire = FrameBatch::from_frames(chunk, 20.0).to_wire(Some(id.clone()));
        let resp = client
            .post(server.url(&format!("/v1/sessions/{id}/frames")))
            .json(&wire)
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        let ack: Ack = resp.json().await.unwrap();
        assert_eq!((ack.accepted, ack.dropped), (30, 0));
        // Pace submissions so the bounded queue never overflows.
        while results(&client, &server, &id).await.queue_depth > 4 {
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
    }
    let deadline = Instant::now() + Duration::from_secs(60);
    let r = loop {
        let r = results(&client, &server, &id).await;
        if r.frames_processed == 300 {
            break r;
        }
        assert!(Instant::now() < deadline);
        tokio::time::sleep(Duration::from_millis(10)).await;
    };
    assert!(!r.calibrating);
    let bpm = r.bpm.unwrap();
    assert!((bpm - 72.0).abs() <= 3.0, "{bpm}");

    let resp = client
        .delete(server.url(&format!("/v1/sessions/{id}")))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let summary: Summary = resp.json().await.unwrap();
    assert!((summary.mean_bpm.unwrap() - 72.0).abs() <= 3.0);

    let resp = client
        .get(server.url(&format!("/v1/sessions/{id}/results")))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
    let resp = client
        .delete(server.url(&format!("/v1/sessions/{id}")))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn error_statuses() {
    let server = Server::start(ServiceConfig::default()).await;
    let client = Client::new();
    let id = create(&client, &server).await;
    let frames_url = server.url(&format!("/v1/sessions/{id}/frames"));

    let frames: Vec<Frame> = (0..3).map(|i| Frame::solid(16, 16, i * 50, [9, 9, 9])).collect();
    let mut wire = FrameBatch::from_frames(&frames, 20.0).to_wire(None);
    wire.payload_b64 = FrameBatch::from_frames(&frames[..2], 20.0).to_wire(None).payload_b64;
    let resp = client.post(&frames_url).json(&wire).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let body: ErrorBody = resp.json().await.unwrap();
    assert_eq!(body.field.as_deref(), Some("payload"));

    let resp = client
        .post(&frames_url)
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);

    let wire = FrameBatch::from_frames(&frames, 20.0).to_wire(Some("other".into()));
    let resp = client.post(&frames_url).json(&wire).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let body: ErrorBody = resp.json().await.unwrap();
    assert_eq!(body.field.as_deref(), Some("session_id"));

    let wire = FrameBatch::from_frames(&frames, 20.0).to_wire(None);
    let resp = client
        .post(server.url("/v1/sessions/missing/frames"))
        .json(&wire)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);

    let resp = client
        .post(server.url("/v1/sessions"))
        .json(&json!({"bogus": 1}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);

    let resp = client
        .post(server.url("/v1/sessions"))
        .json(&json!({"iou_threshold": 0.3, "roi": {"x": 0, "y": 0, "w": 16, "h": 16}}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);

    for _ in 2..64 {
        create(&client, &server).await;
    }
    let resp = client.post(server.url("/v1/sessions")).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::SERVICE_UNAVAILABLE);
    let body: Value = resp.json().await.unwrap();
    assert!(body["error"].as_str().unwrap().contains("64"));
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn zero_capacity_is_429_and_restart_is_empty() {
    let config = ServiceConfig {
        queue_capacity: 0,
        ..ServiceConfig::default()
    };
    let server = Server::start(config.clone()).await;
    let client = Client::new();
    let id = create(&client, &server).await;
    let frames = [Frame::solid(16, 16, 0, [1, 2, 3])];
    let wire = FrameBatch::from_frames(&frames, 20.0).to_wire(None);
    let resp = client
        .post(server.url(&format!("/v1/sessions/{id}/frames")))
        .json(&wire)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::TOO_MANY_REQUESTS);
    server.stop().await;

    let server = Server::start(config).await;
    let resp = client
        .get(server.url(&format!("/v1/sessions/{id}/results")))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
    server.stop().await;
}
