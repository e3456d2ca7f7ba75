use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, SystemTime};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use vitalcam_core::facegate::{Detection, Detector, GateConfig, MotionDetector, StaticDetector};
use vitalcam_core::fer::{classify, EmotionDistribution, Model, INPUT_SIZE};
use vitalcam_core::frame::{crop, resize_bilinear, to_grayscale, Frame, Roi};
use vitalcam_core::pulse::{BpmReading, PulseConfig, PulseSession};

use crate::broker::{Broker, TopicId};
use crate::wire::{Ack, FrameBatch, Results, Summary, WireDetection};
use crate::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    /// Always reports the configured rectangle.
    #[default]
    Static,
    Motion,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub session_cap: usize,
    /// Batches per session queue.
    pub queue_capacity: usize,
    /// Classify expression on every k-th frame.
    pub fer_every: u64,
    pub pulse: PulseConfig,
    pub iou_threshold: f64,
    pub detector: DetectorKind,
    pub model: Option<Arc<Model>>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            session_cap: 64,
            queue_capacity: 8,
            fer_every: 10,
            pulse: PulseConfig::default(),
            iou_threshold: 0.5,
            detector: DetectorKind::Static,
            model: None,
        }
    }
}

/// Per-session settings accepted at creation. Unset fields take the server
/// defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionOverrides {
    pub roi: Option<Roi>,
    pub detector: Option<DetectorKind>,
    /// Rectangle reported by the static detector; defaults to the ROI.
    pub detector_roi: Option<Roi>,
    pub iou_threshold: Option<f64>,
    pub fer_every: Option<u64>,
    pub calibration_seconds: Option<f64>,
    pub window_seconds: Option<f64>,
    pub min_fps: Option<f64>,
}

struct Worker {
    pulse_config: PulseConfig,
    overrides: SessionOverrides,
    detector_kind: DetectorKind,
    iou_threshold: f64,
    fer_every: u64,
    pulse: Option<PulseSession>,
    detector: Option<Box<dyn Detector>>,
    frame_index: u64,
    emotions: Option<EmotionDistribution>,
    bpm_sum: f64,
    bpm_count: u64,
    last_reading: Option<BpmReading>,
    last_detection: Option<Detection>,
    last_error: Option<String>,
}

impl Worker {
    fn ensure_pipeline(&mut self, width: usize, height: usize) -> Result<(), String> {
        if self.pulse.is_some() {
            return Ok(());
        }
        let roi = self
            .overrides
            .roi
            .unwrap_or_else(|| Roi::default_analysis(width, height));
        let gate = GateConfig {
            iou_threshold: self.iou_threshold,
            analysis_roi: roi,
        };
        let pulse = PulseSession::new(self.pulse_config.clone(), gate).map_err(|e| e.to_string())?;
        let detector: Box<dyn Detector> = match self.detector_kind {
            DetectorKind::Static => Box::new(StaticDetector::new(self.overrides.detector_roi.unwrap_or(roi))),
            DetectorKind::Motion => Box::new(MotionDetector::default()),
        };
        self.pulse = Some(pulse);
        self.detector = Some(detector);
        Ok(())
    }

    fn process_frame(&mut self, frame: &Frame, model: Option<&Model>) -> Result<(), String> {
        self.ensure_pipeline(frame.width(), frame.height())?;
        let detections = self.detector.as_mut().expect("pipeline").detect(frame);
        let outcome = self
            .pulse
            .as_mut()
            .expect("pipeline")
            .push_frame(frame, &detections)
            .map_err(|e| e.to_string())?;
        if outcome.best.is_some() {
            self.last_detection = outcome.best;
        }
        if let Some(r) = outcome.reading {
            if !outcome.gated {
                if let Some(bpm) = r.bpm {
                    self.bpm_sum += bpm;
                    self.bpm_count += 1;
                }
            }
            self.last_reading = Some(r);
        }
        let index = self.frame_index;
        self.frame_index += 1;
        if let (Some(model), Some(best), false) = (model, outcome.best, outcome.gated) {
            if index.is_multiple_of(self.fer_every) {
                self.emotions = Some(classify_face(model, frame, &best.roi)?);
            }
        }
        Ok(())
    }
}

/// Luma crop of `roi`, resized to the network input.
pub fn prepare_face(frame: &Frame, roi: &Roi) -> Result<vitalcam_core::frame::GrayPlane, String> {
    let luma = to_grayscale(frame);
    let face = crop(&luma, roi).map_err(|e| e.to_string())?;
    Ok(resize_bilinear(&face, INPUT_SIZE, INPUT_SIZE))
}

fn classify_face(model: &Model, frame: &Frame, roi: &Roi) -> Result<EmotionDistribution, String> {
    let face = prepare_face(frame, roi)?;
    classify(model, &face).map_err(|e| e.to_string())
}

#[derive(Default)]
struct SubmitState {
    last_ts: Option<u64>,
    dims: Option<(usize, usize)>,
}

struct SessionEntry {
    id: String,
    topic: TopicId,
    created_at: SystemTime,
    submit: Mutex<SubmitState>,
    worker: Mutex<Worker>,
    frames_received: AtomicU64,
    frames_dropped: AtomicU64,
    frames_processed: AtomicU64,
    snapshot: Mutex<Arc<Snapshot>>,
}

/// Consumer-side state published after every batch.
#[derive(Debug, Clone, Default)]
struct Snapshot {
    reading: Option<BpmReading>,
    emotions: Option<EmotionDistribution>,
    detection: Option<Detection>,
    last_error: Option<String>,
}

struct Inner {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<SessionEntry>>>,
    by_topic: RwLock<HashMap<TopicId, Arc<SessionEntry>>>,
    broker: Broker<FrameBatch>,
    next_topic: AtomicU64,
    shutdown: AtomicBool,
}

/// Session registry, broker and consumer. Cheap to clone.
#[derive(Clone)]
pub struct Service {
    inner: Arc<Inner>,
}

impl Service {
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            inner: Arc::new(Inner {
                config,
                sessions: RwLock::new(HashMap::new()),
                by_topic: RwLock::new(HashMap::new()),
                broker: Broker::new(),
                next_topic: AtomicU64::new(1),
                shutdown: AtomicBool::new(false),
            }),
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    pub fn session_count(&self) -> usize {
        self.inner.sessions.read().len()
    }

    pub fn create_session(&self, overrides: SessionOverrides) -> Result<String, ServiceError> {
        let cfg = &self.inner.config;
        let mut pulse_config = cfg.pulse.clone();
        if let Some(v) = overrides.calibration_seconds {
            pulse_config.calibration_seconds = v;
        }
        if let Some(v) = overrides.window_seconds {
            pulse_config.window_seconds = v;
        }
        if let Some(v) = overrides.min_fps {
            pulse_config.min_fps = v;
        }
        pulse_config
            .validate()
            .map_err(|e| ServiceError::InvalidOverrides(e.to_string()))?;
        let iou_threshold = overrides.iou_threshold.unwrap_or(cfg.iou_threshold);
        if !(0.0..=1.0).contains(&iou_threshold) {
            return Err(ServiceError::InvalidOverrides(
                "iou_threshold must lie in [0, 1]".into(),
            ));
        }
        let fer_every = overrides.fer_every.unwrap_or(cfg.fer_every);
        if fer_every == 0 {
            return Err(ServiceError::InvalidOverrides("fer_every must be at least 1".into()));
        }
        for roi in [overrides.roi, overrides.detector_roi].into_iter().flatten() {
            if roi.area() == 0 {
                return Err(ServiceError::InvalidOverrides(format!("region {roi} is empty")));
            }
        }

        let mut sessions = self.inner.sessions.write();
        if sessions.len() >= cfg.session_cap {
            return Err(ServiceError::TooManySessions(cfg.session_cap));
        }
        let topic = self.inner.next_topic.fetch_add(1, Ordering::Relaxed);
        let id = format!("{topic:04x}-{:016x}", rand::random::<u64>());
        let entry = Arc::new(SessionEntry {
            id: id.clone(),
            topic,
            created_at: SystemTime::now(),
            submit: Mutex::new(SubmitState::default()),
            worker: Mutex::new(Worker {
                pulse_config,
                detector_kind: overrides.detector.unwrap_or(cfg.detector),
                overrides,
                iou_threshold,
                fer_every,
                pulse: None,
                detector: None,
                frame_index: 0,
                emotions: None,
                bpm_sum: 0.0,
                bpm_count: 0,
                last_reading: None,
                last_detection: None,
                last_error: None,
            }),
            frames_received: AtomicU64::new(0),
            frames_dropped: AtomicU64::new(0),
            frames_processed: AtomicU64::new(0),
            snapshot: Mutex::new(Arc::new(Snapshot::default())),
        });
        self.inner.broker.create_topic(topic, cfg.queue_capacity);
        sessions.insert(id.clone(), entry.clone());
        self.inner.by_topic.write().insert(topic, entry);
        Ok(id)
    }

    fn entry(&self, id: &str) -> Result<Arc<SessionEntry>, ServiceError> {
        self.inner
            .sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_owned()))
    }

    /// Validates and enqueues a batch. Timestamps must continue strictly
    /// after the previous accepted batch of the session.
    pub fn submit_batch(&self, id: &str, batch: FrameBatch) -> Result<Ack, ServiceError> {
        let entry = self.entry(id)?;
        batch.validate()?;
        let mut submit = entry.submit.lock();
        if let Some((w, h)) = submit.dims {
            if (w, h) != (batch.width, batch.height) {
                let field = if w != batch.width { "width" } else { "height" };
                return Err(ServiceError::MalformedBatch {
                    field,
                    reason: format!("session frames are {w}x{h}"),
                });
            }
        }
        if let (Some(last), Some(&first)) = (submit.last_ts, batch.timestamps_ms.first()) {
            if first <= last {
                return Err(ServiceError::MalformedBatch {
                    field: "timestamps_ms",
                    reason: format!("{first} does not follow previous batch ending at {last}"),
                });
            }
        }
        let n = batch.frame_count();
        let (last_ts, dims) = (batch.timestamps_ms.last().copied(), (batch.width, batch.height));
        let published = match self.inner.broker.publish(entry.topic, batch) {
            Ok(p) => p,
            Err(crate::broker::BrokerError::NoCapacity(_)) => return Err(ServiceError::QueueFull),
            Err(crate::broker::BrokerError::UnknownTopic(_)) => {
                return Err(ServiceError::UnknownSession(id.to_owned()))
            }
        };
        submit.last_ts = last_ts;
        submit.dims = Some(dims);
        entry.frames_received.fetch_add(n as u64, Ordering::SeqCst);
        let dropped = published.evicted.map_or(0, |b| b.frame_count());
        entry.frames_dropped.fetch_add(dropped as u64, Ordering::SeqCst);
        Ok(Ack {
            accepted: n,
            dropped,
            queue_depth: published.depth,
        })
    }

    /// Snapshot of the latest consumer state; never waits on processing.
    pub fn poll(&self, id: &str) -> Result<Results, ServiceError> {
        let entry = self.entry(id)?;
        let snap = entry.snapshot.lock().clone();
        let reading = snap.reading;
        Ok(Results {
            session_id: entry.id.clone(),
            calibrating: reading.is_none_or(|r| r.calibrating),
            bpm: reading.and_then(|r| r.bpm),
            confidence: reading.map_or(0.0, |r| r.confidence),
            emotions: snap.emotions.map(|e| e.probabilities),
            detection: snap.detection.map(WireDetection::from),
            frames_received: entry.frames_received.load(Ordering::SeqCst),
            frames_dropped: entry.frames_dropped.load(Ordering::SeqCst),
            frames_processed: entry.frames_processed.load(Ordering::SeqCst),
            queue_depth: self.inner.broker.depth(entry.topic).unwrap_or(0),
            low_fps: reading.is_some_and(|r| r.low_fps),
            last_error: snap.last_error.clone(),
        })
    }

    /// Frames currently waiting in the session's queue.
    pub fn queued_frames(&self, id: &str) -> Result<u64, ServiceError> {
        let entry = self.entry(id)?;
        Ok(self
            .inner
            .broker
            .with_queue(entry.topic, |q| q.iter().map(|b| b.frame_count() as u64).sum())
            .unwrap_or(0))
    }

    pub fn created_at(&self, id: &str) -> Result<SystemTime, ServiceError> {
        Ok(self.entry(id)?.created_at)
    }

    /// Removes the session, discarding queued batches, and summarises the
    /// readings it produced.
    pub fn close_session(&self, id: &str) -> Result<Summary, ServiceError> {
        let entry = self
            .inner
            .sessions
            .write()
            .remove(id)
            .ok_or_else(|| ServiceError::UnknownSession(id.to_owned()))?;
        self.inner.by_topic.write().remove(&entry.topic);
        self.inner.broker.remove_topic(entry.topic);
        let worker = entry.worker.lock();
        Ok(Summary {
            session_id: entry.id.clone(),
            mean_bpm: (worker.bpm_count > 0).then(|| worker.bpm_sum / worker.bpm_count as f64),
            reading_count: worker.bpm_count,
        })
    }

    /// Processes one queued batch of one ready session. Returns false when
    /// nothing was ready within `wait`.
    fn step(&self, wait: Option<Duration>) -> bool {
        let broker = &self.inner.broker;
        let topic = match wait {
            Some(d) => broker.next_ready(d),
            None => broker.try_next_ready(),
        };
        let Some(topic) = topic else {
            return false;
        };
        let entry = self.inner.by_topic.read().get(&topic).cloned();
        if let Some(entry) = entry {
            if let Some(batch) = broker.claim(topic) {
                self.process(&entry, &batch);
            }
        }
        broker.finish(topic);
        true
    }

    fn process(&self, entry: &SessionEntry, batch: &FrameBatch) {
        let model = self.inner.config.model.as_deref();
        let mut worker = entry.worker.lock();
        for frame in batch.frames() {
            if let Err(e) = worker.process_frame(&frame, model) {
                worker.last_error = Some(e);
            }
            entry.frames_processed.fetch_add(1, Ordering::SeqCst);
        }
        let snap = Snapshot {
            reading: worker.last_reading,
            emotions: worker.emotions,
            detection: worker.last_detection,
            last_error: worker.last_error.clone(),
        };
        *entry.snapshot.lock() = Arc::new(snap);
    }

    /// Drains every queue on the calling thread. Returns batches processed.
    pub fn run_pending(&self) -> usize {
        let mut n = 0;
        while self.step(None) {
            n += 1;
        }
        n
    }

    /// Starts `threads` consumer threads that run until [`Service::shutdown`].
    pub fn spawn_consumers(&self, threads: usize) -> Consumers {
        let handles = (0..threads.max(1))
            .map(|i| {
                let svc = self.clone();
                thread::Builder::new()
                    .name(format!("consumer-{i}"))
                    .spawn(move || {
                        while !svc.inner.shutdown.load(Ordering::SeqCst) {
                            svc.step(Some(Duration::from_millis(20)));
                        }
                    })
                    .expect("spawn consumer thread")
            })
            .collect();
        Consumers {
            service: self.clone(),
            handles,
        }
    }

    pub fn shutdown(&self) {
        self.inner.shutdown.store(true, Ordering::SeqCst);
    }
}

/// Consumer threads; stopped and joined on drop.
pub struct Consumers {
    service: Service,
    handles: Vec<JoinHandle<()>>,
}

impl Drop for Consumers {
    fn drop(&mut self) {
        self.service.shutdown();
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}
