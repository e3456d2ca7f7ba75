//! Frame-batch ingestion for the heart-rate and expression pipeline.
//!
//! Clients create a session, POST batches of raw RGB frames, and poll for
//! results. Each session owns a bounded queue in an in-process broker; when
//! the queue is full the oldest batch is discarded. Consumer threads take
//! one batch at a time per session, so frames of a session are always
//! processed in order.
//!
//! Nothing is persisted: a restarted server starts with no sessions.

pub mod broker;
mod engine;
pub mod http;
pub mod wire;

use thiserror::Error;

pub use engine::{prepare_face, Consumers, DetectorKind, Service, ServiceConfig, SessionOverrides};
pub use wire::{Ack, Created, ErrorBody, FrameBatch, Results, Summary, WireBatch, WireDetection};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServiceError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("malformed batch: {field}: {reason}")]
    MalformedBatch { field: &'static str, reason: String },
    #[error("session limit of {0} reached")]
    TooManySessions(usize),
    #[error("queue cannot admit the batch")]
    QueueFull,
    #[error("invalid session settings: {0}")]
    InvalidOverrides(String),
}
