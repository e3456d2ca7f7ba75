//! In-process publish/subscribe with one bounded FIFO per topic.
//!
//! A topic is handed to at most one consumer at a time: it enters the ready
//! channel when it gains a message while idle, and the consumer that claims
//! it must call [`Broker::finish`] before anyone else sees it again.

use std::collections::{HashMap, VecDeque};
use std::time::Duration;

use crossbeam_channel::{Receiver, Sender};
use parking_lot::Mutex;
use thiserror::Error;

pub type TopicId = u64;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum BrokerError {
    #[error("unknown topic {0}")]
    UnknownTopic(TopicId),
    #[error("topic {0} has zero capacity")]
    NoCapacity(TopicId),
}

#[derive(Debug)]
pub struct Published<M> {
    /// The oldest message, evicted to make room.
    pub evicted: Option<M>,
    pub depth: usize,
}

struct Topic<M> {
    queue: VecDeque<M>,
    capacity: usize,
    /// In the ready channel or held by a consumer.
    scheduled: bool,
}

pub struct Broker<M> {
    topics: Mutex<HashMap<TopicId, Topic<M>>>,
    ready_tx: Sender<TopicId>,
    ready_rx: Receiver<TopicId>,
}

impl<M> Default for Broker<M> {
    fn default() -> Self {
        Self::new()
    }
}

impl<M> Broker<M> {
    pub fn new() -> Self {
        let (ready_tx, ready_rx) = crossbeam_channel::unbounded();
        Self {
            topics: Mutex::new(HashMap::new()),
            ready_tx,
            ready_rx,
        }
    }

    pub fn create_topic(&self, id: TopicId, capacity: usize) {
        self.topics.lock().insert(
            id,
            Topic {
                queue: VecDeque::with_capacity(capacity),
                capacity,
                scheduled: false,
            },
        );
    }

    /// Drops the topic and everything queued on it.
    pub fn remove_topic(&self, id: TopicId) -> Vec<M> {
        self.topics
            .lock()
            .remove(&id)
            .map(|t| t.queue.into_iter().collect())
            .unwrap_or_default()
    }

    /// Appends `msg`, evicting the oldest message when full.
    pub fn publish(&self, id: TopicId, msg: M) -> Result<Published<M>, BrokerError> {
        let mut topics = self.topics.lock();
        let topic = topics.get_mut(&id).ok_or(BrokerError::UnknownTopic(id))?;
        if topic.capacity == 0 {
            return Err(BrokerError::NoCapacity(id));
        }
        let evicted = if topic.queue.len() >= topic.capacity {
            topic.queue.pop_front()
        } else {
            None
        };
        topic.queue.push_back(msg);
        let depth = topic.queue.len();
        if !topic.scheduled {
            topic.scheduled = true;
            let _ = self.ready_tx.send(id);
        }
        Ok(Published { evicted, depth })
    }

    pub fn depth(&self, id: TopicId) -> Option<usize> {
        self.topics.lock().get(&id).map(|t| t.queue.len())
    }

    /// Inspects queued messages without removing them.
    pub fn with_queue<R>(&self, id: TopicId, f: impl FnOnce(&VecDeque<M>) -> R) -> Option<R> {
        self.topics.lock().get(&id).map(|t| f(&t.queue))
    }

    /// Next topic with work, waiting up to `timeout`.
    pub fn next_ready(&self, timeout: Duration) -> Option<TopicId> {
        self.ready_rx.recv_timeout(timeout).ok()
    }

    pub fn try_next_ready(&self) -> Option<TopicId> {
        self.ready_rx.try_recv().ok()
    }

    /// Pops the oldest message of a topic the caller holds.
    pub fn claim(&self, id: TopicId) -> Option<M> {
        self.topics.lock().get_mut(&id).and_then(|t| t.queue.pop_front())
    }

    /// Releases a held topic, rescheduling it if more work arrived.
    pub fn finish(&self, id: TopicId) {
        let mut topics = self.topics.lock();
        if let Some(t) = topics.get_mut(&id) {
            if t.queue.is_empty() {
                t.scheduled = false;
            } else {
                let _ = self.ready_tx.send(id);
            }
        }
    }
}
