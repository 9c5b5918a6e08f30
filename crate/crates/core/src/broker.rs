//! In-process publish/subscribe broker: FIFO queues keyed by capability
//! class, the completion channel, and the cache-path lookup table.

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{Message, QueueKey};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrokerMessage {
    /// Strictly increasing per queue.
    pub enqueue_seq: u64,
    pub message: Message,
}

/// Opaque cache location; the in-process cache addresses entries by key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheLocation(pub String);

#[derive(Default)]
struct State {
    queues: HashMap<QueueKey, VecDeque<BrokerMessage>>,
    next_seq: HashMap<QueueKey, u64>,
    paths: HashMap<String, CacheLocation>,
}

pub struct Broker {
    state: Mutex<State>,
    ready: Condvar,
    trace: Option<Mutex<BufWriter<File>>>,
}

impl Default for Broker {
    fn default() -> Self {
        Self::new()
    }
}

impl Broker {
    pub fn new() -> Self {
        let mut st = State::default();
        for q in QueueKey::all() {
            st.queues.insert(q.clone(), VecDeque::new());
            st.next_seq.insert(q, 0);
        }
        Broker {
            state: Mutex::new(st),
            ready: Condvar::new(),
            trace: None,
        }
    }

    /// Like [`Broker::new`], also appending every published task as one
    /// JSON line to `path`.
    pub fn with_trace(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut b = Broker::new();
        b.trace = Some(Mutex::new(BufWriter::new(f)));
        Ok(b)
    }

    pub fn publish(&self, queue: &QueueKey, message: Message) -> Result<u64> {
        let mut st = self.state.lock().expect("broker lock poisoned");
        if !st.queues.contains_key(queue) {
            return Err(Error::UnknownQueue(queue.to_string()));
        }
        if let (Some(t), Message::Task(task)) = (&self.trace, &message) {
            let mut w = t.lock().expect("trace lock poisoned");
            let line = serde_json::to_string(task)?;
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| Error::io("trace", e))?;
        }
        let seq_slot = st.next_seq.get_mut(queue).expect("queue registered");
        let seq = *seq_slot;
        *seq_slot += 1;
        st.queues
            .get_mut(queue)
            .expect("queue registered")
            .push_back(BrokerMessage {
                enqueue_seq: seq,
                message,
            });
        drop(st);
        self.ready.notify_all();
        Ok(seq)
    }

    /// Removes and returns the oldest message of `queue`, waiting up to
    /// `timeout`.
    pub fn poll(&self, queue: &QueueKey, timeout: Duration) -> Result<Option<BrokerMessage>> {
        self.poll_many(std::slice::from_ref(queue), timeout)
            .map(|m| m.map(|(_, msg)| msg))
    }

    /// Polls several queues; the first non-empty queue in `queues` order wins.
    pub fn poll_many(
        &self,
        queues: &[QueueKey],
        timeout: Duration,
    ) -> Result<Option<(QueueKey, BrokerMessage)>> {
        let deadline = Instant::now() + timeout;
        let mut st = self.state.lock().expect("broker lock poisoned");
        for q in queues {
            if !st.queues.contains_key(q) {
                return Err(Error::UnknownQueue(q.to_string()));
            }
        }
        loop {
            for q in queues {
                if let Some(m) = st.queues.get_mut(q).and_then(|d| d.pop_front()) {
                    return Ok(Some((q.clone(), m)));
                }
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            st = self
                .ready
                .wait_timeout(st, deadline - now)
                .expect("broker lock poisoned")
                .0;
        }
    }

    pub fn len(&self, queue: &QueueKey) -> Result<usize> {
        let st = self.state.lock().expect("broker lock poisoned");
        st.queues
            .get(queue)
            .map(|d| d.len())
            .ok_or_else(|| Error::UnknownQueue(queue.to_string()))
    }

    pub fn is_empty(&self, queue: &QueueKey) -> Result<bool> {
        self.len(queue).map(|n| n == 0)
    }

    /// Binds `key` to `location`. Re-registering the same location is a no-op.
    pub fn register_cache_path(&self, key: &str, location: CacheLocation) -> Result<()> {
        let mut st = self.state.lock().expect("broker lock poisoned");
        match st.paths.get(key) {
            Some(existing) if *existing != location => Err(Error::DuplicateKey(key.to_string())),
            Some(_) => Ok(()),
            None => {
                st.paths.insert(key.to_string(), location);
                Ok(())
            }
        }
    }

    pub fn lookup_cache_path(&self, key: &str) -> Option<CacheLocation> {
        let st = self.state.lock().expect("broker lock poisoned");
        st.paths.get(key).cloned()
    }

    /// True when every key has a registered path.
    pub fn all_registered(&self, keys: &[String]) -> bool {
        let st = self.state.lock().expect("broker lock poisoned");
        keys.iter().all(|k| st.paths.contains_key(k))
    }

    /// Forgets registered paths with the `<query_id>.` prefix.
    pub fn drop_query_paths(&self, query_id: &str) -> usize {
        let prefix = format!("{query_id}.");
        let mut st = self.state.lock().expect("broker lock poisoned");
        let before = st.paths.len();
        st.paths.retain(|k, _| !k.starts_with(&prefix));
        before - st.paths.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::SignalMessage;

    fn sig(n: usize) -> Message {
        Message::Signal(SignalMessage {
            name: "partition-ready".into(),
            query_id: "q".into(),
            group: n,
            keys: vec![],
        })
    }

    #[test]
    fn fifo_and_sequence_numbers() {
        let b = Broker::new();
        let q = QueueKey::gpu();
        for i in 0..3 {
            assert_eq!(b.publish(&q, sig(i)).unwrap(), i as u64);
        }
        assert_eq!(b.len(&q).unwrap(), 3);
        for i in 0..3 {
            let m = b.poll(&q, Duration::ZERO).unwrap().unwrap();
            assert_eq!(m.message, sig(i));
            assert_eq!(m.enqueue_seq, i as u64);
        }
        assert!(b.poll(&q, Duration::from_millis(10)).unwrap().is_none());
    }

    #[test]
    fn unknown_queue_rejected() {
        let b = Broker::new();
        let bogus = QueueKey::new("q.bogus");
        assert!(matches!(
            b.publish(&bogus, sig(0)),
            Err(Error::UnknownQueue(_))
        ));
        assert!(matches!(
            b.poll(&bogus, Duration::ZERO),
            Err(Error::UnknownQueue(_))
        ));
    }

    #[test]
    fn queues_are_isolated() {
        let b = Broker::new();
        b.publish(&QueueKey::gpu(), sig(0)).unwrap();
        assert_eq!(b.len(&QueueKey::cpu_general()).unwrap(), 0);
        let (q, _) = b
            .poll_many(&[QueueKey::cpu_general(), QueueKey::gpu()], Duration::ZERO)
            .unwrap()
            .unwrap();
        assert_eq!(q, QueueKey::gpu());
    }

    #[test]
    fn cache_path_table() {
        let b = Broker::new();
        assert!(b.lookup_cache_path("q7.stage1.t3").is_none());
        b.register_cache_path("q7.stage1.t3", CacheLocation("h".into()))
            .unwrap();
        assert_eq!(
            b.lookup_cache_path("q7.stage1.t3"),
            Some(CacheLocation("h".into()))
        );
        b.register_cache_path("q7.stage1.t3", CacheLocation("h".into()))
            .unwrap();
        assert!(matches!(
            b.register_cache_path("q7.stage1.t3", CacheLocation("other".into())),
            Err(Error::DuplicateKey(_))
        ));
        assert_eq!(b.drop_query_paths("q7"), 1);
    }

    #[test]
    fn blocked_poller_wakes_on_publish() {
        let b = std::sync::Arc::new(Broker::new());
        let b2 = b.clone();
        let h = std::thread::spawn(move || b2.poll(&QueueKey::cpu_himem(), Duration::from_secs(5)));
        std::thread::sleep(Duration::from_millis(20));
        b.publish(&QueueKey::cpu_himem(), sig(9)).unwrap();
        assert_eq!(h.join().unwrap().unwrap().unwrap().message, sig(9));
    }
}
