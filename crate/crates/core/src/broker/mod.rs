//! The notification service: a channel tree with subscriptions.
//!
//! A CN published on a channel is delivered once to every subscription on
//! that channel or on any of its ancestors. Publishing holds the state lock
//! for the whole fanout, which makes the lock the serialization point that
//! defines per-channel order. Sinks only ever see non-blocking `try_deliver`
//! calls, so a slow consumer cannot stall the publisher; when a sink's buffer
//! overflows the sink is disconnected instead.

pub mod tcp;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard};

use crossbeam_channel::{Receiver, Sender, TrySendError};
use thiserror::Error;

use crate::channel::ChannelPath;
use crate::notification::ChangeNotification;

/// Default per-sink outbound buffer, in CNs.
pub const DEFAULT_SINK_CAPACITY: usize = 65_536;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BrokerError {
    #[error("unknown channel {0}")]
    UnknownChannel(ChannelPath),
    #[error("sink is already closed")]
    SinkClosed,
    #[error("broker unavailable: {0}")]
    Unavailable(String),
    #[error("broker protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SinkError {
    #[error("sink closed")]
    Closed,
    #[error("sink buffer overflow")]
    Overflow,
}

/// A delivery endpoint: a connection or an in-process queue.
pub trait Sink: Send + Sync {
    /// Hands `cn` to the endpoint without blocking.
    fn try_deliver(&self, cn: &ChangeNotification) -> Result<(), SinkError>;

    fn is_closed(&self) -> bool;

    /// Called when the broker disconnects this sink.
    fn close(&self) {}
}

/// A bounded in-process sink backed by a channel.
pub struct ChannelSink {
    tx: Mutex<Option<Sender<ChangeNotification>>>,
}

impl ChannelSink {
    pub fn new(capacity: usize) -> (Arc<Self>, Receiver<ChangeNotification>) {
        let (tx, rx) = crossbeam_channel::bounded(capacity);
        (
            Arc::new(ChannelSink {
                tx: Mutex::new(Some(tx)),
            }),
            rx,
        )
    }
}

impl Sink for ChannelSink {
    fn try_deliver(&self, cn: &ChangeNotification) -> Result<(), SinkError> {
        let guard = self.tx.lock().expect("sink lock poisoned");
        let tx = guard.as_ref().ok_or(SinkError::Closed)?;
        tx.try_send(cn.clone()).map_err(|e| match e {
            TrySendError::Full(_) => SinkError::Overflow,
            TrySendError::Disconnected(_) => SinkError::Closed,
        })
    }

    fn is_closed(&self) -> bool {
        self.tx.lock().expect("sink lock poisoned").is_none()
    }

    fn close(&self) {
        self.tx.lock().expect("sink lock poisoned").take();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubscriptionId(pub u64);

impl fmt::Display for SubscriptionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sub-{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscription {
    pub id: SubscriptionId,
    pub subscriber_id: String,
    pub path: ChannelPath,
}

/// Snapshot of one node of the channel tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelNode {
    pub path: ChannelPath,
    pub children: BTreeSet<ChannelPath>,
    pub subscribers: BTreeSet<SubscriptionId>,
}

impl ChannelNode {
    fn new(path: ChannelPath) -> Self {
        ChannelNode {
            path,
            children: BTreeSet::new(),
            subscribers: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryFailure {
    pub subscription: SubscriptionId,
    pub subscriber_id: String,
    pub error: SinkError,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeliveryReceipt {
    /// Distinct subscriptions matched by the publish.
    pub fanout_count: usize,
    pub failures: Vec<DeliveryFailure>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BrokerStats {
    pub published: u64,
    pub delivered: u64,
    /// CNs that matched a subscription but could not be handed over.
    pub dropped: u64,
    pub disconnects: u64,
}

struct Entry {
    sub: Subscription,
    sink: Arc<dyn Sink>,
}

#[derive(Default)]
struct State {
    nodes: BTreeMap<ChannelPath, ChannelNode>,
    subs: HashMap<SubscriptionId, Entry>,
    by_key: HashMap<(String, ChannelPath), SubscriptionId>,
    next_id: u64,
    stats: BrokerStats,
}

impl State {
    fn create_channel(&mut self, path: &ChannelPath) -> &ChannelNode {
        let mut parent: Option<ChannelPath> = None;
        for prefix in path.spine() {
            if !self.nodes.contains_key(&prefix) {
                self.nodes.insert(prefix.clone(), ChannelNode::new(prefix.clone()));
                if let Some(p) = &parent {
                    self.nodes
                        .get_mut(p)
                        .expect("parent created first")
                        .children
                        .insert(prefix.clone());
                }
            }
            parent = Some(prefix);
        }
        &self.nodes[path]
    }

    fn remove(&mut self, id: SubscriptionId) -> Option<Entry> {
        let entry = self.subs.remove(&id)?;
        self.by_key
            .remove(&(entry.sub.subscriber_id.clone(), entry.sub.path.clone()));
        if let Some(node) = self.nodes.get_mut(&entry.sub.path) {
            node.subscribers.remove(&id);
        }
        Some(entry)
    }

    fn disconnect_sink(&mut self, sink: &Arc<dyn Sink>) {
        let ids: Vec<SubscriptionId> = self
            .subs
            .iter()
            .filter(|(_, e)| Arc::ptr_eq(&e.sink, sink))
            .map(|(id, _)| *id)
            .collect();
        for id in ids {
            self.remove(id);
        }
        sink.close();
        self.stats.disconnects += 1;
    }
}

/// In-process broker handle; clones share state.
#[derive(Clone, Default)]
pub struct Broker {
    state: Arc<Mutex<State>>,
}

impl Broker {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().expect("broker state poisoned")
    }

    /// Creates `path` and any missing ancestors. Idempotent.
    pub fn create_channel(&self, path: &ChannelPath) -> ChannelNode {
        self.lock().create_channel(path).clone()
    }

    pub fn channel(&self, path: &ChannelPath) -> Option<ChannelNode> {
        self.lock().nodes.get(path).cloned()
    }

    pub fn channel_count(&self) -> usize {
        self.lock().nodes.len()
    }

    /// Subscribes `sink` to `path`, creating the channel if needed.
    ///
    /// Re-subscribing the same `(subscriber_id, path)` returns the existing
    /// subscription; the new sink replaces the old one.
    pub fn subscribe(
        &self,
        subscriber_id: &str,
        path: &ChannelPath,
        sink: Arc<dyn Sink>,
    ) -> Result<Subscription, BrokerError> {
        if sink.is_closed() {
            return Err(BrokerError::SinkClosed);
        }
        let mut state = self.lock();
        state.create_channel(path);
        let key = (subscriber_id.to_owned(), path.clone());
        if let Some(id) = state.by_key.get(&key).copied() {
            let entry = state.subs.get_mut(&id).expect("index consistent");
            entry.sink = sink;
            return Ok(entry.sub.clone());
        }
        state.next_id += 1;
        let id = SubscriptionId(state.next_id);
        let sub = Subscription {
            id,
            subscriber_id: subscriber_id.to_owned(),
            path: path.clone(),
        };
        state.by_key.insert(key, id);
        state.nodes.get_mut(path).expect("created above").subscribers.insert(id);
        state.subs.insert(id, Entry { sub: sub.clone(), sink });
        Ok(sub)
    }

    pub fn unsubscribe(&self, id: SubscriptionId) -> bool {
        self.lock().remove(id).is_some()
    }

    pub fn unsubscribe_path(&self, subscriber_id: &str, path: &ChannelPath) -> bool {
        let mut state = self.lock();
        let key = (subscriber_id.to_owned(), path.clone());
        match state.by_key.get(&key).copied() {
            Some(id) => state.remove(id).is_some(),
            None => false,
        }
    }

    /// Removes every subscription held by `subscriber_id`.
    pub fn disconnect(&self, subscriber_id: &str) -> usize {
        let mut state = self.lock();
        let ids: Vec<SubscriptionId> = state
            .subs
            .values()
            .filter(|e| e.sub.subscriber_id == subscriber_id)
            .map(|e| e.sub.id)
            .collect();
        for id in &ids {
            state.remove(*id);
        }
        ids.len()
    }

    pub fn subscriptions(&self) -> Vec<Subscription> {
        let state = self.lock();
        let mut subs: Vec<Subscription> = state.subs.values().map(|e| e.sub.clone()).collect();
        subs.sort_by_key(|s| s.id);
        subs
    }

    /// Relays `cn` to every subscription on `path` or one of its ancestors.
    pub fn publish(&self, path: &ChannelPath, cn: &ChangeNotification) -> Result<DeliveryReceipt, BrokerError> {
        let mut state = self.lock();
        if !state.nodes.contains_key(path) {
            return Err(BrokerError::UnknownChannel(path.clone()));
        }
        state.stats.published += 1;
        let matched: Vec<SubscriptionId> = path
            .spine()
            .flat_map(|p| state.nodes[&p].subscribers.iter().copied().collect::<Vec<_>>())
            .collect();
        let mut receipt = DeliveryReceipt {
            fanout_count: matched.len(),
            failures: Vec::new(),
        };
        for id in matched {
            // an earlier overflow in this fanout may have removed it
            let Some(entry) = state.subs.get(&id) else {
                state.stats.dropped += 1;
                continue;
            };
            match entry.sink.try_deliver(cn) {
                Ok(()) => state.stats.delivered += 1,
                Err(error) => {
                    let sink = Arc::clone(&entry.sink);
                    let subscriber_id = entry.sub.subscriber_id.clone();
                    log::warn!("disconnecting {subscriber_id} after delivery failure: {error}");
                    receipt.failures.push(DeliveryFailure {
                        subscription: id,
                        subscriber_id,
                        error,
                    });
                    state.stats.dropped += 1;
                    state.disconnect_sink(&sink);
                }
            }
        }
        Ok(receipt)
    }

    pub fn stats(&self) -> BrokerStats {
        self.lock().stats
    }
}

/// The Source's view of the service: create channels, push CNs.
pub trait Publisher: Send + Sync {
    fn create_channel(&self, path: &ChannelPath) -> Result<(), BrokerError>;

    /// Publishes on `cn.channel`; returns the fanout count when known.
    fn publish_cn(&self, cn: &ChangeNotification) -> Result<usize, BrokerError>;
}

impl Publisher for Broker {
    fn create_channel(&self, path: &ChannelPath) -> Result<(), BrokerError> {
        Broker::create_channel(self, path);
        Ok(())
    }

    fn publish_cn(&self, cn: &ChangeNotification) -> Result<usize, BrokerError> {
        self.publish(&cn.channel, cn).map(|r| r.fanout_count)
    }
}
