use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::condense::SuperNodeBatch;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::ledger::CommLedger;

/// Bytes per feature element on the wire (32-bit floats).
pub const ELEMENT_BYTES: u64 = 4;
/// Bytes per node id (and per group-size field).
pub const ID_BYTES: u64 = 4;
/// Fixed per-message header.
pub const HEADER_BYTES: u64 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    SuperNodes,
    RawHalo,
    GradHalo,
    ParamSync,
}

impl MessageKind {
    /// Forward feature traffic, the stream condensation compresses.
    pub fn is_feature(self) -> bool {
        matches!(self, Self::SuperNodes | Self::RawHalo)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    SuperNodes(SuperNodeBatch),
    RawHalo {
        layer: usize,
        nodes: Vec<usize>,
        rows: Matrix,
    },
    GradHalo {
        layer: usize,
        nodes: Vec<usize>,
        rows: Matrix,
    },
    ParamSync {
        values: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub source: usize,
    pub destination: usize,
    pub payload: Payload,
}

/// Byte breakdown of one message.
///
/// `baseline` is what the same feature rows would cost as raw halo rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireSize {
    pub payload: u64,
    pub metadata: u64,
    pub baseline: u64,
}

impl WireSize {
    pub fn total(&self) -> u64 {
        self.payload + self.metadata
    }

    pub fn add(&mut self, other: WireSize) {
        self.payload += other.payload;
        self.metadata += other.metadata;
        self.baseline += other.baseline;
    }
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self.payload {
            Payload::SuperNodes(_) => MessageKind::SuperNodes,
            Payload::RawHalo { .. } => MessageKind::RawHalo,
            Payload::GradHalo { .. } => MessageKind::GradHalo,
            Payload::ParamSync { .. } => MessageKind::ParamSync,
        }
    }

    /// Layer the message belongs to; parameter sync has none.
    pub fn layer(&self) -> Option<usize> {
        match &self.payload {
            Payload::SuperNodes(b) => Some(b.layer),
            Payload::RawHalo { layer, .. } | Payload::GradHalo { layer, .. } => Some(*layer),
            Payload::ParamSync { .. } => None,
        }
    }

    /// Wire size under the fixed convention:
    ///
    /// * every message: 8-byte header;
    /// * super nodes: per group a 4-byte member count, 4 bytes per member
    ///   id, and `dim` 4-byte elements;
    /// * raw or gradient halo rows: 4 bytes per node id plus `dim`
    ///   elements per node;
    /// * parameter sync: 4 bytes per value.
    ///
    /// Feature elements are payload; headers, ids and counts are metadata.
    pub fn wire_size(&self) -> WireSize {
        match &self.payload {
            Payload::SuperNodes(batch) => {
                let mut size = WireSize {
                    payload: 0,
                    metadata: HEADER_BYTES,
                    baseline: 0,
                };
                for g in &batch.groups {
                    let members = g.members.len() as u64;
                    let dim = g.vector.len() as u64;
                    size.payload += dim * ELEMENT_BYTES;
                    size.metadata += ID_BYTES + members * ID_BYTES;
                    size.baseline += members * dim * ELEMENT_BYTES;
                }
                size
            }
            Payload::RawHalo { nodes, rows, .. } | Payload::GradHalo { nodes, rows, .. } => {
                let payload = (rows.rows() * rows.cols()) as u64 * ELEMENT_BYTES;
                WireSize {
                    payload,
                    metadata: HEADER_BYTES + nodes.len() as u64 * ID_BYTES,
                    baseline: payload,
                }
            }
            Payload::ParamSync { values } => {
                let payload = values.len() as u64 * ELEMENT_BYTES;
                WireSize {
                    payload,
                    metadata: HEADER_BYTES,
                    baseline: payload,
                }
            }
        }
    }

    fn order_key(&self) -> (usize, usize, MessageKind, Option<usize>) {
        (self.source, self.destination, self.kind(), self.layer())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    /// One thread steps workers round-robin; the reference mode.
    #[default]
    Serial,
    /// One thread per worker between phase barriers.
    Concurrent,
}

impl std::str::FromStr for ExecMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "serial" | "serial-deterministic" => Ok(Self::Serial),
            "concurrent" => Ok(Self::Concurrent),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

impl std::fmt::Display for ExecMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Serial => "serial",
            Self::Concurrent => "concurrent",
        })
    }
}

/// Delivers every message exactly once and books its bytes.
///
/// Returns one inbox per worker, sorted by `(source, kind, layer)` so
/// receivers consume messages in the same order in either mode.
pub fn exchange(
    messages: Vec<Message>,
    num_workers: usize,
    mode: ExecMode,
    epoch: usize,
    ledger: &mut CommLedger,
) -> Result<Vec<Vec<Message>>> {
    if let Some(bad) = messages
        .iter()
        .find(|m| m.destination >= num_workers || m.source >= num_workers || m.destination == m.source)
    {
        return Err(Error::Routing {
            from: bad.source,
            to: bad.destination,
        });
    }
    let mut inboxes: Vec<Vec<Message>> = match mode {
        ExecMode::Serial => {
            let mut messages = messages;
            messages.sort_by_key(Message::order_key);
            let mut inboxes = vec![Vec::new(); num_workers];
            for m in messages {
                ledger.record(epoch, m.source, m.destination, m.kind(), m.wire_size());
                inboxes[m.destination].push(m);
            }
            inboxes
        }
        ExecMode::Concurrent => {
            let mut by_source: Vec<Vec<Message>> = vec![Vec::new(); num_workers];
            for m in messages {
                by_source[m.source].push(m);
            }
            let mailboxes: Vec<Mutex<Vec<Message>>> = (0..num_workers).map(|_| Mutex::new(Vec::new())).collect();
            let shared = Mutex::new(std::mem::take(ledger));
            std::thread::scope(|scope| {
                for outgoing in by_source {
                    let (mailboxes, shared) = (&mailboxes, &shared);
                    scope.spawn(move || {
                        for m in outgoing {
                            shared
                                .lock()
                                .expect("ledger lock")
                                .record(epoch, m.source, m.destination, m.kind(), m.wire_size());
                            mailboxes[m.destination].lock().expect("mailbox lock").push(m);
                        }
                    });
                }
            });
            *ledger = shared.into_inner().expect("ledger lock");
            mailboxes
                .into_iter()
                .map(|m| m.into_inner().expect("mailbox lock"))
                .collect()
        }
    };
    for inbox in &mut inboxes {
        inbox.sort_by_key(Message::order_key);
    }
    Ok(inboxes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condense::SuperNode;

    fn batch(groups: usize, dim: usize) -> Message {
        Message {
            source: 0,
            destination: 1,
            payload: Payload::SuperNodes(SuperNodeBatch {
                layer: 0,
                source: 0,
                destination: 1,
                groups: (0..groups)
                    .map(|g| SuperNode {
                        group_id: g,
                        members: vec![2 * g, 2 * g + 1],
                        vector: vec![0.5; dim],
                    })
                    .collect(),
            }),
        }
    }

    #[test]
    fn three_groups_of_dim_eight() {
        let size = batch(3, 8).wire_size();
        assert_eq!(size.payload, 96);
        // header + 3 × (count + 2 ids)
        assert_eq!(size.metadata, 8 + 3 * 12);
        assert_eq!(size.baseline, 6 * 8 * 4);
    }

    #[test]
    fn raw_halo_payload_equals_baseline() {
        let m = Message {
            source: 2,
            destination: 0,
            payload: Payload::RawHalo {
                layer: 1,
                nodes: vec![4, 9],
                rows: Matrix::zeros(2, 5),
            },
        };
        let size = m.wire_size();
        assert_eq!(size.payload, 40);
        assert_eq!(size.baseline, 40);
        assert_eq!(size.metadata, 16);
    }

    #[test]
    fn empty_exchange_leaves_ledger_unchanged() {
        let mut ledger = CommLedger::default();
        let inboxes = exchange(Vec::new(), 3, ExecMode::Serial, 0, &mut ledger).unwrap();
        assert!(inboxes.iter().all(Vec::is_empty));
        assert_eq!(ledger, CommLedger::default());
    }

    #[test]
    fn bad_destination_is_a_routing_error() {
        let mut ledger = CommLedger::default();
        let mut m = batch(1, 2);
        m.destination = 5;
        assert!(matches!(
            exchange(vec![m], 2, ExecMode::Serial, 0, &mut ledger),
            Err(Error::Routing { from: 0, to: 5 })
        ));
    }

    #[test]
    fn serial_and_concurrent_deliver_identically() {
        let mut messages = Vec::new();
        for s in 0..4 {
            for d in 0..4 {
                if s != d {
                    messages.push(Message {
                        source: s,
                        destination: d,
                        payload: Payload::ParamSync {
                            values: vec![s as f64; d + 1],
                        },
                    });
                    let mut b = batch(d + 1, 3);
                    b.source = s;
                    b.destination = d;
                    messages.push(b);
                }
            }
        }
        messages.reverse();
        let (mut a, mut b) = (CommLedger::default(), CommLedger::default());
        let serial = exchange(messages.clone(), 4, ExecMode::Serial, 2, &mut a).unwrap();
        let concurrent = exchange(messages, 4, ExecMode::Concurrent, 2, &mut b).unwrap();
        assert_eq!(serial, concurrent);
        assert_eq!(a, b);
        assert_eq!(serial[1].iter().map(|m| m.source).collect::<Vec<_>>(), vec![0, 0, 2, 2, 3, 3]);
    }
}
