use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::message::{MessageKind, WireSize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Sent,
    Received,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LedgerKey {
    pub epoch: usize,
    pub worker: usize,
    pub peer: usize,
    pub direction: Direction,
    pub kind: MessageKind,
}

/// Byte counters for every delivered message, booked on both ends.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CommLedger {
    entries: BTreeMap<LedgerKey, WireSize>,
    messages: u64,
}

impl CommLedger {
    pub fn record(&mut self, epoch: usize, source: usize, destination: usize, kind: MessageKind, size: WireSize) {
        let sent = LedgerKey {
            epoch,
            worker: source,
            peer: destination,
            direction: Direction::Sent,
            kind,
        };
        let received = LedgerKey {
            worker: destination,
            peer: source,
            direction: Direction::Received,
            ..sent
        };
        self.entries.entry(sent).or_default().add(size);
        self.entries.entry(received).or_default().add(size);
        self.messages += 1;
    }

    pub fn entries(&self) -> impl Iterator<Item = (&LedgerKey, &WireSize)> {
        self.entries.iter()
    }

    pub fn get(&self, key: &LedgerKey) -> WireSize {
        self.entries.get(key).copied().unwrap_or_default()
    }

    pub fn message_count(&self) -> u64 {
        self.messages
    }

    /// Sent-side totals of one epoch over all workers, for the kinds that
    /// satisfy `filter`.
    pub fn epoch_total(&self, epoch: usize, filter: impl Fn(MessageKind) -> bool) -> WireSize {
        let mut total = WireSize::default();
        for (k, v) in &self.entries {
            if k.epoch == epoch && k.direction == Direction::Sent && filter(k.kind) {
                total.add(*v);
            }
        }
        total
    }

    /// Sent-side totals over the whole run.
    pub fn run_total(&self, filter: impl Fn(MessageKind) -> bool) -> WireSize {
        let mut total = WireSize::default();
        for (k, v) in &self.entries {
            if k.direction == Direction::Sent && filter(k.kind) {
                total.add(*v);
            }
        }
        total
    }

    /// Every `(epoch, k → j, kind)` booked as sent has an equal received
    /// entry, and vice versa.
    pub fn is_conserved(&self) -> bool {
        self.entries.iter().all(|(k, v)| {
            let mirror = LedgerKey {
                worker: k.peer,
                peer: k.worker,
                direction: match k.direction {
                    Direction::Sent => Direction::Received,
                    Direction::Received => Direction::Sent,
                },
                ..*k
            };
            self.entries.get(&mirror) == Some(v)
        })
    }
}
