use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Collective families tracked by the meter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectiveKind {
    Broadcast,
    Reduce,
    AllReduce,
    Shift,
    Permute,
}

impl CollectiveKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CollectiveKind::Broadcast => "broadcast",
            CollectiveKind::Reduce => "reduce",
            CollectiveKind::AllReduce => "all_reduce",
            CollectiveKind::Shift => "shift",
            CollectiveKind::Permute => "permute",
        }
    }
}

impl fmt::Display for CollectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankStats {
    pub sent_messages: u64,
    pub sent_elements: u64,
    pub recv_messages: u64,
    pub recv_elements: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindStats {
    /// Group-level collective invocations with more than one participant.
    pub calls: u64,
    pub messages: u64,
    pub elements: u64,
}

/// Flat point-to-point message accounting for one run.
///
/// A broadcast or reduce over `g` members costs `g − 1` messages, an
/// all-reduce `2(g − 1)`, a shift one message per member that actually moves.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommStats {
    pub per_rank: Vec<RankStats>,
    pub by_kind: BTreeMap<CollectiveKind, KindStats>,
}

impl CommStats {
    pub fn new(p: usize) -> Self {
        CommStats {
            per_rank: vec![RankStats::default(); p],
            by_kind: BTreeMap::new(),
        }
    }

    pub(crate) fn record_call(&mut self, kind: CollectiveKind) {
        self.by_kind.entry(kind).or_default().calls += 1;
    }

    pub(crate) fn record_transfer(&mut self, kind: CollectiveKind, from: usize, to: usize, elements: usize) {
        let elements = elements as u64;
        let s = &mut self.per_rank[from];
        s.sent_messages += 1;
        s.sent_elements += elements;
        let r = &mut self.per_rank[to];
        r.recv_messages += 1;
        r.recv_elements += elements;
        let k = self.by_kind.entry(kind).or_default();
        k.messages += 1;
        k.elements += elements;
    }

    pub fn total_messages(&self) -> u64 {
        self.per_rank.iter().map(|r| r.sent_messages).sum()
    }

    pub fn total_sent_elements(&self) -> u64 {
        self.per_rank.iter().map(|r| r.sent_elements).sum()
    }

    pub fn total_recv_elements(&self) -> u64 {
        self.per_rank.iter().map(|r| r.recv_elements).sum()
    }

    pub fn max_rank_recv_elements(&self) -> u64 {
        self.per_rank.iter().map(|r| r.recv_elements).max().unwrap_or(0)
    }

    pub fn kind(&self, kind: CollectiveKind) -> KindStats {
        self.by_kind.get(&kind).copied().unwrap_or_default()
    }

    /// Adds `other` into `self`; both must describe the same number of ranks.
    pub fn merge(&mut self, other: &CommStats) {
        if self.per_rank.len() < other.per_rank.len() {
            self.per_rank.resize(other.per_rank.len(), RankStats::default());
        }
        for (a, b) in self.per_rank.iter_mut().zip(&other.per_rank) {
            a.sent_messages += b.sent_messages;
            a.sent_elements += b.sent_elements;
            a.recv_messages += b.recv_messages;
            a.recv_elements += b.recv_elements;
        }
        for (kind, b) in &other.by_kind {
            let a = self.by_kind.entry(*kind).or_default();
            a.calls += b.calls;
            a.messages += b.messages;
            a.elements += b.elements;
        }
    }
}
