//! JSON-lines audit trail of balancing decisions and, at the most verbose
//! level, of every dispatched event.

use serde::{Deserialize, Serialize};

use crate::balancing::MoveReason;
use crate::{ContentId, PeerId};

use super::event::ReplicaCause;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditLevel {
    Off,
    #[default]
    Moves,
    Events,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AuditRecord {
    Event {
        t: f64,
        seq: u64,
        kind: String,
    },
    Placement {
        t: f64,
        class1: usize,
        class2: usize,
        transfers: usize,
        failures: Vec<ContentId>,
    },
    Move {
        t: f64,
        reason: MoveReason,
        item: ContentId,
        source: PeerId,
        target: PeerId,
        source_load: f64,
        reference_load: f64,
    },
    MoveSkipped {
        t: f64,
        reason: MoveReason,
        item: ContentId,
        source: PeerId,
        target: PeerId,
    },
    ReplicaReady {
        t: f64,
        cause: ReplicaCause,
        item: ContentId,
        target: PeerId,
    },
    TransferAborted {
        t: f64,
        cause: ReplicaCause,
        item: ContentId,
        source: PeerId,
        target: PeerId,
    },
    Cleanup {
        t: f64,
        peer: PeerId,
        deleted: Vec<ContentId>,
    },
    InterTrigger {
        t: f64,
        cluster: u32,
        cluster_load: u64,
        neighbor_avg: f64,
        willing: usize,
        assigned: usize,
    },
    PeerLeave {
        t: f64,
        peer: PeerId,
        dropped_requests: usize,
        dropped_replicas: usize,
    },
    PeerJoin {
        t: f64,
        peer: PeerId,
    },
}

#[derive(Clone, Debug, Default)]
pub struct AuditLog {
    level: AuditLevel,
    lines: Vec<String>,
}

impl AuditLog {
    pub fn new(level: AuditLevel) -> Self {
        Self { level, lines: Vec::new() }
    }

    pub fn level(&self) -> AuditLevel {
        self.level
    }

    pub fn record(&mut self, rec: AuditRecord) {
        let needed = match rec {
            AuditRecord::Event { .. } => AuditLevel::Events,
            _ => AuditLevel::Moves,
        };
        if self.level >= needed {
            self.lines
                .push(serde_json::to_string(&rec).expect("audit records serialize"));
        }
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn into_lines(self) -> Vec<String> {
        self.lines
    }
}
