use serde::{Deserialize, Serialize};

/// Results over the post-warm-up measurement window.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean response delay of completed requests, ms.
    pub mean_delay_ms: f64,
    /// Payload bits delivered to all clients per second of window.
    pub aggregate_throughput_bps: f64,
    /// Requests dropped at a full service queue, unroutable, or cut off by churn.
    pub packets_lost: u64,
    pub requests_total: u64,
    pub requests_completed: u64,
    pub bytes_delivered: u64,
    pub window_s: f64,
    /// Bytes of replica copies that completed inside the window.
    pub replication_bytes_moved: u64,
    pub moves_applied: u64,
    pub replicas_deleted: u64,
    pub placement_failures: u64,
    /// Payload bytes each peer served inside the window, indexed by peer id.
    pub peer_load_bytes: Vec<u64>,
}

impl MetricsReport {
    pub fn loss_fraction(&self) -> f64 {
        if self.requests_total == 0 {
            0.0
        } else {
            self.packets_lost as f64 / self.requests_total as f64
        }
    }
}

/// Per-peer loads of one report period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadTick {
    pub t: f64,
    pub loads: Vec<u64>,
}

/// CSV with one row per report tick and one column per peer.
pub fn load_ticks_csv(ticks: &[LoadTick]) -> String {
    let n = ticks.first().map_or(0, |t| t.loads.len());
    let mut out = String::from("t_ms");
    for p in 0..n {
        out.push_str(&format!(",p{p}"));
    }
    out.push('\n');
    for t in ticks {
        out.push_str(&format!("{}", t.t));
        for l in &t.loads {
            out.push_str(&format!(",{l}"));
        }
        out.push('\n');
    }
    out
}
