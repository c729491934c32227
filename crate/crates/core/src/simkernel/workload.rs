//! Query arrivals and the content catalog.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Zipf};
use serde::{Deserialize, Serialize};

use crate::placement::{ContentItem, QueryRecord};
use crate::rng::{stream_rng, Stream};
use crate::{ContentId, Error, PeerId, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    /// Aggregate queries per second. Ignored when `offered_load_bps` is set.
    pub query_rate: f64,
    /// Offered load in bits per second; converted to queries per second
    /// using `payload_bytes`.
    pub offered_load_bps: Option<f64>,
    /// Response size of every query, which is also the size of every item.
    pub payload_bytes: u64,
    pub zipf_s: f64,
    pub duration_s: f64,
    pub warmup_s: f64,
    /// Peer departures per second.
    pub churn_rate: f64,
    /// Mean time a departed peer stays away, seconds.
    pub mean_downtime_s: f64,
    /// Let origin peers leave too. Their items are unreachable meanwhile.
    pub allow_origin_churn: bool,
    pub catalog_size: usize,
    /// Per-request processing time at a peer with the fleet's fastest CPU, ms.
    pub service_ms: f64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            query_rate: 100.0,
            offered_load_bps: None,
            payload_bytes: 1000,
            zipf_s: 1.0,
            duration_s: 20.0,
            warmup_s: 2.0,
            churn_rate: 0.0,
            mean_downtime_s: 2.0,
            allow_origin_churn: false,
            catalog_size: 100,
            service_ms: 0.5,
        }
    }
}

impl WorkloadConfig {
    pub fn effective_query_rate(&self) -> f64 {
        match self.offered_load_bps {
            Some(bps) => bps / (self.payload_bytes.max(1) as f64 * 8.0),
            None => self.query_rate,
        }
    }

    pub fn validate(&self, n_peers: usize) -> Result<()> {
        if let Some(bps) = self.offered_load_bps {
            if !(bps > 0.0 && bps.is_finite()) {
                return Err(Error::config(format!(
                    "workload.offered_load_bps must be positive, got {bps}"
                )));
            }
        } else if !(self.query_rate > 0.0 && self.query_rate.is_finite()) {
            return Err(Error::config(format!(
                "workload.query_rate must be positive, got {}",
                self.query_rate
            )));
        }
        if self.payload_bytes < 1 {
            return Err(Error::config("workload.payload_bytes must be at least 1"));
        }
        if !(self.zipf_s >= 0.0 && self.zipf_s.is_finite()) {
            return Err(Error::config(format!(
                "workload.zipf_s must be non-negative, got {}",
                self.zipf_s
            )));
        }
        if !(self.warmup_s >= 0.0) {
            return Err(Error::config(format!(
                "workload.warmup_s must be non-negative, got {}",
                self.warmup_s
            )));
        }
        if !(self.duration_s > self.warmup_s) || !self.duration_s.is_finite() {
            return Err(Error::config(format!(
                "workload.duration_s ({}) must be greater than workload.warmup_s ({})",
                self.duration_s, self.warmup_s
            )));
        }
        if !(self.churn_rate >= 0.0) {
            return Err(Error::config("workload.churn_rate must be non-negative"));
        }
        if !(self.mean_downtime_s > 0.0) {
            return Err(Error::config("workload.mean_downtime_s must be positive"));
        }
        if !(self.service_ms >= 0.0) {
            return Err(Error::config("workload.service_ms must be non-negative"));
        }
        if self.catalog_size == 0 || self.catalog_size > n_peers {
            return Err(Error::config(format!(
                "workload.catalog_size must lie in 1..={n_peers} (one origin item per peer), got {}",
                self.catalog_size
            )));
        }
        Ok(())
    }
}

/// One item of `payload_bytes` per selected origin peer. Origins are a
/// seeded random subset of the peers; item `i` has popularity rank `i + 1`.
pub fn build_catalog(cfg: &WorkloadConfig, n_peers: usize, seed: u64) -> Vec<ContentItem> {
    let mut rng = stream_rng(seed, Stream::Catalog);
    let mut peers: Vec<usize> = (0..n_peers).collect();
    peers.shuffle(&mut rng);
    peers
        .into_iter()
        .take(cfg.catalog_size)
        .enumerate()
        .map(|(i, p)| ContentItem::new(ContentId::from(i), PeerId::from(p), cfg.payload_bytes))
        .collect()
}

/// Poisson query arrivals with Zipf content popularity and uniformly chosen
/// requesters, in time order.
pub struct QueryGenerator {
    rng: ChaCha8Rng,
    interarrival_ms: Exp<f64>,
    popularity: Zipf<f64>,
    n_peers: usize,
    now_ms: f64,
    end_ms: f64,
}

impl QueryGenerator {
    pub fn new(cfg: &WorkloadConfig, catalog_len: usize, n_peers: usize, seed: u64) -> Result<Self> {
        let rate_per_ms = cfg.effective_query_rate() / 1000.0;
        Ok(Self {
            rng: stream_rng(seed, Stream::Workload),
            interarrival_ms: Exp::new(rate_per_ms)
                .map_err(|e| Error::config(format!("workload rate: {e}")))?,
            popularity: Zipf::new(catalog_len as f64, cfg.zipf_s)
                .map_err(|e| Error::config(format!("workload.zipf_s: {e}")))?,
            n_peers,
            now_ms: 0.0,
            end_ms: cfg.duration_s * 1000.0,
        })
    }
}

impl Iterator for QueryGenerator {
    type Item = QueryRecord;

    fn next(&mut self) -> Option<QueryRecord> {
        self.now_ms += self.interarrival_ms.sample(&mut self.rng);
        if self.now_ms >= self.end_ms {
            return None;
        }
        let rank = self.popularity.sample(&mut self.rng) as usize;
        let nid = self.rng.random_range(0..self.n_peers);
        Some(QueryRecord {
            nid: PeerId::from(nid),
            ckwd: ContentId::from(rank - 1),
            time: self.now_ms,
        })
    }
}

pub fn generate_queries(
    cfg: &WorkloadConfig,
    catalog: &[ContentItem],
    n_peers: usize,
    seed: u64,
) -> Result<QueryGenerator> {
    if catalog.is_empty() {
        return Err(Error::config("empty catalog"));
    }
    QueryGenerator::new(cfg, catalog.len(), n_peers, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_has_distinct_origins() {
        let cfg = WorkloadConfig { catalog_size: 30, ..WorkloadConfig::default() };
        let cat = build_catalog(&cfg, 50, 4);
        assert_eq!(cat.len(), 30);
        let mut origins: Vec<_> = cat.iter().map(|i| i.origin_peer).collect();
        origins.sort();
        origins.dedup();
        assert_eq!(origins.len(), 30);
        assert!(cat.iter().all(|i| i.size == cfg.payload_bytes));
    }

    #[test]
    fn arrivals_are_ordered_and_bounded() {
        let cfg = WorkloadConfig { duration_s: 3.0, warmup_s: 0.0, ..WorkloadConfig::default() };
        let cat = build_catalog(&cfg, 100, 1);
        let qs: Vec<_> = generate_queries(&cfg, &cat, 100, 1).unwrap().collect();
        assert!(qs.windows(2).all(|w| w[0].time <= w[1].time));
        assert!(qs.iter().all(|q| q.time < 3000.0 && q.ckwd.index() < 100 && q.nid.index() < 100));
    }

    #[test]
    fn offered_load_converts_to_rate() {
        let cfg = WorkloadConfig {
            offered_load_bps: Some(800_000.0),
            payload_bytes: 1000,
            ..WorkloadConfig::default()
        };
        assert_eq!(cfg.effective_query_rate(), 100.0);
    }

    #[test]
    fn validation_names_both_fields() {
        let cfg = WorkloadConfig { duration_s: 2.0, warmup_s: 2.0, ..WorkloadConfig::default() };
        let msg = cfg.validate(100).unwrap_err().to_string();
        assert!(msg.contains("duration_s") && msg.contains("warmup_s"), "{msg}");
        let cfg = WorkloadConfig { catalog_size: 101, ..WorkloadConfig::default() };
        assert!(cfg.validate(100).is_err());
    }
}
