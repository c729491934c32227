//! Scenario files.
//!
//! A scenario is a TOML document with one table per subsystem. Every key is
//! optional and falls back to its default; unknown keys are rejected.
//!
//! ```toml
//! seed = 7
//! lb_enabled = true
//!
//! [topology]
//! n_peers = 50
//! up_bps = { min = 128000, max = 1024000 }
//!
//! [workload]
//! payload_bytes = 1500
//! duration_s = 12
//!
//! [sweep]
//! param = "payload_bytes"
//! values = [250, 500, 1000]
//! seeds = [1, 2, 3]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::balancing::BalancingConfig;
use crate::clustering::{ClusterAssignment, ClusteringConfig};
use crate::placement::PlacementConfig;
use crate::simkernel::{AuditLevel, SimConfig, WorkloadConfig};
use crate::topology::{build_topology, Topology, TopologyConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub lb_enabled: bool,
    pub audit: AuditLevel,
    pub record_load_ticks: bool,
    pub topology: TopologyConfig,
    pub clustering: ClusteringConfig,
    pub placement: PlacementConfig,
    pub balancing: BalancingConfig,
    pub workload: WorkloadConfig,
    pub sweep: Option<SweepSpec>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            lb_enabled: true,
            audit: AuditLevel::Moves,
            record_load_ticks: false,
            topology: TopologyConfig::default(),
            clustering: ClusteringConfig::default(),
            placement: PlacementConfig::default(),
            balancing: BalancingConfig::default(),
            workload: WorkloadConfig::default(),
            sweep: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub param: String,
    pub values: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    (1..=5).collect()
}

/// Numeric fields a sweep may vary, as dotted paths.
pub const SWEEPABLE: &[&str] = &[
    "workload.payload_bytes",
    "workload.query_rate",
    "workload.offered_load_bps",
    "workload.zipf_s",
    "workload.duration_s",
    "workload.warmup_s",
    "workload.churn_rate",
    "workload.mean_downtime_s",
    "workload.catalog_size",
    "workload.service_ms",
    "topology.n_peers",
    "topology.replica_slots",
    "topology.service_queue_cap",
    "topology.down_up_ratio",
    "clustering.beta_weight",
    "clustering.max_cluster_size",
    "placement.a_min",
    "placement.copies_class1",
    "placement.copies_class2",
    "balancing.s_th",
    "balancing.load_diff_threshold",
    "balancing.alpha_cleanup",
    "balancing.report_period_ms",
    "balancing.cleanup_period_ms",
    "balancing.imbalance_fraction",
    "balancing.departure_prob_threshold",
    "balancing.inter_hot_items",
];

/// Resolves a parameter name to its dotted path. Bare field names are
/// accepted when they are unambiguous.
pub fn resolve_param(name: &str) -> Result<&'static str> {
    if let Some(p) = SWEEPABLE.iter().find(|p| **p == name) {
        return Ok(p);
    }
    let hits: Vec<&'static str> = SWEEPABLE
        .iter()
        .copied()
        .filter(|p| p.rsplit('.').next() == Some(name))
        .collect();
    match hits.as_slice() {
        [one] => Ok(one),
        [] => Err(Error::config(format!(
            "unknown sweep parameter {name:?}; expected one of {}",
            SWEEPABLE.join(", ")
        ))),
        _ => Err(Error::config(format!("ambiguous sweep parameter {name:?}"))),
    }
}

fn to_count(path: &str, v: f64) -> Result<u64> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u64::MAX as f64 {
        Ok(v as u64)
    } else {
        Err(Error::config(format!("{path} needs a non-negative integer, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        self.clustering.validate()?;
        self.sim_config().validate(self.topology.n_peers)?;
        if let Some(s) = &self.sweep {
            resolve_param(&s.param)?;
            if s.values.is_empty() {
                return Err(Error::config("sweep.values must not be empty"));
            }
            if s.seeds.is_empty() {
                return Err(Error::config("sweep.seeds must not be empty"));
            }
            for &v in &s.values {
                let mut probe = self.clone();
                probe.sweep = None;
                probe.set_param(&s.param, v)?;
                probe.validate()?;
            }
        }
        Ok(())
    }

    /// Overwrites one numeric field. Does not re-validate.
    pub fn set_param(&mut self, name: &str, v: f64) -> Result<()> {
        let path = resolve_param(name)?;
        let (w, t, c, p, b) = (
            &mut self.workload,
            &mut self.topology,
            &mut self.clustering,
            &mut self.placement,
            &mut self.balancing,
        );
        match path {
            "workload.payload_bytes" => w.payload_bytes = to_count(path, v)?,
            "workload.query_rate" => w.query_rate = v,
            "workload.offered_load_bps" => w.offered_load_bps = Some(v),
            "workload.zipf_s" => w.zipf_s = v,
            "workload.duration_s" => w.duration_s = v,
            "workload.warmup_s" => w.warmup_s = v,
            "workload.churn_rate" => w.churn_rate = v,
            "workload.mean_downtime_s" => w.mean_downtime_s = v,
            "workload.catalog_size" => w.catalog_size = to_count(path, v)? as usize,
            "workload.service_ms" => w.service_ms = v,
            "topology.n_peers" => t.n_peers = to_count(path, v)? as usize,
            "topology.replica_slots" => t.replica_slots = to_count(path, v)? as usize,
            "topology.service_queue_cap" => t.service_queue_cap = to_count(path, v)? as usize,
            "topology.down_up_ratio" => t.down_up_ratio = v,
            "clustering.beta_weight" => c.beta_weight = Some(v),
            "clustering.max_cluster_size" => c.max_cluster_size = to_count(path, v)? as usize,
            "placement.a_min" => p.a_min = to_count(path, v)?,
            "placement.copies_class1" => p.copies_class1 = to_count(path, v)? as usize,
            "placement.copies_class2" => p.copies_class2 = to_count(path, v)? as usize,
            "balancing.s_th" => b.s_th = to_count(path, v)?,
            "balancing.load_diff_threshold" => b.load_diff_threshold = to_count(path, v)?,
            "balancing.alpha_cleanup" => b.alpha_cleanup = to_count(path, v)?,
            "balancing.report_period_ms" => b.report_period_ms = v,
            "balancing.cleanup_period_ms" => b.cleanup_period_ms = v,
            "balancing.imbalance_fraction" => b.imbalance_fraction = v,
            "balancing.departure_prob_threshold" => b.departure_prob_threshold = v,
            "balancing.inter_hot_items" => b.inter_hot_items = to_count(path, v)? as usize,
            _ => unreachable!("every sweepable path is handled"),
        }
        Ok(())
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            placement: self.placement.clone(),
            balancing: self.balancing.clone(),
            workload: self.workload.clone(),
            audit: self.audit,
            record_load_ticks: self.record_load_ticks,
        }
    }

    /// Builds the topology and clusters for `seed`.
    pub fn build(&self, seed: u64) -> Result<(Topology, ClusterAssignment)> {
        let topology = build_topology(&self.topology, seed)?;
        let clusters = ClusterAssignment::build(&topology, &self.clustering)?;
        Ok((topology, clusters))
    }
}
