//! Experiment orchestration: single runs, WithLB/WithoutLB sweeps over seed
//! batches, comparison tables, plot data and post-placement state dumps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{Cluster, ClusterLabel};
use crate::config::{resolve_param, ScenarioConfig};
use crate::placement::{ContentClass, ContentItem, CopyKind, ReplicaMap, ReplicationAnnouncement};
use crate::simkernel::{run_scenario, MetricsReport, ScenarioRun, Simulator};
use crate::topology::Topology;
use crate::{ClusterId, ContentId, Error, PeerId, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    WithLb,
    WithoutLb,
}

impl Arm {
    pub fn lb_enabled(self) -> bool {
        self == Arm::WithLb
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::WithLb => "with_lb",
            Arm::WithoutLb => "without_lb",
        })
    }
}

/// One scenario with the configuration's own seed and arm.
pub fn run(cfg: &ScenarioConfig) -> Result<ScenarioRun> {
    run_seed(cfg, cfg.seed, cfg.lb_enabled)
}

pub fn run_seed(cfg: &ScenarioConfig, seed: u64, lb_enabled: bool) -> Result<ScenarioRun> {
    let (topology, clusters) = cfg.build(seed)?;
    run_scenario(&topology, &clusters, &cfg.sim_config(), lb_enabled, seed)
}

/// Mean and sample standard deviation of one arm over a seed batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub n_seeds: usize,
    pub mean_delay_ms: f64,
    pub delay_std_ms: f64,
    pub throughput_bps: f64,
    pub throughput_std_bps: f64,
    pub packets_lost: f64,
    pub loss_std: f64,
    pub requests_total: f64,
    /// Mean over seeds of lost / total.
    pub loss_fraction: f64,
    pub runs: Vec<MetricsReport>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl ArmStats {
    pub fn from_runs(runs: Vec<MetricsReport>) -> Self {
        let col = |f: fn(&MetricsReport) -> f64| runs.iter().map(f).collect::<Vec<_>>();
        let (mean_delay_ms, delay_std_ms) = mean_std(&col(|m| m.mean_delay_ms));
        let (throughput_bps, throughput_std_bps) = mean_std(&col(|m| m.aggregate_throughput_bps));
        let (packets_lost, loss_std) = mean_std(&col(|m| m.packets_lost as f64));
        let (requests_total, _) = mean_std(&col(|m| m.requests_total as f64));
        let (loss_fraction, _) = mean_std(&col(|m| m.loss_fraction()));
        Self {
            n_seeds: runs.len(),
            mean_delay_ms,
            delay_std_ms,
            throughput_bps,
            throughput_std_bps,
            packets_lost,
            loss_std,
            requests_total,
            loss_fraction,
            runs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub value: f64,
    /// Seeds consumed by both arms.
    pub seeds: Vec<u64>,
    pub with_lb: ArmStats,
    pub without_lb: ArmStats,
}

impl ComparisonRow {
    pub fn arm(&self, arm: Arm) -> &ArmStats {
        match arm {
            Arm::WithLb => &self.with_lb,
            Arm::WithoutLb => &self.without_lb,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub param: String,
    pub rows: Vec<ComparisonRow>,
}

/// Column order of [`ComparisonTable::to_csv`].
pub const CSV_HEADER: &str = "param,value,arm,seeds,n_seeds,mean_delay_ms,delay_std_ms,\
throughput_bps,throughput_std_bps,packets_lost,loss_std,requests_total,loss_fraction";

impl ComparisonTable {
    /// One line per (value, arm), WithLB first. Seeds are `;`-separated.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let seeds: Vec<String> = row.seeds.iter().map(u64::to_string).collect();
            for arm in [Arm::WithLb, Arm::WithoutLb] {
                let s = row.arm(arm);
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    self.param,
                    row.value,
                    arm,
                    seeds.join(";"),
                    s.n_seeds,
                    s.mean_delay_ms,
                    s.delay_std_ms,
                    s.throughput_bps,
                    s.throughput_std_bps,
                    s.packets_lost,
                    s.loss_std,
                    s.requests_total,
                    s.loss_fraction
                )
                .expect("writing to a String");
            }
        }
        out
    }

    /// Whitespace-separated plot data, one file per metric:
    /// `value with_lb with_lb_std without_lb without_lb_std`.
    pub fn plot_data(&self) -> Vec<(&'static str, String)> {
        type Pick = fn(&ArmStats) -> (f64, f64);
        let metrics: [(&str, &str, Pick); 3] = [
            ("delay.dat", "mean_delay_ms", |s| (s.mean_delay_ms, s.delay_std_ms)),
            ("throughput.dat", "throughput_bps", |s| (s.throughput_bps, s.throughput_std_bps)),
            ("loss.dat", "packets_lost", |s| (s.packets_lost, s.loss_std)),
        ];
        metrics
            .iter()
            .map(|&(file, name, pick)| {
                let mut s = format!(
                    "# {} vs {}\n# value with_lb with_lb_std without_lb without_lb_std\n",
                    name, self.param
                );
                for row in &self.rows {
                    let (a, sa) = pick(&row.with_lb);
                    let (b, sb) = pick(&row.without_lb);
                    writeln!(s, "{} {a} {sa} {b} {sb}", row.value).expect("writing to a String");
                }
                (file, s)
            })
            .collect()
    }

    /// Writes the plot data files and a matplotlib script that renders them.
    pub fn write_plots(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (file, body) in self.plot_data() {
            let p = dir.join(file);
            std::fs::write(&p, body)?;
            written.push(p);
        }
        let p = dir.join("plot.py");
        std::fs::write(&p, plot_script(&self.param))?;
        written.push(p);
        Ok(written)
    }
}

fn plot_script(param: &str) -> String {
    format!(
        r#"#!/usr/bin/env python3
import os
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

here = os.path.dirname(os.path.abspath(__file__))
for name, label in [("delay", "mean delay (ms)"), ("throughput", "throughput (bit/s)"), ("loss", "packets lost")]:
    d = np.atleast_2d(np.loadtxt(os.path.join(here, name + ".dat")))
    fig, ax = plt.subplots()
    ax.errorbar(d[:, 0], d[:, 1], yerr=d[:, 2], marker="o", capsize=3, label="WithLB")
    ax.errorbar(d[:, 0], d[:, 3], yerr=d[:, 4], marker="s", capsize=3, label="WithoutLB")
    ax.set_xlabel("{param}")
    ax.set_ylabel(label)
    ax.legend()
    fig.savefig(os.path.join(here, name + ".png"), dpi=120, bbox_inches="tight")
"#
    )
}

/// A sweep that stopped early. `partial` holds the rows finished before
/// the first failing value, or `None` when nothing ran.
#[derive(Debug)]
pub struct SweepError {
    pub partial: Option<ComparisonTable>,
    pub error: Error,
}

impl fmt::Display for SweepError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sweep failed: {}", self.error)
    }
}

impl std::error::Error for SweepError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for SweepError {
    fn from(error: Error) -> Self {
        Self { partial: None, error }
    }
}

/// Runs both arms for every (value, seed) pair on up to `threads` worker
/// threads. Output is ordered by value then seed regardless of scheduling.
pub fn sweep(
    base: &ScenarioConfig,
    param: &str,
    values: &[f64],
    seeds: &[u64],
    threads: usize,
) -> std::result::Result<ComparisonTable, SweepError> {
    let path = resolve_param(param)?;
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value").into());
    }
    if seeds.is_empty() {
        return Err(Error::config("sweep needs at least one seed").into());
    }
    let mut configs = Vec::with_capacity(values.len());
    for &v in values {
        let mut cfg = base.clone();
        cfg.sweep = None;
        cfg.set_param(path, v)?;
        cfg.validate()?;
        configs.push(cfg);
    }

    let jobs: Vec<(usize, u64)> = (0..values.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let work = |&(i, seed): &(usize, u64)| -> Result<(MetricsReport, MetricsReport)> {
        let cfg = &configs[i];
        let (topology, clusters) = cfg.build(seed)?;
        let sim = cfg.sim_config();
        let with = run_scenario(&topology, &clusters, &sim, true, seed)?;
        let without = run_scenario(&topology, &clusters, &sim, false, seed)?;
        Ok((with.metrics, without.metrics))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::config(format!("cannot start worker threads: {e}")))?;
    let results: Vec<Result<(MetricsReport, MetricsReport)>> =
        pool.install(|| jobs.par_iter().map(work).collect());

    let mut table = ComparisonTable {
        param: path.to_string(),
        rows: Vec::new(),
    };
    let mut results = results.into_iter();
    for &value in values {
        let mut with = Vec::new();
        let mut without = Vec::new();
        for _ in seeds {
            match results.next().expect("one result per job") {
                Ok((a, b)) => {
                    with.push(a);
                    without.push(b);
                }
                Err(error) => {
                    let partial = (!table.rows.is_empty()).then_some(table);
                    return Err(SweepError { partial, error });
                }
            }
        }
        table.rows.push(ComparisonRow {
            value,
            seeds: seeds.to_vec(),
            with_lb: ArmStats::from_runs(with),
            without_lb: ArmStats::from_runs(without),
        });
    }
    Ok(table)
}

/// Per-peer view of the clustering in a dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeerSummary {
    pub peer: PeerId,
    pub cluster: ClusterId,
    pub label: ClusterLabel,
    pub leader: PeerId,
    pub weight: f64,
    pub online: bool,
}

/// System state once initial placement has settled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateDump {
    pub seed: u64,
    pub time_ms: f64,
    pub beta_weight: f64,
    pub topology: Topology,
    pub clusters: Vec<Cluster>,
    pub peers: Vec<PeerSummary>,
    pub catalog: Vec<ContentItem>,
    pub class_map: BTreeMap<ContentId, ContentClass>,
    pub replica_map: ReplicaMap,
    pub announcements: Vec<ReplicationAnnouncement>,
}

pub fn dump_state(cfg: &ScenarioConfig, seed: u64) -> Result<StateDump> {
    let (topology, clusters) = cfg.build(seed)?;
    let mut sim = Simulator::new(&topology, &clusters, &cfg.sim_config(), cfg.lb_enabled, seed)?;
    sim.run_until_settled()?;
    let peers = (0..topology.len())
        .map(|i| {
            let p = PeerId::from(i);
            let c = clusters.cluster_of(p);
            PeerSummary {
                peer: p,
                cluster: c.id,
                label: c.label,
                leader: c.leader,
                weight: clusters.weight(p),
                online: sim.store().store(p).online,
            }
        })
        .collect();
    Ok(StateDump {
        seed,
        time_ms: sim.now(),
        beta_weight: clusters.beta_weight,
        topology: topology.clone(),
        clusters: clusters.clusters.clone(),
        peers,
        catalog: sim.catalog().to_vec(),
        class_map: sim.plan().class_map.clone(),
        replica_map: sim.store().clone(),
        announcements: sim.announcements().to_vec(),
    })
}

/// Re-checks the placement invariants on a dump without trusting the code
/// that produced it. Returns one message per violation.
pub fn validate_dump(d: &StateDump) -> Vec<String> {
    let mut bad = Vec::new();
    let n = d.topology.len();

    if d.peers.len() != n || d.peers.iter().enumerate().any(|(i, s)| s.peer.index() != i) {
        bad.push(format!("peer list does not list peers 0..{n} once each in order"));
    }
    let mut seen = BTreeMap::new();
    for c in &d.clusters {
        for &m in &c.members {
            if let Some(prev) = seen.insert(m, c.id) {
                bad.push(format!("{m} is in both {prev} and {}", c.id));
            }
        }
        if !c.members.contains(&c.leader) {
            bad.push(format!("leader {} of {} is not a member", c.leader, c.id));
        }
    }
    if seen.len() != n {
        bad.push(format!("clusters cover {} of {n} peers", seen.len()));
    }
    let label: BTreeMap<PeerId, ClusterLabel> = d.peers.iter().map(|s| (s.peer, s.label)).collect();
    for s in &d.peers {
        if seen.get(&s.peer) != Some(&s.cluster) {
            bad.push(format!("{} summary names the wrong cluster", s.peer));
        }
    }

    let stores = d.replica_map.stores();
    if stores.len() != n {
        bad.push(format!("replica map has {} stores for {n} peers", stores.len()));
    }
    for item in &d.catalog {
        let ok = stores
            .get(item.origin_peer.index())
            .and_then(|s| s.copy(item.id))
            .is_some_and(|c| c.kind == CopyKind::Origin);
        if !ok {
            bad.push(format!("origin copy of {} missing at {}", item.id, item.origin_peer));
        }
    }
    for s in stores {
        let used: u64 = s.copies().map(|c| c.size).sum();
        if used + s.disk_free != s.disk_capacity {
            bad.push(format!(
                "{}: used {used} + free {} != capacity {}",
                s.peer, s.disk_free, s.disk_capacity
            ));
        }
        if s.replica_count() > s.replica_slots {
            bad.push(format!("{}: {} replicas exceed {} slots", s.peer, s.replica_count(), s.replica_slots));
        }
        for c in s.copies().filter(|c| c.kind == CopyKind::Replica) {
            let want = match d.class_map.get(&c.content) {
                Some(ContentClass::Class1) => ClusterLabel::Strong,
                Some(ContentClass::Class2) => ClusterLabel::Weak,
                _ => {
                    bad.push(format!("{}: replica of unclassified {}", s.peer, c.content));
                    continue;
                }
            };
            if label.get(&s.peer) != Some(&want) {
                bad.push(format!(
                    "{}: replica of {} ({:?}) on a {:?} peer",
                    s.peer,
                    c.content,
                    d.class_map[&c.content],
                    label.get(&s.peer)
                ));
            }
        }
    }

    let mut announced = BTreeSet::new();
    for a in &d.announcements {
        if !announced.insert(a.nid) {
            bad.push(format!("{} announced twice", a.nid));
        }
        if label.get(&a.nid) != Some(&a.clid) {
            bad.push(format!("{} announced with label {}", a.nid, a.clid));
        }
        let Some(s) = stores.get(a.nid.index()) else {
            bad.push(format!("announcement for unknown {}", a.nid));
            continue;
        };
        let held: BTreeSet<ContentId> = s.copies().map(|c| c.content).collect();
        let listed: BTreeSet<ContentId> = a.contents.iter().copied().collect();
        if held != listed {
            bad.push(format!("{} announcement {:?} differs from holdings {:?}", a.nid, listed, held));
        }
    }
    for s in stores {
        if s.replica_count() > 0 && !announced.contains(&s.peer) {
            bad.push(format!("{} hosts replicas but sent no announcement", s.peer));
        }
    }
    bad
}
