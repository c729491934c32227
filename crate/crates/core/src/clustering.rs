//! Node weights, the strong/weak partition and bounded-size clusters.
//!
//! A node's weight is `(BW + SP + MZ) / AL` over its normalised bandwidth,
//! CPU speed, memory size and access latency. Peers whose weight reaches the
//! threshold form the strong set, the rest the weak set. Each set is chunked
//! in weight order into clusters of at most `max_cluster_size` peers, and the
//! heaviest member of a cluster leads it.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::topology::Topology;
use crate::{ClusterId, Error, PeerId, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeWeight {
    pub peer: PeerId,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClusterLabel {
    #[serde(rename = "S")]
    Strong,
    #[serde(rename = "W")]
    Weak,
}

impl fmt::Display for ClusterLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClusterLabel::Strong => "S",
            ClusterLabel::Weak => "W",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub strong: Vec<PeerId>,
    pub weak: Vec<PeerId>,
    /// All weights, heaviest first, ties by ascending peer id.
    pub weight_vector: Vec<NodeWeight>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: ClusterId,
    pub label: ClusterLabel,
    pub members: Vec<PeerId>,
    pub leader: PeerId,
    pub neighbors: Vec<ClusterId>,
}

/// Clustering threshold. `None` means the median of the fleet's weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub beta_weight: Option<f64>,
    pub max_cluster_size: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            beta_weight: None,
            max_cluster_size: 10,
        }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.beta_weight {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::config(format!(
                    "clustering.beta_weight must be positive, got {b}"
                )));
            }
        }
        if self.max_cluster_size == 0 {
            return Err(Error::config("clustering.max_cluster_size must be at least 1"));
        }
        Ok(())
    }
}

pub fn compute_weight(bw: f64, sp: f64, mz: f64, al: f64) -> Result<f64> {
    if !(al > 0.0) {
        return Err(Error::domain(format!(
            "access latency must be positive, got {al}"
        )));
    }
    Ok((bw + sp + mz) / al)
}

pub fn node_weights(topology: &Topology) -> Result<Vec<NodeWeight>> {
    topology
        .peers()
        .iter()
        .map(|p| {
            Ok(NodeWeight {
                peer: p.id,
                value: compute_weight(p.up_bw, p.cpu, p.mem, p.access_latency)?,
            })
        })
        .collect()
}

fn heaviest_first(a: &NodeWeight, b: &NodeWeight) -> Ordering {
    b.value.total_cmp(&a.value).then(a.peer.cmp(&b.peer))
}

/// Median weight: the middle value, or the mean of the two middle values.
pub fn median_weight(weights: &[NodeWeight]) -> Option<f64> {
    if weights.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = weights.iter().map(|w| w.value).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Splits peers at `beta`: weight `>= beta` is strong. Input order does not matter.
pub fn partition_nodes(weights: &[NodeWeight], beta: f64) -> Partition {
    let mut weight_vector = weights.to_vec();
    weight_vector.sort_by(heaviest_first);
    let (strong, weak): (Vec<&NodeWeight>, Vec<&NodeWeight>) =
        weight_vector.iter().partition(|w| w.value >= beta);
    Partition {
        strong: strong.into_iter().map(|w| w.peer).collect(),
        weak: weak.into_iter().map(|w| w.peer).collect(),
        weight_vector,
    }
}

/// Highest-weight member, ties to the lowest peer id.
pub fn elect_leader(members: &[PeerId], weights: &[NodeWeight]) -> Result<PeerId> {
    let mut best: Option<NodeWeight> = None;
    for &m in members {
        let w = weights
            .iter()
            .find(|w| w.peer == m)
            .copied()
            .ok_or_else(|| Error::domain(format!("no weight known for {m}")))?;
        best = match best {
            Some(b) if heaviest_first(&b, &w) != Ordering::Greater => Some(b),
            _ => Some(w),
        };
    }
    best.map(|w| w.peer)
        .ok_or_else(|| Error::domain("cannot elect a leader for an empty cluster"))
}

/// Chunks the strong then the weak set, in weight order, into clusters. Ids
/// are assigned consecutively, strong clusters first. Every cluster
/// neighbours all other clusters with the same label.
pub fn form_clusters(p: &Partition, max_cluster_size: usize) -> Result<Vec<Cluster>> {
    if max_cluster_size == 0 {
        return Err(Error::domain("max_cluster_size must be at least 1"));
    }
    let mut clusters = Vec::new();
    for (label, set) in [(ClusterLabel::Strong, &p.strong), (ClusterLabel::Weak, &p.weak)] {
        let first = clusters.len();
        for chunk in set.chunks(max_cluster_size) {
            clusters.push(Cluster {
                id: ClusterId::from(clusters.len()),
                label,
                members: chunk.to_vec(),
                leader: elect_leader(chunk, &p.weight_vector)?,
                neighbors: Vec::new(),
            });
        }
        let ids: Vec<ClusterId> = clusters[first..].iter().map(|c| c.id).collect();
        for c in &mut clusters[first..] {
            c.neighbors = ids.iter().copied().filter(|&id| id != c.id).collect();
        }
    }
    Ok(clusters)
}

/// The clustering of a whole topology together with per-peer lookups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub beta_weight: f64,
    pub partition: Partition,
    pub clusters: Vec<Cluster>,
    /// Weight of each peer, indexed by peer id.
    pub weights: Vec<f64>,
    /// Cluster of each peer, indexed by peer id.
    pub cluster_of: Vec<ClusterId>,
}

impl ClusterAssignment {
    pub fn build(topology: &Topology, cfg: &ClusteringConfig) -> Result<Self> {
        cfg.validate()?;
        let nw = node_weights(topology)?;
        let beta = match cfg.beta_weight {
            Some(b) => b,
            None => median_weight(&nw).ok_or_else(|| Error::config("empty topology"))?,
        };
        let partition = partition_nodes(&nw, beta);
        let clusters = form_clusters(&partition, cfg.max_cluster_size)?;
        let mut cluster_of = vec![ClusterId(0); topology.len()];
        for c in &clusters {
            for m in &c.members {
                cluster_of[m.index()] = c.id;
            }
        }
        Ok(Self {
            beta_weight: beta,
            partition,
            clusters,
            weights: nw.iter().map(|w| w.value).collect(),
            cluster_of,
        })
    }

    pub fn cluster(&self, id: ClusterId) -> &Cluster {
        &self.clusters[id.index()]
    }

    pub fn cluster_of(&self, peer: PeerId) -> &Cluster {
        self.cluster(self.cluster_of[peer.index()])
    }

    pub fn label_of(&self, peer: PeerId) -> ClusterLabel {
        self.cluster_of(peer).label
    }

    pub fn weight(&self, peer: PeerId) -> f64 {
        self.weights[peer.index()]
    }
}
