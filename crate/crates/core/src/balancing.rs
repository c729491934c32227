//! Load balancing through replication.
//!
//! All decision functions here are pure: they read snapshots (load reports,
//! hot-item lists, member views) and return [`ReplicationMove`]s. The
//! simulation kernel applies the moves. Moves always copy; the source keeps
//! its item.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::placement::{CopyKind, PeerStore};
use crate::{ClusterId, ContentId, Error, PeerId, Result};

/// What a peer sends its cluster leader each report period.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub peer: PeerId,
    /// Request bytes served during the period.
    pub load: u64,
    pub disk_free: u64,
    pub free_slots: usize,
}

impl LoadReport {
    fn fits(&self, size: u64) -> bool {
        self.disk_free >= size && self.free_slots > 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HotItem {
    pub content: ContentId,
    pub accesses: u64,
    pub size: u64,
}

/// Items ordered hottest first (`H_1` at the front), ties by content id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HotItemList {
    items: Vec<HotItem>,
}

impl HotItemList {
    pub fn new(mut items: Vec<HotItem>) -> Self {
        items.sort_by(|a, b| b.accesses.cmp(&a.accesses).then(a.content.cmp(&b.content)));
        Self { items }
    }

    pub fn items(&self) -> &[HotItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn hottest(&self) -> Option<&HotItem> {
        self.items.first()
    }

    pub fn contains(&self, c: ContentId) -> bool {
        self.items.iter().any(|h| h.content == c)
    }

    /// The first `m` items that were accessed at all.
    pub fn top_accessed(&self, m: usize) -> HotItemList {
        Self {
            items: self.items.iter().filter(|h| h.accesses > 0).take(m).copied().collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalancingConfig {
    /// Minimum free disk (bytes) for a light peer to stay a candidate target.
    pub s_th: u64,
    /// Intra-cluster pairs replicate only when their load gap exceeds this (bytes).
    pub load_diff_threshold: u64,
    /// Replicas accessed fewer times than this in a cleanup interval are deleted.
    pub alpha_cleanup: u64,
    pub report_period_ms: f64,
    pub cleanup_period_ms: f64,
    /// A cluster sheds load when it exceeds its neighbours' average by more than this fraction.
    pub imbalance_fraction: f64,
    pub departure_prob_threshold: f64,
    /// Smoothing weight of the per-period offline fraction in the departure estimate.
    pub departure_ewma: f64,
    /// Number of hot items an overloaded cluster offers to its neighbours.
    pub inter_hot_items: usize,
}

impl Default for BalancingConfig {
    fn default() -> Self {
        Self {
            s_th: 4096,
            load_diff_threshold: 2000,
            alpha_cleanup: 1,
            report_period_ms: 1000.0,
            cleanup_period_ms: 5000.0,
            imbalance_fraction: 0.10,
            departure_prob_threshold: 0.3,
            departure_ewma: 0.2,
            inter_hot_items: 3,
        }
    }
}

impl BalancingConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("balancing.s_th", self.s_th as f64),
            ("balancing.load_diff_threshold", self.load_diff_threshold as f64),
            ("balancing.alpha_cleanup", self.alpha_cleanup as f64),
            ("balancing.report_period_ms", self.report_period_ms),
            ("balancing.cleanup_period_ms", self.cleanup_period_ms),
            ("balancing.departure_prob_threshold", self.departure_prob_threshold),
            ("balancing.departure_ewma", self.departure_ewma),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.imbalance_fraction > 0.0 && self.imbalance_fraction < 1.0) {
            return Err(Error::config(format!(
                "balancing.imbalance_fraction must lie in (0, 1), got {}",
                self.imbalance_fraction
            )));
        }
        if self.departure_ewma > 1.0 {
            return Err(Error::config("balancing.departure_ewma must not exceed 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoveReason {
    IntraBalance,
    InterBalance,
    Availability,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationMove {
    pub item: ContentId,
    pub source: PeerId,
    pub target: PeerId,
    pub reason: MoveReason,
    pub size: u64,
    /// Load that triggered the move: the source peer's, or the cluster's for inter moves.
    pub source_load: f64,
    /// Load it was compared against: the target's, or the neighbour average.
    pub reference_load: f64,
}

/// Deletes every replica whose window access count fell below `alpha` and
/// resets all window counters. Origin copies, replicas still in transfer and
/// replicas that have not yet lived through a whole interval are kept.
pub fn cleanup_replicas(store: &mut PeerStore, alpha: u64) -> Vec<ContentId> {
    let doomed: Vec<ContentId> = store
        .copies()
        .filter(|cp| cp.kind == CopyKind::Replica && cp.ready && !cp.grace && cp.window_hits < alpha)
        .map(|cp| cp.content)
        .collect();
    for &c in &doomed {
        store.remove_replica(c);
    }
    let all: Vec<ContentId> = store.copies().map(|cp| cp.content).collect();
    for c in all {
        if let Some(cp) = store.copy_mut(c) {
            cp.window_hits = 0;
            if cp.ready {
                cp.grace = false;
            }
        }
    }
    doomed
}

pub fn compute_cluster_load(reports: &[LoadReport]) -> u64 {
    reports.iter().map(|r| r.load).sum()
}

/// Exponentially weighted offline fraction.
pub fn update_departure_estimate(prev: f64, offline_fraction: f64, weight: f64) -> f64 {
    (1.0 - weight) * prev + weight * offline_fraction.clamp(0.0, 1.0)
}

/// A cluster member as seen by its leader.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberView {
    pub report: LoadReport,
    pub departure_prob: f64,
    /// Items the member can serve now.
    pub serving: BTreeSet<ContentId>,
    /// Items reserved for an in-flight transfer.
    pub pending: BTreeSet<ContentId>,
}

impl MemberView {
    pub fn peer(&self) -> PeerId {
        self.report.peer
    }

    pub fn has(&self, c: ContentId) -> bool {
        self.serving.contains(&c) || self.pending.contains(&c)
    }
}

/// Replicates hot items away from members likely to leave.
///
/// For each member whose departure probability reaches the threshold (in
/// peer id order), every hot item it serves that no other member holds is
/// copied to the least-loaded other member with room.
pub fn availability_replicate(
    members: &[MemberView],
    hot: &HotItemList,
    cfg: &BalancingConfig,
) -> Vec<ReplicationMove> {
    let mut members: Vec<MemberView> = members.to_vec();
    members.sort_by_key(|m| m.peer());
    let mut moves = Vec::new();
    for i in 0..members.len() {
        if members[i].departure_prob < cfg.departure_prob_threshold {
            continue;
        }
        for h in hot.items() {
            if !members[i].serving.contains(&h.content) {
                continue;
            }
            let covered = members
                .iter()
                .enumerate()
                .any(|(j, m)| j != i && m.has(h.content));
            if covered {
                continue;
            }
            let target = members
                .iter()
                .enumerate()
                .filter(|&(j, m)| j != i && m.report.fits(h.size))
                .min_by(|(_, a), (_, b)| {
                    a.report.load.cmp(&b.report.load).then(a.peer().cmp(&b.peer()))
                })
                .map(|(j, _)| j);
            let Some(j) = target else { continue };
            moves.push(ReplicationMove {
                item: h.content,
                source: members[i].peer(),
                target: members[j].peer(),
                reason: MoveReason::Availability,
                size: h.size,
                source_load: members[i].report.load as f64,
                reference_load: members[j].report.load as f64,
            });
            let t = &mut members[j];
            t.pending.insert(h.content);
            t.report.disk_free -= h.size;
            t.report.free_slots -= 1;
        }
    }
    moves
}

/// Intra-cluster balancing.
///
/// 1. Sort members by load, heaviest first (ties by peer id).
/// 2. Drop peers with `disk_free < s_th` from the lighter `floor(n/2)`.
/// 3. Pair the survivors first with last, second with second-last, and so on.
/// 4. For each pair whose load gap exceeds `load_diff_threshold`, copy the
///    heavy peer's hottest accessed item that the light peer lacks and can
///    hold. A light peer below `s_th` is never a target.
///
/// `hot_per_peer` must list every item a peer holds, pending ones included.
pub fn intra_cluster_balance(
    reports: &[LoadReport],
    hot_per_peer: &BTreeMap<PeerId, HotItemList>,
    cfg: &BalancingConfig,
) -> Vec<ReplicationMove> {
    let mut list: Vec<LoadReport> = reports.to_vec();
    list.sort_by(|a, b| b.load.cmp(&a.load).then(a.peer.cmp(&b.peer)));
    let n = list.len();
    if n < 2 {
        return Vec::new();
    }
    let lighter_half_start = n - n / 2;
    let survivors: Vec<LoadReport> = list
        .iter()
        .enumerate()
        .filter(|&(i, r)| i < lighter_half_start || r.disk_free >= cfg.s_th)
        .map(|(_, r)| *r)
        .collect();

    let empty = HotItemList::default();
    let k = survivors.len();
    let mut moves = Vec::new();
    for i in 0..k / 2 {
        let heavy = survivors[i];
        let light = survivors[k - 1 - i];
        if heavy.load - light.load <= cfg.load_diff_threshold || light.disk_free < cfg.s_th {
            continue;
        }
        let have = hot_per_peer.get(&light.peer).unwrap_or(&empty);
        let pick = hot_per_peer
            .get(&heavy.peer)
            .unwrap_or(&empty)
            .items()
            .iter()
            .find(|h| h.accesses > 0 && !have.contains(h.content) && light.fits(h.size));
        if let Some(h) = pick {
            moves.push(ReplicationMove {
                item: h.content,
                source: heavy.peer,
                target: light.peer,
                reason: MoveReason::IntraBalance,
                size: h.size,
                source_load: heavy.load as f64,
                reference_load: light.load as f64,
            });
        }
    }
    moves
}

/// Reports of one neighbouring cluster, as collected by its leader.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborLoad {
    pub cluster: ClusterId,
    pub members: Vec<LoadReport>,
}

/// A willing neighbour leader's answer: totals over its members with enough
/// free space for the smallest offered item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderReply {
    pub cluster: ClusterId,
    pub total_load: u64,
    pub total_space: u64,
    pub willing: Vec<LoadReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InterDecision {
    pub triggered: bool,
    pub cluster_load: u64,
    pub neighbor_avg: f64,
    /// Willing leaders, least loaded first.
    pub replies: Vec<LeaderReply>,
    /// Each offered hot item with the neighbour cluster it goes to.
    pub assignments: Vec<(HotItem, ClusterId)>,
}

/// Inter-cluster balancing for one leader.
///
/// Triggers when the cluster's load exceeds the neighbour average by more
/// than `imbalance_fraction` of that average. Neighbour leaders with at least
/// one member whose free space exceeds the smallest hot item (and who has a
/// free slot) reply with their totals; replies are ordered by total load and
/// hot items are dealt out round-robin, `H_1` to the least loaded.
pub fn inter_cluster_balance(
    cluster_load: u64,
    neighbors: &[NeighborLoad],
    hot: &HotItemList,
    cfg: &BalancingConfig,
) -> InterDecision {
    let mut d = InterDecision {
        cluster_load,
        ..InterDecision::default()
    };
    if neighbors.is_empty() {
        return d;
    }
    let loads: Vec<u64> = neighbors.iter().map(|n| compute_cluster_load(&n.members)).collect();
    let avg = loads.iter().sum::<u64>() as f64 / loads.len() as f64;
    d.neighbor_avg = avg;
    d.triggered = exceeds_average(cluster_load, &loads, cfg.imbalance_fraction);
    if !d.triggered || hot.is_empty() {
        return d;
    }
    let min_size = hot.items().iter().map(|h| h.size).min().unwrap_or(0);
    let mut replies: Vec<LeaderReply> = neighbors
        .iter()
        .filter_map(|n| {
            let willing: Vec<LoadReport> = n
                .members
                .iter()
                .filter(|r| r.disk_free > min_size && r.free_slots > 0)
                .copied()
                .collect();
            (!willing.is_empty()).then(|| LeaderReply {
                cluster: n.cluster,
                total_load: compute_cluster_load(&willing),
                total_space: willing.iter().map(|r| r.disk_free).sum(),
                willing,
            })
        })
        .collect();
    replies.sort_by(|a, b| a.total_load.cmp(&b.total_load).then(a.cluster.cmp(&b.cluster)));
    if !replies.is_empty() {
        d.assignments = hot
            .items()
            .iter()
            .enumerate()
            .map(|(i, h)| (*h, replies[i % replies.len()].cluster))
            .collect();
    }
    d.replies = replies;
    d
}

/// `load - avg > fraction * avg` in exact integer arithmetic, with `fraction`
/// taken to six decimal places.
fn exceeds_average(load: u64, others: &[u64], fraction: f64) -> bool {
    const SCALE: i128 = 1_000_000;
    let r = others.len() as i128;
    let sum: i128 = others.iter().map(|&l| l as i128).sum();
    let f = (fraction * SCALE as f64).round() as i128;
    // multiply both sides by r * SCALE
    (load as i128 * r - sum) * SCALE > f * sum
}

/// Turns an inter-cluster decision into moves. The source of each item is
/// its most loaded holder in the overloaded cluster; the receiving leader
/// places it on its least loaded willing member that lacks it and has room,
/// without exceeding the free space the leader advertised.
pub fn place_inter_assignments(
    decision: &InterDecision,
    own_members: &[MemberView],
    neighbor_members: &BTreeMap<ClusterId, Vec<MemberView>>,
) -> Vec<ReplicationMove> {
    let mut neighbor_members = neighbor_members.clone();
    let mut budget: BTreeMap<ClusterId, u64> =
        decision.replies.iter().map(|r| (r.cluster, r.total_space)).collect();
    let willing: BTreeMap<ClusterId, BTreeSet<PeerId>> = decision
        .replies
        .iter()
        .map(|r| (r.cluster, r.willing.iter().map(|w| w.peer).collect()))
        .collect();
    let mut moves = Vec::new();
    for (h, cluster) in &decision.assignments {
        let Some(source) = own_members
            .iter()
            .filter(|m| m.serving.contains(&h.content))
            .max_by(|a, b| a.report.load.cmp(&b.report.load).then(b.peer().cmp(&a.peer())))
        else {
            continue;
        };
        let left = budget.get(cluster).copied().unwrap_or(0);
        if left < h.size {
            continue;
        }
        let Some(members) = neighbor_members.get_mut(cluster) else {
            continue;
        };
        let ok = willing.get(cluster);
        let Some(target) = members
            .iter_mut()
            .filter(|m| {
                ok.is_some_and(|w| w.contains(&m.peer())) && !m.has(h.content) && m.report.fits(h.size)
            })
            .min_by(|a, b| a.report.load.cmp(&b.report.load).then(a.peer().cmp(&b.peer())))
        else {
            continue;
        };
        moves.push(ReplicationMove {
            item: h.content,
            source: source.peer(),
            target: target.peer(),
            reason: MoveReason::InterBalance,
            size: h.size,
            source_load: decision.cluster_load as f64,
            reference_load: decision.neighbor_avg,
        });
        target.pending.insert(h.content);
        target.report.disk_free -= h.size;
        target.report.free_slots -= 1;
        budget.insert(*cluster, left - h.size);
    }
    moves
}
