//! Replica placement: queries are registered at the query server, content is
//! classified by access count, Class I items are replicated onto strong
//! cluster peers and Class II items onto weak cluster peers, and queries are
//! routed to the closest live holder.
//!
//! Every peer keeps its own origin item for the item's whole lifetime;
//! everything else it stores is a replica bounded by its replica slots and
//! free disk.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterAssignment, ClusterLabel};
use crate::topology::Topology;
use crate::{ClusterId, ContentId, Error, PeerId, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContentClass {
    Class1,
    Class2,
    #[default]
    Unclassified,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContentItem {
    pub id: ContentId,
    pub origin_peer: PeerId,
    pub size: u64,
    pub class_label: ContentClass,
    pub access_count_window: u64,
}

impl ContentItem {
    pub fn new(id: ContentId, origin_peer: PeerId, size: u64) -> Self {
        Self {
            id,
            origin_peer,
            size,
            class_label: ContentClass::Unclassified,
            access_count_window: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub nid: PeerId,
    pub ckwd: ContentId,
    /// Simulation time in ms.
    pub time: f64,
}

/// Registers client queries and keeps per-content access counts for the
/// current classification window.
#[derive(Clone, Debug, Default)]
pub struct QueryServer {
    log: Vec<QueryRecord>,
    counts: BTreeMap<ContentId, u64>,
    cluster_table: BTreeMap<PeerId, (ClusterLabel, ClusterId)>,
}

impl QueryServer {
    pub fn new(catalog: &[ContentItem], clusters: &ClusterAssignment) -> Self {
        let cluster_table = clusters
            .clusters
            .iter()
            .flat_map(|c| c.members.iter().map(move |&m| (m, (c.label, c.id))))
            .collect();
        Self {
            log: Vec::new(),
            counts: catalog.iter().map(|i| (i.id, 0)).collect(),
            cluster_table,
        }
    }

    pub fn register_query(&mut self, q: QueryRecord) -> Result<()> {
        let count = self
            .counts
            .get_mut(&q.ckwd)
            .ok_or(Error::UnknownContent(q.ckwd))?;
        *count += 1;
        self.log.push(q);
        Ok(())
    }

    pub fn log(&self) -> &[QueryRecord] {
        &self.log
    }

    pub fn count(&self, c: ContentId) -> u64 {
        self.counts.get(&c).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<ContentId, u64> {
        &self.counts
    }

    pub fn cluster_entry(&self, p: PeerId) -> Option<(ClusterLabel, ClusterId)> {
        self.cluster_table.get(&p).copied()
    }

    /// Items with a window count of at least `a_min` are Class I, all others
    /// (never-queried included) Class II.
    pub fn classify_content(&self, a_min: u64) -> BTreeMap<ContentId, ContentClass> {
        self.counts
            .iter()
            .map(|(&c, &n)| {
                let class = if n >= a_min {
                    ContentClass::Class1
                } else {
                    ContentClass::Class2
                };
                (c, class)
            })
            .collect()
    }

    /// Starts a new classification window. The query log is kept.
    pub fn reset_window(&mut self) {
        self.counts.values_mut().for_each(|n| *n = 0);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementConfig {
    pub a_min: u64,
    pub copies_class1: usize,
    pub copies_class2: usize,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        Self {
            a_min: 3,
            copies_class1: 3,
            copies_class2: 1,
        }
    }
}

impl PlacementConfig {
    pub fn validate(&self) -> Result<()> {
        if self.a_min < 1 {
            return Err(Error::config("placement.a_min must be at least 1"));
        }
        if self.copies_class1 < self.copies_class2 {
            return Err(Error::config(format!(
                "placement.copies_class1 ({}) must be >= placement.copies_class2 ({})",
                self.copies_class1, self.copies_class2
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CopyKind {
    Origin,
    Replica,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredCopy {
    pub content: ContentId,
    pub kind: CopyKind,
    pub size: u64,
    /// False while the replica is still being transferred.
    pub ready: bool,
    /// Weight of the hosting node, stored with the content.
    pub host_weight: f64,
    /// Accesses since the last cleanup.
    pub window_hits: u64,
    /// Accesses since the last load report.
    pub period_hits: u64,
    /// Set until the copy has lived through one full cleanup interval.
    pub grace: bool,
    #[serde(skip)]
    ticket: Option<u64>,
}

/// Storage state of one peer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeerStore {
    pub peer: PeerId,
    pub online: bool,
    pub disk_capacity: u64,
    pub disk_free: u64,
    pub replica_slots: usize,
    copies: BTreeMap<ContentId, StoredCopy>,
}

impl PeerStore {
    pub fn copies(&self) -> impl Iterator<Item = &StoredCopy> {
        self.copies.values()
    }

    pub fn copy(&self, c: ContentId) -> Option<&StoredCopy> {
        self.copies.get(&c)
    }

    pub fn copy_mut(&mut self, c: ContentId) -> Option<&mut StoredCopy> {
        self.copies.get_mut(&c)
    }

    /// Hosts a copy, ready or in transfer.
    pub fn hosts(&self, c: ContentId) -> bool {
        self.copies.contains_key(&c)
    }

    /// Can answer a query for `c` right now.
    pub fn serves(&self, c: ContentId) -> bool {
        self.online && self.copies.get(&c).is_some_and(|cp| cp.ready)
    }

    pub fn origin(&self) -> Option<ContentId> {
        self.copies
            .values()
            .find(|cp| cp.kind == CopyKind::Origin)
            .map(|cp| cp.content)
    }

    pub fn replica_count(&self) -> usize {
        self.copies.values().filter(|cp| cp.kind == CopyKind::Replica).count()
    }

    pub fn free_slots(&self) -> usize {
        self.replica_slots.saturating_sub(self.replica_count())
    }

    /// Room for one more replica of `size` bytes.
    pub fn fits(&self, size: u64) -> bool {
        self.disk_free >= size && self.free_slots() > 0
    }

    pub fn used_bytes(&self) -> u64 {
        self.disk_capacity - self.disk_free
    }

    pub fn record_hit(&mut self, c: ContentId) {
        if let Some(cp) = self.copies.get_mut(&c) {
            cp.window_hits += 1;
            cp.period_hits += 1;
        }
    }

    pub fn reset_period_hits(&mut self) {
        self.copies.values_mut().for_each(|cp| cp.period_hits = 0);
    }

    fn insert_origin(&mut self, item: &ContentItem, weight: f64) -> Result<()> {
        if self.origin().is_some() {
            return Err(Error::config(format!(
                "{} is already the origin of another item",
                self.peer
            )));
        }
        if self.disk_free < item.size {
            return Err(Error::config(format!(
                "{} has no room for its origin item {} ({} bytes)",
                self.peer, item.id, item.size
            )));
        }
        self.disk_free -= item.size;
        self.copies.insert(
            item.id,
            StoredCopy {
                content: item.id,
                kind: CopyKind::Origin,
                size: item.size,
                ready: true,
                host_weight: weight,
                window_hits: 0,
                period_hits: 0,
                grace: false,
                ticket: None,
            },
        );
        Ok(())
    }

    /// Removes a replica and returns its bytes to the disk. Origin copies
    /// are never removed.
    pub fn remove_replica(&mut self, c: ContentId) -> Option<u64> {
        match self.copies.get(&c) {
            Some(cp) if cp.kind == CopyKind::Replica => {
                let size = cp.size;
                self.copies.remove(&c);
                self.disk_free += size;
                Some(size)
            }
            _ => None,
        }
    }

    /// Drops every replica, ready or pending. Returns what was dropped.
    pub fn clear_replicas(&mut self) -> Vec<ContentId> {
        let gone: Vec<ContentId> = self
            .copies
            .values()
            .filter(|cp| cp.kind == CopyKind::Replica)
            .map(|cp| cp.content)
            .collect();
        for &c in &gone {
            self.remove_replica(c);
        }
        gone
    }
}

/// Which peer stores what, for the whole system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicaMap {
    stores: Vec<PeerStore>,
    origins: BTreeMap<ContentId, PeerId>,
    #[serde(skip)]
    next_ticket: u64,
}

/// Handle for a replica whose transfer is in flight.
pub type Ticket = u64;

impl ReplicaMap {
    /// Stores every catalog item's origin copy at its origin peer.
    pub fn new(topology: &Topology, catalog: &[ContentItem], weights: &[f64]) -> Result<Self> {
        let mut stores: Vec<PeerStore> = topology
            .peers()
            .iter()
            .map(|p| PeerStore {
                peer: p.id,
                online: true,
                disk_capacity: p.disk_capacity,
                disk_free: p.disk_free,
                replica_slots: p.replica_slots,
                copies: BTreeMap::new(),
            })
            .collect();
        let mut origins = BTreeMap::new();
        for item in catalog {
            if item.size == 0 {
                return Err(Error::config(format!("content {} has zero size", item.id)));
            }
            let store = stores
                .get_mut(item.origin_peer.index())
                .ok_or(Error::UnknownPeer(item.origin_peer))?;
            let w = weights.get(item.origin_peer.index()).copied().unwrap_or(0.0);
            store.insert_origin(item, w)?;
            if origins.insert(item.id, item.origin_peer).is_some() {
                return Err(Error::config(format!("duplicate content id {}", item.id)));
            }
        }
        Ok(Self {
            stores,
            origins,
            next_ticket: 0,
        })
    }

    pub fn stores(&self) -> &[PeerStore] {
        &self.stores
    }

    pub fn store(&self, p: PeerId) -> &PeerStore {
        &self.stores[p.index()]
    }

    pub fn store_mut(&mut self, p: PeerId) -> &mut PeerStore {
        &mut self.stores[p.index()]
    }

    pub fn origin_of(&self, c: ContentId) -> Option<PeerId> {
        self.origins.get(&c).copied()
    }

    pub fn contents(&self) -> impl Iterator<Item = ContentId> + '_ {
        self.origins.keys().copied()
    }

    /// Online peers holding a ready copy of `c`, ascending id.
    pub fn holders(&self, c: ContentId) -> impl Iterator<Item = PeerId> + '_ {
        self.stores.iter().filter(move |s| s.serves(c)).map(|s| s.peer)
    }

    /// Reserves disk and a slot for a replica that becomes usable once
    /// [`ReplicaMap::complete`] is called with the returned ticket.
    pub fn reserve_replica(
        &mut self,
        p: PeerId,
        c: ContentId,
        size: u64,
        host_weight: f64,
    ) -> Result<Ticket> {
        let store = self.stores.get_mut(p.index()).ok_or(Error::UnknownPeer(p))?;
        if store.hosts(c) {
            return Err(Error::domain(format!("{p} already hosts {c}")));
        }
        if !store.fits(size) {
            return Err(Error::domain(format!("{p} has no room for {c}")));
        }
        let ticket = self.next_ticket;
        self.next_ticket += 1;
        store.disk_free -= size;
        store.copies.insert(
            c,
            StoredCopy {
                content: c,
                kind: CopyKind::Replica,
                size,
                ready: false,
                host_weight,
                window_hits: 0,
                period_hits: 0,
                grace: true,
                ticket: Some(ticket),
            },
        );
        Ok(ticket)
    }

    /// Marks a pending replica ready. Returns false if the reservation is
    /// gone (for example the peer left and came back).
    pub fn complete(&mut self, p: PeerId, c: ContentId, ticket: Ticket) -> bool {
        match self.stores[p.index()].copies.get_mut(&c) {
            Some(cp) if cp.ticket == Some(ticket) && !cp.ready => {
                cp.ready = true;
                cp.ticket = None;
                true
            }
            _ => false,
        }
    }

    /// Releases a pending reservation.
    pub fn abort(&mut self, p: PeerId, c: ContentId, ticket: Ticket) -> bool {
        let store = &mut self.stores[p.index()];
        match store.copies.get(&c) {
            Some(cp) if cp.ticket == Some(ticket) && !cp.ready => store.remove_replica(c).is_some(),
            _ => false,
        }
    }

    pub fn is_pending(&self, p: PeerId, c: ContentId) -> bool {
        self.stores[p.index()].copy(c).is_some_and(|cp| !cp.ready)
    }

    /// Marks every pending replica ready.
    pub fn materialize_all(&mut self) {
        for s in &mut self.stores {
            for cp in s.copies.values_mut() {
                cp.ready = true;
                cp.ticket = None;
            }
        }
    }

    pub fn pending_count(&self) -> usize {
        self.stores
            .iter()
            .flat_map(|s| s.copies.values())
            .filter(|cp| !cp.ready)
            .count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shortfall {
    pub content: ContentId,
    pub requested: usize,
    pub placed: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlacementPlan {
    pub assignments: BTreeMap<ContentId, Vec<PeerId>>,
    pub class_map: BTreeMap<ContentId, ContentClass>,
    pub shortfalls: Vec<Shortfall>,
    /// Class I items that found no eligible target at all.
    pub failures: Vec<ContentId>,
}

/// Chooses replica targets for every classified item.
///
/// Items are visited Class I first, hottest first (ties by id). Each item
/// takes the heaviest online peers of the matching cluster label that are
/// not its origin, do not already host it, and still have room given the
/// reservations made earlier in the same plan.
pub fn plan_placement(
    class_map: &BTreeMap<ContentId, ContentClass>,
    catalog: &[ContentItem],
    clusters: &ClusterAssignment,
    store: &ReplicaMap,
    cfg: &PlacementConfig,
) -> PlacementPlan {
    let by_label = |label: ClusterLabel| -> Vec<PeerId> {
        let mut v: Vec<PeerId> = clusters
            .clusters
            .iter()
            .filter(|c| c.label == label)
            .flat_map(|c| c.members.iter().copied())
            .collect();
        v.sort_by(|a, b| {
            clusters
                .weight(*b)
                .total_cmp(&clusters.weight(*a))
                .then(a.cmp(b))
        });
        v
    };
    let strong = by_label(ClusterLabel::Strong);
    let weak = by_label(ClusterLabel::Weak);

    let mut room: BTreeMap<PeerId, (u64, usize)> = store
        .stores()
        .iter()
        .map(|s| (s.peer, (s.disk_free, s.free_slots())))
        .collect();

    let mut order: Vec<&ContentItem> = catalog
        .iter()
        .filter(|i| class_map.contains_key(&i.id))
        .collect();
    let rank = |c: ContentClass| match c {
        ContentClass::Class1 => 0,
        _ => 1,
    };
    order.sort_by(|a, b| {
        rank(class_map[&a.id])
            .cmp(&rank(class_map[&b.id]))
            .then(b.access_count_window.cmp(&a.access_count_window))
            .then(a.id.cmp(&b.id))
    });

    let mut plan = PlacementPlan {
        class_map: class_map.clone(),
        ..PlacementPlan::default()
    };
    for item in order {
        let class = class_map[&item.id];
        let (pool, wanted) = match class {
            ContentClass::Class1 => (&strong, cfg.copies_class1),
            ContentClass::Class2 => (&weak, cfg.copies_class2),
            ContentClass::Unclassified => continue,
        };
        if wanted == 0 {
            continue;
        }
        let mut targets = Vec::new();
        for &p in pool {
            if targets.len() == wanted {
                break;
            }
            let s = store.store(p);
            if p == item.origin_peer || !s.online || s.hosts(item.id) {
                continue;
            }
            let (disk, slots) = room.get_mut(&p).expect("every peer has a store");
            if *disk >= item.size && *slots > 0 {
                *disk -= item.size;
                *slots -= 1;
                targets.push(p);
            }
        }
        if targets.len() < wanted {
            plan.shortfalls.push(Shortfall {
                content: item.id,
                requested: wanted,
                placed: targets.len(),
            });
            if targets.is_empty() && class == ContentClass::Class1 {
                plan.failures.push(item.id);
            }
        }
        if !targets.is_empty() {
            plan.assignments.insert(item.id, targets);
        }
    }
    plan
}

/// `{Nid, Clid, c1, c2, ...}`: everything a peer hosts after placement.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicationAnnouncement {
    pub nid: PeerId,
    pub clid: ClusterLabel,
    pub contents: Vec<ContentId>,
}

/// A replica copy that still has to cross the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicaTransfer {
    pub ticket: Ticket,
    pub item: ContentId,
    pub source: PeerId,
    pub target: PeerId,
    pub bytes: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlacementOutcome {
    pub transfers: Vec<ReplicaTransfer>,
    pub announcements: Vec<ReplicationAnnouncement>,
    /// Copies dropped because the target no longer had room.
    pub skipped: Vec<(ContentId, PeerId)>,
}

/// Carries out a plan from the origin servers: reserves each replica at its
/// target (recording the target's weight with the copy) and produces one
/// announcement per peer that received something. The returned transfers
/// must be completed with [`ReplicaMap::complete`] before the replicas serve.
pub fn execute_placement(
    store: &mut ReplicaMap,
    plan: &PlacementPlan,
    catalog: &[ContentItem],
    clusters: &ClusterAssignment,
) -> PlacementOutcome {
    let sizes: BTreeMap<ContentId, &ContentItem> = catalog.iter().map(|i| (i.id, i)).collect();
    let mut out = PlacementOutcome::default();
    let mut touched = BTreeSet::new();
    for (&c, targets) in &plan.assignments {
        let Some(item) = sizes.get(&c) else { continue };
        let source = if store.store(item.origin_peer).serves(c) {
            Some(item.origin_peer)
        } else {
            store.holders(c).next()
        };
        for &t in targets {
            let Some(source) = source else {
                out.skipped.push((c, t));
                continue;
            };
            match store.reserve_replica(t, c, item.size, clusters.weight(t)) {
                Ok(ticket) => {
                    touched.insert(t);
                    out.transfers.push(ReplicaTransfer {
                        ticket,
                        item: c,
                        source,
                        target: t,
                        bytes: item.size,
                    });
                }
                Err(_) => out.skipped.push((c, t)),
            }
        }
    }
    out.announcements = touched
        .into_iter()
        .map(|p| announcement_for(store, clusters, p))
        .collect();
    out
}

pub fn announcement_for(
    store: &ReplicaMap,
    clusters: &ClusterAssignment,
    p: PeerId,
) -> ReplicationAnnouncement {
    ReplicationAnnouncement {
        nid: p,
        clid: clusters.label_of(p),
        contents: store.store(p).copies().map(|cp| cp.content).collect(),
    }
}

/// Picks the responder for a query: the strong-cluster holder closest to the
/// requester, else the closest weak-cluster holder, else the origin.
pub fn route_query(
    q: &QueryRecord,
    clusters: &ClusterAssignment,
    store: &ReplicaMap,
    topology: &Topology,
) -> Result<PeerId> {
    let closest = |label: ClusterLabel| -> Result<Option<PeerId>> {
        let mut best: Option<(f64, PeerId)> = None;
        for p in store.holders(q.ckwd) {
            if clusters.label_of(p) != label {
                continue;
            }
            let d = topology.e2e_delay(p, q.nid)?;
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, p));
            }
        }
        Ok(best.map(|(_, p)| p))
    };
    if let Some(p) = closest(ClusterLabel::Strong)? {
        return Ok(p);
    }
    if let Some(p) = closest(ClusterLabel::Weak)? {
        return Ok(p);
    }
    match store.origin_of(q.ckwd) {
        Some(o) if store.store(o).serves(q.ckwd) => Ok(o),
        _ => Err(Error::Routing(q.ckwd)),
    }
}
