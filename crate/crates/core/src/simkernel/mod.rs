//! Deterministic discrete-event simulation of the replication system.
//!
//! A single-threaded loop owns all mutable state. Queries arrive as a
//! seeded Poisson process, are routed to a holder and queue FIFO at the
//! responder's uplink; a full queue drops the request. Report, balance and
//! cleanup ticks fire periodically. Classification and initial placement
//! run once at the end of warm-up; balancing and cleanup stay idle until
//! the initial replicas have landed, and are no-ops when load balancing is
//! disabled. Ticks are still dispatched in both arms so the two event
//! streams line up until the first balancing move.

mod audit;
mod event;
mod metrics;
mod workload;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::balancing::{
    availability_replicate, cleanup_replicas, inter_cluster_balance, intra_cluster_balance,
    place_inter_assignments, update_departure_estimate, BalancingConfig, HotItem, HotItemList,
    LoadReport, MemberView, NeighborLoad, ReplicationMove,
};
use crate::clustering::ClusterAssignment;
use crate::placement::{
    execute_placement, plan_placement, route_query, ContentClass, ContentItem, PlacementConfig,
    PlacementPlan, QueryRecord, QueryServer, ReplicaMap, ReplicationAnnouncement,
};
use crate::rng::{stream_rng, Stream};
use crate::topology::Topology;
use crate::{ClusterId, ContentId, Error, PeerId, Result};

pub use audit::{AuditLevel, AuditLog, AuditRecord};
pub use event::{Event, EventKind, EventQueue, ReplicaCause, Transfer};
pub use metrics::{load_ticks_csv, LoadTick, MetricsReport};
pub use workload::{build_catalog, generate_queries, QueryGenerator, WorkloadConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub placement: PlacementConfig,
    pub balancing: BalancingConfig,
    pub workload: WorkloadConfig,
    pub audit: AuditLevel,
    pub record_load_ticks: bool,
}

impl SimConfig {
    pub fn validate(&self, n_peers: usize) -> Result<()> {
        self.placement.validate()?;
        self.balancing.validate()?;
        self.workload.validate(n_peers)
    }
}

/// Everything a finished run produces.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioRun {
    pub metrics: MetricsReport,
    pub audit: Vec<String>,
    pub load_ticks: Vec<LoadTick>,
}

/// Runs one scenario to completion.
pub fn run_scenario(
    topology: &Topology,
    clusters: &ClusterAssignment,
    cfg: &SimConfig,
    lb_enabled: bool,
    seed: u64,
) -> Result<ScenarioRun> {
    Simulator::new(topology, clusters, cfg, lb_enabled, seed)?.run()
}

#[derive(Clone, Debug, Default)]
struct PeerRuntime {
    /// Service end times of accepted requests, oldest first.
    queue: VecDeque<f64>,
    busy_until: f64,
    period_load: u64,
    window_load: u64,
    departure_prob: f64,
    offline_since: Option<f64>,
    offline_ms_period: f64,
}

#[derive(Clone, Debug)]
struct InFlight {
    responder: PeerId,
    arrival: f64,
    service_end: f64,
    bytes: u64,
    measured: bool,
}

enum Arrivals {
    Generated(QueryGenerator),
    Scripted(VecDeque<QueryRecord>),
}

impl Arrivals {
    fn next(&mut self) -> Option<QueryRecord> {
        match self {
            Arrivals::Generated(g) => g.next(),
            Arrivals::Scripted(q) => q.pop_front(),
        }
    }
}

#[derive(Clone, Debug, Default)]
struct Snapshot {
    loads: Vec<u64>,
    hits: Vec<BTreeMap<ContentId, u64>>,
}

#[derive(Default)]
struct Counters {
    requests_total: u64,
    lost: u64,
    completed: u64,
    delay_sum: f64,
    bytes_delivered: u64,
    replication_bytes: u64,
    moves_applied: u64,
    replicas_deleted: u64,
}

pub struct Simulator<'a> {
    topology: &'a Topology,
    clusters: &'a ClusterAssignment,
    cfg: SimConfig,
    lb_enabled: bool,
    events: EventQueue,
    arrivals: Arrivals,
    churn_rng: ChaCha8Rng,
    catalog: Vec<ContentItem>,
    store: ReplicaMap,
    qs: QueryServer,
    peers: Vec<PeerRuntime>,
    in_flight: BTreeMap<u64, InFlight>,
    next_request: u64,
    audit: AuditLog,
    counters: Counters,
    plan: PlacementPlan,
    announcements: Vec<ReplicationAnnouncement>,
    placement_pending: usize,
    placed: bool,
    settled: bool,
    ended: bool,
    snapshot: Option<Snapshot>,
    period_start: f64,
    load_ticks: Vec<LoadTick>,
    warmup_ms: f64,
    end_ms: f64,
}

impl<'a> Simulator<'a> {
    pub fn new(
        topology: &'a Topology,
        clusters: &'a ClusterAssignment,
        cfg: &SimConfig,
        lb_enabled: bool,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate(topology.len())?;
        let catalog = build_catalog(&cfg.workload, topology.len(), seed);
        let gen = generate_queries(&cfg.workload, &catalog, topology.len(), seed)?;
        Self::with_arrivals(topology, clusters, cfg, lb_enabled, seed, catalog, Arrivals::Generated(gen))
    }

    /// A simulator fed with an explicit, time-ordered list of queries
    /// instead of the generated workload.
    pub fn with_queries(
        topology: &'a Topology,
        clusters: &'a ClusterAssignment,
        cfg: &SimConfig,
        lb_enabled: bool,
        seed: u64,
        catalog: Vec<ContentItem>,
        mut queries: Vec<QueryRecord>,
    ) -> Result<Self> {
        cfg.validate(topology.len())?;
        queries.sort_by(|a, b| a.time.total_cmp(&b.time));
        if queries.first().is_some_and(|q| q.time < 0.0) {
            return Err(Error::config("scripted query before time zero"));
        }
        Self::with_arrivals(
            topology,
            clusters,
            cfg,
            lb_enabled,
            seed,
            catalog,
            Arrivals::Scripted(queries.into()),
        )
    }

    fn with_arrivals(
        topology: &'a Topology,
        clusters: &'a ClusterAssignment,
        cfg: &SimConfig,
        lb_enabled: bool,
        seed: u64,
        catalog: Vec<ContentItem>,
        arrivals: Arrivals,
    ) -> Result<Self> {
        if clusters.cluster_of.len() != topology.len() {
            return Err(Error::config("cluster assignment does not cover the topology"));
        }
        let store = ReplicaMap::new(topology, &catalog, &clusters.weights)?;
        let qs = QueryServer::new(&catalog, clusters);
        let peers = topology
            .peers()
            .iter()
            .map(|p| PeerRuntime {
                departure_prob: p.departure_prob,
                ..PeerRuntime::default()
            })
            .collect();
        let w = &cfg.workload;
        let mut sim = Self {
            topology,
            clusters,
            cfg: cfg.clone(),
            lb_enabled,
            events: EventQueue::default(),
            arrivals,
            churn_rng: stream_rng(seed, Stream::Churn),
            catalog,
            store,
            qs,
            peers,
            in_flight: BTreeMap::new(),
            next_request: 0,
            audit: AuditLog::new(cfg.audit),
            counters: Counters::default(),
            plan: PlacementPlan::default(),
            announcements: Vec::new(),
            placement_pending: 0,
            placed: false,
            settled: false,
            ended: false,
            snapshot: None,
            period_start: 0.0,
            load_ticks: Vec::new(),
            warmup_ms: w.warmup_s * 1000.0,
            end_ms: w.duration_s * 1000.0,
        };
        sim.schedule_next_arrival();
        sim.events.schedule(sim.warmup_ms, EventKind::Classify);
        let report = sim.cfg.balancing.report_period_ms;
        if report < sim.end_ms {
            sim.events.schedule(report, EventKind::ReportTick);
            sim.events.schedule(report, EventKind::BalanceTick);
        }
        let cleanup = sim.cfg.balancing.cleanup_period_ms;
        if cleanup < sim.end_ms {
            sim.events.schedule(cleanup, EventKind::CleanupTick);
        }
        sim.schedule_next_leave();
        sim.events.schedule(sim.end_ms, EventKind::ScenarioEnd);
        Ok(sim)
    }

    pub fn now(&self) -> f64 {
        self.events.now()
    }

    pub fn store(&self) -> &ReplicaMap {
        &self.store
    }

    pub fn catalog(&self) -> &[ContentItem] {
        &self.catalog
    }

    pub fn plan(&self) -> &PlacementPlan {
        &self.plan
    }

    pub fn announcements(&self) -> &[ReplicationAnnouncement] {
        &self.announcements
    }

    pub fn query_server(&self) -> &QueryServer {
        &self.qs
    }

    /// True once initial placement ran and all of its copies landed or aborted.
    pub fn placement_settled(&self) -> bool {
        self.settled
    }

    /// Dispatches one event. Returns false when no events are left.
    pub fn step(&mut self) -> Result<bool> {
        let Some(e) = self.events.pop() else {
            return Ok(false);
        };
        self.dispatch(e)?;
        Ok(true)
    }

    /// Runs until the initial placement has settled (or the events run out).
    pub fn run_until_settled(&mut self) -> Result<()> {
        while !self.settled {
            if !self.step()? {
                break;
            }
        }
        Ok(())
    }

    /// Dispatches every event due at or before `t`, then sets the clock to `t`.
    pub fn run_until(&mut self, t: f64) -> Result<()> {
        while self.events.peek_time().is_some_and(|next| next <= t) {
            self.step()?;
        }
        if self.events.peek_time().is_some() {
            self.events.advance_to(t);
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<ScenarioRun> {
        while self.step()? {}
        Ok(ScenarioRun {
            metrics: self.metrics(),
            audit: self.audit.into_lines(),
            load_ticks: self.load_ticks,
        })
    }

    /// Metrics accumulated so far.
    pub fn metrics(&self) -> MetricsReport {
        let c = &self.counters;
        let window_s = (self.end_ms - self.warmup_ms) / 1000.0;
        MetricsReport {
            mean_delay_ms: if c.completed > 0 {
                c.delay_sum / c.completed as f64
            } else {
                0.0
            },
            aggregate_throughput_bps: c.bytes_delivered as f64 * 8.0 / window_s,
            packets_lost: c.lost,
            requests_total: c.requests_total,
            requests_completed: c.completed,
            bytes_delivered: c.bytes_delivered,
            window_s,
            replication_bytes_moved: c.replication_bytes,
            moves_applied: c.moves_applied,
            replicas_deleted: c.replicas_deleted,
            placement_failures: self.plan.failures.len() as u64,
            peer_load_bytes: self.peers.iter().map(|p| p.window_load).collect(),
        }
    }

    pub fn audit_lines(&self) -> &[String] {
        self.audit.lines()
    }

    fn dispatch(&mut self, e: Event) -> Result<()> {
        self.audit.record(AuditRecord::Event {
            t: e.time,
            seq: e.sequence,
            kind: e.kind.name().to_string(),
        });
        if self.ended && !matches!(e.kind, EventKind::TransferComplete(_)) {
            return Ok(());
        }
        match e.kind {
            EventKind::QueryArrival(q) => self.on_query(q),
            EventKind::TransferComplete(Transfer::Response { request }) => {
                self.on_response_done(request);
                Ok(())
            }
            EventKind::TransferComplete(Transfer::Replica {
                ticket,
                item,
                source,
                target,
                bytes,
                cause,
            }) => {
                self.on_replica_done(ticket, item, source, target, bytes, cause);
                Ok(())
            }
            EventKind::ReportTick => {
                self.on_report();
                Ok(())
            }
            EventKind::BalanceTick => self.on_balance(),
            EventKind::CleanupTick => {
                self.on_cleanup();
                Ok(())
            }
            EventKind::Classify => self.on_classify(),
            EventKind::PeerLeave => {
                self.on_leave();
                Ok(())
            }
            EventKind::PeerJoin(p) => {
                self.on_join(p);
                Ok(())
            }
            EventKind::ScenarioEnd => {
                self.ended = true;
                Ok(())
            }
        }
    }

    fn schedule_next_arrival(&mut self) {
        if let Some(q) = self.arrivals.next() {
            if q.time < self.end_ms {
                self.events.schedule(q.time, EventKind::QueryArrival(q));
            }
        }
    }

    fn schedule_next_leave(&mut self) {
        let rate = self.cfg.workload.churn_rate;
        if rate <= 0.0 {
            return;
        }
        let gap = Exp::new(rate / 1000.0).expect("positive churn rate").sample(&mut self.churn_rng);
        let t = self.now() + gap;
        if t < self.end_ms {
            self.events.schedule(t, EventKind::PeerLeave);
        }
    }

    fn schedule_periodic(&mut self, period: f64, kind: EventKind) {
        let t = self.now() + period;
        if t < self.end_ms {
            self.events.schedule(t, kind);
        }
    }

    fn on_query(&mut self, q: QueryRecord) -> Result<()> {
        self.schedule_next_arrival();
        let measured = q.time >= self.warmup_ms;
        if measured {
            self.counters.requests_total += 1;
        }
        if self.qs.register_query(q).is_err() {
            self.lose(measured);
            return Ok(());
        }
        let responder = match route_query(&q, self.clusters, &self.store, self.topology) {
            Ok(r) => r,
            Err(Error::Routing(_)) => {
                self.lose(measured);
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        self.serve(q, responder, measured)
    }

    fn lose(&mut self, measured: bool) {
        if measured {
            self.counters.lost += 1;
        }
    }

    /// FIFO service at the responder: processing plus serialisation on its
    /// uplink, then one end-to-end delay to the client.
    fn serve(&mut self, q: QueryRecord, responder: PeerId, measured: bool) -> Result<()> {
        let now = self.now();
        let bytes = self.cfg.workload.payload_bytes;
        let node = self.topology.peer(responder)?;
        let rt = &mut self.peers[responder.index()];
        while rt.queue.front().is_some_and(|&end| end <= now) {
            rt.queue.pop_front();
        }
        if rt.queue.len() >= node.service_queue_cap {
            self.lose(measured);
            return Ok(());
        }
        let service = self.cfg.workload.service_ms / node.cpu
            + self.topology.serialization_ms(responder, q.nid, bytes)?;
        let service_end = now.max(rt.busy_until) + service;
        rt.busy_until = service_end;
        rt.queue.push_back(service_end);
        let done = service_end + self.topology.e2e_delay(responder, q.nid)?;
        self.store.store_mut(responder).record_hit(q.ckwd);

        let request = self.next_request;
        self.next_request += 1;
        self.in_flight.insert(
            request,
            InFlight {
                responder,
                arrival: now,
                service_end,
                bytes,
                measured,
            },
        );
        self.events
            .schedule(done, EventKind::TransferComplete(Transfer::Response { request }));
        Ok(())
    }

    fn on_response_done(&mut self, request: u64) {
        let Some(f) = self.in_flight.remove(&request) else {
            return;
        };
        let rt = &mut self.peers[f.responder.index()];
        rt.period_load += f.bytes;
        if f.measured {
            rt.window_load += f.bytes;
            self.counters.completed += 1;
            self.counters.delay_sum += self.events.now() - f.arrival;
            self.counters.bytes_delivered += f.bytes;
        }
    }

    fn on_classify(&mut self) -> Result<()> {
        let class_map = self.qs.classify_content(self.cfg.placement.a_min);
        for item in &mut self.catalog {
            item.access_count_window = self.qs.count(item.id);
            item.class_label = class_map[&item.id];
        }
        let plan = plan_placement(
            &class_map,
            &self.catalog,
            self.clusters,
            &self.store,
            &self.cfg.placement,
        );
        let outcome = execute_placement(&mut self.store, &plan, &self.catalog, self.clusters);
        let now = self.now();
        for tr in &outcome.transfers {
            let t = now + self.topology.transfer_time(tr.source, tr.target, tr.bytes)?;
            self.events.schedule(
                t,
                EventKind::TransferComplete(Transfer::Replica {
                    ticket: tr.ticket,
                    item: tr.item,
                    source: tr.source,
                    target: tr.target,
                    bytes: tr.bytes,
                    cause: ReplicaCause::Placement,
                }),
            );
        }
        let count = |c: ContentClass| class_map.values().filter(|&&v| v == c).count();
        self.audit.record(AuditRecord::Placement {
            t: now,
            class1: count(ContentClass::Class1),
            class2: count(ContentClass::Class2),
            transfers: outcome.transfers.len(),
            failures: plan.failures.clone(),
        });
        self.placement_pending = outcome.transfers.len();
        self.placed = true;
        self.settled = self.placement_pending == 0;
        self.announcements = outcome.announcements;
        self.plan = plan;
        self.qs.reset_window();
        Ok(())
    }

    fn on_replica_done(
        &mut self,
        ticket: u64,
        item: ContentId,
        source: PeerId,
        target: PeerId,
        bytes: u64,
        cause: ReplicaCause,
    ) {
        let t = self.now();
        let live = self.store.store(source).online && self.store.store(target).online;
        if live && self.store.complete(target, item, ticket) {
            if t >= self.warmup_ms {
                self.counters.replication_bytes += bytes;
            }
            self.audit.record(AuditRecord::ReplicaReady { t, cause, item, target });
        } else {
            self.store.abort(target, item, ticket);
            self.audit.record(AuditRecord::TransferAborted { t, cause, item, source, target });
        }
        if cause == ReplicaCause::Placement {
            self.placement_pending -= 1;
            if self.placement_pending == 0 {
                self.settled = true;
            }
        }
    }

    fn on_report(&mut self) {
        let now = self.now();
        let period = now - self.period_start;
        let ewma = self.cfg.balancing.departure_ewma;
        for rt in &mut self.peers {
            let mut offline = rt.offline_ms_period;
            if let Some(since) = rt.offline_since {
                offline += now - since.max(self.period_start);
            }
            rt.offline_ms_period = 0.0;
            let frac = if period > 0.0 { offline / period } else { 0.0 };
            rt.departure_prob = update_departure_estimate(rt.departure_prob, frac, ewma);
        }
        let loads: Vec<u64> = self.peers.iter().map(|p| p.period_load).collect();
        let hits = self
            .store
            .stores()
            .iter()
            .map(|s| s.copies().map(|cp| (cp.content, cp.period_hits)).collect())
            .collect();
        if self.cfg.record_load_ticks {
            self.load_ticks.push(LoadTick { t: now, loads: loads.clone() });
        }
        self.snapshot = Some(Snapshot { loads, hits });
        for p in &mut self.peers {
            p.period_load = 0;
        }
        for i in 0..self.store.stores().len() {
            self.store.store_mut(PeerId::from(i)).reset_period_hits();
        }
        self.period_start = now;
        self.schedule_periodic(self.cfg.balancing.report_period_ms, EventKind::ReportTick);
    }

    fn on_cleanup(&mut self) {
        self.schedule_periodic(self.cfg.balancing.cleanup_period_ms, EventKind::CleanupTick);
        if !(self.lb_enabled && self.settled) {
            return;
        }
        let t = self.now();
        let alpha = self.cfg.balancing.alpha_cleanup;
        for i in 0..self.store.stores().len() {
            let p = PeerId::from(i);
            if !self.store.store(p).online {
                continue;
            }
            let deleted = cleanup_replicas(self.store.store_mut(p), alpha);
            if !deleted.is_empty() {
                self.counters.replicas_deleted += deleted.len() as u64;
                self.audit.record(AuditRecord::Cleanup { t, peer: p, deleted });
            }
        }
    }

    fn on_leave(&mut self) {
        self.schedule_next_leave();
        let allow_origin = self.cfg.workload.allow_origin_churn;
        let eligible: Vec<PeerId> = self
            .store
            .stores()
            .iter()
            .filter(|s| s.online && (allow_origin || s.origin().is_none()))
            .map(|s| s.peer)
            .collect();
        if eligible.is_empty() {
            return;
        }
        let p = eligible[self.churn_rng.random_range(0..eligible.len())];
        self.force_leave(p);
    }

    /// Takes `p` offline now: requests still in its service queue are lost,
    /// its replicas are dropped and a rejoin is scheduled after a random
    /// downtime.
    pub fn force_leave(&mut self, p: PeerId) {
        if !self.store.store(p).online {
            return;
        }
        let now = self.now();

        let cut: Vec<u64> = self
            .in_flight
            .iter()
            .filter(|(_, f)| f.responder == p && f.service_end > now)
            .map(|(&id, _)| id)
            .collect();
        for id in &cut {
            let f = self.in_flight.remove(id).expect("listed above");
            self.lose(f.measured);
        }
        let rt = &mut self.peers[p.index()];
        rt.queue.clear();
        rt.busy_until = now;
        rt.offline_since = Some(now);

        let store = self.store.store_mut(p);
        store.online = false;
        let dropped = store.clear_replicas();
        self.audit.record(AuditRecord::PeerLeave {
            t: now,
            peer: p,
            dropped_requests: cut.len(),
            dropped_replicas: dropped.len(),
        });
        let downtime = Exp::new(1.0 / (self.cfg.workload.mean_downtime_s * 1000.0))
            .expect("positive downtime")
            .sample(&mut self.churn_rng);
        self.events.schedule(now + downtime, EventKind::PeerJoin(p));
    }

    fn on_join(&mut self, p: PeerId) {
        let now = self.now();
        let rt = &mut self.peers[p.index()];
        if let Some(since) = rt.offline_since.take() {
            rt.offline_ms_period += now - since.max(self.period_start);
        }
        self.store.store_mut(p).online = true;
        self.audit.record(AuditRecord::PeerJoin { t: now, peer: p });
    }

    fn online_members(&self, c: ClusterId) -> Vec<PeerId> {
        self.clusters
            .cluster(c)
            .members
            .iter()
            .copied()
            .filter(|&m| self.store.store(m).online)
            .collect()
    }

    fn member_view(&self, p: PeerId, snap: &Snapshot) -> MemberView {
        let s = self.store.store(p);
        let mut serving = BTreeSet::new();
        let mut pending = BTreeSet::new();
        for cp in s.copies() {
            if cp.ready {
                serving.insert(cp.content);
            } else {
                pending.insert(cp.content);
            }
        }
        MemberView {
            report: LoadReport {
                peer: p,
                load: snap.loads[p.index()],
                disk_free: s.disk_free,
                free_slots: s.free_slots(),
            },
            departure_prob: self.peers[p.index()].departure_prob,
            serving,
            pending,
        }
    }

    fn hits(snap: &Snapshot, p: PeerId, c: ContentId) -> u64 {
        snap.hits[p.index()].get(&c).copied().unwrap_or(0)
    }

    /// Everything `p` holds, ranked by accesses in the last period.
    fn peer_hot_list(&self, p: PeerId, snap: &Snapshot) -> HotItemList {
        HotItemList::new(
            self.store
                .store(p)
                .copies()
                .map(|cp| HotItem {
                    content: cp.content,
                    accesses: if cp.ready { Self::hits(snap, p, cp.content) } else { 0 },
                    size: cp.size,
                })
                .collect(),
        )
    }

    /// Items served inside a cluster, ranked by the cluster's total accesses.
    fn cluster_hot_list(&self, members: &[PeerId], snap: &Snapshot) -> HotItemList {
        let mut acc: BTreeMap<ContentId, (u64, u64)> = BTreeMap::new();
        for &m in members {
            for cp in self.store.store(m).copies().filter(|cp| cp.ready) {
                let e = acc.entry(cp.content).or_insert((0, cp.size));
                e.0 += Self::hits(snap, m, cp.content);
            }
        }
        HotItemList::new(
            acc.into_iter()
                .map(|(content, (accesses, size))| HotItem { content, accesses, size })
                .collect(),
        )
        .top_accessed(usize::MAX)
    }

    fn on_balance(&mut self) -> Result<()> {
        self.schedule_periodic(self.cfg.balancing.report_period_ms, EventKind::BalanceTick);
        if !(self.lb_enabled && self.settled) {
            return Ok(());
        }
        let Some(snap) = self.snapshot.clone() else {
            return Ok(());
        };
        let cfg = self.cfg.balancing.clone();
        let ids: Vec<ClusterId> = self.clusters.clusters.iter().map(|c| c.id).collect();

        for &c in &ids {
            let members = self.online_members(c);
            if members.is_empty() {
                continue;
            }
            let views: Vec<MemberView> = members.iter().map(|&m| self.member_view(m, &snap)).collect();
            let hot = self.cluster_hot_list(&members, &snap);
            let moves = availability_replicate(&views, &hot, &cfg);
            self.apply_moves(&moves)?;

            let reports: Vec<LoadReport> =
                members.iter().map(|&m| self.member_view(m, &snap).report).collect();
            let hot_per_peer: BTreeMap<PeerId, HotItemList> =
                members.iter().map(|&m| (m, self.peer_hot_list(m, &snap))).collect();
            let moves = intra_cluster_balance(&reports, &hot_per_peer, &cfg);
            self.apply_moves(&moves)?;
        }

        for &c in &ids {
            let members = self.online_members(c);
            if members.is_empty() {
                continue;
            }
            let own: Vec<MemberView> = members.iter().map(|&m| self.member_view(m, &snap)).collect();
            let own_load: u64 = own.iter().map(|v| v.report.load).sum();
            let mut neighbor_loads = Vec::new();
            let mut neighbor_views = BTreeMap::new();
            for &n in &self.clusters.cluster(c).neighbors {
                let nm = self.online_members(n);
                if nm.is_empty() {
                    continue;
                }
                let views: Vec<MemberView> = nm.iter().map(|&m| self.member_view(m, &snap)).collect();
                neighbor_loads.push(NeighborLoad {
                    cluster: n,
                    members: views.iter().map(|v| v.report).collect(),
                });
                neighbor_views.insert(n, views);
            }
            let hot = self
                .cluster_hot_list(&members, &snap)
                .top_accessed(cfg.inter_hot_items);
            let decision = inter_cluster_balance(own_load, &neighbor_loads, &hot, &cfg);
            if !decision.triggered {
                continue;
            }
            self.audit.record(AuditRecord::InterTrigger {
                t: self.now(),
                cluster: c.0,
                cluster_load: decision.cluster_load,
                neighbor_avg: decision.neighbor_avg,
                willing: decision.replies.len(),
                assigned: decision.assignments.len(),
            });
            let moves = place_inter_assignments(&decision, &own, &neighbor_views);
            self.apply_moves(&moves)?;
        }
        Ok(())
    }

    /// Starts a background copy for each move that is still legal. Illegal
    /// moves are skipped and logged.
    pub fn apply_moves(&mut self, moves: &[ReplicationMove]) -> Result<()> {
        let t = self.now();
        for m in moves {
            let src = self.store.store(m.source);
            let dst = self.store.store(m.target);
            let legal = m.source != m.target
                && src.serves(m.item)
                && dst.online
                && !dst.hosts(m.item)
                && dst.fits(m.size);
            if !legal {
                self.audit.record(AuditRecord::MoveSkipped {
                    t,
                    reason: m.reason,
                    item: m.item,
                    source: m.source,
                    target: m.target,
                });
                continue;
            }
            let ticket =
                self.store
                    .reserve_replica(m.target, m.item, m.size, self.clusters.weight(m.target))?;
            let done = t + self.topology.transfer_time(m.source, m.target, m.size)?;
            self.events.schedule(
                done,
                EventKind::TransferComplete(Transfer::Replica {
                    ticket,
                    item: m.item,
                    source: m.source,
                    target: m.target,
                    bytes: m.size,
                    cause: ReplicaCause::Balance(m.reason),
                }),
            );
            self.counters.moves_applied += 1;
            self.audit.record(AuditRecord::Move {
                t,
                reason: m.reason,
                item: m.item,
                source: m.source,
                target: m.target,
                source_load: m.source_load,
                reference_load: m.reference_load,
            });
        }
        Ok(())
    }
}
