//! Simulated network: peers with resource attributes, one asymmetric access
//! link per peer, and a single-hop full mesh between access routers.
//!
//! Every peer owns exactly one access router, so router indices coincide with
//! peer indices. The bottleneck is assumed to sit on the access links; routers
//! are not queued.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{stream_rng, Stream};
use crate::{Error, PeerId, Result};

/// Inclusive `[min, max]` range for a drawn attribute.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeRange {
    pub min: f64,
    pub max: f64,
}

impl AttributeRange {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub const fn fixed(value: f64) -> Self {
        Self { min: value, max: value }
    }

    fn check(&self, name: &str, positive: bool) -> Result<()> {
        if !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::config(format!("{name}: bounds must be finite")));
        }
        if self.min > self.max {
            return Err(Error::config(format!(
                "{name}: min ({}) exceeds max ({})",
                self.min, self.max
            )));
        }
        if positive && self.min <= 0.0 {
            return Err(Error::config(format!(
                "{name}: min must be positive, got {}",
                self.min
            )));
        }
        if !positive && self.min < 0.0 {
            return Err(Error::config(format!(
                "{name}: min must be non-negative, got {}",
                self.min
            )));
        }
        Ok(())
    }

    /// `min + (max - min) * u` with `u` uniform on `[0, 1)`.
    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.min + (self.max - self.min) * u
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub n_peers: usize,
    /// Raw upload bandwidth, bits per second. Normalised into `up_bw`.
    pub up_bps: AttributeRange,
    /// Download bandwidth as a multiple of upload bandwidth.
    pub down_up_ratio: f64,
    /// CPU speed, arbitrary units. Normalised into `cpu`.
    pub cpu: AttributeRange,
    /// Memory size, arbitrary units. Normalised into `mem`.
    pub mem: AttributeRange,
    /// One-way access link delay, ms. Drawn separately for each direction.
    pub access_delay_ms: AttributeRange,
    /// One-way router-to-router overlay delay, ms.
    pub overlay_delay_ms: AttributeRange,
    /// Disk capacity in bytes.
    pub disk_capacity_bytes: AttributeRange,
    /// Number of foreign replicas a peer may store besides its own item.
    pub replica_slots: usize,
    /// Maximum number of requests queued or in service at a peer.
    pub service_queue_cap: usize,
    /// Prior probability of leaving per observation period.
    pub departure_prob: AttributeRange,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            n_peers: 100,
            up_bps: AttributeRange::new(128_000.0, 1_024_000.0),
            down_up_ratio: 4.0,
            cpu: AttributeRange::new(0.5, 3.0),
            mem: AttributeRange::new(256.0, 4096.0),
            access_delay_ms: AttributeRange::new(1.0, 10.0),
            overlay_delay_ms: AttributeRange::new(5.0, 40.0),
            disk_capacity_bytes: AttributeRange::new(16_384.0, 65_536.0),
            replica_slots: 4,
            service_queue_cap: 16,
            departure_prob: AttributeRange::fixed(0.0),
        }
    }
}

impl TopologyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_peers < 2 {
            return Err(Error::config(format!(
                "topology.n_peers must be at least 2, got {}",
                self.n_peers
            )));
        }
        self.up_bps.check("topology.up_bps", true)?;
        self.cpu.check("topology.cpu", true)?;
        self.mem.check("topology.mem", true)?;
        self.access_delay_ms.check("topology.access_delay_ms", true)?;
        self.overlay_delay_ms.check("topology.overlay_delay_ms", false)?;
        self.disk_capacity_bytes
            .check("topology.disk_capacity_bytes", false)?;
        self.departure_prob.check("topology.departure_prob", false)?;
        if self.departure_prob.max > 1.0 {
            return Err(Error::config("topology.departure_prob: max exceeds 1"));
        }
        if !(self.down_up_ratio > 0.0 && self.down_up_ratio.is_finite()) {
            return Err(Error::config(format!(
                "topology.down_up_ratio must be positive, got {}",
                self.down_up_ratio
            )));
        }
        if self.service_queue_cap == 0 {
            return Err(Error::config("topology.service_queue_cap must be at least 1"));
        }
        Ok(())
    }
}

/// A peer and its resource attributes.
///
/// `up_bw`, `cpu`, `mem` and `access_latency` are normalised by the fleet
/// maximum and lie in `(0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeerNode {
    pub id: PeerId,
    pub up_bw: f64,
    pub cpu: f64,
    pub mem: f64,
    pub access_latency: f64,
    pub raw_up_bps: f64,
    pub raw_down_bps: f64,
    pub disk_free: u64,
    pub disk_capacity: u64,
    pub replica_slots: usize,
    pub departure_prob: f64,
    pub service_queue_cap: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    peers: Vec<PeerNode>,
    access_up_ms: Vec<f64>,
    access_down_ms: Vec<f64>,
    overlay_ms: Vec<Vec<f64>>,
}

/// Builds a topology from `cfg` using the topology random stream of `seed`.
///
/// Draw order, per peer in id order: upload bps, cpu, memory, access up
/// delay, access down delay, disk capacity, departure probability. Then the
/// overlay delays of the upper triangle in row-major order. Each draw is
/// `min + (max - min) * u` with `u` the next `f64` from the stream.
pub fn build_topology(cfg: &TopologyConfig, seed: u64) -> Result<Topology> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, Stream::Topology);
    let n = cfg.n_peers;

    struct Raw {
        up: f64,
        cpu: f64,
        mem: f64,
        up_ms: f64,
        down_ms: f64,
        disk: u64,
        depart: f64,
    }

    let raw: Vec<Raw> = (0..n)
        .map(|_| Raw {
            up: cfg.up_bps.draw(&mut rng),
            cpu: cfg.cpu.draw(&mut rng),
            mem: cfg.mem.draw(&mut rng),
            up_ms: cfg.access_delay_ms.draw(&mut rng),
            down_ms: cfg.access_delay_ms.draw(&mut rng),
            disk: cfg.disk_capacity_bytes.draw(&mut rng).round() as u64,
            depart: cfg.departure_prob.draw(&mut rng),
        })
        .collect();

    let mut overlay_ms = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = cfg.overlay_delay_ms.draw(&mut rng);
            overlay_ms[i][j] = d;
            overlay_ms[j][i] = d;
        }
    }

    let fleet_max = |f: &dyn Fn(&Raw) -> f64| raw.iter().map(f).fold(f64::MIN, f64::max);
    let max_up = fleet_max(&|r| r.up);
    let max_cpu = fleet_max(&|r| r.cpu);
    let max_mem = fleet_max(&|r| r.mem);
    let max_lat = fleet_max(&|r| r.up_ms + r.down_ms);

    let peers = raw
        .iter()
        .enumerate()
        .map(|(i, r)| PeerNode {
            id: PeerId::from(i),
            up_bw: r.up / max_up,
            cpu: r.cpu / max_cpu,
            mem: r.mem / max_mem,
            access_latency: (r.up_ms + r.down_ms) / max_lat,
            raw_up_bps: r.up,
            raw_down_bps: r.up * cfg.down_up_ratio,
            disk_free: r.disk,
            disk_capacity: r.disk,
            replica_slots: cfg.replica_slots,
            departure_prob: r.depart,
            service_queue_cap: cfg.service_queue_cap,
        })
        .collect();

    Topology::from_parts(
        peers,
        raw.iter().map(|r| r.up_ms).collect(),
        raw.iter().map(|r| r.down_ms).collect(),
        overlay_ms,
    )
}

impl Topology {
    /// Assembles a topology from explicit parts, checking the structural
    /// invariants (dense ids, one access link per peer, symmetric overlay
    /// with zero diagonal).
    pub fn from_parts(
        peers: Vec<PeerNode>,
        access_up_ms: Vec<f64>,
        access_down_ms: Vec<f64>,
        overlay_ms: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = peers.len();
        if access_up_ms.len() != n || access_down_ms.len() != n || overlay_ms.len() != n {
            return Err(Error::config("every peer needs one access link and one overlay row"));
        }
        for (i, p) in peers.iter().enumerate() {
            if p.id.index() != i {
                return Err(Error::config(format!("peer at index {i} has id {}", p.id)));
            }
            if p.access_latency <= 0.0 {
                return Err(Error::config(format!("{}: access latency must be positive", p.id)));
            }
            if p.disk_free > p.disk_capacity {
                return Err(Error::config(format!("{}: disk_free exceeds capacity", p.id)));
            }
        }
        for (i, row) in overlay_ms.iter().enumerate() {
            if row.len() != n {
                return Err(Error::config("overlay delay matrix must be square"));
            }
            if row[i] != 0.0 {
                return Err(Error::config("overlay delay matrix must have a zero diagonal"));
            }
            for (j, &d) in row.iter().enumerate() {
                if d < 0.0 || d != overlay_ms[j][i] {
                    return Err(Error::config(format!(
                        "overlay delay ({i},{j}) must be non-negative and symmetric"
                    )));
                }
            }
        }
        if access_up_ms.iter().chain(&access_down_ms).any(|&d| d < 0.0) {
            return Err(Error::config("access delays must be non-negative"));
        }
        Ok(Self {
            peers,
            access_up_ms,
            access_down_ms,
            overlay_ms,
        })
    }

    pub fn len(&self) -> usize {
        self.peers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peers.is_empty()
    }

    pub fn peers(&self) -> &[PeerNode] {
        &self.peers
    }

    pub fn peer(&self, id: PeerId) -> Result<&PeerNode> {
        self.peers.get(id.index()).ok_or(Error::UnknownPeer(id))
    }

    pub fn peer_ids(&self) -> impl Iterator<Item = PeerId> + '_ {
        self.peers.iter().map(|p| p.id)
    }

    pub fn access_up_ms(&self, id: PeerId) -> Result<f64> {
        self.access_up_ms.get(id.index()).copied().ok_or(Error::UnknownPeer(id))
    }

    pub fn access_down_ms(&self, id: PeerId) -> Result<f64> {
        self.access_down_ms.get(id.index()).copied().ok_or(Error::UnknownPeer(id))
    }

    pub fn overlay_matrix(&self) -> &[Vec<f64>] {
        &self.overlay_ms
    }

    /// One-way delay from `a` to `b`: a's access up-delay, the overlay hop
    /// between their routers and b's access down-delay. Zero when `a == b`.
    pub fn e2e_delay(&self, a: PeerId, b: PeerId) -> Result<f64> {
        let up = self.access_up_ms(a)?;
        let down = self.access_down_ms(b)?;
        if a == b {
            return Ok(0.0);
        }
        Ok(up + self.overlay_ms[a.index()][b.index()] + down)
    }

    /// Serialisation time of `bytes` over the narrower of `src`'s uplink and
    /// `dst`'s downlink, in ms.
    pub fn serialization_ms(&self, src: PeerId, dst: PeerId, bytes: u64) -> Result<f64> {
        let bps = self.peer(src)?.raw_up_bps.min(self.peer(dst)?.raw_down_bps);
        if !(bps > 0.0) {
            return Err(Error::config(format!(
                "zero bandwidth on path {src} -> {dst}"
            )));
        }
        Ok(bytes as f64 * 8.0 / bps * 1000.0)
    }

    /// Serialisation plus end-to-end delay for moving `bytes` from `src` to `dst`, in ms.
    pub fn transfer_time(&self, src: PeerId, dst: PeerId, bytes: u64) -> Result<f64> {
        Ok(self.serialization_ms(src, dst, bytes)? + self.e2e_delay(src, dst)?)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn peer(i: usize, up_bps: f64) -> PeerNode {
        PeerNode {
            id: PeerId::from(i),
            up_bw: 1.0,
            cpu: 1.0,
            mem: 1.0,
            access_latency: 1.0,
            raw_up_bps: up_bps,
            raw_down_bps: up_bps * 4.0,
            disk_free: 10_000,
            disk_capacity: 10_000,
            replica_slots: 4,
            departure_prob: 0.0,
            service_queue_cap: 8,
        }
    }

    /// Two peers: up 5 ms / down 10 ms at p0, up 3 ms / down 7 ms at p1, 20 ms overlay.
    pub(crate) fn two_peer() -> Topology {
        Topology::from_parts(
            vec![peer(0, 1_000_000.0), peer(1, 1_000_000.0)],
            vec![5.0, 3.0],
            vec![10.0, 7.0],
            vec![vec![0.0, 20.0], vec![20.0, 0.0]],
        )
        .unwrap()
    }

    #[test]
    fn degenerate_ranges_normalize_to_one() {
        let cfg = TopologyConfig {
            n_peers: 2,
            up_bps: AttributeRange::fixed(500_000.0),
            cpu: AttributeRange::fixed(2.0),
            mem: AttributeRange::fixed(512.0),
            access_delay_ms: AttributeRange::fixed(4.0),
            ..TopologyConfig::default()
        };
        let t = build_topology(&cfg, 3).unwrap();
        for p in t.peers() {
            assert_eq!(
                (p.up_bw, p.cpu, p.mem, p.access_latency),
                (1.0, 1.0, 1.0, 1.0)
            );
        }
    }

    #[test]
    fn same_seed_same_topology() {
        let cfg = TopologyConfig::default();
        assert_eq!(build_topology(&cfg, 11).unwrap(), build_topology(&cfg, 11).unwrap());
        assert_ne!(build_topology(&cfg, 11).unwrap(), build_topology(&cfg, 12).unwrap());
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        let mut cfg = TopologyConfig::default();
        cfg.cpu = AttributeRange::new(2.0, 1.0);
        assert!(matches!(build_topology(&cfg, 0), Err(Error::Config(_))));

        let mut cfg = TopologyConfig::default();
        cfg.access_delay_ms = AttributeRange::new(0.0, 3.0);
        assert!(matches!(build_topology(&cfg, 0), Err(Error::Config(_))));

        let cfg = TopologyConfig {
            n_peers: 1,
            ..TopologyConfig::default()
        };
        assert!(build_topology(&cfg, 0).is_err());
    }

    #[test]
    fn e2e_delay_sums_components() {
        let t = two_peer();
        let (a, b) = (PeerId(0), PeerId(1));
        assert_eq!(t.e2e_delay(a, a).unwrap(), 0.0);
        // 5 up + 20 overlay + 7 down
        assert_eq!(t.e2e_delay(a, b).unwrap(), 32.0);
        // 3 up + 20 overlay + 10 down
        assert_eq!(t.e2e_delay(b, a).unwrap(), 33.0);
        assert!(matches!(t.e2e_delay(a, PeerId(9)), Err(Error::UnknownPeer(_))));
    }

    #[test]
    fn e2e_delay_example_values() {
        let t = Topology::from_parts(
            vec![peer(0, 1e6), peer(1, 1e6)],
            vec![5.0, 5.0],
            vec![10.0, 10.0],
            vec![vec![0.0, 20.0], vec![20.0, 0.0]],
        )
        .unwrap();
        assert_eq!(t.e2e_delay(PeerId(0), PeerId(1)).unwrap(), 35.0);
    }

    #[test]
    fn transfer_time_arithmetic() {
        // e2e of 10 ms, 1 Mb/s bottleneck
        let t = Topology::from_parts(
            vec![peer(0, 1e6), peer(1, 1e6)],
            vec![4.0, 4.0],
            vec![6.0, 6.0],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        )
        .unwrap();
        let (a, b) = (PeerId(0), PeerId(1));
        assert_eq!(t.transfer_time(a, b, 0).unwrap(), 10.0);
        assert_eq!(t.transfer_time(a, b, 1000).unwrap(), 18.0);
        let s1 = t.transfer_time(a, b, 1000).unwrap() - 10.0;
        let s2 = t.transfer_time(a, b, 2000).unwrap() - 10.0;
        assert_eq!(s2, 2.0 * s1);
    }

    #[test]
    fn transfer_uses_narrower_side() {
        let mut slow = peer(1, 100_000.0);
        slow.raw_down_bps = 200_000.0;
        let t = Topology::from_parts(
            vec![peer(0, 1e6), slow],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        )
        .unwrap();
        // 1000 bytes over min(1e6 up, 2e5 down) = 40 ms
        assert_eq!(t.transfer_time(PeerId(0), PeerId(1), 1000).unwrap(), 40.0);
    }

    #[test]
    fn zero_bandwidth_is_config_error() {
        let t = Topology::from_parts(
            vec![peer(0, 0.0), peer(1, 1e6)],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        )
        .unwrap();
        assert!(matches!(
            t.transfer_time(PeerId(0), PeerId(1), 10),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn asymmetric_overlay_rejected() {
        let r = Topology::from_parts(
            vec![peer(0, 1e6), peer(1, 1e6)],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![vec![0.0, 1.0], vec![2.0, 0.0]],
        );
        assert!(r.is_err());
    }
}
