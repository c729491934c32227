//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use replsim::balancing::{
    cleanup_replicas, inter_cluster_balance, intra_cluster_balance, BalancingConfig, HotItem,
    HotItemList, LoadReport, NeighborLoad,
};
use replsim::clustering::{compute_weight, partition_nodes, ClusterLabel, NodeWeight};
use replsim::config::ScenarioConfig;
use replsim::experiment::{dump_state, run_seed, sweep, validate_dump, ComparisonTable, StateDump};
use replsim::placement::{ContentClass, ContentItem, CopyKind, ReplicaMap};
use replsim::topology::{build_topology, AttributeRange, TopologyConfig};
use replsim::{ClusterId, ContentId, PeerId};

const LOAD_SWEEP: &str = include_str!("../../../scenarios/load_sweep.toml");
const HOTSPOT: &str = include_str!("../../../scenarios/hotspot_loss.toml");
const CHURN: &str = include_str!("../../../scenarios/churn.toml");

type Outcome = Result<String, String>;

fn runner(cases: u32) -> TestRunner {
    let cfg = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(cfg, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn threads() -> usize {
    std::thread::available_parallelism().map_or(4, |n| n.get())
}

fn scenario(text: &str) -> ScenarioConfig {
    ScenarioConfig::from_toml_str(text).expect("bundled scenario parses")
}

fn run_sweep(text: &str) -> Result<ComparisonTable, String> {
    let cfg = scenario(text);
    let s = cfg.sweep.clone().expect("bundled scenario has a sweep");
    sweep(&cfg, &s.param, &s.values, &s.seeds, threads()).map_err(|e| e.to_string())
}

fn print_table(t: &ComparisonTable) {
    println!(
        "      {:>8} | {:>12} {:>12} | {:>14} {:>14} | {:>9} {:>9} | {:>8}",
        "value", "delay LB", "delay noLB", "thru LB", "thru noLB", "lost LB", "lost noLB", "requests"
    );
    for r in &t.rows {
        println!(
            "      {:>8} | {:>12.3} {:>12.3} | {:>14.1} {:>14.1} | {:>9.1} {:>9.1} | {:>8.1}",
            r.value,
            r.with_lb.mean_delay_ms,
            r.without_lb.mean_delay_ms,
            r.with_lb.throughput_bps,
            r.without_lb.throughput_bps,
            r.with_lb.packets_lost,
            r.without_lb.packets_lost,
            r.without_lb.requests_total
        );
    }
}

fn criterion_1(t: &ComparisonTable, secs: f64) -> Outcome {
    let mut errs = Vec::new();
    for w in t.rows.windows(2) {
        if w[1].without_lb.mean_delay_ms < w[0].without_lb.mean_delay_ms {
            errs.push(format!("WithoutLB delay falls from {} to {}", w[0].value, w[1].value));
        }
    }
    let mut worst = f64::INFINITY;
    for r in &t.rows {
        let gain = 1.0 - r.with_lb.mean_delay_ms / r.without_lb.mean_delay_ms;
        worst = worst.min(gain);
        if r.with_lb.mean_delay_ms > 0.95 * r.without_lb.mean_delay_ms {
            errs.push(format!("payload {}: WithLB only {:.1}% lower", r.value, 100.0 * gain));
        }
    }
    if secs >= 120.0 {
        errs.push(format!("sweep took {secs:.1} s"));
    }
    if errs.is_empty() {
        Ok(format!(
            "WithoutLB delay non-decreasing; WithLB lower by >= {:.1}% at every payload; {secs:.1} s",
            100.0 * worst
        ))
    } else {
        Err(errs.join("; "))
    }
}

fn criterion_2(t: &ComparisonTable) -> Outcome {
    let bad: Vec<String> = t
        .rows
        .iter()
        .filter(|r| r.with_lb.throughput_bps < r.without_lb.throughput_bps)
        .map(|r| format!("payload {}", r.value))
        .collect();
    if bad.is_empty() {
        Ok("WithLB throughput >= WithoutLB at every payload".into())
    } else {
        Err(format!("lower WithLB throughput at {}", bad.join(", ")))
    }
}

fn criterion_3(t: &ComparisonTable) -> Outcome {
    let mut errs = Vec::new();
    for w in t.rows.windows(2) {
        if w[1].without_lb.packets_lost < w[0].without_lb.packets_lost {
            errs.push(format!("WithoutLB loss falls from {} s to {} s", w[0].value, w[1].value));
        }
    }
    for r in &t.rows {
        let frac = r.with_lb.packets_lost / r.with_lb.requests_total;
        if frac > 0.01 {
            errs.push(format!("{} s: WithLB loses {:.2}% of requests", r.value, 100.0 * frac));
        }
    }
    let last = t.rows.iter().find(|r| r.value == 20.0).ok_or("no 20 s row")?;
    let (with, without) = (last.with_lb.packets_lost, last.without_lb.packets_lost);
    if without < 5.0 * with {
        errs.push(format!("at 20 s WithoutLB loss {without} < 5 x WithLB loss {with}"));
    }
    if errs.is_empty() {
        Ok(format!(
            "WithoutLB loss non-decreasing; WithLB <= {:.3}% of requests; at 20 s {without} vs {with} lost",
            100.0
                * t.rows
                    .iter()
                    .map(|r| r.with_lb.packets_lost / r.with_lb.requests_total)
                    .fold(0.0, f64::max)
        ))
    } else {
        Err(errs.join("; "))
    }
}

fn criterion_4() -> Outcome {
    let mut r = runner(10_000);
    let attr = 1e-6f64..1.0;
    r.run(&(attr.clone(), attr.clone(), attr.clone(), attr), |(bw, sp, mz, al)| {
        let w = compute_weight(bw, sp, mz, al).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(w.to_bits(), ((bw + sp + mz) / al).to_bits());
        Ok(())
    })
    .map_err(|e| format!("weight formula: {e}"))?;

    let mut r = runner(10_000);
    let input = (prop::collection::vec(0.0f64..10.0, 1..40), 0.0f64..10.0, any::<u64>());
    r.run(&input, |(values, beta, shuffle)| {
        let weights: Vec<NodeWeight> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| NodeWeight { peer: PeerId::from(i), value: v })
            .collect();
        let p = partition_nodes(&weights, beta);
        for w in &weights {
            let strong = w.value >= beta;
            prop_assert_eq!(p.strong.contains(&w.peer), strong);
            prop_assert_eq!(p.weak.contains(&w.peer), !strong);
        }
        prop_assert_eq!(p.strong.len() + p.weak.len(), weights.len());
        prop_assert!(p.weight_vector.windows(2).all(|x| x[0].value >= x[1].value));

        let mut permuted = weights.clone();
        permuted.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        prop_assert_eq!(partition_nodes(&permuted, beta), p);
        Ok(())
    })
    .map_err(|e| format!("partition: {e}"))?;
    Ok("weight exact on 10^4 inputs; partition predicate, order and permutation invariance on 10^4 inputs".into())
}

/// Straight-line intra-cluster balancing: sort, prune, pair, threshold.
fn intra_oracle(
    peers: &[(PeerId, u64, u64)],
    hottest: &BTreeMap<PeerId, ContentId>,
    threshold: u64,
    s_th: u64,
) -> Vec<(ContentId, PeerId, PeerId)> {
    let mut l = peers.to_vec();
    l.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let n = l.len();
    let mut kept = Vec::new();
    for (i, p) in l.iter().enumerate() {
        let in_light_half = i >= n - n / 2;
        if in_light_half && p.2 < s_th {
            continue;
        }
        kept.push(*p);
    }
    let mut out = Vec::new();
    let k = kept.len();
    for i in 0..k / 2 {
        let a = kept[i];
        let b = kept[k - 1 - i];
        if a.1 - b.1 > threshold && b.2 >= s_th {
            out.push((hottest[&a.0], a.0, b.0));
        }
    }
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn criterion_5() -> Outcome {
    let multiset = [12_000u64, 7000, 4000, 4000, 1500, 0];
    let cfg = BalancingConfig { s_th: 4096, load_diff_threshold: 2000, ..BalancingConfig::default() };
    let (low_disk, high_disk) = (1000u64, 100_000u64);
    let mut cases = 0usize;
    for n in 2..=6 {
        let hot: BTreeMap<PeerId, HotItemList> = (0..n)
            .map(|i| {
                let items = (0..2)
                    .map(|j| HotItem { content: ContentId::from(10 * i + j), accesses: 5 - j as u64, size: 500 })
                    .collect();
                (PeerId::from(i), HotItemList::new(items))
            })
            .collect();
        let hottest: BTreeMap<PeerId, ContentId> = (0..n).map(|i| (PeerId::from(i), ContentId::from(10 * i))).collect();
        for perm in permutations(n) {
            for mask in 0..(1u32 << n) {
                let peers: Vec<(PeerId, u64, u64)> = (0..n)
                    .map(|i| {
                        let disk = if mask >> i & 1 == 1 { high_disk } else { low_disk };
                        (PeerId::from(i), multiset[perm[i]], disk)
                    })
                    .collect();
                let reports: Vec<LoadReport> = peers
                    .iter()
                    .map(|&(peer, load, disk_free)| LoadReport { peer, load, disk_free, free_slots: 1 })
                    .collect();
                let got: Vec<(ContentId, PeerId, PeerId)> = intra_cluster_balance(&reports, &hot, &cfg)
                    .iter()
                    .map(|m| (m.item, m.source, m.target))
                    .collect();
                let want = intra_oracle(&peers, &hottest, cfg.load_diff_threshold, cfg.s_th);
                if got != want {
                    return Err(format!("n={n} loads={peers:?}: got {got:?}, oracle {want:?}"));
                }
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} cases, zero discrepancies"))
}

#[derive(Debug, Clone)]
struct InterCase {
    own: u64,
    neighbors: Vec<Vec<(u64, u64, usize)>>,
    hot_sizes: Vec<u64>,
}

fn inter_case() -> impl Strategy<Value = InterCase> {
    let member = (0u64..5000, 0u64..6000, 0usize..3);
    let neighbors = prop::collection::vec(prop::collection::vec(member, 1..5), 1..7);
    let hot = prop::collection::vec(500u64..3000, 1..7);
    (neighbors, hot, prop_oneof![Just(None), (-3i64..=3).prop_map(Some)], 0u64..40_000).prop_map(
        |(neighbors, hot_sizes, near, random)| {
            let r = neighbors.len() as u64;
            let sum: u64 = neighbors.iter().flatten().map(|m| m.0).sum();
            // sum * 1.1 / r sits on the trigger boundary
            let own = match near {
                Some(d) => ((sum * 11 / (10 * r)) as i64 + d).max(0) as u64,
                None => random,
            };
            InterCase { own, neighbors, hot_sizes }
        },
    )
}

fn criterion_6() -> Outcome {
    let cfg = BalancingConfig::default();
    let triggered = std::cell::Cell::new(0usize);
    let mut r = runner(10_000);
    r.run(&inter_case(), |c| {
        let neighbors: Vec<NeighborLoad> = c
            .neighbors
            .iter()
            .enumerate()
            .map(|(k, ms)| NeighborLoad {
                cluster: ClusterId::from(k + 1),
                members: ms
                    .iter()
                    .enumerate()
                    .map(|(i, &(load, disk_free, free_slots))| LoadReport {
                        peer: PeerId::from(100 * k + i),
                        load,
                        disk_free,
                        free_slots,
                    })
                    .collect(),
            })
            .collect();
        let hot = HotItemList::new(
            c.hot_sizes
                .iter()
                .enumerate()
                .map(|(i, &size)| HotItem { content: ContentId::from(i), accesses: 100 - i as u64, size })
                .collect(),
        );
        let d = inter_cluster_balance(c.own, &neighbors, &hot, &cfg);

        let r = c.neighbors.len() as u128;
        let sum: u128 = c.neighbors.iter().flatten().map(|m| m.0 as u128).sum();
        let fires = 10 * (c.own as u128 * r) > 11 * sum;
        prop_assert_eq!(d.triggered, fires);
        if !fires {
            prop_assert!(d.assignments.is_empty());
            return Ok(());
        }
        triggered.set(triggered.get() + 1);

        let min_size = *c.hot_sizes.iter().min().unwrap();
        let mut willing: Vec<(u64, ClusterId)> = neighbors
            .iter()
            .filter_map(|n| {
                let w: Vec<&LoadReport> =
                    n.members.iter().filter(|m| m.disk_free > min_size && m.free_slots > 0).collect();
                (!w.is_empty()).then(|| (w.iter().map(|m| m.load).sum(), n.cluster))
            })
            .collect();
        willing.sort();
        let m = hot.len();
        let lr = willing.len();
        if lr == 0 {
            prop_assert!(d.assignments.is_empty());
            return Ok(());
        }
        let items: Vec<ContentId> = d.assignments.iter().map(|(h, _)| h.content).collect();
        let expect_items: Vec<ContentId> = hot.items().iter().map(|h| h.content).collect();
        prop_assert_eq!(items, expect_items);
        let mut counts: BTreeMap<ClusterId, usize> = BTreeMap::new();
        for (i, (_, k)) in d.assignments.iter().enumerate() {
            prop_assert_eq!(*k, willing[i % lr].1);
            *counts.entry(*k).or_default() += 1;
        }
        if lr < m {
            let hi = counts.values().max().unwrap();
            let lo = counts.values().min().unwrap();
            prop_assert_eq!(counts.len(), lr);
            prop_assert!(hi - lo <= 1);
        } else {
            prop_assert_eq!(counts.len(), m);
            prop_assert!(counts.values().all(|&n| n == 1));
            let chosen: BTreeSet<ClusterId> = counts.keys().copied().collect();
            let least: BTreeSet<ClusterId> = willing[..m].iter().map(|w| w.1).collect();
            prop_assert_eq!(chosen, least);
        }
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    Ok(format!("10^4 cases ({} triggered), trigger strict and round-robin exact", triggered.get()))
}

fn criterion_7() -> Outcome {
    let topo = build_topology(
        &TopologyConfig {
            n_peers: 8,
            disk_capacity_bytes: AttributeRange::fixed(1_000_000.0),
            replica_slots: 8,
            ..TopologyConfig::default()
        },
        1,
    )
    .map_err(|e| e.to_string())?;
    let input = (
        prop::collection::vec((100u64..5000, 0u64..6), 0..8),
        0u64..6,
        1u64..5,
    );
    let mut r = runner(2_000);
    r.run(&input, |(replicas, origin_hits, alpha)| {
        let catalog: Vec<ContentItem> = (0..8)
            .map(|i| ContentItem::new(ContentId::from(i), PeerId::from(i), 700 + 100 * i as u64))
            .collect();
        let mut map = ReplicaMap::new(&topo, &catalog, &[1.0; 8]).unwrap();
        let host = PeerId(0);
        let mut size_of = BTreeMap::new();
        for (k, &(size, _)) in replicas.iter().enumerate().take(7) {
            let c = ContentId::from(k + 1);
            let t = map.reserve_replica(host, c, size, 1.0).unwrap();
            prop_assert!(map.complete(host, c, t));
            size_of.insert(c, size);
        }
        // the first pass only ends the replicas' grace interval
        prop_assert!(cleanup_replicas(map.store_mut(host), alpha).is_empty());

        for (k, &(_, hits)) in replicas.iter().enumerate().take(7) {
            for _ in 0..hits {
                map.store_mut(host).record_hit(ContentId::from(k + 1));
            }
        }
        for _ in 0..origin_hits {
            map.store_mut(host).record_hit(ContentId(0));
        }
        let free_before = map.store(host).disk_free;
        let deleted = cleanup_replicas(map.store_mut(host), alpha);
        let s = map.store(host);

        let expected: Vec<ContentId> = replicas
            .iter()
            .enumerate()
            .take(7)
            .filter(|(_, &(_, hits))| hits < alpha)
            .map(|(k, _)| ContentId::from(k + 1))
            .collect();
        prop_assert_eq!(&deleted, &expected);
        prop_assert_eq!(s.copy(ContentId(0)).map(|c| c.kind), Some(CopyKind::Origin));
        for (k, &(_, hits)) in replicas.iter().enumerate().take(7) {
            prop_assert_eq!(s.hosts(ContentId::from(k + 1)), hits >= alpha);
        }
        let freed: u64 = deleted.iter().map(|c| size_of[c]).sum();
        prop_assert_eq!(s.disk_free, free_before + freed);
        prop_assert!(s.copies().all(|c| c.window_hits == 0));

        // an interval with no accesses at all removes every replica
        let gone = cleanup_replicas(map.store_mut(host), alpha);
        let s = map.store(host);
        prop_assert_eq!(gone.len() + deleted.len(), size_of.len());
        prop_assert_eq!(s.replica_count(), 0);
        prop_assert!(s.origin().is_some());
        prop_assert_eq!(s.disk_free, s.disk_capacity - 700);
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    Ok("2000 randomized stores: exact deletion set, origins kept, disk restored byte-exact".into())
}

fn criterion_8() -> Outcome {
    let mut hot = scenario(HOTSPOT);
    hot.lb_enabled = false;
    let mut load = scenario(LOAD_SWEEP);
    load.workload.payload_bytes = 1500;
    let cases = [("load sweep point", load), ("hotspot WithoutLB", hot), ("churn", scenario(CHURN))];
    let mut total_lines = 0;
    for (name, cfg) in &cases {
        let once = || -> Result<(String, Vec<String>), String> {
            let r = run_seed(cfg, cfg.seed, cfg.lb_enabled).map_err(|e| e.to_string())?;
            Ok((serde_json::to_string(&r.metrics).unwrap(), r.audit))
        };
        let a = once()?;
        let b = std::thread::scope(|s| s.spawn(once).join().unwrap())?;
        if a != b {
            return Err(format!("{name}: runs differ"));
        }
        if a.1.is_empty() {
            return Err(format!("{name}: empty audit log"));
        }
        total_lines += a.1.len();
    }
    Ok(format!("3 scenarios replayed byte-identical ({total_lines} audit lines)"))
}

fn criterion_9() -> Outcome {
    let mut checked = 0;
    let (mut c1, mut c2) = (0, 0);
    let cfgs = [scenario(LOAD_SWEEP), scenario(HOTSPOT), scenario(CHURN)];
    for cfg in &cfgs {
        for seed in 1..=5 {
            let d = dump_state(cfg, seed).map_err(|e| e.to_string())?;
            let text = serde_json::to_string(&d).unwrap();
            let back: StateDump = serde_json::from_str(&text).map_err(|e| e.to_string())?;
            let v = validate_dump(&back);
            if !v.is_empty() {
                return Err(format!("seed {seed}: {}", v.join("; ")));
            }
            let strong: BTreeSet<PeerId> =
                back.peers.iter().filter(|p| p.label == ClusterLabel::Strong).map(|p| p.peer).collect();
            for s in back.replica_map.stores() {
                for cp in s.copies().filter(|c| c.kind == CopyKind::Replica) {
                    match back.class_map[&cp.content] {
                        ContentClass::Class1 => {
                            assert!(strong.contains(&s.peer));
                            c1 += 1
                        }
                        ContentClass::Class2 => {
                            assert!(!strong.contains(&s.peer));
                            c2 += 1
                        }
                        ContentClass::Unclassified => unreachable!("checker rejects these"),
                    }
                }
            }
            checked += 1;
        }
    }
    if c1 == 0 || c2 == 0 {
        return Err(format!("vacuous: {c1} Class1 and {c2} Class2 replicas"));
    }
    Ok(format!("{checked} dumps clean; {c1} Class1 replicas on strong peers, {c2} Class2 on weak"))
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();

    let start = Instant::now();
    let load = run_sweep(LOAD_SWEEP);
    let secs = start.elapsed().as_secs_f64();
    if let Ok(t) = &load {
        println!("    load sweep (5 seeds, mean):");
        print_table(t);
    }
    results.push((1, "load sweep delay trend", load.as_ref().map_err(Clone::clone).and_then(|t| criterion_1(t, secs))));
    results.push((2, "load sweep throughput", load.as_ref().map_err(Clone::clone).and_then(criterion_2)));

    let hot = run_sweep(HOTSPOT);
    if let Ok(t) = &hot {
        println!("    hotspot duration sweep (5 seeds, mean):");
        print_table(t);
    }
    results.push((3, "hotspot loss over time", hot.as_ref().map_err(Clone::clone).and_then(criterion_3)));
    results.push((4, "weight and partition properties", criterion_4()));
    results.push((5, "intra-cluster oracle equivalence", criterion_5()));
    results.push((6, "inter-cluster trigger and round robin", criterion_6()));
    results.push((7, "cleanup", criterion_7()));
    results.push((8, "determinism", criterion_8()));
    results.push((9, "placement class discipline", criterion_9()));

    let mut failed = 0;
    for (n, name, r) in &results {
        match r {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
