//! Re-derives generated topologies from an independent ChaCha8 stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use replsim::topology::{build_topology, AttributeRange, TopologyConfig};
use replsim::PeerId;

fn draw(rng: &mut ChaCha8Rng, r: AttributeRange) -> f64 {
    r.min + (r.max - r.min) * rng.random::<f64>()
}

#[test]
fn attributes_match_an_independent_replay() {
    let cfg = TopologyConfig {
        n_peers: 12,
        departure_prob: AttributeRange::new(0.0, 0.5),
        ..TopologyConfig::default()
    };
    let seed = 2024;
    let t = build_topology(&cfg, seed).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let mut up = Vec::new();
    let mut cpu = Vec::new();
    let mut mem = Vec::new();
    let mut lat = Vec::new();
    for i in 0..cfg.n_peers {
        let p = PeerId::from(i);
        let u = draw(&mut rng, cfg.up_bps);
        let c = draw(&mut rng, cfg.cpu);
        let m = draw(&mut rng, cfg.mem);
        let a_up = draw(&mut rng, cfg.access_delay_ms);
        let a_down = draw(&mut rng, cfg.access_delay_ms);
        let disk = draw(&mut rng, cfg.disk_capacity_bytes).round() as u64;
        let dep = draw(&mut rng, cfg.departure_prob);

        let node = t.peer(p).unwrap();
        assert_eq!(node.raw_up_bps, u);
        assert_eq!(node.raw_down_bps, u * cfg.down_up_ratio);
        assert_eq!(t.access_up_ms(p).unwrap(), a_up);
        assert_eq!(t.access_down_ms(p).unwrap(), a_down);
        assert_eq!(node.disk_capacity, disk);
        assert_eq!(node.disk_free, disk);
        assert_eq!(node.departure_prob, dep);
        up.push(u);
        cpu.push(c);
        mem.push(m);
        lat.push(a_up + a_down);
    }
    for i in 0..cfg.n_peers {
        for j in (i + 1)..cfg.n_peers {
            let d = draw(&mut rng, cfg.overlay_delay_ms);
            assert_eq!(t.overlay_matrix()[i][j], d);
            assert_eq!(t.overlay_matrix()[j][i], d);
        }
    }

    let max = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max);
    for (i, node) in t.peers().iter().enumerate() {
        assert_eq!(node.up_bw, up[i] / max(&up));
        assert_eq!(node.cpu, cpu[i] / max(&cpu));
        assert_eq!(node.mem, mem[i] / max(&mem));
        assert_eq!(node.access_latency, lat[i] / max(&lat));
    }
}

#[test]
fn uplink_draws_are_uniform_over_the_range() {
    let cfg = TopologyConfig { n_peers: 2000, ..TopologyConfig::default() };
    let t = build_topology(&cfg, 5).unwrap();
    let bins = 10;
    let mut counts = vec![0usize; bins];
    let span = cfg.up_bps.max - cfg.up_bps.min;
    for p in t.peers() {
        let u = (p.raw_up_bps - cfg.up_bps.min) / span;
        assert!((0.0..1.0).contains(&u));
        counts[(u * bins as f64) as usize] += 1;
    }
    let expected = cfg.n_peers as f64 / bins as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 9 degrees of freedom, 0.999 quantile
    assert!(chi2 < 27.88, "chi2 {chi2}, counts {counts:?}");
}

#[test]
fn different_seeds_differ() {
    let cfg = TopologyConfig::default();
    assert_ne!(build_topology(&cfg, 1).unwrap(), build_topology(&cfg, 2).unwrap());
}
