use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, Discrete, Exp};
use uldag::netsim::{
    gen_topology, run_sim, ConsensusClients, EventKind, Protocol, SimConfig, TraceLevel,
};

fn solo(protocol: Protocol, lambda: f64, sim_time: f64, seed: u64) -> SimConfig {
    SimConfig {
        n: 1,
        hashrates: vec![1.0],
        ..SimConfig::new(protocol, lambda, sim_time, seed)
    }
}

#[test]
fn zero_time_yields_only_genesis() {
    let r = run_sim(&SimConfig::new(Protocol::Dag, 1.0, 0.0, 3)).unwrap();
    assert_eq!(r.blocks.len(), 1);
    assert_eq!(r.observer_dag.len(), 1);
    assert_eq!(r.total_created(), 0);
}

#[test]
fn single_miner_block_count_is_poisson() {
    let r = run_sim(&solo(Protocol::Chain, 1.0, 1000.0, 5)).unwrap();
    let n = r.total_created() as f64;
    assert!((n - 1000.0).abs() <= 4.0 * 1000f64.sqrt(), "{n} blocks");
    assert_eq!(r.main_chain().len() as f64, n + 1.0);
}

#[test]
fn mining_gaps_are_exponential() {
    let r = run_sim(&solo(Protocol::Chain, 0.5, 4000.0, 9)).unwrap();
    let times: Vec<f64> = r
        .blocks
        .iter()
        .skip(1)
        .map(|b| b.block.create_time)
        .collect();
    let mut gaps: Vec<f64> = std::iter::once(times[0])
        .chain(times.windows(2).map(|w| w[1] - w[0]))
        .collect();
    gaps.sort_by(f64::total_cmp);
    let exp = Exp::new(0.5).unwrap();
    let m = gaps.len() as f64;
    let ks = gaps
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let f = exp.cdf(*g);
            (f - i as f64 / m).abs().max(((i + 1) as f64 / m - f).abs())
        })
        .fold(0.0, f64::max);
    // 1% critical value of the one-sample KS statistic
    assert!(ks < 1.63 / m.sqrt(), "KS statistic {ks} over {m} gaps");
}

#[test]
#[allow(clippy::needless_range_loop)]
fn in_degrees_follow_the_binomial() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, peers) = (100u32, 8u32);
    let mut counts = vec![0u64; n as usize];
    let graphs = 50;
    for _ in 0..graphs {
        let topo = gen_topology(n, peers, &mut rng);
        assert!(topo.strongly_connected());
        for (i, out) in topo.peers.iter().enumerate() {
            assert_eq!(out.len(), peers as usize);
            assert!(!out.contains(&(i as u32)));
            assert_eq!(out.iter().collect::<BTreeSet<_>>().len(), out.len());
        }
        for d in topo.in_degrees() {
            counts[d] += 1;
        }
    }
    let binom = Binomial::new(peers as f64 / (n - 1) as f64, (n - 1) as u64).unwrap();
    let total = (graphs * n) as f64;
    // bins 0..=4, 5, ..., 12, 13+
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let lo: f64 = (0..=4).map(|k| binom.pmf(k)).sum();
    bins.push((counts[..=4].iter().sum::<u64>() as f64, lo * total));
    for k in 5..=12 {
        bins.push((counts[k] as f64, binom.pmf(k as u64) * total));
    }
    let hi = 1.0 - bins.iter().map(|b| b.1).sum::<f64>() / total;
    bins.push((counts[13..].iter().sum::<u64>() as f64, hi * total));
    let chi2: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let crit = ChiSquared::new((bins.len() - 1) as f64)
        .unwrap()
        .inverse_cdf(0.999);
    assert!(chi2 < crit, "chi2 {chi2} >= {crit}");
}

#[test]
fn runs_are_deterministic() {
    let cfg = SimConfig {
        trace: TraceLevel::Full,
        ..SimConfig::new(Protocol::Dag, 1.0, 60.0, 21)
    };
    let a = run_sim(&cfg).unwrap();
    let b = run_sim(&cfg).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.blocks, b.blocks);
    assert_eq!(a.observer_arrivals, b.observer_arrivals);
    let c = run_sim(&SimConfig { seed: 22, ..cfg }).unwrap();
    assert_ne!(a.trace, c.trace);
}

#[test]
fn single_miner_dag_is_a_chain() {
    let r = run_sim(&solo(Protocol::Dag, 1.0, 200.0, 4)).unwrap();
    for b in r.observer_dag.blocks().filter(|b| !b.is_genesis()) {
        assert_eq!(b.parents.len(), 1);
    }
    assert_eq!(
        r.observer_dag.max_height() as usize + 1,
        r.observer_dag.len()
    );
}

#[test]
fn blocks_propagate_and_full_trace_is_ordered() {
    let cfg = SimConfig {
        trace: TraceLevel::Full,
        ..SimConfig::new(Protocol::Dag, 0.5, 120.0, 8)
    };
    let r = run_sim(&cfg).unwrap();
    // the run stops at sim_time, so only blocks with D to spare must be everywhere
    let d = cfg.delay_diameter().unwrap().d;
    for rec in r
        .blocks
        .iter()
        .filter(|b| b.broadcast_time + d < cfg.sim_time)
    {
        assert_eq!(
            rec.receivers, cfg.n,
            "block {} reached {} nodes",
            rec.block.id, rec.receivers
        );
    }
    let held: usize = r.known_counts.iter().sum();
    assert_eq!(
        held,
        r.blocks.iter().map(|b| b.receivers as usize).sum::<usize>()
    );
    assert_eq!(r.observer_dag.len(), r.observer_arrivals.len() + 1);
    assert_eq!(r.total_created() as usize + 1, r.blocks.len());

    let keys: Vec<(f64, u64)> = r.trace.iter().map(|t| (t.t, t.seq)).collect();
    assert!(keys
        .windows(2)
        .all(|w| w[0].0 < w[1].0 || (w[0].0 == w[1].0 && w[0].1 < w[1].1)));
    let adds = r
        .trace
        .iter()
        .filter(|t| t.kind == EventKind::AddBlock)
        .count();
    assert_eq!(adds, held - cfg.n as usize);
    let mined = r
        .trace
        .iter()
        .filter(|t| t.kind == EventKind::MineBlock)
        .count();
    assert_eq!(mined as u64, r.total_created());
}

#[test]
fn propagation_stays_within_delay_diameter() {
    let cfg = SimConfig::new(Protocol::Chain, 1.0 / 30.0, 3600.0, 12);
    let r = run_sim(&cfg).unwrap();
    let d = cfg.delay_diameter().unwrap().d;
    let worst = r.max_propagation_delay().unwrap();
    assert!(worst <= d, "worst propagation {worst} > D {d}");
}

#[test]
fn all_clients_converge_on_the_same_blue_list() {
    let cfg = SimConfig {
        consensus_clients: ConsensusClients::All,
        n: 20,
        ..SimConfig::new(Protocol::Dag, 0.5, 150.0, 31)
    };
    let r = run_sim(&cfg).unwrap();
    assert_eq!(r.client_blue_lists.len(), 20);
    let observer = r.consensus.as_ref().unwrap().blue_list();
    assert!(observer.decided_height() > 0);
    for (i, bl) in r.client_blue_lists.iter().enumerate() {
        let h = bl.decided_height().min(observer.decided_height());
        for height in 1..=h {
            let a: BTreeSet<_> = bl.confirmed_at(height).collect();
            let b: BTreeSet<_> = observer.confirmed_at(height).collect();
            assert_eq!(a, b, "client {i} height {height}");
        }
    }
}

#[test]
fn attacker_with_no_hashrate_withholds_nothing() {
    let cfg = SimConfig::new(Protocol::Dag, 1.0, 60.0, 2).with_attacker(0, 0.0, 3, 5);
    let r = run_sim(&cfg).unwrap();
    let attack = r.attack.unwrap();
    assert!(attack.secret.is_empty());
    assert!(r.blocks.iter().all(|b| !b.secret));
    assert_eq!(r.created_per_miner[0], 0);
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = SimConfig::new(Protocol::Dag, 1.0, 7200.0, 77).with_attacker(0, 0.33, 3, 5);
    let back = SimConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(cfg, back);
    assert!(SimConfig::from_toml("protocol = \"dag\"\nbogus = 1\n").is_err());
}
