use std::collections::BTreeMap;
use std::fs;

use uldag::analysis::{
    analyze, analyze_run_dir, read_run_dir, replay, write_run_dir, AnalysisError, FairnessReport,
    RunView,
};
use uldag::dag::serialize_dag;
use uldag::netsim::{run_sim, Protocol, SimConfig};

fn attacked() -> SimConfig {
    SimConfig::new(Protocol::Dag, 0.5, 300.0, 14).with_attacker(0, 0.33, 3, 5)
}

#[test]
fn replay_reproduces_the_simulated_consensus() {
    let r = run_sim(&attacked()).unwrap();
    let rep = replay(&RunView::of(&r)).unwrap();
    let live = r.consensus.as_ref().unwrap();
    let replayed = rep.engine.as_ref().unwrap();
    assert_eq!(live.blue_list(), replayed.blue_list());
    assert_eq!(live.decisions(), replayed.decisions());
}

#[test]
fn chain_replay_finds_the_same_head() {
    let r = run_sim(&SimConfig::new(Protocol::Chain, 1.0 / 30.0, 3600.0, 5)).unwrap();
    let rep = replay(&RunView::of(&r)).unwrap();
    assert_eq!(rep.head, r.observer_head);
}

#[test]
fn run_directory_round_trip() {
    let r = run_sim(&attacked()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = write_run_dir(dir.path(), &r).unwrap();

    let files = read_run_dir(dir.path()).unwrap();
    assert_eq!(files.manifest.config, r.config);
    assert_eq!(serialize_dag(&files.dag), serialize_dag(&r.observer_dag));
    assert_eq!(files.arrivals, r.observer_arrivals);

    let (again, _) = analyze_run_dir(dir.path()).unwrap();
    assert_eq!(again, written);
    assert_eq!(again, analyze(&RunView::of(&r)).unwrap());
}

#[test]
fn tampered_metrics_are_reported() {
    let r = run_sim(&SimConfig::new(Protocol::Dag, 0.5, 120.0, 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run_dir(dir.path(), &r).unwrap();
    let path = dir.path().join("metrics/fairness.csv");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("99,0,0,0,0\n");
    fs::write(&path, text).unwrap();
    match analyze_run_dir(dir.path()) {
        Err(AnalysisError::Mismatch { file }) => assert_eq!(file, "fairness.csv"),
        other => panic!("expected mismatch, got {other:?}"),
    }
}

#[test]
fn csv_files_match_their_headers() {
    let r = run_sim(&attacked()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run_dir(dir.path(), &r).unwrap();
    let expected = [
        ("summary.csv", "name,value"),
        ("fairness.csv", "miner,hashrate,rewarded,reward_share,deviation"),
        ("growth.csv", "t,height,bound_height"),
        ("decisions.csv", "height,confirmed,rejected,window_size,lambda2,conductance,fallback,degenerate"),
        (
            "exclusion.csv",
            "height,honest_confirmed,honest_rejected,attacker_confirmed,attacker_rejected,attacker_late,undecided",
        ),
    ];
    for (name, header) in expected {
        let text = fs::read_to_string(dir.path().join("metrics").join(name)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(header), "{name}");
        let cols = header.split(',').count();
        for line in lines {
            assert_eq!(line.split(',').count(), cols, "{name}: {line}");
        }
    }
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("t,seq,kind,src,dst,block_id"));
    assert!(trace.lines().skip(1).all(|l| l.split(',').count() == 6));
}

#[test]
fn fairness_pools_counts_across_runs() {
    let shares = [0.5, 0.5];
    let a = FairnessReport::from_counts(&shares, &BTreeMap::from([(0, 3), (1, 1)]));
    let b = FairnessReport::from_counts(&shares, &BTreeMap::from([(0, 1), (1, 3)]));
    assert!((a.max_deviation() - 0.25).abs() < 1e-12);
    let pooled = FairnessReport::pooled(&[a, b]);
    assert_eq!(pooled.total_rewarded, 8);
    assert!(pooled.max_deviation() < 1e-12);
}
