use std::fs;

use proptest::prelude::*;
use vfs_core::model::{load_checkpoint, save_checkpoint, train_step, SiameseState};
use vfs_core::video::{GenSpec, SampleMode};
use vfs_core::Error;
use vfs_harness::{read_reports, run_ablation, run_experiment, Axis, Datasets, RunConfig};

fn tiny() -> RunConfig {
    let mut cfg = RunConfig {
        seeds: vec![1],
        checkpoint_every: 2,
        ..RunConfig::default()
    };
    cfg.data.corpus_clips = 6;
    cfg.data.eval = GenSpec {
        num_frames: 6,
        ..GenSpec::default()
    };
    cfg.data.eval_clips = 2;
    cfg.train.batch_size = 4;
    cfg.train.bank_size = 8;
    cfg.train.steps = 3;
    cfg
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let mut cfg = tiny();
    cfg.train.sampling.mode = SampleMode::Continuous;
    cfg.train.sampling.delta = 4;
    cfg.eval.tracker.scales = vec![1.0];
    let text = cfg.to_toml().unwrap();
    let back = RunConfig::from_toml(&text).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
    assert!(matches!(RunConfig::from_toml("[train]\nn_frames = 3"), Err(Error::Config(_))));
    assert!(matches!(RunConfig::from_toml("seeds = []"), Err(Error::Config(_))));
    assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn arbitrary_configs_round_trip(
        steps in 0u64..10_000,
        lr in 0.0f64..1.0,
        tau in 0.01f64..1.0,
        n in prop::sample::select(vec![2usize, 4, 8]),
        seeds in prop::collection::vec(0u64..1_000_000, 1..5),
        distant in any::<bool>(),
        color in any::<bool>(),
        topk in 1usize..30,
    ) {
        let mut cfg = RunConfig::default();
        cfg.train.steps = steps;
        cfg.train.sgd.base_lr = lr;
        cfg.train.tau = tau;
        cfg.train.n_frames = n;
        cfg.seeds = seeds;
        cfg.train.sampling.mode = if distant { SampleMode::Distant } else { SampleMode::Continuous };
        cfg.train.augment.color.enabled = color;
        cfg.eval.propagation.topk = topk;
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn zero_steps_reports_the_random_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.train.steps = 0;
    let report = run_experiment(&cfg, dir.path()).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0].steps, 0);
    assert!(report.rows[0].losses.is_empty());
    let m = &report.rows[0].metrics;
    assert!((0.0..=1.0).contains(&m.j_mean) && (0.0..=1.0).contains(&m.precision));
    let state = load_checkpoint(dir.path().join("ckpt/seed-1.vfsc")).unwrap();
    assert_eq!(state.step, 0);
}

#[test]
fn same_config_twice_gives_identical_reports() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = tiny();
    let ra = run_experiment(&cfg, a.path()).unwrap();
    let rb = run_experiment(&cfg, b.path()).unwrap();
    assert!(ra.same_results(&rb));
    assert_eq!(
        fs::read_to_string(a.path().join("metrics.csv")).unwrap(),
        fs::read_to_string(b.path().join("metrics.csv")).unwrap()
    );
    // A rerun in place resumes from the final checkpoint and appends an
    // identical report.
    let again = run_experiment(&cfg, a.path()).unwrap();
    assert!(again.same_results(&ra));
    assert_eq!(read_reports(a.path()).unwrap().len(), 2);
}

#[test]
fn three_seeds_give_three_rows_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.seeds = vec![1, 2, 3];
    let report = run_experiment(&cfg, dir.path()).unwrap();
    assert_eq!(report.rows.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![1, 2, 3]);
    let js: Vec<f64> = report.rows.iter().map(|r| r.metrics.j_mean).collect();
    let mean = js.iter().sum::<f64>() / 3.0;
    let std = (js.iter().map(|j| (j - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
    assert!((report.summary.mean.j_mean - mean).abs() < 1e-12);
    assert!((report.summary.std.j_mean - std).abs() < 1e-12);
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 3);
    assert!(dir.path().join("config.snapshot").exists());
}

#[test]
fn interrupted_run_resumes_to_the_same_result() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = tiny();
    cfg.train.steps = 6;
    let straight = run_experiment(&cfg, a.path()).unwrap();

    // State of a crash after step 3 with the last checkpoint at step 2.
    let data = Datasets::generate(&cfg.data).unwrap();
    let mut state = SiameseState::new(&cfg.model, &cfg.train, 1).unwrap();
    for _ in 0..2 {
        train_step(&mut state, &data.corpus, &cfg.train).unwrap();
    }
    fs::create_dir_all(b.path().join("ckpt")).unwrap();
    fs::create_dir_all(b.path().join("logs")).unwrap();
    save_checkpoint(&state, b.path().join("ckpt/seed-1.vfsc")).unwrap();
    let mut log = String::from("step,lr,loss\n");
    for p in &straight.rows[0].losses[..3] {
        log.push_str(&format!("{},{},{}\n", p.step, p.lr, p.loss));
    }
    fs::write(b.path().join("logs/seed-1-loss.csv"), log).unwrap();

    let resumed = run_experiment(&cfg, b.path()).unwrap();
    assert!(resumed.same_results(&straight));
}

#[test]
fn divergence_leaves_a_marker_and_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.train.sgd.base_lr = 1e12;
    cfg.train.steps = 50;
    let err = run_experiment(&cfg, dir.path()).unwrap_err();
    assert!(err.is_numeric(), "{}", err);
    let marker = fs::read_to_string(dir.path().join("logs/FAILED")).unwrap();
    assert!(marker.contains("seed 1"));
    let state = load_checkpoint(dir.path().join("ckpt/seed-1.vfsc")).unwrap();
    assert!(state.step < 50);
    assert!(read_reports(dir.path()).unwrap().is_empty());
}

#[test]
fn snapshot_of_another_config_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    run_experiment(&cfg, dir.path()).unwrap();
    let mut other = cfg.clone();
    other.train.tau = 0.3;
    assert!(matches!(run_experiment(&other, dir.path()), Err(Error::Config(_))));
}

#[test]
fn ablation_shapes() {
    let base = tiny();
    let labels = |a: Axis| a.cells(&base).into_iter().map(|(l, _)| l.join("/")).collect::<Vec<_>>();
    assert_eq!(labels(Axis::FrameInterval), ["0", "2", "4", "8", "16", "32", "D"]);
    assert_eq!(labels(Axis::FrameNum), ["2", "4", "8"]);
    assert_eq!(labels(Axis::Negatives), ["no/no", "no/yes", "yes/no", "yes/yes"]);
    assert_eq!(labels(Axis::ColorAug), ["no", "yes"]);
    assert_eq!(labels(Axis::DifferentFrame), ["no", "yes"]);
    for axis in Axis::ALL {
        assert_eq!(Axis::parse(axis.name()).unwrap(), axis);
    }
    assert!(matches!(Axis::parse("depth"), Err(Error::Config(_))));
}

#[test]
fn ablation_cell_equals_a_standalone_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = tiny();
    base.train.steps = 2;
    let table = run_ablation(Axis::FrameNum, &base, dir.path()).unwrap();
    assert_eq!(table.rows.len(), 3);
    for name in ["table.md", "table.csv", "table.json"] {
        assert!(dir.path().join("frame_num").join(name).exists());
    }
    let (labels, mut cell) = Axis::FrameNum.cells(&base).remove(1);
    cell.name = format!("frame_num={}", labels.join("/"));
    let alone = tempfile::tempdir().unwrap();
    let single = run_experiment(&cell, alone.path()).unwrap();
    let in_matrix = read_reports(dir.path().join("frame_num").join("4")).unwrap().remove(0);
    assert!(single.same_results(&in_matrix), "{:#?}\n{:#?}", single, in_matrix);
    assert_eq!(table.rows[1].summary, single.summary);
    assert_eq!(table.rows[1].config_hash, single.config_hash);
}
