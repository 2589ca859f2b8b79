use std::fs;
use std::path::Path;

use linemon::eval::evaluate;
use linemon::experiment::{prepare, read_bin_artifact, run_pipeline, simulate, train_full, ExperimentConfig, RunOptions, Stage, TauSpec};
use linemon::dataset::FeatureKind;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        case: "case9".into(),
        steps: 1200,
        test_count: 20,
        out_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn identical_configs_give_identical_artifacts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_pipeline(&small(a.path()), Stage::Eval, RunOptions::default()).unwrap();
    let rb = run_pipeline(&small(b.path()), Stage::Eval, RunOptions::default()).unwrap();
    for name in ["report.json", "report.md", "model.bin", "train.bin", "test.bin", "catalog.json"] {
        assert_eq!(read(&ra.dir, name), read(&rb.dir, name), "{name}");
    }
}

#[test]
fn second_run_reuses_and_force_recomputes() {
    let out = tempfile::tempdir().unwrap();
    let cfg = small(out.path());
    let first = run_pipeline(&cfg, Stage::Train, RunOptions::default()).unwrap();
    assert!(!first.reused);
    let again = run_pipeline(&cfg, Stage::Simulate, RunOptions::default()).unwrap();
    assert!(again.reused);
    assert_eq!(again.manifest.stage, Stage::Train);
    let forced = run_pipeline(&cfg, Stage::Train, RunOptions { force: true, ..RunOptions::default() }).unwrap();
    assert!(!forced.reused);
    assert_eq!(read(&first.dir, "model.bin"), read(&forced.dir, "model.bin"));
}

#[test]
fn staged_runs_compose_to_a_one_shot_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let staged = small(a.path());
    for stage in [Stage::Synth, Stage::Simulate, Stage::Train, Stage::Eval] {
        run_pipeline(&staged, stage, RunOptions::default()).unwrap();
    }
    let once = run_pipeline(&small(b.path()), Stage::Eval, RunOptions::default()).unwrap();
    let dir_a = a.path().join(once.dir.file_name().unwrap());
    for name in ["report.json", "model.bin", "test.bin", "manifest.json"] {
        assert_eq!(read(&dir_a, name), read(&once.dir, name), "{name}");
    }
}

#[test]
fn tau_grid_writes_one_placement_per_value() {
    let out = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        tau: TauSpec::Grid(vec![1e-3, 1e-2, 1e-1]),
        num_pmus: Some(3),
        ..small(out.path())
    };
    let run = run_pipeline(&cfg, Stage::Eval, RunOptions::default()).unwrap();
    for label in ["tau1e-3", "tau1e-2", "tau1e-1"] {
        for stem in ["placement", "model", "report"] {
            let ext = if stem == "model" { "bin" } else { "json" };
            assert!(run.dir.join(format!("{stem}-{label}.{ext}")).is_file(), "{stem}-{label}");
        }
    }
    assert_eq!(run.manifest.placements.len(), 3);
    assert_eq!(run.manifest.reports.len(), 3);
    for p in &run.manifest.placements {
        assert!(p.selected_buses.len() <= 3);
        assert!(p.selected_buses.contains(&1), "reference bus id 1 is forced");
    }
}

#[test]
fn failing_stage_leaves_a_marker_that_success_clears() {
    let out = tempfile::tempdir().unwrap();
    let bad = ExperimentConfig {
        steps: 60,
        test_count: 40,
        ..small(out.path())
    };
    let err = run_pipeline(&bad, Stage::Eval, RunOptions::default()).unwrap_err();
    assert_eq!(err.stage, "simulate");
    assert_eq!(err.exit_code(), 2, "too few timepoints for the requested counts is a config error");
    let dir = linemon::experiment::run_dir(&bad);
    assert!(dir.join("simulate.failed").is_file());
    assert!(!dir.join("manifest.json").exists());

    let good = small(out.path());
    let dir = linemon::experiment::run_dir(&good);
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("train.failed"), "stale").unwrap();
    run_pipeline(&good, Stage::Train, RunOptions::default()).unwrap();
    assert!(!dir.join("train.failed").exists());
}

#[test]
fn evaluation_ignores_test_order() {
    let out = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        feature_kind: FeatureKind::Extended,
        ..small(out.path())
    };
    let prep = prepare(&cfg).unwrap();
    let sim = simulate(&cfg, &prep).unwrap();
    let model = train_full(&cfg, &prep, &sim).unwrap();
    let base = evaluate(&model.beta, &sim.test).unwrap();
    let mut rows: Vec<usize> = (0..sim.test.len()).collect();
    for seed in 0..3 {
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        assert_eq!(evaluate(&model.beta, &sim.test.select_rows(&rows)).unwrap(), base);
    }
    let run = run_pipeline(&cfg, Stage::Train, RunOptions::default()).unwrap();
    let cached = read_bin_artifact(&run.dir.join("model.bin")).unwrap();
    assert_eq!(cached, model.to_bytes());
}
