mod common;

use aligan_core::active::Strategy;
use aligan_core::geodata::csvio::save_survey;
use aligan_core::geodata::synthesize;
use aligan_core::harness::{emit_report, read_metrics, run_al_igan, CsvConfig, DataSource, ExperimentConfig};
use aligan_core::ErrorKind;
use common::tiny_experiment;

fn read_table(path: &std::path::Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn random_sampling_runs_are_reproducible() {
    let cfg = ExperimentConfig {
        strategies: vec![Strategy::Random],
        ..tiny_experiment()
    };
    let a = run_al_igan(&cfg).unwrap();
    let b = run_al_igan(&cfg).unwrap();
    assert_eq!(a.repeats, b.repeats);
    let picks = |m: &aligan_core::harness::RunMetrics| -> Vec<u32> {
        m.repeats
            .iter()
            .flat_map(|r| r.runs[0].rounds.iter().map(|q| q.location_id))
            .collect()
    };
    assert_eq!(picks(&a), picks(&b));
}

#[test]
fn zero_rounds_report_only_the_baseline() {
    let cfg = ExperimentConfig {
        rounds: 0,
        strategies: vec![Strategy::Entropy],
        ..tiny_experiment()
    };
    let m = run_al_igan(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let f = emit_report(&m, &dir.path().join("not/yet/there")).unwrap();
    let (header, rows) = read_table(&f.mse_table);
    assert_eq!(header, ["round", "EUS"]);
    assert_eq!(rows.len(), 1);
    assert_eq!(std::fs::read_to_string(&f.gain_table).unwrap(), "round,EUS\n");
}

#[test]
fn gains_recompute_from_the_emitted_mse_table() {
    let m = run_al_igan(&tiny_experiment()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let f = emit_report(&m, dir.path()).unwrap();
    let (mh, mse) = read_table(&f.mse_table);
    let (gh, gain) = read_table(&f.gain_table);
    assert_eq!(mh, gh);
    assert_eq!(mse.len(), 3);
    assert_eq!(gain.len(), 2);
    for t in 1..mse.len() {
        for c in 1..mh.len() {
            let want = (mse[t - 1][c] - mse[t][c]) / mse[t - 1][c];
            assert!((gain[t - 1][c] - want).abs() < 1e-12, "round {t} column {}", mh[c]);
        }
    }
    let back = read_metrics(&f.metrics).unwrap();
    assert_eq!(back.repeats, m.repeats);
}

#[test]
fn missing_inputs_are_classified() {
    let err = ExperimentConfig::load(std::path::Path::new("/nonexistent/dir/config.toml")).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Config);

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_experiment();
    cfg.data.source = DataSource::Csv;
    cfg.data.csv = Some(CsvConfig {
        records: dir.path().join("missing/records.csv"),
        labels: dir.path().join("missing/labels.csv"),
        locations: None,
        pool_locations: vec![1],
        window: 0.3,
        test_fraction: 0.25,
        validation_fraction: 0.25,
    });
    assert_eq!(run_al_igan(&cfg).unwrap_err().kind(), ErrorKind::Data);

    let bad = ExperimentConfig::from_toml("rounds = 2\nunknown_key = 1\n").unwrap_err();
    assert_eq!(bad.kind(), ErrorKind::Config);
}

#[test]
fn csv_surveys_drive_the_same_loop() {
    let mut cfg = tiny_experiment();
    cfg.strategies = vec![Strategy::Entropy];
    cfg.repeats = 1;
    let survey = synthesize(&cfg.data.synthetic).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = save_survey(dir.path(), &survey).unwrap();
    let synthetic = run_al_igan(&cfg).unwrap();

    cfg.data.source = DataSource::Csv;
    cfg.data.csv = Some(CsvConfig {
        records: files.records,
        labels: files.labels,
        locations: Some(files.locations),
        pool_locations: Vec::new(),
        window: survey.window,
        test_fraction: cfg.data.synthetic.test_fraction,
        validation_fraction: cfg.data.synthetic.validation_fraction,
    });
    let from_csv = run_al_igan(&cfg).unwrap();
    assert_eq!(from_csv.repeats, synthetic.repeats);
}

#[test]
fn shipped_configs_load_and_validate() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path).unwrap().validate().unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 2);
}
