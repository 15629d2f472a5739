use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
strategies = ["RS", "EUS", "QBC"]
rounds = 1
repeats = 1
seed = 3
committee_size = 2
execution = "sequential"

[data.synthetic]
tunnel_length = 30.0
train_locations = 12
pool_locations = 4
d_x = 6
d_y = 3
layers = 3

[model]
d_x = 6
d_y = 3
heads = 2
d_k = 2
gen_hidden = [5, 4]
disc_hidden = [5, 4]

[train.pretrain]
iterations = 10

[train.initial]
iterations = 5
batch_size = 16

[train.incremental]
iterations = 3
"#;

fn aligan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aligan"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn all_verbs_succeed_on_a_tiny_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();

    let synth = aligan(&["synth", "--config", &cfg, "--out", &p("data")]);
    assert_eq!(code(&synth), 0, "{}", String::from_utf8_lossy(&synth.stderr));
    for f in [
        "records.csv",
        "labels.csv",
        "locations.csv",
        "profile.json",
        "config.toml",
    ] {
        assert!(dir.path().join("data").join(f).exists(), "{f}");
    }

    let train = aligan(&["train", "--config", &cfg, "--out", &p("train")]);
    assert_eq!(code(&train), 0, "{}", String::from_utf8_lossy(&train.stderr));
    for f in [
        "checkpoint.json",
        "normalizer.json",
        "traces/pretrain.csv",
        "traces/initial.csv",
        "train_summary.json",
    ] {
        assert!(dir.path().join("train").join(f).exists(), "{f}");
    }

    let run = aligan(&["run", "--config", &cfg, "--out", &p("run")]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    for f in [
        "mse_table.csv",
        "gain_table.csv",
        "query_log.csv",
        "config.toml",
        "metrics.json",
        "traces/seed3_EUS_round1.csv",
    ] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }
    assert!(String::from_utf8_lossy(&run.stdout).contains("EUS: MSE_0"));

    let report = aligan(&["report", "--metrics", &p("run/metrics.json"), "--out", &p("again")]);
    assert_eq!(code(&report), 0);
    for f in ["mse_table.csv", "gain_table.csv", "query_log.csv"] {
        assert_eq!(
            std::fs::read(dir.path().join("run").join(f)).unwrap(),
            std::fs::read(dir.path().join("again").join(f)).unwrap()
        );
    }
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("bogus = 1\n{TINY}"));
    let out = aligan(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
    assert_eq!(code(&aligan(&["run", "--strategy", "XYZ"])), 2);
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &TINY.replace(
            "[train.pretrain]",
            "[train]\ndivergence_threshold = 1e-12\n\n[train.pretrain]",
        ),
    );
    let out = aligan(&[
        "train",
        "--config",
        &cfg,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_data_files_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace(
        "[data.synthetic]",
        "[data]\nsource = \"csv\"\n\n[data.csv]\nrecords = \"nope/records.csv\"\nlabels = \"nope/labels.csv\"\npool_locations = [1]\n\n[data.synthetic]",
    );
    let cfg = write_config(dir.path(), &text);
    let out = aligan(&[
        "train",
        "--config",
        &cfg,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    let bad_metrics = dir.path().join("metrics.json");
    std::fs::write(&bad_metrics, "{}").unwrap();
    assert_eq!(
        code(&aligan(&["report", "--metrics", bad_metrics.to_str().unwrap()])),
        4
    );
}
