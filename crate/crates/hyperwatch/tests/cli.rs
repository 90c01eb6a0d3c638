//! End-to-end checks of the command line binary: exit codes, artifact
//! files, and the train/detect/diagnose/recommend flow on a tiny series.

use std::path::Path;
use std::process::{Command, Output};

use hyperwatch::series::SensorSeries;

const BIN: &str = env!("CARGO_BIN_EXE_hyperwatch");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("HYPERWATCH_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal kill")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_wavy_csv(path: &Path, len: usize, labels: bool) {
    let names = vec!["pump".into(), "valve".into(), "level".into()];
    let values: Vec<Vec<f64>> = (0..3)
        .map(|i| {
            (0..len)
                .map(|t| 0.5 + 0.3 * ((t as f64 / (7.0 + i as f64)).sin()))
                .collect()
        })
        .collect();
    let l = labels.then(|| {
        (0..len)
            .map(|t| if t >= len - 10 { 1u8 } else { 0u8 })
            .collect()
    });
    SensorSeries::new(names, values, l)
        .unwrap()
        .write_csv(path)
        .unwrap();
}

fn tiny_train_args<'a>(data: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "train", "--data", data, "--out", out, "--w", "4", "--d", "6", "--k", "1", "--epochs",
        "2", "--batch", "8", "--seed", "1",
    ]
}

#[test]
fn full_flow_train_detect_diagnose_recommend() {
    let dir = tempfile::tempdir().unwrap();
    let train_csv = dir.path().join("train.csv");
    let test_csv = dir.path().join("test.csv");
    write_wavy_csv(&train_csv, 90, false);
    write_wavy_csv(&test_csv, 60, true);
    let out_dir = dir.path().join("out");
    let train_s = train_csv.to_str().unwrap();
    let test_s = test_csv.to_str().unwrap();
    let out_s = out_dir.to_str().unwrap();

    let out = run(&tiny_train_args(train_s, out_s));
    assert_eq!(code(&out), 0, "train failed: {}", stderr(&out));
    assert!(stdout(&out).contains("trained 2 epochs"));
    let model = out_dir.join("model.json");
    assert!(model.exists());
    assert!(out_dir.join("loss_history.csv").exists());
    let model_s = model.to_str().unwrap();

    let out = run(&["detect", "--model", model_s, "--data", test_s, "--out", out_s]);
    assert_eq!(code(&out), 0, "detect failed: {}", stderr(&out));
    assert!(stdout(&out).contains("scored 56 steps"));
    assert!(stdout(&out).contains("adjusted:"));
    let report = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 57);
    assert!(report.starts_with("t,label,aggregate,threshold,flag"));

    let out = run(&[
        "diagnose", "--model", model_s, "--data", test_s, "--out", out_s, "--k-hops", "1",
    ]);
    assert_eq!(code(&out), 0, "diagnose failed: {}", stderr(&out));
    assert!(stdout(&out).contains("root: sensor"));
    assert!(out_dir.join("diagnosis.txt").exists());
    let dot = std::fs::read_to_string(out_dir.join("diagnosis.dot")).unwrap();
    assert!(dot.starts_with("digraph"));

    let out = run(&[
        "recommend",
        "--model",
        model_s,
        "--data",
        test_s,
        "--out",
        out_s,
        "--t0",
        "20",
        "--horizon",
        "3",
        "--sensors",
        "0",
        "--population",
        "8",
        "--generations",
        "3",
    ]);
    assert_eq!(code(&out), 0, "recommend failed: {}", stderr(&out));
    assert!(stdout(&out).contains("fitness"));
    let plan = std::fs::read_to_string(out_dir.join("plan.json")).unwrap();
    assert!(plan.contains("\"engineering_values\""));
    assert!(plan.contains("\"pump\""));
}

#[test]
fn missing_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out_s = dir.path().to_str().unwrap().to_string();
    let out = run(&tiny_train_args("/nonexistent/input.csv", &out_s));
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("error:"));
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let train_csv = dir.path().join("train.csv");
    write_wavy_csv(&train_csv, 90, false);
    let train_s = train_csv.to_str().unwrap();
    let out_s = dir.path().to_str().unwrap();

    // k must leave room for the node itself among 3 sensors
    let out = run(&[
        "train", "--data", train_s, "--out", out_s, "--w", "4", "--d", "6", "--k", "3",
        "--epochs", "1",
    ]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));

    // the two positional overrides contradict each other
    let out = run(&[
        "train",
        "--data",
        train_s,
        "--out",
        out_s,
        "--no-positional",
        "--sinusoidal-positional",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("positional"));

    // unknown ablation variant
    let out = run(&[
        "ablate", "--variant", "nonsense", "--data", train_s, "--out", out_s,
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("unknown ablation variant"));

    // clap rejects preset together with config file
    let out = run(&[
        "train", "--data", train_s, "--preset", "synth", "--config", "x.toml",
    ]);
    assert_eq!(code(&out), 2);

    // unknown preset name
    let out = run(&["train", "--data", train_s, "--preset", "nope", "--out", out_s]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("unknown preset"));
}

#[test]
fn labeled_training_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let train_csv = dir.path().join("train.csv");
    write_wavy_csv(&train_csv, 90, true);
    let out = run(&tiny_train_args(
        train_csv.to_str().unwrap(),
        dir.path().to_str().unwrap(),
    ));
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("labeled anomalous"));
}

#[test]
fn sensor_count_mismatch_on_detect_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let train_csv = dir.path().join("train.csv");
    write_wavy_csv(&train_csv, 90, false);
    let out_s = dir.path().to_str().unwrap();
    let out = run(&tiny_train_args(train_csv.to_str().unwrap(), out_s));
    assert_eq!(code(&out), 0, "train failed: {}", stderr(&out));

    // two-sensor file against a three-sensor model
    let narrow = dir.path().join("narrow.csv");
    std::fs::write(&narrow, "a,b\n0.1,0.2\n0.3,0.4\n0.5,0.6\n0.2,0.1\n0.4,0.3\n0.6,0.5\n").unwrap();
    let model = dir.path().join("model.json");
    let out = run(&[
        "detect",
        "--model",
        model.to_str().unwrap(),
        "--data",
        narrow.to_str().unwrap(),
        "--out",
        out_s,
    ]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
}

#[test]
fn synth_respects_out_dir_env() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["synth", "--seed", "3"])
        .env("HYPERWATCH_OUT_DIR", dir.path())
        .output()
        .expect("binary runs");
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let data = dir.path().join("synthetic.csv");
    assert!(data.exists());
    assert!(stdout(&out).contains("600 labeled anomalous"));

    // same seed, explicit --out flag: identical bytes
    let other = dir.path().join("again");
    let out = run(&["synth", "--seed", "3", "--out", other.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        std::fs::read(&data).unwrap(),
        std::fs::read(other.join("synthetic.csv")).unwrap()
    );
}

#[test]
fn ablate_trains_the_variant() {
    let dir = tempfile::tempdir().unwrap();
    let train_csv = dir.path().join("train.csv");
    write_wavy_csv(&train_csv, 90, false);
    let out_s = dir.path().to_str().unwrap();
    let out = run(&[
        "ablate",
        "--variant",
        "no_gating",
        "--data",
        train_csv.to_str().unwrap(),
        "--out",
        out_s,
        "--w",
        "4",
        "--d",
        "6",
        "--k",
        "1",
        "--epochs",
        "2",
        "--batch",
        "8",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("variant: no_gating"));
    assert!(dir.path().join("model.json").exists());
}

#[test]
fn help_lists_subcommands() {
    let out = run(&["--help"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for sub in ["train", "detect", "diagnose", "recommend", "ablate", "synth"] {
        assert!(text.contains(sub), "missing subcommand {sub}");
    }
}
