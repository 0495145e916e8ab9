use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cropda::io::report::RunReport;

const SMALL_CONFIG: &str = "format_version = 1
preset = rice
seed = 3
experiment.seasons = 8
lstm.epochs = 5
lstm.hidden = 4
";

fn cropda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cropda")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cropda(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("run.conf");
    std::fs::write(&config, SMALL_CONFIG).unwrap();
    Workspace { _dir: dir, root, config }
}

#[test]
fn full_round_trip() {
    let w = workspace();
    let sim = w.root.join("sim");
    ok(&["--config", s(&w.config), "--out-dir", s(&sim), "simulate", "--count", "2"]);
    for season in ["season_000", "season_001"] {
        for f in ["weather.csv", "truth.csv", "observations.csv"] {
            assert!(sim.join(season).join(f).is_file(), "{season}/{f}");
        }
    }
    let weights = w.root.join("emulator.lstm");
    ok(&["--config", s(&w.config), "train", "--output", s(&weights)]);
    assert!(weights.is_file());
    assert!(w.root.join("emulator.training.json").is_file());

    let mut reports = Vec::new();
    for season in ["season_000", "season_001"] {
        let d = sim.join(season);
        let report = w.root.join(format!("{season}.json"));
        ok(&[
            "--config",
            s(&w.config),
            "--method",
            "open-loop,enkf,enkf-lstm",
            "assimilate",
            "--weather",
            s(&d.join("weather.csv")),
            "--observations",
            s(&d.join("observations.csv")),
            "--truth",
            s(&d.join("truth.csv")),
            "--weights",
            s(&weights),
            "--output",
            s(&report),
        ]);
        let parsed = RunReport::read(&report).unwrap();
        assert_eq!(parsed.days.len(), 168);
        assert!(parsed.days.iter().all(|d| d.enkf.is_some() && d.enkf_lstm.is_some()));
        reports.push(report);
    }

    let table = ok(&["evaluate", s(&reports[0]), s(&reports[1])]);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "method,mse,rmse,mae");
    let labels: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["Initial", "EnKF", "EnKF-LSTM"]);

    let plot = w.root.join("plot.csv");
    ok(&["report", s(&reports[0]), "--output", s(&plot)]);
    let text = std::fs::read_to_string(&plot).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# cropda-plot 1"));
    assert_eq!(lines.next(), Some("day,series,value"));
    assert!(text.contains(",truth,"));
}

#[test]
fn deterministic_reports_repeat_byte_for_byte() {
    let w = workspace();
    let sim = w.root.join("sim");
    ok(&["--config", s(&w.config), "--out-dir", s(&sim), "simulate", "--count", "1"]);
    let d = sim.join("season_000");
    let run = |name: &str| {
        let out = w.root.join(name);
        ok(&[
            "--config",
            s(&w.config),
            "--deterministic",
            "assimilate",
            "--weather",
            s(&d.join("weather.csv")),
            "--observations",
            s(&d.join("observations.csv")),
            "--output",
            s(&out),
        ]);
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("a.json"), run("b.json"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = cropda(&["simulate", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_method_is_rejected() {
    let w = workspace();
    let out = cropda(&[
        "--config",
        s(&w.config),
        "--method",
        "kalman",
        "assimilate",
        "--weather",
        "w.csv",
        "--observations",
        "o.csv",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn malformed_weather_reports_file_and_line() {
    let w = workspace();
    let sim = w.root.join("sim");
    ok(&["--config", s(&w.config), "--out-dir", s(&sim), "simulate", "--count", "1"]);
    let d = sim.join("season_000");
    let weather = std::fs::read_to_string(d.join("weather.csv")).unwrap();
    let mut lines: Vec<String> = weather.lines().map(String::from).collect();
    let i = lines.len() / 2;
    lines[i] = lines[i].replacen(',', ",abc,", 1);
    let bad = w.root.join("bad.csv");
    std::fs::write(&bad, lines.join("\n")).unwrap();
    let out = cropda(&[
        "--config",
        s(&w.config),
        "assimilate",
        "--weather",
        s(&bad),
        "--observations",
        s(&d.join("observations.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&format!("bad.csv:{}:", i + 1)), "{err}");
}

#[test]
fn enkf_lstm_without_weights_fails_cleanly() {
    let w = workspace();
    let sim = w.root.join("sim");
    ok(&["--config", s(&w.config), "--out-dir", s(&sim), "simulate", "--count", "1"]);
    let d = sim.join("season_000");
    let out = cropda(&[
        "--config",
        s(&w.config),
        "--method",
        "enkf-lstm",
        "assimilate",
        "--weather",
        s(&d.join("weather.csv")),
        "--observations",
        s(&d.join("observations.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--weights"));
}
