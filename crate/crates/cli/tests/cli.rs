//! End-to-end checks of the `cloudgame` binary: each subcommand is driven
//! through a real process with files on disk.

use std::path::Path;
use std::process::{Command, Output};

fn cloudgame(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cloudgame"))
        .args(args)
        .output()
        .expect("spawn cloudgame")
}

fn stdout_of(out: &Output) -> String {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).expect("write file");
}

#[test]
fn presets_lists_every_builtin() {
    let text = stdout_of(&cloudgame(&["presets"]));
    assert_eq!(text.lines().count(), 18);
    assert!(text.contains("tr_1080p_vp9"));
    assert!(text.contains("sp_720p_h264"));
}

#[test]
fn generate_is_deterministic_per_seed() {
    let a = stdout_of(&cloudgame(&["generate", "sp_1080p_vp9", "--duration", "5"]));
    let b = stdout_of(&cloudgame(&["generate", "sp_1080p_vp9", "--duration", "5"]));
    assert_eq!(a, b, "same parameters must give identical traces");
    let c = stdout_of(&cloudgame(&[
        "generate",
        "sp_1080p_vp9",
        "--duration",
        "5",
        "--seed",
        "99",
    ]));
    assert_ne!(a, c, "a different seed must change the trace");
    assert!(a.lines().count() > 100);
}

#[test]
fn generate_fit_generate_recovers_the_structure() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.txt");
    let params = dir.path().join("params.toml");

    stdout_of(&cloudgame(&[
        "generate",
        "tr_1080p_vp9",
        "--duration",
        "15",
        "-o",
        trace.to_str().unwrap(),
    ]));
    stdout_of(&cloudgame(&[
        "fit",
        trace.to_str().unwrap(),
        "-o",
        params.to_str().unwrap(),
    ]));

    let text = std::fs::read_to_string(&params).unwrap();
    assert!(text.contains("frame_rate"), "fit output is a parameters file");

    let regen = stdout_of(&cloudgame(&[
        "generate",
        params.to_str().unwrap(),
        "--duration",
        "5",
        "--seed",
        "3",
    ]));
    assert!(regen.lines().count() > 100, "fitted parameters generate traffic");
}

#[test]
fn simulate_writes_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.toml");
    write(
        &scenario,
        r#"
game = "TR"
codec = "VP9"
max_resolution = "1080p"
duration_s = 3.0
seed = 1

[link]
capacity_schedule = [[0.0, 100e6]]
"#,
    );

    let csv = stdout_of(&cloudgame(&["simulate", scenario.to_str().unwrap()]));
    assert!(csv.starts_with("#cloudgame-csv v1 sim-report"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 4, "column row + 3 records");

    let json = stdout_of(&cloudgame(&[
        "simulate",
        scenario.to_str().unwrap(),
        "--format",
        "json",
    ]));
    let doc: serde_json::Value = serde_json::from_str(&json).expect("valid json");
    assert_eq!(doc["refused"], false);
    assert_eq!(doc["records"].as_array().unwrap().len(), 3);
}

#[test]
fn analyze_summarizes_and_filters_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let tr = dir.path().join("tr.txt");
    let sp = dir.path().join("sp.txt");
    stdout_of(&cloudgame(&[
        "generate", "tr_1080p_vp9", "--duration", "12", "-o", tr.to_str().unwrap(),
    ]));
    stdout_of(&cloudgame(&[
        "generate", "sp_1080p_vp9", "--duration", "12", "-o", sp.to_str().unwrap(),
    ]));
    let manifest = dir.path().join("manifest.toml");
    write(
        &manifest,
        r#"
[[trace]]
path = "tr.txt"
game = "TR"
protocol = "RTP"
direction = "downlink"
dataset = "D1"
schema = ["Y1", "Y2", "Y3"]

[[trace]]
path = "sp.txt"
game = "SP"
protocol = "RTP"
direction = "downlink"
dataset = "D1"
schema = ["Y1", "Y2", "Y3"]
"#,
    );

    let all = stdout_of(&cloudgame(&["analyze", manifest.to_str().unwrap()]));
    assert!(all.starts_with("#cloudgame-csv v1 traffic-stats"));
    assert!(all.contains("tr_rtp_down") && all.contains("sp_rtp_down"));

    let only_tr = stdout_of(&cloudgame(&[
        "analyze",
        manifest.to_str().unwrap(),
        "--filter",
        "TR,,",
    ]));
    assert!(only_tr.contains("tr_rtp_down") && !only_tr.contains("sp_rtp_down"));

    let none = cloudgame(&[
        "analyze",
        manifest.to_str().unwrap(),
        "--filter",
        "TH,,",
    ]);
    assert_eq!(none.status.code(), Some(2), "an empty match is an error");
}

#[test]
fn compare_exit_code_tracks_the_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.toml");
    write(
        &scenario,
        r#"
game = "SP"
codec = "VP9"
max_resolution = "1080p"
duration_s = 5.0
seed = 2

[link]
capacity_schedule = [[0.0, 100e6]]
"#,
    );
    let report = dir.path().join("report.csv");
    stdout_of(&cloudgame(&[
        "simulate",
        scenario.to_str().unwrap(),
        "-o",
        report.to_str().unwrap(),
    ]));

    let good = dir.path().join("good.toml");
    write(&good, "version = 1\n[[metric]]\nname = \"mean_fps\"\nband = [0.0, 60.0]\n");
    let out = cloudgame(&[
        "compare", report.to_str().unwrap(), good.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("all checks passed"));

    let bad = dir.path().join("bad.toml");
    write(&bad, "version = 1\n[[metric]]\nname = \"mean_fps\"\nband = [100.0, 200.0]\n");
    let out = cloudgame(&[
        "compare", report.to_str().unwrap(), bad.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "failed checks exit 1");

    let json = cloudgame(&[
        "compare",
        report.to_str().unwrap(),
        bad.to_str().unwrap(),
        "--format",
        "json",
    ]);
    let doc: serde_json::Value =
        serde_json::from_slice(&json.stdout).expect("valid json");
    assert_eq!(doc["pass"], false);

    let out = cloudgame(&[
        "compare",
        dir.path().join("missing.csv").to_str().unwrap(),
        good.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "unreadable input exits 2");
}

#[test]
fn refused_sessions_are_reported_not_crashed() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("refused.toml");
    write(
        &scenario,
        r#"
game = "TR"
codec = "VP9"
max_resolution = "4K"
duration_s = 10.0
seed = 1

[link]
capacity_schedule = [[0.0, 5e6]]
"#,
    );
    let csv = stdout_of(&cloudgame(&["simulate", scenario.to_str().unwrap()]));
    assert!(csv.contains("#session-refused"));
}
