//! The `mloc` binary: exit codes and a small simulate, build, locate run.

use std::path::Path;
use std::process::{Command, Output};

fn mloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mloc")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const METRO: &str = "line A: a1 - a2 - a3 - a4 - a5 - a6 - a7 - a8\n";

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&mloc(&[])), 1);
    assert_eq!(code(&mloc(&["frobnicate"])), 1);
    assert_eq!(code(&mloc(&["locate", "--map", "x.json"])), 1);
    assert_eq!(code(&mloc(&["--help"])), 0);
}

#[test]
fn bad_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.json");
    let o = mloc(&["locate", "--map", s(&missing), "--trace", s(&missing)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("none.json"));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "# trip_id = x\nt,sensor,a,b,c\n0,ACC,1,2\n").unwrap();
    let o = mloc(&["detect", "--trace", s(&bad), "--out", s(&dir.path().join("e.csv"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.csv:3:"));
}

#[test]
fn invalid_detector_settings_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    let o = mloc(&["detect", "--trace", s(&p), "--out", s(&p), "--stable-seconds", "-1"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn simulate_build_locate_eval() {
    let dir = tempfile::tempdir().unwrap();
    let metro = dir.path().join("metro.txt");
    std::fs::write(&metro, METRO).unwrap();
    let world = dir.path().join("world");
    let o = mloc(&["simulate", "--metro", s(&metro), "--trips", "30", "--seed", "3", "--out", s(&world)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metro.txt", "world.json", "truth.json", "hints.txt", "traces"] {
        assert!(world.join(f).exists(), "{f}");
    }

    let map = dir.path().join("map.json");
    let o = mloc(&[
        "build-map",
        "--traces",
        s(&world.join("traces")),
        "--metro",
        s(&metro),
        "--hints",
        s(&world.join("hints.txt")),
        "--out",
        s(&map),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("coverage"));

    let trace = std::fs::read_dir(world.join("traces")).unwrap().next().unwrap().unwrap().path();
    let o = mloc(&["locate", "--map", s(&map), "--trace", s(&trace)]);
    assert!(matches!(code(&o), 0 | 3), "{}", String::from_utf8_lossy(&o.stderr));
    if code(&o) == 0 {
        assert!(String::from_utf8_lossy(&o.stdout).starts_with("events="));
    }
    let o = mloc(&["locate", "--map", s(&map), "--trace", s(&trace), "--stream"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let events = dir.path().join("events.csv");
    assert_eq!(code(&mloc(&["detect", "--trace", s(&trace), "--out", s(&events)])), 0);
    assert!(std::fs::read_to_string(&events).unwrap().starts_with("kind,bt,et"));

    let report = dir.path().join("report");
    let o = mloc(&["eval", "--world", s(&world), "--map", s(&map), "--max-tunnels", "2", "--out", s(&report)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["detection.csv", "localization.csv", "coverage.csv", "separability.csv", "dtw_vs_mse.csv"] {
        assert!(report.join(f).exists(), "{f}");
    }
}
