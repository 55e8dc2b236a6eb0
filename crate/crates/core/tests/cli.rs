//! End-to-end checks of the `epitrace` binary: subcommands, file formats,
//! exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn epitrace(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epitrace"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

const SMALL_EXPERIMENT: &str = "\
trace.source = heterogeneous
learning.days = 4
simulation.days = 6
synth.heterogeneous.regions = 3
synth.heterogeneous.population = 600
synth.heterogeneous.region_populations = 250,200,150
seed.cases = 10
policies = none,risk
runs = 2
base_seed = 5
reduction.horizon_days = 6
";

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec![],
        vec!["teleport"],
        vec!["simulate"],
        vec!["simulate", "--config"],
        vec!["simulate", "--config", "nope.cfg", "--bogus"],
        vec!["simulate", "--config", "missing-file.cfg"],
        vec!["simulate", "--config", "cfg", "--policy", "x"],
        vec!["simulate", "--config", "cfg", "--runs", "0"],
    ];
    for args in cases {
        let out = epitrace(&args, dir.path());
        assert_eq!(
            out.status.code(),
            Some(1),
            "args {args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn unknown_config_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    write(&cfg, &format!("{SMALL_EXPERIMENT}surprise = 1\n"));
    let out = epitrace(&["simulate", "--config", "exp.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("surprise"));
}

#[test]
fn help_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = epitrace(&["--help"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("SUBCOMMANDS"));
}

#[test]
fn synth_is_deterministic_and_parseable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    write(&cfg, SMALL_EXPERIMENT);
    for sub in ["a", "b"] {
        let out = epitrace(&["synth", "--config", "exp.cfg", "--out", sub], dir.path());
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let a = fs::read(dir.path().join("a/traces.csv")).unwrap();
    let b = fs::read(dir.path().join("b/traces.csv")).unwrap();
    assert_eq!(a, b, "same config and seed must generate identical bytes");
    assert!(a.starts_with(b"user_id,timestamp,region_id\n"));

    // a different seed changes the file
    let out = epitrace(
        &["synth", "--config", "exp.cfg", "--out", "c", "--seed", "77"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let c = fs::read(dir.path().join("c/traces.csv")).unwrap();
    assert_ne!(a, c);
}

#[test]
fn synth_rejects_file_sources() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    write(
        &cfg,
        "trace.source = file:traces.csv\nlearning.days = 1\nsimulation.days = 1\n",
    );
    let out = epitrace(&["synth", "--config", "exp.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn profile_emits_time_allocation_rows() {
    let dir = tempfile::tempdir().unwrap();
    write(
        &dir.path().join("traces.csv"),
        "user_id,timestamp,region_id\n\
         u1,2013-01-01T00:00:00Z,A\n\
         u1,2013-01-01T18:00:00Z,B\n\
         u2,2013-01-01T00:00:00Z,B\n\
         u2,2013-01-02T00:00:00Z,B\n",
    );
    write(
        &dir.path().join("exp.cfg"),
        "trace.source = file:traces.csv\n\
         learning.days = 1\n\
         simulation.days = 1\n",
    );
    let out = epitrace(&["profile", "--config", "exp.cfg"], dir.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(dir.path().join("profiles.csv")).unwrap();
    assert_eq!(
        text,
        "user_id,region_id,fraction\nu1,A,0.75\nu1,B,0.25\nu2,B,1\n"
    );
}

#[test]
fn rank_scores_profiles_against_region_state() {
    let dir = tempfile::tempdir().unwrap();
    write(
        &dir.path().join("profiles.csv"),
        "user_id,region_id,fraction\n\
         u1,A,0.5\n\
         u1,B,0.5\n\
         u2,B,1\n",
    );
    write(&dir.path().join("state.csv"), "region_id,i,s\nA,0.2,0.8\nB,0,1\n");
    write(
        &dir.path().join("rank.cfg"),
        "rank.profiles = profiles.csv\nrank.state = state.csv\n",
    );
    let out = epitrace(&["rank", "--config", "rank.cfg"], dir.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(dir.path().join("ranking.csv")).unwrap();
    // u1: (0.5*0.2)*(0.5*0.8 + 0.5*1) = 0.09; u2: 0
    assert_eq!(
        text,
        "rank,user_id,score\n1,u1,9.00000000000e-2\n2,u2,0.00000000000e0\n"
    );

    // unknown region in the profiles is a data error
    write(
        &dir.path().join("profiles.csv"),
        "user_id,region_id,fraction\nu1,Z,1\n",
    );
    let out = epitrace(&["rank", "--config", "rank.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn strict_mode_turns_malformed_rows_fatal() {
    let dir = tempfile::tempdir().unwrap();
    write(
        &dir.path().join("traces.csv"),
        "user_id,timestamp,region_id\n\
         u1,2013-01-01T00:00:00Z,A\n\
         u1,not-a-time,A\n\
         u1,2013-01-02T00:00:00Z,A\n",
    );
    write(
        &dir.path().join("exp.cfg"),
        "trace.source = file:traces.csv\nlearning.days = 1\nsimulation.days = 1\n",
    );
    let lenient = epitrace(&["profile", "--config", "exp.cfg"], dir.path());
    assert_eq!(lenient.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&lenient.stderr).contains("1 malformed"));

    let strict = epitrace(&["profile", "--config", "exp.cfg", "--strict"], dir.path());
    assert_eq!(strict.status.code(), Some(2));

    // a broken header is fatal either way
    write(
        &dir.path().join("traces.csv"),
        "who,when,where\nu1,2013-01-01T00:00:00Z,A\n",
    );
    let out = epitrace(&["profile", "--config", "exp.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_writes_artifacts_and_honors_overrides() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("exp.cfg"), SMALL_EXPERIMENT);
    let out = epitrace(
        &[
            "simulate",
            "--config",
            "exp.cfg",
            "--out",
            "out",
            "--runs",
            "3",
            "--policy",
            "none",
            "--policy",
            "random",
        ],
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("policy   none"));
    assert!(stdout.contains("policy random"));
    assert!(!stdout.contains("policy   risk"), "policy override ignored");

    let out_dir = dir.path().join("out");
    for f in [
        "traces.csv",
        "config.txt",
        "summary.txt",
        "series_none_000.csv",
        "series_none_002.csv",
        "series_random_002.csv",
        "regions_random_001.csv",
        "quarantine_random_000.csv",
    ] {
        assert!(out_dir.join(f).exists(), "missing artifact {f}");
    }
    assert!(!out_dir.join("series_none_003.csv").exists());
    assert!(!out_dir.join("series_risk_000.csv").exists());

    // insufficient coverage is a data error
    write(
        &dir.path().join("short.cfg"),
        "trace.source = file:out/traces.csv\nlearning.days = 4\nsimulation.days = 60\nruns = 1\nseed.cases = 5\nreduction.horizon_days = 30\n",
    );
    let out = epitrace(&["simulate", "--config", "short.cfg", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("cover"), "stderr: {stderr}");
}
