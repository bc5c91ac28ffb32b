//! End-to-end tests driving the installed binary the way a user would:
//! generate traces, inspect them, replay them, sweep a space with a mid-run
//! crash, and reduce the store to reports.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tracewatt"))
}

/// Runs the binary in `dir`, asserting it exits successfully.
fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = bin().current_dir(dir).args(args).output().expect("spawn tracewatt");
    assert!(
        out.status.success(),
        "tracewatt {args:?} failed ({:?}):\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("stdout is UTF-8")
}

/// Runs the binary expecting a failure, returning (exit code, stderr).
fn run_err(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = bin().current_dir(dir).args(args).output().expect("spawn tracewatt");
    assert!(!out.status.success(), "tracewatt {args:?} unexpectedly succeeded");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn synth(dir: &Path, seed: &str, extra: &[&str]) -> String {
    let mut args =
        vec!["synth", "--seed", seed, "--trace-out", "trace.jsonl", "--out", "work"];
    args.extend_from_slice(extra);
    run_ok(dir, &args);
    "trace.jsonl".to_string()
}

#[test]
fn synth_validate_stats_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let trace = synth(dir.path(), "11", &["--developers", "4", "--minutes", "10"]);

    let out = run_ok(dir.path(), &["validate", &trace]);
    assert!(out.contains("malformed lines: 0"), "unexpected validate output:\n{out}");
    assert!(out.contains("trace is clean"));

    let out = run_ok(dir.path(), &["stats", &trace, "--json", "--out", "work"]);
    assert!(out.contains("per developer:"));
    let stats: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("work/stats.json")).unwrap())
            .unwrap();
    let total = stats["lifecycle"]["total"].as_u64().unwrap();
    assert!(total > 0);
    assert_eq!(stats["usage"].as_array().unwrap().len(), 4);
    // The five terminal outcomes partition the total.
    let parts: u64 = ["canceled", "empty", "displayed_rejected", "accepted", "kept"]
        .iter()
        .map(|k| stats["lifecycle"][k].as_u64().unwrap())
        .sum();
    assert_eq!(parts, total);
}

#[test]
fn malformed_trace_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let trace = synth(dir.path(), "3", &["--developers", "2", "--minutes", "5"]);
    let mut text = fs::read_to_string(dir.path().join(&trace)).unwrap();
    text.push_str("this is not json\n");
    fs::write(dir.path().join(&trace), text).unwrap();

    let (code, stderr) = run_err(dir.path(), &["validate", &trace]);
    assert_eq!(code, 1);
    assert!(stderr.contains("malformed"), "stderr:\n{stderr}");
}

#[test]
fn replay_without_execution_mode_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let trace = synth(dir.path(), "3", &["--developers", "2", "--minutes", "5"]);
    let (code, stderr) = run_err(dir.path(), &["replay", &trace]);
    assert_eq!(code, 2, "usage errors exit with 2; stderr:\n{stderr}");
    assert!(stderr.contains("--virtual-time") && stderr.contains("--endpoint"));
}

#[test]
fn virtual_replay_is_deterministic_across_processes() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "17", &["--developers", "5", "--minutes", "8"]);

    let args = |out: &'static str| {
        vec![
            "replay", "trace.jsonl", "--virtual-time", "--developers", "5", "--window-ms",
            "240000", "--seed", "9", "--out", out,
        ]
    };
    let first = run_ok(dir.path(), &args("a"));
    assert!(first.contains("mean power"), "metrics summary missing:\n{first}");
    run_ok(dir.path(), &args("b"));

    let a = fs::read(dir.path().join("a/replay/metrics.json")).unwrap();
    let b = fs::read(dir.path().join("b/replay/metrics.json")).unwrap();
    assert_eq!(a, b, "same seed and trace must reproduce byte-identical metrics");

    let metrics: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert!(metrics["fired"].as_u64().unwrap() > 0);
    assert!(metrics["mean_power_watts"].as_f64().unwrap() > 0.0);

    // The plan the replay executed is reproducible through `plan` as well.
    run_ok(
        dir.path(),
        &[
            "plan", "trace.jsonl", "--developers", "5", "--window-ms", "240000", "--seed",
            "9", "--out", "p",
        ],
    );
    let plan: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("p/plan.json")).unwrap())
            .unwrap();
    assert_eq!(plan["config"]["developers"].as_u64().unwrap(), 5);
    assert!(!plan["schedule"].as_array().unwrap().is_empty());
}

#[test]
fn sweep_crash_resume_analyze_report_chain() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "21", &["--developers", "6", "--minutes", "12"]);
    fs::write(
        dir.path().join("space.toml"),
        "developers = [5, 10]\nstreaming = [\"no_stream\", \"stream_with_cancel\"]\n",
    )
    .unwrap();
    let sweep_args = |store: &'static str| {
        vec![
            "sweep", "trace.jsonl", "--space", "space.toml", "--window-ms", "240000",
            "--out", store,
        ]
    };

    // Uninterrupted run for comparison.
    let out = run_ok(dir.path(), &sweep_args("clean"));
    assert!(out.contains("12 replicates executed"), "sweep output:\n{out}");

    // Crash after three replicate saves: the process dies abnormally and
    // leaves exactly the three completed replicates behind.
    let mut crash_args = sweep_args("store");
    crash_args.extend_from_slice(&["--crash-after", "3"]);
    let out = bin().current_dir(dir.path()).args(&crash_args).output().unwrap();
    assert!(!out.status.success());
    assert_ne!(out.status.code(), Some(1), "crash must not look like a clean failure");
    let saved = count_files(&dir.path().join("store/runs"), "metrics.json");
    assert_eq!(saved, 3, "exactly the saves before the crash survive");

    // Resume completes only the missing work.
    let out = run_ok(dir.path(), &sweep_args("store"));
    assert!(
        out.contains("9 replicates executed, 3 reused from the store"),
        "resume output:\n{out}"
    );

    // Changing sweep parameters against the same store is refused.
    let mut reseeded = sweep_args("store");
    reseeded.extend_from_slice(&["--seed", "5"]);
    let (code, stderr) = run_err(dir.path(), &reseeded);
    assert_eq!(code, 1);
    assert!(stderr.contains("different parameters"), "stderr:\n{stderr}");

    // analyze re-derives every stored metric from its raw logs and the
    // resumed store is indistinguishable from the uninterrupted one.
    let out = run_ok(
        dir.path(),
        &["analyze", "--recompute", "trace.jsonl", "--out", "store"],
    );
    assert!(out.contains("verified 12 replicate metrics"), "analyze output:\n{out}");
    run_ok(dir.path(), &["analyze", "--out", "clean"]);
    let resumed = fs::read(dir.path().join("store/outcomes.json")).unwrap();
    let clean = fs::read(dir.path().join("clean/outcomes.json")).unwrap();
    assert_eq!(resumed, clean, "crash + resume must converge to the clean result");

    let out = run_ok(dir.path(), &["report", "--out", "store"]);
    assert!(out.contains("impact ratios"), "report output:\n{out}");
    for name in ["report.json", "scenario.csv", "impacts.csv", "curves.csv"] {
        let path = dir.path().join("store").join(name);
        assert!(path.exists(), "missing {name}");
    }
    let scenario = fs::read_to_string(dir.path().join("store/scenario.csv")).unwrap();
    assert_eq!(scenario.lines().count(), 1 + 4, "header plus one row per configuration");
    let impacts = fs::read_to_string(dir.path().join("store/impacts.csv")).unwrap();
    // Two axes varied: developers (5 vs 10) and streaming, both directions,
    // for two metrics each.
    assert_eq!(impacts.lines().count(), 1 + 8, "impacts:\n{impacts}");
}

fn count_files(root: &Path, name: &str) -> usize {
    let mut found = 0;
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let Ok(entries) = fs::read_dir(&dir) else { continue };
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == name) {
                found += 1;
            }
        }
    }
    found
}

const TINY_PROFILE: &str = r#"
schema_version = 1

[hardware]
cpu_idle_watts = 100.0
gpu_idle_watts = 10.0
per_gpu_active_watts = 50.0
step_quantum_ms = 5.0
sample_interval_ms = 50

[profiles.tiny]
prefill_ms_per_1k_tokens = 1.0
decode_base_ms = 20.0
decode_slope_ms = 1.0
mean_output_tokens = 5.0
output_jitter = 0.5
batch_capacity_per_gpu = 16
"#;

/// Full live loop through the binary: serve the simulator over HTTP, replay
/// a trace against it in real time, then stop the server with SIGINT and
/// collect its step log.
#[test]
fn mock_serve_live_replay_and_shutdown() {
    let dir = tempfile::tempdir().unwrap();
    let trace = synth(
        dir.path(),
        "29",
        &["--developers", "5", "--minutes", "0.3", "--rate-min", "80", "--rate-max", "120"],
    );
    fs::write(dir.path().join("tiny.toml"), TINY_PROFILE).unwrap();

    let mut server = bin()
        .current_dir(dir.path())
        .args([
            "mock-serve", "--profiles", "tiny.toml", "--model", "tiny", "--addr",
            "127.0.0.1:0", "--out", "mock",
        ])
        .stdout(Stdio::piped())
        .spawn()
        .expect("spawn mock server");

    let stdout = server.stdout.take().expect("server stdout piped");
    let mut lines = BufReader::new(stdout).lines();
    let url = loop {
        let line = lines
            .next()
            .expect("server printed its address before EOF")
            .expect("read server stdout");
        if let Some((_, url)) = line.rsplit_once(" on ") {
            break url.to_string();
        }
    };

    let out = run_ok(
        dir.path(),
        &[
            "replay", &trace, "--endpoint", &url, "--profiles", "tiny.toml", "--model",
            "tiny", "--developers", "5", "--window-ms", "6000", "--out", "live",
        ],
    );
    assert!(out.contains("saturated"), "replay output:\n{out}");
    let metrics: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("live/replay/metrics.json")).unwrap(),
    )
    .unwrap();
    assert!(metrics["fired"].as_u64().unwrap() > 0);
    assert_eq!(metrics["completed"], metrics["fired"], "nothing should be rejected");

    let kill = Command::new("kill")
        .args(["-INT", &server.id().to_string()])
        .status()
        .expect("send SIGINT");
    assert!(kill.success());
    let status = server.wait().expect("server exits");
    assert!(status.success(), "clean shutdown after Ctrl-C");

    let rest: Vec<String> = lines.map_while(Result::ok).collect();
    let tail = rest.join("\n");
    assert!(tail.contains("served"), "server summary missing:\n{tail}");
    let step_log = fs::read_to_string(dir.path().join("mock/mock_step_log.csv")).unwrap();
    assert!(step_log.lines().count() > 1, "step log should hold the served steps");
}
