mod common;

use std::time::Duration;

use common::*;
use streamseg::adapter::{run_batch, RunOptions};
use streamseg::streaming::latency_to_frames;
use streamseg::Error;

const TINY: &[&str] = &["--frames", "20", "--width", "64", "--height", "36"];

fn echo(extra: &str) -> Vec<String> {
    let mut cmd = vec![ECHO.to_string()];
    cmd.extend(extra.split_whitespace().map(str::to_string));
    cmd
}

#[test]
fn echo_oracle_through_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(tmp.path(), "e", &["--frames", "60", "--width", "96", "--height", "54"]);
    let out = tmp.path().join("rep");
    let r = json(&["evaluate", s(&dir), "--method-cmd", ECHO, "--json", "--out", s(&out)]);
    assert_eq!(metric(&r, "latency_agnostic", "auroc"), Some(1.0));
    assert!(r["sequences"][0]["inference_ms_mean"].as_f64().unwrap() > 0.0);
    assert!(out.join("e/scores/streamseg-echo-method/000060.scor").is_file());
    assert!(out.join("e/timing/streamseg-echo-method.csv").is_file());
}

#[test]
fn sleeper_latency_is_six_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(tmp.path(), "s", TINY);
    let run = run_batch(&echo("--sleep-ms 100"), &dir, &RunOptions::new("sleeper")).unwrap();
    assert_eq!(run.scores.len(), 20);
    for t in 0..20 {
        let frames = latency_to_frames(&run.latency, t);
        assert!((5..=7).contains(&frames), "frame {t}: {} ms", run.latency.latency_ms(t));
    }
}

#[test]
fn wrong_dimensions_name_the_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(tmp.path(), "w", TINY);
    let err = run_batch(&echo("--wrong-dims"), &dir, &RunOptions::new("w")).unwrap_err();
    assert!(matches!(err.error, Error::ProtocolDesync { frame: 1, .. }), "{err}");
    assert!(err.to_string().contains("frame 1"));
}

#[test]
fn crash_keeps_partial_results() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(tmp.path(), "c", TINY);
    let err = run_batch(&echo("--crash-after 3"), &dir, &RunOptions::new("c")).unwrap_err();
    match err.error {
        Error::MethodCrashed { completed, ref status } => {
            assert_eq!(completed, 3);
            assert!(status.contains('3'), "{status}");
        }
        ref other => panic!("unexpected {other}"),
    }
    assert_eq!(err.partial.scores.len(), 3);
    let out = run(&["evaluate", s(&dir), "--method-cmd", &format!("{ECHO} --crash-after 3")]);
    assert_eq!(out.status.code(), Some(1));
    // earlier stderr lines are log warnings; the error object comes last
    let stderr = String::from_utf8(out.stderr).unwrap();
    let body: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(body["error"], "method_crashed");
}

#[test]
fn slow_frame_times_out() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(tmp.path(), "t", TINY);
    let opts = RunOptions {
        timeout: Duration::from_millis(100),
        ..RunOptions::new("t")
    };
    let err = run_batch(&echo("--sleep-ms 2000"), &dir, &opts).unwrap_err();
    assert!(matches!(err.error, Error::Timeout { frame: 1, .. }), "{err}");
}
