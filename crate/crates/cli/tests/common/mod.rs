#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_streamseg");
pub const ECHO: &str = env!("CARGO_BIN_EXE_streamseg-echo-method");

pub fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("STREAMSEG_JOBS")
        .output()
        .expect("spawn streamseg")
}

/// Runs and asserts success, returning stdout.
pub fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "streamseg {args:?} failed with {}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn json(args: &[&str]) -> serde_json::Value {
    serde_json::from_str(&ok(args)).expect("JSON on stdout")
}

/// Generates a sequence under `root/name` and returns its path.
pub fn gen(root: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let dir = root.join(name);
    let mut args = vec!["gen", "--out", dir.to_str().unwrap(), "--id", name];
    args.extend_from_slice(extra);
    ok(&args);
    dir
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `sequences[0].<block>.values.<metric>` of a JSON report.
pub fn metric(report: &serde_json::Value, block: &str, metric: &str) -> Option<f64> {
    report["sequences"][0][block]["values"][metric].as_f64()
}
