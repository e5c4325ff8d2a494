mod common;

use std::fs;

use common::*;

const SMALL: &[&str] = &["--frames", "120", "--width", "160", "--height", "90"];

#[test]
fn gen_writes_requested_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(tmp.path(), "g", &["--frames", "60", "--width", "64", "--height", "36"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["frame_count"], 60);
    assert_eq!(fs::read_dir(dir.join("masks")).unwrap().count(), 60);
    assert_eq!(fs::read_dir(dir.join("depth")).unwrap().count(), 60);
    assert_eq!(fs::read_to_string(dir.join("poses.txt")).unwrap().lines().count(), 60);
}

#[test]
fn gen_default_is_600_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(tmp.path(), "d", &["--no-geometry"]);
    assert_eq!(fs::read_dir(dir.join("masks")).unwrap().count(), 600);
}

#[test]
fn invalid_fps_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["gen", "--out", s(tmp.path()), "--fps", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "usage");
}

#[test]
fn zero_latency_blocks_are_equal() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(tmp.path(), "z", SMALL);
    let r = json(&["evaluate", s(&dir), "--scorer", "noisy:0.4", "--latency-ms", "0", "--json"]);
    let seq = &r["sequences"][0];
    assert_eq!(seq["latency_agnostic"], seq["latency_aware"]);
    assert_eq!(r["conformant"], true);
}

#[test]
fn zero_ms_timing_rows_match_agnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(tmp.path(), "t", &[SMALL, &["--scorer", "oracle", "--latency-ms", "0"]].concat());
    let r = json(&[
        "evaluate",
        s(&dir),
        "--precomputed",
        s(&dir.join("scores/oracle")),
        "--timing",
        s(&dir.join("timing/oracle.csv")),
        "--json",
    ]);
    let seq = &r["sequences"][0];
    assert_eq!(seq["latency_agnostic"], seq["latency_aware"]);
    assert!(seq["delta_frames_used"].as_array().unwrap().iter().all(|d| d == 0));
}

#[test]
fn slow_method_scores_worse_when_latency_aware() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(
        tmp.path(),
        "slow",
        &[SMALL, &["--scorer", "oracle", "--latency-ms", "587"]].concat(),
    );
    let r = json(&[
        "evaluate",
        s(&dir),
        "--precomputed",
        s(&dir.join("scores/oracle")),
        "--timing",
        s(&dir.join("timing/oracle.csv")),
        "--json",
    ]);
    assert!(r["sequences"][0]["delta_frames_used"]
        .as_array()
        .unwrap()
        .iter()
        .all(|d| d == 35));
    for m in ["auroc", "auprc"] {
        assert!(metric(&r, "latency_aware", m).unwrap() < metric(&r, "latency_agnostic", m).unwrap());
    }
    assert!(metric(&r, "latency_aware", "fpr95").unwrap() > metric(&r, "latency_agnostic", "fpr95").unwrap());
    assert_eq!(r["sequences"][0]["inference_ms_mean"], 587.0);
}

#[test]
fn metrics_flag_limits_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(tmp.path(), "m", SMALL);
    let out = tmp.path().join("rep");
    let r = json(&[
        "evaluate", s(&dir), "--scorer", "oracle", "--metrics", "auroc", "--json", "--out", s(&out),
    ]);
    assert_eq!(r["metrics"], serde_json::json!(["auroc"]));
    let seq = r["sequences"][0].to_string();
    assert!(seq.contains("auroc"));
    assert!(!seq.contains("auprc") && !seq.contains("fpr95"));
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "sequence,method,agnostic_auroc,aware_auroc,consistency_iou,inference_ms"
    );
}

#[test]
fn static_oracle_consistency_is_one() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(tmp.path(), "st", &[SMALL, &["--static"]].concat());
    let r = json(&["consistency", s(&dir), "--scorer", "oracle"]);
    assert_eq!(r["mean_iou"], 1.0);
    assert_eq!(r["delta_frames"], 60);
}

#[test]
fn consistency_refuses_sequences_without_depth() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(tmp.path(), "nd", &[SMALL, &["--no-geometry"]].concat());
    let out = run(&["consistency", s(&dir), "--scorer", "oracle"]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "missing_geometry");
    // the streaming metrics do not need geometry
    ok(&["evaluate", s(&dir), "--scorer", "oracle"]);
}

#[test]
fn half_second_delta_is_30_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(tmp.path(), "h", SMALL);
    let pairs = tmp.path().join("tc");
    let r = json(&[
        "consistency", s(&dir), "--scorer", "oracle", "--delta-seconds", "0.5", "--out", s(&pairs),
    ]);
    assert_eq!(r["delta_frames"], 30);
    let csv = fs::read_to_string(pairs.join("consistency_pairs.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,iou,skipped");
    assert_eq!(csv.lines().count(), 1 + 90);
}

#[test]
fn oracle_sweep_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(tmp.path(), "o", SMALL);
    let csv = ok(&["oracle", s(&dir), "--latencies-ms", "0,100,250"]);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "delta_frames,auroc,auprc,fpr95");
    assert_eq!(rows[1], "0,1,1,0");
    assert!(rows[2].starts_with("6,") && rows[3].starts_with("15,"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(tmp.path(), "c", SMALL);
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"metrics": ["auprc"], "latency_ms": 250, "scorer": "oracle", "json": true}"#)
        .unwrap();
    let r = json(&["--config", s(&cfg), "evaluate", s(&dir), "--latency-ms", "0"]);
    assert_eq!(r["metrics"], serde_json::json!(["auprc"]));
    assert_eq!(r["config"]["latency_ms"], 0.0);
    assert_eq!(metric(&r, "latency_aware", "auprc"), Some(1.0));
}

#[test]
fn sequences_without_anomalies_are_nonconformant() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(tmp.path(), "empty", &[SMALL, &["--anomalies", "0"]].concat());
    let out = run(&["evaluate", s(&dir), "--scorer", "oracle", "--json"]);
    assert_eq!(out.status.code(), Some(3));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["conformant"], false);
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "nonconformant");
}

#[test]
fn repeated_runs_are_byte_identical_and_reports_merge() {
    let tmp = tempfile::tempdir().unwrap();
    let a = gen(tmp.path(), "a", SMALL);
    let b = gen(tmp.path(), "b", &[SMALL, &["--seed", "5"]].concat());
    let run_into = |out: &str, jobs: &str| {
        let out = tmp.path().join(out);
        ok(&[
            "--jobs", jobs, "evaluate", s(&a), s(&b), "--scorer", "noisy:0.5", "--latency-ms", "100",
            "--consistency", "--out", s(&out),
        ]);
        (
            fs::read(out.join("report.json")).unwrap(),
            fs::read(out.join("report.csv")).unwrap(),
        )
    };
    let first = run_into("r1", "1");
    assert_eq!(first, run_into("r2", "3"));

    let single = tmp.path().join("single");
    ok(&["evaluate", s(&a), "--scorer", "noisy:0.5", "--out", s(&single)]);
    let merged = json(&[
        "report",
        s(&tmp.path().join("r1/report.json")),
        s(&single.join("report.json")),
        "--json",
    ]);
    assert_eq!(merged["sequences"].as_array().unwrap().len(), 3);
    let table = ok(&["report", s(&tmp.path().join("r1/report.json"))]);
    assert!(table.contains("AUROC (agn)") && table.contains("TC IoU"));
}

#[test]
fn warp_writes_masks() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = gen(tmp.path(), "w", SMALL);
    let prefix = tmp.path().join("out/w");
    let stats: serde_json::Value =
        serde_json::from_str(&ok(&["warp", s(&dir), "--from", "1", "--to", "61", "--out", s(&prefix)]))
            .unwrap();
    assert!(stats["valid_pixels"].as_u64().unwrap() > 0);
    assert!(tmp.path().join("out/w.warped.mask").is_file());
    assert!(tmp.path().join("out/w.valid.mask").is_file());
}
