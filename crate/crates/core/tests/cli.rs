use std::path::Path;
use std::process::{Command, Output};

fn afford(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afford"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn text(o: &Output) -> String {
    format!(
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let o = afford(args, cwd);
    assert_eq!(code(&o), 0, "{args:?}\n{}", text(&o));
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["fixtures", "--out", "fx"], d);
    let out = ok(&["build-memory", "--memory", "mem", "--videos", "fx/videos"], d);
    assert!(out.contains("10 records"), "{out}");
    ok(&["verify", "--memory", "mem"], d);

    let out = ok(
        &["retrieve", "--memory", "mem", "--image", "fx/targets/cup-1.png", "--category", "cup", "--topk", "2"],
        d,
    );
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["pool"], "samecategory");
    assert_eq!(v["results"][0]["record_id"], "cup-1");
    assert_eq!(v["results"].as_array().unwrap().len(), 2);

    ok(
        &[
            "transfer", "--memory", "mem", "--manifest", "fx/manifest_identity.json",
            "--out", "preds.jsonl", "--report", "report.json", "--overlay", "overlays",
        ],
        d,
    );
    assert_eq!(std::fs::read_to_string(d.join("preds.jsonl")).unwrap().lines().count(), 10);
    assert!(d.join("overlays/bowl-0.png").is_file());

    let out = ok(
        &["evaluate", "--preds", "preds.jsonl", "--manifest", "fx/manifest_identity.json", "--out", "eval.json", "--curve", "0:255:51"],
        d,
    );
    assert!(out.contains("overall"), "{out}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["overall"]["sr_percent"], 100.0);
    assert!(std::fs::read_to_string(d.join("eval.csv")).unwrap().starts_with("group,"));

    let out = ok(&["curve", "--preds", "preds.jsonl", "--manifest", "fx/manifest_identity.json", "--range", "0:255:85"], d);
    let curve: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(curve.as_array().unwrap().len(), 4);

    let out = ok(
        &["grasp-select", "--candidates", "fx/grasp/grasps.json", "--contact", "32,24", "--depth", "fx/grasp/depth.png", "--intrinsics", "fx/grasp/intrinsics.json", "--max-distance", "10"],
        d,
    );
    let g: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(g["index"].as_u64().unwrap() < 40);

    ok(
        &["visualize", "--image", "fx/targets/cup-0.png", "--preds", "preds.jsonl", "--image-id", "cup-0", "--mask", "fx/masks/cup-0.png", "--out", "viz.png"],
        d,
    );
    assert!(d.join("viz.png").is_file());

    // a single image with an explicit transform setting
    ok(
        &[
            "transfer", "--memory", "mem", "--image", "fx/targets/knife-0.r90.png", "--category", "knife",
            "--out", "one.jsonl", "--averaging", "average-then-map", "--no-transforms",
        ],
        d,
    );
    let line = std::fs::read_to_string(d.join("one.jsonl")).unwrap();
    assert!(line.contains("\"image_id\":\"knife-0.r90\""), "{line}");
}

#[test]
fn transfer_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["--seed", "3", "fixtures", "--out", "fx"], d);
    ok(&["build-memory", "--memory", "mem", "--videos", "fx/videos"], d);
    for out in ["a.jsonl", "b.jsonl"] {
        ok(
            &["--seed", "3", "transfer", "--memory", "mem", "--manifest", "fx/manifest_dihedral.json", "--out", out],
            d,
        );
    }
    let a = std::fs::read(d.join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.jsonl")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 70);
}

#[test]
fn empty_memory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["fixtures", "--out", "fx"], d);
    ok(&["build-memory", "--memory", "mem"], d);
    let o = afford(
        &["transfer", "--memory", "mem", "--manifest", "fx/manifest_identity.json", "--out", "p.jsonl"],
        d,
    );
    assert_eq!(code(&o), 2, "{}", text(&o));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty"), "{}", text(&o));
}

#[test]
fn broken_video_gives_partial_exit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["fixtures", "--out", "fx"], d);
    std::fs::remove_file(d.join("fx/videos/bowl-1/detections.jsonl")).unwrap();
    let o = afford(&["extract", "--videos", "fx/videos", "--memory", "mem"], d);
    assert_eq!(code(&o), 1, "{}", text(&o));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["added"].as_array().unwrap().len(), 9);
    assert_eq!(summary["skipped"][0]["item"], "bowl-1");
    ok(&["verify", "--memory", "mem"], d);
}

#[test]
fn bad_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = afford(&["verify", "--memory", "nowhere"], d);
    assert_eq!(code(&o), 2);
    let o = afford(&["evaluate", "--preds", "none.jsonl", "--manifest", "none.json"], d);
    assert_eq!(code(&o), 2);
    let o = afford(&["transfer", "--memory", "m"], d);
    assert_eq!(code(&o), 2, "missing --out and target");
    std::fs::write(d.join("cfg.toml"), "bogus_key = 1\n").unwrap();
    let o = afford(&["--config", "cfg.toml", "fixtures", "--out", "fx"], d);
    assert_eq!(code(&o), 2, "{}", text(&o));
}
