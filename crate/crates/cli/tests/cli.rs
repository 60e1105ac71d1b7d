// SPDX-License-Identifier: Apache-2.0

use std::path::Path;
use std::process::{Command, Output};

use ltg_core::layout::{write_gdsii, Boundary, Cell, Instance, Library};
use ltg_core::raster::layers;
use serde_json::Value;

fn ltg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltg")).args(args).env_remove("LTG_MODEL").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ltg(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    ltg(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_specs(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("specs.json");
    std::fs::write(&path, r#"{"generators": [{"id": "via_stack_m1_m2"}, {"id": "boundary_array"}]}"#).unwrap();
    path
}

fn write_layout(dir: &Path) -> std::path::PathBuf {
    let mut lib = Library::new("t");
    let mut a = Cell::new("A");
    a.boundaries.push(Boundary::rect(layers::metal(1), 0, 0, 400, 100).unwrap());
    a.boundaries.push(Boundary::rect(layers::via(1), 10, 10, 50, 50).unwrap());
    let mut b = Cell::new("B");
    b.boundaries.push(Boundary::rect(layers::metal(2), 0, 0, 800, 900).unwrap());
    let mut top = Cell::new("TOP");
    for x in 0..4 {
        top.instances.push(Instance::at("A", 1000 * x, 0));
    }
    top.instances.push(Instance::at("B", 0, 3000));
    for c in [a, b, top] {
        lib.add_cell(c);
    }
    let path = dir.join("layout.gds");
    std::fs::write(&path, write_gdsii(&lib).unwrap()).unwrap();
    path
}

#[test]
fn stats_tables_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.gds");
    std::fs::write(&empty, write_gdsii(&Library::new("e")).unwrap()).unwrap();
    let out = ok(&["stats", p(&empty)]);
    assert!(out.contains("total") && out.contains("0.0%"), "{out}");

    let layout = write_layout(dir.path());
    let json: Value = serde_json::from_str(&ok(&["stats", p(&layout), "--top", "TOP", "--json"])).unwrap();
    assert_eq!(json["total"], 2);
    assert_eq!(json["thresholds"][0]["count"], 1);

    let bad = dir.path().join("bad.gds");
    std::fs::write(&bad, b"garbage").unwrap();
    assert_eq!(code(&["stats", p(&bad)]), 2);
    assert_eq!(code(&["stats", "/nonexistent.gds"]), 2);
    assert_eq!(code(&["stats"]), 2);
}

#[test]
fn dataset_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let specs = write_specs(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for out in [&a, &b] {
        ok(&["dataset", "--specs", p(&specs), "--per-class", "4", "--negatives", "3", "--seed", "5", "--out", p(out)]);
    }
    let ma = std::fs::read(a.join("manifest.json")).unwrap();
    assert_eq!(ma, std::fs::read(b.join("manifest.json")).unwrap());

    ok(&["dataset", "--specs", p(&specs), "--per-class", "0", "--negatives", "3", "--out", p(&c)]);
    let m: Value = serde_json::from_slice(&std::fs::read(c.join("manifest.json")).unwrap()).unwrap();
    let labels: Vec<u64> = m["samples"].as_array().unwrap().iter().map(|s| s["label"].as_u64().unwrap()).collect();
    assert_eq!(labels, vec![2, 2, 2]);

    assert_eq!(code(&["dataset", "--specs", "/nonexistent.json", "--per-class", "1", "--out", p(&c)]), 2);
    let unknown = dir.path().join("unknown.json");
    std::fs::write(&unknown, r#"{"generators": [{"id": "no_such_generator"}]}"#).unwrap();
    assert_eq!(code(&["dataset", "--specs", p(&unknown), "--per-class", "1", "--out", p(&c)]), 2);
}

fn strip_timing(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timing");
    v
}

#[test]
fn train_eval_examine_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let specs = write_specs(d);
    let data = d.join("data");
    ok(&["dataset", "--specs", p(&specs), "--per-class", "6", "--negatives", "6", "--seed", "1", "--val-frac", "0.34", "--out", p(&data)]);

    let ckpt = d.join("model.ckpt");
    let hist = d.join("history.json");
    let out = ok(&[
        "train", "--dataset", p(&data), "--desk", "--max-epochs", "1", "--seed", "3", "--out", p(&ckpt), "--history", p(&hist),
    ]);
    assert!(out.contains("trained 1 epochs"), "{out}");
    let h: Value = serde_json::from_slice(&std::fs::read(&hist).unwrap()).unwrap();
    assert_eq!(h.as_array().unwrap().len(), 1);

    let report = d.join("eval.json");
    let out = ok(&["eval", "--model", p(&ckpt), "--dataset", p(&data), "--split", "all", "--per-instance", "--json", p(&report)]);
    assert!(out.contains("accuracy"), "{out}");
    let r: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["samples"], 18);

    let svm = d.join("model.svm");
    ok(&["svm-train", "--dataset", p(&data), "--epochs", "5", "--input-size", "64", "--out", p(&svm)]);
    assert!(ok(&["svm-eval", "--model", p(&svm), "--dataset", p(&data)]).contains("accuracy"));

    let layout = write_layout(d);
    let (r1, r2, sk) = (d.join("r1.json"), d.join("r2.json"), d.join("skeleton.txt"));
    for r in [&r1, &r2] {
        ok(&["examine", p(&layout), "--top", "TOP", "--model", p(&ckpt), "--auto", "--report", p(r), "--skeleton", p(&sk)]);
    }
    let j1: Value = serde_json::from_slice(&std::fs::read(&r1).unwrap()).unwrap();
    let j2: Value = serde_json::from_slice(&std::fs::read(&r2).unwrap()).unwrap();
    assert_eq!(strip_timing(j1.clone()), strip_timing(j2));
    assert_eq!(j1["counters"]["instances_visited"], 5);
    assert_eq!(j1["counters"]["inference_calls"], 2);
    assert_eq!(j1["counters"]["unique_designs_examined"], 2);
    assert!(j1["timing"]["total_ms"].as_f64().unwrap() > 0.0);
    let skeleton = std::fs::read_to_string(&sk).unwrap();
    assert_eq!(skeleton.lines().filter(|l| l.contains(" at (")).count(), 5);

    let open = d.join("open.json");
    ok(&["examine", p(&layout), "--top", "TOP", "--model", p(&svm), "--report", p(&open)]);
    let o: Value = serde_json::from_slice(&std::fs::read(&open).unwrap()).unwrap();
    assert_eq!(o["complete"], false);
    assert_eq!(code(&["examine", p(&layout), "--top", "TOP", "--model", p(&svm), "--skeleton", p(&sk)]), 2);
    assert_eq!(code(&["examine", p(&layout), "--top", "NOPE", "--model", p(&ckpt)]), 2);
    assert_eq!(code(&["examine", p(&layout), "--top", "TOP", "--model", p(&layout)]), 2);

    let broken = d.join("broken");
    std::fs::create_dir(&broken).unwrap();
    std::fs::write(broken.join("manifest.json"), "{").unwrap();
    assert_eq!(code(&["train", "--dataset", p(&broken), "--out", p(&ckpt)]), 2);
    assert_eq!(code(&["eval", "--model", p(&ckpt), "--dataset", p(&broken)]), 2);
}

#[test]
fn env_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let layout = write_layout(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_ltg"))
        .args(["examine", p(&layout), "--top", "TOP"])
        .env("LTG_MODEL", dir.path().join("missing.ckpt"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.ckpt"));
    assert_eq!(code(&["examine", p(&layout), "--top", "TOP"]), 2);
}
