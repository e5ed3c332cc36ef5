use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use adascale::perf_index::PerfTables;

const SMALL: &[&str] = &[
    "--set",
    "data.train=400",
    "--set",
    "data.eval=200",
    "--set",
    "train.max_epochs=1",
    "--set",
    "train.milestones=",
    "--set",
    "train.distill_epochs=1",
    "--set",
    "constraints.acc_u=0",
];

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn adascale(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adascale"))
        .args(args)
        .arg("--config")
        .arg(configs().join("run.ini"))
        .arg("--out")
        .arg(out)
        .args(SMALL)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = adascale(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

fn summary(dir: &Path) -> std::collections::HashMap<String, String> {
    rows(&dir.join("summary.csv"))
        .into_iter()
        .map(|r| (r[0].to_string(), r[1].to_string()))
        .collect()
}

fn assert_static_svg(path: &Path) {
    let text = fs::read_to_string(path).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    assert!(doc.descendants().all(|n| n.tag_name().name() != "script"));
    assert!(doc.descendants().any(|n| n.tag_name().name() == "polyline"));
}

#[test]
fn full_pipeline_on_small_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();

    ok(out, &["train"]);
    assert_eq!(rows(&out.join("train_report.csv")).len(), 4);

    ok(out, &["profile"]);
    let profile = fs::read(out.join("profile.csv")).unwrap();
    assert_eq!(rows(&out.join("profile.csv")).len(), 480);
    ok(out, &["profile"]);
    assert_eq!(fs::read(out.join("profile.csv")).unwrap(), profile);
    let params: Vec<u64> = rows(&out.join("stages.csv")).iter().map(|r| r[4].parse().unwrap()).collect();
    assert!(params.windows(2).all(|w| w[1] > w[0]), "{params:?}");

    ok(out, &["build-index"]);
    let tables = fs::read(out.join("tables.adpt")).unwrap();
    let loaded = PerfTables::from_bytes(&tables).unwrap();
    assert_eq!(loaded.len(), 480);
    assert_eq!(rows(&out.join("index.csv")).len(), 480);
    ok(out, &["build-index"]);
    assert_eq!(fs::read(out.join("tables.adpt")).unwrap(), tables);

    ok(out, &["simulate"]);
    let s = summary(out);
    assert!(s["switches"].parse::<usize>().unwrap() >= 2, "{s:?}");
    assert_eq!(s["violations"], "0");
    let events = rows(&out.join("events.csv"));
    assert_eq!(&events[0][1], "init");
    assert_static_svg(&out.join("latency.svg"));
    assert_static_svg(&out.join("load.svg"));

    ok(out, &["simulate", "--set", "simulate.pattern=steady"]);
    assert_eq!(summary(out)["switches"], "0");
    assert_eq!(rows(&out.join("events.csv")).len(), 1);

    ok(out, &["report"]);
    let md = fs::read_to_string(out.join("report.md")).unwrap();
    for r in rows(&out.join("train_report.csv")) {
        assert!(md.contains(&format!("| {} | {} | {} |", &r[0], &r[1], &r[2])), "stage {} missing", &r[0]);
    }
    let first = &rows(&out.join("index.csv"))[0];
    assert!(md.contains(&first[5]) && md.contains(&first[6]));
    let stage_lines: Vec<&str> = md
        .lines()
        .skip_while(|l| !l.starts_with("## Stages"))
        .skip(4)
        .take_while(|l| l.starts_with('|'))
        .collect();
    let order: Vec<usize> = stage_lines
        .iter()
        .map(|l| l.split('|').nth(1).unwrap().trim().parse().unwrap())
        .collect();
    assert_eq!(order, vec![1, 2, 3, 4]);
}

#[test]
fn resume_reproduces_uninterrupted_training() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["train"]);
    let full = fs::read(out.join("model.ckpt")).unwrap();
    for s in 3..=4 {
        fs::remove_file(out.join(format!("stages/train.stage{s}"))).unwrap();
    }
    fs::remove_file(out.join("model.ckpt")).unwrap();
    ok(out, &["train", "--resume"]);
    assert_eq!(fs::read(out.join("model.ckpt")).unwrap(), full);
}

#[test]
fn bad_arch_spec_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let arch = dir.path().join("broken.arch");
    fs::write(&arch, "[network]\ninput = 1x16x16\nnum_classes = four\n").unwrap();
    let o = adascale(dir.path(), &["train", "--set", &format!("paths.arch={}", arch.display())]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn unknown_setting_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = adascale(dir.path(), &["profile", "--set", "train.epochz=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.epochz"));
}

#[test]
fn corrupted_tables_fail_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["train"]);
    ok(out, &["build-index"]);
    let path = out.join("tables.adpt");
    let mut bytes = fs::read(&path).unwrap();
    bytes[100] ^= 0x40;
    fs::write(&path, bytes).unwrap();
    let o = adascale(out, &["simulate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("corrupt"));
}

#[test]
fn missing_inputs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(adascale(dir.path(), &["build-index"]).status.code(), Some(2));
    assert_eq!(adascale(dir.path(), &["simulate"]).status.code(), Some(2));
}

#[test]
fn report_on_empty_outputs_has_empty_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["report"]);
    assert!(out.contains("report.md"));
    let md = fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(md.contains("## Stages") && md.contains("## Variants") && md.contains("## Simulation"));
    let data_rows = md.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| stage") && !l.starts_with("| variant") && !l.starts_with("| metric")).count();
    assert_eq!(data_rows, 0);
}
