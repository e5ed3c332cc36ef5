//! Markdown summary over whatever CSVs exist in an output directory.

use std::collections::HashMap;
use std::fmt::Write;
use std::path::Path;

use crate::commands::{write_atomic, INDEX_CSV, STAGES_CSV, SUMMARY_CSV, TRAIN_CSV};
use crate::CliError;

pub const REPORT_MD: &str = "report.md";

type Row = HashMap<String, String>;

fn read_rows(path: &Path) -> Result<Vec<Row>, CliError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(header.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect());
    }
    Ok(out)
}

fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let cells: Vec<String> = r.iter().map(|c| c.replace('|', "\\|")).collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
    }
    out.push('\n');
}

fn field(row: Option<&Row>, key: &str) -> String {
    row.and_then(|r| r.get(key)).cloned().unwrap_or_default()
}

fn depth(row: &Row, key: &str) -> usize {
    row.get(key).and_then(|v| v.parse().ok()).unwrap_or(usize::MAX)
}

/// Build `report.md` in `dir`; missing inputs give empty tables.
pub fn render(dir: &Path) -> Result<String, CliError> {
    let train = read_rows(&dir.join(TRAIN_CSV))?;
    let stages = read_rows(&dir.join(STAGES_CSV))?;
    let index = read_rows(&dir.join(INDEX_CSV))?;
    let summary = read_rows(&dir.join(SUMMARY_CSV))?;

    let mut out = String::from("# AdaScale run report\n\n");

    out.push_str("## Stages\n\n");
    let mut ids: Vec<usize> = train.iter().chain(&stages).map(|r| depth(r, "stage")).collect();
    ids.sort_unstable();
    ids.dedup();
    let rows: Vec<Vec<String>> = ids
        .iter()
        .map(|&s| {
            let t = train.iter().find(|r| depth(r, "stage") == s);
            let p = stages.iter().find(|r| depth(r, "stage") == s);
            vec![
                s.to_string(),
                field(t, "epochs"),
                field(t, "acc"),
                field(p, "C"),
                field(p, "P"),
                field(p, "S"),
                field(p, "latency_s"),
                field(p, "energy_j"),
            ]
        })
        .collect();
    table(
        &mut out,
        &["stage", "epochs", "accuracy", "FLOPs", "params", "storage (B)", "latency (s)", "energy (J)"],
        &rows,
    );

    out.push_str("## Variants\n\n");
    let mut variants: Vec<&Row> = index.iter().collect();
    variants.sort_by_key(|r| depth(r, "exit"));
    let rows: Vec<Vec<String>> = variants
        .iter()
        .map(|r| {
            let r = Some(*r);
            vec![
                field(r, "variant_id"),
                field(r, "exit"),
                field(r, "accuracy"),
                field(r, "latency_s"),
                field(r, "energy_j"),
            ]
        })
        .collect();
    table(&mut out, &["variant", "exit", "accuracy", "latency (s)", "energy (J)"], &rows);

    out.push_str("## Simulation\n\n");
    let rows: Vec<Vec<String>> = summary
        .iter()
        .map(|r| vec![field(Some(r), "key"), field(Some(r), "value")])
        .collect();
    table(&mut out, &["metric", "value"], &rows);
    Ok(out)
}

pub fn report(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("output dir {} is not writable: {e}", dir.display())))?;
    let md = render(dir)?;
    let path = dir.join(REPORT_MD);
    write_atomic(&path, md.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}
