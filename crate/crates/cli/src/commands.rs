use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use adascale::adaptation::{run_loop, write_event_log, Constraints, LoopConfig, LoopOutcome, Serving};
use adascale::data::{oriented_bars, Dataset};
use adascale::elastic::{ElasticNetwork, OperatorKind, VariantConfig};
use adascale::monitor::{read_trace, synth_trace};
use adascale::perf_index::{build_tables, PerfTables};
use adascale::profiler::{profile_variant, write_profile_csv};
use adascale::train::pretrain_all;

use crate::config::{LatencyBudget, RunConfig};
use crate::svg::{Chart, Series};
use crate::CliError;

pub const CHECKPOINT: &str = "model.ckpt";
pub const TRAIN_CSV: &str = "train_report.csv";
pub const PROFILE_CSV: &str = "profile.csv";
pub const STAGES_CSV: &str = "stages.csv";
pub const TABLES: &str = "tables.adpt";
pub const INDEX_CSV: &str = "index.csv";
pub const EVENTS_CSV: &str = "events.csv";
pub const TICKS_CSV: &str = "ticks.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const LATENCY_SVG: &str = "latency.svg";
pub const LOAD_SVG: &str = "load.svg";

/// Write through a temporary sibling so reruns never leave a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> adascale::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn ensure_out(cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Config(format!("output dir {} is not writable: {e}", cfg.out.display())))
}

fn build_net(cfg: &RunConfig) -> Result<ElasticNetwork, CliError> {
    ElasticNetwork::build(&cfg.arch, cfg.seed).map_err(|e| CliError::Config(format!("architecture: {e}")))
}

fn trained_net(cfg: &RunConfig) -> Result<ElasticNetwork, CliError> {
    let path = cfg.out.join(CHECKPOINT);
    let bytes = fs::read(&path)
        .map_err(|e| CliError::Config(format!("no checkpoint at {} ({e}); run `adascale train` first", path.display())))?;
    let mut net = build_net(cfg)?;
    let extra = net.load_checkpoint_bytes(&bytes)?;
    if !extra.is_empty() {
        return Err(CliError::Config(format!(
            "checkpoint {} holds {} parameters the architecture does not know, e.g. {}",
            path.display(),
            extra.len(),
            extra[0]
        )));
    }
    Ok(net)
}

fn datasets(cfg: &RunConfig) -> Result<(Dataset, Dataset), CliError> {
    oriented_bars(&cfg.data, cfg.seed).map_err(|e| CliError::Config(format!("data: {e}")))
}

pub fn train(cfg: &RunConfig, resume: bool) -> Result<(), CliError> {
    ensure_out(cfg)?;
    let (train, eval) = datasets(cfg)?;
    let mut net = build_net(cfg)?;
    let stages = cfg.out.join("stages");
    fs::create_dir_all(&stages)?;
    let report = pretrain_all(&mut net, &train, &eval, &cfg.train, Some(&stages.join("train")), resume)?;
    write_atomic(&cfg.out.join(CHECKPOINT), &net.checkpoint_bytes())?;
    write_atomic(&cfg.out.join(TRAIN_CSV), &csv_bytes(|b| report.write_csv(b))?)?;
    for s in &report.stages {
        println!(
            "stage {}: {} epochs, eval accuracy {:.4}{}",
            s.stage,
            s.epochs,
            s.acc,
            if s.reached { "" } else { " (threshold not reached)" }
        );
    }
    println!(
        "trained {} stages in {} epochs, {:.1}s; checkpoint {}",
        report.stages.len(),
        report.total_epochs(),
        report.total_seconds(),
        cfg.out.join(CHECKPOINT).display()
    );
    Ok(())
}

/// Variant with the reference operator in every slot, exiting at `exit`.
fn reference_variant(net: &ElasticNetwork, exit: usize) -> VariantConfig {
    let pool = net.operator_pool();
    let op = if pool.contains(&OperatorKind::BaselineConv) {
        OperatorKind::BaselineConv
    } else {
        pool[0]
    };
    VariantConfig::new(vec![op; net.num_slots()], exit)
}

pub fn profile(cfg: &RunConfig) -> Result<(), CliError> {
    ensure_out(cfg)?;
    // intrinsic metrics and predictions do not depend on trained weights
    let mut net = build_net(cfg)?;
    let variants = net.enumerate_variants(cfg.budget);
    let rows = variants
        .iter()
        .map(|v| profile_variant(&mut net, v, &cfg.device, &cfg.calibration))
        .collect::<adascale::Result<Vec<_>>>()?;
    write_atomic(&cfg.out.join(PROFILE_CSV), &csv_bytes(|b| write_profile_csv(b, &rows))?)?;

    let stages = (1..=net.num_exits())
        .map(|e| {
            let v = reference_variant(&net, e);
            profile_variant(&mut net, &v, &cfg.device, &cfg.calibration)
        })
        .collect::<adascale::Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["stage", "variant_id", "C", "P", "S", "M", "latency_s", "energy_j"])?;
    for (i, r) in stages.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            r.variant_id.clone(),
            r.intrinsics.flops.to_string(),
            r.intrinsics.params.to_string(),
            r.intrinsics.storage.to_string(),
            r.memory_bytes.to_string(),
            format!("{:e}", r.latency_s),
            format!("{:e}", r.energy_j),
        ])?;
    }
    write_atomic(&cfg.out.join(STAGES_CSV), &w.into_inner().map_err(|e| e.into_error())?)?;
    println!("profiled {} variants on {}; {}", rows.len(), cfg.device.name, cfg.out.join(PROFILE_CSV).display());
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn build_index(cfg: &RunConfig) -> Result<(), CliError> {
    ensure_out(cfg)?;
    let mut net = trained_net(cfg)?;
    let (_, eval) = datasets(cfg)?;
    let variants = net.enumerate_variants(cfg.budget);
    let accs = net.variant_accuracies(&variants, eval.images(), eval.labels())?;
    let acc: HashMap<String, f64> = variants.iter().map(|v| v.variant_id.clone()).zip(accs).collect();
    let tables = build_tables(&mut net, &variants, &cfg.device, &cfg.calibration, &acc)?;

    let path = cfg.out.join(TABLES);
    tables.save(&path)?;
    let back = PerfTables::load(&path)?;
    if back.to_bytes() != tables.to_bytes() {
        return Err(CliError::Violation(format!("{} does not reload to the built tables", path.display())));
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "variant_id", "exit", "params", "storage", "accuracy", "latency_s", "energy_j"])?;
    for id in 0..tables.len() as u32 {
        let (p, q) = tables.record(id);
        w.write_record([
            id.to_string(),
            p.variant_id.clone(),
            tables.exit_of(id).to_string(),
            p.params.to_string(),
            p.storage.to_string(),
            format!("{:.6}", p.accuracy),
            format!("{:e}", q.latency_s),
            format!("{:e}", q.energy_j),
        ])?;
    }
    write_atomic(&cfg.out.join(INDEX_CSV), &w.into_inner().map_err(|e| e.into_error())?)?;
    println!("indexed {} variants; {} sha256 {}", tables.len(), path.display(), hex(&tables.digest()));
    Ok(())
}

/// Resolve the configured latency budget against the tables.
pub fn latency_budget(cfg: &RunConfig, tables: &PerfTables) -> Result<f64, CliError> {
    match cfg.latency_budget {
        LatencyBudget::Seconds(t) => Ok(t),
        LatencyBudget::Auto { factor } => {
            let ids = 0..tables.len() as u32;
            let deepest = ids.clone().map(|id| tables.exit_of(id)).max().unwrap_or(0);
            let fastest = ids
                .filter(|&id| tables.exit_of(id) == deepest && tables.record(id).0.accuracy >= cfg.acc_floor)
                .map(|id| tables.record(id).1.latency_s)
                .fold(f64::INFINITY, f64::min);
            if !fastest.is_finite() {
                return Err(CliError::Config(format!(
                    "constraints.t = auto needs an exit-{deepest} variant with accuracy >= {}; set constraints.t explicitly",
                    cfg.acc_floor
                )));
            }
            Ok(factor * fastest)
        }
    }
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    ensure_out(cfg)?;
    let path = cfg.out.join(TABLES);
    if !path.exists() {
        return Err(CliError::Config(format!(
            "no tables at {}; run `adascale build-index` first",
            path.display()
        )));
    }
    let tables = PerfTables::load(&path)?;
    let t = latency_budget(cfg, &tables)?;
    let trace = match &cfg.trace {
        Some(p) => read_trace(fs::File::open(p)?)?,
        None => synth_trace(cfg.sim.pattern, cfg.sim.duration_ms, cfg.sim.trace_seed)?,
    };
    let loop_cfg = LoopConfig {
        policy: cfg.policy,
        constraints: Constraints {
            t,
            e_b: cfg.energy_budget,
            acc_u: cfg.acc_floor,
        },
        objective: cfg.objective,
        weights: cfg.weights,
        forecaster: cfg.forecaster.clone(),
        calibration: Some(cfg.calibration),
        confidence: cfg.sim.confidence,
        fixed_variant: None,
    };
    let out = if cfg.sim.serve {
        let mut net = trained_net(cfg)?;
        let (_, eval) = datasets(cfg)?;
        let serving = Serving {
            net: &mut net,
            samples: &eval,
        };
        run_loop(Some(serving), trace, &tables, &loop_cfg, cfg.sim.duration_ms)?
    } else {
        run_loop(None, trace, &tables, &loop_cfg, cfg.sim.duration_ms)?
    };

    write_atomic(
        &cfg.out.join(EVENTS_CSV),
        &csv_bytes(|b| write_event_log(b, out.state.events()))?,
    )?;
    write_ticks(cfg, &out)?;
    write_summary(cfg, &out, t)?;
    write_charts(cfg, &out)?;

    let ratio = out.mean_served_latency() / out.mean_fixed_latency();
    println!(
        "{} ticks, {} switches, {} violations; mean latency {:.3e}s adaptive vs {:.3e}s fixed ({:.1}% lower)",
        out.ticks.len(),
        out.state.switches(),
        out.violations,
        out.mean_served_latency(),
        out.mean_fixed_latency(),
        100.0 * (1.0 - ratio)
    );
    if out.violations > 0 {
        return Err(CliError::Violation(format!(
            "{} selections broke the constraints they were chosen under",
            out.violations
        )));
    }
    Ok(())
}

fn write_ticks(cfg: &RunConfig, out: &LoopOutcome) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t_ms", "load", "forecast", "served_latency_s", "fixed_latency_s", "exit_id", "mismatch"])?;
    for t in &out.ticks {
        w.write_record([
            t.t_ms.to_string(),
            format!("{:.6}", t.load),
            format!("{:.6}", t.forecast),
            format!("{:e}", t.served_latency_s),
            format!("{:e}", t.fixed_latency_s),
            t.exit_id.to_string(),
            t.mismatch.map(|m| format!("{m:.6}")).unwrap_or_default(),
        ])?;
    }
    write_atomic(&cfg.out.join(TICKS_CSV), &w.into_inner().map_err(|e| e.into_error())?)
}

fn write_summary(cfg: &RunConfig, out: &LoopOutcome, t: f64) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["key", "value"])?;
    let trace = match &cfg.trace {
        Some(p) => p.display().to_string(),
        None => cfg.sim.pattern.to_string(),
    };
    let rows = [
        ("trace", trace),
        ("ticks", out.ticks.len().to_string()),
        ("switches", out.state.switches().to_string()),
        ("violations", out.violations.to_string()),
        ("latency_budget_s", format!("{t:e}")),
        ("fixed_variant", out.fixed_variant.clone()),
        ("final_variant", out.state.variant_id.clone().unwrap_or_default()),
        ("mean_served_latency_s", format!("{:e}", out.mean_served_latency())),
        ("mean_fixed_latency_s", format!("{:e}", out.mean_fixed_latency())),
        ("mean_mismatch", mean_mismatch(out)),
        (
            "latency_ratio",
            format!("{:.4}", out.mean_served_latency() / out.mean_fixed_latency()),
        ),
    ];
    for (k, v) in rows {
        w.write_record([k, v.as_str()])?;
    }
    write_atomic(&cfg.out.join(SUMMARY_CSV), &w.into_inner().map_err(|e| e.into_error())?)
}

fn mean_mismatch(out: &LoopOutcome) -> String {
    let m: Vec<f64> = out.ticks.iter().filter_map(|t| t.mismatch).collect();
    if m.is_empty() {
        String::new()
    } else {
        format!("{:.4}", m.iter().sum::<f64>() / m.len() as f64)
    }
}

fn write_charts(cfg: &RunConfig, out: &LoopOutcome) -> Result<(), CliError> {
    let secs = |ms: u64| ms as f64 / 1000.0;
    let switches: Vec<f64> = out
        .state
        .events()
        .iter()
        .filter(|e| e.is_switch())
        .map(|e| secs(e.t_ms))
        .collect();
    let latency = Chart {
        title: "Predicted inference latency",
        x_label: "time (s)",
        y_label: "latency (ms)",
        series: vec![
            Series {
                name: "adaptive",
                color: "#1f77b4",
                dashed: false,
                points: out.ticks.iter().map(|t| (secs(t.t_ms), 1e3 * t.served_latency_s)).collect(),
            },
            Series {
                name: "fixed",
                color: "#d62728",
                dashed: true,
                points: out.ticks.iter().map(|t| (secs(t.t_ms), 1e3 * t.fixed_latency_s)).collect(),
            },
        ],
        guides: vec![],
        markers: switches.clone(),
    };
    let load = Chart {
        title: "Load index",
        x_label: "time (s)",
        y_label: "load",
        series: vec![
            Series {
                name: "observed",
                color: "#2ca02c",
                dashed: false,
                points: out.ticks.iter().map(|t| (secs(t.t_ms), t.load)).collect(),
            },
            Series {
                name: "forecast",
                color: "#9467bd",
                dashed: true,
                points: out.ticks.iter().map(|t| (secs(t.t_ms), t.forecast)).collect(),
            },
        ],
        guides: vec![(cfg.policy.lo, "lo".into()), (cfg.policy.hi, "hi".into())],
        markers: switches,
    };
    write_atomic(&cfg.out.join(LATENCY_SVG), latency.render().as_bytes())?;
    write_atomic(&cfg.out.join(LOAD_SVG), load.render().as_bytes())
}
