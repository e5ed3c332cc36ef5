//! Constrained variant search, the adaptation trigger and the runtime loop.

use std::cmp::Ordering;
use std::io::Write;
use std::time::{Duration, Instant};

use crate::data::Dataset;
use crate::elastic::{ElasticNetwork, OperatorKind, VariantConfig};
use crate::monitor::{load_index, LoadForecaster, LoadWeights, ResourceSnapshot, CADENCE_MS};
use crate::perf_index::PerfTables;
use crate::profiler::LatencyCalibration;
use crate::{Error, Result};

/// `J = α·L + β·E`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for Objective {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.0 }
    }
}

impl Objective {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let o = Self { alpha, beta };
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |w: f64| w.is_finite() && w >= 0.0;
        if !ok(self.alpha) || !ok(self.beta) || self.alpha + self.beta <= 0.0 {
            return Err(Error::invalid(format!(
                "objective weights alpha={} beta={} must be >= 0 with a positive sum",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

pub fn objective_j(latency: f64, energy: f64, obj: &Objective) -> f64 {
    obj.alpha * latency + obj.beta * energy
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constraints {
    /// Latency budget, seconds.
    pub t: f64,
    /// Energy budget, joules.
    pub e_b: f64,
    /// Minimum accuracy.
    pub acc_u: f64,
}

impl Default for Constraints {
    fn default() -> Self {
        Self {
            t: f64::INFINITY,
            e_b: f64::INFINITY,
            acc_u: 0.0,
        }
    }
}

impl Constraints {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 || v == f64::INFINITY;
        if !pos(self.t) || !pos(self.e_b) {
            return Err(Error::invalid(format!(
                "latency budget {} and energy budget {} must be positive",
                self.t, self.e_b
            )));
        }
        if !(0.0..=1.0).contains(&self.acc_u) {
            return Err(Error::invalid(format!("accuracy floor {} outside [0,1]", self.acc_u)));
        }
        Ok(())
    }

    /// Whether record `id` satisfies every constraint as recorded.
    pub fn admits(&self, tables: &PerfTables, id: u32) -> bool {
        let (p, q) = tables.record(id);
        q.latency_s <= self.t && q.energy_j <= self.e_b && p.accuracy >= self.acc_u
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub id: u32,
    pub variant_id: String,
    pub latency_s: f64,
    pub energy_j: f64,
    pub accuracy: f64,
    pub j: f64,
}

fn rank(tables: &PerfTables, obj: &Objective, a: u32, b: u32) -> Ordering {
    let (pa, qa) = tables.record(a);
    let (pb, qb) = tables.record(b);
    objective_j(qa.latency_s, qa.energy_j, obj)
        .total_cmp(&objective_j(qb.latency_s, qb.energy_j, obj))
        .then(qa.latency_s.total_cmp(&qb.latency_s))
        .then(qa.energy_j.total_cmp(&qb.energy_j))
        .then_with(|| pa.variant_id.cmp(&pb.variant_id))
}

/// Argmin of J over the variants meeting every constraint, optionally
/// restricted to one exit. Ties go to lower latency, then lower energy,
/// then the lexicographically smaller id. `Ok(None)` means nothing is
/// feasible.
pub fn select_variant(
    tables: &PerfTables,
    constraints: &Constraints,
    obj: &Objective,
    exit: Option<usize>,
) -> Result<Option<Selection>> {
    if tables.is_empty() {
        return Err(Error::invalid("performance tables are empty"));
    }
    let best = tables
        .candidates_within(constraints.t, constraints.e_b)
        .into_iter()
        .filter(|&id| tables.record(id).0.accuracy >= constraints.acc_u)
        .filter(|&id| exit.is_none_or(|e| tables.exit_of(id) == e))
        .min_by(|&a, &b| rank(tables, obj, a, b));
    let Some(id) = best else {
        log::debug!(
            "no variant within T={} E_b={} Acc_u={} exit={exit:?}; relax constraints",
            constraints.t,
            constraints.e_b,
            constraints.acc_u
        );
        return Ok(None);
    };
    let (p, q) = tables.record(id);
    Ok(Some(Selection {
        id,
        variant_id: p.variant_id.clone(),
        latency_s: q.latency_s,
        energy_j: q.energy_j,
        accuracy: p.accuracy,
        j: objective_j(q.latency_s, q.energy_j, obj),
    }))
}

/// Human-readable reason why no variant is feasible.
pub fn infeasibility_hint(tables: &PerfTables, constraints: &Constraints) -> String {
    let min = |f: &dyn Fn(u32) -> f64| (0..tables.len() as u32).map(f).fold(f64::INFINITY, f64::min);
    let l_min = min(&|id| tables.record(id).1.latency_s);
    let e_min = min(&|id| tables.record(id).1.energy_j);
    let a_max = (0..tables.len() as u32)
        .map(|id| tables.record(id).0.accuracy)
        .fold(0.0, f64::max);
    let mut parts = Vec::new();
    if constraints.t < l_min {
        parts.push(format!("latency budget {:.3e}s is below the fastest variant ({l_min:.3e}s)", constraints.t));
    }
    if constraints.e_b < e_min {
        parts.push(format!("energy budget {:.3e}J is below the cheapest variant ({e_min:.3e}J)", constraints.e_b));
    }
    if constraints.acc_u > a_max {
        parts.push(format!("accuracy floor {} exceeds the best variant ({a_max})", constraints.acc_u));
    }
    if parts.is_empty() {
        parts.push("no single variant meets all budgets at once".into());
    }
    format!("{}; relax constraints", parts.join("; "))
}

/// Min-max normalizer; a zero span is rejected.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalizer {
    pub min: f64,
    pub max: f64,
}

impl Normalizer {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && max > min) {
            return Err(Error::invalid(format!("normalizer span [{min}, {max}] must be finite and non-empty")));
        }
        Ok(Self { min, max })
    }

    pub fn unit() -> Self {
        Self { min: 0.0, max: 1.0 }
    }

    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let (lo, hi) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Self::new(lo, hi)
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }
}

/// Demand of one variant against the device's spare capacity.
#[derive(Clone, Debug, PartialEq)]
pub struct DemandCapability {
    pub energy_j: f64,
    pub latency_s: f64,
    pub accuracy: f64,
    /// End-to-end response time: inference plus search overhead. Starts at
    /// the predicted latency; the loop adds the measured search time.
    pub response_s: f64,
    pub c_cpu: f64,
    pub c_gpu: f64,
    pub c_mem: f64,
    pub has_gpu: bool,
    pub norm_latency: Normalizer,
    pub norm_energy: Normalizer,
    pub norm_capacity: Normalizer,
}

impl DemandCapability {
    /// Normalizers taken from the table extrema.
    pub fn from_tables(tables: &PerfTables, id: u32, snap: &ResourceSnapshot, has_gpu: bool) -> Result<Self> {
        let preds = tables.predictive_records();
        let (p, q) = tables.record(id);
        let [c_cpu, c_gpu, c_mem] = snap.capacity();
        Ok(Self {
            energy_j: q.energy_j,
            latency_s: q.latency_s,
            accuracy: p.accuracy,
            response_s: q.latency_s,
            c_cpu,
            c_gpu,
            c_mem,
            has_gpu,
            norm_latency: Normalizer::from_values(preds.iter().map(|r| r.latency_s))?,
            norm_energy: Normalizer::from_values(preds.iter().map(|r| r.energy_j))?,
            norm_capacity: Normalizer::unit(),
        })
    }
}

/// Euclidean distance over the paired dimensions latency↔CPU capacity and
/// energy↔GPU capacity (CPU capacity on GPU-less devices). Accuracy and
/// response time are not paired.
pub fn mismatch_distance(pc: &DemandCapability) -> Result<f64> {
    for n in [pc.norm_latency, pc.norm_energy, pc.norm_capacity] {
        Normalizer::new(n.min, n.max)?;
    }
    let energy_cap = if pc.has_gpu { pc.c_gpu } else { pc.c_cpu };
    let dl = pc.norm_latency.apply(pc.latency_s) - pc.norm_capacity.apply(pc.c_cpu);
    let de = pc.norm_energy.apply(pc.energy_j) - pc.norm_capacity.apply(energy_cap);
    Ok((dl * dl + de * de).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriggerPolicy {
    pub lo: f64,
    pub hi: f64,
    pub cooldown_ms: u64,
    /// Forecast horizon in monitor ticks.
    pub horizon: usize,
}

impl Default for TriggerPolicy {
    fn default() -> Self {
        Self {
            lo: 0.35,
            hi: 0.75,
            cooldown_ms: 1000,
            horizon: 3,
        }
    }
}

impl TriggerPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.lo && self.lo < self.hi && self.hi <= 1.0) {
            return Err(Error::invalid(format!(
                "trigger band needs 0 <= lo < hi <= 1, got lo={} hi={}",
                self.lo, self.hi
            )));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("forecast horizon must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Low,
    High,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Load rose: move to a cheaper variant.
    Downscale,
    /// Load fell: move back to a richer variant.
    Upscale,
}

impl Direction {
    pub fn name(&self) -> &'static str {
        match self {
            Direction::Downscale => "downscale",
            Direction::Upscale => "upscale",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HoldReason {
    InsideBand,
    SameRegime,
    Cooldown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Adapt(Direction),
    Hold(HoldReason),
}

/// What the trigger needs to remember between ticks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriggerState {
    pub regime: Regime,
    pub last_switch_ms: Option<u64>,
}

/// Trigger when the forecast leaves the hysteresis band on the side
/// opposite the current regime and the cooldown has elapsed.
pub fn should_adapt(forecast: f64, state: &TriggerState, policy: &TriggerPolicy, now_ms: u64) -> Decision {
    let dir = match state.regime {
        Regime::Low if forecast > policy.hi => Direction::Downscale,
        Regime::High if forecast < policy.lo => Direction::Upscale,
        _ if (policy.lo..=policy.hi).contains(&forecast) => return Decision::Hold(HoldReason::InsideBand),
        _ => return Decision::Hold(HoldReason::SameRegime),
    };
    let cooled = state
        .last_switch_ms
        .is_none_or(|t| now_ms.saturating_sub(t) >= policy.cooldown_ms);
    if cooled {
        Decision::Adapt(dir)
    } else {
        Decision::Hold(HoldReason::Cooldown)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptEvent {
    pub t_ms: u64,
    pub trigger: String,
    pub old_variant: String,
    pub new_variant: String,
    pub pred_latency_s: f64,
    pub pred_energy_j: f64,
    pub load_forecast: f64,
}

impl AdaptEvent {
    /// A real switch, as opposed to the initial choice or a degradation note.
    pub fn is_switch(&self) -> bool {
        (self.trigger == "downscale" || self.trigger == "upscale") && self.old_variant != self.new_variant
    }
}

#[derive(Clone, Debug)]
pub struct ControllerState {
    pub variant_id: Option<String>,
    pub exit_id: usize,
    pub trigger: TriggerState,
    events: Vec<AdaptEvent>,
}

impl Default for ControllerState {
    fn default() -> Self {
        Self {
            variant_id: None,
            exit_id: 0,
            trigger: TriggerState {
                regime: Regime::Low,
                last_switch_ms: None,
            },
            events: Vec::new(),
        }
    }
}

impl ControllerState {
    pub fn events(&self) -> &[AdaptEvent] {
        &self.events
    }

    pub fn log(&mut self, e: AdaptEvent) {
        self.events.push(e);
    }

    pub fn switches(&self) -> usize {
        self.events.iter().filter(|e| e.is_switch()).count()
    }
}

pub fn write_event_log<W: Write>(out: W, events: &[AdaptEvent]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "t_ms",
        "trigger",
        "old_variant",
        "new_variant",
        "pred_latency_s",
        "pred_energy_j",
        "load_forecast",
    ])?;
    for e in events {
        w.write_record([
            e.t_ms.to_string(),
            e.trigger.clone(),
            e.old_variant.clone(),
            e.new_variant.clone(),
            format!("{:e}", e.pred_latency_s),
            format!("{:e}", e.pred_energy_j),
            format!("{:.6}", e.load_forecast),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Tighten the latency budget in proportion to the forecast load.
pub fn effective_constraints(c: &Constraints, load_forecast: f64) -> Constraints {
    Constraints {
        t: c.t / (1.0 + load_forecast.clamp(0.0, 1.0)),
        ..*c
    }
}

/// Deepest exit with a feasible variant, and the best variant at that exit.
pub fn select_deepest(
    tables: &PerfTables,
    constraints: &Constraints,
    obj: &Objective,
    max_exit: usize,
) -> Result<Option<Selection>> {
    for exit in (1..=max_exit).rev() {
        if let Some(s) = select_variant(tables, constraints, obj, Some(exit))? {
            return Ok(Some(s));
        }
    }
    Ok(None)
}

#[derive(Clone, Debug)]
pub struct LoopConfig {
    pub policy: TriggerPolicy,
    pub constraints: Constraints,
    pub objective: Objective,
    pub weights: LoadWeights,
    pub forecaster: LoadForecaster,
    pub calibration: Option<LatencyCalibration>,
    /// Confidence threshold for per-sample early exits when serving.
    pub confidence: f32,
    /// Variant served when adaptation is disabled; defaults to the deepest
    /// all-baseline variant in the table.
    pub fixed_variant: Option<String>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            policy: TriggerPolicy::default(),
            constraints: Constraints::default(),
            objective: Objective::default(),
            weights: LoadWeights::default(),
            forecaster: LoadForecaster::default(),
            calibration: None,
            confidence: 0.85,
            fixed_variant: None,
        }
    }
}

/// Per-tick record of what the loop saw and served.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tick {
    pub t_ms: u64,
    pub load: f64,
    pub forecast: f64,
    /// Predicted latency of the active variant at this tick's load.
    pub served_latency_s: f64,
    /// Predicted latency of the fixed variant at this tick's load.
    pub fixed_latency_s: f64,
    pub exit_id: usize,
    /// Demand/capability mismatch of the active variant at this tick; `None`
    /// when the tables have no latency or energy spread to normalize by.
    pub mismatch: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct LoopOutcome {
    pub state: ControllerState,
    pub ticks: Vec<Tick>,
    pub search_times: Vec<Duration>,
    /// Selections that broke a constraint they were chosen under.
    pub violations: usize,
    pub fixed_variant: String,
    /// Per-sample exits taken while serving, when a network was attached.
    pub served_exits: Vec<usize>,
}

impl LoopOutcome {
    pub fn mean_served_latency(&self) -> f64 {
        mean(self.ticks.iter().map(|t| t.served_latency_s))
    }

    pub fn mean_fixed_latency(&self) -> f64 {
        mean(self.ticks.iter().map(|t| t.fixed_latency_s))
    }

    pub fn median_search_time(&self) -> Option<Duration> {
        let mut v = self.search_times.clone();
        v.sort();
        v.get(v.len() / 2).copied()
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Network and evaluation samples to serve requests from between ticks.
pub struct Serving<'a> {
    pub net: &'a mut ElasticNetwork,
    pub samples: &'a Dataset,
}

fn deepest_baseline(tables: &PerfTables) -> Option<u32> {
    (0..tables.len() as u32)
        .filter(|&id| {
            let vid = &tables.record(id).0.variant_id;
            VariantConfig::parse(vid).is_ok_and(|v| v.operators.iter().all(|o| *o == OperatorKind::BaselineConv))
        })
        .max_by_key(|&id| tables.exit_of(id))
}

/// Drive the adaptation loop over `snapshots`, one monitor tick each, for at
/// most `duration_ms`.
pub fn run_loop(
    mut serving: Option<Serving<'_>>,
    snapshots: impl IntoIterator<Item = ResourceSnapshot>,
    tables: &PerfTables,
    cfg: &LoopConfig,
    duration_ms: u64,
) -> Result<LoopOutcome> {
    cfg.policy.validate()?;
    cfg.constraints.validate()?;
    cfg.objective.validate()?;
    cfg.weights.validate()?;
    if tables.is_empty() {
        return Err(Error::invalid("performance tables are empty"));
    }
    let fixed = match &cfg.fixed_variant {
        Some(v) => tables
            .id_of(v)
            .ok_or_else(|| Error::invalid(format!("fixed variant {v} not in tables")))?,
        None => deepest_baseline(tables).ok_or_else(|| Error::invalid("tables hold no all-baseline variant"))?,
    };
    let max_exit = (0..tables.len() as u32).map(|id| tables.exit_of(id)).max().unwrap_or(0);
    let calib = cfg.calibration.unwrap_or(LatencyCalibration::new(1.0, 0.0));
    // table latencies are recorded at zero load
    let load_scale = |load: f64| calib.ratio(load) / calib.ratio(0.0);

    let mut forecaster = cfg.forecaster.clone();
    let mut state = ControllerState::default();
    let mut ticks = Vec::new();
    let mut search_times = Vec::new();
    let mut violations = 0;
    let mut served_exits = Vec::new();
    let mut active: Option<u32> = None;
    let mut start: Option<u64> = None;
    let mut last_search_s = 0.0;

    for (n, snap) in snapshots.into_iter().enumerate() {
        let t0 = *start.get_or_insert(snap.t_ms);
        let t_ms = snap.t_ms.saturating_sub(t0);
        if t_ms >= duration_ms {
            break;
        }
        let load = load_index(&snap, &cfg.weights);
        forecaster.push(load);
        let fc = forecaster.forecast(cfg.policy.horizon);
        let f = mean(fc.iter().copied());

        let trigger = if active.is_none() {
            state.trigger.regime = if f > cfg.policy.hi { Regime::High } else { Regime::Low };
            Some("init")
        } else {
            match should_adapt(f, &state.trigger, &cfg.policy, t_ms) {
                Decision::Adapt(d) => {
                    state.trigger.regime = match d {
                        Direction::Downscale => Regime::High,
                        Direction::Upscale => Regime::Low,
                    };
                    Some(d.name())
                }
                Decision::Hold(_) => None,
            }
        };

        if let Some(trigger) = trigger {
            let eff = effective_constraints(&cfg.constraints, f);
            let t = Instant::now();
            let picked = select_deepest(tables, &eff, &cfg.objective, max_exit)?;
            search_times.push(t.elapsed());
            last_search_s = t.elapsed().as_secs_f64();
            let old = active.map(|id| tables.record(id).0.variant_id.clone()).unwrap_or_default();
            match picked {
                Some(sel) => {
                    if !eff.admits(tables, sel.id) {
                        violations += 1;
                    }
                    if let Some(s) = serving.as_mut() {
                        s.net.apply_variant(&VariantConfig::parse(&sel.variant_id)?)?;
                    }
                    if active != Some(sel.id) || trigger == "init" {
                        if trigger != "init" {
                            state.trigger.last_switch_ms = Some(t_ms);
                        }
                        state.log(AdaptEvent {
                            t_ms,
                            trigger: trigger.to_string(),
                            old_variant: old,
                            new_variant: sel.variant_id.clone(),
                            pred_latency_s: sel.latency_s,
                            pred_energy_j: sel.energy_j,
                            load_forecast: f,
                        });
                    }
                    active = Some(sel.id);
                    state.variant_id = Some(sel.variant_id.clone());
                    state.exit_id = tables.exit_of(sel.id);
                }
                None => {
                    log::warn!(
                        "t={t_ms}ms: {}; keeping current variant",
                        infeasibility_hint(tables, &eff)
                    );
                    let keep = active.unwrap_or(fixed);
                    let (_, q) = tables.record(keep);
                    state.log(AdaptEvent {
                        t_ms,
                        trigger: "degraded".into(),
                        old_variant: old,
                        new_variant: tables.record(keep).0.variant_id.clone(),
                        pred_latency_s: q.latency_s,
                        pred_energy_j: q.energy_j,
                        load_forecast: f,
                    });
                    if active.is_none() {
                        if let Some(s) = serving.as_mut() {
                            s.net.apply_variant(&VariantConfig::parse(&tables.record(keep).0.variant_id)?)?;
                        }
                        state.variant_id = Some(tables.record(keep).0.variant_id.clone());
                        state.exit_id = tables.exit_of(keep);
                    }
                    active = Some(keep);
                }
            }
        }

        if let Some(s) = serving.as_mut() {
            if !s.samples.is_empty() {
                let (x, _) = s.samples.batch(&[n % s.samples.len()]);
                let exit = state.exit_id;
                s.net.set_exit(exit)?;
                // per-sample exits can only stop at or before the chosen exit
                let (_, taken) = adaptive_upto(s.net, &x, cfg.confidence, exit)?;
                served_exits.push(taken);
            }
        }

        let scale = load_scale(load);
        let id = active.expect("selection made on the first tick");
        let mismatch = DemandCapability::from_tables(tables, id, &snap, cfg.weights.w_gpu > 0.0)
            .ok()
            .map(|mut pc| {
                pc.response_s += last_search_s;
                mismatch_distance(&pc)
            })
            .transpose()?;
        ticks.push(Tick {
            t_ms,
            load,
            forecast: f,
            served_latency_s: tables.record(id).1.latency_s * scale,
            fixed_latency_s: tables.record(fixed).1.latency_s * scale,
            exit_id: state.exit_id,
            mismatch,
        });
    }

    Ok(LoopOutcome {
        state,
        ticks,
        search_times,
        violations,
        fixed_variant: tables.record(fixed).0.variant_id.clone(),
        served_exits,
    })
}

/// Confidence-exit inference capped at `max_exit`.
fn adaptive_upto(
    net: &mut ElasticNetwork,
    x: &crate::tinynn::Tensor,
    threshold: f32,
    max_exit: usize,
) -> Result<(crate::tinynn::Tensor, usize)> {
    for e in 1..max_exit {
        let logits = net.forward_to_exit(x, e)?;
        let conf = crate::tinynn::softmax_cross_entropy(logits.data(), 0)?.confidence;
        if threshold <= 1.0 && conf >= threshold {
            return Ok((logits, e));
        }
    }
    Ok((net.forward_to_exit(x, max_exit)?, max_exit))
}

/// Constant-rate replay helper: stamps `loads` at the monitor cadence.
pub fn snapshots_from_loads(loads: &[f64]) -> Vec<ResourceSnapshot> {
    loads
        .iter()
        .enumerate()
        .map(|(i, &u)| ResourceSnapshot::new(i as u64 * CADENCE_MS, u, 0.0, u, None))
        .collect()
}
