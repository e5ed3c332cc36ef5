//! Device utilization sampling, the scalar load index and autoregressive
//! load forecasting.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const CADENCE_MS: u64 = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResourceSnapshot {
    pub t_ms: u64,
    pub u_cpu: f64,
    pub u_gpu: f64,
    pub u_mem: f64,
    pub f_cpu_hz: Option<f64>,
}

fn clamp01(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

impl ResourceSnapshot {
    /// Utilizations are clamped into `[0, 1]`.
    pub fn new(t_ms: u64, u_cpu: f64, u_gpu: f64, u_mem: f64, f_cpu_hz: Option<f64>) -> Self {
        Self {
            t_ms,
            u_cpu: clamp01(u_cpu),
            u_gpu: clamp01(u_gpu),
            u_mem: clamp01(u_mem),
            f_cpu_hz,
        }
    }

    /// Spare capacity `1 − u` per device.
    pub fn capacity(&self) -> [f64; 3] {
        [1.0 - self.u_cpu, 1.0 - self.u_gpu, 1.0 - self.u_mem]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoadWeights {
    pub w_cpu: f64,
    pub w_gpu: f64,
    pub w_mem: f64,
}

impl Default for LoadWeights {
    fn default() -> Self {
        Self {
            w_cpu: 1.0,
            w_gpu: 1.0,
            w_mem: 1.0,
        }
    }
}

impl LoadWeights {
    pub fn new(w_cpu: f64, w_gpu: f64, w_mem: f64) -> Result<Self> {
        let w = Self { w_cpu, w_gpu, w_mem };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_cpu, self.w_gpu, self.w_mem];
        if ws.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || self.total() <= 0.0 {
            return Err(Error::invalid(format!("load weights {ws:?} must be >= 0 with a positive sum")));
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.w_cpu + self.w_gpu + self.w_mem
    }

    /// The same weights with the GPU term dropped, for GPU-less hosts.
    pub fn without_gpu(self) -> Self {
        Self { w_gpu: 0.0, ..self }
    }
}

/// `I = (w_cpu·u_cpu + w_gpu·u_gpu + w_mem·u_mem) / W`.
pub fn load_index(s: &ResourceSnapshot, w: &LoadWeights) -> f64 {
    let i = (w.w_cpu * clamp01(s.u_cpu) + w.w_gpu * clamp01(s.u_gpu) + w.w_mem * clamp01(s.u_mem)) / w.total();
    clamp01(i)
}

/// `(idle, total)` jiffies of an aggregate `cpu` line from `/proc/stat`.
/// Idle includes iowait; the total sums user through steal.
pub fn parse_stat_line(line: &str) -> Result<(u64, u64)> {
    let mut it = line.split_whitespace();
    let label = it.next().unwrap_or("");
    if !label.starts_with("cpu") {
        return Err(Error::invalid(format!("not a cpu stat line: `{line}`")));
    }
    let fields = it
        .take(8)
        .map(|f| f.parse::<u64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::invalid(format!("malformed cpu stat line: `{line}`")))?;
    if fields.len() < 4 {
        return Err(Error::invalid(format!("cpu stat line has {} counters", fields.len())));
    }
    let idle = fields[3] + fields.get(4).copied().unwrap_or(0);
    Ok((idle, fields.iter().sum()))
}

/// `u = 1 − Δidle/Δtotal` between two snapshots of the aggregate line.
pub fn cpu_util_from_stat(prev: &str, curr: &str) -> Result<f64> {
    let (i0, t0) = parse_stat_line(prev)?;
    let (i1, t1) = parse_stat_line(curr)?;
    if t1 < t0 || i1 < i0 {
        return Err(Error::invalid("cpu counters went backwards"));
    }
    let dt = t1 - t0;
    if dt == 0 {
        return Err(Error::invalid("no time elapsed between stat snapshots"));
    }
    Ok(clamp01(1.0 - (i1 - i0) as f64 / dt as f64))
}

/// Fitted `I_t = c + Σ φ_j I_{t−j}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ArModel {
    pub phi: Vec<f64>,
    pub intercept: f64,
    pub residual_variance: f64,
}

impl ArModel {
    pub fn order(&self) -> usize {
        self.phi.len()
    }

    /// Persistence forecaster used before enough history exists.
    pub fn persistence() -> Self {
        Self {
            phi: vec![1.0],
            intercept: 0.0,
            residual_variance: 0.0,
        }
    }

    /// One-step prediction from the most recent `p` values (unclamped).
    pub fn predict_next(&self, history: &[f64]) -> f64 {
        let n = history.len();
        self.intercept
            + self
                .phi
                .iter()
                .enumerate()
                .map(|(j, p)| p * history[n - 1 - j])
                .sum::<f64>()
    }
}

/// Least-squares AR(p) fit on a centered design. Regressors with no
/// variance (such as a constant series) get a zero coefficient.
pub fn fit_ar(history: &[f64], p: usize) -> Result<ArModel> {
    fit_ar_ranked(history, p).map(|(m, _)| m)
}

/// As [`fit_ar`], also reporting how many lag regressors had variance.
fn fit_ar_ranked(history: &[f64], p: usize) -> Result<(ArModel, usize)> {
    if history.len() < 2 * p + 1 {
        return Err(Error::invalid(format!(
            "AR({p}) needs at least {} points, got {}",
            2 * p + 1,
            history.len()
        )));
    }
    if history.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in load history"));
    }
    let rows = history.len() - p;
    let y: Vec<f64> = history[p..].to_vec();
    let my = y.iter().sum::<f64>() / rows as f64;
    if p == 0 {
        let var = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / rows as f64;
        return Ok((
            ArModel {
                phi: Vec::new(),
                intercept: my,
                residual_variance: var,
            },
            0,
        ));
    }
    // column j holds lag j+1
    let col = |j: usize, r: usize| history[p + r - 1 - j];
    let means: Vec<f64> = (0..p).map(|j| (0..rows).map(|r| col(j, r)).sum::<f64>() / rows as f64).collect();
    let mut xtx = nalgebra::DMatrix::<f64>::zeros(p, p);
    let mut xty = nalgebra::DVector::<f64>::zeros(p);
    for r in 0..rows {
        for a in 0..p {
            let xa = col(a, r) - means[a];
            xty[a] += xa * (y[r] - my);
            for b in 0..p {
                xtx[(a, b)] += xa * (col(b, r) - means[b]);
            }
        }
    }
    let scale = (0..p).map(|a| xtx[(a, a)]).fold(0.0f64, f64::max);
    // loads live in [0, 1], so an absolute floor on per-row variance is meaningful
    let floor = (1e-12 * scale).max(1e-14 * rows as f64);
    let live: Vec<usize> = (0..p).filter(|a| xtx[(*a, *a)] > floor).collect();
    let mut phi = vec![0.0; p];
    if !live.is_empty() {
        let k = live.len();
        let sub = nalgebra::DMatrix::from_fn(k, k, |i, j| xtx[(live[i], live[j])]);
        let rhs = nalgebra::DVector::from_fn(k, |i, _| xty[live[i]]);
        let sol = sub
            .clone()
            .cholesky()
            .map(|c| c.solve(&rhs))
            .or_else(|| sub.lu().solve(&rhs))
            .ok_or_else(|| Error::Numerical("singular AR normal equations".into()))?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("singular AR normal equations".into()));
        }
        for (i, a) in live.iter().enumerate() {
            phi[*a] = sol[i];
        }
    }
    let intercept = my - phi.iter().zip(&means).map(|(f, m)| f * m).sum::<f64>();
    let model = ArModel {
        phi,
        intercept,
        residual_variance: 0.0,
    };
    let sse: f64 = (0..rows)
        .map(|r| (y[r] - model.predict_next(&history[..p + r])).powi(2))
        .sum();
    Ok((
        ArModel {
            residual_variance: sse / rows as f64,
            ..model
        },
        live.len(),
    ))
}

/// Iterated one-step predictions, each clamped to `[0, 1]`.
pub fn forecast(model: &ArModel, history: &[f64], k: usize) -> Result<Vec<f64>> {
    if history.len() < model.order() {
        return Err(Error::invalid(format!(
            "forecast needs {} history points, got {}",
            model.order(),
            history.len()
        )));
    }
    let mut buf: Vec<f64> = history[history.len() - model.order()..].to_vec();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let next = clamp01(model.predict_next(&buf));
        out.push(next);
        if model.order() > 0 {
            buf.remove(0);
            buf.push(next);
        }
    }
    Ok(out)
}

/// Sliding-window load history with periodic AR refits.
#[derive(Clone, Debug)]
pub struct LoadForecaster {
    pub order: usize,
    pub window: usize,
    pub refit_every: usize,
    history: Vec<f64>,
    model: Option<ArModel>,
    since_fit: usize,
}

impl Default for LoadForecaster {
    fn default() -> Self {
        Self::new(3, 200, 50)
    }
}

impl LoadForecaster {
    pub fn new(order: usize, window: usize, refit_every: usize) -> Self {
        Self {
            order,
            window: window.max(2 * order + 1),
            refit_every: refit_every.max(1),
            history: Vec::new(),
            model: None,
            since_fit: 0,
        }
    }

    pub fn push(&mut self, load: f64) {
        self.history.push(clamp01(load));
        if self.history.len() > self.window {
            let drop = self.history.len() - self.window;
            self.history.drain(..drop);
        }
        self.since_fit += 1;
        let ready = self.history.len() >= 2 * self.order + 1;
        // refit on every sample while the window is still filling, since
        // early fits on a handful of points are poor
        let filling = self.history.len() < self.window;
        if ready && (self.model.is_none() || filling || self.since_fit >= self.refit_every) {
            // a window where some lag never varies (a flat stretch) says
            // nothing about dynamics; keep the previous model, or stay on
            // persistence and retry on the next sample
            if let Ok((m, live)) = fit_ar_ranked(&self.history, self.order) {
                if live == self.order {
                    self.model = Some(m);
                    self.since_fit = 0;
                }
            }
        }
    }

    pub fn model(&self) -> Option<&ArModel> {
        self.model.as_ref()
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// `k`-step forecast; persistence until the first fit.
    pub fn forecast(&self, k: usize) -> Vec<f64> {
        match (&self.model, self.history.last()) {
            (_, None) => vec![0.0; k],
            (Some(m), _) if self.history.len() >= m.order() => forecast(m, &self.history, k).expect("history long enough"),
            (_, Some(last)) => vec![*last; k],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TracePattern {
    Steady { level: f64 },
    SquareWave { lo: f64, hi: f64, period_ms: u64 },
    RandomWalk { start: f64, step: f64 },
    /// Idle browsing punctuated by bursts of heavy use.
    UserSession,
}

impl TracePattern {
    pub fn name(&self) -> &'static str {
        match self {
            TracePattern::Steady { .. } => "steady",
            TracePattern::SquareWave { .. } => "square_wave",
            TracePattern::RandomWalk { .. } => "random_walk",
            TracePattern::UserSession => "user_session",
        }
    }
}

impl fmt::Display for TracePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TracePattern {
    type Err = Error;

    /// Default parameters per pattern name.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "steady" => Ok(TracePattern::Steady { level: 0.3 }),
            "square_wave" => Ok(TracePattern::SquareWave {
                lo: 0.2,
                hi: 0.9,
                period_ms: 5000,
            }),
            "random_walk" => Ok(TracePattern::RandomWalk { start: 0.4, step: 0.03 }),
            "user_session" => Ok(TracePattern::UserSession),
            _ => Err(Error::invalid(format!("unknown trace pattern `{s}`"))),
        }
    }
}

/// Generate a trace at the fixed cadence, starting at `t = 0`. GPU
/// utilization is zero; memory follows CPU at a lower level.
pub fn synth_trace(pattern: TracePattern, duration_ms: u64, seed: u64) -> Result<Vec<ResourceSnapshot>> {
    let steps = duration_ms / CADENCE_MS;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(steps as usize);
    let mut walk = match pattern {
        TracePattern::RandomWalk { start, .. } => start,
        _ => 0.0,
    };
    let mut burst_left = 0u64;
    for k in 0..steps {
        let t = k * CADENCE_MS;
        let u = match pattern {
            TracePattern::Steady { level } => level,
            TracePattern::SquareWave { lo, hi, period_ms } => {
                if period_ms < 2 * CADENCE_MS {
                    return Err(Error::invalid("square wave period must span at least 2 samples"));
                }
                if (t % period_ms) < period_ms / 2 {
                    lo
                } else {
                    hi
                }
            }
            TracePattern::RandomWalk { step, .. } => {
                walk = clamp01(walk + rng.random_range(-step..=step));
                walk
            }
            TracePattern::UserSession => {
                if burst_left == 0 && rng.random_bool(0.03) {
                    burst_left = rng.random_range(10..40);
                }
                let base = if burst_left > 0 {
                    burst_left -= 1;
                    0.85
                } else {
                    0.15
                };
                clamp01(base + rng.random_range(-0.05..0.05))
            }
        };
        let mem = match pattern {
            TracePattern::Steady { .. } | TracePattern::SquareWave { .. } => u,
            _ => clamp01(0.5 * u + 0.1),
        };
        out.push(ResourceSnapshot::new(t, u, 0.0, mem, None));
    }
    Ok(out)
}

const TRACE_HEADER: [&str; 5] = ["t_ms", "u_cpu", "u_gpu", "u_mem", "f_cpu_hz"];

pub fn write_trace<W: Write>(out: W, trace: &[ResourceSnapshot]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for s in trace {
        w.write_record([
            s.t_ms.to_string(),
            s.u_cpu.to_string(),
            s.u_gpu.to_string(),
            s.u_mem.to_string(),
            s.f_cpu_hz.map(|f| f.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<ResourceSnapshot>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(Error::Corrupt(format!("trace header {:?}, expected {TRACE_HEADER:?}", header)));
    }
    let mut out: Vec<ResourceSnapshot> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |what: &str| Error::Corrupt(format!("trace line {line}: bad {what}"));
        let num = |k: usize| rec.get(k).unwrap_or("").parse::<f64>().map_err(|_| bad(TRACE_HEADER[k]));
        let t_ms: u64 = rec.get(0).unwrap_or("").parse().map_err(|_| bad("t_ms"))?;
        let f = match rec.get(4).unwrap_or("") {
            "" => None,
            v => Some(v.parse::<f64>().map_err(|_| bad("f_cpu_hz"))?),
        };
        let (u_cpu, u_gpu, u_mem) = (num(1)?, num(2)?, num(3)?);
        if [u_cpu, u_gpu, u_mem].iter().any(|u| !(0.0..=1.0).contains(u)) {
            return Err(bad("utilization (outside [0, 1])"));
        }
        if out.last().is_some_and(|p| p.t_ms >= t_ms) {
            return Err(bad("timestamp (not increasing)"));
        }
        out.push(ResourceSnapshot {
            t_ms,
            u_cpu,
            u_gpu,
            u_mem,
            f_cpu_hz: f,
        });
    }
    Ok(out)
}

pub fn save_trace(path: impl AsRef<Path>, trace: &[ResourceSnapshot]) -> Result<()> {
    write_trace(std::io::BufWriter::new(std::fs::File::create(path)?), trace)
}

/// Replay a trace file as a snapshot stream.
pub fn play_trace(path: impl AsRef<Path>) -> Result<std::vec::IntoIter<ResourceSnapshot>> {
    Ok(read_trace(std::fs::File::open(path)?)?.into_iter())
}

/// Latest-snapshot cell: writers replace the value whole, readers copy it.
#[derive(Clone, Debug, Default)]
pub struct SnapshotCell(Arc<RwLock<Option<ResourceSnapshot>>>);

impl SnapshotCell {
    pub fn publish(&self, s: ResourceSnapshot) {
        *self.0.write().unwrap_or_else(|e| e.into_inner()) = Some(s);
    }

    pub fn latest(&self) -> Option<ResourceSnapshot> {
        *self.0.read().unwrap_or_else(|e| e.into_inner())
    }
}

fn read_aggregate_stat() -> Result<String> {
    let text = std::fs::read_to_string("/proc/stat")?;
    text.lines()
        .find(|l| l.starts_with("cpu "))
        .map(str::to_owned)
        .ok_or_else(|| Error::Corrupt("/proc/stat has no aggregate cpu line".into()))
}

fn mem_util() -> Option<f64> {
    let text = std::fs::read_to_string("/proc/meminfo").ok()?;
    let field = |k: &str| {
        text.lines()
            .find(|l| l.starts_with(k))
            .and_then(|l| l.split_whitespace().nth(1))
            .and_then(|v| v.parse::<f64>().ok())
    };
    let total = field("MemTotal:")?;
    let avail = field("MemAvailable:")?;
    (total > 0.0).then(|| clamp01(1.0 - avail / total))
}

/// Host sampler over `/proc`. GPU utilization is always reported as 0.
pub struct LiveMonitor {
    cell: SnapshotCell,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl LiveMonitor {
    pub fn start(period: Duration) -> Result<Self> {
        let mut prev = read_aggregate_stat()?;
        let cell = SnapshotCell::default();
        let stop = Arc::new(AtomicBool::new(false));
        let (c, s) = (cell.clone(), stop.clone());
        let handle = std::thread::spawn(move || {
            while !s.load(Ordering::Relaxed) {
                std::thread::sleep(period);
                let Ok(curr) = read_aggregate_stat() else { continue };
                if let Ok(u) = cpu_util_from_stat(&prev, &curr) {
                    let t = SystemTime::now()
                        .duration_since(UNIX_EPOCH)
                        .map(|d| d.as_millis() as u64)
                        .unwrap_or(0);
                    c.publish(ResourceSnapshot::new(t, u, 0.0, mem_util().unwrap_or(0.0), None));
                }
                prev = curr;
            }
        });
        Ok(Self {
            cell,
            stop,
            handle: Some(handle),
        })
    }

    pub fn cell(&self) -> &SnapshotCell {
        &self.cell
    }
}

impl Drop for LiveMonitor {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_deltas() {
        let prev = "cpu  100 0 0 100 0 0 0 0 0 0";
        let curr = "cpu  200 0 0 150 0 0 0 0 0 0";
        assert!((cpu_util_from_stat(prev, curr).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(cpu_util_from_stat(prev, "cpu 100 0 0 200 0 0 0 0").unwrap(), 0.0);
        assert_eq!(cpu_util_from_stat(prev, "cpu 300 0 0 100 0 0 0 0").unwrap(), 1.0);
        assert!(cpu_util_from_stat(prev, prev).is_err());
        assert!(cpu_util_from_stat(curr, prev).is_err());
        assert!(cpu_util_from_stat("intr 1 2 3", curr).is_err());
        assert!(cpu_util_from_stat("cpu 1 x 3 4", curr).is_err());
    }

    #[test]
    fn load_index_examples() {
        let s = ResourceSnapshot::new(0, 0.8, 0.4, 0.2, None);
        let w = LoadWeights::new(2.0, 1.0, 1.0).unwrap();
        assert!((load_index(&s, &w) - 0.55).abs() < 1e-12);
        let half = ResourceSnapshot::new(0, 0.5, 0.5, 0.5, None);
        assert!((load_index(&half, &w) - 0.5).abs() < 1e-12);
        assert!(LoadWeights::new(0.0, 0.0, 0.0).is_err());
        assert_eq!(ResourceSnapshot::new(0, 1.5, -1.0, 0.5, None).u_cpu, 1.0);
    }

    #[test]
    fn ar_examples() {
        let flat = vec![0.4; 30];
        let m = fit_ar(&flat, 3).unwrap();
        assert!(m.phi.iter().all(|p| *p == 0.0));
        assert!((m.intercept - 0.4).abs() < 1e-12);
        assert!(forecast(&m, &flat, 3).unwrap().iter().all(|f| (f - 0.4).abs() < 1e-12));

        let m0 = fit_ar(&[0.1, 0.2, 0.6], 0).unwrap();
        assert!((forecast(&m0, &[], 1).unwrap()[0] - 0.3).abs() < 1e-12);

        let m = ArModel {
            phi: vec![0.5],
            intercept: 0.0,
            residual_variance: 0.0,
        };
        let f = forecast(&m, &[0.8], 3).unwrap();
        assert!(f.iter().zip([0.4, 0.2, 0.1]).all(|(a, b)| (a - b).abs() < 1e-12));
        let up = ArModel {
            phi: vec![1.5],
            intercept: 0.0,
            residual_variance: 0.0,
        };
        assert_eq!(forecast(&up, &[0.8], 1).unwrap(), vec![1.0]);
        assert!(fit_ar(&[0.1, 0.2], 1).is_err());
    }

    #[test]
    fn recovers_ar1() {
        let mut x = vec![0.9];
        for _ in 0..200 {
            let last = *x.last().unwrap();
            x.push(0.05 + 0.9 * last);
        }
        // noiseless but not yet converged to the fixed point
        let m = fit_ar(&x[..60], 1).unwrap();
        assert!((m.phi[0] - 0.9).abs() < 1e-6, "{:?}", m);
    }

    #[test]
    fn traces() {
        let s = synth_trace(TracePattern::Steady { level: 0.3 }, 1000, 0).unwrap();
        assert_eq!(s.len(), 10);
        assert!(s.iter().all(|x| x.u_cpu == 0.3));
        let sq = synth_trace("square_wave".parse().unwrap(), 10_000, 0).unwrap();
        assert_eq!(sq[0].u_cpu, 0.2);
        assert_eq!(sq[25].u_cpu, 0.9);
        assert_eq!(sq[50].u_cpu, 0.2);
        let a = synth_trace("random_walk".parse().unwrap(), 5000, 7).unwrap();
        let b = synth_trace("random_walk".parse().unwrap(), 5000, 7).unwrap();
        assert_eq!(a, b);
        assert!("sawtooth".parse::<TracePattern>().is_err());
    }

    #[test]
    fn trace_csv_round_trip() {
        let t = synth_trace(TracePattern::UserSession, 3000, 1).unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &t).unwrap();
        assert_eq!(read_trace(&buf[..]).unwrap(), t);
        assert!(read_trace(&b"t_ms,u_cpu\n1,0.5\n"[..]).is_err());
        assert!(read_trace(&b"t_ms,u_cpu,u_gpu,u_mem,f_cpu_hz\n5,0.1,0,0,\n5,0.1,0,0,\n"[..]).is_err());
    }

    #[test]
    fn forecaster_falls_back_to_persistence() {
        let mut f = LoadForecaster::new(3, 200, 50);
        assert_eq!(f.forecast(2), vec![0.0, 0.0]);
        f.push(0.7);
        assert_eq!(f.forecast(2), vec![0.7, 0.7]);
        for _ in 0..10 {
            f.push(0.7);
        }
        assert!(f.model().is_none());
        assert!(f.forecast(3).iter().all(|v| (v - 0.7).abs() < 1e-12));
        // a flat stretch followed by a step must not pin the forecast
        f.push(0.2);
        assert!(f.forecast(3).iter().all(|v| (v - 0.2).abs() < 1e-12));
    }
}
