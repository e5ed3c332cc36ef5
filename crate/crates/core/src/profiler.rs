//! Intrinsic metrics (FLOPs, parameters, storage), memory traffic, cache
//! rates, energy and latency models.
//!
//! FLOP convention: a multiply-accumulate is 2 FLOPs, a bias add is 1 FLOP
//! per output element and average pooling costs 1 FLOP per input element.
//! Activations, dropout and channel shuffles are free.

use std::path::Path;
use std::time::Instant;

use crate::elastic::{ElasticNetwork, VariantConfig};
use crate::error::{Error, Result};
use crate::kv;
use crate::tinynn::{LayerSpec, Tensor};

pub const DTYPE_BYTES: u64 = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IntrinsicMetrics {
    pub flops: u64,
    pub params: u64,
    /// Raw parameter bytes (`params × 4`); file-format overhead is not included.
    pub storage: u64,
}

/// Element counts feeding the memory-traffic model of one layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerMemoryProfile {
    pub name: String,
    pub input: u64,
    pub output: u64,
    pub weights: u64,
    pub biases: u64,
    pub flops: u64,
}

fn numel(shape: &[usize]) -> u64 {
    shape.iter().product::<usize>() as u64
}

/// `(flops, weight elements, bias elements)` for one sample.
fn layer_cost(spec: &LayerSpec, input: &[usize], output: &[usize]) -> (u64, u64, u64) {
    let out_positions = || (output[1] * output[2]) as u64;
    match *spec {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            groups,
            bias,
            ..
        } => {
            let w = (out_channels * (in_channels / groups) * kernel * kernel) as u64;
            let b = if bias { out_channels as u64 } else { 0 };
            let macs = w * out_positions();
            (2 * macs + b * out_positions(), w, b)
        }
        LayerSpec::DepthwiseSeparable {
            in_channels,
            out_channels,
            kernel,
            ..
        } => {
            let dw = (in_channels * kernel * kernel) as u64;
            let pw = (in_channels * out_channels) as u64;
            let b = out_channels as u64;
            (2 * (dw + pw) * out_positions() + b * out_positions(), dw + pw, b)
        }
        LayerSpec::GroupedShuffle {
            in_channels,
            out_channels,
            kernel,
            groups,
            ..
        } => {
            let w = (out_channels * (in_channels / groups) * kernel * kernel) as u64;
            let b = out_channels as u64;
            (2 * w * out_positions() + b * out_positions(), w, b)
        }
        LayerSpec::LowRankFc {
            in_features,
            out_features,
            rank,
        } => {
            let w = (in_features * rank + rank * out_features) as u64;
            let b = out_features as u64;
            (2 * w + b, w, b)
        }
        LayerSpec::Fc {
            in_features,
            out_features,
        } => {
            let w = (in_features * out_features) as u64;
            let b = out_features as u64;
            (2 * w + b, w, b)
        }
        LayerSpec::AdaptiveAvgPool { .. } => (numel(input), 0, 0),
        LayerSpec::Relu | LayerSpec::Dropout { .. } => (0, 0, 0),
    }
}

/// Per-layer profile of a chain of `(name, spec)` layers fed `input`.
pub fn chain_profile<'a>(
    layers: impl IntoIterator<Item = (&'a str, &'a LayerSpec)>,
    input: &[usize],
) -> Result<Vec<LayerMemoryProfile>> {
    let mut shape = input.to_vec();
    let mut out = Vec::new();
    for (name, spec) in layers {
        let next = spec.output_shape(&shape)?;
        let (flops, weights, biases) = layer_cost(spec, &shape, &next);
        out.push(LayerMemoryProfile {
            name: name.to_string(),
            input: numel(&shape),
            output: numel(&next),
            weights,
            biases,
            flops,
        });
        shape = next;
    }
    Ok(out)
}

/// Profile of the layers evaluated by `forward_to_exit(variant.exit_id)`
/// after `variant` is applied.
pub fn variant_profile(net: &mut ElasticNetwork, variant: &VariantConfig) -> Result<Vec<LayerMemoryProfile>> {
    net.apply_variant(variant)?;
    let exit = variant.exit_id;
    let mut layers: Vec<(&str, &LayerSpec)> = Vec::new();
    for seg in &net.segments()[..exit] {
        layers.extend(seg.body().layers().iter().map(|l| (l.name(), l.spec())));
        if let Some(slot) = seg.slot() {
            layers.extend(slot.active_block().layers().iter().map(|l| (l.name(), l.spec())));
        }
    }
    let exit_layers = net.segments()[exit - 1].exit().layers().layers();
    layers.extend(exit_layers.iter().map(|l| (l.name(), l.spec())));
    chain_profile(layers, &net.input_shape())
}

pub fn intrinsics(profile: &[LayerMemoryProfile]) -> IntrinsicMetrics {
    let params: u64 = profile.iter().map(|l| l.weights + l.biases).sum();
    IntrinsicMetrics {
        flops: profile.iter().map(|l| l.flops).sum(),
        params,
        storage: params * DTYPE_BYTES,
    }
}

pub fn count_intrinsics(net: &mut ElasticNetwork, variant: &VariantConfig) -> Result<IntrinsicMetrics> {
    Ok(intrinsics(&variant_profile(net, variant)?))
}

/// Total bytes moved: `Σ (In + Out + w + b) × dtype bytes`.
pub fn memory_access(profile: &[LayerMemoryProfile], dtype_bytes: u64) -> u64 {
    profile
        .iter()
        .map(|l| (l.input + l.output + l.weights + l.biases) * dtype_bytes)
        .sum()
}

/// Timing estimator `δ = 1 − (t0 − t_avg)/t0`.
pub fn cache_rate_timing(t0: f64, t_avg: f64) -> Result<f64> {
    if !(t0 > 0.0) || !t0.is_finite() {
        return Err(Error::invalid(format!("t0 must be > 0, got {t0}")));
    }
    if !(0.0..=t0).contains(&t_avg) {
        return Err(Error::invalid(format!("t_avg {t_avg} outside [0, t0]")));
    }
    Ok(1.0 - (t0 - t_avg) / t0)
}

/// Hit-counting estimator; zero accesses give a rate of zero.
pub fn cache_rate_counting(hits: u64, total: u64) -> Result<f64> {
    if hits > total {
        return Err(Error::invalid(format!("{hits} hits out of {total} accesses")));
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(hits as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceProfile {
    pub name: String,
    pub p_cpu_w: f64,
    pub p_gpu_w: f64,
    pub p_mem_w: f64,
    pub f_cpu_hz: f64,
    pub f_gpu_hz: f64,
    pub f_mem_hz: f64,
    pub ops_per_cycle: f64,
    pub epsilon_default: f64,
    pub has_gpu: bool,
}

impl Default for DeviceProfile {
    /// A small quad-core ARM board without a usable GPU.
    fn default() -> Self {
        Self {
            name: "desk-arm".into(),
            p_cpu_w: 5.0,
            p_gpu_w: 10.0,
            p_mem_w: 2.0,
            f_cpu_hz: 1.5e9,
            f_gpu_hz: 1.0e9,
            f_mem_hz: 1.6e8,
            ops_per_cycle: 4.0,
            epsilon_default: 0.8,
            has_gpu: false,
        }
    }
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("p_cpu_w", self.p_cpu_w),
            ("p_gpu_w", self.p_gpu_w),
            ("p_mem_w", self.p_mem_w),
            ("f_cpu_hz", self.f_cpu_hz),
            ("f_gpu_hz", self.f_gpu_hz),
            ("f_mem_hz", self.f_mem_hz),
            ("ops_per_cycle", self.ops_per_cycle),
        ];
        for (k, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{k} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon_default) {
            return Err(Error::invalid(format!(
                "epsilon_default {} outside [0, 1]",
                self.epsilon_default
            )));
        }
        Ok(())
    }

    /// Parse `key=value` lines (`p_cpu_w=5`, `f_cpu_hz=1.5e9`, ...); missing
    /// keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut d = Self::default();
        for sec in kv::parse(text)? {
            for e in &sec.entries {
                let num = || {
                    e.value
                        .parse::<f64>()
                        .map_err(|_| Error::config(e.line, format!("{}: not a number: {}", e.key, e.value)))
                };
                match e.key.as_str() {
                    "name" => d.name = e.value.clone(),
                    "p_cpu_w" => d.p_cpu_w = num()?,
                    "p_gpu_w" => d.p_gpu_w = num()?,
                    "p_mem_w" => d.p_mem_w = num()?,
                    "f_cpu_hz" => d.f_cpu_hz = num()?,
                    "f_gpu_hz" => d.f_gpu_hz = num()?,
                    "f_mem_hz" => d.f_mem_hz = num()?,
                    "ops_per_cycle" => d.ops_per_cycle = num()?,
                    "epsilon_default" => d.epsilon_default = num()?,
                    "has_gpu" => {
                        d.has_gpu = match e.value.as_str() {
                            "yes" | "true" | "1" => true,
                            "no" | "false" | "0" => false,
                            v => return Err(Error::config(e.line, format!("has_gpu: expected yes/no, got {v}"))),
                        }
                    }
                    k => return Err(Error::config(e.line, format!("unknown device key `{k}`"))),
                }
            }
        }
        d.validate().map_err(|e| Error::config(0, e.to_string()))?;
        Ok(d)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        format!(
            "name = {}\np_cpu_w = {}\np_gpu_w = {}\np_mem_w = {}\nf_cpu_hz = {}\nf_gpu_hz = {}\nf_mem_hz = {}\nops_per_cycle = {}\nepsilon_default = {}\nhas_gpu = {}\n",
            self.name,
            self.p_cpu_w,
            self.p_gpu_w,
            self.p_mem_w,
            self.f_cpu_hz,
            self.f_gpu_hz,
            self.f_mem_hz,
            self.ops_per_cycle,
            self.epsilon_default,
            if self.has_gpu { "yes" } else { "no" }
        )
    }
}

/// `E = m_cpu·P_cpu·ε/f_cpu + m_gpu·P_gpu/f_gpu + m_mem·P_mem·(1−ε)/f_mem`.
pub fn energy(m_cpu: f64, m_gpu: f64, m_mem: f64, device: &DeviceProfile, epsilon: f64) -> Result<f64> {
    if device.f_cpu_hz == 0.0 || device.f_gpu_hz == 0.0 || device.f_mem_hz == 0.0 {
        return Err(Error::invalid("device frequency must be non-zero"));
    }
    if [m_cpu, m_gpu, m_mem].iter().any(|m| !(*m >= 0.0)) {
        return Err(Error::invalid("operation counts must be >= 0"));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside [0, 1]")));
    }
    Ok(m_cpu * device.p_cpu_w * epsilon / device.f_cpu_hz
        + m_gpu * device.p_gpu_w / device.f_gpu_hz
        + m_mem * device.p_mem_w * (1.0 - epsilon) / device.f_mem_hz)
}

/// Split a byte count into `(m_cpu, m_gpu, m_mem)` word operations.
pub fn operation_split(memory_bytes: u64, device: &DeviceProfile, epsilon: f64) -> (f64, f64, f64) {
    let words = memory_bytes as f64 / DTYPE_BYTES as f64;
    if device.has_gpu {
        // GPU executes compute; the CPU side still stages the hit fraction
        (epsilon * words, words, (1.0 - epsilon) * words)
    } else {
        (epsilon * words, 0.0, (1.0 - epsilon) * words)
    }
}

/// `L = C / (f_cpu × ops_per_cycle)`.
pub fn theoretical_latency(flops: f64, device: &DeviceProfile) -> Result<f64> {
    if device.ops_per_cycle == 0.0 || device.f_cpu_hz == 0.0 {
        return Err(Error::invalid("ops_per_cycle and f_cpu_hz must be non-zero"));
    }
    if !(flops >= 0.0) {
        return Err(Error::invalid("flops must be >= 0"));
    }
    Ok(flops / (device.f_cpu_hz * device.ops_per_cycle))
}

/// Affine load correction `ratio = a + b·load` with `a ≥ 1`, `b ≥ 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencyCalibration {
    pub a: f64,
    pub b: f64,
}

impl LatencyCalibration {
    /// Coefficients are clamped into the admissible region.
    pub fn new(a: f64, b: f64) -> Self {
        Self {
            a: a.max(1.0),
            b: b.max(0.0),
        }
    }

    pub fn ratio(&self, load: f64) -> f64 {
        (self.a + self.b * load).max(1.0)
    }
}

/// `L_theory × (a + b·load)`, never below `L_theory`.
pub fn calibrated_latency(theory: f64, load_index: f64, calib: Option<&LatencyCalibration>) -> Result<f64> {
    let c = calib.ok_or_else(|| Error::invalid("latency calibration has not been fitted"))?;
    Ok((theory * c.ratio(load_index)).max(theory))
}

/// Least-squares fit of `ratio ≈ a + b·load` subject to `a ≥ 1`, `b ≥ 0`.
pub fn fit_latency_calibration(samples: &[(f64, f64)]) -> Result<LatencyCalibration> {
    if samples.len() < 2 {
        return Err(Error::invalid("calibration needs at least 2 samples"));
    }
    if samples.iter().any(|(l, r)| !l.is_finite() || !r.is_finite()) {
        return Err(Error::invalid("non-finite calibration sample"));
    }
    let n = samples.len() as f64;
    let ml = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let mr = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sll: f64 = samples.iter().map(|s| (s.0 - ml).powi(2)).sum();
    if sll <= 1e-12 * (1.0 + ml * ml) * n {
        return Err(Error::invalid("calibration samples need distinct load values"));
    }
    let slr: f64 = samples.iter().map(|s| (s.0 - ml) * (s.1 - mr)).sum();
    let sse = |a: f64, b: f64| samples.iter().map(|(l, r)| (r - a - b * l).powi(2)).sum::<f64>();

    // The objective is convex, so the optimum is the best feasible point
    // among the interior solution and the solutions on each active bound.
    let mut candidates = Vec::with_capacity(4);
    let b = slr / sll;
    candidates.push((mr - b * ml, b));
    let s2: f64 = samples.iter().map(|s| s.0 * s.0).sum();
    if s2 > 0.0 {
        candidates.push((1.0, samples.iter().map(|(l, r)| l * (r - 1.0)).sum::<f64>() / s2));
    }
    candidates.push((mr, 0.0));
    candidates.push((1.0, 0.0));
    let best = candidates
        .into_iter()
        .filter(|(a, b)| *a >= 1.0 && *b >= 0.0)
        .map(|(a, b)| (sse(a, b), a, b))
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .expect("(1, 0) is always feasible");
    Ok(LatencyCalibration { a: best.1, b: best.2 })
}

/// Median wall-clock seconds of eval-mode `forward_to_exit` on one sample,
/// after two warm-up runs.
pub fn measure_latency(net: &mut ElasticNetwork, variant: &VariantConfig, reps: usize) -> Result<f64> {
    if reps < 3 {
        return Err(Error::invalid("measure_latency needs reps >= 3"));
    }
    net.apply_variant(variant)?;
    let x = Tensor::full(&net.input_shape(), 0.5);
    for _ in 0..2 {
        net.forward_to_exit(&x, variant.exit_id)?;
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        std::hint::black_box(net.forward_to_exit(std::hint::black_box(&x), variant.exit_id)?);
        times.push(t.elapsed().as_secs_f64().max(1e-9));
    }
    times.sort_by(f64::total_cmp);
    Ok(times[reps / 2])
}

/// Everything the tables need about one variant on one device.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantProfile {
    pub variant_id: String,
    pub intrinsics: IntrinsicMetrics,
    pub memory_bytes: u64,
    pub latency_s: f64,
    pub energy_j: f64,
}

/// Predicted latency (unloaded, calibrated) and energy of `variant`.
pub fn profile_variant(
    net: &mut ElasticNetwork,
    variant: &VariantConfig,
    device: &DeviceProfile,
    calib: &LatencyCalibration,
) -> Result<VariantProfile> {
    let layers = variant_profile(net, variant)?;
    let intr = intrinsics(&layers);
    let memory_bytes = memory_access(&layers, DTYPE_BYTES);
    let eps = device.epsilon_default;
    let (m_cpu, m_gpu, m_mem) = operation_split(memory_bytes, device, eps);
    let theory = theoretical_latency(intr.flops as f64, device)?;
    Ok(VariantProfile {
        variant_id: variant.variant_id.clone(),
        intrinsics: intr,
        memory_bytes,
        latency_s: calibrated_latency(theory, 0.0, Some(calib))?,
        energy_j: energy(m_cpu, m_gpu, m_mem, device, eps)?,
    })
}

/// CSV with header `variant_id,C,P,S,M,latency_s,energy_j`.
pub fn write_profile_csv<W: std::io::Write>(out: W, rows: &[VariantProfile]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant_id", "C", "P", "S", "M", "latency_s", "energy_j"])?;
    for r in rows {
        w.write_record([
            r.variant_id.clone(),
            r.intrinsics.flops.to_string(),
            r.intrinsics.params.to_string(),
            r.intrinsics.storage.to_string(),
            r.memory_bytes.to_string(),
            format!("{:e}", r.latency_s),
            format!("{:e}", r.energy_j),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fc_and_conv_counts() {
        let fc = LayerSpec::fc(4, 2);
        let p = chain_profile([("fc", &fc)], &[4]).unwrap();
        assert_eq!(intrinsics(&p).params, 10);
        let conv = LayerSpec::conv(1, 1, 3, 1);
        let p = chain_profile([("c", &conv)], &[1, 8, 8]).unwrap();
        assert_eq!(p[0].flops, 2 * 9 * 64 + 64);
        assert_eq!(intrinsics(&[]), IntrinsicMetrics::default());
    }

    #[test]
    fn memory_single_fc() {
        let l = LayerMemoryProfile {
            name: "fc".into(),
            input: 16,
            output: 8,
            weights: 128,
            biases: 8,
            flops: 0,
        };
        assert_eq!(memory_access(std::slice::from_ref(&l), 4), 640);
        assert_eq!(memory_access(&[l.clone(), l], 4), 1280);
    }

    #[test]
    fn cache_rates() {
        assert_eq!(cache_rate_timing(100e-9, 100e-9).unwrap(), 1.0);
        assert_eq!(cache_rate_timing(100e-9, 0.0).unwrap(), 0.0);
        assert!((cache_rate_timing(100e-9, 40e-9).unwrap() - 0.4).abs() < 1e-12);
        assert!(cache_rate_timing(0.0, 0.0).is_err());
        assert_eq!(cache_rate_counting(0, 0).unwrap(), 0.0);
        assert_eq!(cache_rate_counting(50, 100).unwrap(), 0.5);
        assert!(cache_rate_counting(2, 1).is_err());
    }

    #[test]
    fn calibration_fit_and_clamp() {
        let s: Vec<(f64, f64)> = (0..5).map(|i| (i as f64 * 0.2, 1.2 + 0.8 * i as f64 * 0.2)).collect();
        let c = fit_latency_calibration(&s).unwrap();
        assert!((c.a - 1.2).abs() < 1e-9 && (c.b - 0.8).abs() < 1e-9);
        let flat = fit_latency_calibration(&[(0.1, 1.5), (0.9, 1.5)]).unwrap();
        assert_eq!(flat.b, 0.0);
        assert!(fit_latency_calibration(&[(0.1, 1.5)]).is_err());
        assert!(fit_latency_calibration(&[(0.3, 1.5), (0.3, 1.7)]).is_err());
        // decreasing ratios would need b < 0
        let dec = fit_latency_calibration(&[(0.0, 2.0), (1.0, 1.0)]).unwrap();
        assert_eq!(dec.b, 0.0);
        assert!((dec.a - 1.5).abs() < 1e-12);
        assert_eq!(LatencyCalibration::new(0.5, -1.0), LatencyCalibration { a: 1.0, b: 0.0 });
        assert!(calibrated_latency(1.0, 0.5, None).is_err());
        let c = LatencyCalibration::new(1.0, 2.0);
        assert_eq!(calibrated_latency(0.3, 0.0, Some(&c)).unwrap(), 0.3);
        assert_eq!(calibrated_latency(0.3, 0.5, Some(&c)).unwrap(), 0.6);
    }

    #[test]
    fn device_file_round_trip() {
        let d = DeviceProfile::default();
        assert_eq!(DeviceProfile::parse(&d.to_text()).unwrap(), d);
        let err = DeviceProfile::parse("p_cpu_w = 5\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(DeviceProfile::parse("f_cpu_hz = 0\n").is_err());
    }
}
