use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{self, ConvGeom};
use super::tensor::{Parameter, Tensor};
use crate::error::{Error, Result};

/// Hyperparameters of one layer.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
    },
    /// Depthwise `kernel×kernel` conv (no bias) followed by a biased 1×1 pointwise conv.
    DepthwiseSeparable {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    /// Grouped `kernel×kernel` conv followed by a channel shuffle over the same groups.
    GroupedShuffle {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
    },
    /// `in → rank` (no bias) then `rank → out` (biased).
    LowRankFc {
        in_features: usize,
        out_features: usize,
        rank: usize,
    },
    Fc {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    AdaptiveAvgPool {
        out_h: usize,
        out_w: usize,
    },
    Dropout {
        p: f32,
    },
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
            groups: 1,
            bias: true,
        }
    }

    pub fn fc(in_features: usize, out_features: usize) -> Self {
        LayerSpec::Fc {
            in_features,
            out_features,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::DepthwiseSeparable { .. } => "depthwise_separable",
            LayerSpec::GroupedShuffle { .. } => "grouped_shuffle",
            LayerSpec::LowRankFc { .. } => "lowrank_fc",
            LayerSpec::Fc { .. } => "fc",
            LayerSpec::Relu => "relu",
            LayerSpec::AdaptiveAvgPool { .. } => "adaptive_avg_pool",
            LayerSpec::Dropout { .. } => "dropout",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::LayerSpec(format!("{}: {msg}", self.kind_name())));
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                groups,
                ..
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return bad("channels, kernel and stride must be positive".into());
                }
                if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
                    return bad(format!(
                        "groups={groups} must divide in={in_channels} and out={out_channels}"
                    ));
                }
            }
            LayerSpec::DepthwiseSeparable {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return bad("channels, kernel and stride must be positive".into());
                }
            }
            LayerSpec::GroupedShuffle {
                in_channels,
                out_channels,
                kernel,
                stride,
                groups,
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return bad("channels, kernel and stride must be positive".into());
                }
                if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
                    return bad(format!(
                        "groups={groups} must divide in={in_channels} and out={out_channels}"
                    ));
                }
            }
            LayerSpec::LowRankFc {
                in_features,
                out_features,
                rank,
            } => {
                if in_features == 0 || out_features == 0 {
                    return bad("features must be positive".into());
                }
                if rank == 0 {
                    return bad("rank must be >= 1".into());
                }
            }
            LayerSpec::Fc {
                in_features,
                out_features,
            } => {
                if in_features == 0 || out_features == 0 {
                    return bad("features must be positive".into());
                }
            }
            LayerSpec::Relu => {}
            LayerSpec::AdaptiveAvgPool { out_h, out_w } => {
                if out_h == 0 || out_w == 0 {
                    return bad("output size must be positive".into());
                }
            }
            LayerSpec::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return bad(format!("p={p} outside [0,1)"));
                }
            }
        }
        Ok(())
    }

    pub fn is_spatial(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv2d { .. }
                | LayerSpec::DepthwiseSeparable { .. }
                | LayerSpec::GroupedShuffle { .. }
                | LayerSpec::AdaptiveAvgPool { .. }
        )
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, LayerSpec::Fc { .. } | LayerSpec::LowRankFc { .. })
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |expected: String| Error::Shape {
            layer: self.kind_name().into(),
            expected,
            got: input.to_vec(),
        };
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                let (c, h, w) = chw(input).ok_or_else(|| mismatch(format!("[{in_channels}, H, W]")))?;
                if c != in_channels {
                    return Err(mismatch(format!("[{in_channels}, H, W]")));
                }
                let g = ConvGeom::new(c, out_channels, kernel, stride, padding, 1, h, w)
                    .ok_or_else(|| mismatch(format!("spatial size >= kernel {kernel}")))?;
                Ok(vec![out_channels, g.oh, g.ow])
            }
            LayerSpec::DepthwiseSeparable {
                in_channels,
                out_channels,
                kernel,
                stride,
            }
            | LayerSpec::GroupedShuffle {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                let (c, h, w) = chw(input).ok_or_else(|| mismatch(format!("[{in_channels}, H, W]")))?;
                if c != in_channels {
                    return Err(mismatch(format!("[{in_channels}, H, W]")));
                }
                let g = ConvGeom::new(c, out_channels, kernel, stride, kernel / 2, 1, h, w)
                    .ok_or_else(|| mismatch(format!("spatial size >= kernel {kernel}")))?;
                Ok(vec![out_channels, g.oh, g.ow])
            }
            LayerSpec::LowRankFc {
                in_features,
                out_features,
                ..
            }
            | LayerSpec::Fc {
                in_features,
                out_features,
            } => {
                let n: usize = input.iter().product();
                if n != in_features || input.is_empty() {
                    return Err(mismatch(format!("{in_features} features")));
                }
                Ok(vec![out_features])
            }
            LayerSpec::Relu | LayerSpec::Dropout { .. } => Ok(input.to_vec()),
            LayerSpec::AdaptiveAvgPool { out_h, out_w } => {
                let (c, _, _) = chw(input).ok_or_else(|| mismatch("[C, H, W]".into()))?;
                Ok(vec![c, out_h, out_w])
            }
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                groups,
                ..
            } => write!(
                f,
                "conv2d({in_channels}->{out_channels}, k{kernel}, s{stride}, g{groups})"
            ),
            LayerSpec::DepthwiseSeparable {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => write!(f, "dwsep({in_channels}->{out_channels}, k{kernel}, s{stride})"),
            LayerSpec::GroupedShuffle {
                in_channels,
                out_channels,
                kernel,
                stride,
                groups,
            } => write!(
                f,
                "gshuffle({in_channels}->{out_channels}, k{kernel}, s{stride}, g{groups})"
            ),
            LayerSpec::LowRankFc {
                in_features,
                out_features,
                rank,
            } => write!(f, "lowrank_fc({in_features}->{rank}->{out_features})"),
            LayerSpec::Fc {
                in_features,
                out_features,
            } => write!(f, "fc({in_features}->{out_features})"),
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::AdaptiveAvgPool { out_h, out_w } => write!(f, "avgpool({out_h}x{out_w})"),
            LayerSpec::Dropout { p } => write!(f, "dropout({p})"),
        }
    }
}

fn chw(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Some((c, h, w)),
        _ => None,
    }
}

/// Forward-pass context: train/eval mode, whether to record activations for
/// backward, and the RNG that drives dropout.
pub struct ForwardCtx {
    pub training: bool,
    pub record: bool,
    rng: ChaCha8Rng,
}

impl ForwardCtx {
    pub fn train(seed: u64) -> Self {
        Self {
            training: true,
            record: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn eval() -> Self {
        Self {
            training: false,
            record: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Eval-mode numerics (no dropout) that still records for backward.
    pub fn eval_recording() -> Self {
        Self {
            training: false,
            record: true,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Stable 64-bit FNV-1a, used to derive per-parameter init seeds.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn kaiming_uniform(name: &str, shape: &[usize], fan_in: usize, seed: u64) -> Parameter {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()));
    let bound = (6.0 / fan_in as f32).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Parameter::new(name, Tensor::new(shape.to_vec(), data).expect("shape product"))
}

fn zeros_param(name: &str, shape: &[usize]) -> Parameter {
    Parameter::new(name, Tensor::zeros(shape))
}

enum Cache {
    Conv {
        geom: ConvGeom,
        cols: Vec<f32>,
    },
    DwSep {
        dw: ConvGeom,
        pw: ConvGeom,
        dw_cols: Vec<f32>,
        pw_cols: Vec<f32>,
    },
    Shuffle {
        geom: ConvGeom,
        cols: Vec<f32>,
    },
    Dense {
        x: Vec<f32>,
    },
    LowRank {
        x: Vec<f32>,
        hidden: Vec<f32>,
    },
    Relu {
        positive: Vec<bool>,
    },
    Pool {
        c: usize,
        h: usize,
        w: usize,
    },
    Dropout {
        scale: Option<Vec<f32>>,
    },
}

struct Recorded {
    in_shape: Vec<usize>,
    batch: usize,
    cache: Cache,
}

/// A layer instance: spec, parameters and the activations recorded by the
/// last forward pass.
pub struct Layer {
    name: String,
    spec: LayerSpec,
    params: Vec<Parameter>,
    recorded: Option<Recorded>,
}

impl fmt::Debug for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Layer")
            .field("name", &self.name)
            .field("spec", &self.spec)
            .finish()
    }
}

impl Layer {
    /// Build a layer with seeded Kaiming-uniform weights and zero biases.
    pub fn new(name: impl Into<String>, spec: LayerSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let name = name.into();
        let p = |suffix: &str| format!("{name}.{suffix}");
        let params = match spec {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                groups,
                bias,
                ..
            } => {
                let fan_in = in_channels / groups * kernel * kernel;
                let mut v = vec![kaiming_uniform(
                    &p("weight"),
                    &[out_channels, in_channels / groups, kernel, kernel],
                    fan_in,
                    seed,
                )];
                if bias {
                    v.push(zeros_param(&p("bias"), &[out_channels]));
                }
                v
            }
            LayerSpec::DepthwiseSeparable {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                kaiming_uniform(&p("dw.weight"), &[in_channels, 1, kernel, kernel], kernel * kernel, seed),
                kaiming_uniform(&p("pw.weight"), &[out_channels, in_channels, 1, 1], in_channels, seed),
                zeros_param(&p("pw.bias"), &[out_channels]),
            ],
            LayerSpec::GroupedShuffle {
                in_channels,
                out_channels,
                kernel,
                groups,
                ..
            } => vec![
                kaiming_uniform(
                    &p("weight"),
                    &[out_channels, in_channels / groups, kernel, kernel],
                    in_channels / groups * kernel * kernel,
                    seed,
                ),
                zeros_param(&p("bias"), &[out_channels]),
            ],
            LayerSpec::LowRankFc {
                in_features,
                out_features,
                rank,
            } => vec![
                kaiming_uniform(&p("u.weight"), &[rank, in_features], in_features, seed),
                kaiming_uniform(&p("v.weight"), &[out_features, rank], rank, seed),
                zeros_param(&p("v.bias"), &[out_features]),
            ],
            LayerSpec::Fc {
                in_features,
                out_features,
            } => vec![
                kaiming_uniform(&p("weight"), &[out_features, in_features], in_features, seed),
                zeros_param(&p("bias"), &[out_features]),
            ],
            LayerSpec::Relu | LayerSpec::AdaptiveAvgPool { .. } | LayerSpec::Dropout { .. } => {
                Vec::new()
            }
        };
        Ok(Self {
            name,
            spec,
            params,
            recorded: None,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Parameter::numel).sum()
    }

    pub fn is_frozen(&self) -> bool {
        self.params.iter().all(|p| p.frozen)
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        for p in &mut self.params {
            p.frozen = frozen;
        }
    }

    pub fn clear_recorded(&mut self) {
        self.recorded = None;
    }

    fn shape_error(&self, expected: impl Into<String>, got: &[usize]) -> Error {
        Error::Shape {
            layer: format!("{} ({})", self.name, self.spec),
            expected: expected.into(),
            got: got.to_vec(),
        }
    }

    /// Split `x` into (batch, per-sample shape, was_batched).
    fn split_batch<'a>(&self, x: &'a Tensor) -> Result<(usize, &'a [usize], bool)> {
        let s = x.shape();
        if self.spec.is_spatial() {
            match s.len() {
                3 => Ok((1, s, false)),
                4 => Ok((s[0], &s[1..], true)),
                _ => Err(self.shape_error("[C, H, W] or [N, C, H, W]", s)),
            }
        } else if self.spec.is_dense() {
            match s.len() {
                0 => Err(self.shape_error("[D] or [N, ...]", s)),
                1 => Ok((1, s, false)),
                _ => Ok((s[0], &s[1..], true)),
            }
        } else if s.is_empty() {
            Ok((1, s, false))
        } else {
            // elementwise: batch = leading dim when present, shape preserved
            Ok((s[0], &s[1..], true))
        }
    }

    pub fn forward(&mut self, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let (batch, sample, batched) = self.split_batch(x)?;
        let out_sample = self
            .spec
            .output_shape(sample)
            .map_err(|_| self.shape_error(self.expected_input(), x.shape()))?;
        let mut out_shape = if batched { vec![batch] } else { Vec::new() };
        out_shape.extend_from_slice(&out_sample);

        let xd = x.data();
        let (y, cache) = match self.spec {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                groups,
                ..
            } => {
                let geom = ConvGeom::new(
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    groups,
                    sample[1],
                    sample[2],
                )
                .expect("validated by output_shape");
                let bias = self.params.get(1).map(|b| b.value.data());
                let (y, cols) = ops::conv2d_forward(&geom, batch, xd, self.params[0].value.data(), bias);
                (y, Cache::Conv { geom, cols })
            }
            LayerSpec::DepthwiseSeparable {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let dw = ConvGeom::new(
                    in_channels,
                    in_channels,
                    kernel,
                    stride,
                    kernel / 2,
                    in_channels,
                    sample[1],
                    sample[2],
                )
                .expect("validated by output_shape");
                let (h, dw_cols) = ops::conv2d_forward(&dw, batch, xd, self.params[0].value.data(), None);
                let pw = ConvGeom::new(in_channels, out_channels, 1, 1, 0, 1, dw.oh, dw.ow).expect("1x1");
                let (y, pw_cols) = ops::conv2d_forward(
                    &pw,
                    batch,
                    &h,
                    self.params[1].value.data(),
                    Some(self.params[2].value.data()),
                );
                (
                    y,
                    Cache::DwSep {
                        dw,
                        pw,
                        dw_cols,
                        pw_cols,
                    },
                )
            }
            LayerSpec::GroupedShuffle {
                in_channels,
                out_channels,
                kernel,
                stride,
                groups,
            } => {
                let geom = ConvGeom::new(
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    kernel / 2,
                    groups,
                    sample[1],
                    sample[2],
                )
                .expect("validated by output_shape");
                let (pre, cols) = ops::conv2d_forward(
                    &geom,
                    batch,
                    xd,
                    self.params[0].value.data(),
                    Some(self.params[1].value.data()),
                );
                let perm = ops::shuffle_permutation(out_channels, groups);
                let plane = geom.out_positions();
                let mut y = vec![0.0; pre.len()];
                for n in 0..batch {
                    let base = n * out_channels * plane;
                    for (j, &src) in perm.iter().enumerate() {
                        y[base + j * plane..base + (j + 1) * plane]
                            .copy_from_slice(&pre[base + src * plane..base + (src + 1) * plane]);
                    }
                }
                (y, Cache::Shuffle { geom, cols })
            }
            LayerSpec::Fc {
                in_features,
                out_features,
            } => {
                let mut y = Vec::with_capacity(batch * out_features);
                let b = self.params[1].value.data();
                for _ in 0..batch {
                    y.extend_from_slice(b);
                }
                ops::gemm_nt(batch, in_features, out_features, xd, self.params[0].value.data(), &mut y);
                (y, Cache::Dense { x: xd.to_vec() })
            }
            LayerSpec::LowRankFc {
                in_features,
                out_features,
                rank,
            } => {
                let mut hidden = vec![0.0; batch * rank];
                ops::gemm_nt(batch, in_features, rank, xd, self.params[0].value.data(), &mut hidden);
                let mut y = Vec::with_capacity(batch * out_features);
                let b = self.params[2].value.data();
                for _ in 0..batch {
                    y.extend_from_slice(b);
                }
                ops::gemm_nt(batch, rank, out_features, &hidden, self.params[1].value.data(), &mut y);
                (
                    y,
                    Cache::LowRank {
                        x: xd.to_vec(),
                        hidden,
                    },
                )
            }
            LayerSpec::Relu => {
                let positive: Vec<bool> = xd.iter().map(|v| *v > 0.0).collect();
                let y = xd.iter().map(|v| v.max(0.0)).collect();
                (y, Cache::Relu { positive })
            }
            LayerSpec::AdaptiveAvgPool { out_h, out_w } => {
                let (c, h, w) = (sample[0], sample[1], sample[2]);
                let mut y = vec![0.0; batch * c * out_h * out_w];
                for nc in 0..batch * c {
                    let plane = &xd[nc * h * w..(nc + 1) * h * w];
                    for oy in 0..out_h {
                        let (y0, y1) = pool_bounds(oy, h, out_h);
                        for ox in 0..out_w {
                            let (x0, x1) = pool_bounds(ox, w, out_w);
                            let mut acc = 0.0f32;
                            for iy in y0..y1 {
                                for ix in x0..x1 {
                                    acc += plane[iy * w + ix];
                                }
                            }
                            y[(nc * out_h + oy) * out_w + ox] = acc / ((y1 - y0) * (x1 - x0)) as f32;
                        }
                    }
                }
                (y, Cache::Pool { c, h, w })
            }
            LayerSpec::Dropout { p } => {
                if ctx.training && p > 0.0 {
                    let keep = 1.0 / (1.0 - p);
                    let scale: Vec<f32> = (0..xd.len())
                        .map(|_| if ctx.rng.random::<f32>() < p { 0.0 } else { keep })
                        .collect();
                    let y = xd.iter().zip(&scale).map(|(a, s)| a * s).collect();
                    (y, Cache::Dropout { scale: Some(scale) })
                } else {
                    (xd.to_vec(), Cache::Dropout { scale: None })
                }
            }
        };
        self.recorded = if ctx.record {
            Some(Recorded {
                in_shape: x.shape().to_vec(),
                batch,
                cache,
            })
        } else {
            None
        };
        let out = Tensor::new(out_shape, y)?;
        if !out.is_finite() {
            return Err(Error::Numerical(format!("non-finite output from {}", self.name)));
        }
        Ok(out)
    }

    fn expected_input(&self) -> String {
        match self.spec {
            LayerSpec::Conv2d { in_channels, .. }
            | LayerSpec::DepthwiseSeparable { in_channels, .. }
            | LayerSpec::GroupedShuffle { in_channels, .. } => format!("[N, {in_channels}, H, W]"),
            LayerSpec::Fc { in_features, .. } | LayerSpec::LowRankFc { in_features, .. } => {
                format!("[N, {in_features}]")
            }
            LayerSpec::AdaptiveAvgPool { .. } => "[N, C, H, W]".into(),
            _ => "any".into(),
        }
    }

    /// Backpropagate `grad_out` through the last recorded forward pass,
    /// accumulating into unfrozen parameter gradients. Returns the input
    /// gradient when `need_input` is set.
    pub fn backward(&mut self, grad_out: &Tensor, need_input: bool) -> Result<Option<Tensor>> {
        let rec = self
            .recorded
            .take()
            .ok_or_else(|| Error::BackwardBeforeForward(self.name.clone()))?;
        let batch = rec.batch;
        let g = grad_out.data();
        let in_numel: usize = rec.in_shape.iter().product();
        let dx: Option<Vec<f32>> = match (&self.spec, rec.cache) {
            (LayerSpec::Conv2d { .. }, Cache::Conv { geom, cols }) => {
                let (dw, db, dx) =
                    ops::conv2d_backward(&geom, batch, g, &cols, self.params[0].value.data(), !self.params[0].frozen, need_input);
                self.params[0].accumulate(&dw);
                if let Some(b) = self.params.get_mut(1) {
                    b.accumulate(&db);
                }
                need_input.then_some(dx)
            }
            (
                LayerSpec::DepthwiseSeparable { .. },
                Cache::DwSep {
                    dw,
                    pw,
                    dw_cols,
                    pw_cols,
                },
            ) => {
                let need_mid = need_input || !self.params[0].frozen;
                let (dpw, dpb, dh) =
                    ops::conv2d_backward(&pw, batch, g, &pw_cols, self.params[1].value.data(), !self.params[1].frozen, need_mid);
                self.params[1].accumulate(&dpw);
                self.params[2].accumulate(&dpb);
                if need_mid {
                    let (ddw, _, dx) =
                        ops::conv2d_backward(&dw, batch, &dh, &dw_cols, self.params[0].value.data(), !self.params[0].frozen, need_input);
                    self.params[0].accumulate(&ddw);
                    need_input.then_some(dx)
                } else {
                    None
                }
            }
            (LayerSpec::GroupedShuffle { out_channels, groups, .. }, Cache::Shuffle { geom, cols }) => {
                let perm = ops::shuffle_permutation(*out_channels, *groups);
                let plane = geom.out_positions();
                let mut gpre = vec![0.0; g.len()];
                for n in 0..batch {
                    let base = n * out_channels * plane;
                    for (j, &src) in perm.iter().enumerate() {
                        gpre[base + src * plane..base + (src + 1) * plane]
                            .copy_from_slice(&g[base + j * plane..base + (j + 1) * plane]);
                    }
                }
                let (dw, db, dx) =
                    ops::conv2d_backward(&geom, batch, &gpre, &cols, self.params[0].value.data(), !self.params[0].frozen, need_input);
                self.params[0].accumulate(&dw);
                self.params[1].accumulate(&db);
                need_input.then_some(dx)
            }
            (
                LayerSpec::Fc {
                    in_features,
                    out_features,
                },
                Cache::Dense { x },
            ) => {
                let (din, dout) = (*in_features, *out_features);
                if !self.params[0].frozen {
                    let mut dw = vec![0.0; dout * din];
                    ops::gemm_tn(dout, batch, din, g, &x, &mut dw);
                    self.params[0].accumulate(&dw);
                    self.params[1].accumulate(&column_sums(g, batch, dout));
                }
                need_input.then(|| {
                    let mut dx = vec![0.0; batch * din];
                    ops::gemm_nn(batch, dout, din, g, self.params[0].value.data(), &mut dx);
                    dx
                })
            }
            (
                LayerSpec::LowRankFc {
                    in_features,
                    out_features,
                    rank,
                },
                Cache::LowRank { x, hidden },
            ) => {
                let (din, dout, r) = (*in_features, *out_features, *rank);
                if !self.params[1].frozen {
                    let mut dv = vec![0.0; dout * r];
                    ops::gemm_tn(dout, batch, r, g, &hidden, &mut dv);
                    self.params[1].accumulate(&dv);
                    self.params[2].accumulate(&column_sums(g, batch, dout));
                }
                let need_hidden = need_input || !self.params[0].frozen;
                if need_hidden {
                    let mut dh = vec![0.0; batch * r];
                    ops::gemm_nn(batch, dout, r, g, self.params[1].value.data(), &mut dh);
                    if !self.params[0].frozen {
                        let mut du = vec![0.0; r * din];
                        ops::gemm_tn(r, batch, din, &dh, &x, &mut du);
                        self.params[0].accumulate(&du);
                    }
                    need_input.then(|| {
                        let mut dx = vec![0.0; batch * din];
                        ops::gemm_nn(batch, r, din, &dh, self.params[0].value.data(), &mut dx);
                        dx
                    })
                } else {
                    None
                }
            }
            (LayerSpec::Relu, Cache::Relu { positive }) => need_input.then(|| {
                g.iter()
                    .zip(&positive)
                    .map(|(v, p)| if *p { *v } else { 0.0 })
                    .collect()
            }),
            (LayerSpec::AdaptiveAvgPool { out_h, out_w }, Cache::Pool { c, h, w }) => {
                need_input.then(|| {
                    let (oh, ow) = (*out_h, *out_w);
                    let mut dx = vec![0.0; batch * c * h * w];
                    for nc in 0..batch * c {
                        let plane = &mut dx[nc * h * w..(nc + 1) * h * w];
                        for oy in 0..oh {
                            let (y0, y1) = pool_bounds(oy, h, oh);
                            for ox in 0..ow {
                                let (x0, x1) = pool_bounds(ox, w, ow);
                                let share = g[(nc * oh + oy) * ow + ox] / ((y1 - y0) * (x1 - x0)) as f32;
                                for iy in y0..y1 {
                                    for ix in x0..x1 {
                                        plane[iy * w + ix] += share;
                                    }
                                }
                            }
                        }
                    }
                    dx
                })
            }
            (LayerSpec::Dropout { .. }, Cache::Dropout { scale }) => need_input.then(|| match scale {
                Some(s) => g.iter().zip(&s).map(|(a, b)| a * b).collect(),
                None => g.to_vec(),
            }),
            _ => unreachable!("cache variant always matches spec"),
        };
        match dx {
            Some(d) => {
                debug_assert_eq!(d.len(), in_numel);
                Ok(Some(Tensor::new(rec.in_shape, d)?))
            }
            None => Ok(None),
        }
    }
}

fn column_sums(g: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        for (o, v) in out.iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
            *o += v;
        }
    }
    out
}

/// Adaptive pooling window `[start, end)` for output index `i`.
pub(crate) fn pool_bounds(i: usize, input: usize, output: usize) -> (usize, usize) {
    let start = i * input / output;
    let end = ((i + 1) * input).div_ceil(output);
    (start, end)
}
