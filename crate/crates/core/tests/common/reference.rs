//! Naive float64 reference forward passes, written independently of the
//! im2col kernels, used as the finite-difference oracle for gradients.

use adascale::tinynn::LayerSpec;

/// Per-sample `[C, H, W]` output of a direct grouped convolution.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    weight: &[f64],
    bias: Option<&[f64]>,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    groups: usize,
) -> (Vec<f64>, (usize, usize, usize)) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let (cin_g, cout_g) = (c / groups, cout / groups);
    let mut y = vec![0.0; cout * oh * ow];
    for oc in 0..cout {
        let g = oc / cout_g;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias.map_or(0.0, |b| b[oc]);
                for ic in 0..cin_g {
                    let in_c = g * cin_g + ic;
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as i64 - pad as i64;
                            let ix = (ox * stride + kx) as i64 - pad as i64;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            let xv = x[(in_c * h + iy as usize) * w + ix as usize];
                            let wv = weight[((oc * cin_g + ic) * k + ky) * k + kx];
                            acc += xv * wv;
                        }
                    }
                }
                y[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    (y, (cout, oh, ow))
}

fn dense(x: &[f64], weight: &[f64], bias: Option<&[f64]>, din: usize, dout: usize) -> Vec<f64> {
    (0..dout)
        .map(|o| {
            let mut acc = bias.map_or(0.0, |b| b[o]);
            for i in 0..din {
                acc += weight[o * din + i] * x[i];
            }
            acc
        })
        .collect()
}

/// Forward one sample through `spec` with the given parameter tensors (in the
/// layer's parameter order). `mask` is the dropout scale vector, if any.
pub fn forward_sample(
    spec: &LayerSpec,
    params: &[Vec<f64>],
    x: &[f64],
    shape: &[usize],
    mask: Option<&[f64]>,
) -> Vec<f64> {
    match *spec {
        LayerSpec::Conv2d {
            out_channels,
            kernel,
            stride,
            padding,
            groups,
            bias,
            ..
        } => {
            let b = if bias { Some(params[1].as_slice()) } else { None };
            conv2d(
                x,
                (shape[0], shape[1], shape[2]),
                &params[0],
                b,
                out_channels,
                kernel,
                stride,
                padding,
                groups,
            )
            .0
        }
        LayerSpec::DepthwiseSeparable {
            in_channels,
            out_channels,
            kernel,
            stride,
        } => {
            let (mid, s) = conv2d(
                x,
                (shape[0], shape[1], shape[2]),
                &params[0],
                None,
                in_channels,
                kernel,
                stride,
                kernel / 2,
                in_channels,
            );
            conv2d(&mid, s, &params[1], Some(&params[2]), out_channels, 1, 1, 0, 1).0
        }
        LayerSpec::GroupedShuffle {
            out_channels,
            kernel,
            stride,
            groups,
            ..
        } => {
            let (pre, (c, oh, ow)) = conv2d(
                x,
                (shape[0], shape[1], shape[2]),
                &params[0],
                Some(&params[1]),
                out_channels,
                kernel,
                stride,
                kernel / 2,
                groups,
            );
            // reshape channels to [groups, c/groups], transpose, flatten
            let per = c / groups;
            let plane = oh * ow;
            let mut y = vec![0.0; pre.len()];
            for g in 0..groups {
                for i in 0..per {
                    let src = g * per + i;
                    let dst = i * groups + g;
                    y[dst * plane..(dst + 1) * plane].copy_from_slice(&pre[src * plane..(src + 1) * plane]);
                }
            }
            y
        }
        LayerSpec::LowRankFc {
            in_features,
            out_features,
            rank,
        } => {
            let h = dense(x, &params[0], None, in_features, rank);
            dense(&h, &params[1], Some(&params[2]), rank, out_features)
        }
        LayerSpec::Fc {
            in_features,
            out_features,
        } => dense(x, &params[0], Some(&params[1]), in_features, out_features),
        LayerSpec::Relu => x.iter().map(|v| if *v > 0.0 { *v } else { 0.0 }).collect(),
        LayerSpec::AdaptiveAvgPool { out_h, out_w } => {
            let (c, h, w) = (shape[0], shape[1], shape[2]);
            let mut y = Vec::with_capacity(c * out_h * out_w);
            for ch in 0..c {
                for oy in 0..out_h {
                    let y0 = (oy as f64 * h as f64 / out_h as f64).floor() as usize;
                    let y1 = ((oy + 1) as f64 * h as f64 / out_h as f64).ceil() as usize;
                    for ox in 0..out_w {
                        let x0 = (ox as f64 * w as f64 / out_w as f64).floor() as usize;
                        let x1 = ((ox + 1) as f64 * w as f64 / out_w as f64).ceil() as usize;
                        let mut acc = 0.0;
                        for iy in y0..y1 {
                            for ix in x0..x1 {
                                acc += x[(ch * h + iy) * w + ix];
                            }
                        }
                        y.push(acc / ((y1 - y0) * (x1 - x0)) as f64);
                    }
                }
            }
            y
        }
        LayerSpec::Dropout { .. } => match mask {
            Some(m) => x.iter().zip(m).map(|(a, b)| a * b).collect(),
            None => x.to_vec(),
        },
    }
}
