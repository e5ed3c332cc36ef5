//! Dense kernels shared by the layer implementations.

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0f32;
            for (x, y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            c[i * n + j] += acc;
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        groups: usize,
        h: usize,
        w: usize,
    ) -> Option<Self> {
        if h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Some(Self {
            cin,
            cout,
            k,
            stride,
            pad,
            groups,
            h,
            w,
            oh,
            ow,
        })
    }

    pub fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    pub fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    /// Rows of one group's column matrix.
    pub fn col_rows(&self) -> usize {
        self.cin_g() * self.k * self.k
    }

    pub fn out_positions(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col(geom: &ConvGeom, x: &[f32], group: usize, col: &mut [f32]) {
    let (k, hw) = (geom.k, geom.h * geom.w);
    let p = geom.out_positions();
    for c in 0..geom.cin_g() {
        let plane = &x[(group * geom.cin_g() + c) * hw..][..hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..geom.oh {
                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                    let line = &mut dst[oy * geom.ow..(oy + 1) * geom.ow];
                    if iy < 0 || iy >= geom.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * geom.w..][..geom.w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                        *d = if ix < 0 || ix >= geom.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(geom: &ConvGeom, col: &[f32], group: usize, dx: &mut [f32]) {
    let (k, hw) = (geom.k, geom.h * geom.w);
    let p = geom.out_positions();
    for c in 0..geom.cin_g() {
        let plane = &mut dx[(group * geom.cin_g() + c) * hw..][..hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..geom.oh {
                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                    if iy < 0 || iy >= geom.h as isize {
                        continue;
                    }
                    for ox in 0..geom.ow {
                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                        if ix >= 0 && ix < geom.w as isize {
                            plane[iy as usize * geom.w + ix as usize] += src[oy * geom.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Batched grouped convolution. Returns the output and the column buffers
/// needed by [`conv2d_backward`].
pub(crate) fn conv2d_forward(
    geom: &ConvGeom,
    batch: usize,
    x: &[f32],
    weight: &[f32],
    bias: Option<&[f32]>,
) -> (Vec<f32>, Vec<f32>) {
    let (kr, p) = (geom.col_rows(), geom.out_positions());
    let cout_g = geom.cout_g();
    let in_stride = geom.cin * geom.h * geom.w;
    let out_stride = geom.cout * p;
    let mut cols = vec![0.0f32; batch * geom.groups * kr * p];
    let mut y = vec![0.0f32; batch * out_stride];
    for n in 0..batch {
        let xs = &x[n * in_stride..(n + 1) * in_stride];
        for g in 0..geom.groups {
            let col = &mut cols[(n * geom.groups + g) * kr * p..][..kr * p];
            im2col(geom, xs, g, col);
            let w_g = &weight[g * cout_g * kr..(g + 1) * cout_g * kr];
            let y_g = &mut y[n * out_stride + g * cout_g * p..][..cout_g * p];
            if let Some(b) = bias {
                for (oc, chunk) in y_g.chunks_mut(p).enumerate() {
                    chunk.fill(b[g * cout_g + oc]);
                }
            }
            gemm_nn(cout_g, kr, p, w_g, col, y_g);
        }
    }
    (y, cols)
}

/// Gradients of a grouped convolution: `(d_weight, d_bias, d_input)`.
/// `d_input` is skipped (empty) when `need_input` is false.
pub(crate) fn conv2d_backward(
    geom: &ConvGeom,
    batch: usize,
    grad_y: &[f32],
    cols: &[f32],
    weight: &[f32],
    need_weight: bool,
    need_input: bool,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let (kr, p) = (geom.col_rows(), geom.out_positions());
    let cout_g = geom.cout_g();
    let in_stride = geom.cin * geom.h * geom.w;
    let out_stride = geom.cout * p;
    let mut dw = vec![0.0f32; weight.len()];
    let mut db = vec![0.0f32; geom.cout];
    let mut dx = if need_input {
        vec![0.0f32; batch * in_stride]
    } else {
        Vec::new()
    };
    let mut dcol = vec![0.0f32; kr * p];
    for n in 0..batch {
        for g in 0..geom.groups {
            let gy = &grad_y[n * out_stride + g * cout_g * p..][..cout_g * p];
            if need_weight {
                let col = &cols[(n * geom.groups + g) * kr * p..][..kr * p];
                for (oc, chunk) in gy.chunks(p).enumerate() {
                    db[g * cout_g + oc] += chunk.iter().sum::<f32>();
                }
                let dw_g = &mut dw[g * cout_g * kr..(g + 1) * cout_g * kr];
                gemm_nt(cout_g, p, kr, gy, col, dw_g);
            }
            if need_input {
                let w_g = &weight[g * cout_g * kr..(g + 1) * cout_g * kr];
                dcol.fill(0.0);
                gemm_tn(kr, cout_g, p, w_g, gy, &mut dcol);
                col2im(geom, &dcol, g, &mut dx[n * in_stride..(n + 1) * in_stride]);
            }
        }
    }
    (dw, db, dx)
}

/// Channel shuffle permutation: output channel `j` reads input channel `perm[j]`.
pub(crate) fn shuffle_permutation(channels: usize, groups: usize) -> Vec<usize> {
    let per = channels / groups;
    // view as [groups, per] and transpose to [per, groups]
    (0..channels)
        .map(|j| {
            let (i, g) = (j / groups, j % groups);
            g * per + i
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = [0.0; 4];
        gemm_nn(2, 3, 2, &a, &b, &mut c);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);

        // bᵀ stored as 2x3
        let bt = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0];
        let mut c2 = [0.0; 4];
        gemm_nt(2, 3, 2, &a, &bt, &mut c2);
        assert_eq!(c2, c);

        // aᵀ stored as 3x2
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut c3 = [0.0; 4];
        gemm_tn(2, 3, 2, &at, &b, &mut c3);
        assert_eq!(c3, c);
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let p = shuffle_permutation(8, 2);
        assert_eq!(p, vec![0, 4, 1, 5, 2, 6, 3, 7]);
        let mut sorted = p.clone();
        sorted.sort();
        assert_eq!(sorted, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn output_size_formula() {
        let g = ConvGeom::new(1, 1, 3, 2, 1, 1, 8, 8).unwrap();
        assert_eq!((g.oh, g.ow), (4, 4));
    }
}
