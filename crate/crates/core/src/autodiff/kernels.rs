//! Raw numeric kernels shared by forward and backward passes.

use super::array::strides;

/// Geometry of a batched 1-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub t_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub t_out: usize,
}

impl ConvDims {
    fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }

    fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }

    /// Output index range `[lo, hi)` that reads an in-bounds input for tap `k`.
    fn t_range(&self, k: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.padding as isize);
        let k = k as isize;
        let lo = if p > k { (p - k + s - 1) / s } else { 0 };
        let last = self.t_in as isize - 1 + p - k;
        if last < 0 {
            return (0, 0);
        }
        let hi = (last / s + 1).min(self.t_out as isize);
        (lo as usize, hi.max(lo) as usize)
    }
}

#[inline]
fn active(w: &[f64], mask: Option<&[f64]>, idx: usize) -> Option<f64> {
    match mask {
        Some(m) if m[idx] == 0.0 => None,
        _ => {
            let v = w[idx];
            (v != 0.0).then_some(v)
        }
    }
}

pub(crate) fn conv1d_forward(
    d: &ConvDims,
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    mask: Option<&[f64]>,
    out: &mut [f64],
) {
    let (cin_g, cout_g) = (d.cin_g(), d.cout_g());
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let grp = co / cout_g;
            let orow = &mut out[(b * d.c_out + co) * d.t_out..][..d.t_out];
            if let Some(bias) = bias {
                orow.iter_mut().for_each(|v| *v = bias[co]);
            }
            for cl in 0..cin_g {
                let ci = grp * cin_g + cl;
                let xrow = &x[(b * d.c_in + ci) * d.t_in..][..d.t_in];
                for k in 0..d.kernel {
                    let widx = (co * cin_g + cl) * d.kernel + k;
                    let Some(wv) = active(w, mask, widx) else { continue };
                    let (lo, hi) = d.t_range(k);
                    if lo >= hi {
                        continue;
                    }
                    if d.stride == 1 {
                        let base = lo + k - d.padding;
                        let xs = &xrow[base..base + (hi - lo)];
                        for (o, &xv) in orow[lo..hi].iter_mut().zip(xs) {
                            *o += wv * xv;
                        }
                    } else {
                        for t in lo..hi {
                            orow[t] += wv * xrow[t * d.stride + k - d.padding];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv1d_backward_input(d: &ConvDims, go: &[f64], w: &[f64], mask: Option<&[f64]>, gx: &mut [f64]) {
    let (cin_g, cout_g) = (d.cin_g(), d.cout_g());
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let grp = co / cout_g;
            let grow = &go[(b * d.c_out + co) * d.t_out..][..d.t_out];
            for cl in 0..cin_g {
                let ci = grp * cin_g + cl;
                let gxrow = &mut gx[(b * d.c_in + ci) * d.t_in..][..d.t_in];
                for k in 0..d.kernel {
                    let widx = (co * cin_g + cl) * d.kernel + k;
                    let Some(wv) = active(w, mask, widx) else { continue };
                    let (lo, hi) = d.t_range(k);
                    if lo >= hi {
                        continue;
                    }
                    if d.stride == 1 {
                        let base = lo + k - d.padding;
                        for (g, &o) in gxrow[base..base + (hi - lo)].iter_mut().zip(&grow[lo..hi]) {
                            *g += wv * o;
                        }
                    } else {
                        for t in lo..hi {
                            gxrow[t * d.stride + k - d.padding] += wv * grow[t];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv1d_backward_weight(d: &ConvDims, go: &[f64], x: &[f64], mask: Option<&[f64]>, gw: &mut [f64]) {
    let (cin_g, cout_g) = (d.cin_g(), d.cout_g());
    for co in 0..d.c_out {
        let grp = co / cout_g;
        for cl in 0..cin_g {
            let ci = grp * cin_g + cl;
            for k in 0..d.kernel {
                let widx = (co * cin_g + cl) * d.kernel + k;
                if matches!(mask, Some(m) if m[widx] == 0.0) {
                    continue;
                }
                let (lo, hi) = d.t_range(k);
                if lo >= hi {
                    continue;
                }
                let mut acc = 0.0;
                for b in 0..d.batch {
                    let grow = &go[(b * d.c_out + co) * d.t_out..][..d.t_out];
                    let xrow = &x[(b * d.c_in + ci) * d.t_in..][..d.t_in];
                    if d.stride == 1 {
                        let base = lo + k - d.padding;
                        acc += grow[lo..hi].iter().zip(&xrow[base..base + (hi - lo)]).map(|(a, b)| a * b).sum::<f64>();
                    } else {
                        for t in lo..hi {
                            acc += grow[t] * xrow[t * d.stride + k - d.padding];
                        }
                    }
                }
                gw[widx] += acc;
            }
        }
    }
}

pub(crate) fn conv1d_backward_bias(d: &ConvDims, go: &[f64], gb: &mut [f64]) {
    for b in 0..d.batch {
        for co in 0..d.c_out {
            gb[co] += go[(b * d.c_out + co) * d.t_out..][..d.t_out].iter().sum::<f64>();
        }
    }
}

/// `out[bt] = a[bt] (m×k) · b[bt] (k×n)`, accumulated into `out`.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], batch: usize, m: usize, k: usize, n: usize) {
    for bt in 0..batch {
        let a = &a[bt * m * k..][..m * k];
        let b = &b[bt * k * n..][..k * n];
        let out = &mut out[bt * m * n..][..m * n];
        for i in 0..m {
            let orow = &mut out[i * n..][..n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                for (o, &bv) in orow.iter_mut().zip(&b[p * n..][..n]) {
                    *o += av * bv;
                }
            }
        }
    }
}

/// `ga += go · bᵀ` for each batch entry.
pub(crate) fn matmul_grad_a(go: &[f64], b: &[f64], ga: &mut [f64], batch: usize, m: usize, k: usize, n: usize) {
    for bt in 0..batch {
        let go = &go[bt * m * n..][..m * n];
        let b = &b[bt * k * n..][..k * n];
        let ga = &mut ga[bt * m * k..][..m * k];
        for i in 0..m {
            let grow = &go[i * n..][..n];
            for p in 0..k {
                ga[i * k + p] += grow.iter().zip(&b[p * n..][..n]).map(|(x, y)| x * y).sum::<f64>();
            }
        }
    }
}

/// `gb += aᵀ · go` for each batch entry.
pub(crate) fn matmul_grad_b(go: &[f64], a: &[f64], gb: &mut [f64], batch: usize, m: usize, k: usize, n: usize) {
    for bt in 0..batch {
        let go = &go[bt * m * n..][..m * n];
        let a = &a[bt * m * k..][..m * k];
        let gb = &mut gb[bt * k * n..][..k * n];
        for i in 0..m {
            let grow = &go[i * n..][..n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                for (g, &o) in gb[p * n..][..n].iter_mut().zip(grow) {
                    *g += av * o;
                }
            }
        }
    }
}

/// Permutes axes: output axis `i` is input axis `axes[i]`.
pub(crate) fn permute(data: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let mut offset = 0usize;
    for _ in 0..n {
        out.push(data[offset]);
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            offset += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

pub(crate) fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}
