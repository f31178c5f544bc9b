//! Slice-level kernels shared by the pure ops and the tape's backward pass.
//! Nothing here touches the FLOP counter.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Strided view of a row-major matrix, optionally transposed.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    transposed: bool,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        MatRef {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            transposed: !self.transposed,
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.rows as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = a·b + beta·c` for a row-major `c` of shape a.rows × b.cols.
pub(crate) fn gemm(a: MatRef, b: MatRef, c: &mut [f64], beta: f64) {
    assert_eq!(a.cols, b.rows, "gemm inner extents");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(c.len(), m * n, "gemm output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the views cover exactly rows*cols elements (checked by MatRef
    // construction and the asserts above) and `c` is m*n long.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of one 2-D cross-correlation.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        // f(column-buffer row, output pixel, input offset)
        let (h, w) = (self.height as isize, self.width as isize);
        for c in 0..self.channels {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix < 0 || ix >= w {
                                continue;
                            }
                            let src = (c * self.height + iy as usize) * self.width + ix as usize;
                            f(row, oy * self.out_w + ox, src);
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn im2col(g: &ConvGeom, input: &[f64]) -> Vec<f64> {
    let cols = g.col_cols();
    let mut out = vec![0.0; g.col_rows() * cols];
    g.for_each_tap(|row, pix, src| out[row * cols + pix] = input[src]);
    out
}

/// Adjoint of [`im2col`]: scatter-add columns back onto an image.
pub(crate) fn col2im(g: &ConvGeom, colbuf: &[f64], image: &mut [f64]) {
    let cols = g.col_cols();
    g.for_each_tap(|row, pix, src| image[src] += colbuf[row * cols + pix]);
}

/// Output positions `lo..hi` whose tap at offset `k` lands inside `0..len`.
fn valid_outputs(out_len: usize, len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k).div_ceil(stride);
    let hi = if len + pad > k {
        ((len + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Per-channel 3-D cross-correlation: one kh×kw kernel per channel.
pub(crate) fn depthwise_forward(g: &ConvGeom, input: &[f64], kernels: &[f64], out: &mut [f64]) {
    let plane_in = g.height * g.width;
    let plane_out = g.out_h * g.out_w;
    let s = g.stride;
    for c in 0..g.channels {
        let inp = &input[c * plane_in..(c + 1) * plane_in];
        let o = &mut out[c * plane_out..(c + 1) * plane_out];
        for ki in 0..g.kh {
            let (y0, y1) = valid_outputs(g.out_h, g.height, ki, s, g.pad);
            for kj in 0..g.kw {
                let (x0, x1) = valid_outputs(g.out_w, g.width, kj, s, g.pad);
                let kv = kernels[(c * g.kh + ki) * g.kw + kj];
                for oy in y0..y1 {
                    let iy = oy * s + ki - g.pad;
                    let row = &inp[iy * g.width..(iy + 1) * g.width];
                    let orow = &mut o[oy * g.out_w + x0..oy * g.out_w + x1];
                    let ix0 = x0 * s + kj - g.pad;
                    if s == 1 {
                        for (ov, iv) in orow.iter_mut().zip(&row[ix0..]) {
                            *ov += kv * iv;
                        }
                    } else {
                        for (ov, iv) in orow.iter_mut().zip(row[ix0..].iter().step_by(s)) {
                            *ov += kv * iv;
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of [`depthwise_forward`] with respect to input and kernels.
pub(crate) fn depthwise_backward(
    g: &ConvGeom,
    input: &[f64],
    kernels: &[f64],
    dout: &[f64],
    mut dinput: Option<&mut [f64]>,
    mut dkernels: Option<&mut [f64]>,
) {
    let plane_in = g.height * g.width;
    let plane_out = g.out_h * g.out_w;
    let s = g.stride;
    let mut lanes = Vec::with_capacity(g.out_w);
    let want_dk = dkernels.is_some();
    for c in 0..g.channels {
        let inp = &input[c * plane_in..(c + 1) * plane_in];
        let go = &dout[c * plane_out..(c + 1) * plane_out];
        for ki in 0..g.kh {
            let (y0, y1) = valid_outputs(g.out_h, g.height, ki, s, g.pad);
            for kj in 0..g.kw {
                let (x0, x1) = valid_outputs(g.out_w, g.width, kj, s, g.pad);
                let kidx = (c * g.kh + ki) * g.kw + kj;
                let kv = kernels[kidx];
                let ix0 = x0 * s + kj - g.pad;
                lanes.clear();
                lanes.resize(x1 - x0, 0.0);
                for oy in y0..y1 {
                    let iy = oy * s + ki - g.pad;
                    let grow = &go[oy * g.out_w + x0..oy * g.out_w + x1];
                    let row = &inp[iy * g.width..(iy + 1) * g.width];
                    if want_dk {
                        if s == 1 {
                            for ((acc, a), b) in lanes.iter_mut().zip(grow).zip(&row[ix0..]) {
                                *acc += a * b;
                            }
                        } else {
                            for ((acc, a), b) in lanes.iter_mut().zip(grow).zip(row[ix0..].iter().step_by(s)) {
                                *acc += a * b;
                            }
                        }
                    }
                    if let Some(di) = dinput.as_deref_mut() {
                        let drow = &mut di[c * plane_in + iy * g.width..c * plane_in + (iy + 1) * g.width];
                        if s == 1 {
                            for (dv, gv) in drow[ix0..].iter_mut().zip(grow) {
                                *dv += gv * kv;
                            }
                        } else {
                            for (dv, gv) in drow[ix0..].iter_mut().step_by(s).zip(grow) {
                                *dv += gv * kv;
                            }
                        }
                    }
                }
                if let Some(dkv) = dkernels.as_deref_mut() {
                    dkv[kidx] += lanes.iter().sum::<f64>();
                }
            }
        }
    }
}

/// Row-wise numerically stable softmax in place.
pub(crate) fn softmax_rows(data: &mut [f64], row_len: usize) {
    for row in data.chunks_exact_mut(row_len) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        row.iter_mut().for_each(|v| *v *= inv);
    }
}

/// Given softmax output `p` and upstream `dp`, accumulate the gradient of
/// the logits into `dlogits`.
pub(crate) fn softmax_rows_backward(p: &[f64], dp: &[f64], row_len: usize, dlogits: &mut [f64]) {
    for ((pr, dr), out) in p
        .chunks_exact(row_len)
        .zip(dp.chunks_exact(row_len))
        .zip(dlogits.chunks_exact_mut(row_len))
    {
        let dot: f64 = pr.iter().zip(dr).map(|(a, b)| a * b).sum();
        for ((o, &pi), &di) in out.iter_mut().zip(pr).zip(dr) {
            *o += pi * (di - dot);
        }
    }
}

/// Layer norm over rows of length `c`; returns (normalised, 1/std per row).
pub(crate) fn layer_norm_stats(x: &[f64], c: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let rows = x.len() / c;
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * c..(r + 1) * c];
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[r] = is;
        for (o, v) in xhat[r * c..(r + 1) * c].iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
    }
    (xhat, inv_std)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

/// Shape bookkeeping for grouped multi-head attention over token rows.
///
/// `q`, `k`, `v` are `[groups·len × channels]`; consecutive runs of `len`
/// rows form one attention group, and head `h` owns columns
/// `h·d .. (h+1)·d`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AttnGeom {
    pub groups: usize,
    pub len: usize,
    pub channels: usize,
    pub heads: usize,
}

impl AttnGeom {
    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn scale(&self) -> f64 {
        1.0 / (self.head_dim() as f64).sqrt()
    }
}

/// Strided view used by the attention kernels: element (i, j) lives at
/// `data[i*rs + j*cs]`.
#[derive(Clone, Copy)]
struct View<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> View<'a> {
    fn strided(data: &'a [f64], rows: usize, cols: usize, rs: usize) -> Self {
        View {
            data,
            rows,
            cols,
            rs,
            cs: 1,
        }
    }

    fn t(self) -> Self {
        View {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }
}

fn span(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    (rows - 1) * rs + (cols - 1) * cs + 1
}

/// `c = alpha·a·b + beta·c` where `c` is row-major with row stride `rsc`.
fn gemm_view(alpha: f64, a: View, b: View, c: &mut [f64], rsc: usize, beta: f64) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(k, b.rows, "gemm inner extents");
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(a.data.len() >= span(m, k, a.rs, a.cs));
    assert!(b.data.len() >= span(k, n, b.rs, b.cs));
    assert!(c.len() >= span(m, n, rsc, 1));
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Forward attention. `bias` is `[heads × len × len]` shared by all groups.
/// Returns (output, probabilities `[groups × heads × len × len]`).
pub(crate) fn attention_forward(
    g: &AttnGeom,
    q: &[f64],
    k: &[f64],
    v: &[f64],
    bias: Option<&[f64]>,
) -> (Vec<f64>, Vec<f64>) {
    let (l, c, d) = (g.len, g.channels, g.head_dim());
    let scale = g.scale();
    let mut out = vec![0.0; g.groups * l * c];
    let mut probs = vec![0.0; g.groups * g.heads * l * l];
    for grp in 0..g.groups {
        let base = grp * l * c;
        for h in 0..g.heads {
            let at = base + h * d;
            let pi = grp * g.heads + h;
            let p = &mut probs[pi * l * l..(pi + 1) * l * l];
            if let Some(b) = bias {
                p.copy_from_slice(&b[h * l * l..(h + 1) * l * l]);
            }
            let beta = if bias.is_some() { 1.0 } else { 0.0 };
            gemm_view(scale, View::strided(&q[at..], l, d, c), View::strided(&k[at..], l, d, c).t(), p, l, beta);
            softmax_rows(p, l);
            gemm_view(1.0, View::strided(p, l, l, l), View::strided(&v[at..], l, d, c), &mut out[at..], c, 0.0);
        }
    }
    (out, probs)
}

pub(crate) struct AttnGrads<'a> {
    pub dq: Option<&'a mut [f64]>,
    pub dk: Option<&'a mut [f64]>,
    pub dv: Option<&'a mut [f64]>,
    pub dbias: Option<&'a mut [f64]>,
}

pub(crate) fn attention_backward(
    g: &AttnGeom,
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    dout: &[f64],
    mut grads: AttnGrads,
) {
    let (l, c, d) = (g.len, g.channels, g.head_dim());
    let scale = g.scale();
    let mut dp = vec![0.0; l * l];
    let mut ds = vec![0.0; l * l];
    for grp in 0..g.groups {
        let base = grp * l * c;
        for h in 0..g.heads {
            let at = base + h * d;
            let pi = grp * g.heads + h;
            let p = &probs[pi * l * l..(pi + 1) * l * l];
            gemm_view(1.0, View::strided(&dout[at..], l, d, c), View::strided(&v[at..], l, d, c).t(), &mut dp, l, 0.0);
            if let Some(dv) = grads.dv.as_deref_mut() {
                gemm_view(1.0, View::strided(p, l, l, l).t(), View::strided(&dout[at..], l, d, c), &mut dv[at..], c, 1.0);
            }
            ds.iter_mut().for_each(|x| *x = 0.0);
            softmax_rows_backward(p, &dp, l, &mut ds);
            if let Some(db) = grads.dbias.as_deref_mut() {
                for (a, b) in db[h * l * l..(h + 1) * l * l].iter_mut().zip(&ds) {
                    *a += b;
                }
            }
            if let Some(dq) = grads.dq.as_deref_mut() {
                gemm_view(scale, View::strided(&ds, l, l, l), View::strided(&k[at..], l, d, c), &mut dq[at..], c, 1.0);
            }
            if let Some(dk) = grads.dk.as_deref_mut() {
                gemm_view(scale, View::strided(&ds, l, l, l).t(), View::strided(&q[at..], l, d, c), &mut dk[at..], c, 1.0);
            }
        }
    }
}
