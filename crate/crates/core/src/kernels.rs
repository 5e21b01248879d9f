//! Slice-level numeric kernels shared by the tape operations.
//!
//! Nothing in here knows about gradients; the tape composes these into
//! forward and backward rules.

/// `C = alpha * A·B + beta * C` with arbitrary row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len(), "gemm: A out of bounds");
        assert!(last(k, n, rsb, csb) < b.len(), "gemm: B out of bounds");
    }
    assert!(last(m, n, rsc, csc) < c.len(), "gemm: C out of bounds");
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Row-major strides of `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Materializes `x.permute(perm)`; returns the permuted buffer and shape.
pub(crate) fn permute(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = out_shape.len();
    let mut out = Vec::with_capacity(data.len());
    if rank == 0 {
        return (data.to_vec(), out_shape);
    }
    let inner = out_shape[rank - 1];
    let inner_stride = src_strides[rank - 1];
    let outer: usize = out_shape[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank - 1];
    let mut base = 0usize;
    for _ in 0..outer {
        if inner_stride == 1 {
            out.extend_from_slice(&data[base..base + inner]);
        } else {
            out.extend((0..inner).map(|i| data[base + i * inner_stride]));
        }
        // odometer increment over the outer axes
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            base += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out, out_shape)
}

pub(crate) fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Numerically stable softmax over contiguous rows of length `n`.
pub(crate) fn softmax_rows(x: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, dst) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            total += *d;
        }
        let inv = 1.0 / total;
        dst.iter_mut().for_each(|d| *d *= inv);
    }
    out
}

/// `dx = y ⊙ (dy − Σ dy⊙y)` per row.
pub(crate) fn softmax_rows_backward(y: &[f64], dy: &[f64], n: usize) -> Vec<f64> {
    let mut dx = vec![0.0; y.len()];
    for ((yr, dyr), dxr) in y
        .chunks_exact(n)
        .zip(dy.chunks_exact(n))
        .zip(dx.chunks_exact_mut(n))
    {
        let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
        for ((d, &yv), &g) in dxr.iter_mut().zip(yr).zip(dyr) {
            *d = yv * (g - dot);
        }
    }
    dx
}

/// Per-row statistics saved by layer norm for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct NormStats {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub(crate) fn layer_norm_rows(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, NormStats) {
    let n = gamma.len();
    let rows = x.len() / n;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * n..(r + 1) * n];
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let rs = 1.0 / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..n {
            let h = (row[j] - mean) * rs;
            xhat[r * n + j] = h;
            y[r * n + j] = h * gamma[j] + beta[j];
        }
    }
    (y, NormStats { xhat, rstd })
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn layer_norm_rows_backward(
    dy: &[f64],
    gamma: &[f64],
    stats: &NormStats,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = gamma.len();
    let rows = dy.len() / n;
    let mut dx = vec![0.0; dy.len()];
    let mut dgamma = vec![0.0; n];
    let mut dbeta = vec![0.0; n];
    let mut dxhat = vec![0.0; n];
    for r in 0..rows {
        let off = r * n;
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for j in 0..n {
            let g = dy[off + j];
            let h = stats.xhat[off + j];
            dgamma[j] += g * h;
            dbeta[j] += g;
            dxhat[j] = g * gamma[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * h;
        }
        mean_d /= n as f64;
        mean_dx /= n as f64;
        let rs = stats.rstd[r];
        for j in 0..n {
            dx[off + j] = rs * (dxhat[j] - mean_d - stats.xhat[off + j] * mean_dx);
        }
    }
    (dx, dgamma, dbeta)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `tanh` through a single `exp`.
fn fast_tanh(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        return x.tanh();
    }
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

/// Tanh approximation of GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + fast_tanh(GELU_C * (x + GELU_A * x * x * x)))
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = fast_tanh(GELU_C * (x + GELU_A * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

thread_local! {
    static SCRATCH: std::cell::RefCell<Vec<f64>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Runs `f` with a reusable buffer of at least `len` elements. Contents are
/// unspecified on entry.
fn with_scratch<T>(len: usize, f: impl FnOnce(&mut [f64]) -> T) -> T {
    SCRATCH.with(|cell| match cell.try_borrow_mut() {
        Ok(mut buf) => {
            if buf.len() < len {
                buf.resize(len, 0.0);
            }
            f(&mut buf[..len])
        }
        Err(_) => f(&mut vec![0.0; len]),
    })
}

/// Output columns `[lo, hi)` whose input index `o * stride + k - pad` lies in `[0, input)`.
fn valid_range(out: usize, input: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if input + pad > k { ((input + pad - k - 1) / stride + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

/// Geometry of a grouped 3-D cross-correlation. 2-D convolutions use a
/// depth extent of one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub groups: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeom {
    /// Output extent of one axis, or `None` if the kernel does not fit.
    pub fn out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
        let padded = input + 2 * padding;
        if kernel > padded || stride == 0 {
            None
        } else {
            Some((padded - kernel) / stride + 1)
        }
    }

    fn cols_rows(&self) -> usize {
        (self.c_in / self.groups) * self.kernel.iter().product::<usize>()
    }

    fn out_positions(&self) -> usize {
        self.output.iter().product()
    }

    /// A 1×1 unpadded, unstrided conv reads its input directly as `cols`.
    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.padding == [0, 0, 0]
    }

    fn is_depthwise(&self) -> bool {
        self.groups == self.c_in && self.groups == self.c_out
    }

    /// Visits every valid (kernel tap, output row) pair of one channel plane:
    /// `f(tap, out_start, in_start, len)` where the input run has stride `sw`.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let [id, ih, iw] = self.input;
        let [kd, kh, kw] = self.kernel;
        let [sd, sh, sw] = self.stride;
        let [pd, ph, pw] = self.padding;
        let [od, oh, ow] = self.output;
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let tap = (a * kh + b) * kw + e;
                    let (x_lo, x_hi) = valid_range(ow, iw, sw, e, pw);
                    if x_lo >= x_hi {
                        continue;
                    }
                    for z in 0..od {
                        let zi = (z * sd + a) as isize - pd as isize;
                        if zi < 0 || zi as usize >= id {
                            continue;
                        }
                        for y in 0..oh {
                            let yi = (y * sh + b) as isize - ph as isize;
                            if yi < 0 || yi as usize >= ih {
                                continue;
                            }
                            let base = (zi as usize * ih + yi as usize) * iw;
                            f(tap, (z * oh + y) * ow + x_lo, base + x_lo * sw + e - pw, x_hi - x_lo);
                        }
                    }
                }
            }
        }
    }

    fn in_positions(&self) -> usize {
        self.input.iter().product()
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.cols_rows()
    }

    pub fn input_len(&self) -> usize {
        self.batch * self.c_in * self.in_positions()
    }

    pub fn output_len(&self) -> usize {
        self.batch * self.c_out * self.out_positions()
    }

    pub fn macs(&self) -> usize {
        self.batch * self.c_out * self.cols_rows() * self.out_positions()
    }

    /// Unfolds the channels `[c0, c0 + cg)` of one batch element into
    /// `cols[(c, kd, kh, kw), (od, oh, ow)]`.
    fn im2col(&self, x: &[f64], c0: usize, cols: &mut [f64]) {
        let [id, ih, iw] = self.input;
        let [kd, kh, kw] = self.kernel;
        let [sd, sh, sw] = self.stride;
        let [pd, ph, pw] = self.padding;
        let [od, oh, ow] = self.output;
        let cg = self.c_in / self.groups;
        let p = self.out_positions();
        let mut row = 0;
        for c in 0..cg {
            let chan = &x[(c0 + c) * id * ih * iw..(c0 + c + 1) * id * ih * iw];
            for a in 0..kd {
                for b in 0..kh {
                    for e in 0..kw {
                        let (x_lo, x_hi) = valid_range(ow, iw, sw, e, pw);
                        let dst = &mut cols[row * p..(row + 1) * p];
                        for z in 0..od {
                            let zi = (z * sd + a) as isize - pd as isize;
                            for y in 0..oh {
                                let yi = (y * sh + b) as isize - ph as isize;
                                let out = &mut dst[(z * oh + y) * ow..(z * oh + y + 1) * ow];
                                if zi < 0 || zi as usize >= id || yi < 0 || yi as usize >= ih || x_lo >= x_hi {
                                    out.fill(0.0);
                                    continue;
                                }
                                let base = (zi as usize * ih + yi as usize) * iw;
                                out[..x_lo].fill(0.0);
                                out[x_hi..].fill(0.0);
                                let first = base + x_lo * sw + e - pw;
                                if sw == 1 {
                                    out[x_lo..x_hi].copy_from_slice(&chan[first..first + x_hi - x_lo]);
                                } else {
                                    for (k, v) in out[x_lo..x_hi].iter_mut().enumerate() {
                                        *v = chan[first + k * sw];
                                    }
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatters `cols` back, accumulating into `dx`.
    fn col2im(&self, cols: &[f64], c0: usize, dx: &mut [f64]) {
        let [id, ih, iw] = self.input;
        let [kd, kh, kw] = self.kernel;
        let [sd, sh, sw] = self.stride;
        let [pd, ph, pw] = self.padding;
        let [od, oh, ow] = self.output;
        let cg = self.c_in / self.groups;
        let p = self.out_positions();
        let mut row = 0;
        for c in 0..cg {
            let chan = &mut dx[(c0 + c) * id * ih * iw..(c0 + c + 1) * id * ih * iw];
            for a in 0..kd {
                for b in 0..kh {
                    for e in 0..kw {
                        let (x_lo, x_hi) = valid_range(ow, iw, sw, e, pw);
                        let src = &cols[row * p..(row + 1) * p];
                        row += 1;
                        if x_lo >= x_hi {
                            continue;
                        }
                        for z in 0..od {
                            let zi = (z * sd + a) as isize - pd as isize;
                            if zi < 0 || zi as usize >= id {
                                continue;
                            }
                            for y in 0..oh {
                                let yi = (y * sh + b) as isize - ph as isize;
                                if yi < 0 || yi as usize >= ih {
                                    continue;
                                }
                                let base = (zi as usize * ih + yi as usize) * iw;
                                let first = base + x_lo * sw + e - pw;
                                let s = &src[(z * oh + y) * ow + x_lo..(z * oh + y) * ow + x_hi];
                                if sw == 1 {
                                    for (d, v) in chan[first..first + s.len()].iter_mut().zip(s) {
                                        *d += v;
                                    }
                                } else {
                                    for (k, v) in s.iter().enumerate() {
                                        chan[first + k * sw] += v;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
        if self.is_depthwise() {
            return self.depthwise_forward(x, w, bias);
        }
        let rows = self.cols_rows();
        let p = self.out_positions();
        let cog = self.c_out / self.groups;
        let cg = self.c_in / self.groups;
        let in_len = self.c_in * self.in_positions();
        let out_len = self.c_out * p;
        let mut y = vec![0.0; self.output_len()];
        with_scratch(rows * p, |cols| {
            for bi in 0..self.batch {
                let xb = &x[bi * in_len..(bi + 1) * in_len];
                let yb = &mut y[bi * out_len..(bi + 1) * out_len];
                for g in 0..self.groups {
                    let src: &[f64] = if self.is_pointwise() {
                        &xb[g * cg * p..(g + 1) * cg * p]
                    } else {
                        self.im2col(xb, g * cg, cols);
                        cols
                    };
                    let wg = &w[g * cog * rows..(g + 1) * cog * rows];
                    let yg = &mut yb[g * cog * p..(g + 1) * cog * p];
                    gemm(cog, rows, p, 1.0, wg, (rows, 1), src, (p, 1), 0.0, yg, (p, 1));
                }
                if let Some(bias) = bias {
                    for (c, chunk) in yb.chunks_exact_mut(p).enumerate() {
                        chunk.iter_mut().for_each(|v| *v += bias[c]);
                    }
                }
            }
        });
        y
    }

    /// Gradient with respect to the input (also the transposed-conv forward).
    pub fn backward_data(&self, dy: &[f64], w: &[f64]) -> Vec<f64> {
        if self.is_depthwise() {
            return self.depthwise_backward_data(dy, w);
        }
        let rows = self.cols_rows();
        let p = self.out_positions();
        let cog = self.c_out / self.groups;
        let cg = self.c_in / self.groups;
        let in_len = self.c_in * self.in_positions();
        let out_len = self.c_out * p;
        let mut dx = vec![0.0; self.input_len()];
        with_scratch(rows * p, |cols| {
            for bi in 0..self.batch {
                let dyb = &dy[bi * out_len..(bi + 1) * out_len];
                let dxb = &mut dx[bi * in_len..(bi + 1) * in_len];
                for g in 0..self.groups {
                    let wg = &w[g * cog * rows..(g + 1) * cog * rows];
                    let dyg = &dyb[g * cog * p..(g + 1) * cog * p];
                    if self.is_pointwise() {
                        let dxg = &mut dxb[g * cg * p..(g + 1) * cg * p];
                        gemm(rows, cog, p, 1.0, wg, (1, rows), dyg, (p, 1), 0.0, dxg, (p, 1));
                        continue;
                    }
                    // cols = Wgᵀ · dYg
                    gemm(rows, cog, p, 1.0, wg, (1, rows), dyg, (p, 1), 0.0, cols, (p, 1));
                    self.col2im(cols, g * cg, dxb);
                }
            }
        });
        dx
    }

    /// Gradient with respect to the weights.
    pub fn backward_weight(&self, dy: &[f64], x: &[f64]) -> Vec<f64> {
        if self.is_depthwise() {
            return self.depthwise_backward_weight(dy, x);
        }
        let rows = self.cols_rows();
        let p = self.out_positions();
        let cog = self.c_out / self.groups;
        let cg = self.c_in / self.groups;
        let in_len = self.c_in * self.in_positions();
        let out_len = self.c_out * p;
        let mut dw = vec![0.0; self.weight_len()];
        with_scratch(rows * p, |cols| {
            for bi in 0..self.batch {
                let xb = &x[bi * in_len..(bi + 1) * in_len];
                let dyb = &dy[bi * out_len..(bi + 1) * out_len];
                for g in 0..self.groups {
                    let src: &[f64] = if self.is_pointwise() {
                        &xb[g * cg * p..(g + 1) * cg * p]
                    } else {
                        self.im2col(xb, g * cg, cols);
                        cols
                    };
                    let dyg = &dyb[g * cog * p..(g + 1) * cog * p];
                    let dwg = &mut dw[g * cog * rows..(g + 1) * cog * rows];
                    // dWg += dYg · colsᵀ
                    gemm(cog, p, rows, 1.0, dyg, (p, 1), src, (1, p), 1.0, dwg, (rows, 1));
                }
            }
        });
        dw
    }

    fn depthwise_forward(&self, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
        let (ip, op, taps) = (self.in_positions(), self.out_positions(), self.cols_rows());
        let sw = self.stride[2];
        let mut y = vec![0.0; self.output_len()];
        for (plane, (yp, xp)) in y.chunks_exact_mut(op).zip(x.chunks_exact(ip)).enumerate() {
            let c = plane % self.c_out;
            let wc = &w[c * taps..(c + 1) * taps];
            if let Some(bias) = bias {
                yp.fill(bias[c]);
            }
            self.for_each_run(|tap, o, i, n| {
                let k = wc[tap];
                let out = &mut yp[o..o + n];
                if sw == 1 {
                    out.iter_mut().zip(&xp[i..i + n]).for_each(|(v, x)| *v += k * x);
                } else {
                    out.iter_mut().enumerate().for_each(|(j, v)| *v += k * xp[i + j * sw]);
                }
            });
        }
        y
    }

    fn depthwise_backward_data(&self, dy: &[f64], w: &[f64]) -> Vec<f64> {
        let (ip, op, taps) = (self.in_positions(), self.out_positions(), self.cols_rows());
        let sw = self.stride[2];
        let mut dx = vec![0.0; self.input_len()];
        for (plane, (dxp, dyp)) in dx.chunks_exact_mut(ip).zip(dy.chunks_exact(op)).enumerate() {
            let wc = &w[(plane % self.c_out) * taps..];
            self.for_each_run(|tap, o, i, n| {
                let k = wc[tap];
                let g = &dyp[o..o + n];
                if sw == 1 {
                    dxp[i..i + n].iter_mut().zip(g).for_each(|(v, g)| *v += k * g);
                } else {
                    g.iter().enumerate().for_each(|(j, g)| dxp[i + j * sw] += k * g);
                }
            });
        }
        dx
    }

    fn depthwise_backward_weight(&self, dy: &[f64], x: &[f64]) -> Vec<f64> {
        let (ip, op, taps) = (self.in_positions(), self.out_positions(), self.cols_rows());
        let sw = self.stride[2];
        let mut dw = vec![0.0; self.weight_len()];
        for (plane, (xp, dyp)) in x.chunks_exact(ip).zip(dy.chunks_exact(op)).enumerate() {
            let dwc = &mut dw[(plane % self.c_out) * taps..(plane % self.c_out + 1) * taps];
            self.for_each_run(|tap, o, i, n| {
                let g = &dyp[o..o + n];
                dwc[tap] += if sw == 1 {
                    g.iter().zip(&xp[i..i + n]).map(|(g, x)| g * x).sum::<f64>()
                } else {
                    g.iter().enumerate().map(|(j, g)| g * xp[i + j * sw]).sum::<f64>()
                };
            });
        }
        dw
    }

    /// Per-channel sum of `dy` (bias gradient).
    pub fn backward_bias(&self, dy: &[f64]) -> Vec<f64> {
        let p = self.out_positions();
        let mut db = vec![0.0; self.c_out];
        for chunk in dy.chunks_exact(self.c_out * p) {
            for (c, plane) in chunk.chunks_exact(p).enumerate() {
                db[c] += plane.iter().sum::<f64>();
            }
        }
        db
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_matches_manual_transpose() {
        let data: Vec<f64> = (0..6).map(f64::from).collect();
        let (out, shape) = permute(&data, &[2, 3], &[1, 0]);
        assert_eq!(shape, vec![3, 2]);
        assert_eq!(out, vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }

    #[test]
    fn permute_roundtrip_rank4() {
        let shape = [2, 3, 4, 5];
        let data: Vec<f64> = (0..120).map(f64::from).collect();
        let perm = [2, 0, 3, 1];
        let (p, ps) = permute(&data, &shape, &perm);
        let (back, bs) = permute(&p, &ps, &inverse_permutation(&perm));
        assert_eq!(bs, shape.to_vec());
        assert_eq!(back, data);
    }

    #[test]
    fn gemm_transposed_strides() {
        // A = [[1,2],[3,4]], B = Aᵀ via strides → A·Aᵀ
        let a = [1.0, 2.0, 3.0, 4.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, 1.0, &a, (2, 1), &a, (1, 2), 0.0, &mut c, (2, 1));
        assert_eq!(c, [5.0, 11.0, 11.0, 25.0]);
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_191_990_607_477_2).abs() < 1e-12);
        let h = 1e-6;
        for &x in &[-2.0, -0.3, 0.0, 0.7, 3.0] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
