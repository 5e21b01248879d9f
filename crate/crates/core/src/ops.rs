//! Differentiable operations recorded on a [`Tape`].

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tape::{Node, Op, Tape, Var};

/// Stride/padding/groups for [`Tape::conv2d`] and [`Tape::conv3d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvOptions {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for ConvOptions {
    fn default() -> Self {
        ConvOptions {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl ConvOptions {
    pub fn new(stride: usize, padding: usize) -> Self {
        ConvOptions {
            stride,
            padding,
            groups: 1,
        }
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

impl Tape {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(sa)
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (ad, bd) = (self.data(a), self.data(b));
        ad.iter().zip(bd.iter()).map(|(&x, &y)| f(x, y)).collect()
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("add", a, b)?;
        let data = self.zip_map(a, b, |x, y| x + y);
        self.push("add", shape, data, &[a, b], || Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("sub", a, b)?;
        let data = self.zip_map(a, b, |x, y| x - y);
        self.push("sub", shape, data, &[a, b], || Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("mul", a, b)?;
        let data = self.zip_map(a, b, |x, y| x * y);
        self.push("mul", shape, data, &[a, b], || Op::Mul(a, b))
    }

    pub fn scale(&self, x: Var, s: f64) -> Result<Var> {
        let data: Vec<f64> = self.data(x).iter().map(|v| v * s).collect();
        self.push("scale", self.shape(x), data, &[x], || Op::Scale(x, s))
    }

    fn suffix_len(&self, op: &'static str, x: Var, b: Var) -> Result<usize> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sb.len() > sx.len() || sx[sx.len() - sb.len()..] != sb[..] {
            return Err(Error::shape(
                op,
                format!("{sb:?} is not a trailing sub-shape of {sx:?}"),
            ));
        }
        Ok(sb.iter().product())
    }

    /// `x + b` where `b`'s shape is a suffix of `x`'s (e.g. a bias row).
    pub fn add_broadcast(&self, x: Var, b: Var) -> Result<Var> {
        let m = self.suffix_len("add_broadcast", x, b)?;
        let bd = self.data(b);
        let data: Vec<f64> = self
            .data(x)
            .chunks_exact(m)
            .flat_map(|c| c.iter().zip(bd.iter()).map(|(v, w)| v + w))
            .collect();
        self.push("add_broadcast", self.shape(x), data, &[x, b], || Op::AddBroadcast { x, b })
    }

    /// `x ⊙ b` where `b`'s shape is a suffix of `x`'s.
    pub fn mul_broadcast(&self, x: Var, b: Var) -> Result<Var> {
        let m = self.suffix_len("mul_broadcast", x, b)?;
        let bd = self.data(b);
        let data: Vec<f64> = self
            .data(x)
            .chunks_exact(m)
            .flat_map(|c| c.iter().zip(bd.iter()).map(|(v, w)| v * w))
            .collect();
        self.push("mul_broadcast", self.shape(x), data, &[x, b], || Op::MulBroadcast { x, b })
    }

    pub fn sum(&self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().sum();
        self.push("sum", vec![1], vec![s], &[x], || Op::Sum(x))
    }

    pub fn mean(&self, x: Var) -> Result<Var> {
        let n = self.data(x).len() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Sums out `axis`, dropping it from the shape (a rank-1 input becomes `[1]`).
    pub fn sum_axis(&self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x);
        if axis >= shape.len() {
            return Err(Error::shape("sum_axis", format!("axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xd = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for l in 0..len {
                let src = &xd[(o * len + l) * inner..(o * len + l + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
            }
        }
        let mut new_shape: Vec<usize> = shape.clone();
        new_shape.remove(axis);
        if new_shape.is_empty() {
            new_shape.push(1);
        }
        self.push("sum_axis", new_shape, out, &[x], || Op::SumAxis { x, axis })
    }

    /// Stacks `n` copies of a `[1, D]` (or `[D]`) row into `[n, D]`.
    pub fn repeat_rows(&self, x: Var, n: usize) -> Result<Var> {
        if n == 0 {
            return Err(Error::Usage("repeat_rows needs n >= 1".into()));
        }
        let shape = self.shape(x);
        let d = *shape.last().expect("non-empty");
        if shape.iter().product::<usize>() != d {
            return Err(Error::shape("repeat_rows", format!("expected a single row, got {shape:?}")));
        }
        let xd = self.data(x);
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend_from_slice(&xd);
        }
        self.push("repeat_rows", vec![n, d], data, &[x], || Op::RepeatRows { x })
    }

    /// Matrix product. `a` is `[.., m, k]`; `b` is either a shared `[k, n]`
    /// matrix or a batch `[B, k, n]` matching `a = [B, m, k]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` with `b` given as `[.., n, k]`.
    pub fn matmul_nt(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let plan = MatmulPlan::new(&sa, &sb, trans_b)?;
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = vec![0.0; plan.batch * plan.m * plan.n];
        self.add_macs(plan.batch * plan.m * plan.k * plan.n);
        let (k, n) = (plan.k, plan.n);
        let b_strides = if trans_b { (1, k) } else { (n, 1) };
        for bi in 0..plan.batch {
            let a_off = bi * plan.m * k;
            let b_off = if plan.batched { bi * k * n } else { 0 };
            let c_off = bi * plan.m * n;
            kernels::gemm(
                plan.m,
                k,
                n,
                1.0,
                &ad[a_off..],
                (k, 1),
                &bd[b_off..],
                b_strides,
                0.0,
                &mut out[c_off..c_off + plan.m * n],
                (n, 1),
            );
        }
        let mut shape = sa.clone();
        *shape.last_mut().expect("rank >= 2") = n;
        self.push("matmul", shape, out, &[a, b], || Op::MatMul { a, b, trans_b })
    }

    /// `x · w + b` over the last axis of `x`; `w` is `[in, out]`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_broadcast(y, b),
            None => Ok(y),
        }
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let old = self.shape(x);
        if shape.iter().product::<usize>() != old.iter().product::<usize>() || shape.contains(&0) {
            return Err(Error::shape("reshape", format!("cannot reshape {old:?} to {shape:?}")));
        }
        // Contiguous storage: the new node shares the parent's buffer.
        self.push("reshape", shape.to_vec(), self.data(x), &[x], || Op::Reshape(x))
    }

    pub fn permute(&self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", format!("{perm:?} is not a permutation of {} axes", shape.len())));
        }
        let (data, new_shape) = kernels::permute(&self.data(x), &shape, perm);
        let perm = perm.to_vec();
        self.push("permute", new_shape, data, &[x], || Op::Permute { x, perm })
    }

    /// Swaps the last two axes.
    pub fn transpose(&self, x: Var) -> Result<Var> {
        let rank = self.shape(x).len();
        if rank < 2 {
            return Err(Error::shape("transpose", "need rank >= 2"));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(x, &perm)
    }

    pub fn concat(&self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*xs.first().ok_or_else(|| Error::Usage("concat of nothing".into()))?);
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{s:?} vs {first:?} along axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        let datas: Vec<_> = xs.iter().map(|&x| (self.data(x), self.shape(x)[axis] * inner)).collect();
        for o in 0..outer {
            for (d, width) in &datas {
                out.extend_from_slice(&d[o * width..(o + 1) * width]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let xs_owned = xs.to_vec();
        self.push("concat", shape, out, xs, || Op::Concat { xs: xs_owned, axis })
    }

    /// Softmax over the last axis.
    pub fn softmax(&self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        let n = *shape.last().expect("non-empty shape");
        let data = kernels::softmax_rows(&self.data(x), n);
        self.push("softmax", shape, data, &[x], || Op::Softmax(x))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x);
        let d = *shape.last().expect("non-empty shape");
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape(
                "layer_norm",
                format!("gamma/beta must be [{d}], got {:?}/{:?}", self.shape(gamma), self.shape(beta)),
            ));
        }
        let (y, stats) = kernels::layer_norm_rows(&self.data(x), &self.data(gamma), &self.data(beta), eps);
        self.push("layer_norm", shape, y, &[x, gamma, beta], || Op::LayerNorm { x, gamma, beta, stats })
    }

    pub fn gelu(&self, x: Var) -> Result<Var> {
        let data: Vec<f64> = self.data(x).iter().map(|&v| kernels::gelu(v)).collect();
        self.push("gelu", self.shape(x), data, &[x], || Op::Gelu(x))
    }

    /// 2-D cross-correlation. `x` is `[C, H, W]` or `[B, C, H, W]`; `w` is
    /// `[C_out, C_in / groups, kh, kw]`; `b` is `[C_out]`.
    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, opts: ConvOptions) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if ws.len() != 4 || !(xs.len() == 3 || xs.len() == 4) {
            return Err(Error::shape("conv2d", format!("input {xs:?}, weight {ws:?}")));
        }
        let batched = xs.len() == 4;
        let (batch, c, h, wd) = if batched { (xs[0], xs[1], xs[2], xs[3]) } else { (1, xs[0], xs[1], xs[2]) };
        let geom = conv_geom(
            "conv2d",
            batch,
            c,
            [1, h, wd],
            ws[0],
            ws[1],
            [1, ws[2], ws[3]],
            [1, opts.stride, opts.stride],
            [0, opts.padding, opts.padding],
            opts.groups,
        )?;
        let [_, oh, ow] = geom.output;
        let shape = if batched { vec![batch, geom.c_out, oh, ow] } else { vec![geom.c_out, oh, ow] };
        self.conv_push("conv2d", x, w, b, geom, shape)
    }

    /// 3-D cross-correlation over `(depth, height, width)`. `x` is
    /// `[C, D, H, W]` or `[B, C, D, H, W]`; `w` is `[C_out, C_in / groups, kd, kh, kw]`.
    pub fn conv3d(&self, x: Var, w: Var, b: Option<Var>, opts: ConvOptions) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if ws.len() != 5 || !(xs.len() == 4 || xs.len() == 5) {
            return Err(Error::shape("conv3d", format!("input {xs:?}, weight {ws:?}")));
        }
        let batched = xs.len() == 5;
        let off = usize::from(batched);
        let batch = if batched { xs[0] } else { 1 };
        let geom = conv_geom(
            "conv3d",
            batch,
            xs[off],
            [xs[off + 1], xs[off + 2], xs[off + 3]],
            ws[0],
            ws[1],
            [ws[2], ws[3], ws[4]],
            [opts.stride; 3],
            [opts.padding; 3],
            opts.groups,
        )?;
        let [od, oh, ow] = geom.output;
        let shape = if batched {
            vec![batch, geom.c_out, od, oh, ow]
        } else {
            vec![geom.c_out, od, oh, ow]
        };
        self.conv_push("conv3d", x, w, b, geom, shape)
    }

    fn conv_push(&self, name: &'static str, x: Var, w: Var, b: Option<Var>, geom: ConvGeom, shape: Vec<usize>) -> Result<Var> {
        if let Some(b) = b {
            if self.shape(b) != [geom.c_out] {
                return Err(Error::shape(name, format!("bias must be [{}], got {:?}", geom.c_out, self.shape(b))));
            }
        }
        let bias = b.map(|b| self.data(b));
        let y = geom.forward(&self.data(x), &self.data(w), bias.as_deref().map(|v| v.as_slice()));
        self.add_macs(geom.macs());
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(name, shape, y, &inputs, || Op::Conv { x, w, b, geom })
    }

    /// 2-D transposed convolution (the adjoint of [`Tape::conv2d`]).
    /// `w` is `[C_in, C_out, kh, kw]`; output extent is `(H − 1)·stride − 2·padding + k`.
    pub fn conv_transpose2d(&self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if ws.len() != 4 || !(xs.len() == 3 || xs.len() == 4) {
            return Err(Error::shape("conv_transpose2d", format!("input {xs:?}, weight {ws:?}")));
        }
        let batched = xs.len() == 4;
        let (batch, c, h, wd) = if batched { (xs[0], xs[1], xs[2], xs[3]) } else { (1, xs[0], xs[1], xs[2]) };
        if c != ws[0] {
            return Err(Error::shape("conv_transpose2d", format!("input has {c} channels, weight expects {}", ws[0])));
        }
        let out_extent = |n: usize, k: usize| -> Result<usize> {
            ((n - 1) * stride + k)
                .checked_sub(2 * padding)
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::shape("conv_transpose2d", "padding larger than output"))
        };
        let (oh, ow) = (out_extent(h, ws[2])?, out_extent(wd, ws[3])?);
        // The equivalent forward convolution maps the output back onto `x`.
        let geom = conv_geom(
            "conv_transpose2d",
            batch,
            ws[1],
            [1, oh, ow],
            ws[0],
            ws[1],
            [1, ws[2], ws[3]],
            [1, stride, stride],
            [0, padding, padding],
            1,
        )?;
        if geom.output != [1, h, wd] {
            return Err(Error::shape("conv_transpose2d", format!("inconsistent geometry for input {xs:?}")));
        }
        let mut y = geom.backward_data(&self.data(x), &self.data(w));
        self.add_macs(geom.macs());
        if let Some(b) = b {
            if self.shape(b) != [ws[1]] {
                return Err(Error::shape("conv_transpose2d", format!("bias must be [{}]", ws[1])));
            }
            let bd = self.data(b);
            for chunk in y.chunks_exact_mut(ws[1] * oh * ow) {
                for (ci, plane) in chunk.chunks_exact_mut(oh * ow).enumerate() {
                    plane.iter_mut().for_each(|v| *v += bd[ci]);
                }
            }
        }
        let shape = if batched { vec![batch, ws[1], oh, ow] } else { vec![ws[1], oh, ow] };
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("conv_transpose2d", shape, y, &inputs, || Op::ConvTranspose { x, w, b, geom })
    }

    /// Mean smooth-L1 (Huber) distance between `pred` and `target`.
    pub fn smooth_l1(&self, pred: Var, target: Var, beta: f64) -> Result<Var> {
        self.same_shape("smooth_l1", pred, target)?;
        if beta <= 0.0 {
            return Err(Error::Config(format!("smooth_l1 beta must be positive, got {beta}")));
        }
        let d = self.zip_map(pred, target, |a, b| {
            let x = (a - b).abs();
            if x < beta {
                0.5 * x * x / beta
            } else {
                x - 0.5 * beta
            }
        });
        let loss = d.iter().sum::<f64>() / d.len() as f64;
        self.push("smooth_l1", vec![1], vec![loss], &[pred, target], || Op::SmoothL1 { pred, target, beta })
    }

    /// Mean squared difference.
    pub fn mse(&self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean(sq)
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_geom(
    op: &'static str,
    batch: usize,
    c_in: usize,
    input: [usize; 3],
    c_out: usize,
    w_cin: usize,
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
    groups: usize,
) -> Result<ConvGeom> {
    if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
        return Err(Error::shape(op, format!("groups {groups} must divide {c_in} input and {c_out} output channels")));
    }
    if w_cin * groups != c_in {
        return Err(Error::shape(op, format!("weight expects {} input channels, input has {c_in}", w_cin * groups)));
    }
    let mut output = [0; 3];
    for i in 0..3 {
        output[i] = ConvGeom::out_extent(input[i], kernel[i], stride[i], padding[i]).ok_or_else(|| {
            Error::shape(
                op,
                format!("kernel {:?} larger than padded input {:?} (padding {:?})", kernel, input, padding),
            )
        })?;
    }
    Ok(ConvGeom {
        batch,
        c_in,
        c_out,
        groups,
        input,
        kernel,
        stride,
        padding,
        output,
    })
}

struct MatmulPlan {
    batch: usize,
    batched: bool,
    m: usize,
    k: usize,
    n: usize,
}

impl MatmulPlan {
    fn new(sa: &[usize], sb: &[usize], trans_b: bool) -> Result<Self> {
        let err = || Error::shape("matmul", format!("{sa:?} x {sb:?}{}", if trans_b { "ᵀ" } else { "" }));
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (bk, bn) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        let k = sa[sa.len() - 1];
        if k != bk {
            return Err(err());
        }
        match sb.len() {
            2 => Ok(MatmulPlan {
                batch: 1,
                batched: false,
                m: sa[..sa.len() - 1].iter().product(),
                k,
                n: bn,
            }),
            3 if sa.len() == 3 && sa[0] == sb[0] => Ok(MatmulPlan {
                batch: sa[0],
                batched: true,
                m: sa[1],
                k,
                n: bn,
            }),
            _ => Err(err()),
        }
    }
}

/// Gradients of `C = A·B` (or `A·Bᵀ`) for whichever inputs track them.
pub(crate) fn matmul_backward(
    nodes: &[Node],
    a: Var,
    b: Var,
    trans_b: bool,
    g: &[f64],
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (na, nb) = (&nodes[a.0], &nodes[b.0]);
    let plan = MatmulPlan::new(&na.shape, &nb.shape, trans_b).expect("validated in forward");
    let (m, k, n) = (plan.m, plan.k, plan.n);
    let ga = na.requires_grad.then(|| {
        let mut ga = vec![0.0; na.data.len()];
        // dA = dC · Bᵀ   (or dC · B when B was transposed)
        let b_strides = if trans_b { (k, 1) } else { (1, n) };
        for bi in 0..plan.batch {
            let b_off = if plan.batched { bi * k * n } else { 0 };
            kernels::gemm(
                m,
                n,
                k,
                1.0,
                &g[bi * m * n..],
                (n, 1),
                &nb.data[b_off..],
                b_strides,
                0.0,
                &mut ga[bi * m * k..(bi + 1) * m * k],
                (k, 1),
            );
        }
        ga
    });
    let gb = nb.requires_grad.then(|| {
        let mut gb = vec![0.0; nb.data.len()];
        for bi in 0..plan.batch {
            let b_off = if plan.batched { bi * k * n } else { 0 };
            let beta = if plan.batched || bi == 0 { 0.0 } else { 1.0 };
            if trans_b {
                // dB[n×k] = dCᵀ · A
                kernels::gemm(
                    n,
                    m,
                    k,
                    1.0,
                    &g[bi * m * n..],
                    (1, n),
                    &na.data[bi * m * k..],
                    (k, 1),
                    beta,
                    &mut gb[b_off..b_off + k * n],
                    (k, 1),
                );
            } else {
                // dB[k×n] = Aᵀ · dC
                kernels::gemm(
                    k,
                    m,
                    n,
                    1.0,
                    &na.data[bi * m * k..],
                    (1, k),
                    &g[bi * m * n..],
                    (n, 1),
                    beta,
                    &mut gb[b_off..b_off + k * n],
                    (n, 1),
                );
            }
        }
        gb
    });
    (ga, gb)
}
