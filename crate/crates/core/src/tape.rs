//! Reverse-mode automatic differentiation.
//!
//! Every operation on a [`Tape`] appends a node holding its output value
//! and, when any input tracks gradients, the rule needed to push a
//! gradient back to its inputs. [`Tape::backward`] replays the nodes in
//! reverse order. Handles to nodes are plain indices ([`Var`]), so the
//! tape is used through `&self` and operations nest freely.

use std::cell::{Cell, Ref, RefCell};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom, NormStats};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub data: Arc<Vec<f64>>,
    pub requires_grad: bool,
    pub op: Op,
}

/// Backward rule of a recorded node, with whatever it saved from the
/// forward pass.
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBroadcast { x: Var, b: Var },
    MulBroadcast { x: Var, b: Var },
    Sum(Var),
    SumAxis { x: Var, axis: usize },
    RepeatRows { x: Var },
    MatMul { a: Var, b: Var, trans_b: bool },
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Concat { xs: Vec<Var>, axis: usize },
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, stats: NormStats },
    Gelu(Var),
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    ConvTranspose { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    SmoothL1 { pred: Var, target: Var, beta: f64 },
}

/// Recorder for one forward pass.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grad_enabled: bool,
    macs: Cell<u64>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
            macs: Cell::new(0),
        }
    }

    /// A tape that never records backward rules; for inference.
    pub fn no_grad() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: false,
            macs: Cell::new(0),
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Multiply-accumulates performed by forward matmuls and convolutions so far.
    pub fn macs(&self) -> u64 {
        self.macs.get()
    }

    pub(crate) fn add_macs(&self, n: usize) {
        self.macs.set(self.macs.get() + n as u64);
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records `t`, tracking gradients if `t.requires_grad()`.
    pub fn leaf(&self, t: &Tensor) -> Var {
        self.insert(t, t.requires_grad() && self.grad_enabled)
    }

    /// Records `t` as a gradient-free input.
    pub fn constant(&self, t: &Tensor) -> Var {
        self.insert(t, false)
    }

    fn insert(&self, t: &Tensor, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape: t.shape().to_vec(),
            data: Arc::clone(t.shared_data()),
            requires_grad,
            op: Op::Leaf,
        });
        Var(nodes.len() - 1)
    }

    pub(crate) fn node(&self, v: Var) -> Ref<'_, Node> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0])
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.node(v).shape.clone()
    }

    pub(crate) fn data(&self, v: Var) -> Arc<Vec<f64>> {
        Arc::clone(&self.node(v).data)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Snapshot of a recorded value as a gradient-free tensor.
    pub fn value(&self, v: Var) -> Tensor {
        let node = self.node(v);
        Tensor::from_parts(node.shape.clone(), Arc::clone(&node.data))
    }

    pub fn item(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    /// Appends an op output. `inputs` decide gradient tracking; `op` is only
    /// built when some input tracks gradients.
    pub(crate) fn push(
        &self,
        name: &'static str,
        shape: Vec<usize>,
        data: impl Into<Arc<Vec<f64>>>,
        inputs: &[Var],
        op: impl FnOnce() -> Op,
    ) -> Result<Var> {
        let data: Arc<Vec<f64>> = data.into();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { op: name });
        }
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = self.grad_enabled && inputs.iter().any(|&v| self.requires_grad(v));
        let op = if requires_grad { op() } else { Op::Leaf };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            data,
            requires_grad,
            op,
        });
        Ok(Var(nodes.len() - 1))
    }

    /// Backpropagates from a single-element loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let n = self.node(loss).data.len();
        if n != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss or an explicit seed; got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_with_seed(loss, &[1.0])
    }

    /// Backpropagates an explicit output gradient `seed`.
    pub fn backward_with_seed(&self, output: Var, seed: &[f64]) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if seed.len() != nodes[output.0].data.len() {
            return Err(Error::shape(
                "backward",
                format!(
                    "seed has {} values, output has {}",
                    seed.len(),
                    nodes[output.0].data.len()
                ),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        if nodes[output.0].requires_grad {
            grads[output.0] = Some(seed.to_vec());
        }
        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !matches!(node.op, Op::Leaf) {
                propagate(&nodes, node, &g, &mut grads)?;
            }
            grads[id] = Some(g);
        }
        if grads.iter().flatten().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric { op: "backward" });
        }
        Ok(Gradients { grads })
    }
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros if no path reached it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, g: Vec<f64>) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn wants(nodes: &[Node], v: Var) -> bool {
    nodes[v.0].requires_grad
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.to_vec());
            accumulate(grads, nodes, *b, g.to_vec());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.to_vec());
            accumulate(grads, nodes, *b, g.iter().map(|v| -v).collect());
        }
        Op::Mul(a, b) => {
            let (ad, bd) = (&nodes[a.0].data, &nodes[b.0].data);
            if wants(nodes, *a) {
                accumulate(grads, nodes, *a, g.iter().zip(bd.iter()).map(|(g, y)| g * y).collect());
            }
            if wants(nodes, *b) {
                accumulate(grads, nodes, *b, g.iter().zip(ad.iter()).map(|(g, x)| g * x).collect());
            }
        }
        Op::Scale(x, s) => accumulate(grads, nodes, *x, g.iter().map(|v| v * s).collect()),
        Op::AddBroadcast { x, b } => {
            accumulate(grads, nodes, *x, g.to_vec());
            if wants(nodes, *b) {
                let m = nodes[b.0].data.len();
                let mut gb = vec![0.0; m];
                for chunk in g.chunks_exact(m) {
                    gb.iter_mut().zip(chunk).for_each(|(a, v)| *a += v);
                }
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::MulBroadcast { x, b } => {
            let (xd, bd) = (&nodes[x.0].data, &nodes[b.0].data);
            let m = bd.len();
            if wants(nodes, *x) {
                let gx = g
                    .chunks_exact(m)
                    .flat_map(|chunk| chunk.iter().zip(bd.iter()).map(|(g, s)| g * s))
                    .collect();
                accumulate(grads, nodes, *x, gx);
            }
            if wants(nodes, *b) {
                let mut gb = vec![0.0; m];
                for (gc, xc) in g.chunks_exact(m).zip(xd.chunks_exact(m)) {
                    for ((a, gv), xv) in gb.iter_mut().zip(gc).zip(xc) {
                        *a += gv * xv;
                    }
                }
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Sum(x) => {
            let n = nodes[x.0].data.len();
            accumulate(grads, nodes, *x, vec![g[0]; n]);
        }
        Op::SumAxis { x, axis } => {
            let shape = &nodes[x.0].shape;
            let outer: usize = shape[..*axis].iter().product();
            let len = shape[*axis];
            let inner: usize = shape[axis + 1..].iter().product();
            let mut gx = vec![0.0; outer * len * inner];
            for o in 0..outer {
                let src = &g[o * inner..(o + 1) * inner];
                for l in 0..len {
                    let off = (o * len + l) * inner;
                    gx[off..off + inner].copy_from_slice(src);
                }
            }
            accumulate(grads, nodes, *x, gx);
        }
        Op::RepeatRows { x } => {
            let d = nodes[x.0].data.len();
            let mut gx = vec![0.0; d];
            for row in g.chunks_exact(d) {
                gx.iter_mut().zip(row).for_each(|(a, v)| *a += v);
            }
            accumulate(grads, nodes, *x, gx);
        }
        Op::MatMul { a, b, trans_b } => {
            let (ga, gb) = crate::ops::matmul_backward(nodes, *a, *b, *trans_b, g);
            if let Some(ga) = ga {
                accumulate(grads, nodes, *a, ga);
            }
            if let Some(gb) = gb {
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Reshape(x) => accumulate(grads, nodes, *x, g.to_vec()),
        Op::Permute { x, perm } => {
            let inv = kernels::inverse_permutation(perm);
            let (gx, _) = kernels::permute(g, &node.shape, &inv);
            accumulate(grads, nodes, *x, gx);
        }
        Op::Concat { xs, axis } => {
            let outer: usize = node.shape[..*axis].iter().product();
            let inner: usize = node.shape[axis + 1..].iter().product();
            let total = node.shape[*axis] * inner;
            let mut offset = 0;
            for x in xs {
                let width = nodes[x.0].shape[*axis] * inner;
                if wants(nodes, *x) {
                    let mut gx = Vec::with_capacity(outer * width);
                    for o in 0..outer {
                        let start = o * total + offset;
                        gx.extend_from_slice(&g[start..start + width]);
                    }
                    accumulate(grads, nodes, *x, gx);
                }
                offset += width;
            }
        }
        Op::Softmax(x) => {
            let n = *node.shape.last().expect("non-empty shape");
            accumulate(grads, nodes, *x, kernels::softmax_rows_backward(&node.data, g, n));
        }
        Op::LayerNorm { x, gamma, beta, stats } => {
            let (dx, dgamma, dbeta) = kernels::layer_norm_rows_backward(g, &nodes[gamma.0].data, stats);
            accumulate(grads, nodes, *x, dx);
            accumulate(grads, nodes, *gamma, dgamma);
            accumulate(grads, nodes, *beta, dbeta);
        }
        Op::Gelu(x) => {
            let xd = &nodes[x.0].data;
            let gx = g.iter().zip(xd.iter()).map(|(g, &v)| g * kernels::gelu_grad(v)).collect();
            accumulate(grads, nodes, *x, gx);
        }
        Op::Conv { x, w, b, geom } => {
            if wants(nodes, *x) {
                accumulate(grads, nodes, *x, geom.backward_data(g, &nodes[w.0].data));
            }
            if wants(nodes, *w) {
                accumulate(grads, nodes, *w, geom.backward_weight(g, &nodes[x.0].data));
            }
            if let Some(b) = b {
                accumulate(grads, nodes, *b, geom.backward_bias(g));
            }
        }
        Op::ConvTranspose { x, w, b, geom } => {
            // `geom` describes the convolution whose input is this op's output.
            if wants(nodes, *x) {
                accumulate(grads, nodes, *x, geom.forward(g, &nodes[w.0].data, None));
            }
            if wants(nodes, *w) {
                accumulate(grads, nodes, *w, geom.backward_weight(&nodes[x.0].data, g));
            }
            if let Some(b) = b {
                let c = node.shape[node.shape.len() - 3];
                let plane: usize = node.shape[node.shape.len() - 2..].iter().product();
                let mut gb = vec![0.0; c];
                for chunk in g.chunks_exact(c * plane) {
                    for (ci, p) in chunk.chunks_exact(plane).enumerate() {
                        gb[ci] += p.iter().sum::<f64>();
                    }
                }
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::SmoothL1 { pred, target, beta } => {
            let (p, t) = (&nodes[pred.0].data, &nodes[target.0].data);
            let scale = g[0] / p.len() as f64;
            let d: Vec<f64> = p
                .iter()
                .zip(t.iter())
                .map(|(a, b)| {
                    let x = a - b;
                    scale * if x.abs() < *beta { x / beta } else { x.signum() }
                })
                .collect();
            if wants(nodes, *target) {
                accumulate(grads, nodes, *target, d.iter().map(|v| -v).collect());
            }
            accumulate(grads, nodes, *pred, d);
        }
    }
    Ok(())
}
