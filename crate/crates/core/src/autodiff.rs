//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] is an append-only arena of nodes. Every operation records its
//! result together with the ids of its inputs, so node order is already a
//! topological order and the backward pass is a single reverse sweep. The
//! vector-Jacobian product of each operation lives in [`Tape::backward`].
//!
//! Spikes are recorded with [`Tape::spike`]: the forward value is a hard
//! threshold, the backward pass uses the exponential surrogate derivative.
//! In [`SpikeMode::Soft`] the threshold is replaced by a sigmoid and the
//! backward pass becomes its exact derivative, which makes whole-network
//! gradients checkable against finite differences.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::AutodiffError;
use crate::math;
use crate::tensor::{Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SpikeMode {
    /// Binary forward, surrogate backward.
    #[default]
    Hard,
    /// Sigmoid forward with exact backward.
    Soft,
}

/// Threshold and surrogate-derivative constants for [`Tape::spike`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogateParams {
    pub theta: f64,
    /// Width of the exponential surrogate.
    pub tau: f64,
    /// Height of the surrogate at the threshold.
    pub scale: f64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        SurrogateParams { theta: 10.0, tau: 1.0, scale: 1.0 }
    }
}

impl SurrogateParams {
    /// `scale * exp(-|u - theta| / tau)`.
    pub fn derivative(&self, u: f64) -> f64 {
        self.scale * math::exp(-math::abs(u - self.theta) / self.tau)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    MatVec(Var, Var),
    MatMat(Var, Var),
    Outer(Var, Var),
    ScaleBy(Var, Var),
    Affine { x: Var, mul: f64 },
    Exp(Var),
    Neg(Var),
    Sum(Var),
    Mean(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Log(Var),
    Sigmoid(Var),
    Transpose(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    WeightedSum(Vec<(Var, f64)>),
    Spike { u: Var, params: SurrogateParams, mode: SpikeMode },
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "hadamard",
            Op::Minimum(..) => "minimum",
            Op::MatVec(..) => "mat-vec",
            Op::MatMat(..) => "mat-mat",
            Op::Outer(..) => "outer-product",
            Op::ScaleBy(..) => "scalar-scale",
            Op::Affine { .. } => "affine",
            Op::Exp(_) => "exp",
            Op::Neg(_) => "negate",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Clamp { .. } => "clamp",
            Op::Log(_) => "log",
            Op::Sigmoid(_) => "sigmoid",
            Op::Transpose(_) => "transpose",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::WeightedSum(_) => "weighted-sum",
            Op::Spike { .. } => "spike",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to every leaf that requires them.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when `var` is not a parameter leaf of the tape this came from.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

pub struct Tape {
    nodes: Vec<Node>,
    spike_mode: SpikeMode,
    check_finite: bool,
    backward_done: bool,
    rule_invocations: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

type Result<T> = core::result::Result<T, AutodiffError>;

fn shape_err(op: &'static str, shapes: &[Shape]) -> AutodiffError {
    AutodiffError::Shape { op, shapes: shapes.to_vec() }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            spike_mode: SpikeMode::Hard,
            check_finite: cfg!(debug_assertions),
            backward_done: false,
            rule_invocations: 0,
        }
    }

    pub fn with_spike_mode(mode: SpikeMode) -> Self {
        Tape { spike_mode: mode, ..Self::new() }
    }

    pub fn spike_mode(&self) -> SpikeMode {
        self.spike_mode
    }

    pub fn set_spike_mode(&mut self, mode: SpikeMode) {
        self.spike_mode = mode;
    }

    /// Reject non-finite values at record time. On by default in debug builds.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of backward rules run by the last [`Tape::backward`] call.
    pub fn rule_invocations(&self) -> usize {
        self.rule_invocations
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: op.kind() });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, &[sa, sb]));
        }
        Ok(sa)
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let shape = self.same_shape(op.kind(), a, b)?;
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let data = x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect();
        self.push(Tensor::new(shape, data), op, &[a, b])
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let value = self.value(x).map(f);
        self.push(value, op, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), |p, q| p - q)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), |p, q| p * q)
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Minimum(a, b), f64::min)
    }

    pub fn mat_vec(&mut self, m: Var, v: Var) -> Result<Var> {
        let (sm, sv) = (self.shape(m), self.shape(v));
        if !sm.is_matrix() || !sv.is_vector() || sm.cols() != sv.rows() {
            return Err(shape_err("mat-vec", &[sm, sv]));
        }
        let (rows, cols) = (sm.rows(), sm.cols());
        let (md, vd) = (self.value(m).data(), self.value(v).data());
        let data = (0..rows)
            .map(|i| md[i * cols..(i + 1) * cols].iter().zip(vd).map(|(a, b)| a * b).sum())
            .collect();
        self.push(Tensor::vector(data), Op::MatVec(m, v), &[m, v])
    }

    pub fn mat_mat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !sa.is_matrix() || !sb.is_matrix() || sa.cols() != sb.rows() {
            return Err(shape_err("mat-mat", &[sa, sb]));
        }
        let (r, k, c) = (sa.rows(), sa.cols(), sb.cols());
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for p in 0..k {
                let av = ad[i * k + p];
                if av == 0.0 {
                    continue;
                }
                for j in 0..c {
                    data[i * c + j] += av * bd[p * c + j];
                }
            }
        }
        self.push(Tensor::matrix(r, c, data), Op::MatMat(a, b), &[a, b])
    }

    /// `a ⊗ b`, a matrix with `a.len()` rows and `b.len()` columns.
    pub fn outer(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !sa.is_vector() || !sb.is_vector() {
            return Err(shape_err("outer-product", &[sa, sb]));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(ad.len() * bd.len());
        for &x in ad {
            data.extend(bd.iter().map(|&y| x * y));
        }
        let t = Tensor::matrix(ad.len(), bd.len(), data);
        self.push(t, Op::Outer(a, b), &[a, b])
    }

    /// `s * x` for a single-element node `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let ss = self.shape(s);
        if ss.numel() != 1 {
            return Err(shape_err("scalar-scale", &[self.shape(x), ss]));
        }
        let k = self.value(s).item();
        let value = self.value(x).map(|v| k * v);
        self.push(value, Op::ScaleBy(x, s), &[x, s])
    }

    /// `mul * x + add` with constant coefficients.
    pub fn affine(&mut self, x: Var, mul: f64, add: f64) -> Result<Var> {
        self.unary(x, Op::Affine { x, mul }, |v| mul * v + add)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        self.affine(x, k, 0.0)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Exp(x), math::exp)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Neg(x), |v| -v)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Log(x), math::ln)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), math::sigmoid)
    }

    /// Gradient passes where `lo < x < hi`, zero elsewhere.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(x, Op::Clamp { x, lo, hi }, |v| v.clamp(lo, hi))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(shape_err("mean", &[t.shape()]));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if !s.is_matrix() {
            return Err(shape_err("transpose", &[s]));
        }
        let (r, c) = (s.rows(), s.cols());
        let d = self.value(x).data();
        let data = (0..r * c).map(|i| d[(i % r) * c + i / r]).collect();
        self.push(Tensor::matrix(c, r, data), Op::Transpose(x), &[x])
    }

    /// Flattens and concatenates into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat", &[]));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), parts)
    }

    /// `len` consecutive elements of the flattened `x`, as a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if start + len > s.numel() || len == 0 {
            return Err(shape_err("slice", &[s, Shape::vector(start + len)]));
        }
        let data = self.value(x).data()[start..start + len].to_vec();
        self.push(Tensor::vector(data), Op::Slice { x, start }, &[x])
    }

    /// `Σ_i w_i · x_i` over same-shaped nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let Some(&(first, _)) = terms.first() else {
            return Err(shape_err("weighted-sum", &[]));
        };
        let shape = self.shape(first);
        let mut data = vec![0.0; shape.numel()];
        for &(v, w) in terms {
            let t = self.value(v);
            if t.shape() != shape {
                return Err(shape_err("weighted-sum", &[shape, t.shape()]));
            }
            if w == 0.0 {
                continue;
            }
            for (d, x) in data.iter_mut().zip(t.data()) {
                *d += w * x;
            }
        }
        let parents: Vec<Var> = terms.iter().map(|t| t.0).collect();
        self.push(Tensor::new(shape, data), Op::WeightedSum(terms.to_vec()), &parents)
    }

    /// Threshold spikes of a membrane-potential vector; see [`SpikeMode`].
    pub fn spike(&mut self, u: Var, params: SurrogateParams) -> Result<Var> {
        let s = self.shape(u);
        if !s.is_vector() {
            return Err(shape_err("spike", &[s]));
        }
        if !(params.theta > 0.0) || !(params.tau > 0.0) {
            return Err(AutodiffError::InvalidAttr { op: "spike" });
        }
        let mode = self.spike_mode;
        let value = match mode {
            SpikeMode::Hard => {
                self.value(u).map(|v| if v >= params.theta { 1.0 } else { 0.0 })
            }
            SpikeMode::Soft => {
                self.value(u).map(|v| math::sigmoid((v - params.theta) / params.tau))
            }
        };
        self.push(value, Op::Spike { u, params, mode }, &[u])
    }

    /// Clears the backward-done flag so the tape may be differentiated again.
    pub fn zero_grad(&mut self) {
        self.backward_done = false;
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Gradients accumulate additively into every parameter leaf. Calling this
    /// twice without [`Tape::zero_grad`] in between is an error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(AutodiffError::BackwardTwice);
        }
        if loss.0 >= self.nodes.len() {
            return Err(AutodiffError::UnknownVar(loss.0));
        }
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(ls));
        }
        self.backward_done = true;
        self.rule_invocations = 0;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            if let Op::Leaf = node.op {
                leaf_grads[i] = Some(Tensor::new(node.value.shape(), g));
                continue;
            }
            self.rule_invocations += 1;
            Self::apply_rule(&self.nodes, i, &g, &mut grads);
        }

        // Parameters that the loss does not depend on get explicit zeros.
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && leaf_grads[i].is_none() {
                leaf_grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }

    fn apply_rule(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &nodes[i];
        let val = |v: Var| nodes[v.0].value.data();
        let wants = |v: Var| nodes[v.0].requires_grad;
        let acc = |v: Var, grads: &mut [Option<Vec<f64>>], f: &mut dyn FnMut(&mut [f64])| {
            if wants(v) {
                let n = nodes[v.0].value.len();
                f(grads[v.0].get_or_insert_with(|| vec![0.0; n]));
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, grads, &mut |ga| add_into(ga, g));
                acc(*b, grads, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, grads, &mut |ga| add_into(ga, g));
                acc(*b, grads, &mut |gb| {
                    for (x, y) in gb.iter_mut().zip(g) {
                        *x -= y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, grads, &mut |ga| {
                    for ((x, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                        *x += gi * bi;
                    }
                });
                acc(*b, grads, &mut |gb| {
                    for ((x, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                        *x += gi * ai;
                    }
                });
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, grads, &mut |ga| {
                    for k in 0..ga.len() {
                        if av[k] <= bv[k] {
                            ga[k] += g[k];
                        }
                    }
                });
                acc(*b, grads, &mut |gb| {
                    for k in 0..gb.len() {
                        if av[k] > bv[k] {
                            gb[k] += g[k];
                        }
                    }
                });
            }
            Op::MatVec(m, v) => {
                let cols = nodes[m.0].value.shape().cols();
                let (md, vd) = (val(*m), val(*v));
                acc(*m, grads, &mut |gm| {
                    for (r, &gr) in g.iter().enumerate() {
                        if gr == 0.0 {
                            continue;
                        }
                        for (x, vj) in gm[r * cols..(r + 1) * cols].iter_mut().zip(vd) {
                            *x += gr * vj;
                        }
                    }
                });
                acc(*v, grads, &mut |gv| {
                    for (r, &gr) in g.iter().enumerate() {
                        if gr == 0.0 {
                            continue;
                        }
                        for (x, mrj) in gv.iter_mut().zip(&md[r * cols..(r + 1) * cols]) {
                            *x += gr * mrj;
                        }
                    }
                });
            }
            Op::MatMat(a, b) => {
                let sa = nodes[a.0].value.shape();
                let (r, k) = (sa.rows(), sa.cols());
                let c = nodes[b.0].value.shape().cols();
                let (ad, bd) = (val(*a), val(*b));
                acc(*a, grads, &mut |ga| {
                    for i in 0..r {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..c {
                                s += g[i * c + j] * bd[p * c + j];
                            }
                            ga[i * k + p] += s;
                        }
                    }
                });
                acc(*b, grads, &mut |gb| {
                    for i in 0..r {
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            for j in 0..c {
                                gb[p * c + j] += aip * g[i * c + j];
                            }
                        }
                    }
                });
            }
            Op::Outer(a, b) => {
                let (ad, bd) = (val(*a), val(*b));
                let c = bd.len();
                acc(*a, grads, &mut |ga| {
                    for (i, x) in ga.iter_mut().enumerate() {
                        *x += g[i * c..(i + 1) * c].iter().zip(bd).map(|(p, q)| p * q).sum::<f64>();
                    }
                });
                acc(*b, grads, &mut |gb| {
                    for (i, ai) in ad.iter().enumerate() {
                        if *ai == 0.0 {
                            continue;
                        }
                        for (x, gij) in gb.iter_mut().zip(&g[i * c..(i + 1) * c]) {
                            *x += ai * gij;
                        }
                    }
                });
            }
            Op::ScaleBy(x, s) => {
                let k = val(*s)[0];
                let xd = val(*x);
                acc(*x, grads, &mut |gx| {
                    for (a, gi) in gx.iter_mut().zip(g) {
                        *a += k * gi;
                    }
                });
                acc(*s, grads, &mut |gs| {
                    gs[0] += g.iter().zip(xd).map(|(p, q)| p * q).sum::<f64>();
                });
            }
            Op::Affine { x, mul } => {
                acc(*x, grads, &mut |gx| {
                    for (a, gi) in gx.iter_mut().zip(g) {
                        *a += mul * gi;
                    }
                });
            }
            Op::Exp(x) => {
                let out = node.value.data();
                acc(*x, grads, &mut |gx| {
                    for ((a, gi), o) in gx.iter_mut().zip(g).zip(out) {
                        *a += gi * o;
                    }
                });
            }
            Op::Neg(x) => {
                acc(*x, grads, &mut |gx| {
                    for (a, gi) in gx.iter_mut().zip(g) {
                        *a -= gi;
                    }
                });
            }
            Op::Sum(x) => {
                acc(*x, grads, &mut |gx| {
                    for a in gx.iter_mut() {
                        *a += g[0];
                    }
                });
            }
            Op::Mean(x) => {
                acc(*x, grads, &mut |gx| {
                    let k = g[0] / gx.len() as f64;
                    for a in gx.iter_mut() {
                        *a += k;
                    }
                });
            }
            Op::Clamp { x, lo, hi } => {
                let xd = val(*x);
                acc(*x, grads, &mut |gx| {
                    for ((a, gi), xi) in gx.iter_mut().zip(g).zip(xd) {
                        if *xi > *lo && *xi < *hi {
                            *a += gi;
                        }
                    }
                });
            }
            Op::Log(x) => {
                let xd = val(*x);
                acc(*x, grads, &mut |gx| {
                    for ((a, gi), xi) in gx.iter_mut().zip(g).zip(xd) {
                        *a += gi / xi;
                    }
                });
            }
            Op::Sigmoid(x) => {
                let out = node.value.data();
                acc(*x, grads, &mut |gx| {
                    for ((a, gi), o) in gx.iter_mut().zip(g).zip(out) {
                        *a += gi * o * (1.0 - o);
                    }
                });
            }
            Op::Transpose(x) => {
                // node value is c × r; parent is r × c
                let s = nodes[x.0].value.shape();
                let (r, c) = (s.rows(), s.cols());
                acc(*x, grads, &mut |gx| {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = nodes[p.0].value.len();
                    acc(p, grads, &mut |gp| add_into(gp, &g[off..off + n]));
                    off += n;
                }
            }
            Op::Slice { x, start } => {
                let start = *start;
                acc(*x, grads, &mut |gx| add_into(&mut gx[start..start + g.len()], g));
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    if w == 0.0 {
                        continue;
                    }
                    acc(v, grads, &mut |gv| {
                        for (a, gi) in gv.iter_mut().zip(g) {
                            *a += w * gi;
                        }
                    });
                }
            }
            Op::Spike { u, params, mode } => {
                let ud = val(*u);
                let out = node.value.data();
                acc(*u, grads, &mut |gu| match mode {
                    SpikeMode::Hard => {
                        for ((a, gi), ui) in gu.iter_mut().zip(g).zip(ud) {
                            if *gi != 0.0 {
                                *a += gi * params.derivative(*ui);
                            }
                        }
                    }
                    SpikeMode::Soft => {
                        for ((a, gi), o) in gu.iter_mut().zip(g).zip(out) {
                            *a += gi * o * (1.0 - o) / params.tau;
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
