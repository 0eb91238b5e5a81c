//! Dynamic tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and enough
//! context to apply its vector-Jacobian product. Nodes are appended in
//! topological order, so a reverse sweep over the tape is a valid
//! reverse-topological traversal.

use super::kernels::{self, ConvGeom, MatmulPlan};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) const LAYERNORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, plan: MatmulPlan },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias { x: Var, bias: Var },
    AddConst(Var),
    MulConst { x: Var, factor: Vec<f64> },
    Scale(Var, f64),
    Reshape(Var),
    Permute { x: Var, axes: Vec<usize> },
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Gelu(Var),
    Conv1d { x: Var, kernel: Var, bias: Option<Var>, geom: ConvGeom, cols: Vec<f64> },
    MeanLast(Var),
    Sum(Var),
    MaskedSse { pred: Var, target: Vec<f64>, weights: Vec<f64>, scale: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Recording of a forward computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn trailing_broadcast(x: &[usize], c: &[usize]) -> bool {
    c.len() <= x.len() && x[x.len() - c.len()..] == *c
}

fn gelu(x: f64) -> (f64, f64) {
    const K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let inner = K * (x + A * x * x * x);
    let t = inner.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dinner = K * (1.0 + 3.0 * A * x * x);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
    (y, dy)
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let shape = self.shape(a).to_vec();
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor { shape, data }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let plan = MatmulPlan::new(self.shape(a), self.shape(b))?;
        let mut out = vec![0.0; plan.out_len()];
        plan.forward(self.data(a), self.data(b), &mut out);
        let value = Tensor {
            shape: plan.out_shape.clone(),
            data: out,
        };
        Ok(self.push(value, Op::MatMul { a, b, plan }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a vector along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap();
        if self.shape(bias) != [d] {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let b = self.data(bias).to_vec();
        let mut value = self.value(x).clone();
        for row in value.data.chunks_mut(d) {
            row.iter_mut().zip(&b).for_each(|(v, bi)| *v += bi);
        }
        Ok(self.push(value, Op::AddBias { x, bias }, &[x, bias]))
    }

    /// Adds a non-differentiable tensor whose shape matches the trailing axes of `x`.
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        if !trailing_broadcast(self.shape(x), c.shape()) {
            return Err(Error::Shape {
                op: "add_const",
                lhs: self.shape(x).to_vec(),
                rhs: c.shape().to_vec(),
            });
        }
        let mut value = self.value(x).clone();
        for chunk in value.data.chunks_mut(c.numel()) {
            chunk.iter_mut().zip(c.data()).for_each(|(v, ci)| *v += ci);
        }
        Ok(self.push(value, Op::AddConst(x), &[x]))
    }

    /// Multiplies by a non-differentiable tensor broadcast over leading axes.
    pub fn mul_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        if !trailing_broadcast(self.shape(x), c.shape()) {
            return Err(Error::Shape {
                op: "mul_const",
                lhs: self.shape(x).to_vec(),
                rhs: c.shape().to_vec(),
            });
        }
        let mut value = self.value(x).clone();
        for chunk in value.data.chunks_mut(c.numel()) {
            chunk.iter_mut().zip(c.data()).for_each(|(v, ci)| *v *= ci);
        }
        let factor = c.data().to_vec();
        Ok(self.push(value, Op::MulConst { x, factor }, &[x]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let mut value = self.value(x).clone();
        value.data.iter_mut().for_each(|v| *v *= s);
        self.push(value, Op::Scale(x, s), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let value = self.value(x).permute(axes)?;
        Ok(self.push(
            value,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
            &[x],
        ))
    }

    /// Numerically stable softmax over the last axis. Entries equal to
    /// `-inf` receive exactly zero weight; a row of only `-inf` is an error.
    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap();
        let mut value = self.value(x).clone();
        for (row_idx, row) in value.data.chunks_mut(d).enumerate() {
            if row.iter().all(|&v| v == f64::NEG_INFINITY) {
                return Err(Error::DegenerateMask { row: row_idx });
            }
            // NaN entries propagate instead of being skipped by the max.
            let max = row
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, |m, v| if v.is_nan() || m.is_nan() { f64::NAN } else { m.max(v) });
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        Ok(self.push(value, Op::Softmax(x), &[x]))
    }

    /// Normalizes each last-axis slice to zero mean and unit variance, then
    /// applies `gain` and `bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap();
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(Error::Shape {
                    op: "layernorm",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let rows = self.value(x).numel() / d;
        let mut xhat = Vec::with_capacity(rows * d);
        let mut rstd = Vec::with_capacity(rows);
        let g = self.data(gain);
        let b = self.data(bias);
        let mut out = Vec::with_capacity(rows * d);
        for row in self.data(x).chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + LAYERNORM_EPS).sqrt();
            rstd.push(r);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let value = Tensor {
            shape: self.shape(x).to_vec(),
            data: out,
        };
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        value.data.iter_mut().for_each(|v| *v = gelu(*v).0);
        self.push(value, Op::Gelu(x), &[x])
    }

    /// Cross-correlation of `x: [C_in, W]` or `[B, C_in, W]` with
    /// `kernel: [C_out, C_in, K]`, plus an optional per-output-channel bias.
    pub fn conv1d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(kernel), stride, padding)?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.c_out] {
                return Err(Error::Shape {
                    op: "conv1d bias",
                    lhs: self.shape(kernel).to_vec(),
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let cols = geom.im2col(self.data(x));
        let rows = geom.batch * geom.out_width;
        let cw = geom.col_width();
        let mut out_t = vec![0.0; rows * geom.c_out];
        kernels::gemm(
            rows,
            cw,
            geom.c_out,
            &cols,
            (cw, 1),
            self.data(kernel),
            (1, cw),
            0.0,
            &mut out_t,
        );
        let mut out = vec![0.0; rows * geom.c_out];
        let bias_data = bias.map(|b| self.data(b).to_vec());
        for bi in 0..geom.batch {
            for co in 0..geom.c_out {
                let shift = bias_data.as_ref().map_or(0.0, |b| b[co]);
                for w in 0..geom.out_width {
                    out[(bi * geom.c_out + co) * geom.out_width + w] =
                        out_t[(bi * geom.out_width + w) * geom.c_out + co] + shift;
                }
            }
        }
        let value = Tensor {
            shape: geom.out_shape(self.shape(x).len() == 3),
            data: out,
        };
        let mut parents = vec![x, kernel];
        parents.extend(bias);
        Ok(self.push(
            value,
            Op::Conv1d {
                x,
                kernel,
                bias,
                geom,
                cols,
            },
            &parents,
        ))
    }

    /// Mean over the last axis, dropping it.
    pub fn mean_lastdim(&mut self, x: Var) -> Var {
        let shape = self.shape(x);
        let d = *shape.last().unwrap();
        let out_shape = if shape.len() > 1 {
            shape[..shape.len() - 1].to_vec()
        } else {
            vec![1]
        };
        let data = self
            .data(x)
            .chunks(d)
            .map(|r| r.iter().sum::<f64>() / d as f64)
            .collect();
        let value = Tensor {
            shape: out_shape,
            data,
        };
        self.push(value, Op::MeanLast(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.data(x).iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    /// `scale · Σ w·(pred − target)²` with constant target and weights.
    pub fn weighted_sse(
        &mut self,
        pred: Var,
        target: &Tensor,
        weights: &Tensor,
        scale: f64,
    ) -> Result<Var> {
        for other in [target, weights] {
            if other.shape() != self.shape(pred) {
                return Err(Error::Shape {
                    op: "weighted_sse",
                    lhs: self.shape(pred).to_vec(),
                    rhs: other.shape().to_vec(),
                });
            }
        }
        let total: f64 = self
            .data(pred)
            .iter()
            .zip(target.data())
            .zip(weights.data())
            .map(|((p, t), w)| w * (p - t) * (p - t))
            .sum();
        Ok(self.push(
            Tensor::scalar(scale * total),
            Op::MaskedSse {
                pred,
                target: target.data().to_vec(),
                weights: weights.data().to_vec(),
                scale,
            },
            &[pred],
        ))
    }

    /// Reverse sweep from a scalar `loss`. Leaf gradients accumulate across
    /// calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let data = |v: Var| nodes[v.0].value.data();
        let out = &nodes[i].value;

        match &nodes[i].op {
            Op::Leaf => unreachable!(),
            Op::MatMul { a, b, plan } => {
                if let Some(da) = slot(grads, nodes, *a) {
                    plan.backward_lhs(g, data(*b), da);
                }
                if let Some(db) = slot(grads, nodes, *b) {
                    plan.backward_rhs(g, data(*a), db);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = slot(grads, nodes, v) {
                        d.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = slot(grads, nodes, *a) {
                    d.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(d) = slot(grads, nodes, *b) {
                    d.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                if let Some(d) = slot(grads, nodes, *a) {
                    for ((x, gy), bv) in d.iter_mut().zip(g).zip(data(*b)) {
                        *x += gy * bv;
                    }
                }
                if let Some(d) = slot(grads, nodes, *b) {
                    for ((x, gy), av) in d.iter_mut().zip(g).zip(data(*a)) {
                        *x += gy * av;
                    }
                }
            }
            Op::AddBias { x, bias } => {
                if let Some(d) = slot(grads, nodes, *x) {
                    d.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
                if let Some(db) = slot(grads, nodes, *bias) {
                    let n = db.len();
                    for row in g.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::AddConst(x) | Op::Reshape(x) => {
                if let Some(d) = slot(grads, nodes, *x) {
                    d.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::MulConst { x, factor } => {
                if let Some(d) = slot(grads, nodes, *x) {
                    for (dc, gc) in d.chunks_mut(factor.len()).zip(g.chunks(factor.len())) {
                        for ((a, b), f) in dc.iter_mut().zip(gc).zip(factor) {
                            *a += b * f;
                        }
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(d) = slot(grads, nodes, *x) {
                    d.iter_mut().zip(g).for_each(|(a, b)| *a += s * b);
                }
            }
            Op::Permute { x, axes } => {
                if let Some(d) = slot(grads, nodes, *x) {
                    let back = kernels::permute(g, out.shape(), &kernels::inverse_permutation(axes));
                    d.iter_mut().zip(&back).for_each(|(a, b)| *a += b);
                }
            }
            Op::Softmax(x) => {
                if let Some(d) = slot(grads, nodes, *x) {
                    let n = *out.shape().last().unwrap();
                    for ((dr, gr), yr) in d.chunks_mut(n).zip(g.chunks(n)).zip(out.data().chunks(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((a, gy), y) in dr.iter_mut().zip(gr).zip(yr) {
                            *a += y * (gy - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = *out.shape().last().unwrap();
                let gv = data(*gain).to_vec();
                if let Some(d) = slot(grads, nodes, *x) {
                    let mut dxhat = vec![0.0; n];
                    for (r, ((dr, gr), hr)) in d
                        .chunks_mut(n)
                        .zip(g.chunks(n))
                        .zip(xhat.chunks(n))
                        .enumerate()
                    {
                        for j in 0..n {
                            dxhat[j] = gr[j] * gv[j];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                        let mean_dh =
                            dxhat.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            dr[j] += rstd[r] * (dxhat[j] - mean_d - hr[j] * mean_dh);
                        }
                    }
                }
                if let Some(dg) = slot(grads, nodes, *gain) {
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if let Some(db) = slot(grads, nodes, *bias) {
                    for gr in g.chunks(n) {
                        db.iter_mut().zip(gr).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::Gelu(x) => {
                if let Some(d) = slot(grads, nodes, *x) {
                    for ((a, gy), xv) in d.iter_mut().zip(g).zip(data(*x)) {
                        *a += gy * gelu(*xv).1;
                    }
                }
            }
            Op::Conv1d {
                x,
                kernel,
                bias,
                geom,
                cols,
            } => {
                let rows = geom.batch * geom.out_width;
                let cw = geom.col_width();
                // [B, C_out, W'] -> [B·W', C_out]
                let mut g_t = vec![0.0; rows * geom.c_out];
                for bi in 0..geom.batch {
                    for co in 0..geom.c_out {
                        for w in 0..geom.out_width {
                            g_t[(bi * geom.out_width + w) * geom.c_out + co] =
                                g[(bi * geom.c_out + co) * geom.out_width + w];
                        }
                    }
                }
                if let Some(b) = bias {
                    if let Some(db) = slot(grads, nodes, *b) {
                        for row in g_t.chunks(geom.c_out) {
                            db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                        }
                    }
                }
                if let Some(dk) = slot(grads, nodes, *kernel) {
                    kernels::gemm(geom.c_out, rows, cw, &g_t, (1, geom.c_out), cols, (cw, 1), 1.0, dk);
                }
                if nodes[x.0].requires_grad {
                    let mut dcols = vec![0.0; rows * cw];
                    kernels::gemm(rows, geom.c_out, cw, &g_t, (geom.c_out, 1), data(*kernel), (cw, 1), 0.0, &mut dcols);
                    if let Some(dx) = slot(grads, nodes, *x) {
                        geom.col2im_add(&dcols, dx);
                    }
                }
            }
            Op::MeanLast(x) => {
                if let Some(d) = slot(grads, nodes, *x) {
                    let w = d.len() / g.len();
                    for (dr, gy) in d.chunks_mut(w).zip(g) {
                        dr.iter_mut().for_each(|a| *a += gy / w as f64);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(d) = slot(grads, nodes, *x) {
                    d.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::MaskedSse {
                pred,
                target,
                weights,
                scale,
            } => {
                if let Some(d) = slot(grads, nodes, *pred) {
                    let c = 2.0 * scale * g[0];
                    for (((a, p), t), w) in d.iter_mut().zip(data(*pred)).zip(target).zip(weights) {
                        *a += c * w * (p - t);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_sum() {
        let mut g = Graph::new();
        let i = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let v = g.constant(t(&[2, 1], &[3.0, 4.0]));
        let out = g.matmul(i, v).unwrap();
        assert_eq!(g.value(out).data(), &[3.0, 4.0]);

        let a = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let out = g.matmul(a, v).unwrap();
        assert_eq!(g.value(out).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4, 2]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[0.0, 0.0, 0.0]));
        let y = g.softmax_lastdim(x).unwrap();
        for v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = g.constant(t(&[3], &[0.0, f64::NEG_INFINITY, f64::NEG_INFINITY]));
        let y = g.softmax_lastdim(x).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_all_masked_row_is_degenerate() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2], &[0.0, 1.0, f64::NEG_INFINITY, f64::NEG_INFINITY]));
        assert!(matches!(
            g.softmax_lastdim(x),
            Err(Error::DegenerateMask { row: 1 })
        ));
    }

    #[test]
    fn layernorm_constant_slice_maps_to_bias() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[5.0, 5.0, 5.0]));
        let gain = g.constant(Tensor::full(&[3], 1.0));
        let bias = g.constant(Tensor::zeros(&[3]));
        let y = g.layernorm(x, gain, bias).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn layernorm_normalized_input_is_nearly_fixed() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[1.0, -1.0]));
        let gain = g.constant(Tensor::full(&[2], 1.0));
        let bias = g.constant(Tensor::zeros(&[2]));
        let y = g.layernorm(x, gain, bias).unwrap();
        let out = g.value(y).data();
        // Variance is 1, so only the epsilon term perturbs the result.
        assert!((out[0] - 1.0).abs() < 1e-5 && (out[1] + 1.0).abs() < 1e-5);
    }

    #[test]
    fn conv1d_small_cases() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let k1 = g.constant(t(&[1, 1, 1], &[1.0]));
        let y = g.conv1d(x, k1, None, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0]);
        let k2 = g.constant(t(&[1, 1, 2], &[1.0, 1.0]));
        let y = g.conv1d(x, k2, None, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 5.0]);
        assert_eq!(g.shape(y), &[1, 2]);
    }

    #[test]
    fn conv1d_kernel_wider_than_input() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let k = g.constant(Tensor::zeros(&[1, 1, 3]));
        assert!(g.conv1d(x, k, None, 1, 0).is_err());
        assert!(g.conv1d(x, k, None, 1, 1).is_ok());
    }

    #[test]
    fn backward_linear_and_quadratic() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[0.3, -2.0, 7.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_accumulates_until_reset() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(t(&[2], &[1.0, 2.0]));
        let x = g.param(t(&[2], &[3.0, 4.0]));
        let p = g.mul(c, x).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap(), &[1.0, 2.0]);
    }
}
