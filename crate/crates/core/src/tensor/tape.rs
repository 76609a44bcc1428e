use crate::error::{Error, Result};

use super::kernels::{self, Conv2dGeometry, Pool2dGeometry};
use super::{broadcast_index_map, broadcast_shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Log,
    Square,
    Relu,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(BinaryOp, Var, Var),
    Unary(UnaryOp, Var),
    Scale(Var, f32),
    AddScalar(Var),
    MatMul(Var, Var),
    Reshape(Var),
    Sum(Var, Option<usize>),
    Mean(Var, Option<usize>),
    Max(Var, Vec<usize>),
    LogSoftmax(Var),
    Gather(Var, Vec<usize>),
    /// Student logits, `p_S - p_T`, and the factor `tau / N`.
    SoftKl(Var, Vec<f64>, f64),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Conv2dGeometry,
    },
    MaxPool2d(Var, Vec<usize>),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
        train: bool,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of executed operations.
///
/// Nodes are appended in execution order, so every node's inputs precede it.
/// A tape created with [`Tape::no_grad`] still evaluates every operation but
/// never marks anything as differentiable.
pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Number of vars that carry a gradient.
    pub fn len(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
            consumed: false,
        }
    }

    pub fn no_grad() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: false,
            consumed: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
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

    /// Places a tensor on the tape; it is differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = self.grad_enabled && t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_grad(false), Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        self.grad_enabled && vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn binary(&mut self, kind: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out_shape = broadcast_shape(ta.shape(), tb.shape())?;
        let f = |x: f32, y: f32| match kind {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
            BinaryOp::Div => x / y,
        };
        let (da, db) = (ta.data(), tb.data());
        let data: Vec<f32> = if ta.shape() == tb.shape() {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else if ta.shape() == out_shape.as_slice() && db.len() == 1 {
            da.iter().map(|&x| f(x, db[0])).collect()
        } else if ta.shape() == out_shape.as_slice() && out_shape.ends_with(tb.shape()) {
            let n = db.len();
            da.iter()
                .enumerate()
                .map(|(i, &x)| f(x, db[i % n]))
                .collect()
        } else {
            let ma = broadcast_index_map(ta.shape(), &out_shape);
            let mb = broadcast_index_map(tb.shape(), &out_shape);
            ma.iter().zip(&mb).map(|(&i, &j)| f(da[i], db[j])).collect()
        };
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Binary(kind, a, b),
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn unary(&mut self, kind: UnaryOp, a: Var) -> Var {
        let t = self.value(a);
        let out = t.map(|x| match kind {
            UnaryOp::Neg => -x,
            UnaryOp::Exp => x.exp(),
            UnaryOp::Log => x.ln(),
            UnaryOp::Square => x * x,
            UnaryOp::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
        });
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Unary(kind, a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Log, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Square, a)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Neg, a)
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f32) -> Var {
        let out = self.value(a).map(|x| x + s);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::shape("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let data = kernels::matmul(ta.data(), tb.data(), m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::MatMul(a, b), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?.with_grad(false);
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    fn check_axis(&self, a: Var, axis: Option<usize>, op: &'static str) -> Result<()> {
        match axis {
            Some(ax) if ax >= self.value(a).rank() => {
                Err(Error::shape(op, self.value(a).shape(), &[ax]))
            }
            _ => Ok(()),
        }
    }

    /// `(outer, axis_len, inner)` decomposition and the reduced shape.
    fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize, Vec<usize>) {
        let outer = shape[..axis].iter().product();
        let inner = shape[axis + 1..].iter().product();
        let mut reduced = shape.to_vec();
        reduced.remove(axis);
        (outer, shape[axis], inner, reduced)
    }

    fn reduce_sum(t: &Tensor, axis: Option<usize>) -> Tensor {
        match axis {
            None => Tensor::scalar(t.data().iter().sum()),
            Some(ax) => {
                let (outer, len, inner, shape) = Self::axis_split(t.shape(), ax);
                let d = t.data();
                let mut out = vec![0.0f32; outer * inner];
                for o in 0..outer {
                    for k in 0..len {
                        let base = (o * len + k) * inner;
                        for i in 0..inner {
                            out[o * inner + i] += d[base + i];
                        }
                    }
                }
                Tensor::from_parts(shape, out)
            }
        }
    }

    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.check_axis(a, axis, "sum")?;
        let out = Self::reduce_sum(self.value(a), axis);
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Sum(a, axis), rg))
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.check_axis(a, axis, "mean")?;
        let t = self.value(a);
        let count = match axis {
            None => t.numel(),
            Some(ax) => t.shape()[ax],
        };
        if count == 0 {
            return Err(Error::shape("mean", t.shape(), &[]));
        }
        let out = Self::reduce_sum(t, axis).map(|v| v / count as f32);
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Mean(a, axis), rg))
    }

    /// Maximum; the gradient flows to the first maximal element.
    pub fn max(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.check_axis(a, axis, "max")?;
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(Error::shape("max", t.shape(), &[]));
        }
        let d = t.data();
        let (out, arg) = match axis {
            None => {
                let mut best = 0;
                for (i, &v) in d.iter().enumerate() {
                    if v > d[best] {
                        best = i;
                    }
                }
                (Tensor::scalar(d[best]), vec![best])
            }
            Some(ax) => {
                let (outer, len, inner, shape) = Self::axis_split(t.shape(), ax);
                let mut vals = Vec::with_capacity(outer * inner);
                let mut arg = Vec::with_capacity(outer * inner);
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = o * len * inner + i;
                        for k in 1..len {
                            let idx = (o * len + k) * inner + i;
                            if d[idx] > d[best] {
                                best = idx;
                            }
                        }
                        vals.push(d[best]);
                        arg.push(best);
                    }
                }
                (Tensor::from_parts(shape, vals), arg)
            }
        };
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Max(a, arg), rg))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let cols = *t.shape().last().ok_or_else(|| Error::shape("log_softmax", &[], &[]))?;
        if cols == 0 {
            return Err(Error::shape("log_softmax", t.shape(), &[]));
        }
        let out = Tensor::from_parts(t.shape().to_vec(), kernels::log_softmax_rows(t.data(), cols));
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::LogSoftmax(a), rg))
    }

    /// Picks `a[i, idx[i]]` from a rank-2 tensor.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 || t.shape()[0] != idx.len() {
            return Err(Error::shape("gather_rows", t.shape(), &[idx.len()]));
        }
        let cols = t.shape()[1];
        if let Some(&bad) = idx.iter().find(|&&k| k >= cols) {
            return Err(Error::Data(format!("label {bad} out of range for {cols} classes")));
        }
        let d = t.data();
        let out: Vec<f32> = idx.iter().enumerate().map(|(i, &k)| d[i * cols + k]).collect();
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            Tensor::from_parts(vec![idx.len()], out),
            Op::Gather(a, idx.to_vec()),
            rg,
        ))
    }

    /// Softened KL divergence of student logits `z_s` from fixed teacher
    /// logits, `tau^2 / N * sum p_T (log p_T - log p_S)`, evaluated in f64.
    pub fn soft_kl(&mut self, z_t: &Tensor, z_s: Var, tau: f64) -> Result<Var> {
        let ts = self.value(z_s);
        if ts.rank() != 2 || ts.shape()[1] == 0 {
            return Err(Error::shape("soft_kl", ts.shape(), &[0, 0]));
        }
        if z_t.shape() != ts.shape() {
            return Err(Error::shape("soft_kl", z_t.shape(), ts.shape()));
        }
        let (n, c) = (ts.shape()[0], ts.shape()[1]);
        if n == 0 {
            return Err(Error::Data("soft_kl on an empty batch".to_string()));
        }
        let (loss, diff) = kernels::soft_kl(z_t.data(), ts.data(), c, tau);
        let rg = self.any_grad(&[z_s]);
        let diff = if rg { diff } else { Vec::new() };
        Ok(self.push(Tensor::scalar(loss as f32), Op::SoftKl(z_s, diff, tau / n as f64), rg))
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let geom = Conv2dGeometry::new(self.shape(x), self.shape(w), stride, padding)?;
        if let Some(bv) = b {
            if self.shape(bv) != [geom.out_ch] {
                return Err(Error::shape("conv2d bias", self.shape(bv), &[geom.out_ch]));
            }
        }
        let bias = b.map(|bv| self.value(bv).data());
        let data = kernels::conv2d(self.value(x).data(), self.value(w).data(), bias, &geom);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.any_grad(&inputs);
        Ok(self.push(
            Tensor::from_parts(geom.output_shape().to_vec(), data),
            Op::Conv2d { x, w, b, geom },
            rg,
        ))
    }

    pub fn maxpool2d(&mut self, x: Var, kernel: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let geom = Pool2dGeometry::new(self.shape(x), kernel, stride)?;
        let (data, arg) = kernels::maxpool2d(self.value(x).data(), &geom);
        let rg = self.any_grad(&[x]);
        let arg = if rg { arg } else { Vec::new() };
        Ok(self.push(
            Tensor::from_parts(geom.output_shape().to_vec(), data),
            Op::MaxPool2d(x, arg),
            rg,
        ))
    }

    fn check_bn(&self, x: Var, gamma: Var, beta: Var) -> Result<usize> {
        let xs = self.shape(x);
        if xs.len() != 4 {
            return Err(Error::shape("batchnorm", xs, &[]));
        }
        let c = xs[1];
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(Error::shape("batchnorm", xs, self.shape(p)));
            }
        }
        Ok(c)
    }

    /// Train-mode batch normalisation over `N×C×H×W`.
    ///
    /// Returns the output and the batch `(mean, biased variance)` per channel.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f32,
    ) -> Result<(Var, Vec<f32>, Vec<f32>)> {
        self.check_bn(x, gamma, beta)?;
        let xs = self.shape(x).to_vec();
        if xs[0] * xs[2] * xs[3] < 2 {
            return Err(Error::DegenerateVariance(format!(
                "train-mode batch norm needs at least 2 values per channel, got shape {xs:?}"
            )));
        }
        let stats = kernels::channel_stats(self.value(x).data(), &xs);
        let inv_std: Vec<f32> = stats.var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (y, xhat) = kernels::batchnorm_apply(
            self.value(x).data(),
            &xs,
            &stats.mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let rg = self.any_grad(&[x, gamma, beta]);
        let (xhat, inv) = if rg { (xhat, inv_std) } else { (Vec::new(), Vec::new()) };
        let out = self.push(
            Tensor::from_parts(xs, y),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std: inv,
                train: true,
            },
            rg,
        );
        Ok((out, stats.mean, stats.var))
    }

    /// Eval-mode batch normalisation with fixed statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f32],
        var: &[f32],
        eps: f32,
    ) -> Result<Var> {
        let c = self.check_bn(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::shape("batchnorm running stats", &[mean.len(), var.len()], &[c]));
        }
        let xs = self.shape(x).to_vec();
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (y, xhat) = kernels::batchnorm_apply(
            self.value(x).data(),
            &xs,
            mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let rg = self.any_grad(&[x, gamma, beta]);
        let (xhat, inv) = if rg { (xhat, inv_std) } else { (Vec::new(), Vec::new()) };
        Ok(self.push(
            Tensor::from_parts(xs, y),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std: inv,
                train: false,
            },
            rg,
        ))
    }

    /// Reverse accumulation from a scalar `loss`.
    ///
    /// Every differentiable leaf receives a gradient (zeros when unreachable).
    /// A tape supports exactly one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Contract(
                "backward already ran on this tape".to_string(),
            ));
        }
        let lt = &self.nodes[loss.0];
        if lt.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.value.shape()
            )));
        }
        if !lt.requires_grad {
            return Err(Error::Contract(
                "loss is detached from every differentiable leaf".to_string(),
            ));
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            self.backprop_node(id, &g, &mut grads);
        }

        let out = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| match node.op {
                Op::Leaf if node.requires_grad => Some(Tensor::from_parts(
                    node.value.shape().to_vec(),
                    grads[i].take().unwrap_or_else(|| vec![0.0; node.value.numel()]),
                )),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads: out })
    }

    fn backprop_node(&self, id: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[id];
        let out_shape = node.value.shape();
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let ma = broadcast_index_map(ta.shape(), out_shape);
                let mb = broadcast_index_map(tb.shape(), out_shape);
                let (da, db) = (ta.data(), tb.data());
                if self.requires_grad(*a) {
                    let mut ga = vec![0.0f32; ta.numel()];
                    for k in 0..g.len() {
                        let (i, j) = (ma[k], mb[k]);
                        ga[i] += match kind {
                            BinaryOp::Add | BinaryOp::Sub => g[k],
                            BinaryOp::Mul => g[k] * db[j],
                            BinaryOp::Div => g[k] / db[j],
                        };
                    }
                    accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let mut gb = vec![0.0f32; tb.numel()];
                    for k in 0..g.len() {
                        let (i, j) = (ma[k], mb[k]);
                        gb[j] += match kind {
                            BinaryOp::Add => g[k],
                            BinaryOp::Sub => -g[k],
                            BinaryOp::Mul => g[k] * da[i],
                            BinaryOp::Div => -g[k] * da[i] / (db[j] * db[j]),
                        };
                    }
                    accumulate(grads, *b, gb);
                }
            }
            Op::Unary(kind, a) => {
                let x = self.value(*a).data();
                let y = node.value.data();
                let ga: Vec<f32> = (0..g.len())
                    .map(|k| match kind {
                        UnaryOp::Neg => -g[k],
                        UnaryOp::Exp => g[k] * y[k],
                        UnaryOp::Log => g[k] / x[k],
                        UnaryOp::Square => 2.0 * x[k] * g[k],
                        UnaryOp::Relu => {
                            if x[k] > 0.0 {
                                g[k]
                            } else {
                                0.0
                            }
                        }
                    })
                    .collect();
                accumulate(grads, *a, ga);
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.iter().map(|v| v * s).collect()),
            Op::AddScalar(a) | Op::Reshape(a) => accumulate(grads, *a, g.to_vec()),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let (ga, gb) = kernels::matmul_backward(ta.data(), tb.data(), g, m, k, n);
                if self.requires_grad(*a) {
                    accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    accumulate(grads, *b, gb);
                }
            }
            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                let ta = self.value(*a);
                let scale = match (&node.op, axis) {
                    (Op::Mean(..), None) => 1.0 / ta.numel() as f32,
                    (Op::Mean(..), Some(ax)) => 1.0 / ta.shape()[*ax] as f32,
                    _ => 1.0,
                };
                let ga = match axis {
                    None => vec![g[0] * scale; ta.numel()],
                    Some(ax) => {
                        let (outer, len, inner, _) = Self::axis_split(ta.shape(), *ax);
                        let mut ga = vec![0.0f32; ta.numel()];
                        for o in 0..outer {
                            for k in 0..len {
                                for i in 0..inner {
                                    ga[(o * len + k) * inner + i] = g[o * inner + i] * scale;
                                }
                            }
                        }
                        ga
                    }
                };
                accumulate(grads, *a, ga);
            }
            Op::Max(a, arg) => {
                let mut ga = vec![0.0f32; self.value(*a).numel()];
                for (k, &idx) in arg.iter().enumerate() {
                    ga[idx] += g[k];
                }
                accumulate(grads, *a, ga);
            }
            Op::LogSoftmax(a) => {
                let cols = *out_shape.last().unwrap_or(&1);
                let y = node.value.data();
                let mut ga = vec![0.0f32; y.len()];
                for r in 0..y.len() / cols {
                    let row = r * cols..(r + 1) * cols;
                    let gsum: f32 = g[row.clone()].iter().sum();
                    for k in row {
                        ga[k] = g[k] - y[k].exp() * gsum;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Gather(a, idx) => {
                let ta = self.value(*a);
                let cols = ta.shape()[1];
                let mut ga = vec![0.0f32; ta.numel()];
                for (i, &k) in idx.iter().enumerate() {
                    ga[i * cols + k] += g[i];
                }
                accumulate(grads, *a, ga);
            }
            Op::SoftKl(a, diff, factor) => {
                let s = g[0] as f64 * factor;
                accumulate(grads, *a, diff.iter().map(|d| (d * s) as f32).collect());
            }
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) =
                    kernels::conv2d_backward(self.value(*x).data(), self.value(*w).data(), g, geom);
                if self.requires_grad(*x) {
                    accumulate(grads, *x, dx);
                }
                if self.requires_grad(*w) {
                    accumulate(grads, *w, dw);
                }
                if let Some(bv) = b {
                    if self.requires_grad(*bv) {
                        accumulate(grads, *bv, db);
                    }
                }
            }
            Op::MaxPool2d(x, arg) => {
                let mut gx = vec![0.0f32; self.value(*x).numel()];
                for (k, &idx) in arg.iter().enumerate() {
                    gx[idx] += g[k];
                }
                accumulate(grads, *x, gx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let xs = self.shape(*x);
                let (dgamma, dbeta) = kernels::batchnorm_param_grads(g, xhat, xs);
                if self.requires_grad(*x) {
                    let gam = self.value(*gamma).data();
                    let dx = if *train {
                        kernels::batchnorm_train_dx(g, xhat, xs, gam, inv_std, &dgamma, &dbeta)
                    } else {
                        let (c, plane) = (xs[1], xs[2] * xs[3]);
                        g.iter()
                            .enumerate()
                            .map(|(k, &gv)| {
                                let ch = (k / plane) % c;
                                gv * gam[ch] * inv_std[ch]
                            })
                            .collect()
                    };
                    accumulate(grads, *x, dx);
                }
                if self.requires_grad(*gamma) {
                    accumulate(grads, *gamma, dgamma);
                }
                if self.requires_grad(*beta) {
                    accumulate(grads, *beta, dbeta);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f32>>], v: Var, g: Vec<f32>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}
