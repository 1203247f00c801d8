use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::{Error, Result};

use super::kernels::{self, ConvGeom};
use super::{Real, Tensor};

/// Guard added inside every logarithm of the losses.
pub const LOG_GUARD: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom },
    Relu(Var),
    MaxPool { input: Var, argmax: Vec<u32> },
    Upsample { input: Var, factor: usize },
    Concat { a: Var, b: Var },
    Stack(Vec<Var>),
    Softmax(Var),
    Scale { input: Var, factor: f64 },
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    WeightedCe { probs: Var, labels: Vec<u8>, weights: Vec<f64> },
    Kl { s: Var, t: Var },
}

struct Node<F> {
    value: Tensor<F>,
    grad: Option<Vec<F>>,
    op: Op,
    requires_grad: bool,
}

/// Tape of executed operations.
///
/// Nodes are appended in execution order, so reverse index order is a
/// valid reverse topological order for [`Graph::backward`]. A graph is
/// single-use: build a new one for every forward pass.
pub struct Graph<F: Real = f32> {
    nodes: Vec<Node<F>>,
    differentiated: bool,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape<F: Real>(a: &Tensor<F>, b: &Tensor<F>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{op}: shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), differentiated: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last backward pass. Populated for every leaf that
    /// requires a gradient; intermediate gradients are discarded.
    pub fn grad(&self, v: Var) -> Option<Tensor<F>> {
        let node = &self.nodes[v.0];
        node.grad.as_ref().map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.value(x).shape(), self.value(weight).shape(), stride, padding)?;
        if let Some(b) = bias {
            if self.value(b).shape() != [geom.cout] {
                return Err(Error::Shape(format!(
                    "conv2d bias shape {:?}, expected [{}]",
                    self.value(b).shape(),
                    geom.cout
                )));
            }
        }
        let out = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(vec![geom.n, geom.cout, geom.ho, geom.wo], out)?;
        let rg = self.rg(x) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(value, Op::Conv2d { input: x, weight, bias, geom }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| v.max(F::zero())).collect())
            .expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// Non-overlapping max pooling with window and stride `size`.
    pub fn maxpool2d(&mut self, x: Var, size: usize) -> Result<Var> {
        let t = self.value(x);
        let (shape, out, argmax) = kernels::maxpool_forward(t.shape(), t.data(), size)?;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::MaxPool { input: x, argmax }, rg))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let t = self.value(x);
        let (shape, out) = kernels::upsample_forward(t.shape(), t.data(), factor)?;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Upsample { input: x, factor }, rg))
    }

    /// Concatenates two NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, ca, ha, wa) = self.value(a).dims4()?;
        let (nb, cb, hb, wb) = self.value(b).dims4()?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(Error::Shape(format!("concat: [{na},_,{ha},{wa}] vs [{nb},_,{hb},{wb}]")));
        }
        let (pa, pb) = (ca * ha * wa, cb * hb * wb);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(na * (pa + pb));
        for n in 0..na {
            out.extend_from_slice(&da[n * pa..(n + 1) * pa]);
            out.extend_from_slice(&db[n * pb..(n + 1) * pb]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![na, ca + cb, ha, wa], out)?, Op::Concat { a, b }, rg))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn batch_stack(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::Shape("batch_stack of zero tensors".into()));
        };
        let shape = self.value(first).shape().to_vec();
        let mut out = Vec::with_capacity(xs.len() * self.value(first).len());
        for &x in xs {
            if self.value(x).shape() != shape.as_slice() {
                return Err(Error::Shape(format!("batch_stack: {:?} vs {shape:?}", self.value(x).shape())));
            }
            out.extend_from_slice(self.value(x).data());
        }
        let mut new_shape = vec![xs.len()];
        new_shape.extend(shape);
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(Tensor::new(new_shape, out)?, Op::Stack(xs.to_vec()), rg))
    }

    /// Softmax over axis 1 (the class axis), independently per pixel.
    pub fn softmax_over_classes(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = kernels::softmax_forward(t.shape(), t.data())?;
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x);
        let f = F::of(factor);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| v * f).collect()).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Scale { input: x, factor }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.f64()).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(F::of(s)), Op::Sum(x), rg)
    }

    /// `-(1/M) Σ_p weights[y_p] · ln(probs[y_p] + LOG_GUARD)` over all `M` pixels.
    ///
    /// `probs` is `[N, K, ...]`; `labels` holds one class index per pixel in
    /// `[N, ...]` order.
    pub fn weighted_cross_entropy(&mut self, probs: Var, labels: &[u8], weights: &[f64]) -> Result<Var> {
        let t = self.value(probs);
        let (n, k, inner) = kernels::class_layout(t.shape())?;
        if weights.len() != k {
            return Err(Error::Shape(format!("{} class weights for {k} classes", weights.len())));
        }
        if labels.len() != n * inner {
            return Err(Error::Shape(format!("{} labels for {} pixels", labels.len(), n * inner)));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
            return Err(Error::InvalidInput(format!("label {bad} outside [0, {k})")));
        }
        let d = t.data();
        let mut acc = 0.0f64;
        for s in 0..n {
            for p in 0..inner {
                let y = labels[s * inner + p] as usize;
                let pr = d[(s * k + y) * inner + p].f64();
                acc += weights[y] * (pr + LOG_GUARD).ln();
            }
        }
        let loss = -acc / (n * inner) as f64;
        let rg = self.rg(probs);
        Ok(self.push(
            Tensor::scalar(F::of(loss)),
            Op::WeightedCe { probs, labels: labels.to_vec(), weights: weights.to_vec() },
            rg,
        ))
    }

    /// Mean per-pixel `KL(s ‖ t) = -Σ_i s_i ln((t_i + δ)/(s_i + δ))` over axis 1.
    pub fn kl_divergence(&mut self, s: Var, t: Var) -> Result<Var> {
        same_shape(self.value(s), self.value(t), "kl_divergence")?;
        let (n, _, inner) = kernels::class_layout(self.value(s).shape())?;
        let acc: f64 = self
            .value(s)
            .data()
            .iter()
            .zip(self.value(t).data())
            .map(|(&a, &b)| {
                let (a, b) = (a.f64(), b.f64());
                a * ((a + LOG_GUARD).ln() - (b + LOG_GUARD).ln())
            })
            .sum();
        let loss = acc / (n * inner) as f64;
        let rg = self.rg(s) || self.rg(t);
        Ok(self.push(Tensor::scalar(F::of(loss)), Op::Kl { s, t }, rg))
    }

    fn accumulate(&mut self, v: Var, contrib: Vec<F>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => g.iter_mut().zip(contrib).for_each(|(a, b)| *a += b),
            None => node.grad = Some(contrib),
        }
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.differentiated {
            return Err(Error::Graph("backward already ran on this graph; rebuild the forward pass".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Graph(format!("backward needs a scalar loss, got shape {:?}", self.value(loss).shape())));
        }
        self.differentiated = true;
        for node in &mut self.nodes {
            node.grad = None;
        }
        if self.rg(loss) {
            self.nodes[loss.0].grad = Some(vec![F::one()]);
        }

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else { continue };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.backprop_node(i, &op, &g)?;
            self.nodes[i].op = op;
        }

        for node in &mut self.nodes {
            if matches!(node.op, Op::Leaf) && node.requires_grad && node.grad.is_none() {
                node.grad = Some(vec![F::zero(); node.value.len()]);
            }
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, op: &Op, g: &[F]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, geom } => {
                let grads = kernels::conv2d_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                    self.rg(*input),
                    self.rg(*weight),
                    bias.is_some_and(|b| self.rg(b)),
                );
                if let Some(dx) = grads.dx {
                    self.accumulate(*input, dx);
                }
                if let Some(dw) = grads.dw {
                    self.accumulate(*weight, dw);
                }
                if let (Some(b), Some(db)) = (bias, grads.db) {
                    self.accumulate(*b, db);
                }
            }
            Op::Relu(x) => {
                let dx = self.value(*x).data().iter().zip(g).map(|(&v, &gv)| if v > F::zero() { gv } else { F::zero() }).collect();
                self.accumulate(*x, dx);
            }
            Op::MaxPool { input, argmax } => {
                let mut dx = vec![F::zero(); self.value(*input).len()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    dx[src as usize] += gv;
                }
                self.accumulate(*input, dx);
            }
            Op::Upsample { input, factor } => {
                let dx = kernels::upsample_backward(self.value(*input).shape(), g, *factor);
                self.accumulate(*input, dx);
            }
            Op::Concat { a, b } => {
                let (n, ca, h, w) = self.value(*a).dims4()?;
                let cb = self.value(*b).dims4()?.1;
                let (pa, pb) = (ca * h * w, cb * h * w);
                let mut da = Vec::with_capacity(n * pa);
                let mut db = Vec::with_capacity(n * pb);
                for s in g.chunks(pa + pb) {
                    da.extend_from_slice(&s[..pa]);
                    db.extend_from_slice(&s[pa..]);
                }
                self.accumulate(*a, da);
                self.accumulate(*b, db);
            }
            Op::Stack(xs) => {
                let per = g.len() / xs.len();
                for (k, &x) in xs.iter().enumerate() {
                    self.accumulate(x, g[k * per..(k + 1) * per].to_vec());
                }
            }
            Op::Softmax(x) => {
                let y = &self.nodes[i].value;
                let dx = kernels::softmax_backward(y.shape(), y.data(), g);
                self.accumulate(*x, dx);
            }
            Op::Scale { input, factor } => {
                let f = F::of(*factor);
                self.accumulate(*input, g.iter().map(|&v| v * f).collect());
            }
            Op::Add(a, b) => {
                self.accumulate(*a, g.to_vec());
                self.accumulate(*b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let da = g.iter().zip(self.value(*b).data()).map(|(&gv, &bv)| gv * bv).collect();
                let db = g.iter().zip(self.value(*a).data()).map(|(&gv, &av)| gv * av).collect();
                self.accumulate(*a, da);
                self.accumulate(*b, db);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(*x, vec![g[0]; n]);
            }
            Op::WeightedCe { probs, labels, weights } => {
                let t = self.value(*probs);
                let (n, k, inner) = kernels::class_layout(t.shape())?;
                let scale = g[0].f64() / (n * inner) as f64;
                let d = t.data();
                let mut dp = vec![F::zero(); d.len()];
                for s in 0..n {
                    for p in 0..inner {
                        let y = labels[s * inner + p] as usize;
                        let idx = (s * k + y) * inner + p;
                        dp[idx] = F::of(-scale * weights[y] / (d[idx].f64() + LOG_GUARD));
                    }
                }
                self.accumulate(*probs, dp);
            }
            Op::Kl { s, t } => {
                let (n, _, inner) = kernels::class_layout(self.value(*s).shape())?;
                let scale = g[0].f64() / (n * inner) as f64;
                let sd = self.value(*s).data();
                let td = self.value(*t).data();
                if self.rg(*s) {
                    let ds = sd
                        .iter()
                        .zip(td)
                        .map(|(&a, &b)| {
                            let (a, b) = (a.f64(), b.f64());
                            F::of(scale * ((a + LOG_GUARD).ln() - (b + LOG_GUARD).ln() + a / (a + LOG_GUARD)))
                        })
                        .collect();
                    self.accumulate(*s, ds);
                }
                if self.rg(*t) {
                    let sd = self.value(*s).data();
                    let td = self.value(*t).data();
                    let dt = sd.iter().zip(td).map(|(&a, &b)| F::of(-scale * a.f64() / (b.f64() + LOG_GUARD))).collect();
                    self.accumulate(*t, dt);
                }
            }
        }
        Ok(())
    }

    /// Hash of every piecewise decision taken in the forward pass (ReLU
    /// signs and max-pool winners). Two inputs with equal signatures lie on
    /// the same smooth piece, which is what finite-difference checks need.
    pub fn decision_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for v in self.value(*x).data() {
                        (*v > F::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }
}
