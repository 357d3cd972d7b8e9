use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, Tensor};
use super::GradError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Whether stochastic ops (dropout) are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            // relu(x) > 0 iff x > 0, and relu'(0) = 0
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = GradError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            other => Err(GradError::Config(format!("unknown activation {other:?}"))),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

struct LstmCache {
    /// Activated gates in (i, f, g, o) order, each of length H.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

enum Op {
    Constant,
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Act(Activation, NodeId),
    Concat(Vec<NodeId>),
    Conv1dMaxPool {
        seq: NodeId,
        filters: NodeId,
        bias: NodeId,
        width: usize,
        /// Window position selected per filter.
        argmax: Vec<usize>,
        /// Activation derivative at the selected position per filter.
        slope: Vec<f64>,
    },
    LstmStep {
        x: NodeId,
        state: NodeId,
        w: NodeId,
        u: NodeId,
        b: NodeId,
        cache: LstmCache,
    },
    LstmHidden(NodeId),
    Dropout {
        x: NodeId,
        mask: Vec<f64>,
    },
    SoftmaxXent {
        logits: NodeId,
        gold: usize,
        probs: Vec<f64>,
    },
    Sum(NodeId),
    Mean(Vec<NodeId>),
    Scale(NodeId, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Act(..) => "activation",
            Op::Concat(_) => "concat",
            Op::Conv1dMaxPool { .. } => "conv1d_maxpool",
            Op::LstmStep { .. } => "lstm_step",
            Op::LstmHidden(_) => "lstm_hidden",
            Op::Dropout { .. } => "dropout",
            Op::SoftmaxXent { .. } => "softmax_xent",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Scale(..) => "scale",
        }
    }
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// Append-only tape of primitive operations.
///
/// Parameters are borrowed from a [`ParamStore`] and never copied; each
/// parameter gets a single leaf node no matter how often it is referenced.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
    mode: Mode,
    rng: ChaCha8Rng,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore, mode: Mode, seed: u64) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        match &self.nodes[id.0].value {
            Value::Owned(t) => t,
            Value::Param(p) => self.params.get(*p),
        }
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<NodeId, GradError> {
        if !value.all_finite() {
            return Err(GradError::NonFinite { op: op.name(), stage: "forward" });
        }
        self.nodes.push(Node { value: Value::Owned(value), op, requires_grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId, GradError> {
        self.push(value, Op::Constant, false)
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn input(&mut self, value: Tensor) -> Result<NodeId, GradError> {
        self.push(value, Op::Input, true)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param(id), requires_grad: true });
        let node = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id, node);
        node
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.as_matrix_dims().ok_or_else(|| dims_err("matmul", av, bv))?;
        let (k2, n) = match bv.shape() {
            [k2, n] => (*k2, *n),
            _ => return Err(dims_err("matmul", av, bv)),
        };
        if k != k2 {
            return Err(dims_err("matmul", av, bv));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(av.data(), bv.data(), &mut out, m, k, n);
        let shape = if av.rank() == 1 { vec![n] } else { vec![m, n] };
        let req = self.requires(a) || self.requires(b);
        self.push(Tensor::new(shape, out)?, Op::MatMul(a, b), req)
    }

    /// `x + b` with `b` broadcast across the rows of `x`.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let (xv, bv) = (self.value(x), self.value(b));
        let n = bv.len();
        if bv.rank() != 1 || xv.shape().last() != Some(&n) {
            return Err(dims_err("add_bias", xv, bv));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let req = self.requires(x) || self.requires(b);
        self.push(out, Op::AddBias(x, b), req)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(dims_err("add", av, bv));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        let req = self.requires(a) || self.requires(b);
        self.push(out, Op::Add(a, b), req)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(dims_err("mul", av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let req = self.requires(a) || self.requires(b);
        self.push(out, Op::Mul(a, b), req)
    }

    pub fn activation(&mut self, kind: Activation, x: NodeId) -> Result<NodeId, GradError> {
        let out = self.value(x).map(|v| kind.apply(v));
        let req = self.requires(x);
        self.push(out, Op::Act(kind, x), req)
    }

    /// Concatenates rank-1 tensors.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, GradError> {
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 1 {
                return Err(GradError::Dimension(format!(
                    "concat expects vectors, got shape {:?}",
                    v.shape()
                )));
            }
            data.extend_from_slice(v.data());
        }
        let req = parts.iter().any(|&p| self.requires(p));
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), req)
    }

    /// Window convolution over a `[T×d]` sequence with `[w×d×F]` filters,
    /// followed by `activation` and max-over-time pooling, giving `[F]`.
    ///
    /// The sequence is zero-padded on the right to at least `w` rows. Ties in
    /// the pooled maximum go to the lowest window position.
    pub fn conv1d_maxpool(
        &mut self,
        seq: NodeId,
        filters: NodeId,
        bias: NodeId,
        activation: Activation,
    ) -> Result<NodeId, GradError> {
        let (sv, fv, bv) = (self.value(seq), self.value(filters), self.value(bias));
        let (t, d) = match sv.shape() {
            [t, d] => (*t, *d),
            _ => return Err(dims_err("conv1d_maxpool", sv, fv)),
        };
        let (w, f) = match fv.shape() {
            [w, fd, f] if *fd == d && *w >= 1 => (*w, *f),
            _ => return Err(dims_err("conv1d_maxpool", sv, fv)),
        };
        if bv.shape() != [f] {
            return Err(dims_err("conv1d_maxpool", fv, bv));
        }
        let windows = im2col(sv.data(), t, d, w);
        let positions = windows.len() / (w * d);
        let mut pre = vec![0.0; positions * f];
        gemm_acc(&windows, fv.data(), &mut pre, positions, w * d, f);

        let mut out = vec![f64::NEG_INFINITY; f];
        let mut argmax = vec![0usize; f];
        for p in 0..positions {
            for j in 0..f {
                let y = activation.apply(pre[p * f + j] + bv.data()[j]);
                if y > out[j] {
                    out[j] = y;
                    argmax[j] = p;
                }
            }
        }
        let slope = (0..f).map(|j| activation.derivative_from_output(out[j])).collect();
        let req = self.requires(seq) || self.requires(filters) || self.requires(bias);
        self.push(
            Tensor::vector(out),
            Op::Conv1dMaxPool { seq, filters, bias, width: w, argmax, slope },
            req,
        )
    }

    /// One LSTM step. `state` is `[2×H]` holding `h` in row 0 and `c` in row 1;
    /// `w` is `[dᵢ×4H]`, `u` is `[H×4H]`, `b` is `[4H]`, gates ordered (i, f, g, o).
    pub fn lstm_step(
        &mut self,
        x: NodeId,
        state: NodeId,
        w: NodeId,
        u: NodeId,
        b: NodeId,
    ) -> Result<NodeId, GradError> {
        let (xv, sv, wv, uv, bv) =
            (self.value(x), self.value(state), self.value(w), self.value(u), self.value(b));
        let h = match sv.shape() {
            [2, h] => *h,
            _ => return Err(dims_err("lstm_step state", sv, uv)),
        };
        let di = xv.len();
        if xv.rank() != 1 || wv.shape() != [di, 4 * h] {
            return Err(dims_err("lstm_step input", xv, wv));
        }
        if uv.shape() != [h, 4 * h] || bv.shape() != [4 * h] {
            return Err(dims_err("lstm_step recurrent", uv, bv));
        }
        let (hprev, cprev) = sv.data().split_at(h);
        let mut z = bv.data().to_vec();
        gemm_acc(xv.data(), wv.data(), &mut z, 1, di, 4 * h);
        gemm_acc(hprev, uv.data(), &mut z, 1, h, 4 * h);

        let mut gates = z;
        for (k, g) in gates.iter_mut().enumerate() {
            *g = if (2 * h..3 * h).contains(&k) { g.tanh() } else { sigmoid(*g) };
        }
        let mut out = vec![0.0; 2 * h];
        let mut tanh_c = vec![0.0; h];
        for k in 0..h {
            let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
            let c = f * cprev[k] + i * g;
            tanh_c[k] = c.tanh();
            out[h + k] = c;
            out[k] = o * tanh_c[k];
        }
        let req = [x, state, w, u, b].iter().any(|&n| self.requires(n));
        self.push(
            Tensor::new(vec![2, h], out)?,
            Op::LstmStep { x, state, w, u, b, cache: LstmCache { gates, tanh_c } },
            req,
        )
    }

    /// Hidden vector `h` (row 0) of an LSTM state node.
    pub fn lstm_hidden(&mut self, state: NodeId) -> Result<NodeId, GradError> {
        let sv = self.value(state);
        let h = match sv.shape() {
            [2, h] => *h,
            _ => {
                return Err(GradError::Dimension(format!(
                    "lstm state must be [2×H], got {:?}",
                    sv.shape()
                )))
            }
        };
        let out = Tensor::vector(sv.data()[..h].to_vec());
        let req = self.requires(state);
        self.push(out, Op::LstmHidden(state), req)
    }

    /// Inverted dropout. Identity in eval mode or when `keep_prob == 1`.
    pub fn dropout(&mut self, x: NodeId, keep_prob: f64) -> Result<NodeId, GradError> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(GradError::Config(format!("keep probability {keep_prob} outside (0, 1]")));
        }
        if self.mode == Mode::Eval || keep_prob == 1.0 {
            return Ok(x);
        }
        let n = self.value(x).len();
        let scale = 1.0 / keep_prob;
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.random::<f64>() < keep_prob { scale } else { 0.0 })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let req = self.requires(x);
        self.push(out, Op::Dropout { x, mask }, req)
    }

    /// Cross-entropy of softmax(`logits`) against `gold`, as a scalar node.
    ///
    /// Entries where `mask` is false are excluded from the normalization
    /// (their logits behave as −∞).
    pub fn softmax_xent(
        &mut self,
        logits: NodeId,
        gold: usize,
        mask: Option<&[bool]>,
    ) -> Result<NodeId, GradError> {
        let lv = self.value(logits);
        if lv.rank() != 1 {
            return Err(GradError::Dimension(format!(
                "softmax_xent expects a vector, got {:?}",
                lv.shape()
            )));
        }
        let (loss, probs) = softmax_xent_values(lv.data(), gold, mask)?;
        let req = self.requires(logits);
        self.push(Tensor::scalar(loss), Op::SoftmaxXent { logits, gold, probs }, req)
    }

    /// Softmax probabilities computed by a `softmax_xent` node.
    pub fn probs(&self, id: NodeId) -> Option<&[f64]> {
        match &self.nodes[id.0].op {
            Op::SoftmaxXent { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, GradError> {
        let s = self.value(x).sum();
        let req = self.requires(x);
        self.push(Tensor::scalar(s), Op::Sum(x), req)
    }

    /// Mean of scalar nodes.
    pub fn mean(&mut self, xs: &[NodeId]) -> Result<NodeId, GradError> {
        if xs.is_empty() {
            return Err(GradError::Usage("mean of no nodes".into()));
        }
        let mut total = 0.0;
        for &x in xs {
            let v = self.value(x);
            if v.len() != 1 {
                return Err(GradError::Usage(format!("mean expects scalars, got {:?}", v.shape())));
            }
            total += v.item();
        }
        let req = xs.iter().any(|&x| self.requires(x));
        self.push(Tensor::scalar(total / xs.len() as f64), Op::Mean(xs.to_vec()), req)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId, GradError> {
        let out = self.value(x).map(|v| v * factor);
        let req = self.requires(x);
        self.push(out, Op::Scale(x, factor), req)
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Every parameter in the store gets a gradient of its own shape (zeros if
    /// unreachable); `input` leaves report theirs through [`Gradients::input`].
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, GradError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(GradError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut result = Gradients::zeros_like(self.params);
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if !g.all_finite() {
                return Err(GradError::NonFinite { op: node.op.name(), stage: "backward" });
            }
            self.backprop_node(&node.op, NodeId(idx), g, &mut grads, &mut result)?;
        }
        Ok(result)
    }

    fn backprop_node(
        &self,
        op: &Op,
        id: NodeId,
        g: Tensor,
        grads: &mut [Option<Tensor>],
        out: &mut Gradients,
    ) -> Result<(), GradError> {
        match op {
            Op::Constant => {}
            Op::Input => out.set_input(id, g),
            Op::Param(p) => out.param_mut(*p).add_assign(&g),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.as_matrix_dims().expect("checked in forward");
                let n = bv.shape()[1];
                if self.requires(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_a_bt_acc(g.data(), bv.data(), &mut da, m, n, k);
                    accumulate(grads, *a, av.shape(), &da);
                }
                if self.requires(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_at_b_acc(av.data(), g.data(), &mut db, m, k, n);
                    accumulate(grads, *b, bv.shape(), &db);
                }
            }
            Op::AddBias(x, b) => {
                if self.requires(*b) {
                    let n = self.value(*b).len();
                    let mut db = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(grads, *b, &[n], &db);
                }
                if self.requires(*x) {
                    accumulate(grads, *x, g.shape(), g.data());
                }
            }
            Op::Add(a, b) => {
                for n in [a, b] {
                    if self.requires(*n) {
                        accumulate(grads, *n, g.shape(), g.data());
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires(*a) {
                    let da: Vec<f64> = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    accumulate(grads, *a, av.shape(), &da);
                }
                if self.requires(*b) {
                    let db: Vec<f64> = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    accumulate(grads, *b, bv.shape(), &db);
                }
            }
            Op::Act(kind, x) => {
                let y = self.value(id);
                let dx: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(gv, yv)| gv * kind.derivative_from_output(*yv))
                    .collect();
                accumulate(grads, *x, y.shape(), &dx);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    if self.requires(*p) {
                        accumulate(grads, *p, &[n], &g.data()[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::Conv1dMaxPool { seq, filters, bias, width, argmax, slope } => {
                let (sv, fv) = (self.value(*seq), self.value(*filters));
                let (t, d) = (sv.shape()[0], sv.shape()[1]);
                let f = fv.shape()[2];
                let wd = width * d;
                let dz: Vec<f64> = g.data().iter().zip(slope).map(|(a, b)| a * b).collect();
                if self.requires(*bias) {
                    accumulate(grads, *bias, &[f], &dz);
                }
                if self.requires(*filters) {
                    let windows = im2col(sv.data(), t, d, *width);
                    let mut dw = vec![0.0; wd * f];
                    for j in 0..f {
                        if dz[j] == 0.0 {
                            continue;
                        }
                        let win = &windows[argmax[j] * wd..(argmax[j] + 1) * wd];
                        for (k, xv) in win.iter().enumerate() {
                            dw[k * f + j] += xv * dz[j];
                        }
                    }
                    accumulate(grads, *filters, fv.shape(), &dw);
                }
                if self.requires(*seq) {
                    let mut dseq = vec![0.0; t * d];
                    for j in 0..f {
                        if dz[j] == 0.0 {
                            continue;
                        }
                        let start = argmax[j] * d;
                        for k in 0..wd {
                            // rows beyond T are padding and carry no gradient
                            if start + k < t * d {
                                dseq[start + k] += fv.data()[k * f + j] * dz[j];
                            }
                        }
                    }
                    accumulate(grads, *seq, sv.shape(), &dseq);
                }
            }
            Op::LstmStep { x, state, w, u, b, cache } => {
                let sv = self.value(*state);
                let h = sv.shape()[1];
                let (hprev, cprev) = sv.data().split_at(h);
                let (dh, dc_next) = g.data().split_at(h);
                let gates = &cache.gates;
                let mut dz = vec![0.0; 4 * h];
                let mut dc_prev = vec![0.0; h];
                for k in 0..h {
                    let (i, f, gg, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
                    let tc = cache.tanh_c[k];
                    let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
                    dz[k] = dc * gg * i * (1.0 - i);
                    dz[h + k] = dc * cprev[k] * f * (1.0 - f);
                    dz[2 * h + k] = dc * i * (1.0 - gg * gg);
                    dz[3 * h + k] = dh[k] * tc * o * (1.0 - o);
                    dc_prev[k] = dc * f;
                }
                let (xv, wv, uv) = (self.value(*x), self.value(*w), self.value(*u));
                let di = xv.len();
                if self.requires(*b) {
                    accumulate(grads, *b, &[4 * h], &dz);
                }
                if self.requires(*w) {
                    let mut dw = vec![0.0; di * 4 * h];
                    gemm_at_b_acc(xv.data(), &dz, &mut dw, 1, di, 4 * h);
                    accumulate(grads, *w, wv.shape(), &dw);
                }
                if self.requires(*u) {
                    let mut du = vec![0.0; h * 4 * h];
                    gemm_at_b_acc(hprev, &dz, &mut du, 1, h, 4 * h);
                    accumulate(grads, *u, uv.shape(), &du);
                }
                if self.requires(*x) {
                    let mut dx = vec![0.0; di];
                    gemm_a_bt_acc(&dz, wv.data(), &mut dx, 1, 4 * h, di);
                    accumulate(grads, *x, xv.shape(), &dx);
                }
                if self.requires(*state) {
                    let mut ds = vec![0.0; 2 * h];
                    gemm_a_bt_acc(&dz, uv.data(), &mut ds[..h], 1, 4 * h, h);
                    ds[h..].copy_from_slice(&dc_prev);
                    accumulate(grads, *state, &[2, h], &ds);
                }
            }
            Op::LstmHidden(state) => {
                let h = g.len();
                let mut ds = vec![0.0; 2 * h];
                ds[..h].copy_from_slice(g.data());
                accumulate(grads, *state, &[2, h], &ds);
            }
            Op::Dropout { x, mask } => {
                let dx: Vec<f64> = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                accumulate(grads, *x, g.shape(), &dx);
            }
            Op::SoftmaxXent { logits, gold, probs } => {
                let scale = g.item();
                let mut dl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                dl[*gold] -= scale;
                accumulate(grads, *logits, &[dl.len()], &dl);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                let dx = vec![g.item(); xv.len()];
                accumulate(grads, *x, xv.shape(), &dx);
            }
            Op::Mean(xs) => {
                let share = g.item() / xs.len() as f64;
                for x in xs {
                    if self.requires(*x) {
                        let shape = self.value(*x).shape().to_vec();
                        accumulate(grads, *x, &shape, &[share]);
                    }
                }
            }
            Op::Scale(x, factor) => {
                let dx: Vec<f64> = g.data().iter().map(|v| v * factor).collect();
                accumulate(grads, *x, g.shape(), &dx);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, shape: &[usize], delta: &[f64]) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(delta) {
                *e += d;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), delta.to_vec()).expect("gradient shape"));
        }
    }
}

fn dims_err(op: &str, a: &Tensor, b: &Tensor) -> GradError {
    GradError::Dimension(format!("{op}: incompatible shapes {:?} and {:?}", a.shape(), b.shape()))
}

/// Sliding windows of `width` rows over a `[t×d]` sequence zero-padded to
/// `max(t, width)` rows, flattened to `[positions × (width·d)]`.
fn im2col(seq: &[f64], t: usize, d: usize, width: usize) -> Vec<f64> {
    let padded_len = t.max(width);
    let positions = padded_len - width + 1;
    let mut padded = seq.to_vec();
    padded.resize(padded_len * d, 0.0);
    let mut out = Vec::with_capacity(positions * width * d);
    for p in 0..positions {
        out.extend_from_slice(&padded[p * d..(p + width) * d]);
    }
    out
}

/// Stable (max-subtracted) softmax cross-entropy. Returns the loss and the
/// probability vector; masked-out entries get probability 0.
pub fn softmax_xent_values(
    logits: &[f64],
    gold: usize,
    mask: Option<&[bool]>,
) -> Result<(f64, Vec<f64>), GradError> {
    let k = logits.len();
    if gold >= k {
        return Err(GradError::Index { index: gold, len: k });
    }
    let probs = masked_softmax(logits, mask)?;
    if probs[gold] == 0.0 && mask.is_some_and(|m| !m[gold]) {
        return Err(GradError::Config(format!("gold action {gold} is masked out")));
    }
    let allowed = |i: usize| mask.is_none_or(|m| m[i]);
    let max = (0..k).filter(|&i| allowed(i)).map(|i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    let log_z = (0..k).filter(|&i| allowed(i)).map(|i| (logits[i] - max).exp()).sum::<f64>().ln();
    let loss = -(logits[gold] - max - log_z);
    Ok((loss, probs))
}

/// Softmax restricted to permitted entries.
pub fn masked_softmax(logits: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>, GradError> {
    if let Some(m) = mask {
        if m.len() != logits.len() {
            return Err(GradError::Dimension(format!(
                "mask has {} entries for {} logits",
                m.len(),
                logits.len()
            )));
        }
        if !m.iter().any(|&b| b) {
            return Err(GradError::Config("action mask permits nothing".into()));
        }
    }
    let allowed = |i: usize| mask.is_none_or(|m| m[i]);
    let max = (0..logits.len())
        .filter(|&i| allowed(i))
        .map(|i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, &l)| if allowed(i) { (l - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= z;
    }
    Ok(probs)
}
