//! Reverse-mode differentiation over a linear tape.
//!
//! Every forward op appends a node holding its output value and enough saved
//! state to compute the vector-Jacobian product later. Nodes are appended
//! after their inputs, so walking the vector backwards is a valid reverse
//! topological order.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use super::tensor::{
    dot, matmul_into, matmul_nt_into, matmul_tn_into, sigmoid, softmax_in_place, Tensor,
};
use crate::error::{Error, Result};

/// Clamp applied to probabilities inside [`Var::bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

/// How the recency decay `exp(-λD)` is combined with the similarity row
/// before normalisation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayForm {
    /// `softmax(S - λD)`, i.e. weights proportional to `exp(-λD) ⊙ exp(S)`.
    Additive,
    /// `softmax(exp(-λD) ⊙ S)`.
    Multiplicative,
}

/// Pre-softmax score for one history slot at time distance `dist`.
#[inline]
pub fn decayed_score(score: f64, dist: f64, lambda: f64, form: DecayForm) -> f64 {
    match form {
        DecayForm::Additive => score - lambda * dist,
        DecayForm::Multiplicative => score * (-lambda * dist).exp(),
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceRows(usize, usize),
    GatherRows(usize, Vec<usize>),
    Sum(usize),
    MeanRows(usize),
    MaxRows(usize, Vec<usize>),
    SoftmaxRows(usize),
    Bce {
        pred: usize,
        target: Tensor,
        mask: Tensor,
    },
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Tensor,
    },
    TanhRnn {
        xu: usize,
        w: usize,
    },
    Conv1d {
        x: usize,
        w: usize,
        window: usize,
    },
    DecayAttention {
        scores: Option<usize>,
        lambda: f64,
        form: DecayForm,
    },
    GraphAttention {
        z: usize,
        a: usize,
        adj: Rc<Vec<Vec<usize>>>,
        alpha: Vec<Vec<f64>>,
        pre: Vec<Vec<f64>>,
        slope: f64,
    },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | MatMulNt(a, b) | Add(a, b) | AddRow(a, b) | Sub(a, b) | Mul(a, b) => {
                vec![*a, *b]
            }
            Scale(a, _) | Tanh(a) | Sigmoid(a) | Exp(a) | Relu(a) | LeakyRelu(a, _) => vec![*a],
            ConcatCols(xs) | ConcatRows(xs) => xs.clone(),
            SliceRows(a, _) | GatherRows(a, _) | Sum(a) | MeanRows(a) | MaxRows(a, _) => vec![*a],
            SoftmaxRows(a) => vec![*a],
            Bce { pred, .. } => vec![*pred],
            CrossEntropy { logits, .. } => vec![*logits],
            TanhRnn { xu, w } => vec![*xu, *w],
            Conv1d { x, w, .. } => vec![*x, *w],
            DecayAttention { scores, .. } => scores.iter().copied().collect(),
            GraphAttention { z, a, .. } => vec![*z, *a],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Gradients produced by a backward pass, indexed by node.
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `v` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var<'_>) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let [r, c] = v.shape();
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(v.id).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = op.inputs().iter().any(|&i| nodes[i].needs_grad);
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    /// Trainable input; its gradient is available after [`Tape::backward`].
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Weights `softmax(decay(1, D))` for every causal row, ignoring similarity.
    pub fn decay_weights(&self, n: usize, lambda: f64, form: DecayForm) -> Var<'_> {
        let value = decay_attention_forward(None, n, lambda, form);
        self.push(
            value,
            Op::DecayAttention {
                scores: None,
                lambda,
                form,
            },
        )
    }

    /// Reverse pass from a `1 × 1` loss.
    pub fn backward(&self, loss: Var<'_>) -> Result<Grads> {
        let [r, c] = loss.shape();
        if r != 1 || c != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {r}x{c}"
            )));
        }
        self.backward_from(loss, Tensor::scalar(1.0))
    }

    /// Reverse pass seeded with an arbitrary upstream gradient for `root`.
    pub fn backward_from(&self, root: Var<'_>, seed: Tensor) -> Result<Grads> {
        if !std::ptr::eq(root.tape, self) {
            return Err(Error::Contract("root belongs to a different tape".into()));
        }
        if seed.shape() != root.shape() {
            return Err(Error::dim(format!(
                "seed shape {:?} does not match root {:?}",
                seed.shape(),
                root.shape()
            )));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(seed);
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            propagate(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Grads { grads })
    }
}

fn acc<'a>(nodes: &[Node], grads: &'a mut [Option<Tensor>], id: usize) -> Option<&'a mut Tensor> {
    if !nodes[id].needs_grad {
        return None;
    }
    let [r, c] = nodes[id].value.shape();
    Some(grads[id].get_or_insert_with(|| Tensor::zeros(r, c)))
}

fn propagate(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &nodes[id].value;
    let val = |i: usize| &nodes[i].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            // dA = dC·Bᵀ, dB = Aᵀ·dC
            if let Some(ga) = acc(nodes, grads, *a) {
                matmul_nt_into(g, val(*b), ga);
            }
            if let Some(gb) = acc(nodes, grads, *b) {
                matmul_tn_into(val(*a), g, gb);
            }
        }
        Op::MatMulNt(a, b) => {
            // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
            if let Some(ga) = acc(nodes, grads, *a) {
                matmul_into(g, val(*b), ga);
            }
            if let Some(gb) = acc(nodes, grads, *b) {
                matmul_tn_into(g, val(*a), gb);
            }
        }
        Op::Add(a, b) => {
            if let Some(ga) = acc(nodes, grads, *a) {
                ga.add_assign(g);
            }
            if let Some(gb) = acc(nodes, grads, *b) {
                gb.add_assign(g);
            }
        }
        Op::AddRow(a, b) => {
            if let Some(ga) = acc(nodes, grads, *a) {
                ga.add_assign(g);
            }
            if let Some(gb) = acc(nodes, grads, *b) {
                let cols = g.cols();
                let gbd = gb.data_mut();
                for r in 0..g.rows() {
                    for (o, v) in gbd.iter_mut().zip(&g.data()[r * cols..(r + 1) * cols]) {
                        *o += v;
                    }
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = acc(nodes, grads, *a) {
                ga.add_assign(g);
            }
            if let Some(gb) = acc(nodes, grads, *b) {
                for (o, v) in gb.data_mut().iter_mut().zip(g.data()) {
                    *o -= v;
                }
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            if let Some(ga) = acc(nodes, grads, *a) {
                for ((o, gv), y) in ga.data_mut().iter_mut().zip(g.data()).zip(bv) {
                    *o += gv * y;
                }
            }
            if let Some(gb) = acc(nodes, grads, *b) {
                for ((o, gv), x) in gb.data_mut().iter_mut().zip(g.data()).zip(av) {
                    *o += gv * x;
                }
            }
        }
        Op::Scale(a, k) => {
            if let Some(ga) = acc(nodes, grads, *a) {
                for (o, gv) in ga.data_mut().iter_mut().zip(g.data()) {
                    *o += gv * k;
                }
            }
        }
        Op::Tanh(a) => unary(nodes, grads, *a, g, out, |_, y| 1.0 - y * y),
        Op::Sigmoid(a) => unary(nodes, grads, *a, g, out, |_, y| y * (1.0 - y)),
        Op::Exp(a) => unary(nodes, grads, *a, g, out, |_, y| y),
        Op::Relu(a) => unary(
            nodes,
            grads,
            *a,
            g,
            out,
            |x, _| if x > 0.0 { 1.0 } else { 0.0 },
        ),
        Op::LeakyRelu(a, s) => {
            let s = *s;
            unary(
                nodes,
                grads,
                *a,
                g,
                out,
                move |x, _| if x > 0.0 { 1.0 } else { s },
            )
        }
        Op::ConcatCols(xs) => {
            let mut offset = 0;
            for &x in xs {
                let w = val(x).cols();
                if let Some(gx) = acc(nodes, grads, x) {
                    for r in 0..g.rows() {
                        let src = &g.row_slice(r)[offset..offset + w];
                        for (o, v) in gx.row_slice_mut(r).iter_mut().zip(src) {
                            *o += v;
                        }
                    }
                }
                offset += w;
            }
        }
        Op::ConcatRows(xs) => {
            let mut offset = 0;
            for &x in xs {
                let h = val(x).rows();
                if let Some(gx) = acc(nodes, grads, x) {
                    let n = gx.len();
                    let start = offset * g.cols();
                    for (o, v) in gx.data_mut().iter_mut().zip(&g.data()[start..start + n]) {
                        *o += v;
                    }
                }
                offset += h;
            }
        }
        Op::SliceRows(a, start) => {
            if let Some(ga) = acc(nodes, grads, *a) {
                let cols = g.cols();
                let dst = &mut ga.data_mut()[start * cols..start * cols + g.len()];
                for (o, v) in dst.iter_mut().zip(g.data()) {
                    *o += v;
                }
            }
        }
        Op::GatherRows(a, idx) => {
            if let Some(ga) = acc(nodes, grads, *a) {
                for (r, &i) in idx.iter().enumerate() {
                    for (o, v) in ga.row_slice_mut(i).iter_mut().zip(g.row_slice(r)) {
                        *o += v;
                    }
                }
            }
        }
        Op::Sum(a) => {
            let gv = g.item();
            if let Some(ga) = acc(nodes, grads, *a) {
                for o in ga.data_mut() {
                    *o += gv;
                }
            }
        }
        Op::MeanRows(a) => {
            if let Some(ga) = acc(nodes, grads, *a) {
                let n = ga.rows() as f64;
                for r in 0..ga.rows() {
                    for (o, v) in ga.row_slice_mut(r).iter_mut().zip(g.data()) {
                        *o += v / n;
                    }
                }
            }
        }
        Op::MaxRows(a, argmax) => {
            if let Some(ga) = acc(nodes, grads, *a) {
                for (c, &r) in argmax.iter().enumerate() {
                    let v = ga.get(r, c) + g.data()[c];
                    ga.set(r, c, v);
                }
            }
        }
        Op::SoftmaxRows(a) => {
            if let Some(ga) = acc(nodes, grads, *a) {
                for r in 0..out.rows() {
                    let y = out.row_slice(r);
                    let gy = g.row_slice(r);
                    let inner = dot(y, gy);
                    for ((o, yv), gv) in ga.row_slice_mut(r).iter_mut().zip(y).zip(gy) {
                        *o += yv * (gv - inner);
                    }
                }
            }
        }
        Op::Bce { pred, target, mask } => {
            let gv = g.item();
            if let Some(gp) = acc(nodes, grads, *pred) {
                let p = val(*pred).data();
                for i in 0..p.len() {
                    let m = mask.data()[i];
                    if m == 0.0 || p[i] < BCE_EPS || p[i] > 1.0 - BCE_EPS {
                        continue;
                    }
                    let t = target.data()[i];
                    gp.data_mut()[i] += gv * m * (-t / p[i] + (1.0 - t) / (1.0 - p[i]));
                }
            }
        }
        Op::CrossEntropy {
            logits,
            labels,
            probs,
        } => {
            if let Some(gl) = acc(nodes, grads, *logits) {
                let k = g.item() / labels.len() as f64;
                for (r, &y) in labels.iter().enumerate() {
                    for (c, (o, p)) in gl
                        .row_slice_mut(r)
                        .iter_mut()
                        .zip(probs.row_slice(r))
                        .enumerate()
                    {
                        let onehot = if c == y { 1.0 } else { 0.0 };
                        *o += k * (p - onehot);
                    }
                }
            }
        }
        Op::TanhRnn { xu, w } => tanh_rnn_backward(nodes, grads, *xu, *w, out, g),
        Op::Conv1d { x, w, window } => conv1d_backward(nodes, grads, *x, *w, *window, g),
        Op::DecayAttention {
            scores,
            lambda,
            form,
        } => {
            if let Some(s) = scores {
                if let Some(gs) = acc(nodes, grads, *s) {
                    decay_attention_backward(out, g, *lambda, *form, gs);
                }
            }
        }
        Op::GraphAttention {
            z,
            a,
            adj,
            alpha,
            pre,
            slope,
        } => graph_attention_backward(nodes, grads, *z, *a, adj, alpha, pre, *slope, g),
    }
}

fn unary(
    nodes: &[Node],
    grads: &mut [Option<Tensor>],
    a: usize,
    g: &Tensor,
    out: &Tensor,
    deriv: impl Fn(f64, f64) -> f64,
) {
    let x = nodes[a].value.data();
    if let Some(ga) = acc(nodes, grads, a) {
        for (((o, gv), xv), yv) in ga
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(x)
            .zip(out.data())
        {
            *o += gv * deriv(*xv, *yv);
        }
    }
}

fn same_shape(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "{what}: shapes {}x{} and {}x{} differ",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value(self.id).clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.value(self.id))
    }

    pub fn shape(&self) -> [usize; 2] {
        self.tape.value(self.id).shape()
    }

    pub fn rows(&self) -> usize {
        self.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.shape()[1]
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = self.tape.value(self.id).map(f);
        self.tape.push(value, op)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let value = self
            .tape
            .value(self.id)
            .matmul(&self.tape.value(other.id))?;
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id)))
    }

    /// `self · otherᵀ`; the usual shape for a linear layer with `out × in` weights.
    pub fn matmul_nt(self, other: Var<'t>) -> Result<Var<'t>> {
        let value = self
            .tape
            .value(self.id)
            .matmul_nt(&self.tape.value(other.id))?;
        Ok(self.tape.push(value, Op::MatMulNt(self.id, other.id)))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let (a, b) = (self.tape.value(self.id), self.tape.value(other.id));
            same_shape("add", &a, &b)?;
            let mut v = a.clone();
            v.add_assign(&b);
            v
        };
        Ok(self.tape.push(value, Op::Add(self.id, other.id)))
    }

    /// Adds a `1 × n` row to every row of `self`.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let (a, b) = (self.tape.value(self.id), self.tape.value(row.id));
            if b.rows() != 1 || b.cols() != a.cols() {
                return Err(Error::dim(format!(
                    "add_row: cannot broadcast {}x{} over {}x{}",
                    b.rows(),
                    b.cols(),
                    a.rows(),
                    a.cols()
                )));
            }
            let mut v = a.clone();
            for r in 0..v.rows() {
                for (o, x) in v.row_slice_mut(r).iter_mut().zip(b.data()) {
                    *o += x;
                }
            }
            v
        };
        Ok(self.tape.push(value, Op::AddRow(self.id, row.id)))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let (a, b) = (self.tape.value(self.id), self.tape.value(other.id));
            same_shape("sub", &a, &b)?;
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
            Tensor::new(a.rows(), a.cols(), data)?
        };
        Ok(self.tape.push(value, Op::Sub(self.id, other.id)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let (a, b) = (self.tape.value(self.id), self.tape.value(other.id));
            same_shape("mul", &a, &b)?;
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
            Tensor::new(a.rows(), a.cols(), data)?
        };
        Ok(self.tape.push(value, Op::Mul(self.id, other.id)))
    }

    pub fn scale(self, k: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, k), |x| x * k)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.unary(Op::LeakyRelu(self.id, slope), move |x| {
            if x > 0.0 {
                x
            } else {
                slope * x
            }
        })
    }

    /// Side-by-side concatenation; `[1, 2] ⊕ [3] = [1, 2, 3]` for row vectors.
    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let tape = parts
            .first()
            .ok_or_else(|| Error::dim("concat of nothing"))?
            .tape;
        let value = {
            let vals: Vec<Ref<'_, Tensor>> = parts.iter().map(|p| tape.value(p.id)).collect();
            let rows = vals[0].rows();
            if vals.iter().any(|v| v.rows() != rows) {
                return Err(Error::dim("concat_cols: row counts differ"));
            }
            let cols: usize = vals.iter().map(|v| v.cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for v in &vals {
                    data.extend_from_slice(v.row_slice(r));
                }
            }
            Tensor::new(rows, cols, data)?
        };
        Ok(tape.push(value, Op::ConcatCols(parts.iter().map(|p| p.id).collect())))
    }

    /// Stacks inputs vertically.
    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let tape = parts
            .first()
            .ok_or_else(|| Error::dim("concat of nothing"))?
            .tape;
        let value = {
            let vals: Vec<Ref<'_, Tensor>> = parts.iter().map(|p| tape.value(p.id)).collect();
            let cols = vals[0].cols();
            if vals.iter().any(|v| v.cols() != cols) {
                return Err(Error::dim("concat_rows: column counts differ"));
            }
            let rows: usize = vals.iter().map(|v| v.rows()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for v in &vals {
                data.extend_from_slice(v.data());
            }
            Tensor::new(rows, cols, data)?
        };
        Ok(tape.push(value, Op::ConcatRows(parts.iter().map(|p| p.id).collect())))
    }

    /// Rows `start..end`.
    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'t>> {
        let value = {
            let a = self.tape.value(self.id);
            if start >= end || end > a.rows() {
                return Err(Error::Index(format!("rows {start}..{end} of {}", a.rows())));
            }
            let c = a.cols();
            Tensor::new(end - start, c, a.data()[start * c..end * c].to_vec())?
        };
        Ok(self.tape.push(value, Op::SliceRows(self.id, start)))
    }

    pub fn gather_rows(self, idx: &[usize]) -> Result<Var<'t>> {
        let value = self.tape.value(self.id).gather_rows(idx)?;
        Ok(self.tape.push(value, Op::GatherRows(self.id, idx.to_vec())))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.tape.value(self.id).data().iter().sum();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id))
    }

    /// Column means over rows, `1 × cols`.
    pub fn mean_rows(self) -> Var<'t> {
        let value = {
            let a = self.tape.value(self.id);
            let n = a.rows() as f64;
            let mut out = Tensor::zeros(1, a.cols());
            for r in 0..a.rows() {
                for (o, v) in out.data_mut().iter_mut().zip(a.row_slice(r)) {
                    *o += v;
                }
            }
            out.scale_assign(1.0 / n);
            out
        };
        self.tape.push(value, Op::MeanRows(self.id))
    }

    /// Column maxima over rows (max-over-time pooling), `1 × cols`.
    pub fn max_rows(self) -> Var<'t> {
        let (value, argmax) = {
            let a = self.tape.value(self.id);
            let mut out = a.row_slice(0).to_vec();
            let mut arg = vec![0; a.cols()];
            for r in 1..a.rows() {
                for (c, v) in a.row_slice(r).iter().enumerate() {
                    if *v > out[c] {
                        out[c] = *v;
                        arg[c] = r;
                    }
                }
            }
            (Tensor::row(&out), arg)
        };
        self.tape.push(value, Op::MaxRows(self.id, argmax))
    }

    /// Softmax of a single `1 × n` row.
    pub fn softmax_row(self) -> Result<Var<'t>> {
        let [r, _] = self.shape();
        if r != 1 {
            return Err(Error::dim(format!("softmax_row expects one row, got {r}")));
        }
        Ok(self.softmax_rows())
    }

    /// Independent max-subtracted softmax of every row.
    pub fn softmax_rows(self) -> Var<'t> {
        let value = {
            let mut v = self.tape.value(self.id).clone();
            for r in 0..v.rows() {
                softmax_in_place(v.row_slice_mut(r));
            }
            v
        };
        self.tape.push(value, Op::SoftmaxRows(self.id))
    }

    /// Masked binary cross-entropy summed over steps with `mask = 1`.
    /// Probabilities are clamped to `[ε, 1-ε]`.
    pub fn bce_loss(self, target: &Tensor, mask: &Tensor) -> Result<Var<'t>> {
        let value = {
            let p = self.tape.value(self.id);
            same_shape("bce target", &p, target)?;
            same_shape("bce mask", &p, mask)?;
            let mut loss = 0.0;
            for i in 0..p.len() {
                let m = mask.data()[i];
                if m == 0.0 {
                    continue;
                }
                let q = p.data()[i].clamp(BCE_EPS, 1.0 - BCE_EPS);
                let t = target.data()[i];
                loss += m * -(t * q.ln() + (1.0 - t) * (1.0 - q).ln());
            }
            Tensor::scalar(loss)
        };
        Ok(self.tape.push(
            value,
            Op::Bce {
                pred: self.id,
                target: target.clone(),
                mask: mask.clone(),
            },
        ))
    }

    /// Mean softmax cross-entropy of `batch × classes` logits.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'t>> {
        let (value, probs) = {
            let z = self.tape.value(self.id);
            if labels.len() != z.rows() {
                return Err(Error::dim(format!(
                    "{} labels for {} rows",
                    labels.len(),
                    z.rows()
                )));
            }
            let mut probs = z.clone();
            let mut loss = 0.0;
            for (r, &y) in labels.iter().enumerate() {
                if y >= z.cols() {
                    return Err(Error::Index(format!("label {y} with {} classes", z.cols())));
                }
                let row = probs.row_slice_mut(r);
                softmax_in_place(row);
                loss -= row[y].max(f64::MIN_POSITIVE).ln();
            }
            (Tensor::scalar(loss / labels.len() as f64), probs)
        };
        Ok(self.tape.push(
            value,
            Op::CrossEntropy {
                logits: self.id,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Elman recurrence over rows: `s_k = tanh(xu_k + W s_{k-1})`, `s_{-1} = 0`.
    ///
    /// `self` carries the already-projected inputs plus bias (`n × H`),
    /// `w` is the `H × H` recurrent matrix. Returns all states, `n × H`.
    pub fn tanh_rnn(self, w: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let xu = self.tape.value(self.id);
            let wv = self.tape.value(w.id);
            let h = xu.cols();
            if wv.rows() != h || wv.cols() != h {
                return Err(Error::dim(format!(
                    "tanh_rnn: recurrent matrix {}x{} for state width {h}",
                    wv.rows(),
                    wv.cols()
                )));
            }
            let mut out = xu.clone();
            for k in 0..out.rows() {
                if k > 0 {
                    let (prev_rows, rest) = out.data_mut().split_at_mut(k * h);
                    let prev = &prev_rows[(k - 1) * h..];
                    let cur = &mut rest[..h];
                    for (i, c) in cur.iter_mut().enumerate() {
                        *c += dot(wv.row_slice(i), prev);
                    }
                }
                for c in out.row_slice_mut(k) {
                    *c = c.tanh();
                }
            }
            out
        };
        Ok(self.tape.push(
            value,
            Op::TanhRnn {
                xu: self.id,
                w: w.id,
            },
        ))
    }

    /// Valid 1-D convolution over rows: each output row `t` is `W · vec(x[t..t+window])`.
    /// `w` is `features × (window · cols)`.
    pub fn conv1d(self, w: Var<'t>, window: usize) -> Result<Var<'t>> {
        let value = {
            let x = self.tape.value(self.id);
            let wv = self.tape.value(w.id);
            let e = x.cols();
            if window == 0 || x.rows() < window {
                return Err(Error::dim(format!(
                    "conv1d: {} rows for window {window}",
                    x.rows()
                )));
            }
            if wv.cols() != window * e {
                return Err(Error::dim(format!(
                    "conv1d: kernel {}x{} for window {window} over width {e}",
                    wv.rows(),
                    wv.cols()
                )));
            }
            let steps = x.rows() - window + 1;
            let mut out = Tensor::zeros(steps, wv.rows());
            for t in 0..steps {
                let patch = &x.data()[t * e..(t + window) * e];
                for f in 0..wv.rows() {
                    out.set(t, f, dot(wv.row_slice(f), patch));
                }
            }
            out
        };
        Ok(self.tape.push(
            value,
            Op::Conv1d {
                x: self.id,
                w: w.id,
                window,
            },
        ))
    }

    /// Causal decay attention over a full `n × n` similarity matrix.
    ///
    /// Row `i` attends over history `j < i` at distance `D = i - 1 - j` with
    /// weights `softmax_j(decay(S_ij, D))`; entries `j ≥ i` are exactly zero,
    /// and row 0 (no history) is all zero.
    pub fn decay_attention(self, lambda: f64, form: DecayForm) -> Result<Var<'t>> {
        let value = {
            let s = self.tape.value(self.id);
            if s.rows() != s.cols() {
                return Err(Error::dim(format!(
                    "decay_attention: {}x{} is not square",
                    s.rows(),
                    s.cols()
                )));
            }
            decay_attention_forward(Some(&s), s.rows(), lambda, form)
        };
        Ok(self.tape.push(
            value,
            Op::DecayAttention {
                scores: Some(self.id),
                lambda,
                form,
            },
        ))
    }

    /// One graph-attention aggregation.
    ///
    /// `self` holds projected node features `z` (`N × d`), `a` is the `1 × 2d`
    /// attention vector. For node `i` with neighbourhood `adj[i]` (self included)
    /// `e_ij = LeakyReLU(a · [z_i ⊕ z_j])`, `α_i = softmax(e_i)`, `out_i = Σ α_ij z_j`.
    pub fn graph_attention(
        self,
        a: Var<'t>,
        adj: Rc<Vec<Vec<usize>>>,
        slope: f64,
    ) -> Result<Var<'t>> {
        let (value, alpha, pre) = {
            let z = self.tape.value(self.id);
            let av = self.tape.value(a.id);
            let d = z.cols();
            if av.rows() != 1 || av.cols() != 2 * d {
                return Err(Error::dim(format!(
                    "graph_attention: attention vector {}x{} for width {d}",
                    av.rows(),
                    av.cols()
                )));
            }
            if adj.len() != z.rows() {
                return Err(Error::dim(format!(
                    "{} adjacency lists for {} nodes",
                    adj.len(),
                    z.rows()
                )));
            }
            graph_attention_forward(&z, &av, &adj, slope)?
        };
        Ok(self.tape.push(
            value,
            Op::GraphAttention {
                z: self.id,
                a: a.id,
                adj,
                alpha,
                pre,
                slope,
            },
        ))
    }
}

pub(crate) fn decay_attention_forward(
    scores: Option<&Tensor>,
    n: usize,
    lambda: f64,
    form: DecayForm,
) -> Tensor {
    let mut out = Tensor::zeros(n, n);
    for i in 1..n {
        let row = &mut out.row_slice_mut(i)[..i];
        for (j, slot) in row.iter_mut().enumerate() {
            let s = scores.map_or(1.0, |s| s.get(i, j));
            *slot = decayed_score(s, (i - 1 - j) as f64, lambda, form);
        }
        softmax_in_place(row);
    }
    out
}

fn decay_attention_backward(
    out: &Tensor,
    g: &Tensor,
    lambda: f64,
    form: DecayForm,
    gs: &mut Tensor,
) {
    for i in 1..out.rows() {
        let a = &out.row_slice(i)[..i];
        let ga = &g.row_slice(i)[..i];
        let inner = dot(a, ga);
        for j in 0..i {
            let dscore = a[j] * (ga[j] - inner);
            let factor = match form {
                DecayForm::Additive => 1.0,
                DecayForm::Multiplicative => (-lambda * (i - 1 - j) as f64).exp(),
            };
            let v = gs.get(i, j) + dscore * factor;
            gs.set(i, j, v);
        }
    }
}

type GatForward = (Tensor, Vec<Vec<f64>>, Vec<Vec<f64>>);

pub(crate) fn graph_attention_forward(
    z: &Tensor,
    a: &Tensor,
    adj: &[Vec<usize>],
    slope: f64,
) -> Result<GatForward> {
    let d = z.cols();
    let (a_src, a_dst) = a.data().split_at(d);
    let src: Vec<f64> = (0..z.rows()).map(|i| dot(z.row_slice(i), a_src)).collect();
    let dst: Vec<f64> = (0..z.rows()).map(|i| dot(z.row_slice(i), a_dst)).collect();
    let mut out = Tensor::zeros(z.rows(), d);
    let mut alphas = Vec::with_capacity(z.rows());
    let mut pres = Vec::with_capacity(z.rows());
    for (i, nbrs) in adj.iter().enumerate() {
        if nbrs.is_empty() {
            return Err(Error::Contract(format!(
                "node {i} has an empty neighbourhood"
            )));
        }
        let pre: Vec<f64> = nbrs
            .iter()
            .map(|&j| {
                if j >= z.rows() {
                    return Err(Error::Index(format!("neighbour {j} of node {i}")));
                }
                Ok(src[i] + dst[j])
            })
            .collect::<Result<_>>()?;
        let mut alpha: Vec<f64> = pre
            .iter()
            .map(|&x| if x > 0.0 { x } else { slope * x })
            .collect();
        softmax_in_place(&mut alpha);
        let orow = out.row_slice_mut(i);
        for (&j, &w) in nbrs.iter().zip(&alpha) {
            for (o, v) in orow.iter_mut().zip(z.row_slice(j)) {
                *o += w * v;
            }
        }
        alphas.push(alpha);
        pres.push(pre);
    }
    Ok((out, alphas, pres))
}

#[allow(clippy::too_many_arguments)]
fn graph_attention_backward(
    nodes: &[Node],
    grads: &mut [Option<Tensor>],
    z_id: usize,
    a_id: usize,
    adj: &[Vec<usize>],
    alpha: &[Vec<f64>],
    pre: &[Vec<f64>],
    slope: f64,
    g: &Tensor,
) {
    let z = &nodes[z_id].value;
    let a = &nodes[a_id].value;
    let d = z.cols();
    let (a_src, a_dst) = a.data().split_at(d);
    let mut gz = Tensor::zeros(z.rows(), d);
    let mut ga = vec![0.0; 2 * d];
    for (i, nbrs) in adj.iter().enumerate() {
        let gi = g.row_slice(i);
        let dalpha: Vec<f64> = nbrs.iter().map(|&j| dot(gi, z.row_slice(j))).collect();
        let inner = dot(&alpha[i], &dalpha);
        for (k, &j) in nbrs.iter().enumerate() {
            let w = alpha[i][k];
            for (o, v) in gz.row_slice_mut(j).iter_mut().zip(gi) {
                *o += w * v;
            }
            let de = w * (dalpha[k] - inner);
            let dpre = de * if pre[i][k] > 0.0 { 1.0 } else { slope };
            if dpre == 0.0 {
                continue;
            }
            for c in 0..d {
                gz.data_mut()[i * d + c] += dpre * a_src[c];
                gz.data_mut()[j * d + c] += dpre * a_dst[c];
                ga[c] += dpre * z.get(i, c);
                ga[d + c] += dpre * z.get(j, c);
            }
        }
    }
    if let Some(t) = acc(nodes, grads, z_id) {
        t.add_assign(&gz);
    }
    if let Some(t) = acc(nodes, grads, a_id) {
        for (o, v) in t.data_mut().iter_mut().zip(&ga) {
            *o += v;
        }
    }
}

fn tanh_rnn_backward(
    nodes: &[Node],
    grads: &mut [Option<Tensor>],
    xu_id: usize,
    w_id: usize,
    states: &Tensor,
    g: &Tensor,
) {
    let w = &nodes[w_id].value;
    let (n, h) = (states.rows(), states.cols());
    let mut dpre = Tensor::zeros(n, h);
    let mut carry = vec![0.0; h];
    for k in (0..n).rev() {
        let s = states.row_slice(k);
        let gk = g.row_slice(k);
        let row = dpre.row_slice_mut(k);
        for i in 0..h {
            row[i] = (gk[i] + carry[i]) * (1.0 - s[i] * s[i]);
        }
        // carry = Wᵀ · dpre_k
        carry.fill(0.0);
        for (i, &dp) in row.iter().enumerate() {
            if dp == 0.0 {
                continue;
            }
            for (c, wv) in carry.iter_mut().zip(w.row_slice(i)) {
                *c += dp * wv;
            }
        }
    }
    if let Some(gw) = acc(nodes, grads, w_id) {
        for k in 1..n {
            let prev = states.row_slice(k - 1);
            for (i, &dp) in dpre.row_slice(k).iter().enumerate() {
                for (o, p) in gw.row_slice_mut(i).iter_mut().zip(prev) {
                    *o += dp * p;
                }
            }
        }
    }
    if let Some(gx) = acc(nodes, grads, xu_id) {
        gx.add_assign(&dpre);
    }
}

fn conv1d_backward(
    nodes: &[Node],
    grads: &mut [Option<Tensor>],
    x_id: usize,
    w_id: usize,
    window: usize,
    g: &Tensor,
) {
    let x = &nodes[x_id].value;
    let w = &nodes[w_id].value;
    let e = x.cols();
    let span = window * e;
    if let Some(gw) = acc(nodes, grads, w_id) {
        for t in 0..g.rows() {
            let patch = &x.data()[t * e..t * e + span];
            for (f, &gv) in g.row_slice(t).iter().enumerate() {
                if gv == 0.0 {
                    continue;
                }
                for (o, p) in gw.row_slice_mut(f).iter_mut().zip(patch) {
                    *o += gv * p;
                }
            }
        }
    }
    if let Some(gx) = acc(nodes, grads, x_id) {
        for t in 0..g.rows() {
            for (f, &gv) in g.row_slice(t).iter().enumerate() {
                if gv == 0.0 {
                    continue;
                }
                let dst = &mut gx.data_mut()[t * e..t * e + span];
                for (o, wv) in dst.iter_mut().zip(w.row_slice(f)) {
                    *o += gv * wv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elementwise_basics() {
        let tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        assert_eq!(z.tanh().value().item(), 0.0);
        assert_eq!(z.sigmoid().value().item(), 0.5);
        assert_eq!(z.exp().value().item(), 1.0);
        let a = tape.constant(Tensor::row(&[1.0, 2.0]));
        let b = tape.constant(Tensor::row(&[3.0]));
        assert_eq!(
            Var::concat_cols(&[a, b]).unwrap().value(),
            Tensor::row(&[1.0, 2.0, 3.0])
        );
    }

    #[test]
    fn softmax_examples() {
        let tape = Tape::new();
        let s = tape
            .constant(Tensor::row(&[0.0, 0.0]))
            .softmax_row()
            .unwrap();
        assert_eq!(s.value(), Tensor::row(&[0.5, 0.5]));
        let s = tape.constant(Tensor::row(&[7.5; 4])).softmax_row().unwrap();
        assert_eq!(s.value(), Tensor::row(&[0.25; 4]));
        // e^x / Σe^x for x = 1, 2, 3
        let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|x| x.exp()).collect();
        let total: f64 = e.iter().sum();
        let s = tape
            .constant(Tensor::row(&[1.0, 2.0, 3.0]))
            .softmax_row()
            .unwrap()
            .value();
        for (got, num) in s.data().iter().zip(&e) {
            assert!((got - num / total).abs() < 1e-15);
        }
        assert!((s.data()[0] - 0.0900).abs() < 5e-5);
        assert!((s.data()[1] - 0.2447).abs() < 5e-5);
        assert!((s.data()[2] - 0.6652).abs() < 5e-5);
        let two_rows = tape.constant(Tensor::zeros(2, 3));
        assert!(matches!(two_rows.softmax_row(), Err(Error::Dimension(_))));
    }

    #[test]
    fn bce_examples() {
        let tape = Tape::new();
        let p = tape.constant(Tensor::scalar(0.5));
        let l = p
            .bce_loss(&Tensor::scalar(1.0), &Tensor::scalar(1.0))
            .unwrap();
        assert!((l.value().item() - std::f64::consts::LN_2).abs() < 1e-15);
        let l = p
            .bce_loss(&Tensor::scalar(1.0), &Tensor::scalar(0.0))
            .unwrap();
        assert_eq!(l.value().item(), 0.0);
        let p = tape.constant(Tensor::column(&[0.9, 0.1]));
        let l = p
            .bce_loss(&Tensor::column(&[1.0, 0.0]), &Tensor::column(&[1.0, 1.0]))
            .unwrap();
        assert!((l.value().item() - (-2.0 * 0.9f64.ln())).abs() < 1e-15);
        assert!((l.value().item() - 0.2107).abs() < 1e-4);
        let bad = p.bce_loss(&Tensor::scalar(1.0), &Tensor::scalar(1.0));
        assert!(matches!(bad, Err(Error::Dimension(_))));
    }

    #[test]
    fn bce_clamps_saturated_probabilities() {
        let tape = Tape::new();
        let p = tape.constant(Tensor::scalar(0.0));
        let l = p
            .bce_loss(&Tensor::scalar(1.0), &Tensor::scalar(1.0))
            .unwrap();
        assert!((l.value().item() + BCE_EPS.ln()).abs() < 1e-12);
    }

    #[test]
    fn masked_steps_receive_no_gradient() {
        let tape = Tape::new();
        let p = tape.param(Tensor::column(&[0.3, 0.8]));
        let l = p
            .bce_loss(&Tensor::column(&[1.0, 0.0]), &Tensor::column(&[1.0, 0.0]))
            .unwrap();
        let g = tape.backward(l).unwrap();
        let gp = g.get(p).unwrap();
        assert!((gp.data()[0] + 1.0 / 0.3).abs() < 1e-12);
        assert_eq!(gp.data()[1], 0.0);
    }

    #[test]
    fn backward_linear_and_sigmoid() {
        let tape = Tape::new();
        let x = tape.param(Tensor::row(&[0.3, -1.0, 2.0]));
        let g = tape.backward(x.sum()).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::row(&[1.0, 1.0, 1.0]));

        let w = tape.param(Tensor::scalar(0.0));
        let one = tape.constant(Tensor::scalar(1.0));
        let loss = w.sigmoid().mul(one).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().item(), 0.25);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = tape.param(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x.tanh()), Err(Error::Contract(_))));
    }

    #[test]
    fn gather_out_of_range_is_index_error() {
        let tape = Tape::new();
        let x = tape.param(Tensor::zeros(3, 2));
        assert!(matches!(x.gather_rows(&[0, 3]), Err(Error::Index(_))));
    }

    #[test]
    fn gradients_accumulate_over_repeated_use() {
        let tape = Tape::new();
        let x = tape.param(Tensor::row(&[2.0]));
        let y = x.mul(x).unwrap().add(x).unwrap().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 5.0);
    }

    #[test]
    fn constants_do_not_need_grad() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::row(&[1.0, 2.0]));
        let p = tape.param(Tensor::row(&[3.0, 4.0]));
        let loss = c.mul(p).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap(), &Tensor::row(&[1.0, 2.0]));
    }

    #[test]
    fn decay_attention_rows() {
        let tape = Tape::new();
        let w = tape.decay_weights(4, 0.6, DecayForm::Additive).value();
        assert!(w.row_slice(0).iter().all(|&v| v == 0.0));
        assert_eq!(w.get(1, 0), 1.0);
        for i in 1..4 {
            let s: f64 = w.row_slice(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(w.row_slice(i)[i..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn rnn_matches_unrolled_definition() {
        let tape = Tape::new();
        let xu = Tensor::from_fn(3, 2, |r, c| 0.3 * r as f64 - 0.2 * c as f64 + 0.1);
        let w = Tensor::from_rows(&[vec![0.5, -0.4], vec![0.2, 0.9]]).unwrap();
        let states = tape
            .constant(xu.clone())
            .tanh_rnn(tape.constant(w.clone()))
            .unwrap()
            .value();
        let mut prev = [0.0, 0.0];
        for k in 0..3 {
            let mut cur = [0.0; 2];
            for (i, c) in cur.iter_mut().enumerate() {
                *c = (xu.get(k, i) + w.get(i, 0) * prev[0] + w.get(i, 1) * prev[1]).tanh();
            }
            assert!((states.get(k, 0) - cur[0]).abs() < 1e-15);
            assert!((states.get(k, 1) - cur[1]).abs() < 1e-15);
            prev = cur;
        }
    }
}
