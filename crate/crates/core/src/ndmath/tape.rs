//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is rebuilt for every forward pass. Nodes are appended in
//! evaluation order, so parents always precede children and the backward sweep
//! is a single reverse pass over the node list.

use crate::error::{Error, Result};
use crate::ndmath::tensor::{gemm, Layout, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Square(Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    ConcatCols(Var, Var),
    SoftmaxRows(Var),
    /// Row gather; indices may repeat.
    SelectRows(Var, Vec<usize>),
    /// Mean binary cross-entropy against fixed 0/1 labels.
    BceWithLogits(Var, Vec<f64>),
    /// Mean softmax cross-entropy against fixed class indices.
    SoftmaxCrossEntropy(Var, Vec<usize>),
    /// Mean over rows of the squared Euclidean row distance.
    MseRows(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Elementwise operation selector for [`Tape::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Relu,
    Sigmoid,
    Square,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`, if any flowed into it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.adjoints.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`, zeros of `like`'s shape when nothing flowed.
    pub fn wrt_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn op_parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf | Op::Constant => vec![],
        Op::MatMul(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::AddRowBias(a, b)
        | Op::ConcatCols(a, b)
        | Op::MseRows(a, b) => vec![*a, *b],
        Op::Relu(a)
        | Op::Sigmoid(a)
        | Op::Square(a)
        | Op::Scale(a, _)
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::SoftmaxRows(a)
        | Op::SelectRows(a, _)
        | Op::BceWithLogits(a, _)
        | Op::SoftmaxCrossEntropy(a, _) => vec![*a],
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    /// Parent indices of a node, for topology checks.
    pub fn parents(&self, v: Var) -> Vec<Var> {
        op_parents(&self.nodes[v.0].op)
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        let needs_grad = match &op {
            Op::Leaf => true,
            Op::Constant => false,
            _ => op_parents(&op).iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input (parameter or probe point).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value)
    }

    /// Copies the current value of `v` as a constant, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn elementwise(&mut self, op: ElementwiseOp, args: &[Var]) -> Result<Var> {
        let unary = |args: &[Var]| -> Result<Var> {
            match args {
                [a] => Ok(*a),
                _ => Err(Error::Contract(format!("{op:?} takes one operand, got {}", args.len()))),
            }
        };
        let binary = |args: &[Var]| -> Result<(Var, Var)> {
            match args {
                [a, b] => Ok((*a, *b)),
                _ => Err(Error::Contract(format!("{op:?} takes two operands, got {}", args.len()))),
            }
        };
        match op {
            ElementwiseOp::Add => binary(args).and_then(|(a, b)| self.add(a, b)),
            ElementwiseOp::Sub => binary(args).and_then(|(a, b)| self.sub(a, b)),
            ElementwiseOp::Mul => binary(args).and_then(|(a, b)| self.mul(a, b)),
            ElementwiseOp::Relu => unary(args).map(|a| self.relu(a)),
            ElementwiseOp::Sigmoid => unary(args).map(|a| self.sigmoid(a)),
            ElementwiseOp::Square => unary(args).map(|a| self.square(a)),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    /// `a[n×m] + bias` broadcast over rows; `bias` holds `m` entries.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(bias);
        let (n, m) = av.as_matrix_dims("add_row_bias")?;
        if bv.len() != m {
            return Err(Error::Dimension {
                op: "add_row_bias",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(m) {
            for (x, b) in row.iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        let value = Tensor::from_parts(vec![n, m], data);
        Ok(self.push(Op::AddRowBias(a, bias), value))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|z| z.max(0.0));
        self.push(Op::Relu(a), value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), value)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|z| z * z);
        self.push(Op::Square(a), value)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|z| z * c);
        self.push(Op::Scale(a, c), value)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), value)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(Error::validation("mean of empty tensor"));
        }
        let value = Tensor::scalar(v.sum() / v.len() as f64);
        Ok(self.push(Op::Mean(a), value))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let (n, ca) = av.as_matrix_dims("concat_cols")?;
        let (n2, cb) = bv.as_matrix_dims("concat_cols")?;
        if n != n2 {
            return Err(Error::Dimension {
                op: "concat_cols",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        let value = Tensor::from_parts(vec![n, ca + cb], data);
        Ok(self.push(Op::ConcatCols(a, b), value))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (n, m) = av.as_matrix_dims("softmax_rows")?;
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            softmax_row(av.row(i), &mut data[i * m..(i + 1) * m]);
        }
        let value = Tensor::from_parts(vec![n, m], data);
        Ok(self.push(Op::SoftmaxRows(a), value))
    }

    /// Gathers rows `idx` of a matrix.
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let (n, _) = av.as_matrix_dims("select_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Dimension {
                op: "select_rows",
                left: av.shape().to_vec(),
                right: vec![bad],
            });
        }
        let value = av.select_rows(idx);
        Ok(self.push(Op::SelectRows(a, idx.to_vec()), value))
    }

    /// Mean of `-[y log σ(z) + (1-y) log(1-σ(z))]`, written as
    /// `softplus(z) - y·z` so large |z| never overflows.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let z = self.value(logits);
        if z.len() != labels.len() || z.cols() != 1 {
            return Err(Error::Dimension {
                op: "loss_bce",
                left: z.shape().to_vec(),
                right: vec![labels.len(), 1],
            });
        }
        if labels.is_empty() {
            return Err(Error::validation("loss_bce on empty batch"));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::validation(format!("loss_bce label {bad} is not binary")));
        }
        let total: f64 = z
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| softplus(z) - y * z)
            .sum();
        let value = Tensor::scalar(total / labels.len() as f64);
        Ok(self.push(Op::BceWithLogits(logits, labels.to_vec()), value))
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        let (n, k) = z.as_matrix_dims("softmax_cross_entropy")?;
        if n != labels.len() {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                left: z.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if n == 0 {
            return Err(Error::validation("cross-entropy on empty batch"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::validation(format!("label {bad} outside {k} classes")));
        }
        let total: f64 = (0..n).map(|i| log_sum_exp(z.row(i)) - z.get(i, labels[i])).sum();
        let value = Tensor::scalar(total / n as f64);
        Ok(self.push(Op::SoftmaxCrossEntropy(logits, labels.to_vec()), value))
    }

    pub fn mse_rows(&mut self, pred: Var, target: Var) -> Result<Var> {
        let p = self.value(pred);
        let t = self.value(target);
        if p.shape() != t.shape() {
            return Err(Error::Dimension {
                op: "loss_mse",
                left: p.shape().to_vec(),
                right: t.shape().to_vec(),
            });
        }
        if p.is_empty() {
            return Err(Error::validation("loss_mse on empty batch"));
        }
        let sq: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let value = Tensor::scalar(sq / p.rows() as f64);
        Ok(self.push(Op::MseRows(pred, target), value))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                rv.shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Tensor::full(rv.shape(), 1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(node, &g, &mut adj);
            }
            adj[i] = Some(g);
        }
        // Only differentiable nodes keep adjoints.
        for (i, a) in adj.iter_mut().enumerate() {
            if !self.nodes[i].needs_grad {
                *a = None;
            }
        }
        Ok(Gradients { adjoints: adj })
    }

    fn accumulate(&self, adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut adj[v.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if needs(*a) {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    gemm(g.data(), Layout::Plain, bv.data(), Layout::Transposed, &mut da, m, n, k);
                    self.accumulate(adj, *a, Tensor::from_parts(vec![m, k], da));
                }
                if needs(*b) {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    gemm(av.data(), Layout::Transposed, g.data(), Layout::Plain, &mut db, k, m, n);
                    self.accumulate(adj, *b, Tensor::from_parts(vec![k, n], db));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(adj, *a, g.clone());
                self.accumulate(adj, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, *a, g.clone());
                if needs(*b) {
                    self.accumulate(adj, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let d = g.zip_map(val(*b), "mul", |x, y| x * y).expect("shapes checked");
                    self.accumulate(adj, *a, d);
                }
                if needs(*b) {
                    let d = g.zip_map(val(*a), "mul", |x, y| x * y).expect("shapes checked");
                    self.accumulate(adj, *b, d);
                }
            }
            Op::AddRowBias(a, bias) => {
                self.accumulate(adj, *a, g.clone());
                if needs(*bias) {
                    let bv = val(*bias);
                    let m = bv.len();
                    let mut db = vec![0.0; m];
                    for row in g.data().chunks(m) {
                        for (d, x) in db.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    self.accumulate(adj, *bias, Tensor::from_parts(bv.shape().to_vec(), db));
                }
            }
            Op::Relu(a) => {
                let d = g
                    .zip_map(val(*a), "relu", |x, z| if z > 0.0 { x } else { 0.0 })
                    .expect("shapes checked");
                self.accumulate(adj, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = g
                    .zip_map(&node.value, "sigmoid", |x, s| x * s * (1.0 - s))
                    .expect("shapes checked");
                self.accumulate(adj, *a, d);
            }
            Op::Square(a) => {
                let d = g.zip_map(val(*a), "square", |x, z| 2.0 * x * z).expect("shapes checked");
                self.accumulate(adj, *a, d);
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(adj, *a, g.map(|x| x * c));
            }
            Op::Sum(a) => {
                let gs = g.item();
                self.accumulate(adj, *a, Tensor::full(val(*a).shape(), gs));
            }
            Op::Mean(a) => {
                let av = val(*a);
                let gs = g.item() / av.len() as f64;
                self.accumulate(adj, *a, Tensor::full(av.shape(), gs));
            }
            Op::ConcatCols(a, b) => {
                let ca = val(*a).cols();
                let cb = val(*b).cols();
                let n = g.rows();
                let mut da = Vec::with_capacity(n * ca);
                let mut db = Vec::with_capacity(n * cb);
                for i in 0..n {
                    let row = g.row(i);
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                self.accumulate(adj, *a, Tensor::from_parts(vec![n, ca], da));
                self.accumulate(adj, *b, Tensor::from_parts(vec![n, cb], db));
            }
            Op::SoftmaxRows(a) => {
                let p = &node.value;
                let (n, m) = (p.rows(), p.cols());
                let mut d = vec![0.0; n * m];
                for i in 0..n {
                    let pr = p.row(i);
                    let gr = g.row(i);
                    let dot: f64 = pr.iter().zip(gr).map(|(x, y)| x * y).sum();
                    for j in 0..m {
                        d[i * m + j] = pr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(adj, *a, Tensor::from_parts(vec![n, m], d));
            }
            Op::SelectRows(a, idx) => {
                let av = val(*a);
                let c = av.cols();
                let mut d = vec![0.0; av.len()];
                for (r, &i) in idx.iter().enumerate() {
                    for (o, x) in d[i * c..(i + 1) * c].iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                self.accumulate(adj, *a, Tensor::from_parts(av.shape().to_vec(), d));
            }
            Op::BceWithLogits(a, labels) => {
                let z = val(*a);
                let scale = g.item() / labels.len() as f64;
                let d: Vec<f64> = z
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&z, &y)| scale * (sigmoid(z) - y))
                    .collect();
                self.accumulate(adj, *a, Tensor::from_parts(z.shape().to_vec(), d));
            }
            Op::SoftmaxCrossEntropy(a, labels) => {
                let z = val(*a);
                let (n, m) = (z.rows(), z.cols());
                let scale = g.item() / n as f64;
                let mut d = vec![0.0; n * m];
                for i in 0..n {
                    let out = &mut d[i * m..(i + 1) * m];
                    softmax_row(z.row(i), out);
                    out[labels[i]] -= 1.0;
                    for o in out.iter_mut() {
                        *o *= scale;
                    }
                }
                self.accumulate(adj, *a, Tensor::from_parts(vec![n, m], d));
            }
            Op::MseRows(p, t) => {
                let (pv, tv) = (val(*p), val(*t));
                let scale = 2.0 * g.item() / pv.rows() as f64;
                let diff = pv.zip_map(tv, "mse", |a, b| scale * (a - b)).expect("shapes checked");
                if needs(*t) {
                    self.accumulate(adj, *t, diff.map(|x| -x));
                }
                self.accumulate(adj, *p, diff);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::vector(v.to_vec()).unwrap()
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[-1.0, 0.0, 2.0]));
        let r = tape.elementwise(ElementwiseOp::Relu, &[x]).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = tape.constant(t(&[0.0]));
        let s = tape.elementwise(ElementwiseOp::Sigmoid, &[z]).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5]);
        let q = tape.constant(t(&[3.0, -2.0]));
        let sq = tape.elementwise(ElementwiseOp::Square, &[q]).unwrap();
        assert_eq!(tape.value(sq).data(), &[9.0, 4.0]);
        assert!(tape.elementwise(ElementwiseOp::Add, &[x, q]).is_err());
        assert!(tape.elementwise(ElementwiseOp::Relu, &[x, q]).is_err());
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1.0, 2.0, 3.0]));
        let sq = tape.square(x);
        let root = tape.sum(sq);
        let g = tape.backward(root).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn sigmoid_grad_at_zero_weight() {
        let xs = [1.5, -2.0, 0.5];
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::matrix(1, 3, vec![0.0; 3]).unwrap());
        let x = tape.constant(Tensor::matrix(3, 1, xs.to_vec()).unwrap());
        let z = tape.matmul(w, x).unwrap();
        let s = tape.sigmoid(z);
        let root = tape.sum(s);
        let g = tape.backward(root).unwrap();
        let gw = g.get(w).unwrap();
        for (a, b) in gw.data().iter().zip(xs) {
            assert!((a - 0.25 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn non_scalar_root_is_contract_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[1.0]));
        let b = tape.constant(t(&[2.0]));
        let m = tape.mul(a, b).unwrap();
        let root = tape.sum(m);
        let g = tape.backward(root).unwrap();
        assert!(g.get(b).is_none());
        assert_eq!(g.get(a).unwrap().data(), &[2.0]);
        let d = tape.detach(a);
        let root2 = tape.sum(d);
        assert!(tape.backward(root2).unwrap().get(a).is_none());
    }

    #[test]
    fn parents_precede_children() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.relu(a);
        let c = tape.matmul(a, b).unwrap();
        let d = tape.square(c);
        let _ = tape.mean(d).unwrap();
        for i in 0..tape.len() {
            for p in tape.parents(Var(i)) {
                assert!(p.index() < i);
            }
        }
    }

    #[test]
    fn bce_examples() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::column(&[0.0]).unwrap());
        let l = tape.bce_with_logits(z, &[1.0]).unwrap();
        assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
        let z = tape.constant(Tensor::column(&[50.0]).unwrap());
        let l = tape.bce_with_logits(z, &[1.0]).unwrap();
        assert!(tape.value(l).item() < 1e-9);
        let z = tape.constant(Tensor::column(&[0.3]).unwrap());
        assert!(matches!(tape.bce_with_logits(z, &[0.5]), Err(Error::Validation(_))));
    }

    #[test]
    fn bce_large_negative_logit_is_finite() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::column(&[-800.0, 800.0]).unwrap());
        let l = tape.bce_with_logits(z, &[1.0, 0.0]).unwrap();
        assert!((tape.value(l).item() - 800.0).abs() < 1e-9);
    }

    #[test]
    fn mse_examples() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap());
        let q = tape.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let l = tape.mse_rows(p, q).unwrap();
        assert_eq!(tape.value(l).item(), 2.0);
        let l0 = tape.mse_rows(p, p).unwrap();
        assert_eq!(tape.value(l0).item(), 0.0);
        let bad = tape.constant(Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap());
        assert!(tape.mse_rows(p, bad).is_err());
    }

    #[test]
    fn softmax_ce_matches_bce_for_two_logit_parameterization() {
        // softmax([0, z]) class 1 probability equals sigmoid(z).
        let zs = [-1.2, 0.4, 2.5];
        let ys = [0usize, 1, 1];
        let mut tape = Tape::new();
        let two = tape.constant(
            Tensor::matrix(3, 2, zs.iter().flat_map(|&z| [0.0, z]).collect()).unwrap(),
        );
        let ce = tape.softmax_cross_entropy(two, &ys).unwrap();
        let one = tape.constant(Tensor::column(&zs).unwrap());
        let bce = tape
            .bce_with_logits(one, &ys.map(|y| y as f64))
            .unwrap();
        assert!((tape.value(ce).item() - tape.value(bce).item()).abs() < 1e-14);
    }

    #[test]
    fn select_rows_scatters_gradient() {
        let x = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let f = |tape: &mut Tape, v: Var| {
            let s = tape.select_rows(v, &[2, 0, 2])?;
            let sq = tape.square(s);
            Ok(tape.sum(sq))
        };
        assert!(crate::ndmath::check_gradients(f, &x, 1e-5).unwrap() < 1e-8);
        let mut tape = Tape::new();
        let v = tape.leaf(x);
        let s = tape.select_rows(v, &[2, 2]).unwrap();
        assert_eq!(tape.value(s).data(), &[5.0, 6.0, 5.0, 6.0]);
        let total = tape.sum(s);
        let g = tape.backward(total).unwrap();
        assert_eq!(g.get(v).unwrap().data(), &[0.0, 0.0, 0.0, 0.0, 2.0, 2.0]);
        assert!(tape.select_rows(v, &[3]).is_err());
    }
}
