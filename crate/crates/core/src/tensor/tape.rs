use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamId, ParamStore};
use super::Real;
use crate::error::{Error, Result};

/// Recording tape for one forward/backward pass. Cheap to clone (shared
/// handle); not thread-safe — build one tape per worker.
pub struct Tape<F: Real> {
    inner: Rc<RefCell<TapeInner<F>>>,
}

impl<F: Real> Clone for Tape<F> {
    fn clone(&self) -> Self {
        Tape { inner: Rc::clone(&self.inner) }
    }
}

/// Handle to one node on a tape. Values are immutable once produced.
pub struct Tensor<F: Real> {
    tape: Tape<F>,
    node: usize,
}

impl<F: Real> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor { tape: self.tape.clone(), node: self.node }
    }
}

struct TapeInner<F: Real> {
    nodes: Vec<Node<F>>,
    staged: HashMap<ParamId, usize>,
}

struct Node<F: Real> {
    rows: usize,
    cols: usize,
    values: Arc<Vec<F>>,
    requires_grad: bool,
    param: Option<ParamId>,
    op: Op<F>,
}

enum Op<F: Real> {
    Leaf,
    Matmul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, F),
    AddRow(usize, usize),
    Tanh(usize),
    MaskedSoftmax(usize, Arc<Vec<bool>>),
    LogSumExp(usize),
    Dropout(usize, Arc<Vec<F>>),
    Gather(usize, Arc<Vec<usize>>),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    Sum(usize),
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner { nodes: Vec::new(), staged: HashMap::new() })),
        }
    }

    fn push(&self, node: Node<F>) -> Tensor<F> {
        debug_assert_eq!(node.rows * node.cols, node.values.len());
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(node);
        Tensor { tape: self.clone(), node: inner.nodes.len() - 1 }
    }

    /// New constant leaf (no gradient).
    pub fn constant(&self, rows: usize, cols: usize, values: Vec<F>) -> Tensor<F> {
        assert_eq!(rows * cols, values.len(), "constant: {}x{} vs {} values", rows, cols, values.len());
        self.push(Node {
            rows,
            cols,
            values: Arc::new(values),
            requires_grad: false,
            param: None,
            op: Op::Leaf,
        })
    }

    /// Constant leaf sharing an existing buffer (no copy).
    pub fn constant_shared(&self, rows: usize, cols: usize, values: Arc<Vec<F>>) -> Tensor<F> {
        assert_eq!(rows * cols, values.len());
        self.push(Node { rows, cols, values, requires_grad: false, param: None, op: Op::Leaf })
    }

    pub fn zeros(&self, rows: usize, cols: usize) -> Tensor<F> {
        self.constant(rows, cols, vec![F::zero(); rows * cols])
    }

    /// Stages a parameter as a differentiable leaf. Staging the same
    /// parameter twice returns the same node, so gradients from every
    /// use accumulate additively.
    pub fn param(&self, store: &ParamStore<F>, id: ParamId) -> Tensor<F> {
        if let Some(&node) = self.inner.borrow().staged.get(&id) {
            return Tensor { tape: self.clone(), node };
        }
        let p = store.get(id);
        let t = self.push(Node {
            rows: p.rows,
            cols: p.cols,
            values: Arc::clone(&p.data),
            requires_grad: true,
            param: Some(id),
            op: Op::Leaf,
        });
        self.inner.borrow_mut().staged.insert(id, t.node);
        t
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&self, parts: &[Tensor<F>]) -> Result<Tensor<F>> {
        assert!(!parts.is_empty());
        let rows = parts[0].rows();
        let mut cols = 0;
        for p in parts {
            self.check_same_tape(p)?;
            if p.rows() != rows {
                return Err(Error::Shape { op: "concat_cols", lhs: parts[0].shape(), rhs: p.shape() });
            }
            cols += p.cols();
        }
        let inner = self.inner.borrow();
        let mut values = vec![F::zero(); rows * cols];
        let mut off = 0;
        for p in parts {
            let n = &inner.nodes[p.node];
            for r in 0..rows {
                values[r * cols + off..r * cols + off + n.cols]
                    .copy_from_slice(&n.values[r * n.cols..(r + 1) * n.cols]);
            }
            off += n.cols;
        }
        let requires_grad = parts.iter().any(|p| inner.nodes[p.node].requires_grad);
        drop(inner);
        Ok(self.push(Node {
            rows,
            cols,
            values: Arc::new(values),
            requires_grad,
            param: None,
            op: Op::ConcatCols(parts.iter().map(|p| p.node).collect()),
        }))
    }

    /// Stacks matrices with equal column counts along rows.
    pub fn concat_rows(&self, parts: &[Tensor<F>]) -> Result<Tensor<F>> {
        assert!(!parts.is_empty());
        let cols = parts[0].cols();
        let mut rows = 0;
        for p in parts {
            self.check_same_tape(p)?;
            if p.cols() != cols {
                return Err(Error::Shape { op: "concat_rows", lhs: parts[0].shape(), rhs: p.shape() });
            }
            rows += p.rows();
        }
        let inner = self.inner.borrow();
        let mut values = Vec::with_capacity(rows * cols);
        for p in parts {
            values.extend_from_slice(&inner.nodes[p.node].values);
        }
        let requires_grad = parts.iter().any(|p| inner.nodes[p.node].requires_grad);
        drop(inner);
        Ok(self.push(Node {
            rows,
            cols,
            values: Arc::new(values),
            requires_grad,
            param: None,
            op: Op::ConcatRows(parts.iter().map(|p| p.node).collect()),
        }))
    }

    fn check_same_tape(&self, t: &Tensor<F>) -> Result<()> {
        if Rc::ptr_eq(&self.inner, &t.tape.inner) {
            Ok(())
        } else {
            Err(Error::Contract("tensors belong to different tapes".into()))
        }
    }

    /// Reverse pass from a scalar loss. Returns one gradient buffer per
    /// parameter of `store`; parameters off the path get exact zeros,
    /// and frozen rows are zeroed.
    pub fn backward(&self, loss: &Tensor<F>, store: &ParamStore<F>) -> Result<Gradients<F>> {
        self.check_same_tape(loss)?;
        let inner = self.inner.borrow();
        let nodes = &inner.nodes;
        let ln = &nodes[loss.node];
        if ln.rows * ln.cols != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got {}x{}",
                ln.rows, ln.cols
            )));
        }

        let mut grads: Vec<Option<Vec<F>>> = vec![None; nodes.len()];
        grads[loss.node] = Some(vec![F::one()]);

        for i in (0..=loss.node).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backprop(nodes, &mut grads, i, &g, node);
            if node.param.is_some() {
                grads[i] = Some(g); // keep leaf gradients for export
            }
        }

        let mut out = Gradients::zeros_for(store);
        for (i, node) in nodes.iter().enumerate() {
            if let (Some(pid), Some(g)) = (node.param, grads[i].take()) {
                out.add_assign(pid, &g);
            }
        }
        out.zero_frozen(store);
        Ok(out)
    }
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Routes the output gradient `g` of node `i` to its inputs.
fn backprop<F: Real>(
    nodes: &[Node<F>],
    grads: &mut [Option<Vec<F>>],
    _i: usize,
    g: &[F],
    node: &Node<F>,
) {
    let needs = |j: usize| nodes[j].requires_grad;
    let mut acc = |j: usize, f: &mut dyn FnMut(&mut [F])| {
        if !needs(j) {
            return;
        }
        let buf = grads[j].get_or_insert_with(|| vec![F::zero(); nodes[j].values.len()]);
        f(buf);
    };

    match &node.op {
        Op::Leaf => {}
        Op::Matmul(a, b) => {
            let (m, k, n) = (nodes[*a].rows, nodes[*a].cols, nodes[*b].cols);
            let av = &nodes[*a].values;
            let bv = &nodes[*b].values;
            acc(*a, &mut |da| mm_nt_acc(g, bv, da, m, n, k));
            acc(*b, &mut |db| mm_tn_acc(av, g, db, k, m, n));
        }
        Op::Transpose(x) => {
            let (r, c) = (node.rows, node.cols); // output shape
            acc(*x, &mut |dx| {
                for i in 0..r {
                    for j in 0..c {
                        dx[j * r + i] += g[i * c + j];
                    }
                }
            });
        }
        Op::Add(a, b) => {
            acc(*a, &mut |da| add_acc(da, g));
            acc(*b, &mut |db| add_acc(db, g));
        }
        Op::Sub(a, b) => {
            acc(*a, &mut |da| add_acc(da, g));
            acc(*b, &mut |db| {
                for (d, &gi) in db.iter_mut().zip(g) {
                    *d -= gi;
                }
            });
        }
        Op::Scale(x, c) => {
            let c = *c;
            acc(*x, &mut |dx| {
                for (d, &gi) in dx.iter_mut().zip(g) {
                    *d += c * gi;
                }
            });
        }
        Op::AddRow(x, bias) => {
            let (r, c) = (node.rows, node.cols);
            acc(*x, &mut |dx| add_acc(dx, g));
            acc(*bias, &mut |db| {
                for i in 0..r {
                    for j in 0..c {
                        db[j] += g[i * c + j];
                    }
                }
            });
        }
        Op::Tanh(x) => {
            let y = &node.values;
            acc(*x, &mut |dx| {
                for ((d, &gi), &yi) in dx.iter_mut().zip(g).zip(y.iter()) {
                    *d += gi * (F::one() - yi * yi);
                }
            });
        }
        Op::MaskedSoftmax(x, mask) => {
            let (r, c) = (node.rows, node.cols);
            let y = &node.values;
            acc(*x, &mut |dx| {
                for i in 0..r {
                    let row = i * c;
                    let mut s = F::zero();
                    for j in 0..c {
                        if mask[row + j] {
                            s += g[row + j] * y[row + j];
                        }
                    }
                    for j in 0..c {
                        if mask[row + j] {
                            dx[row + j] += y[row + j] * (g[row + j] - s);
                        }
                    }
                }
            });
        }
        Op::LogSumExp(x) => {
            let xs = &nodes[*x].values;
            let (r, c) = (nodes[*x].rows, nodes[*x].cols);
            let y = &node.values; // r x 1
            acc(*x, &mut |dx| {
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] += g[i] * (xs[i * c + j] - y[i]).exp();
                    }
                }
            });
        }
        Op::Dropout(x, mask) => {
            acc(*x, &mut |dx| {
                for ((d, &gi), &mi) in dx.iter_mut().zip(g).zip(mask.iter()) {
                    *d += gi * mi;
                }
            });
        }
        Op::Gather(table, indices) => {
            let c = node.cols;
            acc(*table, &mut |dt| {
                for (r, &ix) in indices.iter().enumerate() {
                    for j in 0..c {
                        dt[ix * c + j] += g[r * c + j];
                    }
                }
            });
        }
        Op::ConcatCols(parts) => {
            let cols = node.cols;
            let mut off = 0;
            for &p in parts {
                let (pr, pc) = (nodes[p].rows, nodes[p].cols);
                acc(p, &mut |dp| {
                    for r in 0..pr {
                        for j in 0..pc {
                            dp[r * pc + j] += g[r * cols + off + j];
                        }
                    }
                });
                off += pc;
            }
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            for &p in parts {
                let len = nodes[p].values.len();
                acc(p, &mut |dp| add_acc(dp, &g[off..off + len]));
                off += len;
            }
        }
        Op::Sum(x) => {
            let gi = g[0];
            acc(*x, &mut |dx| {
                for d in dx.iter_mut() {
                    *d += gi;
                }
            });
        }
    }
}

fn add_acc<F: Real>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// out += a @ b, a: m×k, b: k×n.
fn mm_acc<F: Real>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == F::zero() {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aik * brow[j];
            }
        }
    }
}

/// out += a @ b^T, a: m×k, b: n×k.
fn mm_nt_acc<F: Real>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = F::zero();
            for kk in 0..k {
                s += arow[kk] * brow[kk];
            }
            out[i * n + j] += s;
        }
    }
}

/// out += a^T @ b, a: k×m, b: k×n.
fn mm_tn_acc<F: Real>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for kk in 0..k {
        let brow = &b[kk * n..(kk + 1) * n];
        for i in 0..m {
            let aki = a[kk * m + i];
            if aki == F::zero() {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aki * brow[j];
            }
        }
    }
}

impl<F: Real> Tensor<F> {
    pub fn rows(&self) -> usize {
        self.tape.inner.borrow().nodes[self.node].rows
    }

    pub fn cols(&self) -> usize {
        self.tape.inner.borrow().nodes[self.node].cols
    }

    pub fn shape(&self) -> Vec<usize> {
        let inner = self.tape.inner.borrow();
        let n = &inner.nodes[self.node];
        vec![n.rows, n.cols]
    }

    pub fn len(&self) -> usize {
        self.tape.inner.borrow().nodes[self.node].values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.node].requires_grad
    }

    /// Shared handle to the value buffer.
    pub fn values(&self) -> Arc<Vec<F>> {
        Arc::clone(&self.tape.inner.borrow().nodes[self.node].values)
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.tape.inner.borrow().nodes[self.node].values.as_ref().clone()
    }

    pub fn scalar(&self) -> Result<F> {
        let inner = self.tape.inner.borrow();
        let n = &inner.nodes[self.node];
        if n.values.len() != 1 {
            return Err(Error::Contract(format!("expected a scalar, got {}x{}", n.rows, n.cols)));
        }
        Ok(n.values[0])
    }

    fn unary(&self, rows: usize, cols: usize, values: Vec<F>, op: Op<F>) -> Tensor<F> {
        let requires_grad = self.requires_grad();
        self.tape.push(Node {
            rows,
            cols,
            values: Arc::new(values),
            requires_grad,
            param: None,
            op,
        })
    }

    /// Matrix product; inner dimensions must agree.
    pub fn matmul(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        self.tape.check_same_tape(rhs)?;
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (rhs.rows(), rhs.cols());
        if k != k2 {
            return Err(Error::Shape { op: "matmul", lhs: self.shape(), rhs: rhs.shape() });
        }
        let inner = self.tape.inner.borrow();
        let mut values = vec![F::zero(); m * n];
        mm_acc(&inner.nodes[self.node].values, &inner.nodes[rhs.node].values, &mut values, m, k, n);
        let requires_grad =
            inner.nodes[self.node].requires_grad || inner.nodes[rhs.node].requires_grad;
        drop(inner);
        Ok(self.tape.push(Node {
            rows: m,
            cols: n,
            values: Arc::new(values),
            requires_grad,
            param: None,
            op: Op::Matmul(self.node, rhs.node),
        }))
    }

    pub fn transpose(&self) -> Tensor<F> {
        let (r, c) = (self.rows(), self.cols());
        let inner = self.tape.inner.borrow();
        let x = &inner.nodes[self.node].values;
        let mut values = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                values[j * r + i] = x[i * c + j];
            }
        }
        drop(inner);
        self.unary(c, r, values, Op::Transpose(self.node))
    }

    fn zip_shape(&self, rhs: &Tensor<F>, op: &'static str) -> Result<()> {
        self.tape.check_same_tape(rhs)?;
        if self.rows() != rhs.rows() || self.cols() != rhs.cols() {
            return Err(Error::Shape { op, lhs: self.shape(), rhs: rhs.shape() });
        }
        Ok(())
    }

    pub fn add(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        self.zip_shape(rhs, "add")?;
        let inner = self.tape.inner.borrow();
        let a = &inner.nodes[self.node];
        let b = &inner.nodes[rhs.node];
        let values: Vec<F> = a.values.iter().zip(b.values.iter()).map(|(&x, &y)| x + y).collect();
        let requires_grad = a.requires_grad || b.requires_grad;
        let (r, c) = (a.rows, a.cols);
        drop(inner);
        Ok(self.tape.push(Node {
            rows: r,
            cols: c,
            values: Arc::new(values),
            requires_grad,
            param: None,
            op: Op::Add(self.node, rhs.node),
        }))
    }

    pub fn sub(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        self.zip_shape(rhs, "sub")?;
        let inner = self.tape.inner.borrow();
        let a = &inner.nodes[self.node];
        let b = &inner.nodes[rhs.node];
        let values: Vec<F> = a.values.iter().zip(b.values.iter()).map(|(&x, &y)| x - y).collect();
        let requires_grad = a.requires_grad || b.requires_grad;
        let (r, c) = (a.rows, a.cols);
        drop(inner);
        Ok(self.tape.push(Node {
            rows: r,
            cols: c,
            values: Arc::new(values),
            requires_grad,
            param: None,
            op: Op::Sub(self.node, rhs.node),
        }))
    }

    pub fn scale(&self, c: F) -> Tensor<F> {
        let values: Vec<F> = self.tape.inner.borrow().nodes[self.node]
            .values
            .iter()
            .map(|&x| x * c)
            .collect();
        let (r, cl) = (self.rows(), self.cols());
        self.unary(r, cl, values, Op::Scale(self.node, c))
    }

    /// Adds a 1×cols bias row to every row.
    pub fn add_row(&self, bias: &Tensor<F>) -> Result<Tensor<F>> {
        self.tape.check_same_tape(bias)?;
        if bias.rows() != 1 || bias.cols() != self.cols() {
            return Err(Error::Shape { op: "add_row", lhs: self.shape(), rhs: bias.shape() });
        }
        let inner = self.tape.inner.borrow();
        let x = &inner.nodes[self.node];
        let b = &inner.nodes[bias.node].values;
        let (r, c) = (x.rows, x.cols);
        let mut values = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                values.push(x.values[i * c + j] + b[j]);
            }
        }
        let requires_grad = x.requires_grad || inner.nodes[bias.node].requires_grad;
        drop(inner);
        Ok(self.tape.push(Node {
            rows: r,
            cols: c,
            values: Arc::new(values),
            requires_grad,
            param: None,
            op: Op::AddRow(self.node, bias.node),
        }))
    }

    pub fn tanh(&self) -> Tensor<F> {
        let values: Vec<F> =
            self.tape.inner.borrow().nodes[self.node].values.iter().map(|&x| x.tanh()).collect();
        let (r, c) = (self.rows(), self.cols());
        self.unary(r, c, values, Op::Tanh(self.node))
    }

    /// Row-wise softmax over unmasked positions, stabilized by max
    /// subtraction. Masked positions get probability exactly 0; every
    /// row must have at least one valid entry.
    pub fn masked_softmax(&self, mask: &[bool]) -> Result<Tensor<F>> {
        let (r, c) = (self.rows(), self.cols());
        if mask.len() != r * c {
            return Err(Error::Shape { op: "masked_softmax", lhs: self.shape(), rhs: vec![mask.len()] });
        }
        let inner = self.tape.inner.borrow();
        let x = &inner.nodes[self.node].values;
        let mut values = vec![F::zero(); r * c];
        for i in 0..r {
            let row = i * c;
            let mut mx = F::neg_infinity();
            let mut n_valid = 0;
            for j in 0..c {
                if mask[row + j] {
                    n_valid += 1;
                    if x[row + j] > mx {
                        mx = x[row + j];
                    }
                }
            }
            if n_valid == 0 {
                return Err(Error::DegenerateRow { row: i });
            }
            if !mx.is_finite() {
                return Err(Error::Runtime(format!(
                    "non-finite logits in masked softmax row {i}"
                )));
            }
            let mut sum = F::zero();
            for j in 0..c {
                if mask[row + j] {
                    let e = (x[row + j] - mx).exp();
                    values[row + j] = e;
                    sum += e;
                }
            }
            for j in 0..c {
                if mask[row + j] {
                    values[row + j] /= sum;
                }
            }
        }
        let requires_grad = inner.nodes[self.node].requires_grad;
        drop(inner);
        Ok(self.tape.push(Node {
            rows: r,
            cols: c,
            values: Arc::new(values),
            requires_grad,
            param: None,
            op: Op::MaskedSoftmax(self.node, Arc::new(mask.to_vec())),
        }))
    }

    /// Row-wise log(sum(exp(x))) with max subtraction; output rows×1.
    pub fn log_sum_exp(&self) -> Tensor<F> {
        let (r, c) = (self.rows(), self.cols());
        let inner = self.tape.inner.borrow();
        let x = &inner.nodes[self.node].values;
        let mut values = Vec::with_capacity(r);
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let s: F = row.iter().map(|&v| (v - mx).exp()).fold(F::zero(), |a, b| a + b);
            values.push(mx + s.ln());
        }
        drop(inner);
        self.unary(r, 1, values, Op::LogSumExp(self.node))
    }

    /// Inverted dropout: zero each element with probability `rate` and
    /// scale survivors by 1/(1−rate) during training; identity at
    /// inference.
    pub fn dropout(&self, rate: f64, training: bool, rng: &mut ChaCha8Rng) -> Result<Tensor<F>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        if !training || rate == 0.0 {
            return Ok(self.clone());
        }
        let keep = F::from_f64(1.0 / (1.0 - rate));
        let mask: Vec<F> = (0..self.len())
            .map(|_| if rng.gen::<f64>() < rate { F::zero() } else { keep })
            .collect();
        let inner = self.tape.inner.borrow();
        let x = &inner.nodes[self.node];
        let values: Vec<F> = x.values.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let requires_grad = x.requires_grad;
        let (r, c) = (x.rows, x.cols);
        drop(inner);
        Ok(self.tape.push(Node {
            rows: r,
            cols: c,
            values: Arc::new(values),
            requires_grad,
            param: None,
            op: Op::Dropout(self.node, Arc::new(mask)),
        }))
    }

    /// Gathers rows of `self` (the table) by index.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor<F>> {
        let (r, c) = (self.rows(), self.cols());
        for &ix in indices {
            if ix >= r {
                return Err(Error::Contract(format!(
                    "gather index {ix} out of range for table with {r} rows"
                )));
            }
        }
        let inner = self.tape.inner.borrow();
        let x = &inner.nodes[self.node];
        let mut values = Vec::with_capacity(indices.len() * c);
        for &ix in indices {
            values.extend_from_slice(&x.values[ix * c..(ix + 1) * c]);
        }
        let requires_grad = x.requires_grad;
        drop(inner);
        Ok(self.tape.push(Node {
            rows: indices.len(),
            cols: c,
            values: Arc::new(values),
            requires_grad,
            param: None,
            op: Op::Gather(self.node, Arc::new(indices.to_vec())),
        }))
    }

    /// Sum of all elements, as a 1×1 tensor.
    pub fn sum(&self) -> Tensor<F> {
        let s = self.tape.inner.borrow().nodes[self.node]
            .values
            .iter()
            .fold(F::zero(), |a, &b| a + b);
        self.unary(1, 1, vec![s], Op::Sum(self.node))
    }

    /// Inner product of two 1×d vectors, as a 1×1 tensor.
    pub fn dot(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        if self.rows() != 1 || rhs.rows() != 1 || self.cols() != rhs.cols() {
            return Err(Error::Shape { op: "dot", lhs: self.shape(), rhs: rhs.shape() });
        }
        self.matmul(&rhs.transpose())
    }

    pub fn tape(&self) -> &Tape<F> {
        &self.tape
    }
}
