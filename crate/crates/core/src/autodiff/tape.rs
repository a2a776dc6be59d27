use super::tensor::{matmul_nt, matmul_tn, Tensor};
use crate::error::{ClcError, Result};

/// Lower clamp applied before every logarithm.
pub const LOG_EPS: f64 = 1e-12;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    SoftmaxRows(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Scale(Var, f64),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    ScaleRows(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Row(Var, usize),
    RowSum(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of one forward pass. Nodes are appended in execution order, so
/// every node's inputs precede it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node does not lie on a path to the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like its value.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.value(v).shape();
                Tensor::zeros(r, c)
            }
        }
    }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    /// Copy of `v` cut off from the gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(ClcError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(ClcError::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose();
        self.push("transpose", out, Op::Transpose(x), &[x])
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let out = softmax_rows(self.value(x));
        self.push("softmax_rows", out, Op::SoftmaxRows(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push("relu", out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::tanh);
        self.push("tanh", out, Op::Tanh(x), &[x])
    }

    /// Natural log of `max(x, LOG_EPS)`.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(LOG_EPS).ln());
        self.push("log", out, Op::Log(x), &[x])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * s);
        self.push("scale", out, Op::Scale(x, s), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    /// Adds the `1×n` row `bias` to every row of the `m×n` input.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(ClcError::shape(
                "add_row",
                format!("bias {:?} for input {:?}", bv.shape(), xv.shape()),
            ));
        }
        let mut out = xv.clone();
        let n = xv.cols();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += bv.data()[i % n];
        }
        self.push("add_row", out, Op::AddRow(x, bias), &[x, bias])
    }

    /// Multiplies row `i` of the `m×n` input by entry `i` of the `m×1` gate.
    pub fn scale_rows(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (xv, gv) = (self.value(x), self.value(gate));
        if gv.cols() != 1 || gv.rows() != xv.rows() {
            return Err(ClcError::shape(
                "scale_rows",
                format!("gate {:?} for input {:?}", gv.shape(), xv.shape()),
            ));
        }
        let mut out = xv.clone();
        let n = xv.cols();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o *= gv.data()[i / n];
        }
        self.push("scale_rows", out, Op::ScaleRows(x, gate), &[x, gate])
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| ClcError::shape("concat_cols", "no inputs"))?;
        let rows = self.value(*first).rows();
        if xs.iter().any(|&v| self.value(v).rows() != rows) {
            return Err(ClcError::shape("concat_cols", "row counts differ"));
        }
        let cols: usize = xs.iter().map(|&v| self.value(v).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &v in xs {
                data.extend_from_slice(self.value(v).row(r));
            }
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        self.push("concat_cols", out, Op::ConcatCols(xs.to_vec()), xs)
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| ClcError::shape("concat_rows", "no inputs"))?;
        let cols = self.value(*first).cols();
        if xs.iter().any(|&v| self.value(v).cols() != cols) {
            return Err(ClcError::shape("concat_rows", "column counts differ"));
        }
        let mut data = Vec::new();
        let mut rows = 0;
        for &v in xs {
            let t = self.value(v);
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        self.push("concat_rows", out, Op::ConcatRows(xs.to_vec()), xs)
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(ClcError::shape(
                "slice_cols",
                format!("columns {start}..{} of {}", start + len, xv.cols()),
            ));
        }
        let mut data = Vec::with_capacity(xv.rows() * len);
        for r in 0..xv.rows() {
            data.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let out = Tensor::from_vec(xv.rows(), len, data)?;
        self.push("slice_cols", out, Op::SliceCols(x, start), &[x])
    }

    /// Row `r` as a `1×n` tensor.
    pub fn row(&mut self, x: Var, r: usize) -> Result<Var> {
        let xv = self.value(x);
        if r >= xv.rows() {
            return Err(ClcError::shape("row", format!("row {r} of {}", xv.rows())));
        }
        let out = xv.slice_rows(r, 1);
        self.push("row", out, Op::Row(x, r), &[x])
    }

    /// `m×1` column of row sums.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let sums = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        let out = Tensor::from_vec(xv.rows(), 1, sums)?;
        self.push("row_sum", out, Op::RowSum(x), &[x])
    }

    /// Sum of all entries as a `1×1` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).data().iter().sum());
        self.push("sum", out, Op::Sum(x), &[x])
    }

    /// Linear map `x · weight + bias`.
    pub fn affine(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xw = self.matmul(x, weight)?;
        self.add_row(xw, bias)
    }

    /// Reverse pass from a `1×1` loss. Every node is visited once, in
    /// reverse recording order, and fan-out contributions are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(ClcError::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            if !g.is_finite() {
                return Err(ClcError::NonFinite { op: "backward" });
            }
            grads[idx] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, contrib: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    acc(*a, matmul_nt(g, val(*b)));
                }
                if self.nodes[b.0].requires_grad {
                    acc(*b, matmul_tn(val(*a), g));
                }
            }
            Op::Transpose(x) => acc(*x, g.transpose()),
            Op::SoftmaxRows(x) => {
                let n = y.cols();
                let mut dx = Tensor::zeros(y.rows(), n);
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..n {
                        dx.set(r, c, yr[c] * (gr[c] - dot));
                    }
                }
                acc(*x, dx);
            }
            Op::Relu(x) => acc(
                *x,
                val(*x).zip_map(g, |xv, gv| if xv > 0.0 { gv } else { 0.0 }),
            ),
            Op::Sigmoid(x) => acc(*x, y.zip_map(g, |s, gv| gv * s * (1.0 - s))),
            Op::Tanh(x) => acc(*x, y.zip_map(g, |t, gv| gv * (1.0 - t * t))),
            Op::Log(x) => acc(
                *x,
                val(*x).zip_map(g, |xv, gv| if xv > LOG_EPS { gv / xv } else { 0.0 }),
            ),
            Op::Scale(x, s) => acc(*x, g.map(|v| v * s)),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(val(*b), |gv, bv| gv * bv));
                acc(*b, g.zip_map(val(*a), |gv, av| gv * av));
            }
            Op::AddRow(x, bias) => {
                acc(*x, g.clone());
                let n = g.cols();
                let mut db = Tensor::zeros(1, n);
                for r in 0..g.rows() {
                    for (d, gv) in db.data_mut().iter_mut().zip(g.row(r)) {
                        *d += gv;
                    }
                }
                acc(*bias, db);
            }
            Op::ScaleRows(x, gate) => {
                let (xv, gv) = (val(*x), val(*gate));
                let n = xv.cols();
                let mut dx = g.clone();
                for (i, d) in dx.data_mut().iter_mut().enumerate() {
                    *d *= gv.data()[i / n];
                }
                acc(*x, dx);
                let dg = (0..xv.rows())
                    .map(|r| xv.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum())
                    .collect();
                acc(*gate, Tensor::from_vec(xv.rows(), 1, dg).expect("gate shape"));
            }
            Op::ConcatCols(xs) => {
                let mut offset = 0;
                for &v in xs {
                    let c = val(v).cols();
                    let mut part = Vec::with_capacity(g.rows() * c);
                    for r in 0..g.rows() {
                        part.extend_from_slice(&g.row(r)[offset..offset + c]);
                    }
                    acc(v, Tensor::from_vec(g.rows(), c, part).expect("concat shape"));
                    offset += c;
                }
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                for &v in xs {
                    let r = val(v).rows();
                    acc(v, g.slice_rows(offset, r));
                    offset += r;
                }
            }
            Op::SliceCols(x, start) => {
                let xv = val(*x);
                let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    for (c, gv) in g.row(r).iter().enumerate() {
                        dx.set(r, start + c, *gv);
                    }
                }
                acc(*x, dx);
            }
            Op::Row(x, r) => {
                // written in place: a fresh T×n buffer per row would make
                // recurrent loops quadratic in sequence length
                if self.nodes[x.0].requires_grad {
                    let (rows, cols) = val(*x).shape();
                    let dx = grads[x.0].get_or_insert_with(|| Tensor::zeros(rows, cols));
                    let start = r * cols;
                    for (d, gv) in dx.data_mut()[start..start + cols].iter_mut().zip(g.data()) {
                        *d += gv;
                    }
                }
            }
            Op::RowSum(x) => {
                let xv = val(*x);
                let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                let n = xv.cols();
                for (i, d) in dx.data_mut().iter_mut().enumerate() {
                    *d = g.data()[i / n];
                }
                acc(*x, dx);
            }
            Op::Sum(x) => {
                let (r, c) = val(*x).shape();
                acc(*x, Tensor::filled(r, c, g.item()));
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let n = x.cols();
    for r in 0..x.rows() {
        let row = &mut out.data_mut()[r * n..(r + 1) * n];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}
