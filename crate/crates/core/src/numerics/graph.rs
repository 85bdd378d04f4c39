//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar walks the record in reverse and returns the
//! gradient of that scalar with respect to every parameter (and every
//! intermediate) that contributed to it.
//!
//! Parameters are borrowed from a [`ParamStore`] rather than copied, so a
//! graph is cheap to build per utterance and is simply dropped afterwards.

use std::collections::HashMap;

use super::matrix::{logsumexp, sigmoid};
use super::{Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Backward rule for [`Graph::custom`]: receives the upstream gradient, the
/// input values and the output value; returns one gradient per input.
pub type BackwardFn = Box<dyn Fn(&Matrix, &[&Matrix], &Matrix) -> Vec<Matrix>>;

enum Op {
    Input,
    Param(ParamId),
    Embed { table: ParamId, ids: Vec<usize> },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    SoftmaxCols(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    Transpose(Var),
    Sum(Var),
    SumRows(Var),
    Dropout { x: Var, mask: Matrix },
    BceWithLogits { logits: Var, targets: Matrix },
    SoftmaxCrossEntropy { logits: Var, target: usize },
    Custom { inputs: Vec<Var>, backward: BackwardFn },
}

struct Node {
    value: Matrix,
    op: Op,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    params: Vec<Option<Matrix>>,
    vars: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for a parameter, `None` if the loss does not reach it.
    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        self.params.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.params
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    /// Gradient with respect to any recorded node.
    pub fn wrt(&self, var: Var) -> Option<&Matrix> {
        self.vars.get(var.0).and_then(|g| g.as_ref())
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => acc.add_assign(&g).expect("gradient shape is fixed by the forward pass"),
        None => *slot = Some(g),
    }
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match self.nodes[v.0].op {
            Op::Param(id) => self.store.value(id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// A constant leaf. Gradients still reach it and can be read with
    /// [`Gradients::wrt`].
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(Matrix::zeros(0, 0), Op::Param(id));
        self.param_vars.insert(id, v);
        v
    }

    /// Looks up rows `ids` of an embedding table (`vocab x dim`) and returns
    /// them as columns of a `dim x ids.len()` matrix.
    pub fn embed(&mut self, table: ParamId, ids: &[usize]) -> Result<Var> {
        let t = self.store.value(table);
        let mut out = Matrix::zeros(t.cols(), ids.len());
        for (c, &id) in ids.iter().enumerate() {
            if id >= t.rows() {
                return Err(Error::Contract(format!(
                    "embedding id {id} out of range for table with {} rows",
                    t.rows()
                )));
            }
            for (r, &v) in t.row_slice(id).iter().enumerate() {
                out.set(r, c, v);
            }
        }
        Ok(self.push(
            out,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).scale(factor);
        self.push(out, Op::Scale(x, factor))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    /// Softmax along each row. Masked-out columns get weight exactly 0 and
    /// receive no gradient.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let out = self.value(x).softmax_rows(mask)?;
        Ok(self.push(out, Op::SoftmaxRows(x)))
    }

    pub fn softmax_cols(&mut self, x: Var) -> Var {
        let out = self.value(x).softmax_cols();
        self.push(out, Op::SoftmaxCols(x))
    }

    /// Stacks matrices vertically; all parts must share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.check_parts(parts, "concat_rows", |m| m.cols())?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            rows += m.rows();
            data.extend_from_slice(m.data());
        }
        let out = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Places matrices side by side; all parts must share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.check_parts(parts, "concat_cols", |m| m.rows())?;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p);
            for r in 0..rows {
                for c in 0..m.cols() {
                    out.set(r, offset + c, m.get(r, c));
                }
            }
            offset += m.cols();
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    fn check_parts(
        &self,
        parts: &[Var],
        op: &'static str,
        dim: impl Fn(&Matrix) -> usize,
    ) -> Result<usize> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract(format!("{op} of zero matrices")))?;
        let want = dim(self.value(*first));
        for &p in &parts[1..] {
            if dim(self.value(p)) != want {
                return Err(Error::Dimension {
                    op,
                    left: self.shape(*first),
                    right: self.shape(p),
                });
            }
        }
        Ok(want)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let m = self.value(x);
        if start + len > m.rows() {
            return Err(Error::Dimension {
                op: "slice_rows",
                left: m.shape(),
                right: (start + len, m.cols()),
            });
        }
        let cols = m.cols();
        let out = Matrix::from_vec(len, cols, m.data()[start * cols..(start + len) * cols].to_vec())?;
        Ok(self.push(out, Op::SliceRows { x, start }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let m = self.value(x);
        if start + len > m.cols() {
            return Err(Error::Dimension {
                op: "slice_cols",
                left: m.shape(),
                right: (m.rows(), start + len),
            });
        }
        let mut out = Matrix::zeros(m.rows(), len);
        for r in 0..m.rows() {
            for c in 0..len {
                out.set(r, c, m.get(r, start + c));
            }
        }
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    pub fn column(&mut self, x: Var, c: usize) -> Result<Var> {
        self.slice_cols(x, c, 1)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.push(out, Op::Transpose(x))
    }

    /// Sum of all entries, as a 1x1 matrix.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Matrix::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    /// Column sums: an `r x c` input yields `1 x c`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let mut out = Matrix::zeros(1, m.cols());
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                out.add_at(0, c, m.get(r, c));
            }
        }
        self.push(out, Op::SumRows(x))
    }

    /// Multiplies by a fixed mask (entries are 0 or the inverted-dropout
    /// scale).
    pub fn dropout(&mut self, x: Var, mask: Matrix) -> Result<Var> {
        let out = self.value(x).hadamard(&mask)?;
        Ok(self.push(out, Op::Dropout { x, mask }))
    }

    /// Summed binary cross entropy of `sigmoid(logits)` against 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Matrix) -> Result<Var> {
        let x = self.value(logits);
        if x.shape() != targets.shape() {
            return Err(Error::Dimension {
                op: "bce_with_logits",
                left: x.shape(),
                right: targets.shape(),
            });
        }
        let loss: f64 = x
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        Ok(self.push(
            Matrix::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.clone(),
            },
        ))
    }

    /// `-log softmax(logits)[target]` for a column vector of class scores.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let x = self.value(logits);
        if x.cols() != 1 || target >= x.rows() {
            return Err(Error::Contract(format!(
                "softmax_cross_entropy expects a column of scores covering class {target}, got {:?}",
                x.shape()
            )));
        }
        let loss = logsumexp(x.data()) - x.get(target, 0);
        Ok(self.push(
            Matrix::scalar(loss),
            Op::SoftmaxCrossEntropy { logits, target },
        ))
    }

    /// Records an operation whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Matrix, backward: BackwardFn) -> Var {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
        )
    }

    /// Back-propagates from a 1x1 `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut params: Vec<Option<Matrix>> = (0..self.store.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = &node.value;
            match &node.op {
                Op::Input => {}
                Op::Param(id) => accumulate(&mut params[id.0], g.clone()),
                Op::Embed { table, ids } => {
                    let t = self.store.value(*table);
                    let slot = params[table.0].get_or_insert_with(|| Matrix::zeros(t.rows(), t.cols()));
                    for (c, &id) in ids.iter().enumerate() {
                        for r in 0..g.rows() {
                            slot.add_at(id, r, g.get(r, c));
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let da = matmul_transb(&g, self.value(*b));
                    let db = matmul_transa(self.value(*a), &g);
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    let da = g.hadamard(self.value(*b))?;
                    let db = g.hadamard(self.value(*a))?;
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::Scale(x, f) => accumulate(&mut grads[x.0], g.scale(*f)),
                Op::Tanh(x) => {
                    let d = g.zip_map(out, "tanh'", |g, y| g * (1.0 - y * y))?;
                    accumulate(&mut grads[x.0], d);
                }
                Op::Sigmoid(x) => {
                    let d = g.zip_map(out, "sigmoid'", |g, y| g * y * (1.0 - y))?;
                    accumulate(&mut grads[x.0], d);
                }
                Op::SoftmaxRows(x) => accumulate(&mut grads[x.0], softmax_rows_backward(&g, out)),
                Op::SoftmaxCols(x) => {
                    let d = softmax_rows_backward(&g.transpose(), &out.transpose()).transpose();
                    accumulate(&mut grads[x.0], d);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (r, c) = self.shape(*p);
                        let piece = Matrix::from_vec(r, c, g.data()[offset * c..(offset + r) * c].to_vec())?;
                        accumulate(&mut grads[p.0], piece);
                        offset += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (r, c) = self.shape(*p);
                        let mut piece = Matrix::zeros(r, c);
                        for i in 0..r {
                            for j in 0..c {
                                piece.set(i, j, g.get(i, offset + j));
                            }
                        }
                        accumulate(&mut grads[p.0], piece);
                        offset += c;
                    }
                }
                Op::SliceRows { x, start } => {
                    let (r, c) = self.shape(*x);
                    let mut d = Matrix::zeros(r, c);
                    d.data_mut()[start * c..(start + g.rows()) * c].copy_from_slice(g.data());
                    accumulate(&mut grads[x.0], d);
                }
                Op::SliceCols { x, start } => {
                    let (r, c) = self.shape(*x);
                    let mut d = Matrix::zeros(r, c);
                    for i in 0..r {
                        for j in 0..g.cols() {
                            d.set(i, start + j, g.get(i, j));
                        }
                    }
                    accumulate(&mut grads[x.0], d);
                }
                Op::Transpose(x) => accumulate(&mut grads[x.0], g.transpose()),
                Op::Sum(x) => {
                    let (r, c) = self.shape(*x);
                    accumulate(&mut grads[x.0], Matrix::filled(r, c, g.get(0, 0)));
                }
                Op::SumRows(x) => {
                    let (r, c) = self.shape(*x);
                    let mut d = Matrix::zeros(r, c);
                    for i in 0..r {
                        for j in 0..c {
                            d.set(i, j, g.get(0, j));
                        }
                    }
                    accumulate(&mut grads[x.0], d);
                }
                Op::Dropout { x, mask } => accumulate(&mut grads[x.0], g.hadamard(mask)?),
                Op::BceWithLogits { logits, targets } => {
                    let s = g.get(0, 0);
                    let d = self
                        .value(*logits)
                        .zip_map(targets, "bce'", |z, t| s * (sigmoid(z) - t))?;
                    accumulate(&mut grads[logits.0], d);
                }
                Op::SoftmaxCrossEntropy { logits, target } => {
                    let s = g.get(0, 0);
                    let mut d = self.value(*logits).softmax_cols();
                    d.add_at(*target, 0, -1.0);
                    accumulate(&mut grads[logits.0], d.scale(s));
                }
                Op::Custom { inputs, backward } => {
                    let values: Vec<&Matrix> = inputs.iter().map(|&v| self.value(v)).collect();
                    let ds = backward(&g, &values, out);
                    if ds.len() != inputs.len() {
                        return Err(Error::Contract(format!(
                            "custom backward returned {} gradients for {} inputs",
                            ds.len(),
                            inputs.len()
                        )));
                    }
                    for (v, d) in inputs.iter().zip(ds) {
                        if d.shape() != self.shape(*v) {
                            return Err(Error::Dimension {
                                op: "custom backward",
                                left: self.shape(*v),
                                right: d.shape(),
                            });
                        }
                        accumulate(&mut grads[v.0], d);
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { params, vars: grads })
    }
}

/// `a × bᵀ` without materialising the transpose.
fn matmul_transb(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert_eq!(a.cols(), b.cols());
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let ar = a.row_slice(i);
        for j in 0..b.rows() {
            let br = b.row_slice(j);
            let mut s = 0.0;
            for k in 0..ar.len() {
                s += ar[k] * br[k];
            }
            out.set(i, j, s);
        }
    }
    out
}

/// `aᵀ × b` without materialising the transpose.
fn matmul_transa(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert_eq!(a.rows(), b.rows());
    let (m, p) = (a.cols(), b.cols());
    let mut out = Matrix::zeros(m, p);
    let data = out.data_mut();
    for k in 0..a.rows() {
        let ar = a.row_slice(k);
        let br = b.row_slice(k);
        for i in 0..m {
            let av = ar[i];
            if av == 0.0 {
                continue;
            }
            let row = &mut data[i * p..(i + 1) * p];
            for (o, &bv) in row.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    out
}

fn softmax_rows_backward(g: &Matrix, y: &Matrix) -> Matrix {
    let mut d = Matrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let dot: f64 = (0..y.cols()).map(|c| g.get(r, c) * y.get(r, c)).sum();
        for c in 0..y.cols() {
            d.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
        }
    }
    d
}
