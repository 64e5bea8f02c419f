//! Eager tape for reverse-mode differentiation. Every op computes its value
//! when it is recorded; [`Graph::backward`] walks the tape in reverse.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Handle to a recorded value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Ln(Var),
    Sqrt(Var),
    Square(Var),
    ClampMin(Var, f64),
    Clamp(Var, f64, f64),
    ColMean(Var),
    BroadcastRows(Var),
    RowSum(Var),
    BroadcastCols(Var),
    Sum(Var),
    Mean(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    MaxOf(Vec<Var>),
    MaxRows(Var),
    /// Logits and labels; softmax probabilities are cached for backward.
    SoftmaxCrossEntropy(Var, Vec<usize>, Tensor),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: [usize; 2]) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape[0], shape[1]))
    }
}

fn shape_err(op: &str, a: [usize; 2], b: [usize; 2]) -> Error {
    Error::Shape(format!("{op}: {a:?} vs {b:?}"))
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a), &[a])
    }

    fn binary(&mut self, name: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(name, sa, sb));
        }
        Ok(self.value(a).zip_map(self.value(b), f))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("div", a, b, |x, y| x / y)?;
        Ok(self.push(v, Op::Div(a, b), &[a, b]))
    }

    /// `a + row`, with the 1 x C `row` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != [1, sa[1]] {
            return Err(shape_err("add_row", sa, sr));
        }
        let mut value = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for chunk in value.data_mut().chunks_mut(sa[1]) {
            for (x, b) in chunk.iter_mut().zip(&r) {
                *x += b;
            }
        }
        Ok(self.push(value, Op::AddRow(a, row), &[a, row]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x + s);
        self.push(value, Op::AddScalar(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(value, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a), &[a])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        self.push(value, Op::Ln(a), &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::sqrt);
        self.push(value, Op::Sqrt(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        self.push(value, Op::Square(a), &[a])
    }

    /// `max(a, lo)`; the gradient passes only where `a > lo`.
    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Var {
        let value = self.value(a).map(|x| x.max(lo));
        self.push(value, Op::ClampMin(a, lo), &[a])
    }

    /// Clamps into `[lo, hi]`; the gradient passes only strictly inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi), &[a])
    }

    /// Mean over rows: R x C -> 1 x C.
    pub fn col_mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let r = t.rows() as f64;
        let value = t.col_sum().map(|x| x / r);
        self.push(value, Op::ColMean(a), &[a])
    }

    /// Repeats a 1 x C row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let s = self.shape(a);
        if s[0] != 1 {
            return Err(Error::Shape(format!("broadcast_rows needs one row, got {s:?}")));
        }
        let row = self.value(a).data().to_vec();
        let value = Tensor::from_vec(n, s[1], row.repeat(n))?;
        Ok(self.push(value, Op::BroadcastRows(a), &[a]))
    }

    /// Sum over columns: R x C -> R x 1.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let value = self.value(a).row_sum();
        self.push(value, Op::RowSum(a), &[a])
    }

    /// Repeats an R x 1 column `n` times.
    pub fn broadcast_cols(&mut self, a: Var, n: usize) -> Result<Var> {
        let s = self.shape(a);
        if s[1] != 1 {
            return Err(Error::Shape(format!("broadcast_cols needs one column, got {s:?}")));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .flat_map(|&x| std::iter::repeat_n(x, n))
            .collect();
        let value = Tensor::from_vec(s[0], n, data)?;
        Ok(self.push(value, Op::BroadcastCols(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(value, Op::Mean(a), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a);
        if start > end || end > s[0] {
            return Err(Error::Shape(format!("slice_rows {start}..{end} of {s:?}")));
        }
        let value = self.value(a).slice_rows(start, end);
        Ok(self.push(value, Op::SliceRows(a, start), &[a]))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a);
        if start > end || end > s[1] {
            return Err(Error::Shape(format!("slice_cols {start}..{end} of {s:?}")));
        }
        let value = self.value(a).slice_cols(start, end);
        Ok(self.push(value, Op::SliceCols(a, start), &[a]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let value = {
            let ts: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
            Tensor::concat_rows(&ts)?
        };
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let value = {
            let ts: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
            Tensor::concat_cols(&ts)?
        };
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Elementwise maximum over equally shaped inputs; ties go to the first.
    pub fn max_of(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Shape("max over an empty sequence".into()))?;
        let s = self.shape(first);
        let mut value = self.value(first).clone();
        for &p in &parts[1..] {
            if self.shape(p) != s {
                return Err(shape_err("max_of", s, self.shape(p)));
            }
            for (m, &x) in value.data_mut().iter_mut().zip(self.value(p).data()) {
                if x > *m {
                    *m = x;
                }
            }
        }
        Ok(self.push(value, Op::MaxOf(parts.to_vec()), parts))
    }

    /// Maximum over rows: T x F -> 1 x F; ties go to the first row.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rows() == 0 {
            return Err(Error::Shape("max over an empty sequence".into()));
        }
        let mut value = t.slice_rows(0, 1);
        for r in 1..t.rows() {
            for (m, &x) in value.data_mut().iter_mut().zip(t.row(r)) {
                if x > *m {
                    *m = x;
                }
            }
        }
        Ok(self.push(value, Op::MaxRows(a), &[a]))
    }

    /// Mean softmax cross-entropy of B x C logits against `labels`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (b, c) = (t.rows(), t.cols());
        if labels.len() != b || b == 0 {
            return Err(Error::Shape(format!("{} labels for {b} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Validation(format!("label {bad} outside [0, {c})")));
        }
        let mut probs = Tensor::zeros(b, c);
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = t.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            for (j, x) in row.iter().enumerate() {
                probs.set(r, j, (x - m).exp() / z);
            }
            loss += z.ln() + m - row[label];
        }
        let value = Tensor::scalar(loss / b as f64);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy(logits, labels.to_vec(), probs),
            &[logits],
        ))
    }

    /// Reverse pass from a scalar `loss`, seeded with gradient 1.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::State("backward called before the forward pass".into()));
        }
        let s = self.shape(loss);
        if s != [1, 1] {
            return Err(Error::Shape(format!("backward needs a scalar loss, got {s:?}")));
        }
        self.backward_with(loss, Tensor::scalar(1.0))
    }

    /// Reverse pass from `out` with an explicit upstream gradient.
    pub fn backward_with(&self, out: Var, seed: Tensor) -> Result<Gradients> {
        if out.0 >= self.nodes.len() {
            return Err(Error::State("backward called before the forward pass".into()));
        }
        if seed.shape() != self.shape(out) {
            return Err(shape_err("backward seed", seed.shape(), self.shape(out)));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; out.0 + 1];
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, g.matmul_nt(val(*b)));
                acc(*b, val(*a).matmul_tn(g));
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(val(*b), |gi, bi| gi * bi));
                acc(*b, g.zip_map(val(*a), |gi, ai| gi * ai));
            }
            Op::Div(a, b) => {
                acc(*a, g.zip_map(val(*b), |gi, bi| gi / bi));
                let gb = g
                    .zip_map(val(*a), |gi, ai| gi * ai)
                    .zip_map(val(*b), |x, bi| -x / (bi * bi));
                acc(*b, gb);
            }
            Op::AddRow(a, r) => {
                acc(*a, g.clone());
                acc(*r, g.col_sum());
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * s)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Relu(a) => acc(*a, g.zip_map(val(*a), |gi, x| if x > 0.0 { gi } else { 0.0 })),
            Op::Sigmoid(a) => acc(*a, g.zip_map(y, |gi, s| gi * s * (1.0 - s))),
            Op::Tanh(a) => acc(*a, g.zip_map(y, |gi, t| gi * (1.0 - t * t))),
            Op::Ln(a) => acc(*a, g.zip_map(val(*a), |gi, x| gi / x)),
            Op::Sqrt(a) => acc(
                *a,
                g.zip_map(y, |gi, r| if r > 0.0 { gi / (2.0 * r) } else { 0.0 }),
            ),
            Op::Square(a) => acc(*a, g.zip_map(val(*a), |gi, x| 2.0 * x * gi)),
            Op::ClampMin(a, lo) => {
                let lo = *lo;
                acc(*a, g.zip_map(val(*a), |gi, x| if x > lo { gi } else { 0.0 }))
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                acc(
                    *a,
                    g.zip_map(val(*a), |gi, x| if x > lo && x < hi { gi } else { 0.0 }),
                )
            }
            Op::ColMean(a) => {
                let [r, c] = val(*a).shape();
                let row: Vec<f64> = g.data().iter().map(|x| x / r as f64).collect();
                acc(*a, Tensor::from_vec(r, c, row.repeat(r)).expect("shape"));
            }
            Op::BroadcastRows(a) => acc(*a, g.col_sum()),
            Op::RowSum(a) => {
                let [r, c] = val(*a).shape();
                let data = g
                    .data()
                    .iter()
                    .flat_map(|&x| std::iter::repeat_n(x, c))
                    .collect();
                acc(*a, Tensor::from_vec(r, c, data).expect("shape"));
            }
            Op::BroadcastCols(a) => acc(*a, g.row_sum()),
            Op::Sum(a) => {
                let [r, c] = val(*a).shape();
                acc(*a, Tensor::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let [r, c] = val(*a).shape();
                acc(*a, Tensor::filled(r, c, g.item() / (r * c) as f64));
            }
            Op::SliceRows(a, start) => {
                let [r, c] = val(*a).shape();
                let mut t = Tensor::zeros(r, c);
                t.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                acc(*a, t);
            }
            Op::SliceCols(a, start) => {
                let [r, c] = val(*a).shape();
                let w = g.cols();
                let mut t = Tensor::zeros(r, c);
                for i in 0..r {
                    t.data_mut()[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
                }
                acc(*a, t);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).rows();
                    acc(p, g.slice_rows(offset, offset + n));
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).cols();
                    acc(p, g.slice_cols(offset, offset + n));
                    offset += n;
                }
            }
            Op::MaxOf(parts) => {
                let mut out: Vec<Tensor> = parts
                    .iter()
                    .map(|&p| {
                        let [r, c] = val(p).shape();
                        Tensor::zeros(r, c)
                    })
                    .collect();
                for (e, (&m, &gi)) in y.data().iter().zip(g.data()).enumerate() {
                    let k = parts
                        .iter()
                        .position(|&p| val(p).data()[e] == m)
                        .expect("max comes from an input");
                    out[k].data_mut()[e] = gi;
                }
                for (&p, t) in parts.iter().zip(out) {
                    acc(p, t);
                }
            }
            Op::MaxRows(a) => {
                let x = val(*a);
                let [r, c] = x.shape();
                let mut t = Tensor::zeros(r, c);
                for j in 0..c {
                    let m = y.data()[j];
                    let k = (0..r).find(|&i| x.get(i, j) == m).expect("max comes from a row");
                    t.set(k, j, g.data()[j]);
                }
                acc(*a, t);
            }
            Op::SoftmaxCrossEntropy(logits, labels, probs) => {
                let b = labels.len() as f64;
                let mut t = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    t.set(r, l, t.get(r, l) - 1.0);
                }
                let s = g.item() / b;
                acc(*logits, t.map(|x| x * s));
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_sum_gradient_is_column_sums() {
        // L = sum(X W): dL/dW[i][j] = sum over rows of X[:, i].
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, -4.0], vec![0.5, 0.0]]).unwrap());
        let w = g.leaf(Tensor::from_rows(&[vec![0.1, 0.2, 0.3], vec![0.4, 0.5, 0.6]]).unwrap());
        let y = g.matmul(x, w).unwrap();
        let l = g.sum(y);
        let grads = g.backward(l).unwrap();
        let gw = grads.get(w).unwrap();
        assert_eq!(gw.row(0), &[4.5, 4.5, 4.5]);
        assert_eq!(gw.row(1), &[-2.0, -2.0, -2.0]);
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::filled(2, 2, 0.7));
        let y = g.tanh(w);
        let grads = g.backward_with(y, Tensor::zeros(2, 2)).unwrap();
        assert_eq!(grads.get(w).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let g = Graph::new();
        let mut other = Graph::new();
        let v = other.leaf(Tensor::scalar(1.0));
        assert!(matches!(g.backward(v), Err(Error::State(_))));
    }

    #[test]
    fn max_ties_route_to_first() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0], vec![3.0, 2.0]]).unwrap());
        let m = g.max_rows(a).unwrap();
        assert_eq!(g.value(m).data(), &[3.0, 5.0]);
        let l = g.sum(m);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(2, 3));
        let b = g.leaf(Tensor::zeros(3, 2));
        assert!(matches!(g.add(a, b), Err(Error::Shape(_))));
        assert!(g.matmul(a, a).is_err());
    }
}
