//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every primitive in execution order. Values are kept
//! for the backward sweep, which visits each record once in reverse and sums
//! contributions where a value fans out. Trainable leaves are registered by
//! name and borrow their tensor, so large embedding tables are never copied
//! onto the tape.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{matmul_at_into, matmul_bt_into, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Floor applied to probabilities before taking a log.
pub const PROB_FLOOR: f64 = 1e-12;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2))
}

pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu_scalar(x: f64) -> f64 {
    x * std_normal_cdf(x)
}

pub fn gelu_grad_scalar(x: f64) -> f64 {
    std_normal_cdf(x) + x * std_normal_pdf(x)
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax of a slice.
pub fn softmax_slice(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Standalone softmax over a vector.
pub fn softmax(v: &Tensor) -> Result<Tensor> {
    if v.is_empty() {
        return Err(Error::Empty("softmax"));
    }
    Tensor::vector(softmax_slice(v.data())).reshape(v.shape().to_vec())
}

/// Elementwise exact GELU.
pub fn gelu(x: &Tensor) -> Tensor {
    x.map(gelu_scalar)
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRowBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    MeanAxis0(Var),
    MaxAxis0(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    SelectRows(Vec<bool>, Var, Var),
    EmbeddingBag(Var, Vec<Vec<usize>>),
    Dropout(Var, Vec<f64>),
    CrossEntropy(Var, Vec<usize>),
}

enum Value<'p> {
    Owned(Tensor),
    Borrowed(&'p Tensor),
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
    trainable: Option<String>,
}

/// Per-parameter gradients keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientSet {
    grads: BTreeMap<String, Tensor>,
}

impl GradientSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.grads.insert(name.into(), grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.grads.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.grads.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.grads.keys()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.values().map(Tensor::sq_norm).sum::<f64>().sqrt()
    }
}

/// Recording of one forward pass.
#[derive(Default)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            trainable: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Trainable leaf borrowing its tensor.
    pub fn param(&mut self, name: impl Into<String>, value: &'p Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(value),
            op: Op::Leaf,
            trainable: Some(name.into()),
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf owning its tensor.
    pub fn param_owned(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op: Op::Leaf,
            trainable: Some(name.into()),
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Adds a length-`n` bias to every row of an `[m×n]` matrix.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2();
        let b = self.value(bias);
        if b.len() != n {
            return Err(Error::ShapeMismatch {
                op: "add_row_bias",
                left: self.value(a).shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let mut out = self.value(a).clone().reshape([m, n])?;
        for i in 0..m {
            for (o, &bv) in out.row_mut(i).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddRowBias(a, bias)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = gelu(self.value(a));
        self.push(out, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid_scalar);
        self.push(out, Op::Sigmoid(a))
    }

    /// Softmax along the last axis (each row of a matrix, or a whole vector).
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::Empty("softmax"));
        }
        let (m, _) = x.dims2();
        let mut data = Vec::with_capacity(x.len());
        for i in 0..m {
            data.extend(softmax_slice(x.row(i)));
        }
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Softmax(a)))
    }

    /// Column means of an `[m×n]` matrix: `out[j] = mean_i a[i][j]`.
    pub fn mean_axis0(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (m, n) = x.dims2();
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, &v) in out.iter_mut().zip(x.row(i)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        self.push(Tensor::vector(out), Op::MeanAxis0(a))
    }

    /// Column maxima of an `[m×n]` matrix. Ties resolve to the first row.
    pub fn max_axis0(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (m, n) = x.dims2();
        let mut out = x.row(0).to_vec();
        let mut arg = vec![0; n];
        for i in 1..m {
            for (j, &v) in x.row(i).iter().enumerate() {
                if v > out[j] {
                    out[j] = v;
                    arg[j] = i;
                }
            }
        }
        self.push(Tensor::vector(out), Op::MaxAxis0(a, arg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.sum() / x.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2();
            if r != m {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: self.value(parts[0]).shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new([m, total], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Vertical concatenation of matrices (or vectors as rows) with equal widths.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut m = 0;
        for &p in parts {
            let x = self.value(p);
            if x.cols() != n {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    left: self.value(parts[0]).shape().to_vec(),
                    right: x.shape().to_vec(),
                });
            }
            m += x.rows();
            data.extend_from_slice(x.data());
        }
        let out = Tensor::new([m, n], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Columns `start..start+width` of an `[m×n]` matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = x.dims2();
        if width == 0 || start + width > n {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                left: x.shape().to_vec(),
                right: vec![start, width],
            });
        }
        let mut data = Vec::with_capacity(m * width);
        for i in 0..m {
            data.extend_from_slice(&x.row(i)[start..start + width]);
        }
        let out = Tensor::new([m, width], data)?;
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    /// Picks rows by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = x.dims2();
        if indices.is_empty() || indices.iter().any(|&i| i >= m) {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                left: x.shape().to_vec(),
                right: vec![indices.len()],
            });
        }
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(x.row(i));
        }
        let out = Tensor::new([indices.len(), n], data)?;
        Ok(self.push(out, Op::GatherRows(a, indices.to_vec())))
    }

    /// Row `i` comes from `on_true` where `mask[i]`, else from `on_false`.
    pub fn select_rows(&mut self, mask: &[bool], on_true: Var, on_false: Var) -> Result<Var> {
        self.same_shape("select_rows", on_true, on_false)?;
        let t = self.value(on_true);
        let f = self.value(on_false);
        if t.rows() != mask.len() {
            return Err(Error::ShapeMismatch {
                op: "select_rows",
                left: t.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let mut out = f.clone();
        for (i, &keep) in mask.iter().enumerate() {
            if keep {
                out.row_mut(i).copy_from_slice(t.row(i));
            }
        }
        Ok(self.push(out, Op::SelectRows(mask.to_vec(), on_true, on_false)))
    }

    /// Row `r` of the output is the mean of `table` rows listed in `bags[r]`;
    /// an empty bag yields a zero row.
    pub fn embedding_bag(&mut self, table: Var, bags: &[Vec<usize>]) -> Result<Var> {
        let t = self.value(table);
        let (rows, d) = t.dims2();
        if bags.is_empty() {
            return Err(Error::Empty("embedding_bag"));
        }
        if let Some(&bad) = bags.iter().flatten().find(|&&i| i >= rows) {
            return Err(Error::ShapeMismatch {
                op: "embedding_bag",
                left: t.shape().to_vec(),
                right: vec![bad],
            });
        }
        let mut data = vec![0.0; bags.len() * d];
        for (r, bag) in bags.iter().enumerate() {
            if bag.is_empty() {
                continue;
            }
            let out = &mut data[r * d..(r + 1) * d];
            for &idx in bag {
                for (o, &v) in out.iter_mut().zip(t.row(idx)) {
                    *o += v;
                }
            }
            let inv = bag.len() as f64;
            for o in out.iter_mut() {
                *o /= inv;
            }
        }
        let out = Tensor::new([bags.len(), d], data)?;
        Ok(self.push(out, Op::EmbeddingBag(table, bags.to_vec())))
    }

    /// Inverted dropout. In evaluation mode (`training == false`) or with
    /// `p == 0` the input is returned unchanged and nothing is recorded.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - p;
        let x = self.value(a);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(&mask).map(|(v, m)| v * m).collect(),
        )?;
        Ok(self.push(out, Op::Dropout(a, mask)))
    }

    /// Mean over rows of `−ln max(probs[r][label_r], 1e-12)`.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let p = self.value(probs);
        let (m, c) = p.dims2();
        if m != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                left: p.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::InvalidLabel(bad));
        }
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(r, &y)| -p.get(r, y).max(PROB_FLOOR).ln())
            .sum();
        Ok(self.push(
            Tensor::scalar(total / m as f64),
            Op::CrossEntropy(probs, labels.to_vec()),
        ))
    }

    /// Reverse sweep from a scalar `loss`. Every registered trainable leaf
    /// gets an entry, zero-filled when the loss does not depend on it.
    pub fn backward(&self, loss: Var) -> Result<GradientSet> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(&node.op, Var(idx), &g, &mut grads);
            // Only leaf gradients are returned; intermediate ones are freed.
            if node.trainable.is_some() {
                grads[idx] = Some(g);
            }
        }

        let mut out = GradientSet::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            let Some(name) = &node.trainable else { continue };
            let g = grads
                .get_mut(idx)
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor::zeros(self.value(Var(idx)).shape().to_vec()));
            match out.grads.get_mut(name) {
                Some(existing) => existing.add_assign(&g),
                None => out.insert(name.clone(), g),
            }
        }
        Ok(out)
    }

    fn propagate(&self, op: &Op, out: Var, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let acc = |grads: &mut [Option<Tensor>], v: Var, contrib: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        };
        let shape_of = |v: Var| self.value(v).shape().to_vec();

        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2();
                let n = bv.cols();
                let mut ga = vec![0.0; m * k];
                matmul_bt_into(g.data(), bv.data(), &mut ga, m, n, k);
                let mut gb = vec![0.0; k * n];
                matmul_at_into(av.data(), g.data(), &mut gb, m, k, n);
                acc(grads, *a, Tensor::new(shape_of(*a), ga).expect("shape"));
                acc(grads, *b, Tensor::new(shape_of(*b), gb).expect("shape"));
            }
            Op::Transpose(a) => {
                let t = g.transpose().reshape(shape_of(*a)).expect("shape");
                acc(grads, *a, t);
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.map(|x| -x));
            }
            Op::AddRowBias(a, bias) => {
                let (m, n) = g.dims2();
                let mut gb = vec![0.0; n];
                for i in 0..m {
                    for (o, &v) in gb.iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                acc(grads, *a, g.clone().reshape(shape_of(*a)).expect("shape"));
                acc(grads, *bias, Tensor::new(shape_of(*bias), gb).expect("shape"));
            }
            Op::Mul(a, b) => {
                let ga = g.zip_map(self.value(*b), |gv, bv| gv * bv);
                let gb = g.zip_map(self.value(*a), |gv, av| gv * av);
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::Scale(a, f) => acc(grads, *a, g.map(|x| x * f)),
            Op::Gelu(a) => {
                let ga = g.zip_map(self.value(*a), |gv, x| gv * gelu_grad_scalar(x));
                acc(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let ga = g.zip_map(self.value(out), |gv, y| gv * (1.0 - y * y));
                acc(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = g.zip_map(self.value(out), |gv, y| gv * y * (1.0 - y));
                acc(grads, *a, ga);
            }
            Op::Softmax(a) => {
                let y = self.value(out);
                let (m, _) = y.dims2();
                let mut ga = Vec::with_capacity(y.len());
                for i in 0..m {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    ga.extend(yr.iter().zip(gr).map(|(p, q)| p * (q - dot)));
                }
                acc(grads, *a, Tensor::new(shape_of(*a), ga).expect("shape"));
            }
            Op::MeanAxis0(a) => {
                let (m, n) = self.value(*a).dims2();
                let inv = 1.0 / m as f64;
                let mut ga = Vec::with_capacity(m * n);
                for _ in 0..m {
                    ga.extend(g.data().iter().map(|x| x * inv));
                }
                acc(grads, *a, Tensor::new(shape_of(*a), ga).expect("shape"));
            }
            Op::MaxAxis0(a, arg) => {
                let mut ga = Tensor::zeros(shape_of(*a));
                let n = arg.len();
                for (j, &i) in arg.iter().enumerate() {
                    ga.data_mut()[i * n + j] = g.data()[j];
                }
                acc(grads, *a, ga);
            }
            Op::Sum(a) => acc(grads, *a, Tensor::full(shape_of(*a), g.item())),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                acc(grads, *a, Tensor::full(shape_of(*a), g.item() / n));
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut gp = Vec::with_capacity(m * w);
                    for i in 0..m {
                        gp.extend_from_slice(&g.row(i)[offset..offset + w]);
                    }
                    offset += w;
                    acc(grads, p, Tensor::new(shape_of(p), gp).expect("shape"));
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    let gp = g.data()[offset..offset + len].to_vec();
                    offset += len;
                    acc(grads, p, Tensor::new(shape_of(p), gp).expect("shape"));
                }
            }
            Op::SliceCols(a, start) => {
                let (m, n) = self.value(*a).dims2();
                let w = g.cols();
                let mut ga = Tensor::zeros(shape_of(*a));
                for i in 0..m {
                    ga.data_mut()[i * n + start..i * n + start + w].copy_from_slice(g.row(i));
                }
                acc(grads, *a, ga);
            }
            Op::GatherRows(a, indices) => {
                let mut ga = Tensor::zeros(shape_of(*a));
                let n = ga.cols();
                for (r, &i) in indices.iter().enumerate() {
                    for (o, &v) in ga.data_mut()[i * n..(i + 1) * n].iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(grads, *a, ga);
            }
            Op::SelectRows(mask, t, f) => {
                let mut gt = Tensor::zeros(shape_of(*t));
                let mut gf = g.clone();
                for (i, &keep) in mask.iter().enumerate() {
                    if keep {
                        gt.row_mut(i).copy_from_slice(g.row(i));
                        gf.row_mut(i).iter_mut().for_each(|x| *x = 0.0);
                    }
                }
                acc(grads, *t, gt);
                acc(grads, *f, gf);
            }
            Op::EmbeddingBag(table, bags) => {
                let mut gt = Tensor::zeros(shape_of(*table));
                let d = gt.cols();
                for (r, bag) in bags.iter().enumerate() {
                    if bag.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / bag.len() as f64;
                    let gr = g.row(r);
                    for &idx in bag {
                        let row = &mut gt.data_mut()[idx * d..(idx + 1) * d];
                        for (o, &v) in row.iter_mut().zip(gr) {
                            *o += v * inv;
                        }
                    }
                }
                acc(grads, *table, gt);
            }
            Op::Dropout(a, mask) => {
                let ga = Tensor::new(
                    shape_of(*a),
                    g.data().iter().zip(mask).map(|(v, m)| v * m).collect(),
                )
                .expect("shape");
                acc(grads, *a, ga);
            }
            Op::CrossEntropy(probs, labels) => {
                let p = self.value(*probs);
                let m = labels.len() as f64;
                let mut gp = Tensor::zeros(shape_of(*probs));
                let c = p.cols();
                for (r, &y) in labels.iter().enumerate() {
                    let pv = p.get(r, y);
                    if pv > PROB_FLOOR {
                        gp.data_mut()[r * c + y] = -g.item() / (pv * m);
                    }
                }
                acc(grads, *probs, gp);
            }
        }
    }
}
