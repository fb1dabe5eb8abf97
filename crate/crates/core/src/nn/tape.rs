//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a node holding its output value; [`Tape::backward`]
//! walks the tape in reverse and accumulates gradients. Parameters are read
//! from a borrowed slice of tensors and receive their gradients in a
//! [`Grads`] buffer of matching shapes. Embedding lookups go through
//! [`Tape::gather`], which never copies the full table.

use super::mat::{gemm, sigmoid, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    Gather { param: usize, rows: Vec<usize> },
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    Mul(Var, Var),
    ScaleRows(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    GatherRows { src: Var, rows: Vec<Option<usize>> },
    Segment { src: Var, target: Vec<usize>, weight: Vec<f64> },
    SliceCols { src: Var, start: usize },
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    Bce { logits: Var, targets: Vec<f64> },
    Sum(Var),
    Scale(Var, f64),
}

struct Node {
    value: Mat,
    op: Op,
}

/// Gradient buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub tensors: Vec<Mat>,
}

impl Grads {
    pub fn zeros_like(params: &[Mat]) -> Self {
        Grads {
            tensors: params.iter().map(|p| Mat::zeros(p.rows(), p.cols())).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Mat::is_finite)
    }
}

pub struct Tape<'p> {
    params: &'p [Mat],
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Mat]) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "not a scalar");
        m.data()[0]
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Whole parameter tensor; created once per tape.
    pub fn param(&mut self, id: usize) -> Var {
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        let v = self.push(self.params[id].clone(), Op::Param(id));
        self.param_vars[id] = Some(v);
        v
    }

    /// Rows of a parameter tensor (embedding lookup).
    pub fn gather(&mut self, param: usize, rows: Vec<usize>) -> Var {
        let table = &self.params[param];
        let cols = table.cols();
        let mut out = Mat::zeros(rows.len(), cols);
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(table.row(r));
        }
        self.push(out, Op::Gather { param, rows })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Mat::zeros(va.rows(), vb.cols());
        gemm(1.0, va, false, vb, false, 0.0, &mut out);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Mat::zeros(va.rows(), vb.rows());
        gemm(1.0, va, false, vb, true, 0.0, &mut out);
        self.push(out, Op::MatMulBT(a, b))
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Mat {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Mat::from_vec(va.rows(), va.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    /// `a (m×n) + b (1×n)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!((1, va.cols()), vb.shape());
        let mut out = va.clone();
        for r in 0..out.rows() {
            for (x, y) in out.row_mut(r).iter_mut().zip(vb.data()) {
                *x += y;
            }
        }
        self.push(out, Op::AddRow(a, b))
    }

    /// `a (m×n) + b (m×1)` broadcast over columns.
    pub fn add_col(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!((va.rows(), 1), vb.shape());
        let mut out = va.clone();
        for r in 0..out.rows() {
            let s = vb.data()[r];
            out.row_mut(r).iter_mut().for_each(|x| *x += s);
        }
        self.push(out, Op::AddCol(a, b))
    }

    /// Row `i` of `a` multiplied by `s[i]`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Var {
        let (va, vs) = (self.value(a), self.value(s));
        assert_eq!((va.rows(), 1), vs.shape());
        let mut out = va.clone();
        for r in 0..out.rows() {
            let k = vs.data()[r];
            out.row_mut(r).iter_mut().for_each(|x| *x *= k);
        }
        self.push(out, Op::ScaleRows(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// Selected rows of `src`; `None` yields a zero row.
    pub fn gather_rows(&mut self, src: Var, rows: Vec<Option<usize>>) -> Var {
        let v = self.value(src);
        let mut out = Mat::zeros(rows.len(), v.cols());
        for (i, r) in rows.iter().enumerate() {
            if let Some(r) = *r {
                out.row_mut(i).copy_from_slice(v.row(r));
            }
        }
        self.push(out, Op::GatherRows { src, rows })
    }

    /// `out[target[i]] += weight[i] * src[i]`, with `out` having `n` rows.
    pub fn segment(&mut self, src: Var, target: Vec<usize>, weight: Vec<f64>, n: usize) -> Var {
        let v = self.value(src);
        assert_eq!(v.rows(), target.len());
        assert_eq!(target.len(), weight.len());
        let mut out = Mat::zeros(n, v.cols());
        for (i, (&t, &w)) in target.iter().zip(&weight).enumerate() {
            for (o, x) in out.row_mut(t).iter_mut().zip(v.row(i)) {
                *o += w * x;
            }
        }
        self.push(out, Op::Segment { src, target, weight })
    }

    /// Mean of `src` rows grouped by `target`; empty groups are zero rows.
    pub fn segment_mean(&mut self, src: Var, target: Vec<usize>, n: usize) -> Var {
        let mut count = vec![0usize; n];
        for &t in &target {
            count[t] += 1;
        }
        let weight = target.iter().map(|&t| 1.0 / count[t] as f64).collect();
        self.segment(src, target, weight, n)
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, end: usize) -> Var {
        let v = self.value(src);
        let mut out = Mat::zeros(v.rows(), end - start);
        for r in 0..v.rows() {
            out.row_mut(r).copy_from_slice(&v.row(r)[start..end]);
        }
        self.push(out, Op::SliceCols { src, start })
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.rows(), vb.rows());
        let mut out = Mat::zeros(va.rows(), va.cols() + vb.cols());
        for r in 0..va.rows() {
            let row = out.row_mut(r);
            row[..va.cols()].copy_from_slice(va.row(r));
            row[va.cols()..].copy_from_slice(vb.row(r));
        }
        self.push(out, Op::ConcatCols(a, b))
    }

    pub fn concat_rows(&mut self, parts: Vec<Var>) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in &parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols);
            data.extend_from_slice(v.data());
        }
        let rows = data.len() / cols.max(1);
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts))
    }

    /// Mean binary cross-entropy of a column of logits against targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Vec<f64>) -> Var {
        let v = self.value(logits);
        assert_eq!(v.shape(), (targets.len(), 1));
        assert!(!targets.is_empty());
        let total: f64 = v
            .data()
            .iter()
            .zip(&targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let out = Mat::scalar(total / targets.len() as f64);
        self.push(out, Op::Bce { logits, targets })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Mat::scalar(s), Op::Sum(a))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        self.push(out, Op::Scale(a, k))
    }

    /// Reverse pass from a scalar root; returns fresh gradient buffers.
    pub fn backward(&self, root: Var) -> Grads {
        let mut grads = Grads::zeros_like(self.params);
        self.backward_into(root, &mut grads);
        grads
    }

    /// Reverse pass accumulating into existing buffers.
    pub fn backward_into(&self, root: Var, out: &mut Grads) {
        assert_eq!(self.value(root).shape(), (1, 1), "backward needs a scalar root");
        let mut g: Vec<Option<Mat>> = (0..=root.0).map(|_| None).collect();
        g[root.0] = Some(Mat::scalar(1.0));
        for i in (0..=root.0).rev() {
            let Some(gi) = g[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => out.tensors[*p].add_assign(&gi),
                Op::Gather { param, rows } => {
                    let t = &mut out.tensors[*param];
                    for (k, &r) in rows.iter().enumerate() {
                        for (d, s) in t.row_mut(r).iter_mut().zip(gi.row(k)) {
                            *d += s;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut ga = Mat::zeros(va.rows(), va.cols());
                    gemm(1.0, &gi, false, vb, true, 0.0, &mut ga);
                    let mut gb = Mat::zeros(vb.rows(), vb.cols());
                    gemm(1.0, va, true, &gi, false, 0.0, &mut gb);
                    acc(&mut g, *a, ga);
                    acc(&mut g, *b, gb);
                }
                Op::MatMulBT(a, b) => {
                    // out = a bᵀ: da = g b, db = gᵀ a
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut ga = Mat::zeros(va.rows(), va.cols());
                    gemm(1.0, &gi, false, vb, false, 0.0, &mut ga);
                    let mut gb = Mat::zeros(vb.rows(), vb.cols());
                    gemm(1.0, &gi, true, va, false, 0.0, &mut gb);
                    acc(&mut g, *a, ga);
                    acc(&mut g, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut g, *a, gi.clone());
                    acc(&mut g, *b, gi);
                }
                Op::AddRow(a, b) => {
                    let mut gb = Mat::zeros(1, gi.cols());
                    for r in 0..gi.rows() {
                        for (d, s) in gb.data_mut().iter_mut().zip(gi.row(r)) {
                            *d += s;
                        }
                    }
                    acc(&mut g, *a, gi);
                    acc(&mut g, *b, gb);
                }
                Op::AddCol(a, b) => {
                    let gb = Mat::column((0..gi.rows()).map(|r| gi.row(r).iter().sum()).collect());
                    acc(&mut g, *a, gi);
                    acc(&mut g, *b, gb);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ga = elementwise(&gi, vb, |x, y| x * y);
                    let gb = elementwise(&gi, va, |x, y| x * y);
                    acc(&mut g, *a, ga);
                    acc(&mut g, *b, gb);
                }
                Op::ScaleRows(a, s) => {
                    let (va, vs) = (self.value(*a), self.value(*s));
                    let mut ga = gi.clone();
                    let mut gs = Mat::zeros(vs.rows(), 1);
                    for r in 0..gi.rows() {
                        let k = vs.data()[r];
                        ga.row_mut(r).iter_mut().for_each(|x| *x *= k);
                        gs.data_mut()[r] = gi.row(r).iter().zip(va.row(r)).map(|(x, y)| x * y).sum();
                    }
                    acc(&mut g, *a, ga);
                    acc(&mut g, *s, gs);
                }
                Op::Sigmoid(a) => {
                    let ga = elementwise(&gi, &node.value, |x, y| x * y * (1.0 - y));
                    acc(&mut g, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = elementwise(&gi, &node.value, |x, y| x * (1.0 - y * y));
                    acc(&mut g, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = elementwise(&gi, &node.value, |x, y| if y > 0.0 { x } else { 0.0 });
                    acc(&mut g, *a, ga);
                }
                Op::GatherRows { src, rows } => {
                    let vs = self.value(*src);
                    let mut gs = Mat::zeros(vs.rows(), vs.cols());
                    for (k, r) in rows.iter().enumerate() {
                        if let Some(r) = *r {
                            for (d, s) in gs.row_mut(r).iter_mut().zip(gi.row(k)) {
                                *d += s;
                            }
                        }
                    }
                    acc(&mut g, *src, gs);
                }
                Op::Segment { src, target, weight } => {
                    let vs = self.value(*src);
                    let mut gs = Mat::zeros(vs.rows(), vs.cols());
                    for (k, (&t, &w)) in target.iter().zip(weight).enumerate() {
                        for (d, s) in gs.row_mut(k).iter_mut().zip(gi.row(t)) {
                            *d = w * s;
                        }
                    }
                    acc(&mut g, *src, gs);
                }
                Op::SliceCols { src, start } => {
                    let vs = self.value(*src);
                    let mut gs = Mat::zeros(vs.rows(), vs.cols());
                    let w = gi.cols();
                    for r in 0..gi.rows() {
                        gs.row_mut(r)[*start..*start + w].copy_from_slice(gi.row(r));
                    }
                    acc(&mut g, *src, gs);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    let mut ga = Mat::zeros(gi.rows(), ca);
                    let mut gb = Mat::zeros(gi.rows(), gi.cols() - ca);
                    for r in 0..gi.rows() {
                        ga.row_mut(r).copy_from_slice(&gi.row(r)[..ca]);
                        gb.row_mut(r).copy_from_slice(&gi.row(r)[ca..]);
                    }
                    acc(&mut g, *a, ga);
                    acc(&mut g, *b, gb);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (rows, cols) = self.value(p).shape();
                        let slice = gi.data()[offset * cols..(offset + rows) * cols].to_vec();
                        acc(&mut g, p, Mat::from_vec(rows, cols, slice));
                        offset += rows;
                    }
                }
                Op::Bce { logits, targets } => {
                    let vz = self.value(*logits);
                    let k = gi.data()[0] / targets.len() as f64;
                    let gz = vz
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(&z, &y)| k * (sigmoid(z) - y))
                        .collect();
                    acc(&mut g, *logits, Mat::column(gz));
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut g, *a, Mat::from_vec(r, c, vec![gi.data()[0]; r * c]));
                }
                Op::Scale(a, k) => {
                    acc(&mut g, *a, gi.map(|x| x * k));
                }
            }
        }
    }
}

fn elementwise(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Mat::from_vec(a.rows(), a.cols(), data)
}

fn acc(g: &mut [Option<Mat>], v: Var, m: Mat) {
    match &mut g[v.0] {
        Some(existing) => existing.add_assign(&m),
        slot @ None => *slot = Some(m),
    }
}
