//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its value. [`Tape::backward`] walks the nodes in reverse and returns the
//! gradient of a scalar with respect to every node that depends on a
//! parameter. Parameters enter the tape through [`Tape::param`]; a parameter
//! used several times in one pass maps to a single leaf.

use std::collections::HashMap;
use std::rc::Rc;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, MatMut, MatRef, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row groups for segment pooling, in CSR layout: segment `s` pools rows
/// `rows[offsets[s]..offsets[s + 1]]`. Every row belongs to at most one
/// segment.
#[derive(Clone, Debug, PartialEq)]
pub struct Segments {
    offsets: Vec<usize>,
    rows: Vec<usize>,
}

impl Segments {
    pub fn from_groups(groups: &[Vec<usize>]) -> Self {
        let mut offsets = Vec::with_capacity(groups.len() + 1);
        let mut rows = Vec::new();
        offsets.push(0);
        for g in groups {
            rows.extend_from_slice(g);
            offsets.push(rows.len());
        }
        Segments { offsets, rows }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segment(&self, s: usize) -> &[usize] {
        &self.rows[self.offsets[s]..self.offsets[s + 1]]
    }

    pub fn max_row(&self) -> Option<usize> {
        self.rows.iter().copied().max()
    }
}

/// Row layout for [`Tape::set_pool`]: row `j` combines row `first[j]` of
/// one input with row `second[j]` of another, and `segments` groups rows
/// into pools.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolRows {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
    pub segments: Segments,
}

impl PoolRows {
    pub fn new(first: Vec<usize>, second: Vec<usize>, segments: Segments) -> Self {
        assert_eq!(first.len(), second.len(), "PoolRows: index lengths");
        if let Some(m) = segments.max_row() {
            assert!(m < first.len(), "PoolRows: segment row out of range");
        }
        PoolRows {
            first,
            second,
            segments,
        }
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    /// Writes `relu(a[first[j]] + b[second[j]])` for every `j` in `seg`,
    /// back to back, into `out`.
    fn hidden_into(&self, a: &Tensor, b: &Tensor, seg: &[usize], out: &mut Vec<f64>) {
        out.clear();
        for &j in seg {
            let (p, q) = (a.row(self.first[j]), b.row(self.second[j]));
            out.extend(p.iter().zip(q).map(|(x, y)| (x + y).max(0.0)));
        }
    }
}

enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Sqrt(Var),
    Square(Var),
    Sum(Var),
    MeanRows(Var),
    Gather(Var, Rc<[usize]>),
    ConcatRows(Vec<Var>),
    ConcatCols(Var, Var),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    RowDot(Var, Var),
    RowSoftmax(Var),
    StraightThrough(Var),
    BlockMatMul(Var, Var, usize),
    SetPool {
        first: Var,
        second: Var,
        query: Var,
        gates: Var,
        heads: usize,
        rows: Rc<PoolRows>,
        ratio: Tensor,
    },
    CrossEntropy(Var, Rc<[(usize, usize)]>),
    Cosine(Var, Var),
    GaussianKl(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Adds the gradients of every parameter leaf of `tape` into `store`.
    pub fn accumulate(&self, tape: &Tape, store: &mut ParamStore) {
        for (&id, &var) in &tape.param_vars {
            if let Some(g) = &self.grads[var.0] {
                store.get_mut(id).grad.add_assign(g);
            }
        }
    }
}

macro_rules! same_shape {
    ($self:ident, $a:expr, $b:expr, $what:expr) => {
        assert_eq!(
            $self.value($a).shape(),
            $self.value($b).shape(),
            "{}: shape mismatch",
            $what
        );
    };
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

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Constant => false,
            Op::Param => true,
            _ => self
                .parents(&op)
                .iter()
                .any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn parents(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Constant | Op::Param => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::ConcatCols(a, b)
            | Op::RowDot(a, b)
            | Op::BlockMatMul(a, b, _)
            | Op::Cosine(a, b)
            | Op::GaussianKl(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::LogSigmoid(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Clamp(a, _, _)
            | Op::Sqrt(a)
            | Op::Square(a)
            | Op::Sum(a)
            | Op::MeanRows(a)
            | Op::Gather(a, _)
            | Op::SliceCols(a, _, _)
            | Op::SliceRows(a, _, _)
            | Op::RowSoftmax(a)
            | Op::StraightThrough(a)
            | Op::CrossEntropy(a, _) => vec![*a],
            Op::ConcatRows(vs) => vs.clone(),
            Op::SetPool {
                first,
                second,
                query,
                gates,
                ..
            } => vec![*first, *second, *query, *gates],
        }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// Leaf for a stored parameter; repeated calls return the same leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self
            .value(a)
            .matmul(self.value(b))
            .unwrap_or_else(|e| panic!("{e}"));
        self.push(out, Op::MatMul(a, b))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        Tensor::from_vec(x.rows(), x.cols(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape!(self, a, b, "add");
        let out = self.zip_with(a, b, |p, q| p + q);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape!(self, a, b, "sub");
        let out = self.zip_with(a, b, |p, q| p - q);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape!(self, a, b, "mul");
        let out = self.zip_with(a, b, |p, q| p * q);
        self.push(out, Op::Mul(a, b))
    }

    /// `a + row` with `row` (1×c) broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!(r.shape(), (1, x.cols()), "add_row: bias shape");
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v + c);
        self.push(out, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    /// `ln(sigmoid(a))`, computed stably.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(log_sigmoid);
        self.push(out, Op::LogSigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping applied.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|v| v.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    /// Square root with a zero gradient at zero.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::sqrt);
        self.push(out, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v * v);
        self.push(out, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    /// Column-wise mean, 1×c.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        assert!(x.rows() > 0, "mean_rows of an empty tensor");
        let mut out = vec![0.0; x.cols()];
        for r in 0..x.rows() {
            for (o, v) in out.iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        let n = x.rows() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        self.push(Tensor::row_vector(out), Op::MeanRows(a))
    }

    pub fn gather(&mut self, a: Var, idx: Rc<[usize]>) -> Var {
        let out = self.value(a).select_rows(&idx);
        self.push(out, Op::Gather(a, idx))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), cols, "concat_rows: column mismatch");
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let out = Tensor::from_vec(rows, cols, data).expect("sized above");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.rows(), y.rows(), "concat_cols: row mismatch");
        let mut out = Tensor::zeros(x.rows(), x.cols() + y.cols());
        for r in 0..x.rows() {
            let row = out.row_mut(r);
            row[..x.cols()].copy_from_slice(x.row(r));
            row[x.cols()..].copy_from_slice(y.row(r));
        }
        self.push(out, Op::ConcatCols(a, b))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        assert!(start <= end && end <= x.cols(), "slice_cols out of range");
        let mut out = Tensor::zeros(x.rows(), end - start);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..end]);
        }
        self.push(out, Op::SliceCols(a, start, end))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        assert!(start <= end && end <= x.rows(), "slice_rows out of range");
        let out = Tensor::from_vec(
            end - start,
            x.cols(),
            x.data()[start * x.cols()..end * x.cols()].to_vec(),
        )
        .expect("sized");
        self.push(out, Op::SliceRows(a, start, end))
    }

    /// Row-wise inner product, n×1.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        same_shape!(self, a, b, "row_dot");
        let (x, y) = (self.value(a), self.value(b));
        let out = (0..x.rows())
            .map(|r| x.row(r).iter().zip(y.row(r)).map(|(p, q)| p * q).sum())
            .collect();
        self.push(Tensor::column(out), Op::RowDot(a, b))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::RowSoftmax(a))
    }

    /// Forward value `hard`, gradient passed unchanged to `soft`.
    pub fn straight_through(&mut self, soft: Var, hard: Tensor) -> Var {
        assert_eq!(
            self.value(soft).shape(),
            hard.shape(),
            "straight_through shape"
        );
        self.push(hard, Op::StraightThrough(soft))
    }

    /// Per-head product: `x` is n×(heads·a), `w` is (heads·a)×b and holds one
    /// a×b block per head; the result is n×(heads·b).
    pub fn block_matmul(&mut self, x: Var, w: Var, heads: usize) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        assert!(heads > 0 && xv.cols() % heads == 0, "block_matmul: heads");
        let a = xv.cols() / heads;
        assert_eq!(wv.rows(), heads * a, "block_matmul: weight rows");
        let b = wv.cols();
        let n = xv.rows();
        let mut out = Tensor::zeros(n, heads * b);
        for h in 0..heads {
            gemm(
                n,
                a,
                b,
                MatRef::row_major(xv.data(), heads * a).at(h * a),
                MatRef::row_major(wv.data(), b).at(h * a * b),
                MatMut::row_major(out.data_mut(), heads * b).at(h * b),
                0.0,
            );
        }
        self.push(out, Op::BlockMatMul(x, w, heads))
    }

    /// Gated multi-head softmax pooling over rows built on the fly.
    ///
    /// Row `j` is `x_j = relu(first[i_j] + second[k_j])` with indices from
    /// `rows`; it is `2·heads·d` wide, key hidden units first, then value
    /// hidden units. Head `h` scores row `j` as `s_j = x_j^K_h · u_h` with
    /// `u_h` the `h`-th d-block of the column `query`, and segment `t` pools
    /// `Σ_j w_j x_j^V_h` with `w_j = g_j exp(s_j) / Σ_k g_k exp(s_k)` over
    /// the segment's rows. A segment whose gates are all zero pools to zero.
    /// The result is segments × heads·d.
    pub fn set_pool(
        &mut self,
        first: Var,
        second: Var,
        query: Var,
        gates: Var,
        heads: usize,
        rows: Rc<PoolRows>,
    ) -> Var {
        let (fv, sv, qv, gv) = (
            self.value(first),
            self.value(second),
            self.value(query),
            self.value(gates),
        );
        let r = rows.len();
        assert!(heads > 0 && qv.rows() % heads == 0, "set_pool: heads");
        assert_eq!(qv.cols(), 1, "set_pool: query must be a column");
        let width = qv.rows();
        let d = width / heads;
        assert_eq!(fv.cols(), 2 * width, "set_pool: first columns");
        assert_eq!(sv.cols(), 2 * width, "set_pool: second columns");
        assert_eq!(gv.shape(), (r, 1), "set_pool: gate shape");
        assert!(
            rows.first.iter().all(|&i| i < fv.rows()) && rows.second.iter().all(|&k| k < sv.rows()),
            "set_pool: row index out of range"
        );
        let u = qv.data();
        let mut ratio = Tensor::zeros(r, heads);
        let mut out = Tensor::zeros(rows.segments.len(), width);
        let mut x = Vec::new();
        let mut score = Vec::new();
        for t in 0..rows.segments.len() {
            let seg = rows.segments.segment(t);
            rows.hidden_into(fv, sv, seg, &mut x);
            score.clear();
            for xj in x.chunks_exact(2 * width) {
                for h in 0..heads {
                    score.push(dot(&xj[h * d..(h + 1) * d], &u[h * d..(h + 1) * d]));
                }
            }
            for h in 0..heads {
                let m = (0..seg.len())
                    .map(|k| score[k * heads + h])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for (k, &j) in seg.iter().enumerate() {
                    let e = (score[k * heads + h] - m).exp();
                    score[k * heads + h] = e;
                    total += gv.get(j, 0) * e;
                }
                if total <= 0.0 {
                    continue;
                }
                let orow = &mut out.row_mut(t)[h * d..(h + 1) * d];
                for (k, &j) in seg.iter().enumerate() {
                    let q = score[k * heads + h] / total;
                    ratio.set(j, h, q);
                    let w = gv.get(j, 0) * q;
                    if w != 0.0 {
                        let lo = k * 2 * width + width + h * d;
                        for (o, v) in orow.iter_mut().zip(&x[lo..lo + d]) {
                            *o += w * v;
                        }
                    }
                }
            }
        }
        self.push(
            out,
            Op::SetPool {
                first,
                second,
                query,
                gates,
                heads,
                rows,
                ratio,
            },
        )
    }

    /// Mean softmax cross-entropy over `(row, class)` targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: Rc<[(usize, usize)]>) -> Var {
        assert!(!targets.is_empty(), "cross_entropy over no targets");
        let x = self.value(logits);
        let mut total = 0.0;
        for &(r, c) in targets.iter() {
            assert!(c < x.cols(), "cross_entropy: class out of range");
            let row = x.row(r);
            total += log_sum_exp(row) - row[c];
        }
        let out = Tensor::scalar(total / targets.len() as f64);
        self.push(out, Op::CrossEntropy(logits, targets))
    }

    /// Cosine similarity of two same-shape tensors viewed as vectors; zero
    /// when either has zero norm.
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        same_shape!(self, a, b, "cosine");
        let (na, nb, dot) = cosine_parts(self.value(a), self.value(b));
        let c = if na > 0.0 && nb > 0.0 {
            dot / (na * nb)
        } else {
            0.0
        };
        self.push(Tensor::scalar(c), Op::Cosine(a, b))
    }

    /// `Σ ½(μ² + exp(lv) − 1 − lv)`.
    pub fn gaussian_kl(&mut self, mu: Var, log_var: Var) -> Var {
        same_shape!(self, mu, log_var, "gaussian_kl");
        let total = self
            .value(mu)
            .data()
            .iter()
            .zip(self.value(log_var).data())
            .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
            .sum();
        self.push(Tensor::scalar(total), Op::GaussianKl(mu, log_var))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.value(loss).shape(),
            (1, 1),
            "backward from a non-scalar"
        );
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[i].value;
        let elementwise = |x: &Tensor, f: &dyn Fn(f64, f64) -> f64| {
            let data = x
                .data()
                .iter()
                .zip(g.data())
                .map(|(&v, &gv)| f(v, gv))
                .collect();
            Tensor::from_vec(x.rows(), x.cols(), data).expect("same shape")
        };
        match &self.nodes[i].op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.wants(*a) {
                    let mut da = Tensor::zeros(m, k);
                    gemm(
                        m,
                        n,
                        k,
                        MatRef::row_major(g.data(), n),
                        MatRef::row_major(bv.data(), n).transposed(),
                        MatMut::row_major(da.data_mut(), k),
                        0.0,
                    );
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    let mut db = Tensor::zeros(k, n);
                    gemm(
                        k,
                        m,
                        n,
                        MatRef::row_major(av.data(), k).transposed(),
                        MatRef::row_major(g.data(), n),
                        MatMut::row_major(db.data_mut(), n),
                        0.0,
                    );
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let d = elementwise(self.value(*b), &|bv, gv| bv * gv);
                    self.accumulate(grads, *a, d);
                }
                if self.wants(*b) {
                    let d = elementwise(self.value(*a), &|av, gv| av * gv);
                    self.accumulate(grads, *b, d);
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.wants(*row) {
                    let mut d = vec![0.0; g.cols()];
                    for r in 0..g.rows() {
                        for (o, v) in d.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *row, Tensor::row_vector(d));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|v| v * c)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let d = elementwise(self.value(*a), &|x, gv| if x > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = elementwise(out, &|s, gv| gv * s * (1.0 - s));
                self.accumulate(grads, *a, d);
            }
            Op::LogSigmoid(a) => {
                let d = elementwise(self.value(*a), &|x, gv| gv * sigmoid(-x));
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => {
                let d = elementwise(out, &|e, gv| gv * e);
                self.accumulate(grads, *a, d);
            }
            Op::Log(a) => {
                let d = elementwise(self.value(*a), &|x, gv| gv / x);
                self.accumulate(grads, *a, d);
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let d = elementwise(self.value(*a), &|x, gv| {
                    if x >= lo && x <= hi {
                        gv
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::Sqrt(a) => {
                let d = elementwise(out, &|s, gv| if s > 0.0 { gv / (2.0 * s) } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::Square(a) => {
                let d = elementwise(self.value(*a), &|x, gv| 2.0 * x * gv);
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, Tensor::filled(x.rows(), x.cols(), g.item()));
            }
            Op::MeanRows(a) => {
                let x = self.value(*a);
                let n = x.rows() as f64;
                let mut d = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    for (o, gv) in d.row_mut(r).iter_mut().zip(g.data()) {
                        *o = gv / n;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Gather(a, idx) => {
                if self.wants(*a) {
                    let x = self.value(*a);
                    let mut d = Tensor::zeros(x.rows(), x.cols());
                    for (k, &src) in idx.iter().enumerate() {
                        for (o, gv) in d.row_mut(src).iter_mut().zip(g.row(k)) {
                            *o += gv;
                        }
                    }
                    self.accumulate(grads, *a, d);
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let (rows, cols) = self.value(p).shape();
                    if self.wants(p) {
                        let d = Tensor::from_vec(
                            rows,
                            cols,
                            g.data()[start * cols..(start + rows) * cols].to_vec(),
                        )
                        .expect("sized");
                        self.accumulate(grads, p, d);
                    }
                    start += rows;
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                if self.wants(*a) {
                    let mut d = Tensor::zeros(g.rows(), ca);
                    for r in 0..g.rows() {
                        d.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    }
                    self.accumulate(grads, *a, d);
                }
                if self.wants(*b) {
                    let mut d = Tensor::zeros(g.rows(), cb);
                    for r in 0..g.rows() {
                        d.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    self.accumulate(grads, *b, d);
                }
            }
            Op::SliceCols(a, start, end) => {
                let x = self.value(*a);
                let mut d = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    d.row_mut(r)[*start..*end].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *a, d);
            }
            Op::SliceRows(a, start, end) => {
                let x = self.value(*a);
                let mut d = Tensor::zeros(x.rows(), x.cols());
                let c = x.cols();
                d.data_mut()[start * c..end * c].copy_from_slice(g.data());
                self.accumulate(grads, *a, d);
            }
            Op::RowDot(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let mut d = y.clone();
                    for r in 0..d.rows() {
                        let gr = g.get(r, 0);
                        d.row_mut(r).iter_mut().for_each(|v| *v *= gr);
                    }
                    self.accumulate(grads, *a, d);
                }
                if self.wants(*b) {
                    let mut d = x.clone();
                    for r in 0..d.rows() {
                        let gr = g.get(r, 0);
                        d.row_mut(r).iter_mut().for_each(|v| *v *= gr);
                    }
                    self.accumulate(grads, *b, d);
                }
            }
            Op::RowSoftmax(a) => {
                let mut d = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let (y, gr) = (out.row(r), g.row(r));
                    let dot: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((o, &yv), &gv) in d.row_mut(r).iter_mut().zip(y).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::StraightThrough(soft) => self.accumulate(grads, *soft, g.clone()),
            Op::BlockMatMul(x, w, heads) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let heads = *heads;
                let a = xv.cols() / heads;
                let b = wv.cols();
                let n = xv.rows();
                if self.wants(*x) {
                    let mut dx = Tensor::zeros(n, heads * a);
                    for h in 0..heads {
                        gemm(
                            n,
                            b,
                            a,
                            MatRef::row_major(g.data(), heads * b).at(h * b),
                            MatRef::row_major(wv.data(), b).at(h * a * b).transposed(),
                            MatMut::row_major(dx.data_mut(), heads * a).at(h * a),
                            0.0,
                        );
                    }
                    self.accumulate(grads, *x, dx);
                }
                if self.wants(*w) {
                    let mut dw = Tensor::zeros(heads * a, b);
                    for h in 0..heads {
                        gemm(
                            a,
                            n,
                            b,
                            MatRef::row_major(xv.data(), heads * a)
                                .at(h * a)
                                .transposed(),
                            MatRef::row_major(g.data(), heads * b).at(h * b),
                            MatMut::row_major(dw.data_mut(), b).at(h * a * b),
                            0.0,
                        );
                    }
                    self.accumulate(grads, *w, dw);
                }
            }
            Op::SetPool {
                first,
                second,
                query,
                gates,
                heads,
                rows,
                ratio,
            } => {
                let heads = *heads;
                let (fv, sv, qv, gv) = (
                    self.value(*first),
                    self.value(*second),
                    self.value(*query),
                    self.value(*gates),
                );
                let u = qv.data();
                let width = u.len();
                let d = width / heads;
                let mut dfirst = Tensor::zeros(fv.rows(), fv.cols());
                let mut dsecond = Tensor::zeros(sv.rows(), sv.cols());
                let mut du = vec![0.0; width];
                let mut dgate = Tensor::zeros(rows.len(), 1);
                let mut x = Vec::new();
                let mut dx = Vec::new();
                let mut dw = Vec::new();
                for t in 0..rows.segments.len() {
                    let seg = rows.segments.segment(t);
                    rows.hidden_into(fv, sv, seg, &mut x);
                    dx.clear();
                    dx.resize(x.len(), 0.0);
                    for h in 0..heads {
                        let grow = &g.row(t)[h * d..(h + 1) * d];
                        dw.clear();
                        let mut c = 0.0;
                        for (k, &j) in seg.iter().enumerate() {
                            let w = gv.get(j, 0) * ratio.get(j, h);
                            let lo = k * 2 * width + width + h * d;
                            let dwj = dot(grow, &x[lo..lo + d]);
                            dw.push(dwj);
                            c += dwj * w;
                            for (o, gval) in dx[lo..lo + d].iter_mut().zip(grow) {
                                *o += w * gval;
                            }
                        }
                        for (k, (&j, &dwj)) in seg.iter().zip(&dw).enumerate() {
                            let q = ratio.get(j, h);
                            let ds = gv.get(j, 0) * q * (dwj - c);
                            dgate.set(j, 0, dgate.get(j, 0) + q * (dwj - c));
                            let lo = k * 2 * width + h * d;
                            let uh = &u[h * d..(h + 1) * d];
                            for ((o, du), (xv, uv)) in dx[lo..lo + d]
                                .iter_mut()
                                .zip(&mut du[h * d..(h + 1) * d])
                                .zip(x[lo..lo + d].iter().zip(uh))
                            {
                                *o += ds * uv;
                                *du += ds * xv;
                            }
                        }
                    }
                    for (k, &j) in seg.iter().enumerate() {
                        let span = k * 2 * width..(k + 1) * 2 * width;
                        for (xv, dv) in x[span.clone()].iter().zip(&mut dx[span.clone()]) {
                            *dv = if *xv > 0.0 { *dv } else { 0.0 };
                        }
                        for (o, dv) in dfirst
                            .row_mut(rows.first[j])
                            .iter_mut()
                            .zip(&dx[span.clone()])
                        {
                            *o += dv;
                        }
                        for (o, dv) in dsecond.row_mut(rows.second[j]).iter_mut().zip(&dx[span]) {
                            *o += dv;
                        }
                    }
                }
                self.accumulate(grads, *first, dfirst);
                self.accumulate(grads, *second, dsecond);
                self.accumulate(grads, *query, Tensor::column(du));
                self.accumulate(grads, *gates, dgate);
            }
            Op::CrossEntropy(logits, targets) => {
                let x = self.value(*logits);
                let mut d = Tensor::zeros(x.rows(), x.cols());
                let scale = g.item() / targets.len() as f64;
                for &(r, c) in targets.iter() {
                    let mut p = x.row(r).to_vec();
                    softmax_in_place(&mut p);
                    let row = d.row_mut(r);
                    for (o, pv) in row.iter_mut().zip(&p) {
                        *o += scale * pv;
                    }
                    row[c] -= scale;
                }
                self.accumulate(grads, *logits, d);
            }
            Op::Cosine(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (na, nb, dot) = cosine_parts(x, y);
                if na > 0.0 && nb > 0.0 {
                    let gv = g.item();
                    let c = dot / (na * nb);
                    if self.wants(*a) {
                        let data = x
                            .data()
                            .iter()
                            .zip(y.data())
                            .map(|(&p, &q)| gv * (q / (na * nb) - c * p / (na * na)))
                            .collect();
                        let t = Tensor::from_vec(x.rows(), x.cols(), data).expect("shape");
                        self.accumulate(grads, *a, t);
                    }
                    if self.wants(*b) {
                        let data = x
                            .data()
                            .iter()
                            .zip(y.data())
                            .map(|(&p, &q)| gv * (p / (na * nb) - c * q / (nb * nb)))
                            .collect();
                        let t = Tensor::from_vec(y.rows(), y.cols(), data).expect("shape");
                        self.accumulate(grads, *b, t);
                    }
                }
            }
            Op::GaussianKl(mu, log_var) => {
                let gv = g.item();
                if self.wants(*mu) {
                    let d = self.value(*mu).map(|m| gv * m);
                    self.accumulate(grads, *mu, d);
                }
                if self.wants(*log_var) {
                    let d = self.value(*log_var).map(|lv| gv * 0.5 * (lv.exp() - 1.0));
                    self.accumulate(grads, *log_var, d);
                }
            }
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

#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn cosine_parts(a: &Tensor, b: &Tensor) -> (f64, f64, f64) {
    let na = a.norm();
    let nb = b.norm();
    let dot = a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum();
    (na, nb, dot)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut store = ParamStore::new();
        let id = store.add("x", t(&[&[1.0, -2.0], &[3.0, 0.5]]));
        let mut tape = Tape::new();
        let x = tape.param(&store, id);
        let s = tape.sum(x);
        let g = tape.backward(s);
        assert_eq!(g.get(x).unwrap(), &Tensor::filled(2, 2, 1.0));
    }

    #[test]
    fn cosine_with_itself_has_zero_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("x", t(&[&[0.3, -1.2, 2.0]]));
        let mut tape = Tape::new();
        let x = tape.param(&store, id);
        let c = tape.cosine(x, x);
        assert!((tape.scalar(c) - 1.0).abs() < 1e-15);
        let g = tape.backward(c);
        assert!(g.get(x).unwrap().data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn constants_do_not_receive_gradients() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[&[1.0]]));
        let b = tape.exp(a);
        assert!(!tape.requires_grad(b));
        let g = tape.backward(b);
        assert!(g.get(a).is_none());
    }

    #[test]
    fn param_leaf_is_shared() {
        let mut store = ParamStore::new();
        let id = store.add("w", t(&[&[2.0]]));
        let mut tape = Tape::new();
        let a = tape.param(&store, id);
        let b = tape.param(&store, id);
        assert_eq!(a, b);
        let p = tape.mul(a, b);
        let grads = tape.backward(p);
        grads.accumulate(&tape, &mut store);
        assert_eq!(store.get(id).grad.item(), 4.0);
    }

    fn one_segment_pool(scores: &[f64], gates: &[f64], values: &[f64]) -> f64 {
        // Width 1, one head: key hidden = score (u = 1), value hidden = value.
        // Inputs are kept positive so the ReLU is the identity.
        let n = scores.len();
        let x: Vec<Vec<f64>> = (0..n).map(|j| vec![scores[j], values[j]]).collect();
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&x).unwrap());
        let b = tape.constant(Tensor::zeros(1, 2));
        let u = tape.constant(Tensor::scalar(1.0));
        let g = tape.constant(Tensor::column(gates.to_vec()));
        let rows = PoolRows::new(
            (0..n).collect(),
            vec![0; n],
            Segments::from_groups(&[(0..n).collect()]),
        );
        let o = tape.set_pool(a, b, u, g, 1, Rc::new(rows));
        tape.value(o).item()
    }

    #[test]
    fn set_pool_all_zero_gates_pool_to_zero() {
        assert_eq!(one_segment_pool(&[1.0, 2.0], &[0.0, 0.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn set_pool_excludes_zero_gate_rows() {
        let o = one_segment_pool(&[0.3, 5.0, 0.1], &[1.0, 0.0, 1.0], &[1.0, 100.0, 3.0]);
        let w0 = 0.3f64.exp() / (0.3f64.exp() + 0.1f64.exp());
        let expect = w0 * 1.0 + (1.0 - w0) * 3.0;
        assert!((o - expect).abs() < 1e-12);
    }
}
