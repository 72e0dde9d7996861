use super::{gemm, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Assignment of tensor rows to groups, used by segment reductions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    ids: Vec<usize>,
    count: usize,
}

impl Segments {
    pub fn new(ids: Vec<usize>, count: usize) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&s| s >= count) {
            return Err(Error::Shape(format!("segment id {bad} >= segment count {count}")));
        }
        Ok(Self { ids, count })
    }

    /// All `rows` rows in one segment.
    pub fn single(rows: usize) -> Self {
        Self { ids: vec![0; rows], count: 1 }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count];
        for &s in &self.ids {
            sizes[s] += 1;
        }
        sizes
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Cos(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    SegmentSum(Var, Segments),
    SegmentSoftmax(Var, Segments),
    SoftmaxRows(Var),
    RowSum(Var),
    SumAll(Var),
    BceWithLogits(Var, Vec<f64>),
    CrossEntropy(Var, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records primitive operations in execution order for reverse-mode
/// differentiation. Backward visits the record in exact reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bindings: Vec<(ParamId, Var)>,
}

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape(format!(
        "{op}: {}x{} vs {}x{}",
        a.rows(),
        a.cols(),
        b.rows(),
        b.cols()
    ))
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        rows: t.rows,
        cols: t.cols,
        data: t.data.iter().map(|&v| f(v)).collect(),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn segment_softmax_values(x: &Tensor, seg: &Segments) -> Tensor {
    let mut max = vec![f64::NEG_INFINITY; seg.count];
    for (r, &s) in seg.ids.iter().enumerate() {
        max[s] = max[s].max(x.data[r]);
    }
    let mut out: Vec<f64> = seg.ids.iter().enumerate().map(|(r, &s)| (x.data[r] - max[s]).exp()).collect();
    let mut sum = vec![0.0; seg.count];
    for (r, &s) in seg.ids.iter().enumerate() {
        sum[s] += out[r];
    }
    for (r, &s) in seg.ids.iter().enumerate() {
        out[r] /= sum[s];
    }
    Tensor { rows: x.rows, cols: 1, data: out }
}

fn softmax_rows_values(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..x.rows {
        let row = &mut out.data[r * x.cols..(r + 1) * x.cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
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

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::MulCol(a, b) => {
                self.needs(*a) || self.needs(*b)
            }
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.iter().any(|p| self.needs(*p)),
            Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Cos(a)
            | Op::SliceCols(a, _)
            | Op::GatherRows(a, _)
            | Op::SegmentSum(a, _)
            | Op::SegmentSoftmax(a, _)
            | Op::SoftmaxRows(a)
            | Op::RowSum(a)
            | Op::SumAll(a)
            | Op::BceWithLogits(a, _)
            | Op::CrossEntropy(a, _) => self.needs(*a),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient on backward.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Binds a stored parameter onto this tape (once; later calls reuse it).
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.bindings.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.leaf(store.get(id).value.clone());
        self.bindings.push((id, v));
        v
    }

    /// Copy of `v` cut off from the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols != tb.rows {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = Tensor::zeros(ta.rows, tb.cols);
        gemm(ta, false, tb, false, &mut out, 0.0);
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    fn same_shape(&self, name: &str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b), "mul")
    }

    /// Adds the `1 × c` row `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        if tb.rows != 1 || tb.cols != tx.cols {
            return Err(shape_err("add_row", tx, tb));
        }
        let mut out = tx.clone();
        for r in 0..tx.rows {
            for (o, bv) in out.data[r * tx.cols..(r + 1) * tx.cols].iter_mut().zip(&tb.data) {
                *o += bv;
            }
        }
        self.push(out, Op::AddRow(x, b), "add_row")
    }

    /// Scales row `r` of `x` by `w[r]`, where `w` is an `r × 1` column.
    pub fn mul_col(&mut self, x: Var, w: Var) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tw.cols != 1 || tw.rows != tx.rows {
            return Err(shape_err("mul_col", tx, tw));
        }
        let mut out = tx.clone();
        for r in 0..tx.rows {
            let s = tw.data[r];
            for o in &mut out.data[r * tx.cols..(r + 1) * tx.cols] {
                *o *= s;
            }
        }
        self.push(out, Op::MulCol(x, w), "mul_col")
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = map(self.value(x), |v| v * s);
        self.push(out, Op::Scale(x, s), "scale")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), sigmoid);
        self.push(out, Op::Sigmoid(x), "sigmoid")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), f64::tanh);
        self.push(out, Op::Tanh(x), "tanh")
    }

    /// Sign of every ReLU input on the tape, in recording order. Two
    /// evaluations with equal patterns lie on the same linear piece of
    /// every ReLU.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(x),
                _ => None,
            })
            .flat_map(|x| self.nodes[x.0].value.data.iter().map(|&v| v > 0.0))
            .collect()
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), |v| v.max(0.0));
        self.push(out, Op::Relu(x), "relu")
    }

    pub fn cos(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), f64::cos);
        self.push(out, Op::Cos(x), "cos")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Shape("concat of no tensors".into()))?;
        if parts.len() == 1 {
            return Ok(first);
        }
        let rows = self.value(first).rows;
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows != rows {
                return Err(shape_err("concat_cols", self.value(first), t));
            }
            cols += t.cols;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        self.push(Tensor { rows, cols, data }, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Shape("concat of no tensors".into()))?;
        if parts.len() == 1 {
            return Ok(first);
        }
        let cols = self.value(first).cols;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols != cols {
                return Err(shape_err("concat_rows", self.value(first), t));
            }
            rows += t.rows;
            data.extend_from_slice(&t.data);
        }
        self.push(Tensor { rows, cols, data }, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let t = self.value(x);
        if start + width > t.cols {
            return Err(Error::Shape(format!("slice {start}+{width} of {} columns", t.cols)));
        }
        let mut data = Vec::with_capacity(t.rows * width);
        for r in 0..t.rows {
            data.extend_from_slice(&t.row_slice(r)[start..start + width]);
        }
        let out = Tensor { rows: t.rows, cols: width, data };
        self.push(out, Op::SliceCols(x, start), "slice_cols")
    }

    /// Output row `r` is row `index[r]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>) -> Result<Var> {
        let t = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= t.rows) {
            return Err(Error::Shape(format!("gather row {bad} of {}", t.rows)));
        }
        let mut data = Vec::with_capacity(index.len() * t.cols);
        for &i in &index {
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor { rows: index.len(), cols: t.cols, data };
        self.push(out, Op::GatherRows(x, index), "gather_rows")
    }

    /// Sums the rows of `x` into `seg.count()` output rows.
    pub fn segment_sum(&mut self, x: Var, seg: &Segments) -> Result<Var> {
        let t = self.value(x);
        if seg.ids.len() != t.rows {
            return Err(Error::Shape(format!("{} segment ids for {} rows", seg.ids.len(), t.rows)));
        }
        let mut out = Tensor::zeros(seg.count, t.cols);
        for (r, &s) in seg.ids.iter().enumerate() {
            for (o, v) in out.data[s * t.cols..(s + 1) * t.cols].iter_mut().zip(t.row_slice(r)) {
                *o += v;
            }
        }
        self.push(out, Op::SegmentSum(x, seg.clone()), "segment_sum")
    }

    /// Softmax of an `r × 1` column taken separately within each segment.
    pub fn segment_softmax(&mut self, x: Var, seg: &Segments) -> Result<Var> {
        let t = self.value(x);
        if t.cols != 1 || seg.ids.len() != t.rows {
            return Err(Error::Shape(format!("segment_softmax over {}x{}", t.rows, t.cols)));
        }
        let out = segment_softmax_values(t, seg);
        self.push(out, Op::SegmentSoftmax(x, seg.clone()), "segment_softmax")
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let out = softmax_rows_values(self.value(x));
        self.push(out, Op::SoftmaxRows(x), "softmax_rows")
    }

    /// `r × c` to `r × 1` by summing each row.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let data = (0..t.rows).map(|r| t.row_slice(r).iter().sum()).collect();
        self.push(Tensor { rows: t.rows, cols: 1, data }, Op::RowSum(x), "row_sum")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data.iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Mean binary cross-entropy of an `r × 1` logit column against targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Vec<f64>) -> Result<Var> {
        let t = self.value(logits);
        if t.cols != 1 || t.rows != targets.len() || targets.is_empty() {
            return Err(Error::Shape(format!("bce over {}x{} with {} targets", t.rows, t.cols, targets.len())));
        }
        let n = targets.len() as f64;
        let loss: f64 = t
            .data
            .iter()
            .zip(&targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        self.push(Tensor::scalar(loss), Op::BceWithLogits(logits, targets), "bce_with_logits")
    }

    /// Mean softmax cross-entropy of `r × classes` logits against labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: Vec<usize>) -> Result<Var> {
        let t = self.value(logits);
        if t.rows != labels.len() || labels.is_empty() || labels.iter().any(|&l| l >= t.cols) {
            return Err(Error::Shape(format!("cross_entropy over {}x{} with {} labels", t.rows, t.cols, labels.len())));
        }
        let n = labels.len() as f64;
        let loss = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| {
                let row = t.row_slice(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                lse - row[l]
            })
            .sum::<f64>()
            / n;
        self.push(Tensor::scalar(loss), Op::CrossEntropy(logits, labels), "cross_entropy")
    }

    /// Reverse pass from a scalar `loss`. Every node that depends on a leaf
    /// created with [`Tape::leaf`] or [`Tape::param`] receives a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.shape() != [1, 1] {
            return Err(Error::NonScalarLoss(lt.rows, lt.cols));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, bindings: self.bindings.clone() })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let mut ga = Tensor::zeros(ta.rows, ta.cols);
                    gemm(g, false, tb, true, &mut ga, 0.0);
                    acc(*a, ga);
                }
                if self.needs(*b) {
                    let mut gb = Tensor::zeros(tb.rows, tb.cols);
                    gemm(ta, true, g, false, &mut gb, 0.0);
                    acc(*b, gb);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, map(g, |v| -v));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    acc(*a, zip(g, self.value(*b), |x, y| x * y));
                }
                if self.needs(*b) {
                    acc(*b, zip(g, self.value(*a), |x, y| x * y));
                }
            }
            Op::AddRow(x, b) => {
                acc(*x, g.clone());
                if self.needs(*b) {
                    let mut gb = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, v) in gb.data.iter_mut().zip(g.row_slice(r)) {
                            *o += v;
                        }
                    }
                    acc(*b, gb);
                }
            }
            Op::MulCol(x, w) => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                if self.needs(*x) {
                    let mut gx = g.clone();
                    for r in 0..g.rows {
                        let s = tw.data[r];
                        for o in &mut gx.data[r * g.cols..(r + 1) * g.cols] {
                            *o *= s;
                        }
                    }
                    acc(*x, gx);
                }
                if self.needs(*w) {
                    let data = (0..g.rows)
                        .map(|r| g.row_slice(r).iter().zip(tx.row_slice(r)).map(|(a, b)| a * b).sum())
                        .collect();
                    acc(*w, Tensor { rows: g.rows, cols: 1, data });
                }
            }
            Op::Scale(x, s) => acc(*x, map(g, |v| v * s)),
            Op::Sigmoid(x) => acc(*x, zip(g, y, |gv, yv| gv * yv * (1.0 - yv))),
            Op::Tanh(x) => acc(*x, zip(g, y, |gv, yv| gv * (1.0 - yv * yv))),
            Op::Relu(x) => acc(*x, zip(g, self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 })),
            Op::Cos(x) => acc(*x, zip(g, self.value(*x), |gv, xv| -gv * xv.sin())),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols;
                    if self.needs(p) {
                        let mut data = Vec::with_capacity(g.rows * w);
                        for r in 0..g.rows {
                            data.extend_from_slice(&g.row_slice(r)[offset..offset + w]);
                        }
                        acc(p, Tensor { rows: g.rows, cols: w, data });
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let h = self.value(p).rows;
                    if self.needs(p) {
                        let data = g.data[offset * g.cols..(offset + h) * g.cols].to_vec();
                        acc(p, Tensor { rows: h, cols: g.cols, data });
                    }
                    offset += h;
                }
            }
            Op::SliceCols(x, start) => {
                let tx = self.value(*x);
                let mut gx = Tensor::zeros(tx.rows, tx.cols);
                for r in 0..g.rows {
                    gx.data[r * tx.cols + start..r * tx.cols + start + g.cols].copy_from_slice(g.row_slice(r));
                }
                acc(*x, gx);
            }
            Op::GatherRows(x, index) => {
                let tx = self.value(*x);
                let mut gx = Tensor::zeros(tx.rows, tx.cols);
                for (r, &src) in index.iter().enumerate() {
                    for (o, v) in gx.data[src * tx.cols..(src + 1) * tx.cols].iter_mut().zip(g.row_slice(r)) {
                        *o += v;
                    }
                }
                acc(*x, gx);
            }
            Op::SegmentSum(x, seg) => {
                let mut data = Vec::with_capacity(seg.ids.len() * g.cols);
                for &s in &seg.ids {
                    data.extend_from_slice(g.row_slice(s));
                }
                acc(*x, Tensor { rows: seg.ids.len(), cols: g.cols, data });
            }
            Op::SegmentSoftmax(x, seg) => {
                let mut dot = vec![0.0; seg.count];
                for (r, &s) in seg.ids.iter().enumerate() {
                    dot[s] += g.data[r] * y.data[r];
                }
                let data = seg.ids.iter().enumerate().map(|(r, &s)| y.data[r] * (g.data[r] - dot[s])).collect();
                acc(*x, Tensor { rows: y.rows, cols: 1, data });
            }
            Op::SoftmaxRows(x) => {
                let mut gx = y.clone();
                for r in 0..y.rows {
                    let yr = y.row_slice(r);
                    let gr = g.row_slice(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..y.cols {
                        gx.data[r * y.cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                acc(*x, gx);
            }
            Op::RowSum(x) => {
                let tx = self.value(*x);
                let mut gx = Tensor::zeros(tx.rows, tx.cols);
                for r in 0..tx.rows {
                    gx.data[r * tx.cols..(r + 1) * tx.cols].fill(g.data[r]);
                }
                acc(*x, gx);
            }
            Op::SumAll(x) => {
                let tx = self.value(*x);
                acc(*x, Tensor::filled(tx.rows, tx.cols, g.data[0]));
            }
            Op::BceWithLogits(x, targets) => {
                let tx = self.value(*x);
                let n = targets.len() as f64;
                let data = tx.data.iter().zip(targets).map(|(&z, &t)| g.data[0] * (sigmoid(z) - t) / n).collect();
                acc(*x, Tensor { rows: tx.rows, cols: 1, data });
            }
            Op::CrossEntropy(x, labels) => {
                let tx = self.value(*x);
                let mut gx = softmax_rows_values(tx);
                let n = labels.len() as f64;
                for (r, &l) in labels.iter().enumerate() {
                    gx.data[r * tx.cols + l] -= 1.0;
                }
                for v in &mut gx.data {
                    *v *= g.data[0] / n;
                }
                acc(*x, gx);
            }
        }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    bindings: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when `v` is not
    /// differentiable or unreachable from the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zeros of the right shape when unreachable.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| {
            let [r, c] = tape.shape(v);
            Tensor::zeros(r, c)
        })
    }

    /// Adds the gradients of every bound parameter into the store.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(id, v) in &self.bindings {
            if let Some(g) = self.get(v) {
                store.get_mut(id).grad.add_assign(g);
            }
        }
    }
}
