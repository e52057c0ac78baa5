//! Reverse-mode differentiation over row-batched matrices.
//!
//! Every value on the tape is a `rows x cols` matrix of `f64`; rows index
//! datapoints (or datapoint/sample pairs) and columns index features. The op
//! set is the small closed family the transition models, flows and Q-learning
//! losses need. Nothing here tries to be a general tensor library.

use std::cell::RefCell;

use ndarray::{s, Array2, Axis, Zip};

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
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Ln(Var),
    Relu(Var),
    Tanh(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    MaxScalar(Var, f64),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SumBlocks(Var, usize),
    SumAll(Var),
    MeanRows(Var),
    LogSoftmaxBlocks(Var, usize),
    LogSumExpCols(Var),
    RepeatRows(Var, usize),
    Reshape(Var),
    BroadcastCols(Var),
    Detach,
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation record.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients of one scalar output with respect to every node that needs one.
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Array2<f64>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    fn unary(&self, a: Var, op: Op, f: impl FnOnce(&Array2<f64>) -> Array2<f64>) -> Var {
        let value = f(&self.nodes.borrow()[a.0].value);
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        op: Op,
        f: impl FnOnce(&Array2<f64>, &Array2<f64>) -> Array2<f64>,
    ) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a.0].value, &nodes[b.0].value)
        };
        let rg = self.rg(&[a, b]);
        self.push(value, op, rg)
    }

    /// Trainable leaf.
    pub fn param(&self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Array2<f64> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Array2<f64>) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.dim()
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let nodes = self.nodes.borrow();
        let val = &nodes[v.0].value;
        assert_eq!(val.dim(), (1, 1), "scalar() on non-scalar node");
        val[[0, 0]]
    }

    /// Smallest absolute pre-activation seen by any ReLU on this tape.
    ///
    /// Finite-difference checks are only meaningful when this margin is
    /// comfortably larger than the perturbation.
    pub fn relu_margin(&self) -> f64 {
        let nodes = self.nodes.borrow();
        nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(
                    nodes[a.0]
                        .value
                        .iter()
                        .fold(f64::INFINITY, |m, x| m.min(x.abs())),
                ),
                _ => None,
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::MatMul(a, b), |x, y| {
            assert_eq!(x.ncols(), y.nrows(), "matmul shape mismatch");
            x.dot(y)
        })
    }

    /// `a + row` with a `1 x cols` row broadcast over every row of `a`.
    pub fn add_row(&self, a: Var, row: Var) -> Var {
        self.binary(a, row, Op::AddRow(a, row), |x, r| {
            assert_eq!(r.nrows(), 1);
            assert_eq!(x.ncols(), r.ncols(), "add_row shape mismatch");
            x + r
        })
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| {
            assert_eq!(x.dim(), y.dim(), "add shape mismatch");
            x + y
        })
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| {
            assert_eq!(x.dim(), y.dim(), "sub shape mismatch");
            x - y
        })
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| {
            assert_eq!(x.dim(), y.dim(), "mul shape mismatch");
            x * y
        })
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.mapv(f64::exp))
    }

    pub fn ln(&self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), |x| x.mapv(f64::ln))
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.mapv(|v| v.max(0.0)))
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |x| x.mapv(f64::tanh))
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x.mapv(|v| v * v))
    }

    /// Hard clamp; gradient is zero outside `[lo, hi]`.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.mapv(|v| v.clamp(lo, hi)))
    }

    /// `max(a, c)` elementwise; gradient flows only where `a > c`.
    pub fn max_scalar(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::MaxScalar(a, c), |x| x.mapv(|v| v.max(c)))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&self, a: Var, start: usize, end: usize) -> Var {
        self.unary(a, Op::SliceCols(a, start), |x| {
            assert!(start <= end && end <= x.ncols(), "slice out of range");
            x.slice(s![.., start..end]).to_owned()
        })
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let views: Vec<_> = parts.iter().map(|p| nodes[p.0].value.view()).collect();
            ndarray::concatenate(Axis(1), &views).expect("concat_cols row mismatch")
        };
        let rg = self.rg(parts);
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Sum each contiguous group of `block` columns: `r x (c*block)` to `r x c`.
    pub fn sum_blocks(&self, a: Var, block: usize) -> Var {
        self.unary(a, Op::SumBlocks(a, block), |x| {
            assert!(block > 0 && x.ncols() % block == 0, "bad block width");
            let groups = x.ncols() / block;
            let mut out = Array2::zeros((x.nrows(), groups));
            for (mut orow, xrow) in out.rows_mut().into_iter().zip(x.rows()) {
                for g in 0..groups {
                    orow[g] = xrow.slice(s![g * block..(g + 1) * block]).sum();
                }
            }
            out
        })
    }

    /// Row sums, `r x c` to `r x 1`.
    pub fn sum_cols(&self, a: Var) -> Var {
        let c = self.shape(a).1;
        self.sum_blocks(a, c)
    }

    pub fn sum_all(&self, a: Var) -> Var {
        self.unary(a, Op::SumAll(a), |x| Array2::from_elem((1, 1), x.sum()))
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let s = self.sum_all(a);
        self.scale(s, 1.0 / (r * c) as f64)
    }

    /// Column means over rows, `r x c` to `1 x c`.
    pub fn mean_rows(&self, a: Var) -> Var {
        self.unary(a, Op::MeanRows(a), |x| {
            x.mean_axis(Axis(0)).expect("mean of empty").insert_axis(Axis(0))
        })
    }

    /// Log-softmax within each contiguous group of `block` columns.
    pub fn log_softmax_blocks(&self, a: Var, block: usize) -> Var {
        self.unary(a, Op::LogSoftmaxBlocks(a, block), |x| {
            assert!(block > 0 && x.ncols() % block == 0, "bad block width");
            let mut out = x.clone();
            for mut row in out.rows_mut() {
                for mut chunk in row.exact_chunks_mut(block) {
                    let m = chunk.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    let lse = m + chunk.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                    chunk.mapv_inplace(|v| v - lse);
                }
            }
            out
        })
    }

    /// Row-wise log-sum-exp, `r x c` to `r x 1`.
    pub fn logsumexp_cols(&self, a: Var) -> Var {
        self.unary(a, Op::LogSumExpCols(a), |x| {
            let mut out = Array2::zeros((x.nrows(), 1));
            for (i, row) in x.rows().into_iter().enumerate() {
                out[[i, 0]] = logsumexp(row.iter().copied());
            }
            out
        })
    }

    /// Repeat each row `m` times consecutively: row `b` lands at `b*m..b*m+m`.
    pub fn repeat_rows(&self, a: Var, m: usize) -> Var {
        self.unary(a, Op::RepeatRows(a, m), |x| {
            let mut out = Array2::zeros((x.nrows() * m, x.ncols()));
            for (b, row) in x.rows().into_iter().enumerate() {
                for j in 0..m {
                    out.row_mut(b * m + j).assign(&row);
                }
            }
            out
        })
    }

    /// Row-major reshape.
    pub fn reshape(&self, a: Var, rows: usize, cols: usize) -> Var {
        self.unary(a, Op::Reshape(a), |x| {
            assert_eq!(x.len(), rows * cols, "reshape size mismatch");
            let flat: Vec<f64> = x.iter().copied().collect();
            Array2::from_shape_vec((rows, cols), flat).expect("reshape")
        })
    }

    /// `r x 1` to `r x cols` by copying the column.
    pub fn broadcast_cols(&self, a: Var, cols: usize) -> Var {
        self.unary(a, Op::BroadcastCols(a), |x| {
            assert_eq!(x.ncols(), 1, "broadcast_cols expects one column");
            let mut out = Array2::zeros((x.nrows(), cols));
            for (i, v) in x.column(0).iter().enumerate() {
                out.row_mut(i).fill(*v);
            }
            out
        })
    }

    /// Copy of `a` that blocks gradient flow.
    pub fn detach(&self, a: Var) -> Var {
        let value = self.value(a);
        self.push(value, Op::Detach, false)
    }

    /// Reverse sweep from a `1 x 1` output.
    pub fn backward(&self, out: Var) -> Grads {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[out.0].value.dim(), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=out.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let val = |v: Var| &nodes[v.0].value;
            let needs = |v: Var| nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Detach => {}
                Op::MatMul(a, b) => {
                    if needs(*a) {
                        acc(&mut grads, *a, g.dot(&val(*b).t()));
                    }
                    if needs(*b) {
                        acc(&mut grads, *b, val(*a).t().dot(&g));
                    }
                }
                Op::AddRow(a, r) => {
                    if needs(*r) {
                        acc(&mut grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if needs(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Add(a, b) => {
                    if needs(*b) {
                        acc(&mut grads, *b, g.clone());
                    }
                    if needs(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(*b) {
                        acc(&mut grads, *b, -&g);
                    }
                    if needs(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        acc(&mut grads, *a, &g * val(*b));
                    }
                    if needs(*b) {
                        acc(&mut grads, *b, &g * val(*a));
                    }
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::Exp(a) => acc(&mut grads, *a, g * &node.value),
                Op::Ln(a) => acc(&mut grads, *a, g / val(*a)),
                Op::Relu(a) => {
                    let mut out = g;
                    Zip::from(&mut out)
                        .and(val(*a))
                        .for_each(|o, &x| if x <= 0.0 { *o = 0.0 });
                    acc(&mut grads, *a, out);
                }
                Op::Tanh(a) => {
                    let mut out = g;
                    Zip::from(&mut out)
                        .and(&node.value)
                        .for_each(|o, &y| *o *= 1.0 - y * y);
                    acc(&mut grads, *a, out);
                }
                Op::Square(a) => acc(&mut grads, *a, g * val(*a) * 2.0),
                Op::Clamp(a, lo, hi) => {
                    let mut out = g;
                    Zip::from(&mut out).and(val(*a)).for_each(|o, &x| {
                        if x < *lo || x > *hi {
                            *o = 0.0
                        }
                    });
                    acc(&mut grads, *a, out);
                }
                Op::MaxScalar(a, c) => {
                    let mut out = g;
                    Zip::from(&mut out)
                        .and(val(*a))
                        .for_each(|o, &x| if x <= *c { *o = 0.0 });
                    acc(&mut grads, *a, out);
                }
                Op::SliceCols(a, start) => {
                    let mut out = Array2::zeros(val(*a).dim());
                    let w = g.ncols();
                    out.slice_mut(s![.., *start..*start + w]).assign(&g);
                    acc(&mut grads, *a, out);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = val(*p).ncols();
                        if needs(*p) {
                            acc(
                                &mut grads,
                                *p,
                                g.slice(s![.., offset..offset + w]).to_owned(),
                            );
                        }
                        offset += w;
                    }
                }
                Op::SumBlocks(a, block) => {
                    let (r, c) = val(*a).dim();
                    let mut out = Array2::zeros((r, c));
                    for i in 0..r {
                        for j in 0..c {
                            out[[i, j]] = g[[i, j / block]];
                        }
                    }
                    acc(&mut grads, *a, out);
                }
                Op::SumAll(a) => {
                    let gv = g[[0, 0]];
                    acc(&mut grads, *a, Array2::from_elem(val(*a).dim(), gv));
                }
                Op::MeanRows(a) => {
                    let (r, c) = val(*a).dim();
                    let scaled = &g / r as f64;
                    let out = scaled.broadcast((r, c)).expect("broadcast").to_owned();
                    acc(&mut grads, *a, out);
                }
                Op::LogSoftmaxBlocks(a, block) => {
                    // d/dx_j = g_j - softmax_j * sum_block(g)
                    let mut out = g.clone();
                    for (mut orow, (yrow, grow)) in out
                        .rows_mut()
                        .into_iter()
                        .zip(node.value.rows().into_iter().zip(g.rows()))
                    {
                        for ((mut oc, yc), gc) in orow
                            .exact_chunks_mut(*block)
                            .into_iter()
                            .zip(yrow.exact_chunks(*block))
                            .zip(grow.exact_chunks(*block))
                        {
                            let gs = gc.sum();
                            for k in 0..*block {
                                oc[k] = gc[k] - yc[k].exp() * gs;
                            }
                        }
                    }
                    acc(&mut grads, *a, out);
                }
                Op::LogSumExpCols(a) => {
                    let x = val(*a);
                    let mut out = Array2::zeros(x.dim());
                    for i in 0..x.nrows() {
                        let l = node.value[[i, 0]];
                        for j in 0..x.ncols() {
                            out[[i, j]] = g[[i, 0]] * (x[[i, j]] - l).exp();
                        }
                    }
                    acc(&mut grads, *a, out);
                }
                Op::RepeatRows(a, m) => {
                    let x = val(*a);
                    let mut out = Array2::zeros(x.dim());
                    for b in 0..x.nrows() {
                        let mut row = out.row_mut(b);
                        for j in 0..*m {
                            row += &g.row(b * m + j);
                        }
                    }
                    acc(&mut grads, *a, out);
                }
                Op::Reshape(a) => {
                    let flat: Vec<f64> = g.iter().copied().collect();
                    let out = Array2::from_shape_vec(val(*a).dim(), flat).expect("reshape");
                    acc(&mut grads, *a, out);
                }
                Op::BroadcastCols(a) => {
                    acc(&mut grads, *a, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
            }
        }
        Grads { grads }
    }
}

/// Numerically stable log-sum-exp.
pub fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}
