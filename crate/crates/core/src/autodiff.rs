//! A small tape-based reverse-mode differentiation engine over dense
//! row-major matrices.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep over
//! the tape visits every node after all of its consumers. Scalars are `1x1`
//! matrices. The matrix product kernels accumulate each output element in a
//! fixed order that does not depend on the number of rows, which makes a
//! row's result independent of the batch it was evaluated in.

use ndarray::{Array2, ArrayView2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a (n x k) + b (1 x k)`, broadcast over rows.
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Vec<f64>),
    Silu(Var),
    Square(Var),
    ConcatCols(Var, Var),
    Mean(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the differentiated output with respect to the leaf `v`,
    /// or zeros if `v` does not influence it. Interior adjoints are consumed
    /// during the sweep and also read as zeros.
    pub fn get(&self, tape: &Tape, v: Var) -> Array2<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(tape.value(v).raw_dim()),
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

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Inputs and parameters alike enter as leaves.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// The single entry of a `1x1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.dim(), (1, 1), "not a scalar node");
        val[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = matmul(self.value(a).view(), self.value(b).view());
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row expects a 1 x k row");
        let value = self.value(a) + r;
        self.push(value, Op::AddRow(a, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        self.push(value, Op::Scale(a, k))
    }

    /// Multiplies row `i` of `a` by `w[i]`.
    pub fn scale_rows(&mut self, a: Var, w: Vec<f64>) -> Var {
        let mut value = self.value(a).clone();
        assert_eq!(value.nrows(), w.len(), "one weight per row");
        for (mut row, &k) in value.rows_mut().into_iter().zip(&w) {
            row *= k;
        }
        self.push(value, Op::ScaleRows(a, w))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(silu);
        self.push(value, Op::Silu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| v * v);
        self.push(value, Op::Square(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let value = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("row counts must agree");
        self.push(value, Op::ConcatCols(a, b))
    }

    /// Mean of all entries, as a `1x1` node.
    pub fn mean(&mut self, a: Var) -> Var {
        let val = self.value(a);
        let m = ordered_sum(val.iter().copied()) / val.len() as f64;
        self.push(Array2::from_elem((1, 1), m), Op::Mean(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = ordered_sum(self.value(a).iter().copied());
        self.push(Array2::from_elem((1, 1), s), Op::Sum(a))
    }

    /// Reverse sweep from the scalar node `out`.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.value(out).dim(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    acc(&mut grads, *a, matmul_transpose_b(g.view(), bv.view()));
                    acc(&mut grads, *b, matmul_transpose_a(av.view(), g.view()));
                }
                Op::AddRow(a, row) => {
                    let col_sums = column_sums(g.view());
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *row, col_sums);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g * *k),
                Op::ScaleRows(a, w) => {
                    let mut ga = g;
                    for (mut row, &k) in ga.rows_mut().into_iter().zip(w) {
                        row *= k;
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Silu(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(self.value(*a), |gi, &x| *gi *= silu_grad(x));
                    acc(&mut grads, *a, ga);
                }
                Op::Square(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(self.value(*a), |gi, &x| *gi *= 2.0 * x);
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(a, b) => {
                    let ka = self.value(*a).ncols();
                    let ga = g.slice(ndarray::s![.., ..ka]).to_owned();
                    let gb = g.slice(ndarray::s![.., ka..]).to_owned();
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Mean(a) => {
                    let av = self.value(*a);
                    let k = g[[0, 0]] / av.len() as f64;
                    acc(&mut grads, *a, Array2::from_elem(av.raw_dim(), k));
                }
                Op::Sum(a) => {
                    let av = self.value(*a);
                    acc(&mut grads, *a, Array2::from_elem(av.raw_dim(), g[[0, 0]]));
                }
            }
        }
        Gradients { grads }
    }
}

/// Differentiates a scalar function of several matrix arguments. `f`
/// receives one leaf per entry of `params` and returns the scalar output.
pub fn value_and_grad<F>(params: &[Array2<f64>], f: F) -> (f64, Vec<Array2<f64>>)
where
    F: FnOnce(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let leaves: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &leaves);
    let value = tape.scalar(out);
    let grads = tape.backward_keep_leaves(out, &leaves);
    (value, grads)
}

impl Tape {
    /// Like [`Tape::backward`] but returns the adjoints of `leaves` directly.
    pub fn backward_keep_leaves(&self, out: Var, leaves: &[Var]) -> Vec<Array2<f64>> {
        let mut grads = self.backward(out).grads;
        leaves
            .iter()
            .map(|v| {
                grads[v.0]
                    .take()
                    .unwrap_or_else(|| Array2::zeros(self.value(*v).raw_dim()))
            })
            .collect()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

fn ordered_sum(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(0.0, |a, b| a + b)
}

fn column_sums(g: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((1, g.ncols()));
    for row in g.rows() {
        for (o, v) in out.row_mut(0).iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

/// `a (n x k) * b (k x m)`. Each output element accumulates over `k` in
/// ascending order.
pub fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let (n, k) = a.dim();
    let (k2, m) = b.dim();
    assert_eq!(k, k2, "inner dimensions differ: {k} vs {k2}");
    let b = b.as_standard_layout();
    let bs = b.as_slice().expect("standard layout");
    let mut out = Array2::zeros((n, m));
    for (i, mut orow) in out.rows_mut().into_iter().enumerate() {
        let o = orow.as_slice_mut().expect("standard layout");
        for kk in 0..k {
            let aik = a[[i, kk]];
            let brow = &bs[kk * m..(kk + 1) * m];
            for (oj, bj) in o.iter_mut().zip(brow) {
                *oj += aik * bj;
            }
        }
    }
    out
}

/// `g (n x m) * b^T` where `b` is `k x m`.
fn matmul_transpose_b(g: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let (n, m) = g.dim();
    let (k, m2) = b.dim();
    assert_eq!(m, m2);
    let b = b.as_standard_layout();
    let bs = b.as_slice().expect("standard layout");
    let g = g.as_standard_layout();
    let gs = g.as_slice().expect("standard layout");
    let mut out = Array2::zeros((n, k));
    for i in 0..n {
        let grow = &gs[i * m..(i + 1) * m];
        for kk in 0..k {
            let brow = &bs[kk * m..(kk + 1) * m];
            out[[i, kk]] = grow.iter().zip(brow).fold(0.0, |s, (x, y)| s + x * y);
        }
    }
    out
}

/// `a^T * g` where `a` is `n x k` and `g` is `n x m`.
fn matmul_transpose_a(a: ArrayView2<f64>, g: ArrayView2<f64>) -> Array2<f64> {
    let (n, k) = a.dim();
    let (n2, m) = g.dim();
    assert_eq!(n, n2);
    let g = g.as_standard_layout();
    let gs = g.as_slice().expect("standard layout");
    let mut out = Array2::<f64>::zeros((k, m));
    let os = out.as_slice_mut().expect("standard layout");
    for i in 0..n {
        let grow = &gs[i * m..(i + 1) * m];
        for kk in 0..k {
            let aik = a[[i, kk]];
            if aik == 0.0 {
                continue;
            }
            for (o, gj) in os[kk * m..(kk + 1) * m].iter_mut().zip(grow) {
                *o += aik * gj;
            }
        }
    }
    out
}
