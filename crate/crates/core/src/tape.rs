//! Reverse-mode differentiation over a small, fixed set of matrix
//! operations: exactly what the dropout network and its objectives use.
//!
//! Nodes hold dense matrices (scalars are `1 × 1`). Leaves are either
//! constants or views into the flat parameter vector; gradients of every
//! view are accumulated into one θ-shaped buffer.

use std::rc::Rc;

use crate::error::{check_dim, Error, Result};
use crate::numerics::{CholFactor, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Const,
    Param { offset: usize },
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Relu(Var),
    ScaleCols(Var, Rc<Vec<f64>>),
    SliceRows(Var, usize),
    SoftmaxLogLik(Var, Rc<Vec<usize>>),
    /// `c_l = a_lᵀ K⁻¹ a_l` per column; keeps `K⁻¹ A` for the backward pass.
    MahalanobisCols(Var, Matrix),
    Log1pScaledSum(Var, f64),
    Log1pSqScaledSum(Var, f64),
    SumSq(Var),
    Sum(Var),
    Scale(Var, f64),
    Add(Var, Var),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Records a computation over the parameter vector `theta`.
pub struct Tape<'a> {
    theta: &'a [f64],
    nodes: Vec<Node>,
}

fn scalar(v: f64) -> Matrix {
    Matrix::from_vec(1, 1, vec![v]).expect("1x1")
}

impl<'a> Tape<'a> {
    pub fn new(theta: &'a [f64]) -> Self {
        Tape {
            theta,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Const, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.constant(scalar(v))
    }

    /// `rows × cols` view of θ starting at `offset`, row-major.
    pub fn param(&mut self, offset: usize, rows: usize, cols: usize) -> Result<Var> {
        let end = offset + rows * cols;
        if end > self.theta.len() {
            return Err(Error::DimensionMismatch {
                context: "tape parameter view",
                expected: self.theta.len(),
                got: end,
            });
        }
        let m = Matrix::from_vec(rows, cols, self.theta[offset..end].to_vec())?;
        Ok(self.push(m, Op::Param { offset }, true))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::MatMul(a, b), ng))
    }

    /// Adds the `1 × m` row `b` to every row of `a`.
    pub fn add_row_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let bias = self.value(b);
        check_dim("bias rows", 1, bias.rows())?;
        check_dim("bias width", self.value(a).cols(), bias.cols())?;
        let bias = bias.row(0).to_vec();
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            v.row_mut(i).iter_mut().zip(&bias).for_each(|(x, b)| *x += b);
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::AddRowBias(a, b), ng))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        v.as_mut_slice().iter_mut().for_each(|x| *x = x.max(0.0));
        let ng = self.needs(a);
        self.push(v, Op::Relu(a), ng)
    }

    /// Multiplies column `j` of `a` by `scale[j]`.
    pub fn scale_cols(&mut self, a: Var, scale: Rc<Vec<f64>>) -> Result<Var> {
        check_dim("column scale", self.value(a).cols(), scale.len())?;
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            v.row_mut(i).iter_mut().zip(scale.iter()).for_each(|(x, s)| *x *= s);
        }
        let ng = self.needs(a);
        Ok(self.push(v, Op::ScaleCols(a, scale), ng))
    }

    /// Rows `start..end` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let src = self.value(a);
        if start > end || end > src.rows() {
            return Err(Error::Domain(format!(
                "row slice {start}..{end} out of bounds for {} rows",
                src.rows()
            )));
        }
        let cols = src.cols();
        let v = Matrix::from_vec(end - start, cols, src.as_slice()[start * cols..end * cols].to_vec())?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::SliceRows(a, start), ng))
    }

    /// `Σ_b [z_{b,y_b} − logsumexp(z_b)]` over the rows of `logits`.
    pub fn softmax_log_lik(&mut self, logits: Var, labels: Rc<Vec<usize>>) -> Result<Var> {
        let z = self.value(logits);
        check_dim("labels per logit row", z.rows(), labels.len())?;
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = z.row(i);
            if y >= row.len() {
                return Err(Error::Domain(format!(
                    "label {y} out of range for {} classes",
                    row.len()
                )));
            }
            total += row[y] - log_sum_exp(row);
        }
        let ng = self.needs(logits);
        Ok(self.push(scalar(total), Op::SoftmaxLogLik(logits, labels), ng))
    }

    /// `1 × L` row of squared Mahalanobis norms of the `L` columns of `a`
    /// under the covariance factored by `f`.
    pub fn mahalanobis_cols(&mut self, a: Var, f: &CholFactor) -> Result<Var> {
        let m = self.value(a);
        check_dim("mahalanobis rows", f.dim(), m.rows())?;
        let (n, l) = (m.rows(), m.cols());
        let mut solved = Matrix::zeros(n, l);
        let mut out = Matrix::zeros(1, l);
        for j in 0..l {
            let col = m.column(j);
            let x = crate::numerics::chol_solve(f, &col)?;
            out[(0, j)] = col.iter().zip(&x).map(|(a, b)| a * b).sum();
            for i in 0..n {
                solved[(i, j)] = x[i];
            }
        }
        let ng = self.needs(a);
        Ok(self.push(out, Op::MahalanobisCols(a, solved), ng))
    }

    /// `Σ_i ln(1 + a·v_i)`.
    pub fn log1p_scaled_sum(&mut self, v: Var, a: f64) -> Var {
        let s = self.value(v).as_slice().iter().map(|x| (a * x).ln_1p()).sum();
        let ng = self.needs(v);
        self.push(scalar(s), Op::Log1pScaledSum(v, a), ng)
    }

    /// `Σ_i ln(1 + a·v_i²)`.
    pub fn log1p_sq_scaled_sum(&mut self, v: Var, a: f64) -> Var {
        let s = self.value(v).as_slice().iter().map(|x| (a * x * x).ln_1p()).sum();
        let ng = self.needs(v);
        self.push(scalar(s), Op::Log1pSqScaledSum(v, a), ng)
    }

    pub fn sum_sq(&mut self, v: Var) -> Var {
        let s = self.value(v).as_slice().iter().map(|x| x * x).sum();
        let ng = self.needs(v);
        self.push(scalar(s), Op::SumSq(v), ng)
    }

    pub fn sum(&mut self, v: Var) -> Var {
        let s = self.value(v).as_slice().iter().sum();
        let ng = self.needs(v);
        self.push(scalar(s), Op::Sum(v), ng)
    }

    pub fn scale(&mut self, v: Var, k: f64) -> Var {
        let mut m = self.value(v).clone();
        m.as_mut_slice().iter_mut().for_each(|x| *x *= k);
        let ng = self.needs(v);
        self.push(m, Op::Scale(v, k), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        check_dim("add rows", x.rows(), y.rows())?;
        check_dim("add cols", x.cols(), y.cols())?;
        let mut v = x.clone();
        v.as_mut_slice().iter_mut().zip(y.as_slice()).for_each(|(p, q)| *p += q);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    /// Sum of scalar nodes; an empty list gives a constant zero.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let mut it = vars.iter();
        let Some(&first) = it.next() else {
            return Ok(self.constant_scalar(0.0));
        };
        let mut acc = first;
        for &v in it {
            acc = self.add(acc, v)?;
        }
        Ok(acc)
    }

    /// Gradient of the scalar node `out` with respect to θ.
    pub fn gradient(&self, out: Var) -> Result<Vec<f64>> {
        let v = self.value(out);
        if v.rows() != 1 || v.cols() != 1 {
            return Err(Error::Domain("gradient needs a scalar output".into()));
        }
        let mut grad = vec![0.0; self.theta.len()];
        let mut adj: Vec<Option<Matrix>> = (0..=out.0).map(|_| None).collect();
        adj[out.0] = Some(scalar(1.0));

        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            match &node.op {
                Op::Const => {}
                Op::Param { offset } => {
                    for (t, d) in grad[*offset..].iter_mut().zip(g.as_slice()) {
                        *t += d;
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        // dA = G Bᵀ
                        let mut da = Matrix::zeros(av.rows(), av.cols());
                        for i in 0..av.rows() {
                            let grow = g.row(i);
                            for p in 0..av.cols() {
                                da[(i, p)] = grow.iter().zip(bv.row(p)).map(|(x, y)| x * y).sum();
                            }
                        }
                        accumulate(&mut adj, *a, da);
                    }
                    if self.needs(*b) {
                        // dB = Aᵀ G
                        let mut db = Matrix::zeros(bv.rows(), bv.cols());
                        for i in 0..av.rows() {
                            let grow = g.row(i);
                            for (p, &x) in av.row(i).iter().enumerate() {
                                if x == 0.0 {
                                    continue;
                                }
                                db.row_mut(p).iter_mut().zip(grow).for_each(|(d, gv)| *d += x * gv);
                            }
                        }
                        accumulate(&mut adj, *b, db);
                    }
                }
                Op::AddRowBias(a, b) => {
                    if self.needs(*b) {
                        let mut db = Matrix::zeros(1, g.cols());
                        for i in 0..g.rows() {
                            db.row_mut(0).iter_mut().zip(g.row(i)).for_each(|(d, x)| *d += x);
                        }
                        accumulate(&mut adj, *b, db);
                    }
                    if self.needs(*a) {
                        accumulate(&mut adj, *a, g);
                    }
                }
                Op::Relu(a) => {
                    let mut da = g;
                    da.as_mut_slice()
                        .iter_mut()
                        .zip(node.value.as_slice())
                        .for_each(|(d, y)| {
                            if *y <= 0.0 {
                                *d = 0.0;
                            }
                        });
                    accumulate(&mut adj, *a, da);
                }
                Op::ScaleCols(a, s) => {
                    let mut da = g;
                    for i in 0..da.rows() {
                        da.row_mut(i).iter_mut().zip(s.iter()).for_each(|(d, k)| *d *= k);
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::SliceRows(a, start) => {
                    let src = self.value(*a);
                    let mut da = Matrix::zeros(src.rows(), src.cols());
                    let cols = src.cols();
                    da.as_mut_slice()[start * cols..start * cols + g.as_slice().len()]
                        .copy_from_slice(g.as_slice());
                    accumulate(&mut adj, *a, da);
                }
                Op::SoftmaxLogLik(z, labels) => {
                    let zv = self.value(*z);
                    let gs = g[(0, 0)];
                    let mut dz = Matrix::zeros(zv.rows(), zv.cols());
                    for (i, &y) in labels.iter().enumerate() {
                        let row = zv.row(i);
                        let lse = log_sum_exp(row);
                        for (j, d) in dz.row_mut(i).iter_mut().enumerate() {
                            let p = (row[j] - lse).exp();
                            *d = gs * (if j == y { 1.0 } else { 0.0 } - p);
                        }
                    }
                    accumulate(&mut adj, *z, dz);
                }
                Op::MahalanobisCols(a, solved) => {
                    let mut da = solved.clone();
                    for i in 0..da.rows() {
                        da.row_mut(i)
                            .iter_mut()
                            .zip(g.row(0))
                            .for_each(|(d, gl)| *d *= 2.0 * gl);
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::Log1pScaledSum(v, k) => {
                    let gs = g[(0, 0)];
                    let mut dv = self.value(*v).clone();
                    dv.as_mut_slice().iter_mut().for_each(|x| *x = gs * k / (1.0 + k * *x));
                    accumulate(&mut adj, *v, dv);
                }
                Op::Log1pSqScaledSum(v, k) => {
                    let gs = g[(0, 0)];
                    let mut dv = self.value(*v).clone();
                    dv.as_mut_slice()
                        .iter_mut()
                        .for_each(|x| *x = gs * 2.0 * k * *x / (1.0 + k * *x * *x));
                    accumulate(&mut adj, *v, dv);
                }
                Op::SumSq(v) => {
                    let gs = g[(0, 0)];
                    let mut dv = self.value(*v).clone();
                    dv.as_mut_slice().iter_mut().for_each(|x| *x *= 2.0 * gs);
                    accumulate(&mut adj, *v, dv);
                }
                Op::Sum(v) => {
                    let gs = g[(0, 0)];
                    let src = self.value(*v);
                    let dv = Matrix::from_vec(src.rows(), src.cols(), vec![gs; src.as_slice().len()])?;
                    accumulate(&mut adj, *v, dv);
                }
                Op::Scale(v, k) => {
                    let mut dv = g;
                    dv.as_mut_slice().iter_mut().for_each(|x| *x *= k);
                    accumulate(&mut adj, *v, dv);
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut adj, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut adj, *b, g);
                    }
                }
            }
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!("non-finite gradient at coordinate {i}")));
        }
        Ok(grad)
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut adj[v.0] {
        Some(acc) => acc
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

/// Value and θ-gradient of the scalar built by `loss_fn` on a fresh tape.
pub fn grad<F>(theta: &[f64], loss_fn: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape<'_>) -> Result<Var>,
{
    let mut tape = Tape::new(theta);
    let out = loss_fn(&mut tape)?;
    let value = tape.scalar(out);
    let g = tape.gradient(out)?;
    Ok((value, g))
}
