//! Scalar and dense linear-algebra primitives shared by the densities,
//! the kernel and the objective: log-gamma, a row-major matrix, Cholesky
//! with jitter escalation, triangular solves, and a splittable seeded RNG.

use std::ops::{Index, IndexMut};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};

const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the Gamma function for `x > 0`.
///
/// Lanczos approximation (g = 7, nine terms); arguments below 0.5 go through
/// the reflection formula.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("log_gamma requires x > 0, got {x}")));
    }
    Ok(ln_gamma(x))
}

/// `log_gamma` for arguments already known to be positive.
pub(crate) fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Gamma(x) Gamma(1 - x) = pi / sin(pi x)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let z = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (k, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (z + k as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("Matrix::from_vec", rows * cols, data.len())?;
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `self · rhs`. Zero entries of `self` are skipped, which pays off for
    /// ReLU activations and mostly-black images.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        check_dim("matmul inner dimension", self.cols, rhs.rows)?;
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (p, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(p)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Keeps the listed rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        check_dim("vstack columns", self.cols, other.cols)?;
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Square symmetric matrix, e.g. a kernel Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    inner: Matrix,
}

impl SymMatrix {
    /// Checks squareness and symmetry to 1e-12 relative to the largest entry.
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() == 0 {
            return Err(Error::Domain("symmetric matrix must have dim >= 1".into()));
        }
        check_dim("SymMatrix square", m.rows(), m.cols())?;
        let scale = m.as_slice().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        for i in 0..m.rows() {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::Domain(format!(
                        "matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(SymMatrix { inner: m })
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix {
            inner: Matrix::identity(n),
        }
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        let mut m = Matrix::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        SymMatrix::new(m)
    }

    pub fn dim(&self) -> usize {
        self.inner.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.inner
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim("SymMatrix::mul_vec", self.dim(), v.len())?;
        Ok((0..self.dim())
            .map(|i| dot(self.inner.row(i), v))
            .collect())
    }

    pub fn mean_diagonal(&self) -> f64 {
        (0..self.dim()).map(|i| self.get(i, i)).sum::<f64>() / self.dim() as f64
    }

    /// Returns `c · self`.
    pub fn scaled(&self, c: f64) -> SymMatrix {
        let mut m = self.inner.clone();
        m.as_mut_slice().iter_mut().for_each(|v| *v *= c);
        SymMatrix { inner: m }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower-triangular Cholesky factor of `m + jitter_used · I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholFactor {
    lower: Matrix,
    jitter_used: f64,
}

/// Smallest escalated jitter, relative to the mean diagonal.
pub const JITTER_FLOOR: f64 = 1e-10;
/// Jitter beyond this fraction of the mean diagonal means the input is not PSD.
pub const JITTER_CAP: f64 = 1e-2;

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// `L · Lᵀ`, the (jittered) matrix this factor represents.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.dim();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = dot(&self.lower.row(i)[..=j], &self.lower.row(j)[..=j]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    /// Solves `L y = v` in place.
    pub fn forward_solve_in_place(&self, v: &mut [f64]) -> Result<()> {
        check_dim("triangular solve", self.dim(), v.len())?;
        for i in 0..v.len() {
            let row = self.lower.row(i);
            let s = dot(&row[..i], &v[..i]);
            v[i] = (v[i] - s) / row[i];
        }
        Ok(())
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn backward_solve_in_place(&self, v: &mut [f64]) -> Result<()> {
        check_dim("triangular solve", self.dim(), v.len())?;
        let n = v.len();
        for i in (0..n).rev() {
            let mut s = v[i];
            for k in i + 1..n {
                s -= self.lower[(k, i)] * v[k];
            }
            v[i] = s / self.lower[(i, i)];
        }
        Ok(())
    }
}

fn try_cholesky(m: &SymMatrix, jitter: f64) -> Option<Matrix> {
    let n = m.dim();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m.get(j, j) + jitter;
        d -= l.row(j)[..j].iter().map(|v| v * v).sum::<f64>();
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let s = m.get(i, j) - dot(&l.row(i)[..j], &l.row(j)[..j]);
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Factorises `m + jitter · I`, starting from `base_jitter` and escalating
/// tenfold (from at least `JITTER_FLOOR · mean diagonal`) until it succeeds or
/// the jitter passes `JITTER_CAP · mean diagonal`.
pub fn cholesky(m: &SymMatrix, base_jitter: f64) -> Result<CholFactor> {
    if !(base_jitter >= 0.0) {
        return Err(Error::Domain(format!(
            "base jitter must be nonnegative, got {base_jitter}"
        )));
    }
    let mean_diag = m.mean_diagonal().abs().max(f64::MIN_POSITIVE);
    let cap = JITTER_CAP * mean_diag;
    let mut jitter = base_jitter;
    loop {
        if let Some(lower) = try_cholesky(m, jitter) {
            return Ok(CholFactor {
                lower,
                jitter_used: jitter,
            });
        }
        let next = (jitter * 10.0).max(JITTER_FLOOR * mean_diag);
        if next > cap {
            return Err(Error::NotPositiveDefinite { jitter });
        }
        jitter = next;
    }
}

/// Solves `(L Lᵀ) x = v`.
pub fn chol_solve(f: &CholFactor, v: &[f64]) -> Result<Vec<f64>> {
    let mut x = v.to_vec();
    f.forward_solve_in_place(&mut x)?;
    f.backward_solve_in_place(&mut x)?;
    Ok(x)
}

/// `ln |L Lᵀ|`.
pub fn log_det(f: &CholFactor) -> f64 {
    2.0 * (0..f.dim()).map(|i| f.lower[(i, i)].ln()).sum::<f64>()
}

/// Seeded, splittable random stream.
///
/// Substreams are derived from `(seed, label, index)` by hashing, so the
/// draws of one consumer (data shuffling, dropout masks, context sampling)
/// never depend on how many draws another consumer made.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream named by `label`; does not advance `self`.
    pub fn substream(&self, label: &str) -> Rng {
        Rng::new(splitmix64(self.seed ^ splitmix64(fnv1a(label))))
    }

    /// Independent stream named by `(label, index)`.
    pub fn substream_indexed(&self, label: &str, index: u64) -> Rng {
        let base = splitmix64(self.seed ^ splitmix64(fnv1a(label)));
        Rng::new(splitmix64(base ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D))))
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform integer in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        // Lemire's multiply-shift; the bias is below 2^-40 for any n we use.
        ((u128::from(self.inner.next_u64()) * n as u128) >> 64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Fisher-Yates.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
