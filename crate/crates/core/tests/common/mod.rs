//! Reference implementations for the integration tests. They are written
//! from the defining formulas with plain loops and share no code with the
//! library.
#![allow(dead_code, clippy::needless_range_loop)]

use std::f64::consts::PI;
use std::path::PathBuf;

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// ln Γ(x) for x > 0 by upward recurrence and the Stirling series.
pub fn ln_gamma(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < 20.0 {
        shift -= x.ln();
        x += 1.0;
    }
    let x2 = x * x;
    let series = 1.0 / (12.0 * x) - 1.0 / (360.0 * x * x2) + 1.0 / (1260.0 * x * x2 * x2)
        - 1.0 / (1680.0 * x * x2 * x2 * x2);
    shift + (x - 0.5) * x.ln() - x + 0.5 * (2.0 * PI).ln() + series
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting and
/// returns `(x, det a)`.
pub fn solve(a: &[Vec<f64>], b: &[f64]) -> (Vec<f64>, f64) {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, &v)| {
        let mut row = r.clone();
        row.push(v);
        row
    }).collect();
    let mut det = 1.0;
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[r][col].abs() > m[piv][col].abs() {
                piv = r;
            }
        }
        if piv != col {
            m.swap(piv, col);
            det = -det;
        }
        det *= m[col][col];
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for c in col..=n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = m[r][n];
        for c in r + 1..n {
            s -= m[r][c] * x[c];
        }
        x[r] = s / m[r][r];
    }
    (x, det)
}

pub fn normal_log_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * PI).ln()
}

/// Multivariate t log-density with covariance `cov` (ν > 2), computed as
/// the Gaussian scale mixture
/// `∫ N(x; μ, S/w) Gamma(w; ν/2, rate ν/2) dw` with `S = cov (ν−2)/ν`,
/// integrated over `u = ln w` by the trapezoid rule in log space.
pub fn mvt_gsm_log_pdf(x: &[f64], mu: &[f64], cov: &[Vec<f64>], nu: f64) -> f64 {
    let d = x.len() as f64;
    let k = (nu - 2.0) / nu;
    let scale: Vec<Vec<f64>> = cov.iter().map(|r| r.iter().map(|v| v * k).collect()).collect();
    let diff: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    let (sol, det) = solve(&scale, &diff);
    let q: f64 = diff.iter().zip(&sol).map(|(a, b)| a * b).sum();

    let a = nu / 2.0;
    let log_const = -0.5 * d * (2.0 * PI).ln() - 0.5 * det.ln() + a * a.ln() - ln_gamma(a);
    let log_integrand = |u: f64| {
        let w = u.exp();
        0.5 * d * u - 0.5 * w * q + (a - 1.0) * u - a * w + u
    };
    let u_peak = ((0.5 * d + a) / (0.5 * q + a)).ln();
    let h = 0.004;
    let (lo, hi) = (u_peak - 80.0, u_peak + 8.0);
    let n = ((hi - lo) / h).ceil() as usize;
    let vals: Vec<f64> = (0..=n)
        .map(|i| {
            let wgt: f64 = if i == 0 || i == n { 0.5 } else { 1.0 };
            log_integrand(lo + i as f64 * h) + wgt.ln()
        })
        .collect();
    let top = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = vals.iter().map(|v| (v - top).exp()).sum();
    log_const + top + (s * h).ln()
}

/// A dense ReLU network given by its widths and flat parameters. Layer `l`
/// stores an `n_in × n_out` row-major weight block followed by `n_out`
/// biases.
pub struct RefNet<'a> {
    pub widths: &'a [usize],
    pub theta: &'a [f64],
}

impl RefNet<'_> {
    /// Outputs of every layer. `keep[l][j]` drops hidden unit `j` of hidden
    /// layer `l` when false; kept units are multiplied by `scale`.
    pub fn layers(&self, x: &[f64], keep: Option<&[Vec<bool>]>, scale: f64) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        let mut h = x.to_vec();
        let mut off = 0;
        let n_layers = self.widths.len() - 1;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let mut z = vec![0.0; n_out];
            for j in 0..n_out {
                let mut s = self.theta[off + n_in * n_out + j];
                for i in 0..n_in {
                    s += h[i] * self.theta[off + i * n_out + j];
                }
                z[j] = s;
            }
            off += n_in * n_out + n_out;
            if l + 1 < n_layers {
                for j in 0..n_out {
                    z[j] = if z[j] > 0.0 { z[j] } else { 0.0 };
                    if let Some(k) = keep {
                        z[j] *= if k[l][j] { scale } else { 0.0 };
                    }
                }
            }
            out.push(z.clone());
            h = z;
        }
        out
    }

    pub fn logits(&self, x: &[f64], keep: Option<&[Vec<bool>]>, scale: f64) -> Vec<f64> {
        self.layers(x, keep, scale).pop().unwrap()
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        let mut l = self.layers(x, None, 1.0);
        l.pop();
        l.pop().unwrap_or_else(|| x.to_vec())
    }
}

/// Settings of the brute-force objective.
pub struct RefObjective<'a> {
    pub widths: &'a [usize],
    pub extractor: &'a [f64],
    pub nu: f64,
    pub sigma: f64,
    pub rho: f64,
    pub m: f64,
    pub tau1: f64,
    pub tau2: f64,
}

impl RefObjective<'_> {
    /// `(data term, functional penalty, weight penalty)` averaged over the
    /// given keep patterns.
    pub fn terms(
        &self,
        theta: &[f64],
        xs: &[Vec<f64>],
        ys: &[usize],
        ctx: &[Vec<f64>],
        masks: &[Vec<Vec<bool>>],
    ) -> (f64, f64, f64) {
        let net = RefNet {
            widths: self.widths,
            theta,
        };
        let ext = RefNet {
            widths: self.widths,
            theta: self.extractor,
        };
        let scale = 1.0 / (1.0 - self.rho);
        let nc = ctx.len();
        let feats: Vec<Vec<f64>> = ctx.iter().map(|x| ext.features(x)).collect();
        let mut kern = vec![vec![0.0; nc]; nc];
        for i in 0..nc {
            for j in 0..nc {
                let mut s = 0.0;
                for f in 0..feats[i].len() {
                    s += feats[i][f] * feats[j][f];
                }
                kern[i][j] = self.tau1 * s + if i == j { self.tau2 } else { 0.0 };
            }
        }

        let mut data = 0.0;
        let mut func = 0.0;
        for mask in masks {
            for (x, &y) in xs.iter().zip(ys) {
                let z = net.logits(x, Some(mask), scale);
                let top = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for v in &z {
                    s += (v - top).exp();
                }
                data += z[y] - top - s.ln();
            }
            let zc: Vec<Vec<f64>> = ctx.iter().map(|x| net.logits(x, Some(mask), scale)).collect();
            let outputs = zc[0].len();
            for l in 0..outputs {
                let f: Vec<f64> = zc.iter().map(|r| r[l]).collect();
                let (sol, _) = solve(&kern, &f);
                let mut c = 0.0;
                for i in 0..nc {
                    c += f[i] * sol[i];
                }
                func += -0.5 * (self.nu + nc as f64) * (1.0 + c / (self.nu - 2.0)).ln();
            }
        }
        let s = masks.len() as f64;
        let mut wsum = 0.0;
        for t in theta {
            wsum += (1.0 + t * t / (self.nu * self.sigma * self.sigma)).ln();
        }
        let weight = -self.rho * (self.nu + 1.0) / (2.0 * self.m) * wsum;
        (data / s, func / s, weight)
    }
}
