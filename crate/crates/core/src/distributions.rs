//! Student's t (scale form), multivariate t (covariance form), Gaussian,
//! and the Gaussian-scale-mixture sampler for the multivariate t.
//!
//! The univariate density takes `(ν, μ, σ²)` with `σ²` a scale; the
//! multivariate density takes `(ν, μ, K)` with `K` the covariance, which
//! needs `ν > 2`. For `d = 1` they coincide when `σ² = K·(ν−2)/ν`.

use std::f64::consts::PI;

use crate::error::{check_dim, Error, Result};
use crate::numerics::{cholesky, ln_gamma, log_det, CholFactor, Rng, SymMatrix};

/// Univariate Student's t parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TDistParams {
    nu: f64,
    mu: f64,
    sigma: f64,
}

impl TDistParams {
    pub fn new(nu: f64, mu: f64, sigma: f64) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::Domain(format!("dof must be positive, got {nu}")));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Domain(format!("scale must be positive, got {sigma}")));
        }
        if !mu.is_finite() {
            return Err(Error::Domain("location must be finite".into()));
        }
        Ok(TDistParams { nu, mu, sigma })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Multivariate Student's t in the covariance parameterisation.
#[derive(Debug, Clone, PartialEq)]
pub struct MvtParams {
    nu: f64,
    mu: Vec<f64>,
    cov: SymMatrix,
}

impl MvtParams {
    pub fn new(nu: f64, mu: Vec<f64>, cov: SymMatrix) -> Result<Self> {
        if !(nu > 2.0) {
            return Err(Error::Domain(format!(
                "multivariate t in covariance form needs nu > 2, got {nu}"
            )));
        }
        check_dim("MvtParams mean/cov", cov.dim(), mu.len())?;
        Ok(MvtParams { nu, mu, cov })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// One draw of the mixing scale γ, with γ⁻¹ ~ Gamma(ν/2, rate (ν−2)/2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GsmLatent {
    pub gamma: f64,
}

/// Log-density of the univariate Student's t.
pub fn st_log_pdf(x: f64, p: &TDistParams) -> f64 {
    let TDistParams { nu, mu, sigma } = *p;
    let s2 = sigma * sigma;
    let z = (x - mu) * (x - mu) / (nu * s2);
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (PI * nu * s2).ln()
        - 0.5 * (nu + 1.0) * z.ln_1p()
}

fn centred(x: &[f64], mu: &[f64]) -> Vec<f64> {
    x.iter().zip(mu).map(|(a, b)| a - b).collect()
}

fn quad_form(f: &CholFactor, v: &[f64]) -> Result<f64> {
    let mut y = v.to_vec();
    f.forward_solve_in_place(&mut y)?;
    Ok(y.iter().map(|t| t * t).sum())
}

/// Log-density of the multivariate t; `f` must factor `p.cov()`.
pub fn mvt_log_pdf(x: &[f64], p: &MvtParams, f: &CholFactor) -> Result<f64> {
    let d = p.dim();
    check_dim("mvt_log_pdf x", d, x.len())?;
    check_dim("mvt_log_pdf factor", d, f.dim())?;
    let nu = p.nu;
    let df = d as f64;
    let q = quad_form(f, &centred(x, &p.mu))?;
    Ok(ln_gamma(0.5 * (nu + df)) - ln_gamma(0.5 * nu)
        - 0.5 * df * ((nu - 2.0) * PI).ln()
        - 0.5 * log_det(f)
        - 0.5 * (nu + df) * (q / (nu - 2.0)).ln_1p())
}

/// Multivariate normal log-density with covariance factor `f`.
pub fn gaussian_log_pdf(x: &[f64], mu: &[f64], f: &CholFactor) -> Result<f64> {
    check_dim("gaussian_log_pdf mean", x.len(), mu.len())?;
    check_dim("gaussian_log_pdf factor", x.len(), f.dim())?;
    let q = quad_form(f, &centred(x, mu))?;
    Ok(-0.5 * x.len() as f64 * (2.0 * PI).ln() - 0.5 * log_det(f) - 0.5 * q)
}

/// Gamma(shape, rate) variate by Marsaglia-Tsang squeeze/rejection.
/// Shapes below one use the `U^(1/a)` boost.
pub fn sample_gamma(shape: f64, rate: f64, rng: &mut Rng) -> f64 {
    assert!(shape > 0.0 && rate > 0.0, "gamma parameters must be positive");
    if shape < 1.0 {
        let u = loop {
            let u = rng.uniform();
            if u > 0.0 {
                break u;
            }
        };
        return sample_gamma(shape + 1.0, rate, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = rng.normal();
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = rng.uniform();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v / rate;
        }
        if u > 0.0 && u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v / rate;
        }
    }
}

/// Draws the mixing scale of the Gaussian scale mixture.
pub fn sample_gsm_latent(nu: f64, rng: &mut Rng) -> GsmLatent {
    let precision = sample_gamma(0.5 * nu, 0.5 * (nu - 2.0), rng);
    GsmLatent {
        gamma: 1.0 / precision,
    }
}

/// Draws `n` vectors from the multivariate t through its scale-mixture form:
/// γ first, then a Gaussian with covariance `γ K`.
pub fn sample_gsm_path(p: &MvtParams, rng: &mut Rng, n: usize) -> Result<Vec<Vec<f64>>> {
    let f = cholesky(&p.cov, 0.0)?;
    let d = p.dim();
    let l = f.lower();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let GsmLatent { gamma } = sample_gsm_latent(p.nu, rng);
        let z: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let s = gamma.sqrt();
        let draw = (0..d)
            .map(|i| p.mu[i] + s * l.row(i)[..=i].iter().zip(&z).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        out.push(draw);
    }
    Ok(out)
}
