//! Empirical functional covariance `K = τ₁ H Hᵀ + τ₂ I` over context
//! features `H`, and the squared Mahalanobis form used by the penalties.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{dot, CholFactor, Matrix, SymMatrix};

/// Variances of the latent linear-model weights (`tau1`) and of the
/// additive noise (`tau2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub tau1: f64,
    pub tau2: f64,
}

impl KernelConfig {
    pub fn new(tau1: f64, tau2: f64) -> Result<Self> {
        let cfg = KernelConfig { tau1, tau2 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau1 > 0.0) || !(self.tau2 > 0.0) {
            return Err(Error::Domain(format!(
                "kernel variances must be positive, got tau1={} tau2={}",
                self.tau1, self.tau2
            )));
        }
        Ok(())
    }
}

/// Builds `τ₁ H Hᵀ + τ₂ I` for an `N_c × F` feature matrix. Only the lower
/// triangle is computed and mirrored, so the result is exactly symmetric.
pub fn build_kernel(features: &Matrix, cfg: &KernelConfig) -> Result<SymMatrix> {
    cfg.validate()?;
    let n = features.rows();
    if n == 0 || features.cols() == 0 {
        return Err(Error::Domain("kernel needs at least one context point and one feature".into()));
    }
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = cfg.tau1 * dot(features.row(i), features.row(j));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += cfg.tau2;
    }
    SymMatrix::new(k)
}

/// `vᵀ (L Lᵀ)⁻¹ v` as `‖L⁻¹ v‖²`.
pub fn mahalanobis_sq(v: &[f64], f: &CholFactor) -> Result<f64> {
    check_dim("mahalanobis_sq", f.dim(), v.len())?;
    let mut y = v.to_vec();
    f.forward_solve_in_place(&mut y)?;
    Ok(y.iter().map(|t| t * t).sum())
}
