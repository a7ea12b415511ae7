//! The minibatch objective (a value to maximise) and its three terms:
//! the MC-averaged data log-likelihood, the functional penalty on context
//! logits, and the θ-prior penalty scaled by `1/M`.
//!
//! Three paths share one recording routine:
//!
//! * [`LossPath::StudentT`]: multivariate-t functional likelihood with
//!   `y_c = 0` and an i.i.d. Student's t weight prior, normalising constants
//!   dropped.
//! * [`LossPath::Gaussian`]: their `ν → ∞` limits, `−½ c(f_l, K)` and
//!   `−ρ θ²/(2Mσ²)`.
//! * [`LossPath::WeightDecay`]: data term plus `−θ²/(2Mσ²)` only, used by
//!   the MAP and plain MC-dropout baselines.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernel::{build_kernel, mahalanobis_sq, KernelConfig};
use crate::network::{features, forward_on_tape, sample_masks, DropoutMask, NetSpec, ParamVector};
use crate::numerics::{cholesky, CholFactor, Matrix, Rng};
use crate::tape::{log_sum_exp, Tape, Var};

/// Prior and Monte-Carlo settings of the objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub nu_theta: f64,
    pub sigma_theta: f64,
    /// Dropout rate multiplying the weight-prior term.
    pub rho: f64,
    pub tau: KernelConfig,
    /// MC dropout samples per training step (S).
    pub mc_samples: usize,
    /// Stochastic passes for the posterior predictive (Ξ).
    pub predictive_samples: usize,
    /// Context points per minibatch (N_c).
    pub context_points: usize,
    /// Minibatches per epoch (M); the trainer overwrites it from the data.
    pub minibatches: usize,
    /// Whether the θ prior also covers biases.
    pub penalise_biases: bool,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            nu_theta: 3.0,
            sigma_theta: 1.0,
            rho: 0.1,
            tau: KernelConfig {
                tau1: 1.0,
                tau2: 1.0,
            },
            mc_samples: 10,
            predictive_samples: 10,
            context_points: 32,
            minibatches: 1,
            penalise_biases: true,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu_theta > 2.0) {
            return Err(Error::Config(format!(
                "prior.nu_theta: nu_theta must exceed 2 (got {})",
                self.nu_theta
            )));
        }
        if !(self.sigma_theta > 0.0) || !self.sigma_theta.is_finite() {
            return Err(Error::Config("prior.sigma_theta: must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config("prior.rho: must lie in [0, 1)".into()));
        }
        self.tau
            .validate()
            .map_err(|e| Error::Config(format!("prior.tau1/tau2: {e}")))?;
        for (name, v) in [
            ("mc_samples", self.mc_samples),
            ("predictive_samples", self.predictive_samples),
            ("context_points", self.context_points),
            ("minibatches", self.minibatches),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("prior.{name}: must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Which penalties the objective uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossPath {
    #[default]
    StudentT,
    Gaussian,
    WeightDecay,
}

/// The three objective terms and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data_ll: f64,
    pub func_penalty: f64,
    pub weight_penalty: f64,
    pub total: f64,
}

/// Labelled minibatch.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub inputs: &'a Matrix,
    pub labels: &'a [usize],
}

/// `Σ_b [z_{b,y_b} − logsumexp(z_b)]`.
pub fn data_log_likelihood(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    check_dim("labels per logit row", logits.rows(), labels.len())?;
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        if y >= row.len() {
            return Err(Error::Domain(format!("label {y} out of range for {} classes", row.len())));
        }
        total += row[y] - log_sum_exp(row);
    }
    Ok(total)
}

fn check_nu(nu: f64) -> Result<()> {
    if nu > 2.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("nu must exceed 2, got {nu}")))
    }
}

/// `−((ν + N_c)/2) Σ_l ln(1 + c(f_l, K)/(ν − 2))` over the columns `f_l` of
/// the `N_c × L` context logits.
pub fn functional_penalty(context_logits: &Matrix, kf: &CholFactor, nu: f64) -> Result<f64> {
    check_nu(nu)?;
    check_dim("context logits vs kernel", kf.dim(), context_logits.rows())?;
    let nc = kf.dim() as f64;
    let mut s = 0.0;
    for l in 0..context_logits.cols() {
        let c = mahalanobis_sq(&context_logits.column(l), kf)?;
        s += (c / (nu - 2.0)).ln_1p();
    }
    Ok(-0.5 * (nu + nc) * s)
}

/// `−½ Σ_l c(f_l, K)`.
pub fn gaussian_functional_penalty(context_logits: &Matrix, kf: &CholFactor) -> Result<f64> {
    check_dim("context logits vs kernel", kf.dim(), context_logits.rows())?;
    let mut s = 0.0;
    for l in 0..context_logits.cols() {
        s += mahalanobis_sq(&context_logits.column(l), kf)?;
    }
    Ok(-0.5 * s)
}

/// `−(ρ(ν + 1)/(2M)) Σ_i ln(1 + θ_i²/(ν σ²))`.
pub fn weight_penalty(theta: &[f64], nu: f64, sigma: f64, rho: f64, m: usize) -> f64 {
    let a = 1.0 / (nu * sigma * sigma);
    let s: f64 = theta.iter().map(|t| (a * t * t).ln_1p()).sum();
    -rho * (nu + 1.0) / (2.0 * m as f64) * s
}

/// `−(ρ/(2M)) Σ_i θ_i²/σ²`.
pub fn gaussian_weight_penalty(theta: &[f64], sigma: f64, rho: f64, m: usize) -> f64 {
    let s: f64 = theta.iter().map(|t| t * t).sum();
    -rho / (2.0 * m as f64) * s / (sigma * sigma)
}

/// Factor of the context kernel built from frozen extractor features.
pub fn context_kernel_factor(
    context: &Matrix,
    spec: &NetSpec,
    extractor: &ParamVector,
    tau: &KernelConfig,
) -> Result<CholFactor> {
    let h = features(context, spec, extractor)?;
    let k = build_kernel(&h, tau)?;
    cholesky(&k, 0.0)
}

/// Scalar tape nodes of one recorded objective.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveVars {
    pub data_ll: Var,
    pub func_penalty: Var,
    pub weight_penalty: Var,
    pub total: Var,
}

/// Everything fixed during one minibatch step except θ and the masks.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub spec: &'a NetSpec,
    pub prior: &'a PriorConfig,
    pub extractor: &'a ParamVector,
    pub path: LossPath,
}

impl<'a> Objective<'a> {
    pub fn new(
        spec: &'a NetSpec,
        prior: &'a PriorConfig,
        extractor: &'a ParamVector,
        path: LossPath,
    ) -> Result<Self> {
        if path != LossPath::Gaussian {
            prior.validate()?;
        } else {
            // nu is irrelevant on the Gaussian path
            PriorConfig {
                nu_theta: 3.0,
                ..prior.clone()
            }
            .validate()?;
        }
        check_dim("extractor parameters", spec.num_params(), extractor.len())?;
        Ok(Objective {
            spec,
            prior,
            extractor,
            path,
        })
    }

    fn uses_context(&self) -> bool {
        self.path != LossPath::WeightDecay
    }

    /// Records the objective on `tape` for the given masks. `kernel` must be
    /// present on the functional paths.
    pub fn record(
        &self,
        tape: &mut Tape<'_>,
        batch: Batch<'_>,
        context: Option<(&Matrix, &CholFactor)>,
        p: &ParamVector,
        masks: &[Option<&DropoutMask>],
    ) -> Result<ObjectiveVars> {
        if masks.is_empty() {
            return Err(Error::Domain("at least one MC sample is required".into()));
        }
        check_dim("batch labels", batch.inputs.rows(), batch.labels.len())?;
        let b = batch.inputs.rows();
        let prior = self.prior;
        let s_inv = 1.0 / masks.len() as f64;
        let m = prior.minibatches as f64;

        let context = if self.uses_context() {
            let (ctx, kf) = context
                .ok_or_else(|| Error::Domain("functional penalty needs context points".into()))?;
            if ctx.rows() == 0 {
                return Err(Error::Domain("context set is empty".into()));
            }
            check_dim("context kernel size", ctx.rows(), kf.dim())?;
            Some((ctx, kf))
        } else {
            None
        };

        let stacked = match context {
            Some((ctx, _)) => batch.inputs.vstack(ctx)?,
            None => batch.inputs.clone(),
        };
        let input = tape.constant(stacked);
        let logits = forward_on_tape(tape, input, self.spec, p, masks)?;
        let labels = Rc::new(batch.labels.to_vec());

        let mut data_terms = Vec::with_capacity(logits.len());
        let mut func_terms = Vec::with_capacity(logits.len());
        for &z in &logits {
            let zb = tape.slice_rows(z, 0, b)?;
            data_terms.push(tape.softmax_log_lik(zb, labels.clone())?);
            if let Some((ctx, kf)) = context {
                let zc = tape.slice_rows(z, b, b + ctx.rows())?;
                let c = tape.mahalanobis_cols(zc, kf)?;
                let term = match self.path {
                    LossPath::StudentT => {
                        let nu = prior.nu_theta;
                        let s = tape.log1p_scaled_sum(c, 1.0 / (nu - 2.0));
                        tape.scale(s, -0.5 * (nu + ctx.rows() as f64))
                    }
                    _ => {
                        let s = tape.sum(c);
                        tape.scale(s, -0.5)
                    }
                };
                func_terms.push(term);
            }
        }
        let data_sum = tape.add_all(&data_terms)?;
        let data_ll = tape.scale(data_sum, s_inv);
        let func_sum = tape.add_all(&func_terms)?;
        let func_penalty = tape.scale(func_sum, s_inv);

        let mut blocks = Vec::new();
        if prior.penalise_biases {
            blocks.push(tape.param(0, 1, p.len())?);
        } else {
            for r in p.weight_ranges() {
                blocks.push(tape.param(r.start, 1, r.len())?);
            }
        }
        let sigma2 = prior.sigma_theta * prior.sigma_theta;
        let mut weight_terms = Vec::with_capacity(blocks.len());
        for block in blocks {
            let t = match self.path {
                LossPath::StudentT => {
                    let nu = prior.nu_theta;
                    let s = tape.log1p_sq_scaled_sum(block, 1.0 / (nu * sigma2));
                    tape.scale(s, -prior.rho * (nu + 1.0) / (2.0 * m))
                }
                LossPath::Gaussian => {
                    let s = tape.sum_sq(block);
                    tape.scale(s, -prior.rho / (2.0 * m * sigma2))
                }
                LossPath::WeightDecay => {
                    let s = tape.sum_sq(block);
                    tape.scale(s, -1.0 / (2.0 * m * sigma2))
                }
            };
            weight_terms.push(t);
        }
        let weight_penalty = tape.add_all(&weight_terms)?;

        let partial = tape.add(data_ll, func_penalty)?;
        let total = tape.add(partial, weight_penalty)?;
        Ok(ObjectiveVars {
            data_ll,
            func_penalty,
            weight_penalty,
            total,
        })
    }

    fn kernel_for(&self, context: Option<&Matrix>) -> Result<Option<CholFactor>> {
        if !self.uses_context() {
            return Ok(None);
        }
        let ctx = context.ok_or_else(|| Error::Domain("context set is empty".into()))?;
        if ctx.rows() == 0 {
            return Err(Error::Domain("context set is empty".into()));
        }
        context_kernel_factor(ctx, self.spec, self.extractor, &self.prior.tau).map(Some)
    }

    /// Evaluates the objective under explicit masks (`None` = no dropout).
    pub fn evaluate_with_masks(
        &self,
        batch: Batch<'_>,
        context: Option<&Matrix>,
        p: &ParamVector,
        masks: &[Option<&DropoutMask>],
        with_grad: bool,
    ) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
        let kf = self.kernel_for(context)?;
        let ctx = match (context, kf.as_ref()) {
            (Some(c), Some(f)) => Some((c, f)),
            _ => None,
        };
        let mut tape = Tape::new(p.as_slice());
        let vars = self.record(&mut tape, batch, ctx, p, masks)?;
        let breakdown = LossBreakdown {
            data_ll: tape.scalar(vars.data_ll),
            func_penalty: tape.scalar(vars.func_penalty),
            weight_penalty: tape.scalar(vars.weight_penalty),
            total: tape.scalar(vars.total),
        };
        if !breakdown.total.is_finite() {
            return Err(Error::Divergence(format!("non-finite objective {breakdown:?}")));
        }
        let g = if with_grad {
            Some(tape.gradient(vars.total)?)
        } else {
            None
        };
        Ok((breakdown, g))
    }

    /// Draws `S` masks from `rng` (substreams `("mask", s)`) and evaluates.
    pub fn evaluate(
        &self,
        batch: Batch<'_>,
        context: Option<&Matrix>,
        p: &ParamVector,
        rng: &Rng,
        with_grad: bool,
    ) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
        let masks = sample_masks(self.spec, rng, self.prior.mc_samples);
        let refs: Vec<Option<&DropoutMask>> = masks.iter().map(Some).collect();
        self.evaluate_with_masks(batch, context, p, &refs, with_grad)
    }
}

/// Student's t objective for one minibatch (value to maximise).
pub fn minibatch_loss(
    batch: Batch<'_>,
    context: &Matrix,
    p: &ParamVector,
    spec: &NetSpec,
    cfg: &PriorConfig,
    extractor: &ParamVector,
    rng: &Rng,
) -> Result<LossBreakdown> {
    Objective::new(spec, cfg, extractor, LossPath::StudentT)?
        .evaluate(batch, Some(context), p, rng, false)
        .map(|(l, _)| l)
}

/// Gaussian-limit objective for one minibatch.
pub fn gaussian_limit_loss(
    batch: Batch<'_>,
    context: &Matrix,
    p: &ParamVector,
    spec: &NetSpec,
    cfg: &PriorConfig,
    extractor: &ParamVector,
    rng: &Rng,
) -> Result<LossBreakdown> {
    Objective::new(spec, cfg, extractor, LossPath::Gaussian)?
        .evaluate(batch, Some(context), p, rng, false)
        .map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{mvt_log_pdf, st_log_pdf, MvtParams, TDistParams};
    use crate::numerics::{ln_gamma, log_det, SymMatrix};

    fn chol(m: &SymMatrix) -> CholFactor {
        cholesky(m, 0.0).unwrap()
    }

    #[test]
    fn data_ll_examples() {
        let z = Matrix::zeros(1, 10);
        assert!((data_log_likelihood(&z, &[3]).unwrap() + 10f64.ln()).abs() < 1e-14);

        let z = Matrix::from_rows(&[vec![0.0, 1e9, 0.0]]);
        assert!(data_log_likelihood(&z, &[1]).unwrap().abs() < 1e-12);

        let mut rng = Rng::new(1);
        let z = Matrix::from_vec(3, 4, (0..12).map(|_| 3.0 * rng.normal()).collect()).unwrap();
        let labels = [2, 0, 3];
        let mut expected = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let denom: f64 = z.row(i).iter().map(|v| v.exp()).sum();
            expected += (z[(i, y)].exp() / denom).ln();
        }
        assert!((data_log_likelihood(&z, &labels).unwrap() - expected).abs() < 1e-10);
        assert!(data_log_likelihood(&z, &[0, 4, 1]).is_err());
    }

    #[test]
    fn functional_penalty_examples() {
        let kf = chol(&SymMatrix::identity(4));
        assert_eq!(functional_penalty(&Matrix::zeros(4, 3), &kf, 3.0).unwrap(), 0.0);

        let kf1 = chol(&SymMatrix::identity(1));
        let v = functional_penalty(&Matrix::from_rows(&[vec![1.0]]), &kf1, 3.0).unwrap();
        assert!((v + 2.0 * 2f64.ln()).abs() < 1e-15);

        let k = SymMatrix::new(Matrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]])).unwrap();
        let kf = chol(&k);
        let one = functional_penalty(&Matrix::from_rows(&[vec![0.4], vec![-1.1]]), &kf, 4.5).unwrap();
        let two = functional_penalty(
            &Matrix::from_rows(&[vec![0.4, 0.4], vec![-1.1, -1.1]]),
            &kf,
            4.5,
        )
        .unwrap();
        assert_eq!(two, 2.0 * one);
        assert!(functional_penalty(&Matrix::zeros(2, 1), &kf, 2.0).is_err());
    }

    #[test]
    fn weight_penalty_examples() {
        assert_eq!(weight_penalty(&[0.0; 5], 3.0, 0.7, 0.5, 4), 0.0);
        let (nu, sigma) = (4.0f64, 0.6f64);
        let t = (nu * sigma * sigma).sqrt();
        let v = weight_penalty(&[t], nu, sigma, 1.0, 1);
        assert!((v + 0.5 * (nu + 1.0) * 2f64.ln()).abs() < 1e-14);
        assert_eq!(weight_penalty(&[1.0, -3.0], 3.0, 1.0, 0.0, 1), 0.0);
        assert!((gaussian_weight_penalty(&[0.8], 0.8, 1.0, 1) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn functional_penalty_gaussian_gap_shrinks_with_nu() {
        let mut rng = Rng::new(4);
        let h = Matrix::from_vec(5, 3, (0..15).map(|_| rng.normal()).collect()).unwrap();
        let kf = chol(&build_kernel(&h, &KernelConfig::new(0.5, 0.3).unwrap()).unwrap());
        let f = Matrix::from_vec(5, 2, (0..10).map(|_| rng.normal()).collect()).unwrap();
        let g = gaussian_functional_penalty(&f, &kf).unwrap();
        let mut prev = f64::INFINITY;
        for &nu in &[1e3, 1e4, 1e5, 1e6] {
            let gap = (functional_penalty(&f, &kf, nu).unwrap() - g).abs();
            assert!(gap < prev, "gap must shrink: {gap} >= {prev}");
            // |gap| ≲ C/ν with C bounded by the problem size
            assert!(gap * nu < 1e3, "gap {gap} at nu {nu}");
            prev = gap;
        }
    }

    #[test]
    fn heavy_tails_penalise_outliers_less() {
        let nc = 8.0;
        let magnitude = |nu: f64, q: f64| 0.5 * (nu + nc) * (q / (nu - 2.0)).ln_1p();

        // c = 100(ν − 2): the outlier sits equally far out in each law's own scale
        let grid = [2.1, 3.0, 5.0, 10.0, 20.0];
        let mags: Vec<f64> = grid.iter().map(|&nu| magnitude(nu, 100.0 * (nu - 2.0))).collect();
        for w in mags.windows(2) {
            assert!(w[0] < w[1], "{mags:?}");
        }

        // Fixed q ≫ ν: increasing once ½ ln(q/(ν−2)) dominates (ν+N_c)/(2(ν−2)).
        let q = 1e4;
        let mags: Vec<f64> = [5.0, 10.0, 20.0, 50.0].iter().map(|&nu| magnitude(nu, q)).collect();
        for w in mags.windows(2) {
            assert!(w[0] < w[1], "{mags:?}");
        }
    }

    fn toy_setup() -> (NetSpec, ParamVector, ParamVector, Matrix, Vec<usize>, Matrix) {
        let spec = NetSpec::new(vec![2, 5, 4, 3], 0.3).unwrap();
        let mut rng = Rng::new(77);
        let p = ParamVector::init(&spec, &mut rng);
        let ext = ParamVector::init(&spec, &mut rng);
        let x = Matrix::from_vec(6, 2, (0..12).map(|_| rng.uniform()).collect()).unwrap();
        let y = vec![0, 1, 2, 1, 0, 2];
        let ctx = Matrix::from_vec(4, 2, (0..8).map(|_| rng.uniform()).collect()).unwrap();
        (spec, p, ext, x, y, ctx)
    }

    #[test]
    fn identical_masks_do_not_change_the_average() {
        let (spec, p, ext, x, y, ctx) = toy_setup();
        let prior = PriorConfig::default();
        let obj = Objective::new(&spec, &prior, &ext, LossPath::StudentT).unwrap();
        let mask = crate::network::sample_mask(&spec, &mut Rng::new(3));
        let batch = Batch { inputs: &x, labels: &y };
        let (one, _) = obj
            .evaluate_with_masks(batch, Some(&ctx), &p, &[Some(&mask)], false)
            .unwrap();
        let (two, _) = obj
            .evaluate_with_masks(batch, Some(&ctx), &p, &[Some(&mask), Some(&mask)], false)
            .unwrap();
        assert_eq!(one.total, two.total);
    }

    #[test]
    fn identity_kernel_reduction() {
        // A zero extractor makes H = 0, so K = τ₂ I = I.
        let (spec, p, _, x, y, ctx) = toy_setup();
        let ext = ParamVector::zeros(&spec);
        let prior = PriorConfig {
            tau: KernelConfig::new(1.0, 1.0).unwrap(),
            ..PriorConfig::default()
        };
        let obj = Objective::new(&spec, &prior, &ext, LossPath::StudentT).unwrap();
        let masks = [None];
        let (l, _) = obj
            .evaluate_with_masks(Batch { inputs: &x, labels: &y }, Some(&ctx), &p, &masks, false)
            .unwrap();
        let fc = crate::network::forward(&ctx, &spec, &p, None).unwrap();
        let nu = prior.nu_theta;
        let nc = ctx.rows() as f64;
        let mut expected = 0.0;
        for lcol in 0..fc.cols() {
            let sq: f64 = fc.column(lcol).iter().map(|v| v * v).sum();
            expected += (sq / (nu - 2.0)).ln_1p();
        }
        expected *= -0.5 * (nu + nc);
        assert!((l.func_penalty - expected).abs() < 1e-12);
    }

    #[test]
    fn breakdown_invariants_and_determinism() {
        let (spec, p, ext, x, y, ctx) = toy_setup();
        let prior = PriorConfig {
            minibatches: 3,
            ..PriorConfig::default()
        };
        let batch = Batch { inputs: &x, labels: &y };
        let a = minibatch_loss(batch, &ctx, &p, &spec, &prior, &ext, &Rng::new(5)).unwrap();
        let b = minibatch_loss(batch, &ctx, &p, &spec, &prior, &ext, &Rng::new(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.func_penalty <= 0.0 && a.weight_penalty <= 0.0);
        assert_eq!(a.total, a.data_ll + a.func_penalty + a.weight_penalty);
        let expected_w = weight_penalty(p.as_slice(), prior.nu_theta, prior.sigma_theta, prior.rho, 3);
        assert!((a.weight_penalty - expected_w).abs() < 1e-12);
    }

    #[test]
    fn large_nu_matches_gaussian_limit() {
        let (spec, p, ext, x, y, ctx) = toy_setup();
        let prior = PriorConfig {
            nu_theta: 1e6,
            ..PriorConfig::default()
        };
        let batch = Batch { inputs: &x, labels: &y };
        let rng = Rng::new(9);
        let st = minibatch_loss(batch, &ctx, &p, &spec, &prior, &ext, &rng).unwrap();
        let ga = gaussian_limit_loss(batch, &ctx, &p, &spec, &prior, &ext, &rng).unwrap();
        assert_eq!(st.data_ll, ga.data_ll);
        assert!((st.func_penalty - ga.func_penalty).abs() <= 1e-3 * ga.func_penalty.abs());
        assert!((st.weight_penalty - ga.weight_penalty).abs() <= 1e-3 * ga.weight_penalty.abs());
    }

    #[test]
    fn rejects_small_nu_and_missing_context() {
        let (spec, p, ext, x, y, _) = toy_setup();
        let prior = PriorConfig {
            nu_theta: 2.0,
            ..PriorConfig::default()
        };
        let err = Objective::new(&spec, &prior, &ext, LossPath::StudentT).unwrap_err();
        assert!(err.to_string().contains("nu_theta must exceed 2"));

        let prior = PriorConfig::default();
        let obj = Objective::new(&spec, &prior, &ext, LossPath::StudentT).unwrap();
        let batch = Batch { inputs: &x, labels: &y };
        assert!(obj.evaluate(batch, None, &p, &Rng::new(1), false).is_err());
        let empty = Matrix::zeros(0, 2);
        assert!(obj.evaluate(batch, Some(&empty), &p, &Rng::new(1), false).is_err());
    }

    #[test]
    fn weight_decay_path_ignores_context() {
        let (spec, p, ext, x, y, _) = toy_setup();
        let prior = PriorConfig::default();
        let obj = Objective::new(&spec, &prior, &ext, LossPath::WeightDecay).unwrap();
        let (l, _) = obj
            .evaluate(Batch { inputs: &x, labels: &y }, None, &p, &Rng::new(1), false)
            .unwrap();
        assert_eq!(l.func_penalty, 0.0);
        let sq: f64 = p.as_slice().iter().map(|t| t * t).sum();
        assert!((l.weight_penalty + sq / 2.0).abs() < 1e-12);
        let zero = ParamVector::zeros(&spec);
        let (l0, _) = obj
            .evaluate(Batch { inputs: &x, labels: &y }, None, &zero, &Rng::new(1), false)
            .unwrap();
        assert_eq!(l0.weight_penalty, 0.0);
    }

    #[test]
    fn bias_exclusion_only_penalises_weights() {
        let (spec, p, ext, x, y, ctx) = toy_setup();
        let prior = PriorConfig {
            penalise_biases: false,
            ..PriorConfig::default()
        };
        let obj = Objective::new(&spec, &prior, &ext, LossPath::StudentT).unwrap();
        let (l, g) = obj
            .evaluate_with_masks(Batch { inputs: &x, labels: &y }, Some(&ctx), &p, &[None], false)
            .unwrap();
        assert!(g.is_none());
        let weights: Vec<f64> = p
            .weight_ranges()
            .into_iter()
            .flat_map(|r| p.as_slice()[r].to_vec())
            .collect();
        let expected = weight_penalty(&weights, prior.nu_theta, prior.sigma_theta, prior.rho, 1);
        assert!((l.weight_penalty - expected).abs() < 1e-12);
    }

    /// The objective with every normalising constant restored has the same
    /// θ-gradient as the constant-free form.
    #[test]
    fn dropped_constants_do_not_change_the_gradient() {
        let (spec, p, ext, x, y, ctx) = toy_setup();
        let prior = PriorConfig {
            minibatches: 2,
            ..PriorConfig::default()
        };
        let obj = Objective::new(&spec, &prior, &ext, LossPath::StudentT).unwrap();
        let masks_owned = sample_masks(&spec, &Rng::new(12), 3);
        let masks: Vec<Option<&DropoutMask>> = masks_owned.iter().map(Some).collect();
        let kf = context_kernel_factor(&ctx, &spec, &ext, &prior.tau).unwrap();
        let batch = Batch { inputs: &x, labels: &y };

        let (_, g_dropped) = crate::tape::grad(p.as_slice(), |t| {
            Ok(obj.record(t, batch, Some((&ctx, &kf)), &p, &masks)?.total)
        })
        .unwrap();

        let nu = prior.nu_theta;
        let nc = ctx.rows() as f64;
        let l = spec.output_dim() as f64;
        let mvt_const = ln_gamma(0.5 * (nu + nc))
            - ln_gamma(0.5 * nu)
            - 0.5 * nc * ((nu - 2.0) * std::f64::consts::PI).ln()
            - 0.5 * log_det(&kf);
        let st_const = ln_gamma(0.5 * (nu + 1.0))
            - ln_gamma(0.5 * nu)
            - 0.5 * (std::f64::consts::PI * nu * prior.sigma_theta.powi(2)).ln();
        let extra = l * mvt_const + prior.rho / prior.minibatches as f64 * p.len() as f64 * st_const;

        // The restored constants are exactly what the full densities add.
        let k = SymMatrix::new(kf.reconstruct()).unwrap();
        let mvt = MvtParams::new(nu, vec![0.0; ctx.rows()], k).unwrap();
        let at_mode = mvt_log_pdf(&vec![0.0; ctx.rows()], &mvt, &kf).unwrap();
        assert!((at_mode - mvt_const).abs() < 1e-10);
        let stp = TDistParams::new(nu, 0.0, prior.sigma_theta).unwrap();
        assert!((st_log_pdf(0.0, &stp) - st_const).abs() < 1e-14);

        let (_, g_full) = crate::tape::grad(p.as_slice(), |t| {
            let vars = obj.record(t, batch, Some((&ctx, &kf)), &p, &masks)?;
            let c = t.constant_scalar(extra);
            t.add(vars.total, c)
        })
        .unwrap();
        for (a, b) in g_dropped.iter().zip(&g_full) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
