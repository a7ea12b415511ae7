//! Builds the function-space prior covariance `τ₁ H Hᵀ + τ₂ I` from a
//! randomly initialised extractor and evaluates the functional penalty of
//! a network's outputs at the context points.

use stfseb::data::{make_two_moons, uniform_context};
use stfseb::kernel::{build_kernel, mahalanobis_sq, KernelConfig};
use stfseb::network::{features, forward, NetSpec, ParamVector};
use stfseb::numerics::{cholesky, log_det, Rng};
use stfseb::objective::{functional_penalty, gaussian_functional_penalty};

fn main() -> stfseb::Result<()> {
    let spec = NetSpec::new(vec![2, 32, 32, 2], 0.1)?;
    let mut rng = Rng::new(5);
    let extractor = ParamVector::init(&spec, &mut rng);
    let theta = ParamVector::init(&spec, &mut rng);

    let moons = make_two_moons(16, 0.1, &mut rng)?;
    let ctx = uniform_context(16, 2, &mut rng)?;
    for (name, x) in [("on-data", moons.inputs()), ("uniform", ctx.inputs())] {
        let h = features(x, &spec, &extractor)?;
        let k = build_kernel(&h, &KernelConfig::new(1.0, 1.0)?)?;
        let f = cholesky(&k, 0.0)?;
        let out = forward(x, &spec, &theta, None)?;
        println!("{name} context: {} points, {} features", h.rows(), h.cols());
        println!("  log det K = {:.4}, jitter = {:e}", log_det(&f), f.jitter_used());
        println!("  c(f_0, K) = {:.4}", mahalanobis_sq(&out.column(0), &f)?);
        for nu in [2.1, 3.0, 20.0] {
            println!("  penalty nu = {nu:>4}: {:.4}", functional_penalty(&out, &f, nu)?);
        }
        println!("  penalty Gaussian: {:.4}", gaussian_functional_penalty(&out, &f)?);
    }
    Ok(())
}
