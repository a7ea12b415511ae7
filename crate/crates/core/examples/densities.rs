//! Student's t densities and the Gaussian scale mixture sampler.
//!
//! Prints the univariate t next to the normal for several degrees of
//! freedom, then draws from a bivariate t with a fixed covariance and
//! compares the sample covariance with it.

use stfseb::distributions::{gaussian_log_pdf, mvt_log_pdf, sample_gsm_path, st_log_pdf, MvtParams, TDistParams};
use stfseb::numerics::{cholesky, Matrix, Rng, SymMatrix};

fn main() -> stfseb::Result<()> {
    println!("log-density at x = 4 (mu = 0, sigma = 1)");
    for nu in [1.0, 2.1, 3.0, 10.0, 1e6] {
        let p = TDistParams::new(nu, 0.0, 1.0)?;
        println!("  nu = {nu:>9}: {:.6}", st_log_pdf(4.0, &p));
    }
    let f1 = cholesky(&SymMatrix::identity(1), 0.0)?;
    println!("  normal      : {:.6}", gaussian_log_pdf(&[4.0], &[0.0], &f1)?);

    let cov = SymMatrix::new(Matrix::from_rows(&[vec![1.0, 0.6], vec![0.6, 2.0]]))?;
    let f = cholesky(&cov, 0.0)?;
    let p = MvtParams::new(5.0, vec![0.0, 0.0], cov)?;
    println!("\nbivariate t (nu = 5), log-density at (1, -1): {:.6}", mvt_log_pdf(&[1.0, -1.0], &p, &f)?);

    let n = 200_000;
    let draws = sample_gsm_path(&p, &mut Rng::new(3), n)?;
    let mut s = [[0.0; 2]; 2];
    for x in &draws {
        for i in 0..2 {
            for j in 0..2 {
                s[i][j] += x[i] * x[j] / n as f64;
            }
        }
    }
    println!("sample covariance of {n} GSM draws (target [[1, 0.6], [0.6, 2]]):");
    println!("  [[{:.3}, {:.3}], [{:.3}, {:.3}]]", s[0][0], s[0][1], s[1][0], s[1][1]);
    Ok(())
}
