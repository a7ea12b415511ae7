//! Compares the reverse-mode gradient of the full objective with central
//! finite differences on a small network under fixed dropout masks.

use stfseb::network::{sample_masks, DropoutMask, NetSpec, ParamVector};
use stfseb::numerics::{Matrix, Rng};
use stfseb::objective::{Batch, LossPath, Objective, PriorConfig};

fn main() -> stfseb::Result<()> {
    let spec = NetSpec::new(vec![2, 8, 4, 2], 0.3)?;
    let prior = PriorConfig {
        rho: 0.3,
        mc_samples: 4,
        context_points: 8,
        ..PriorConfig::default()
    };
    let mut rng = Rng::new(9);
    let theta = ParamVector::init(&spec, &mut rng);
    let extractor = ParamVector::init(&spec, &mut rng);
    let x = Matrix::from_vec(16, 2, (0..32).map(|_| rng.uniform()).collect())?;
    let y: Vec<usize> = (0..16).map(|_| rng.below(2)).collect();
    let ctx = Matrix::from_vec(8, 2, (0..16).map(|_| rng.uniform()).collect())?;
    let masks = sample_masks(&spec, &rng, prior.mc_samples);
    let refs: Vec<Option<&DropoutMask>> = masks.iter().map(Some).collect();
    let batch = Batch {
        inputs: &x,
        labels: &y,
    };

    for path in [LossPath::StudentT, LossPath::Gaussian, LossPath::WeightDecay] {
        let obj = Objective::new(&spec, &prior, &extractor, path)?;
        let (loss, g) = obj.evaluate_with_masks(batch, Some(&ctx), &theta, &refs, true)?;
        let g = g.expect("gradient requested");
        let h = 1e-5;
        let mut worst = 0.0f64;
        for (i, &gi) in g.iter().enumerate() {
            let mut p = theta.clone();
            p.as_mut_slice()[i] += h;
            let up = obj.evaluate_with_masks(batch, Some(&ctx), &p, &refs, false)?.0.total;
            p.as_mut_slice()[i] -= 2.0 * h;
            let down = obj.evaluate_with_masks(batch, Some(&ctx), &p, &refs, false)?.0.total;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - gi).abs() / fd.abs().max(gi.abs()).max(1e-8));
        }
        println!(
            "{path:?}: objective {:.5} (data {:.5}, functional {:.5}, weights {:.5}); worst relative error over {} coordinates {worst:.2e}",
            loss.total,
            loss.data_ll,
            loss.func_penalty,
            loss.weight_penalty,
            theta.len()
        );
    }
    Ok(())
}
