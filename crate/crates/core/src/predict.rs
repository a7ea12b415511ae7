//! Posterior predictive by averaging softmax outputs over Ξ dropout passes,
//! plus the evaluation metrics (ACC, NLL, ECE, AUROC over MSP) and the
//! rotation-shift protocol.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::network::{forward, sample_masks, NetSpec, ParamVector};
use crate::numerics::{Matrix, Rng};
use crate::tape::log_sum_exp;

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;
pub const DEFAULT_ECE_BINS: usize = 10;

/// A trained network: architecture plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: NetSpec,
    pub params: ParamVector,
}

impl Model {
    pub fn new(spec: NetSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        check_dim("model parameters", spec.num_params(), params.len())?;
        Ok(Model { spec, params })
    }

    pub fn predict(&self, x: &Matrix, xi: usize, rng: &Rng) -> Result<PredictiveDist> {
        predict(x, &self.params, &self.spec, xi, rng)
    }
}

/// MC-averaged class probabilities, one simplex row per input.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDist {
    probs: Matrix,
}

impl PredictiveDist {
    /// Errors unless every row is a probability vector (sum within 1e-9).
    pub fn new(probs: Matrix) -> Result<Self> {
        for i in 0..probs.rows() {
            let row = probs.row(i);
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Domain(format!("row {i} has entries outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!("row {i} sums to {s}")));
            }
        }
        Ok(PredictiveDist { probs })
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.rows() == 0
    }

    /// Maximum softmax probability of each row.
    pub fn msp(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.probs.row(i).iter().copied().fold(0.0, f64::max))
            .collect()
    }

    /// Argmax of each row, ties to the lowest index.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.len())
            .map(|i| {
                let row = self.probs.row(i);
                let mut best = 0;
                for (k, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

fn softmax_rows_into(logits: &Matrix, acc: &mut Matrix, weight: f64) {
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let lse = log_sum_exp(row);
        for (a, &z) in acc.row_mut(i).iter_mut().zip(row) {
            *a += weight * (z - lse).exp();
        }
    }
}

/// Mean of `xi` softmax passes with dropout masks drawn from `rng`'s mask
/// substreams. With a zero dropout rate a single deterministic pass is made.
pub fn predict(x: &Matrix, p: &ParamVector, spec: &NetSpec, xi: usize, rng: &Rng) -> Result<PredictiveDist> {
    if xi == 0 {
        return Err(Error::Domain("predictive needs at least one pass".into()));
    }
    let mut probs = Matrix::zeros(x.rows(), spec.output_dim());
    if spec.dropout_rate == 0.0 {
        softmax_rows_into(&forward(x, spec, p, None)?, &mut probs, 1.0);
    } else {
        let w = 1.0 / xi as f64;
        for mask in sample_masks(spec, rng, xi) {
            softmax_rows_into(&forward(x, spec, p, Some(&mask))?, &mut probs, w);
        }
    }
    PredictiveDist::new(probs)
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(pred: &PredictiveDist, labels: &[usize]) -> Result<f64> {
    check_dim("labels per prediction", pred.len(), labels.len())?;
    nonempty(pred)?;
    let hits = pred.argmax().iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

fn nonempty(pred: &PredictiveDist) -> Result<()> {
    if pred.is_empty() {
        Err(Error::Domain("metrics need at least one prediction".into()))
    } else {
        Ok(())
    }
}

/// Mean negative log-probability of the labels.
pub fn nll(pred: &PredictiveDist, labels: &[usize]) -> Result<f64> {
    check_dim("labels per prediction", pred.len(), labels.len())?;
    nonempty(pred)?;
    let mut s = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let p = *pred
            .probs
            .row(i)
            .get(y)
            .ok_or_else(|| Error::Domain(format!("label {y} out of range")))?;
        s -= p.max(PROB_FLOOR).ln();
    }
    Ok(s / labels.len() as f64)
}

/// Expected calibration error over `bins` equal-width confidence bins.
pub fn ece(pred: &PredictiveDist, labels: &[usize], bins: usize) -> Result<f64> {
    check_dim("labels per prediction", pred.len(), labels.len())?;
    nonempty(pred)?;
    if bins == 0 {
        return Err(Error::Domain("ECE needs at least one bin".into()));
    }
    let mut count = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    let mut correct = vec![0usize; bins];
    for ((c, y_hat), &y) in pred.msp().into_iter().zip(pred.argmax()).zip(labels) {
        let b = ((c * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        conf[b] += c;
        correct[b] += usize::from(y_hat == y);
    }
    let n = labels.len() as f64;
    let mut e = 0.0;
    for b in 0..bins {
        if count[b] > 0 {
            let nb = count[b] as f64;
            e += (nb / n) * (correct[b] as f64 / nb - conf[b] / nb).abs();
        }
    }
    Ok(e)
}

/// Probability that an in-distribution score beats an OOD score, ties
/// counting one half.
pub fn auroc(scores_in: &[f64], scores_out: &[f64]) -> Result<f64> {
    if scores_in.is_empty() || scores_out.is_empty() {
        return Err(Error::Domain("AUROC needs nonempty score lists".into()));
    }
    if scores_in.iter().chain(scores_out).any(|s| s.is_nan()) {
        return Err(Error::Domain("AUROC scores must not be NaN".into()));
    }
    let mut out = scores_out.to_vec();
    out.sort_by(f64::total_cmp);
    // twice the Mann-Whitney U, kept integral
    let mut twice_u: u128 = 0;
    for &s in scores_in {
        let below = out.partition_point(|&o| o < s);
        let not_above = out.partition_point(|&o| o <= s);
        twice_u += 2 * below as u128 + (not_above - below) as u128;
    }
    let pairs = 2 * scores_in.len() as u128 * scores_out.len() as u128;
    Ok(twice_u as f64 / pairs as f64)
}

/// ACC, NLL and ECE of one prediction; AUROC is filled in by OOD runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub nll: f64,
    pub ece: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auroc: Option<f64>,
}

pub fn evaluate(pred: &PredictiveDist, labels: &[usize], bins: usize) -> Result<MetricsReport> {
    Ok(MetricsReport {
        acc: accuracy(pred, labels)?,
        nll: nll(pred, labels)?,
        ece: ece(pred, labels, bins)?,
        auroc: None,
    })
}

/// Rotates a row-major `height × width` image by `angle` degrees
/// (counter-clockwise as displayed) about its centre with bilinear
/// interpolation. Pixels sampled from outside the frame read as 0 and the
/// result is clipped to `[0, 1]`.
pub fn rotate(image: &[f64], height: usize, width: usize, angle: f64) -> Vec<f64> {
    assert_eq!(image.len(), height * width, "image size");
    if angle == 0.0 {
        return image.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    }
    let (s, c) = angle.to_radians().sin_cos();
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let pixel = |r: isize, col: isize| -> f64 {
        if r < 0 || col < 0 || r as usize >= height || col as usize >= width {
            0.0
        } else {
            image[r as usize * width + col as usize]
        }
    };
    let mut out = vec![0.0; image.len()];
    for r in 0..height {
        for col in 0..width {
            let dx = col as f64 - cx;
            let dy_up = cy - r as f64;
            let sx = cx + c * dx + s * dy_up;
            let sy = cy - (-s * dx + c * dy_up);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = (1.0 - fy) * ((1.0 - fx) * pixel(y0, x0) + fx * pixel(y0, x0 + 1))
                + fy * ((1.0 - fx) * pixel(y0 + 1, x0) + fx * pixel(y0 + 1, x0 + 1));
            out[r * width + col] = v.clamp(0.0, 1.0);
        }
    }
    out
}

/// How inputs are rotated for the shift protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RotationMode {
    /// Flattened square-or-rectangular grey images.
    Image { height: usize, width: usize },
    /// Two-dimensional points rotated about `(0.5, 0.5)`.
    Points,
}

/// Rotated copy of every input in `d`.
pub fn rotate_dataset(d: &Dataset, angle: f64, mode: RotationMode) -> Result<Dataset> {
    let x = d.inputs();
    let mut out = Matrix::zeros(x.rows(), x.cols());
    match mode {
        RotationMode::Image { height, width } => {
            check_dim("image pixels", height * width, x.cols())?;
            for i in 0..x.rows() {
                out.row_mut(i).copy_from_slice(&rotate(x.row(i), height, width, angle));
            }
        }
        RotationMode::Points => {
            check_dim("point rotation input width", 2, x.cols())?;
            let (s, c) = angle.to_radians().sin_cos();
            for i in 0..x.rows() {
                let (px, py) = (x[(i, 0)] - 0.5, x[(i, 1)] - 0.5);
                out.row_mut(i).copy_from_slice(&[0.5 + c * px - s * py, 0.5 + s * px + c * py]);
            }
        }
    }
    d.with_inputs(out)
}

/// One evaluated shift angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub angle: f64,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

/// Evaluates `model` on rotated copies of `test`. Every angle reuses the
/// same dropout masks.
pub fn shift_eval(
    model: &Model,
    test: &Dataset,
    angles: &[f64],
    mode: RotationMode,
    xi: usize,
    bins: usize,
    rng: &Rng,
) -> Result<Vec<ShiftRow>> {
    angles
        .iter()
        .map(|&angle| {
            if !angle.is_finite() {
                return Err(Error::Config(format!("rotation angle {angle} is not finite")));
            }
            let rotated = rotate_dataset(test, angle, mode)?;
            let pred = model.predict(rotated.inputs(), xi, rng)?;
            Ok(ShiftRow {
                angle,
                metrics: evaluate(&pred, test.labels(), bins)?,
            })
        })
        .collect()
}
