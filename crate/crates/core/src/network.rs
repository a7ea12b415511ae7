//! Dense ReLU network with MC-dropout masks.
//!
//! Parameters live in one flat vector θ. Layer `l` owns a weight block of
//! shape `n_in × n_out` (row-major, so activations multiply on the left)
//! followed by its `n_out` biases. Dropout is inverted: kept units are
//! scaled by `1/(1−ρ)` so the maskless pass is the expected-value pass.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{Matrix, Rng};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    /// No nonlinearity; used to check dropout unbiasedness on linear nets.
    Linear,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Linear => v,
        }
    }
}

/// Architecture and dropout placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    /// Input width, hidden widths, then the number of outputs.
    pub layer_widths: Vec<usize>,
    pub dropout_rate: f64,
    /// Indices of hidden layers whose activations are dropped out.
    pub dropout_layers: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl NetSpec {
    /// Dropout after every hidden layer.
    pub fn new(layer_widths: Vec<usize>, dropout_rate: f64) -> Result<Self> {
        let hidden = layer_widths.len().saturating_sub(2);
        let spec = NetSpec {
            layer_widths,
            dropout_rate,
            dropout_layers: (0..hidden).collect(),
            activation: Activation::Relu,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::Config("network needs at least input and output widths".into()));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        let hidden = self.num_layers() - 1;
        if let Some(&l) = self.dropout_layers.iter().find(|&&l| l >= hidden) {
            return Err(Error::Config(format!(
                "dropout layer {l} is not a hidden layer (network has {hidden})"
            )));
        }
        Ok(())
    }

    /// Number of affine layers.
    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated")
    }

    /// Width of the penultimate layer, i.e. the feature dimension.
    pub fn feature_dim(&self) -> usize {
        self.layer_widths[self.layer_widths.len() - 2]
    }

    fn has_dropout(&self, layer: usize) -> bool {
        self.dropout_rate > 0.0 && self.dropout_layers.contains(&layer)
    }

    pub fn layout(&self) -> Vec<LayerLayout> {
        let mut offset = 0;
        self.layer_widths
            .windows(2)
            .map(|w| {
                let l = LayerLayout {
                    weight_offset: offset,
                    bias_offset: offset + w[0] * w[1],
                    n_in: w[0],
                    n_out: w[1],
                };
                offset += w[0] * w[1] + w[1];
                l
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layer_widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub weight_offset: usize,
    pub bias_offset: usize,
    pub n_in: usize,
    pub n_out: usize,
}

/// Flat parameter vector θ together with its per-layer layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    theta: Vec<f64>,
    layout: Vec<LayerLayout>,
}

impl ParamVector {
    pub fn from_vec(spec: &NetSpec, theta: Vec<f64>) -> Result<Self> {
        check_dim("parameter vector length", spec.num_params(), theta.len())?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("parameters must be finite".into()));
        }
        Ok(ParamVector {
            theta,
            layout: spec.layout(),
        })
    }

    pub fn zeros(spec: &NetSpec) -> Self {
        ParamVector {
            theta: vec![0.0; spec.num_params()],
            layout: spec.layout(),
        }
    }

    /// Fan-in scaled uniform initialisation, `U(−1/√n_in, 1/√n_in)`, for
    /// weights and biases alike.
    pub fn init(spec: &NetSpec, rng: &mut Rng) -> Self {
        let mut p = ParamVector::zeros(spec);
        for l in p.layout.clone() {
            let bound = 1.0 / (l.n_in as f64).sqrt();
            let end = l.bias_offset + l.n_out;
            for v in &mut p.theta[l.weight_offset..end] {
                *v = bound * (2.0 * rng.uniform() - 1.0);
            }
        }
        p
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn layout(&self) -> &[LayerLayout] {
        &self.layout
    }

    /// Index ranges of all weight blocks (biases excluded).
    pub fn weight_ranges(&self) -> Vec<std::ops::Range<usize>> {
        self.layout
            .iter()
            .map(|l| l.weight_offset..l.bias_offset)
            .collect()
    }

    fn weight(&self, l: &LayerLayout) -> &[f64] {
        &self.theta[l.weight_offset..l.bias_offset]
    }

    fn bias(&self, l: &LayerLayout) -> &[f64] {
        &self.theta[l.bias_offset..l.bias_offset + l.n_out]
    }
}

/// Keep-bits for every dropout layer of one stochastic pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    /// Indexed by hidden layer; `None` where no dropout applies.
    keep: Vec<Option<Vec<bool>>>,
    scale: f64,
}

impl DropoutMask {
    /// Mask that keeps every unit (still scaled by `1/(1−ρ)`).
    pub fn all_kept(spec: &NetSpec) -> Self {
        let keep = (0..spec.num_layers() - 1)
            .map(|l| spec.has_dropout(l).then(|| vec![true; spec.layer_widths[l + 1]]))
            .collect();
        DropoutMask {
            keep,
            scale: 1.0 / (1.0 - spec.dropout_rate),
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn keep_bits(&self, layer: usize) -> Option<&[bool]> {
        self.keep.get(layer).and_then(|k| k.as_deref())
    }

    /// All keep-bits, layer by layer.
    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        self.keep.iter().flatten().flatten().copied()
    }

    fn column_scale(&self, layer: usize) -> Option<Vec<f64>> {
        self.keep_bits(layer).map(|bits| {
            bits.iter()
                .map(|&k| if k { self.scale } else { 0.0 })
                .collect()
        })
    }
}

/// Draws i.i.d. keep-bits with keep probability `1 − ρ`.
pub fn sample_mask(spec: &NetSpec, rng: &mut Rng) -> DropoutMask {
    let keep_p = 1.0 - spec.dropout_rate;
    let keep = (0..spec.num_layers() - 1)
        .map(|l| {
            spec.has_dropout(l).then(|| {
                (0..spec.layer_widths[l + 1])
                    .map(|_| rng.uniform() < keep_p)
                    .collect()
            })
        })
        .collect();
    DropoutMask {
        keep,
        scale: 1.0 / (1.0 - spec.dropout_rate),
    }
}

/// `S` masks, mask `s` drawn from the substream `("mask", s)` of `rng`.
pub fn sample_masks(spec: &NetSpec, rng: &Rng, count: usize) -> Vec<DropoutMask> {
    (0..count)
        .map(|s| sample_mask(spec, &mut rng.substream_indexed("mask", s as u64)))
        .collect()
}

fn affine(x: &Matrix, p: &ParamVector, l: &LayerLayout) -> Result<Matrix> {
    let w = Matrix::from_vec(l.n_in, l.n_out, p.weight(l).to_vec())?;
    let mut z = x.matmul(&w)?;
    let b = p.bias(l);
    for i in 0..z.rows() {
        z.row_mut(i).iter_mut().zip(b).for_each(|(v, bb)| *v += bb);
    }
    Ok(z)
}

fn check_input(x: &Matrix, spec: &NetSpec, p: &ParamVector) -> Result<()> {
    check_dim("network input width", spec.input_dim(), x.cols())?;
    check_dim("parameter vector length", spec.num_params(), p.len())
}

/// Hidden activations up to and including hidden layer `upto`, with an
/// optional mask applied after each dropout layer.
fn hidden_pass(
    x: &Matrix,
    spec: &NetSpec,
    p: &ParamVector,
    mask: Option<&DropoutMask>,
    upto: usize,
) -> Result<Matrix> {
    let mut h = x.clone();
    for (idx, l) in p.layout.iter().enumerate().take(upto + 1) {
        h = affine(&h, p, l)?;
        h.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = spec.activation.apply(*v));
        if let Some(scale) = mask.and_then(|m| m.column_scale(idx)) {
            for i in 0..h.rows() {
                h.row_mut(i).iter_mut().zip(&scale).for_each(|(v, s)| *v *= s);
            }
        }
    }
    Ok(h)
}

/// Logits for a batch (`B × L`). `mask = None` is the deterministic pass.
pub fn forward(x: &Matrix, spec: &NetSpec, p: &ParamVector, mask: Option<&DropoutMask>) -> Result<Matrix> {
    check_input(x, spec, p)?;
    let n = spec.num_layers();
    let out = if n == 1 {
        affine(x, p, &p.layout[0])?
    } else {
        let h = hidden_pass(x, spec, p, mask, n - 2)?;
        affine(&h, p, &p.layout[n - 1])?
    };
    if !out.all_finite() {
        return Err(Error::Divergence("non-finite logits".into()));
    }
    Ok(out)
}

/// Penultimate activations with dropout off. For a network without hidden
/// layers the features are the inputs themselves.
pub fn features(x: &Matrix, spec: &NetSpec, p0: &ParamVector) -> Result<Matrix> {
    check_input(x, spec, p0)?;
    let n = spec.num_layers();
    if n == 1 {
        return Ok(x.clone());
    }
    let h = hidden_pass(x, spec, p0, None, n - 2)?;
    if !h.all_finite() {
        return Err(Error::Divergence("non-finite features".into()));
    }
    Ok(h)
}

/// Records the network on a tape for several masks at once.
///
/// Layers before the first dropout point do not depend on the mask, so they
/// are recorded once and shared by every pass.
pub fn forward_on_tape(
    tape: &mut Tape<'_>,
    input: Var,
    spec: &NetSpec,
    p: &ParamVector,
    masks: &[Option<&DropoutMask>],
) -> Result<Vec<Var>> {
    let layout = p.layout();
    let n = spec.num_layers();
    let mut weights = Vec::with_capacity(n);
    for l in layout {
        let w = tape.param(l.weight_offset, l.n_in, l.n_out)?;
        let b = tape.param(l.bias_offset, 1, l.n_out)?;
        weights.push((w, b));
    }
    let layer = |tape: &mut Tape<'_>, h: Var, idx: usize| -> Result<Var> {
        let (w, b) = weights[idx];
        let z = tape.matmul(h, w)?;
        let z = tape.add_row_bias(z, b)?;
        Ok(if idx + 1 < n && spec.activation == Activation::Relu {
            tape.relu(z)
        } else {
            z
        })
    };

    let first_dropout = (0..n - 1).find(|&l| spec.has_dropout(l));
    let shared_upto = first_dropout.unwrap_or(n - 1);
    let mut trunk = input;
    for idx in 0..=shared_upto {
        trunk = layer(tape, trunk, idx)?;
    }
    if first_dropout.is_none() {
        return Ok(vec![trunk; masks.len()]);
    }

    let mut outs = Vec::with_capacity(masks.len());
    for mask in masks {
        let mut h = trunk;
        for idx in shared_upto..n {
            if idx > shared_upto {
                h = layer(tape, h, idx)?;
            }
            if let Some(scale) = mask.and_then(|m| m.column_scale(idx)) {
                h = tape.scale_cols(h, Rc::new(scale))?;
            }
        }
        outs.push(h);
    }
    Ok(outs)
}

/// Value and exact gradient of a scalar loss of θ.
pub fn grad<F>(p: &ParamVector, loss_fn: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape<'_>) -> Result<Var>,
{
    crate::tape::grad(p.as_slice(), loss_fn)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_232(rate: f64) -> NetSpec {
        NetSpec::new(vec![2, 3, 2], rate).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(NetSpec::new(vec![3], 0.0).is_err());
        assert!(NetSpec::new(vec![2, 0, 2], 0.0).is_err());
        assert!(NetSpec::new(vec![2, 3, 2], 1.0).is_err());
        let mut s = spec_232(0.5);
        s.dropout_layers = vec![1];
        assert!(s.validate().is_err());
        assert_eq!(spec_232(0.0).num_params(), 2 * 3 + 3 + 3 * 2 + 2);
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let spec = NetSpec::new(vec![3, 5, 4, 2], 0.2).unwrap();
        let p = ParamVector::zeros(&spec);
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![3.0, 0.0, 1.0]]);
        let out = forward(&x, &spec, &p, None).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_affine_layer_by_hand() {
        let spec = NetSpec::new(vec![2, 2], 0.0).unwrap();
        // W = [[1,2],[3,4]] (n_in x n_out), b = [0.5, -1]
        let p = ParamVector::from_vec(&spec, vec![1.0, 2.0, 3.0, 4.0, 0.5, -1.0]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]);
        let out = forward(&x, &spec, &p, None).unwrap();
        assert_eq!(out.row(0), &[1.0 + 6.0 + 0.5, 2.0 + 8.0 - 1.0]);
    }

    /// Explicit-loop forward for a 2-3-2 ReLU net with a mask on the hidden
    /// layer.
    fn loop_oracle(x: &[f64], theta: &[f64], keep: &[bool], scale: f64) -> [f64; 2] {
        let mut h = [0.0; 3];
        for j in 0..3 {
            let mut s = theta[6 + j];
            for i in 0..2 {
                s += x[i] * theta[i * 3 + j];
            }
            h[j] = if s > 0.0 { s } else { 0.0 };
            h[j] *= if keep[j] { scale } else { 0.0 };
        }
        let mut out = [0.0; 2];
        for k in 0..2 {
            let mut s = theta[9 + 6 + k];
            for j in 0..3 {
                s += h[j] * theta[9 + j * 2 + k];
            }
            out[k] = s;
        }
        out
    }

    #[test]
    fn masked_pass_matches_loop_oracle() {
        let spec = spec_232(0.5);
        let mut rng = Rng::new(3);
        let p = ParamVector::init(&spec, &mut rng);
        let x = [0.7, -0.4];
        let xm = Matrix::from_rows(&[x.to_vec()]);

        let all = DropoutMask::all_kept(&spec);
        let out = forward(&xm, &spec, &p, Some(&all)).unwrap();
        let expected = loop_oracle(&x, p.as_slice(), &[true; 3], 2.0);
        for k in 0..2 {
            assert!((out[(0, k)] - expected[k]).abs() < 1e-14);
        }

        let mask = sample_mask(&spec, &mut rng);
        let bits: Vec<bool> = mask.bits().collect();
        let out = forward(&xm, &spec, &p, Some(&mask)).unwrap();
        let expected = loop_oracle(&x, p.as_slice(), &bits, 2.0);
        for k in 0..2 {
            assert!((out[(0, k)] - expected[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_rate_mask_is_identity() {
        let spec = NetSpec::new(vec![2, 4, 4, 3], 0.0).unwrap();
        let mut rng = Rng::new(5);
        let p = ParamVector::init(&spec, &mut rng);
        let x = Matrix::from_rows(&[vec![0.1, 0.9], vec![0.5, 0.5]]);
        let mask = sample_mask(&spec, &mut rng);
        assert!(mask.bits().all(|b| b));
        assert_eq!(
            forward(&x, &spec, &p, Some(&mask)).unwrap(),
            forward(&x, &spec, &p, None).unwrap()
        );
    }

    #[test]
    fn features_match_truncated_network() {
        let spec = NetSpec::new(vec![3, 6, 5, 2], 0.3).unwrap();
        let mut rng = Rng::new(8);
        let p = ParamVector::init(&spec, &mut rng);
        let x = Matrix::from_vec(4, 3, (0..12).map(|_| rng.uniform()).collect()).unwrap();
        let feats = features(&x, &spec, &p).unwrap();

        // The same parameters minus the last layer, run as a standalone net
        // whose final layer is followed by ReLU.
        let trunc = NetSpec::new(vec![3, 6, 5], 0.0).unwrap();
        let cut = trunc.num_params();
        let tp = ParamVector::from_vec(&trunc, p.as_slice()[..cut].to_vec()).unwrap();
        let mut expected = forward(&x, &trunc, &tp, None).unwrap();
        expected.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        assert_eq!(feats, expected);
    }

    #[test]
    fn features_by_hand_and_zero() {
        let spec = NetSpec::new(vec![2, 2, 1], 0.0).unwrap();
        let p0 = ParamVector::zeros(&spec);
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]);
        assert!(features(&x, &spec, &p0).unwrap().as_slice().iter().all(|&v| v == 0.0));

        // W1 = [[1,-1],[0.5,-2]], b1 = [0, 1]
        let theta = vec![1.0, -1.0, 0.5, -2.0, 0.0, 1.0, 0.3, 0.3, 0.0];
        let p = ParamVector::from_vec(&spec, theta).unwrap();
        let f = features(&x, &spec, &p).unwrap();
        assert_eq!(f.row(0), &[2.0, 0.0]);
    }

    #[test]
    fn mask_statistics_and_determinism() {
        let spec = NetSpec::new(vec![1, 100_000, 1], 0.5).unwrap();
        let m = sample_mask(&spec, &mut Rng::new(1));
        let kept = m.bits().filter(|&b| b).count() as f64 / 100_000.0;
        assert!((kept - 0.5).abs() < 0.01, "{kept}");
        assert_eq!(m, sample_mask(&spec, &mut Rng::new(1)));
    }

    #[test]
    fn inverted_dropout_is_unbiased_on_linear_nets() {
        let mut spec = NetSpec::new(vec![2, 8, 2], 0.5).unwrap();
        spec.activation = Activation::Linear;
        let mut rng = Rng::new(12);
        let p = ParamVector::init(&spec, &mut rng);
        let x = Matrix::from_rows(&[vec![0.3, 0.8]]);
        let exact = forward(&x, &spec, &p, None).unwrap();
        let n = 10_000;
        let mut mean = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let m = sample_mask(&spec, &mut rng);
            let out = forward(&x, &spec, &p, Some(&m)).unwrap();
            for k in 0..2 {
                mean[k] += out[(0, k)] / n as f64;
                sq[k] += out[(0, k)].powi(2) / n as f64;
            }
        }
        for k in 0..2 {
            let se = ((sq[k] - mean[k] * mean[k]) / n as f64).sqrt();
            assert!((mean[k] - exact[(0, k)]).abs() < 4.0 * se + 1e-12, "k={k}");
        }
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let spec = NetSpec::new(vec![3, 6, 5, 2], 0.4).unwrap();
        let mut rng = Rng::new(9);
        let p = ParamVector::init(&spec, &mut rng);
        let x = Matrix::from_vec(5, 3, (0..15).map(|_| rng.uniform()).collect()).unwrap();
        let masks = sample_masks(&spec, &rng, 3);
        let mut tape = Tape::new(p.as_slice());
        let input = tape.constant(x.clone());
        let refs: Vec<Option<&DropoutMask>> = masks.iter().map(Some).chain([None]).collect();
        let outs = forward_on_tape(&mut tape, input, &spec, &p, &refs).unwrap();
        for (o, m) in outs.iter().zip(&refs) {
            let plain = forward(&x, &spec, &p, *m).unwrap();
            for (a, b) in tape.value(*o).as_slice().iter().zip(plain.as_slice()) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn input_width_is_checked() {
        let spec = spec_232(0.0);
        let p = ParamVector::zeros(&spec);
        let x = Matrix::zeros(1, 3);
        assert!(forward(&x, &spec, &p, None).is_err());
        assert!(ParamVector::from_vec(&spec, vec![0.0; 3]).is_err());
    }
}
