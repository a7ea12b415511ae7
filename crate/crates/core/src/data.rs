//! Datasets: IDX images, comma-separated tables, and synthetic generators
//! for two-moons and displaced Gaussian clusters.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use crate::error::{check_dim, Error, Result};
use crate::numerics::{Matrix, Rng};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labelled inputs with `L` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    inputs: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    /// Checks that inputs are finite and labels lie in `[0, num_classes)`.
    pub fn new(name: impl Into<String>, inputs: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        check_dim("dataset labels", inputs.rows(), labels.len())?;
        if !inputs.all_finite() {
            return Err(Error::Domain("dataset inputs must be finite".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Domain(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(Dataset {
            name: name.into(),
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    /// True when every input lies in `[0, 1]`.
    pub fn in_unit_range(&self) -> bool {
        self.inputs.as_slice().iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            inputs: self.inputs.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Same labels with replaced inputs (for example, rotated copies).
    pub fn with_inputs(&self, inputs: Matrix) -> Result<Dataset> {
        check_dim("replacement inputs rows", self.len(), inputs.rows())?;
        Dataset::new(self.name.clone(), inputs, self.labels.clone(), self.num_classes)
    }

    /// `n` distinct rows chosen by `rng`, kept in draw order.
    pub fn seeded_subset(&self, n: usize, rng: &mut Rng) -> Result<Dataset> {
        if n > self.len() {
            return Err(Error::Config(format!(
                "requested a subset of {n} from {} rows of {}",
                self.len(),
                self.name
            )));
        }
        let perm = rng.permutation(self.len());
        Ok(self.subset(&perm[..n]))
    }

    /// Shuffles and holds out `round(frac · N)` rows (at least one when
    /// `frac > 0` and `N ≥ 2`). Returns `(train, holdout)`.
    pub fn split_holdout(&self, frac: f64, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&frac) {
            return Err(Error::Config(format!("holdout fraction must lie in [0, 1), got {frac}")));
        }
        let n = self.len();
        let mut k = (frac * n as f64).round() as usize;
        if frac > 0.0 && n >= 2 {
            k = k.clamp(1, n - 1);
        }
        let perm = rng.permutation(n);
        Ok((self.subset(&perm[k..]), self.subset(&perm[..k])))
    }
}

/// Unlabelled context inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSet {
    inputs: Matrix,
}

impl ContextSet {
    pub fn new(inputs: Matrix) -> Result<Self> {
        if !inputs.all_finite() {
            return Err(Error::Domain("context inputs must be finite".into()));
        }
        Ok(ContextSet { inputs })
    }

    pub fn from_dataset(d: &Dataset) -> Self {
        ContextSet {
            inputs: d.inputs.clone(),
        }
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Errors unless the context shares the training input dimension.
    pub fn check_compatible(&self, train: &Dataset) -> Result<()> {
        check_dim("context input dimension", train.input_dim(), self.input_dim())
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, "truncated header"))
}

fn parse_idx(path: &Path, magic: u32, ndims: usize) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = read_bytes(path)?;
    let got = be_u32(&bytes, 0, path)?;
    if got != magic {
        return Err(Error::format(
            path,
            format!("bad magic 0x{got:08x}, expected 0x{magic:08x}"),
        ));
    }
    let dims = (0..ndims)
        .map(|i| be_u32(&bytes, 4 + 4 * i, path).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndims;
    let expected: usize = dims.iter().product();
    let body = &bytes[header..];
    if body.len() < expected {
        return Err(Error::format(
            path,
            format!("truncated: header promises {expected} bytes, found {}", body.len()),
        ));
    }
    if body.len() > expected {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after {expected} data bytes", body.len() - expected),
        ));
    }
    Ok((dims, body.to_vec()))
}

/// Reads only an IDX image file, returning the flattened `[0, 1]` pixels
/// and the `(height, width)` of each image.
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<(Matrix, (usize, usize))> {
    let (dims, pixels) = parse_idx(path.as_ref(), IDX_IMAGES_MAGIC, 3)?;
    let inputs = Matrix::from_vec(
        dims[0],
        dims[1] * dims[2],
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    )?;
    Ok((inputs, (dims[1], dims[2])))
}

/// Loads an IDX image file (`0x00000803`) and label file (`0x00000801`).
/// Pixels are scaled by `1/255` and flattened row-major; the class count is
/// `max(label) + 1`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let (inputs, _) = load_idx_images(images_path)?;
    let (ldims, labels) = parse_idx(labels_path, IDX_LABELS_MAGIC, 1)?;
    if inputs.rows() != ldims[0] {
        return Err(Error::format(
            labels_path,
            format!("{} labels for {} images in {}", ldims[0], inputs.rows(), images_path.display()),
        ));
    }
    let labels: Vec<usize> = labels.iter().map(|&y| y as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let name = images_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, inputs, labels, num_classes)
}

/// Writes `d` as IDX files with images of `height × width` pixels, each
/// value rounded to the nearest of 256 levels.
pub fn write_idx(
    d: &Dataset,
    height: usize,
    width: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    check_dim("image height × width", d.input_dim(), height * width)?;
    if d.num_classes > 256 {
        return Err(Error::Domain("IDX labels are single bytes".into()));
    }
    let mut img = Vec::with_capacity(16 + d.len() * height * width);
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for n in [d.len(), height, width] {
        img.extend_from_slice(&(n as u32).to_be_bytes());
    }
    img.extend(
        d.inputs
            .as_slice()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let mut lab = Vec::with_capacity(8 + d.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(d.len() as u32).to_be_bytes());
    lab.extend(d.labels.iter().map(|&y| y as u8));
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    fs::write(ip, img).map_err(|e| Error::io(ip, e))?;
    fs::write(lp, lab).map_err(|e| Error::io(lp, e))
}

/// Parses comma-separated rows `label, x_1, …, x_D` and min-max normalises
/// every feature column over the file. Blank lines and lines starting with
/// `#` are skipped.
pub fn load_delimited(path: impl AsRef<Path>, num_classes: usize) -> Result<Dataset> {
    load_delimited_with_ranges(path, num_classes, None)
}

/// As [`load_delimited`], normalising against known per-column `(min, max)`
/// ranges when given. Values outside a given range are rejected. A column
/// with zero range maps to 0.
pub fn load_delimited_with_ranges(
    path: impl AsRef<Path>,
    num_classes: usize,
    ranges: Option<&[(f64, f64)]>,
) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut width: Option<usize> = None;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let d = fields.len() - 1;
        match width {
            None if d == 0 => {
                return Err(Error::format(path, format!("line {lineno}: no feature columns")));
            }
            None => width = Some(d),
            Some(w) if w != d => {
                return Err(Error::format(
                    path,
                    format!("line {lineno}: ragged row with {d} features, expected {w}"),
                ));
            }
            _ => {}
        }
        let label: usize = fields[0]
            .parse()
            .map_err(|_| Error::format(path, format!("line {lineno}: bad label {:?}", fields[0])))?;
        if label >= num_classes {
            return Err(Error::format(
                path,
                format!("line {lineno}: label {label} not below class count {num_classes}"),
            ));
        }
        labels.push(label);
        for f in &fields[1..] {
            let v: f64 = f
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::format(path, format!("line {lineno}: non-numeric field {f:?}")))?;
            values.push(v);
        }
    }
    let d = width.unwrap_or(0);
    let n = labels.len();
    let mut inputs = Matrix::from_vec(n, d, values)?;
    let bounds: Vec<(f64, f64)> = match ranges {
        Some(r) => {
            if n > 0 {
                check_dim("column ranges", d, r.len())?;
            }
            r.to_vec()
        }
        None => (0..d)
            .map(|j| {
                let col = inputs.column(j);
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            })
            .collect(),
    };
    for i in 0..n {
        for (j, &(lo, hi)) in bounds.iter().enumerate() {
            let v = inputs[(i, j)];
            if v < lo || v > hi {
                return Err(Error::format(
                    path,
                    format!("row {}: column {} value {v} outside [{lo}, {hi}]", i + 1, j + 1),
                ));
            }
            inputs.row_mut(i)[j] = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
        }
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, inputs, labels, num_classes)
}

/// Affine map from raw moon coordinates to `[0, 1]²`: the noiseless
/// moons span `[−1, 2] × [−0.5, 1]` and land in `[0.125, 0.875] × [0.25, 0.75]`.
pub const MOONS_OFFSET: [f64; 2] = [1.5, 1.25];
pub const MOONS_SCALE: [f64; 2] = [0.25, 1.0 / 3.0];

/// Raw (unscaled) moon coordinates: class 0 on the upper unit semicircle
/// centred at the origin, class 1 on the lower one centred at `(1, 0.5)`.
pub fn two_moons_raw(n: usize, noise_sd: f64, rng: &mut Rng) -> (Vec<[f64; 2]>, Vec<usize>) {
    let n0 = n.div_ceil(2);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let t = PI * rng.uniform();
        let class = usize::from(i >= n0);
        let (x, y) = if class == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        let (ex, ey) = if noise_sd > 0.0 {
            (noise_sd * rng.normal(), noise_sd * rng.normal())
        } else {
            (0.0, 0.0)
        };
        points.push([x + ex, y + ey]);
        labels.push(class);
    }
    (points, labels)
}

/// Two interleaved half-circles with Gaussian noise, mapped into `[0, 1]²`
/// by the fixed affine map above and clipped. Classes alternate in blocks:
/// the first `⌈n/2⌉` points are class 0.
pub fn make_two_moons(n: usize, noise_sd: f64, rng: &mut Rng) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Domain("two-moons needs at least two points".into()));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::Domain("noise sd must be non-negative".into()));
    }
    let (points, labels) = two_moons_raw(n, noise_sd, rng);
    let mut data = Vec::with_capacity(2 * n);
    for p in &points {
        for k in 0..2 {
            data.push(((p[k] + MOONS_OFFSET[k]) * MOONS_SCALE[k]).clamp(0.0, 1.0));
        }
    }
    Dataset::new("two-moons", Matrix::from_vec(n, 2, data)?, labels, 2)
}

/// Shape of a displaced-cluster set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterSpec {
    pub blobs: usize,
    pub blob_sd: f64,
    /// Minimum centre distance to the support, in units of `blob_sd · √D`.
    pub center_shift: f64,
}

fn min_sq_dist(x: &[f64], support: &Matrix) -> f64 {
    (0..support.rows())
        .map(|i| {
            support
                .row(i)
                .iter()
                .zip(x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Gaussian blobs in `[0, 1]^D` whose centres keep a distance of at least
/// `center_shift · blob_sd · √D` from every support point. Centres are
/// rejection-sampled uniformly; when no candidate qualifies the farthest
/// one is kept. With `center_shift = 0` centres sit on random support
/// points. Points are clipped to the unit cube.
pub fn make_ood_clusters(n: usize, support: &Matrix, spec: &ClusterSpec, rng: &mut Rng) -> Result<ContextSet> {
    const CANDIDATES: usize = 4000;
    if n == 0 || spec.blobs == 0 {
        return Err(Error::Domain("cluster set needs at least one point and one blob".into()));
    }
    if !(spec.blob_sd > 0.0) || !(spec.center_shift >= 0.0) {
        return Err(Error::Domain("blob sd must be positive and shift non-negative".into()));
    }
    if support.rows() == 0 {
        return Err(Error::Domain("cluster support is empty".into()));
    }
    let d = support.cols();
    let min_dist = spec.center_shift * spec.blob_sd * (d as f64).sqrt();
    let mut centres = Vec::with_capacity(spec.blobs);
    for _ in 0..spec.blobs {
        if spec.center_shift == 0.0 {
            centres.push(support.row(rng.below(support.rows())).to_vec());
            continue;
        }
        let mut best: (f64, Vec<f64>) = (f64::NEG_INFINITY, Vec::new());
        for _ in 0..CANDIDATES {
            let c: Vec<f64> = (0..d).map(|_| rng.uniform()).collect();
            let dist = min_sq_dist(&c, support).sqrt();
            if dist >= min_dist {
                best = (dist, c);
                break;
            }
            if dist > best.0 {
                best = (dist, c);
            }
        }
        centres.push(best.1);
    }
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        let c = &centres[i % spec.blobs];
        data.extend(c.iter().map(|&m| (m + spec.blob_sd * rng.normal()).clamp(0.0, 1.0)));
    }
    ContextSet::new(Matrix::from_vec(n, d, data)?)
}

/// Points drawn uniformly from `[0, 1]^D`.
pub fn uniform_context(n: usize, d: usize, rng: &mut Rng) -> Result<ContextSet> {
    ContextSet::new(Matrix::from_vec(n, d, (0..n * d).map(|_| rng.uniform()).collect())?)
}

/// Fraction of `points` farther than `radius` from every support point.
pub fn fraction_beyond(points: &Matrix, support: &Matrix, radius: f64) -> f64 {
    if points.rows() == 0 {
        return 0.0;
    }
    let far = (0..points.rows())
        .filter(|&i| min_sq_dist(points.row(i), support) > radius * radius)
        .count();
    far as f64 / points.rows() as f64
}
