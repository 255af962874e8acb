//! Synthetic generators, CSV ingestion, normalisation and probe grids.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{self, Domain};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelKind {
    Classes { classes: usize },
    Continuous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    Pool,
}

/// Feature matrix plus one target per row. Class labels are stored as
/// integral floats so they feed the loss ops directly.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub targets: Vec<f64>,
    pub labels: LabelKind,
    pub split: Split,
}

impl Dataset {
    pub fn new(features: Tensor, targets: Vec<f64>, labels: LabelKind, split: Split) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::shape("dataset", format!("features must be 2-D, got {:?}", features.shape())));
        }
        if features.rows() != targets.len() {
            return Err(Error::shape(
                "dataset",
                format!("{} feature rows but {} targets", features.rows(), targets.len()),
            ));
        }
        if let LabelKind::Classes { classes } = labels {
            if let Some(bad) = targets
                .iter()
                .find(|y| y.fract() != 0.0 || **y < 0.0 || **y >= classes as f64)
            {
                return Err(Error::Config(format!("label {bad} is not a class index below {classes}")));
            }
        }
        Ok(Dataset {
            features,
            targets,
            labels,
            split,
        })
    }

    pub fn empty(dim: usize, labels: LabelKind, split: Split) -> Self {
        Dataset {
            features: Tensor::zeros(&[0, dim]),
            targets: Vec::new(),
            labels,
            split,
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn subset(&self, indices: &[usize], split: Split) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            labels: self.labels,
            split,
        }
    }

    pub fn target_column(&self) -> Tensor {
        Tensor::column(self.targets.clone())
    }

    pub fn class_labels(&self) -> Vec<usize> {
        self.targets.iter().map(|&y| y as usize).collect()
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.dim() != other.dim() || self.labels != other.labels {
            return Err(Error::shape(
                "dataset concat",
                format!("[{}] vs [{}] features", self.dim(), other.dim()),
            ));
        }
        let mut data = self.features.data().to_vec();
        data.extend_from_slice(other.features.data());
        let mut targets = self.targets.clone();
        targets.extend_from_slice(&other.targets);
        Dataset::new(
            Tensor::matrix(targets.len(), self.dim(), data)?,
            targets,
            self.labels,
            self.split,
        )
    }
}

/// Per-column affine standardisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Fits mean and population std per column; constant columns get std 1.
    pub fn fit(x: &Tensor) -> Result<Self> {
        let (n, d) = (x.rows(), x.cols());
        if n == 0 {
            return Err(Error::EmptyDataset("cannot fit normalisation on zero rows".into()));
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Normalizer { mean, std })
    }

    pub fn fit_values(values: &[f64]) -> Result<Self> {
        Self::fit(&Tensor::column(values.to_vec()))
    }

    pub fn identity(dim: usize) -> Self {
        Normalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let d = self.mean.len();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(k, v)| (v - self.mean[k % d]) / self.std[k % d])
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn inverse(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let d = self.mean.len();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(k, v)| v * self.std[k % d] + self.mean[k % d])
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn transform_values(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|v| (v - self.mean[0]) / self.std[0]).collect()
    }

    pub fn inverse_values(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|v| v * self.std[0] + self.mean[0]).collect()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.mean.len() {
            return Err(Error::shape(
                "normalize",
                format!("fitted on {} columns, got {:?}", self.mean.len(), x.shape()),
            ));
        }
        Ok(())
    }

    /// Normalises a dataset's features (and targets, when `targets` is given).
    pub fn apply(&self, data: &Dataset, targets: Option<&Normalizer>) -> Result<Dataset> {
        let features = self.transform(&data.features)?;
        let values = match targets {
            Some(t) => t.transform_values(&data.targets),
            None => data.targets.clone(),
        };
        Dataset::new(features, values, data.labels, data.split)
    }
}

/// Two-class Gaussian mixture specification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoGaussians {
    pub n_per_class: usize,
    pub means: [Vec<f64>; 2],
    /// Shared covariance; `None` means identity.
    pub covariance: Option<Vec<Vec<f64>>>,
}

impl TwoGaussians {
    /// Means at `±separation` on the first axis, identity covariance.
    pub fn axis(n_per_class: usize, dim: usize, separation: f64) -> Self {
        let mut a = vec![0.0; dim];
        let mut b = vec![0.0; dim];
        a[0] = -separation;
        b[0] = separation;
        TwoGaussians {
            n_per_class,
            means: [a, b],
            covariance: None,
        }
    }
}

impl Default for TwoGaussians {
    fn default() -> Self {
        Self::axis(500, 2, 2.0)
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        if a[i].len() != n {
            return Err(Error::Config("covariance must be square".into()));
        }
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if d <= 0.0 {
                    return Err(Error::Config("covariance is not positive definite".into()));
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Samples a binary classification set; rows alternate class 0, class 1.
pub fn gen_two_gaussians(spec: &TwoGaussians, seed: u64) -> Result<Dataset> {
    gen_two_gaussians_split(spec, seed, Split::Train)
}

/// As [`gen_two_gaussians`], drawing from a stream reserved for `split` so
/// train and test sets from one seed are independent.
pub fn gen_two_gaussians_split(spec: &TwoGaussians, seed: u64, split: Split) -> Result<Dataset> {
    let d = spec.means[0].len();
    if d == 0 || spec.means[1].len() != d {
        return Err(Error::Config("class means must share a positive dimension".into()));
    }
    if spec.means[0] == spec.means[1] {
        return Err(Error::Config("class means must differ".into()));
    }
    let chol = match &spec.covariance {
        Some(c) if c.len() != d => {
            return Err(Error::Config(format!("covariance is {}x{}, means have {d} dims", c.len(), c.len())))
        }
        Some(c) => Some(cholesky(c)?),
        None => None,
    };
    let mut rng = rng::stream(seed, Domain::Data, 0, split as u64);
    let mut data = Vec::with_capacity(2 * spec.n_per_class * d);
    let mut targets = Vec::with_capacity(2 * spec.n_per_class);
    let mut z = vec![0.0; d];
    for _ in 0..spec.n_per_class {
        for (class, mean) in spec.means.iter().enumerate() {
            z.iter_mut().for_each(|v| *v = rng::standard_normal(&mut rng));
            for i in 0..d {
                let shock = match &chol {
                    Some(l) => (0..=i).map(|k| l[i][k] * z[k]).sum(),
                    None => z[i],
                };
                data.push(mean[i] + shock);
            }
            targets.push(class as f64);
        }
    }
    Dataset::new(
        Tensor::matrix(targets.len(), d, data)?,
        targets,
        LabelKind::Classes { classes: 2 },
        split,
    )
}

/// One-dimensional regression curve with a held-out gap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GappedRegression {
    pub n: usize,
    pub domain: (f64, f64),
    pub gap: (f64, f64),
    pub noise_std: f64,
}

impl Default for GappedRegression {
    fn default() -> Self {
        GappedRegression {
            n: 1000,
            domain: (-4.0, 4.0),
            gap: (-1.0, 1.5),
            noise_std: 0.1,
        }
    }
}

impl GappedRegression {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.domain;
        let (a, b) = self.gap;
        if !(lo < a && a < b && b < hi) {
            return Err(Error::Config(format!(
                "gap ({a}, {b}) must lie strictly inside domain ({lo}, {hi})"
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("noise_std must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn in_gap(&self, x: f64) -> bool {
        x >= self.gap.0 && x <= self.gap.1
    }
}

/// The noiseless regression curve.
pub fn gapped_curve(x: f64) -> f64 {
    (2.0 * x).sin() + 0.1 * x * x
}

/// Points outside and inside the gap, drawn from one uniform sample of the domain.
#[derive(Clone, Debug, PartialEq)]
pub struct GappedSample {
    pub outside: Dataset,
    pub gap: Dataset,
}

/// Draws `n` points uniformly on the domain and splits them by gap membership.
pub fn gen_gapped_regression(spec: &GappedRegression, seed: u64) -> Result<GappedSample> {
    gapped_draw(spec, spec.n, seed, 1)
}

/// `n` fresh points over the whole domain, gap included, from a stream disjoint
/// from [`gen_gapped_regression`]'s.
pub fn gen_gapped_test(spec: &GappedRegression, n: usize, seed: u64) -> Result<Dataset> {
    let s = gapped_draw(spec, n, seed, 2)?;
    let mut all = s.outside.concat(&s.gap)?;
    all.split = Split::Test;
    Ok(all)
}

fn gapped_draw(spec: &GappedRegression, n: usize, seed: u64, stream: u64) -> Result<GappedSample> {
    spec.validate()?;
    let mut rng = rng::stream(seed, Domain::Data, stream, 0);
    let (mut out_x, mut out_y, mut gap_x, mut gap_y) = (vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        let x = rng.random_range(spec.domain.0..spec.domain.1);
        let y = gapped_curve(x) + spec.noise_std * rng::standard_normal(&mut rng);
        if spec.in_gap(x) {
            gap_x.push(x);
            gap_y.push(y);
        } else {
            out_x.push(x);
            out_y.push(y);
        }
    }
    let make = |x: Vec<f64>, y: Vec<f64>, split| Dataset::new(Tensor::column(x), y, LabelKind::Continuous, split);
    Ok(GappedSample {
        outside: make(out_x, out_y, Split::Train)?,
        gap: make(gap_x, gap_y, Split::Pool)?,
    })
}

/// Shuffles `0..n` with the split stream and returns `(train, val)` indices.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, Domain::Split, n as u64, 0));
    let n_val = ((n as f64) * val_fraction).round() as usize;
    let val = idx.split_off(n - n_val.min(n));
    (idx, val)
}

/// Column layout of a CSV dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Header name of the target column.
    pub target: String,
    pub labels: LabelKind,
    /// Expected number of feature columns, if known.
    #[serde(default)]
    pub features: Option<usize>,
    #[serde(default)]
    pub transform: Option<RepeatPad>,
}

/// Repeats the feature vector and zero-pads it to a fixed width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepeatPad {
    pub repeats: usize,
    pub width: usize,
}

impl RepeatPad {
    pub fn apply(&self, features: &Tensor) -> Result<Tensor> {
        let (n, d) = (features.rows(), features.cols());
        if d * self.repeats > self.width {
            return Err(Error::Schema(format!(
                "{d} features repeated {} times exceed width {}",
                self.repeats, self.width
            )));
        }
        let mut data = Vec::with_capacity(n * self.width);
        for i in 0..n {
            for _ in 0..self.repeats {
                data.extend_from_slice(features.row(i));
            }
            data.resize((i + 1) * self.width, 0.0);
        }
        Tensor::matrix(n, self.width, data)
    }
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no header", path.display())));
    }
    let target = headers.iter().position(|h| h == schema.target).ok_or_else(|| {
        Error::Schema(format!("{}: no target column '{}'", path.display(), schema.target))
    })?;
    let width = headers.len() - 1;
    if let Some(expected) = schema.features {
        if expected != width {
            return Err(Error::Schema(format!(
                "{}: expected {expected} feature columns, found {width}",
                path.display()
            )));
        }
    }
    let parse_error = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let (mut data, mut targets) = (Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(parse_error(line, format!("{} fields, expected {}", record.len(), headers.len())));
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_error(line, format!("cannot parse '{field}' as a number")))?;
            if !v.is_finite() {
                return Err(parse_error(line, format!("non-finite value '{field}'")));
            }
            if j == target {
                targets.push(v);
            } else {
                data.push(v);
            }
        }
    }
    if targets.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no data rows", path.display())));
    }
    let mut features = Tensor::matrix(targets.len(), width, data)?;
    if let Some(t) = schema.transform {
        features = t.apply(&features)?;
    }
    Dataset::new(features, targets, schema.labels, Split::Train)
}

/// Writes features `x0..x{d-1}` followed by a `target` column.
pub fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| map_csv_io(path, e))?;
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    header.push("target".into());
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut row: Vec<String> = data.features.row(i).iter().map(f64::to_string).collect();
        row.push(data.targets[i].to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn map_csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    }
}

/// Regular 2-D grid, inclusive of both bounds on each axis. Rows run over `y`
/// fastest: row `i * resolution + j` is `(x_i, y_j)`.
pub fn grid_probe(bounds: [(f64, f64); 2], resolution: usize) -> Result<Tensor> {
    if resolution < 2 {
        return Err(Error::Config(format!("grid resolution must be >= 2, got {resolution}")));
    }
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        (0..resolution)
            .map(|i| {
                if i == resolution - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (resolution - 1) as f64
                }
            })
            .collect()
    };
    let (xs, ys) = (axis(bounds[0]), axis(bounds[1]));
    let mut data = Vec::with_capacity(2 * resolution * resolution);
    for &x in &xs {
        for &y in &ys {
            data.extend([x, y]);
        }
    }
    Tensor::matrix(resolution * resolution, 2, data)
}

/// Provenance record written next to generated or loaded data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub paths: Vec<PathBuf>,
    #[serde(default)]
    pub schema: Option<CsvSchema>,
    #[serde(default)]
    pub feature_normalization: Option<Normalizer>,
    #[serde(default)]
    pub target_normalization: Option<Normalizer>,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_two_gaussians() {
        let d = gen_two_gaussians(&TwoGaussians::axis(0, 2, 2.0), 1).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.dim(), 2);
    }

    #[test]
    fn correlated_covariance_is_sampled() {
        let spec = TwoGaussians {
            n_per_class: 20_000,
            means: [vec![0.0, 0.0], vec![5.0, 0.0]],
            covariance: Some(vec![vec![1.0, 0.8], vec![0.8, 1.0]]),
        };
        let d = gen_two_gaussians(&spec, 4).unwrap();
        let class0: Vec<usize> = (0..d.len()).filter(|&i| d.targets[i] == 0.0).collect();
        let x = d.subset(&class0, Split::Train).features;
        let n = x.rows() as f64;
        let cov: f64 = (0..x.rows()).map(|i| x.get(i, 0) * x.get(i, 1)).sum::<f64>() / n;
        assert!((cov - 0.8).abs() < 0.04, "{cov}");
        assert!(cholesky(&[vec![1.0, 2.0], vec![2.0, 1.0]]).is_err());
    }

    #[test]
    fn noiseless_gapped_targets_lie_on_curve() {
        let spec = GappedRegression {
            noise_std: 0.0,
            ..Default::default()
        };
        let s = gen_gapped_regression(&spec, 3).unwrap();
        for i in 0..s.outside.len() {
            let x = s.outside.features.get(i, 0);
            assert!(!spec.in_gap(x));
            assert_eq!(s.outside.targets[i], gapped_curve(x));
        }
        assert!((0..s.gap.len()).all(|i| spec.in_gap(s.gap.features.get(i, 0))));
        assert_eq!(s.outside.len() + s.gap.len(), spec.n);
    }

    #[test]
    fn repeat_pad_reaches_width() {
        let x = Tensor::matrix(2, 13, (0..26).map(f64::from).collect()).unwrap();
        let padded = RepeatPad { repeats: 6, width: 90 }.apply(&x).unwrap();
        assert_eq!(padded.shape(), &[2, 90]);
        assert_eq!(padded.get(1, 13), 13.0);
        assert_eq!(padded.get(1, 77), 25.0);
        assert!(padded.row(1)[78..].iter().all(|v| *v == 0.0));
        assert!(matches!(
            RepeatPad { repeats: 7, width: 90 }.apply(&x),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn grid_corners() {
        let g = grid_probe([(0.0, 1.0), (0.0, 1.0)], 2).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        let g = grid_probe([(-3.0, 7.0), (0.1, 0.3)], 7).unwrap();
        assert_eq!(g.rows(), 49);
        assert_eq!(g.row(48), &[7.0, 0.3]);
        assert!(grid_probe([(0.0, 1.0), (0.0, 1.0)], 1).is_err());
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let (t, v) = split_indices(50, 0.1, 9);
        assert_eq!(v.len(), 5);
        let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(split_indices(50, 0.1, 9), (t, v));
    }

    #[test]
    fn class_labels_are_validated() {
        let x = Tensor::zeros(&[2, 1]);
        assert!(Dataset::new(x.clone(), vec![0.0, 2.0], LabelKind::Classes { classes: 2 }, Split::Train).is_err());
        assert!(Dataset::new(x, vec![0.0, 0.5], LabelKind::Classes { classes: 2 }, Split::Train).is_err());
    }
}
