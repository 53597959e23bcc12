use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{component_rng, RngStream};
use crate::error::{Error, Result};
use crate::numcore::{Batch, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Isotropic Gaussian clusters, any dimension and class count.
    Blobs,
    /// Two interleaved half circles (d = 2, C = 2).
    Moons,
    /// Two concentric rings (d = 2, C = 2).
    Rings,
}

impl std::str::FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "blobs" => Ok(Self::Blobs),
            "moons" => Ok(Self::Moons),
            "rings" => Ok(Self::Rings),
            _ => Err(Error::Config(format!("unknown dataset kind `{s}`"))),
        }
    }
}

impl std::fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Blobs => "blobs",
            Self::Moons => "moons",
            Self::Rings => "rings",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n: usize,
    pub dim: usize,
    pub n_classes: usize,
    /// Standard deviation of the per-sample Gaussian noise (raw units).
    pub noise: f64,
    /// Scale of the blob centers (raw units); unused by moons and rings.
    pub separation: f64,
    /// Blob centers per class; above 1 the class regions interleave and the
    /// boundary is no longer linear. Blobs only.
    pub clusters_per_class: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if matches!(self.kind, SyntheticKind::Moons | SyntheticKind::Rings)
            && (self.dim != 2 || self.n_classes != 2)
        {
            return Err(Error::Config(format!(
                "{} needs dim = 2 and classes = 2, got dim = {} and classes = {}",
                self.kind, self.dim, self.n_classes
            )));
        }
        if self.clusters_per_class == 0 {
            return Err(Error::Config("dataset.clusters_per_class must be >= 1".into()));
        }
        if self.dim == 0 || self.n_classes < 2 {
            return Err(Error::Config("dataset needs dim >= 1 and classes >= 2".into()));
        }
        if self.n < 10 * self.n_classes {
            return Err(Error::Config(format!(
                "dataset.n = {} too small: every split needs every class (n >= {})",
                self.n,
                10 * self.n_classes
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("dataset.noise must be >= 0, got {}", self.noise)));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::Config(format!(
                "dataset.separation must be > 0, got {}",
                self.separation
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Per-feature affine map from raw generator units into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
struct Rescale {
    lo: Vec<f64>,
    span: Vec<f64>,
}

impl Rescale {
    fn fit(raw: &[f64], dim: usize) -> Self {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for row in raw.chunks(dim) {
            for j in 0..dim {
                lo[j] = lo[j].min(row[j]);
                hi[j] = hi[j].max(row[j]);
            }
        }
        let span = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| if h > l { h - l } else { 1.0 })
            .collect();
        Self { lo, span }
    }

    fn apply(&self, raw: &mut [f64]) {
        let dim = self.lo.len();
        for row in raw.chunks_mut(dim) {
            for ((v, lo), span) in row.iter_mut().zip(&self.lo).zip(&self.span) {
                *v = ((*v - lo) / span).clamp(0.0, 1.0);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Recipe {
    spec: SyntheticSpec,
    centers: Vec<f64>,
    rescale: Rescale,
}

/// Features in `[0, 1]` with disjoint stratified train/val/test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    recipe: Option<Recipe>,
}

impl Dataset {
    /// Builds a dataset from raw `[0, 1]` features and splits it 80/10/10
    /// per class with the split stream of `seed`.
    pub fn from_parts(features: Matrix, labels: Vec<usize>, n_classes: usize, seed: u64) -> Result<Self> {
        let all = Batch::new(features, labels, n_classes)?;
        let (train, val, test) = stratified_split(&all.labels, n_classes, seed)?;
        Ok(Self {
            features: all.features,
            labels: all.labels,
            n_classes,
            train,
            val,
            test,
            recipe: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn batch(&self, idx: &[usize]) -> Batch {
        Batch {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn split(&self, split: Split) -> Batch {
        self.batch(self.indices(split))
    }
}

fn stratified_split(
    labels: &[usize],
    n_classes: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let mut rng = component_rng(seed, RngStream::Split);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "class {c} has {} samples; each split needs one",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n_hold = ((idx.len() as f64 * 0.1).round() as usize).max(1);
        val.extend_from_slice(&idx[..n_hold]);
        test.extend_from_slice(&idx[n_hold..2 * n_hold]);
        train.extend_from_slice(&idx[2 * n_hold..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok((train, val, test))
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn blob_centers(spec: &SyntheticSpec) -> Vec<f64> {
    if spec.kind != SyntheticKind::Blobs {
        return Vec::new();
    }
    let mut rng = component_rng(spec.seed, RngStream::Dataset);
    (0..spec.n_classes * spec.clusters_per_class * spec.dim)
        .map(|_| spec.separation * normal(&mut rng))
        .collect()
}

/// Raw samples in generator units, labels cycling through the classes. Blob
/// cluster `j` belongs to class `j % n_classes`.
fn draw<R: Rng>(spec: &SyntheticSpec, centers: &[f64], n: usize, rng: &mut R) -> (Vec<f64>, Vec<usize>) {
    let d = spec.dim;
    let mut raw = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % spec.n_classes;
        labels.push(y);
        match spec.kind {
            SyntheticKind::Blobs => {
                let sub = if spec.clusters_per_class > 1 {
                    rng.random_range(0..spec.clusters_per_class)
                } else {
                    0
                };
                let c = (y + spec.n_classes * sub) * d;
                for j in 0..d {
                    raw.push(centers[c + j] + spec.noise * normal(rng));
                }
            }
            SyntheticKind::Moons => {
                let t: f64 = rng.random_range(0.0..std::f64::consts::PI);
                let (x0, x1) = if y == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                raw.push(x0 + spec.noise * normal(rng));
                raw.push(x1 + spec.noise * normal(rng));
            }
            SyntheticKind::Rings => {
                let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let r = if y == 0 { 1.0 } else { 2.0 };
                raw.push(r * t.cos() + spec.noise * normal(rng));
                raw.push(r * t.sin() + spec.noise * normal(rng));
            }
        }
    }
    (raw, labels)
}

/// Deterministic synthetic dataset, rescaled per feature into `[0, 1]`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let centers = blob_centers(spec);
    let mut rng = component_rng(spec.seed, RngStream::Dataset);
    // Skip past the draws that produced the centers.
    for _ in 0..centers.len() {
        let _ = normal(&mut rng);
    }
    let (mut raw, labels) = draw(spec, &centers, spec.n, &mut rng);
    let rescale = Rescale::fit(&raw, spec.dim);
    rescale.apply(&mut raw);
    let features = Matrix::new(spec.n, spec.dim, raw)?;
    let mut ds = Dataset::from_parts(features, labels, spec.n_classes, spec.seed)?;
    ds.recipe = Some(Recipe {
        spec: *spec,
        centers,
        rescale,
    });
    Ok(ds)
}

/// How out-of-distribution samples depart from the base generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OodShift {
    /// Every coordinate moves by `±magnitude` (fixed random signs).
    MeanShift,
    /// Blend toward uniform noise: `(1 - m) x + m u`, `m = min(magnitude, 1)`.
    Uniform,
}

impl std::str::FromStr for OodShift {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean_shift" => Ok(Self::MeanShift),
            "uniform" => Ok(Self::Uniform),
            _ => Err(Error::Config(format!("unknown OOD shift `{s}`"))),
        }
    }
}

/// Draws `n` samples from a shifted version of `base`'s generator, using the
/// base rescaling and clamping into `[0, 1]`.
pub fn gen_ood(base: &Dataset, shift: OodShift, magnitude: f64, n: usize, seed: u64) -> Result<Batch> {
    if !(magnitude >= 0.0) {
        return Err(Error::InvalidArgument(format!("OOD magnitude must be >= 0, got {magnitude}")));
    }
    let recipe = base
        .recipe
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("OOD generation needs a synthetic base dataset".into()))?;
    let spec = &recipe.spec;
    let mut rng = component_rng(seed, RngStream::Ood);
    let (mut raw, labels) = draw(spec, &recipe.centers, n, &mut rng);
    recipe.rescale.apply(&mut raw);
    match shift {
        OodShift::MeanShift => {
            let signs: Vec<f64> = (0..spec.dim)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            for row in raw.chunks_mut(spec.dim) {
                for (x, s) in row.iter_mut().zip(&signs) {
                    *x = (*x + s * magnitude).clamp(0.0, 1.0);
                }
            }
        }
        OodShift::Uniform => {
            let m = magnitude.min(1.0);
            for x in raw.iter_mut() {
                let u: f64 = rng.random();
                *x = ((1.0 - m) * *x + m * u).clamp(0.0, 1.0);
            }
        }
    }
    Batch::new(Matrix::new(n, spec.dim, raw)?, labels, spec.n_classes)
}
