//! Synthetic two-modality embedding data and the plain-text fixture format.
//!
//! Class centers sit on the unit sphere at a fixed angle from a shared base
//! direction. High-end samples scatter around the centers. Low-end samples
//! scatter around rotated centers shifted by one shared offset, which plays
//! the role of a modality shortcut. Description embeddings (the inputs to
//! anchor prototypes) scatter around the noiseless per-modality centers
//! with a systematic per-class bias.
//!
//! Fixture files look like
//!
//! ```text
//! dim=3 classes=2
//! 0,H,train,1,0,0
//! 1,L,test,0,0.6,0.8
//! ```

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, norm};
use crate::prompt_space::{AnchorPrototypes, Modality};

/// Norm tolerance applied when reading fixture files.
pub const LOAD_NORM_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRecord {
    pub embedding: Array1<f64>,
    pub label: usize,
    pub modality: Modality,
    pub split: Split,
}

/// Unit-norm image (or description) embeddings with labels and tags.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledEmbeddingSet {
    dim: usize,
    n_classes: usize,
    records: Vec<EmbeddingRecord>,
}

impl LabeledEmbeddingSet {
    pub fn new(dim: usize, n_classes: usize, records: Vec<EmbeddingRecord>) -> Result<Self> {
        if dim == 0 || n_classes == 0 {
            return Err(Error::Data("dim and classes must be positive".into()));
        }
        for (idx, r) in records.iter().enumerate() {
            if r.embedding.len() != dim {
                return Err(Error::Shape(format!(
                    "record {idx} has dim {}, expected {dim}",
                    r.embedding.len()
                )));
            }
            if r.label >= n_classes {
                return Err(Error::Data(format!(
                    "record {idx} has label {} but there are {n_classes} classes",
                    r.label
                )));
            }
            let err = (norm(r.embedding.view()) - 1.0).abs();
            if !(err <= 1e-6) {
                return Err(Error::Data(format!(
                    "record {idx} is not unit norm (error {err:e})"
                )));
            }
        }
        Ok(Self {
            dim,
            n_classes,
            records,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn filter(&self, mut keep: impl FnMut(&EmbeddingRecord) -> bool) -> Self {
        Self {
            dim: self.dim,
            n_classes: self.n_classes,
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    pub fn select(&self, modality: Modality, split: Split) -> Self {
        self.filter(|r| r.modality == modality && r.split == split)
    }

    /// Embeddings stacked as rows.
    pub fn matrix(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.records.len(), self.dim));
        for (mut row, r) in out.rows_mut().into_iter().zip(&self.records) {
            row.assign(&r.embedding);
        }
        out
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn count(&self, label: usize, modality: Modality, split: Split) -> usize {
        self.records
            .iter()
            .filter(|r| r.label == label && r.modality == modality && r.split == split)
            .count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotationPlane {
    /// A uniformly random 2-D subspace.
    Random,
    /// The plane spanned by the first two class centers.
    Centers,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub embed_dim: usize,
    /// Samples per class, per modality, per split.
    pub samples: SplitSizes,
    /// Angle between every class center and the shared base direction.
    pub spread: f64,
    /// Expected norm of the isotropic within-class perturbation.
    pub noise: f64,
    /// Cross-modal rotation angle.
    pub rotation: f64,
    pub rotation_plane: RotationPlane,
    /// Norm of the shared low-end offset.
    pub offset: f64,
    /// Description embeddings per class and modality.
    pub n_descriptions: usize,
    /// Expected norm of the per-description perturbation.
    pub description_noise: f64,
    /// Norm of the systematic per-class, per-modality description bias.
    pub description_bias: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 3,
            embed_dim: 64,
            samples: SplitSizes {
                train: 100,
                val: 30,
                test: 50,
            },
            spread: std::f64::consts::FRAC_PI_4,
            noise: 0.15,
            rotation: 0.6,
            rotation_plane: RotationPlane::Random,
            offset: 0.5,
            n_descriptions: 50,
            description_noise: 0.3,
            description_bias: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Three tight classes whose low-end description prototypes are unreliable.
    pub fn forgetting() -> Self {
        Self {
            embed_dim: 32,
            spread: 0.4,
            description_bias: 2.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if self.n_classes >= self.embed_dim {
            return Err(Error::Config(format!(
                "{} classes need embed_dim > classes (got {})",
                self.n_classes, self.embed_dim
            )));
        }
        if self.samples.train + self.samples.val + self.samples.test == 0 {
            return Err(Error::Config("no samples requested".into()));
        }
        if self.n_descriptions == 0 {
            return Err(Error::Config("n_descriptions must be >= 1".into()));
        }
        let reals = [
            self.spread,
            self.noise,
            self.rotation,
            self.offset,
            self.description_noise,
            self.description_bias,
        ];
        if reals.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("synthetic spec values must be finite".into()));
        }
        if self.noise < 0.0
            || self.offset < 0.0
            || self.description_noise < 0.0
            || self.description_bias < 0.0
        {
            return Err(Error::Config(
                "noise, offset and bias magnitudes must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub embeddings: LabeledEmbeddingSet,
    /// Noiseless per-class, per-modality centers.
    pub ground_truth: AnchorPrototypes,
    /// Description embeddings, all tagged `train`.
    pub descriptions: LabeledEmbeddingSet,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(dim, || StandardNormal.sample(rng))
}

/// Gram-Schmidt on fresh Gaussian draws.
fn orthonormal(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Array1<f64>> {
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian(rng, dim);
        for b in &basis {
            let p = v.dot(b);
            v.scaled_add(-p, b);
        }
        let n = norm(v.view());
        if n > 1e-8 {
            basis.push(v / n);
        }
    }
    basis
}

/// Rotation by `angle` inside the plane spanned by orthonormal `a`, `b`.
fn rotate(x: &Array1<f64>, a: &Array1<f64>, b: &Array1<f64>, angle: f64) -> Array1<f64> {
    let (pa, pb) = (x.dot(a), x.dot(b));
    let (c, s) = (angle.cos(), angle.sin());
    let mut out = x.clone();
    out.scaled_add(pa * (c - 1.0) - pb * s, a);
    out.scaled_add(pa * s + pb * (c - 1.0), b);
    out
}

fn perturbed(center: &Array1<f64>, noise: f64, rng: &mut ChaCha8Rng) -> Result<Array1<f64>> {
    let dim = center.len();
    let scale = noise / (dim as f64).sqrt();
    let v = center + &(gaussian(rng, dim) * scale);
    Ok(linalg::normalized(v.view(), "synthetic sample")?.0)
}

/// Draws a synthetic dataset. Pure in `spec`, seed included.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let d = spec.embed_dim;
    let k = spec.n_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let basis = orthonormal(&mut rng, k + 1, d);
    let (cs, sn) = (spec.spread.cos(), spec.spread.sin());
    let centers: Vec<Array1<f64>> = (0..k)
        .map(|i| &basis[0] * cs + &basis[i + 1] * sn)
        .collect();

    let (plane_a, plane_b) = match spec.rotation_plane {
        RotationPlane::Random => {
            let p = orthonormal(&mut rng, 2, d);
            (p[0].clone(), p[1].clone())
        }
        RotationPlane::Centers => {
            let a = centers[0].clone();
            let mut b = centers[1].clone();
            let p = b.dot(&a);
            b.scaled_add(-p, &a);
            let n = norm(b.view());
            if n < 1e-8 {
                return Err(Error::Config(
                    "first two centers are parallel; use a random rotation plane".into(),
                ));
            }
            (a, b / n)
        }
    };
    let shortcut = orthonormal(&mut rng, 1, d).remove(0) * spec.offset;

    let high_raw = centers.clone();
    let low_raw: Vec<Array1<f64>> = centers
        .iter()
        .map(|c| rotate(c, &plane_a, &plane_b, spec.rotation) + &shortcut)
        .collect();

    let mut truth = [Array2::zeros((k, d)), Array2::zeros((k, d))];
    for (m, raw) in [(Modality::High, &high_raw), (Modality::Low, &low_raw)] {
        for (i, c) in raw.iter().enumerate() {
            let (unit, _) = linalg::normalized(c.view(), "class center")?;
            truth[m.index()].row_mut(i).assign(&unit);
        }
    }

    let mut records = Vec::new();
    for m in Modality::ALL {
        let raw = if m == Modality::High {
            &high_raw
        } else {
            &low_raw
        };
        for split in Split::ALL {
            for (label, center) in raw.iter().enumerate() {
                for _ in 0..spec.samples.get(split) {
                    records.push(EmbeddingRecord {
                        embedding: perturbed(center, spec.noise, &mut rng)?,
                        label,
                        modality: m,
                        split,
                    });
                }
            }
        }
    }

    let mut descriptions = Vec::new();
    for m in Modality::ALL {
        for label in 0..k {
            let center = truth[m.index()].row(label).to_owned();
            let bias = orthonormal(&mut rng, 1, d).remove(0) * spec.description_bias;
            let biased = center + bias;
            for _ in 0..spec.n_descriptions {
                descriptions.push(EmbeddingRecord {
                    embedding: perturbed(&biased, spec.description_noise, &mut rng)?,
                    label,
                    modality: m,
                    split: Split::Train,
                });
            }
        }
    }

    let [high, low] = truth;
    Ok(SyntheticData {
        embeddings: LabeledEmbeddingSet::new(d, k, records)?,
        ground_truth: AnchorPrototypes::from_rows(high, low, 0)?,
        descriptions: LabeledEmbeddingSet::new(d, k, descriptions)?,
    })
}

/// Renders a set in the fixture format. Floats use the shortest exact representation.
pub fn format_embeddings(set: &LabeledEmbeddingSet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "dim={} classes={}", set.dim, set.n_classes);
    for r in &set.records {
        let _ = write!(out, "{},{},{}", r.label, r.modality.tag(), r.split.tag());
        for v in &r.embedding {
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_embeddings(text: &str) -> Result<LabeledEmbeddingSet> {
    let fmt_err = |line: usize, message: String| Error::Format { line, message };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| fmt_err(1, "empty file".into()))?;
    let (mut dim, mut classes) = (None, None);
    for field in header.split_whitespace() {
        match field.split_once('=') {
            Some(("dim", v)) => dim = v.parse::<usize>().ok(),
            Some(("classes", v)) => classes = v.parse::<usize>().ok(),
            _ => return Err(fmt_err(1, format!("unexpected header field `{field}`"))),
        }
    }
    let (dim, classes) = match (dim, classes) {
        (Some(d), Some(c)) if d > 0 && c > 0 => (d, c),
        _ => {
            return Err(fmt_err(
                1,
                "header must be `dim=<d> classes=<k>` with positive values".into(),
            ))
        }
    };

    let mut records = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 3 {
            return Err(fmt_err(
                lineno,
                format!(
                    "expected {} values after label,modality,split but found {}",
                    dim,
                    fields.len().saturating_sub(3)
                ),
            ));
        }
        let label: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| fmt_err(lineno, format!("bad label `{}`", fields[0])))?;
        if label >= classes {
            return Err(fmt_err(
                lineno,
                format!("label {label} >= classes {classes}"),
            ));
        }
        let modality = Modality::from_tag(fields[1].trim())
            .ok_or_else(|| fmt_err(lineno, format!("bad modality `{}`", fields[1])))?;
        let split = Split::from_tag(fields[2].trim())
            .ok_or_else(|| fmt_err(lineno, format!("bad split `{}`", fields[2])))?;
        let values = fields[3..]
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| fmt_err(lineno, format!("bad value: {e}")))?;
        let v = Array1::from(values);
        let n = norm(v.view());
        if !((n - 1.0).abs() <= LOAD_NORM_TOL) {
            return Err(fmt_err(lineno, format!("embedding norm {n} is not 1")));
        }
        records.push(EmbeddingRecord {
            embedding: v / n,
            label,
            modality,
            split,
        });
    }
    LabeledEmbeddingSet::new(dim, classes, records)
}

pub fn save_embeddings(set: &LabeledEmbeddingSet, path: &Path) -> Result<()> {
    std::fs::write(path, format_embeddings(set))
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn load_embeddings(path: &Path) -> Result<LabeledEmbeddingSet> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_embeddings(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_classes: 3,
            embed_dim: 8,
            samples: SplitSizes {
                train: 4,
                val: 2,
                test: 3,
            },
            n_descriptions: 5,
            seed,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn no_shift_makes_modalities_identical() {
        let spec = SyntheticSpec {
            rotation: 0.0,
            offset: 0.0,
            noise: 0.0,
            ..small(3)
        };
        let data = generate(&spec).unwrap();
        let e = &data.embeddings;
        for split in Split::ALL {
            let h = e.select(Modality::High, split);
            let l = e.select(Modality::Low, split);
            assert_eq!(h.labels(), l.labels());
            for (a, b) in h.records().iter().zip(l.records()) {
                assert_eq!(a.embedding, b.embedding);
            }
        }
    }

    #[test]
    fn split_counts_match_request() {
        let spec = small(1);
        let data = generate(&spec).unwrap();
        for m in Modality::ALL {
            for split in Split::ALL {
                for c in 0..3 {
                    assert_eq!(data.embeddings.count(c, m, split), spec.samples.get(split));
                }
            }
        }
        assert_eq!(data.descriptions.len(), 2 * 3 * 5);
    }

    #[test]
    fn generation_is_pure_in_the_spec() {
        assert_eq!(generate(&small(5)).unwrap(), generate(&small(5)).unwrap());
        assert_ne!(generate(&small(5)).unwrap(), generate(&small(6)).unwrap());
    }

    #[test]
    fn too_many_classes_is_rejected() {
        let spec = SyntheticSpec {
            n_classes: 40,
            embed_dim: 32,
            ..SyntheticSpec::default()
        };
        assert!(matches!(generate(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn wrong_value_count_names_the_line() {
        let text = "dim=2 classes=2\n0,H,train,1,0\n1,L,test,0\n";
        match parse_embeddings(text) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_dim_disagreeing_with_rows_is_rejected() {
        let row: Vec<String> = (0..32)
            .map(|i| if i == 0 { "1".into() } else { "0".into() })
            .collect();
        let text = format!("dim=64 classes=2\n0,H,train,{}\n", row.join(","));
        assert!(matches!(
            parse_embeddings(&text),
            Err(Error::Format { line: 2, .. })
        ));
    }

    #[test]
    fn malformed_header_and_norms() {
        assert!(matches!(
            parse_embeddings("dims=2\n"),
            Err(Error::Format { line: 1, .. })
        ));
        assert!(matches!(
            parse_embeddings("dim=2 classes=2\n0,H,train,1,1\n"),
            Err(Error::Format { line: 2, .. })
        ));
        assert!(matches!(
            parse_embeddings("dim=2 classes=2\n0,X,train,1,0\n"),
            Err(Error::Format { line: 2, .. })
        ));
    }

    #[test]
    fn round_trip_through_text() {
        let data = generate(&small(9)).unwrap();
        let back = parse_embeddings(&format_embeddings(&data.embeddings)).unwrap();
        assert_eq!(back.len(), data.embeddings.len());
        for (a, b) in back.records().iter().zip(data.embeddings.records()) {
            assert_eq!(
                (a.label, a.modality, a.split),
                (b.label, b.modality, b.split)
            );
            let diff = (&a.embedding - &b.embedding)
                .mapv(f64::abs)
                .fold(0.0, |m: f64, &x| m.max(x));
            assert!(diff < 1e-9);
        }
    }
}
