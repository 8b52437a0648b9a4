//! Zero-shot inference, classification metrics and 2-D projections.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::datagen::LabeledEmbeddingSet;
use crate::error::{Error, Result};
use crate::objectives::LossBreakdown;
use crate::trainer::TrainConfig;

/// Argmax of `cos(x, w_i) / tau`; ties go to the lowest class index.
pub fn predict(
    images: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    tau: f64,
) -> Result<Vec<usize>> {
    if images.ncols() != w.ncols() {
        return Err(Error::Shape(format!(
            "image dim {} vs class embedding dim {}",
            images.ncols(),
            w.ncols()
        )));
    }
    if w.nrows() == 0 {
        return Err(Error::Shape("no class embeddings".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("tau must be positive, got {tau}")));
    }
    let logits = images.dot(&w.t()) / tau;
    Ok(logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &z) in row.iter().enumerate().skip(1) {
                if z > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

/// Counts indexed `[truth][prediction]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_predictions(
        truth: &[usize],
        predicted: &[usize],
        n_classes: usize,
    ) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Shape(format!(
                "{} labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut counts = vec![vec![0u64; n_classes]; n_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= n_classes || p >= n_classes {
                return Err(Error::Data(format!("class index out of range ({t}, {p})")));
            }
            counts[t][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if counts.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn correct(&self, class: usize) -> u64 {
        self.counts[class][class]
    }

    /// Trace over total; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let trace: u64 = (0..self.n_classes()).map(|c| self.counts[c][c]).sum();
        trace as f64 / total as f64
    }
}

/// Unweighted mean of per-class F1. A class with no true positives, false
/// positives or false negatives scores 0.
pub fn macro_f1(confusion: &ConfusionMatrix) -> f64 {
    let n = confusion.n_classes();
    if n == 0 {
        return 0.0;
    }
    let c = confusion.counts();
    let sum: f64 = (0..n)
        .map(|k| {
            let tp = c[k][k] as f64;
            let fn_: f64 = (0..n).filter(|&j| j != k).map(|j| c[k][j] as f64).sum();
            let fp: f64 = (0..n).filter(|&i| i != k).map(|i| c[i][k] as f64).sum();
            let denom = 2.0 * tp + fp + fn_;
            if denom == 0.0 {
                0.0
            } else {
                2.0 * tp / denom
            }
        })
        .sum();
    sum / n as f64
}

/// `2ab / (a + b)`, defined as 0 when both are 0.
pub fn harmonic_mean(a: f64, b: f64) -> Result<f64> {
    if !(a >= 0.0) || !(b >= 0.0) {
        return Err(Error::Domain(format!(
            "harmonic mean needs nonnegative inputs, got ({a}, {b})"
        )));
    }
    if a + b == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * a * b / (a + b))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub support: u64,
    pub correct: u64,
    /// Absent when the class has no samples.
    pub accuracy: Option<f64>,
}

pub fn per_class_breakdown(confusion: &ConfusionMatrix) -> Vec<ClassAccuracy> {
    (0..confusion.n_classes())
        .map(|class| {
            let support = confusion.support(class);
            let correct = confusion.correct(class);
            ClassAccuracy {
                class,
                support,
                correct,
                accuracy: (support > 0).then(|| correct as f64 / support as f64),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassAccuracy>,
    pub confusion: ConfusionMatrix,
}

impl ModalityMetrics {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        Self {
            accuracy: confusion.accuracy(),
            macro_f1: macro_f1(&confusion),
            per_class: per_class_breakdown(&confusion),
            confusion,
        }
    }
}

/// Classifies every record of `images` against `w` and scores the result.
pub fn evaluate(
    images: &LabeledEmbeddingSet,
    w: ArrayView2<'_, f64>,
    tau: f64,
) -> Result<ModalityMetrics> {
    if images.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    if w.nrows() != images.n_classes() {
        return Err(Error::Shape(format!(
            "{} class embeddings for {} classes",
            w.nrows(),
            images.n_classes()
        )));
    }
    let predicted = predict(images.matrix().view(), w, tau)?;
    let confusion =
        ConfusionMatrix::from_predictions(&images.labels(), &predicted, images.n_classes())?;
    Ok(ModalityMetrics::from_confusion(confusion))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    /// High-end test metrics with the high-end class embeddings.
    pub high: ModalityMetrics,
    /// Low-end test metrics with the low-end class embeddings.
    pub low: ModalityMetrics,
    pub harmonic_acc: f64,
    pub harmonic_f1: f64,
    /// Mean loss terms per epoch.
    pub loss_trace: Vec<LossBreakdown>,
    /// Classes that had fewer training samples than requested shots.
    pub shortfall_classes: Vec<usize>,
    pub config: TrainConfig,
}

impl RunReport {
    pub fn new(
        seed: u64,
        high: ModalityMetrics,
        low: ModalityMetrics,
        loss_trace: Vec<LossBreakdown>,
        shortfall_classes: Vec<usize>,
        config: TrainConfig,
    ) -> Result<Self> {
        Ok(Self {
            seed,
            harmonic_acc: harmonic_mean(high.accuracy, low.accuracy)?,
            harmonic_f1: harmonic_mean(high.macro_f1, low.macro_f1)?,
            high,
            low,
            loss_trace,
            shortfall_classes,
            config,
        })
    }
}

/// Seed-averaged metrics.
///
/// Two harmonic aggregates are kept: the mean of the per-seed harmonic
/// means, and the harmonic mean of the seed-averaged accuracies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seeds: Vec<u64>,
    pub high_acc: f64,
    pub high_f1: f64,
    pub low_acc: f64,
    pub low_f1: f64,
    pub mean_harmonic_acc: f64,
    pub mean_harmonic_f1: f64,
    pub harmonic_of_means_acc: f64,
    pub harmonic_of_means_f1: f64,
}

pub fn summarize(reports: &[RunReport]) -> Result<Summary> {
    if reports.is_empty() {
        return Err(Error::Data("no reports to summarize".into()));
    }
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&RunReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let high_acc = mean(&|r| r.high.accuracy);
    let high_f1 = mean(&|r| r.high.macro_f1);
    let low_acc = mean(&|r| r.low.accuracy);
    let low_f1 = mean(&|r| r.low.macro_f1);
    Ok(Summary {
        seeds: reports.iter().map(|r| r.seed).collect(),
        high_acc,
        high_f1,
        low_acc,
        low_f1,
        mean_harmonic_acc: mean(&|r| r.harmonic_acc),
        mean_harmonic_f1: mean(&|r| r.harmonic_f1),
        harmonic_of_means_acc: harmonic_mean(high_acc, low_acc)?,
        harmonic_of_means_f1: harmonic_mean(high_f1, low_f1)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// One `(pc1, pc2)` row per input point.
    pub coords: Array2<f64>,
    /// Principal directions as rows.
    pub components: Array2<f64>,
    pub mean: Array1<f64>,
    /// Variance captured along each axis.
    pub variances: [f64; 2],
    /// Set when the data has fewer than two nonzero principal variances.
    pub rank_deficient: bool,
}

const POWER_MAX_ITERS: usize = 100_000;

fn dominant_eigenpair(cov: &Array2<f64>) -> (f64, Array1<f64>) {
    let start = cov
        .columns()
        .into_iter()
        .max_by(|a, b| a.dot(a).total_cmp(&b.dot(b)))
        .map(|c| c.to_owned())
        .unwrap_or_else(|| Array1::zeros(cov.nrows()));
    let n0 = start.dot(&start).sqrt();
    if n0 == 0.0 {
        return (0.0, Array1::zeros(cov.nrows()));
    }
    let mut v = start / n0;
    for _ in 0..POWER_MAX_ITERS {
        let next = cov.dot(&v);
        let n = next.dot(&next).sqrt();
        if n == 0.0 {
            return (0.0, v);
        }
        let next = next / n;
        let delta = (&next - &v).mapv(f64::abs).fold(0.0, |m: f64, &x| m.max(x));
        v = next;
        if delta < 1e-15 {
            break;
        }
    }
    // Fix the sign so the largest-magnitude entry is positive.
    let pivot = v
        .iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(1.0);
    if pivot < 0.0 {
        v.mapv_inplace(|x| -x);
    }
    (v.dot(&cov.dot(&v)), v)
}

/// Top-two principal-component coordinates by power iteration with deflation.
pub fn project_2d(points: ArrayView2<'_, f64>) -> Result<Projection> {
    let (n, d) = points.dim();
    if n < 2 {
        return Err(Error::Data(format!(
            "need at least 2 points to project, got {n}"
        )));
    }
    let mean = points.mean_axis(Axis(0)).expect("non-empty");
    let centered = &points - &mean;
    let mut cov = centered.t().dot(&centered) / n as f64;
    let scale = cov.diag().sum().max(1.0);

    let mut components = Array2::zeros((2, d));
    let mut variances = [0.0; 2];
    let mut rank_deficient = false;
    for axis in 0..2 {
        let (lambda, v) = dominant_eigenpair(&cov);
        if lambda <= 1e-12 * scale {
            rank_deficient = true;
            break;
        }
        variances[axis] = lambda;
        components.row_mut(axis).assign(&v);
        for i in 0..d {
            for j in 0..d {
                cov[[i, j]] -= lambda * v[i] * v[j];
            }
        }
    }
    let coords = centered.dot(&components.t());
    Ok(Projection {
        coords,
        components,
        mean,
        variances,
        rank_deficient,
    })
}
