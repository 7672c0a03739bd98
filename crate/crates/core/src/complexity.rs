//! Centroid classifier in descriptor space and the complexity score.
//!
//! For a sample `s` of class `k`, with similarity `D(s, c) = exp(-‖s − c‖)`:
//!
//! ```text
//! C = D(s, c_k) / (D(s, c_k) + max_{i≠k} D(s, c_i))
//! ```
//!
//! and the dataset score `c_all` is the mean of `C` over all samples.
//! `C > 0.5` exactly when the nearest-centroid rule classifies the sample
//! correctly, so a higher `c_all` means an easier task for this classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::{extract_global_descriptor, DescriptorError, FeatureVector, DESCRIPTOR_VARIANT};
use crate::ingest::{IngestError, LabeledDataset};

/// Recorded in every report.
pub const PREPROCESSING: &str = "native-size luminance (0.299 R + 0.587 G + 0.114 B) / 255";

/// Smallest trial count accepted by the error-rate simulation.
pub const MIN_SIMULATION_TRIALS: usize = 10_000;

#[derive(Debug, Error)]
pub enum ComplexityError {
    #[error("class {0} has no feature vectors")]
    EmptyClass(usize),
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("vector has dimension {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("label {label} is not below class count {class_count}")]
    BadLabel { label: usize, class_count: usize },
    #[error("{0} trials is below the minimum of {MIN_SIMULATION_TRIALS}")]
    TooFewTrials(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

pub type Result<T> = std::result::Result<T, ComplexityError>;

/// Class means in feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidModel {
    centroids: Vec<Vec<f64>>,
}

impl CentroidModel {
    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn class_count(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Fits centroids from vectors and their class labels.
    pub fn fit_labeled<V: AsRef<[f64]>>(
        vectors: &[V],
        labels: &[usize],
        class_count: usize,
    ) -> Result<Self> {
        let mut per_class: Vec<Vec<&[f64]>> = vec![Vec::new(); class_count];
        for (v, &label) in vectors.iter().zip(labels) {
            per_class
                .get_mut(label)
                .ok_or(ComplexityError::BadLabel { label, class_count })?
                .push(v.as_ref());
        }
        fit_centroids(&per_class)
    }

    /// Index of the nearest centroid; lowest id wins exact ties.
    pub fn classify(&self, v: &[f64]) -> usize {
        let mut best = 0;
        let mut best_sim = f64::NEG_INFINITY;
        for (i, c) in self.centroids.iter().enumerate() {
            let d = similarity(v, c);
            if d > best_sim {
                best = i;
                best_sim = d;
            }
        }
        best
    }
}

/// Arithmetic mean of each class's vectors, summed left to right.
pub fn fit_centroids<V: AsRef<[f64]>>(per_class: &[Vec<V>]) -> Result<CentroidModel> {
    let dim = per_class
        .iter()
        .flat_map(|c| c.first())
        .map(|v| v.as_ref().len())
        .next()
        .unwrap_or(0);
    let centroids = per_class
        .iter()
        .enumerate()
        .map(|(k, members)| {
            if members.is_empty() {
                return Err(ComplexityError::EmptyClass(k));
            }
            let mut sum = vec![0.0; dim];
            for v in members {
                let v = v.as_ref();
                if v.len() != dim {
                    return Err(ComplexityError::DimensionMismatch {
                        expected: dim,
                        found: v.len(),
                    });
                }
                sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
            }
            let n = members.len() as f64;
            sum.iter_mut().for_each(|s| *s /= n);
            Ok(sum)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CentroidModel { centroids })
}

/// `exp(-‖v − c‖₂)`, in `(0, 1]`.
pub fn similarity(v: &[f64], c: &[f64]) -> f64 {
    debug_assert_eq!(v.len(), c.len());
    let sq: f64 = v.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
    (-sq.sqrt()).exp()
}

/// Complexity of one sample against the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleScore {
    pub c: f64,
    /// Most similar class other than the sample's own; lowest id on ties.
    pub best_rival: usize,
}

impl SampleScore {
    pub fn centroid_correct(&self) -> bool {
        self.c > 0.5
    }
}

pub fn sample_complexity(v: &[f64], own_class: usize, model: &CentroidModel) -> Result<SampleScore> {
    let n = model.class_count();
    if n < 2 {
        return Err(ComplexityError::TooFewClasses(n));
    }
    if own_class >= n {
        return Err(ComplexityError::BadLabel {
            label: own_class,
            class_count: n,
        });
    }
    if v.len() != model.dim() {
        return Err(ComplexityError::DimensionMismatch {
            expected: model.dim(),
            found: v.len(),
        });
    }
    let own = similarity(v, &model.centroids[own_class]);
    let mut best_rival = usize::MAX;
    let mut rival = f64::NEG_INFINITY;
    for (i, c) in model.centroids.iter().enumerate() {
        if i == own_class {
            continue;
        }
        let d = similarity(v, c);
        if d > rival {
            rival = d;
            best_rival = i;
        }
    }
    Ok(SampleScore {
        c: own / (own + rival),
        best_rival,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleComplexity {
    pub id: usize,
    pub class: usize,
    pub c: f64,
    pub rival: usize,
    pub correct: bool,
}

fn round6<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64((v * 1e6).round() / 1e6)
}

/// Result of scoring a dataset. `c_all` keeps full precision in memory and
/// is written with 6 decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub dataset: String,
    pub l: usize,
    pub class_count: usize,
    #[serde(serialize_with = "round6")]
    pub c_all: f64,
    pub per_class_mean_c: Vec<f64>,
    pub per_sample: Vec<SampleComplexity>,
    pub descriptor_variant: String,
    /// Image handling before description; images are never resized.
    pub preprocessing: String,
}

impl ComplexityReport {
    pub fn accuracy(&self) -> f64 {
        self.per_sample.iter().filter(|s| s.correct).count() as f64 / self.l as f64
    }
}

/// Scores every vector against a fixed model. Output order follows input.
pub fn score_samples<V: AsRef<[f64]> + Sync>(
    vectors: &[V],
    labels: &[usize],
    model: &CentroidModel,
) -> Result<Vec<SampleComplexity>> {
    if vectors.len() != labels.len() {
        return Err(ComplexityError::InvalidArgument(format!(
            "{} vectors but {} labels",
            vectors.len(),
            labels.len()
        )));
    }
    vectors
        .par_iter()
        .zip(labels.par_iter())
        .enumerate()
        .map(|(id, (v, &class))| {
            let s = sample_complexity(v.as_ref(), class, model)?;
            Ok(SampleComplexity {
                id,
                class,
                c: s.c,
                rival: s.best_rival,
                correct: s.centroid_correct(),
            })
        })
        .collect()
}

/// Mean of per-sample scores in input order.
pub fn mean_complexity(scores: &[SampleComplexity]) -> f64 {
    scores.iter().map(|s| s.c).sum::<f64>() / scores.len() as f64
}

/// Fits centroids on the given vectors, scores them, and aggregates.
pub fn complexity_from_features<V: AsRef<[f64]> + Sync>(
    dataset: &str,
    vectors: &[V],
    labels: &[usize],
    class_count: usize,
) -> Result<ComplexityReport> {
    if class_count < 2 {
        return Err(ComplexityError::TooFewClasses(class_count));
    }
    let model = CentroidModel::fit_labeled(vectors, labels, class_count)?;
    let per_sample = score_samples(vectors, labels, &model)?;
    let mut sums = vec![0.0; class_count];
    let mut counts = vec![0usize; class_count];
    for s in &per_sample {
        sums[s.class] += s.c;
        counts[s.class] += 1;
    }
    Ok(ComplexityReport {
        dataset: dataset.to_string(),
        l: per_sample.len(),
        class_count,
        c_all: mean_complexity(&per_sample),
        per_class_mean_c: sums.iter().zip(&counts).map(|(s, &n)| s / n as f64).collect(),
        per_sample,
        descriptor_variant: DESCRIPTOR_VARIANT.to_string(),
        preprocessing: PREPROCESSING.to_string(),
    })
}

/// Extracts descriptors for every sample (in parallel, order preserved).
pub fn extract_features(dataset: &LabeledDataset) -> Result<Vec<FeatureVector>> {
    dataset
        .samples()
        .par_iter()
        .enumerate()
        .map(|(i, s)| Ok(extract_global_descriptor(&s.image)?.with_source_id(i)))
        .collect()
}

/// Full pipeline: descriptors, centroid fit, per-sample and dataset scores.
pub fn dataset_complexity(dataset: &LabeledDataset) -> Result<ComplexityReport> {
    dataset.check_complete()?;
    let features = extract_features(dataset)?;
    let labels: Vec<usize> = dataset.samples().iter().map(|s| s.class_id).collect();
    complexity_from_features(dataset.name(), &features, &labels, dataset.class_count())
}

/// One row of the multi-class error simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRow {
    pub classes: usize,
    pub samples: usize,
    pub errors: usize,
    pub error_rate: f64,
    /// Binomial standard error of `error_rate`.
    pub std_error: f64,
    /// `error_rate / e_2`; `None` when `e_2` is zero.
    pub ratio_to_two: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub separation: f64,
    pub sigma: f64,
    pub trials_per_class: usize,
    pub seed: u64,
    pub rows: Vec<SimulationRow>,
}

/// Centres of a regular simplex with edge `separation`, embedded as scaled
/// basis vectors of R^n (pairwise distance `a·√2`).
fn simplex_centres(n: usize, separation: f64) -> Vec<Vec<f64>> {
    let a = separation / std::f64::consts::SQRT_2;
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { a } else { 0.0 }).collect())
        .collect()
}

fn nearest(point: &[f64], centres: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_sq = f64::INFINITY;
    for (i, c) in centres.iter().enumerate() {
        let sq: f64 = point.iter().zip(c).map(|(p, q)| (p - q) * (p - q)).sum();
        if sq < best_sq {
            best = i;
            best_sq = sq;
        }
    }
    best
}

/// Monte-Carlo error rate of the nearest-centre rule for 2..=`max_classes`
/// mutually equidistant isotropic Gaussian classes, `trials` draws per class.
///
/// Each (class count, class) pair draws from its own ChaCha stream, so the
/// result does not depend on thread scheduling.
pub fn simulate_multiclass_error(
    max_classes: usize,
    separation: f64,
    sigma: f64,
    trials: usize,
    seed: u64,
) -> Result<SimulationReport> {
    if max_classes < 2 {
        return Err(ComplexityError::TooFewClasses(max_classes));
    }
    if trials < MIN_SIMULATION_TRIALS {
        return Err(ComplexityError::TooFewTrials(trials));
    }
    if !(separation >= 0.0 && separation.is_finite() && sigma >= 0.0 && sigma.is_finite()) {
        return Err(ComplexityError::InvalidArgument(
            "separation and sigma must be finite and ≥ 0".into(),
        ));
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| ComplexityError::InvalidArgument(e.to_string()))?;

    let mut rows: Vec<SimulationRow> = Vec::with_capacity(max_classes - 1);
    for n in 2..=max_classes {
        let centres = simplex_centres(n, separation);
        let errors: usize = (0..n)
            .into_par_iter()
            .map(|class| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((n as u64) << 32) | class as u64);
                let mut point = vec![0.0; n];
                let mut wrong = 0;
                for _ in 0..trials {
                    for (p, c) in point.iter_mut().zip(&centres[class]) {
                        *p = c + noise.sample(&mut rng);
                    }
                    if nearest(&point, &centres) != class {
                        wrong += 1;
                    }
                }
                wrong
            })
            .collect::<Vec<_>>()
            .into_iter()
            .sum();
        let samples = n * trials;
        let rate = errors as f64 / samples as f64;
        let e2 = rows.first().map_or(rate, |r| r.error_rate);
        rows.push(SimulationRow {
            classes: n,
            samples,
            errors,
            error_rate: rate,
            std_error: (rate * (1.0 - rate) / samples as f64).sqrt(),
            ratio_to_two: (e2 > 0.0).then(|| rate / e2),
        });
    }
    Ok(SimulationReport {
        separation,
        sigma,
        trials_per_class: trials,
        seed,
        rows,
    })
}
