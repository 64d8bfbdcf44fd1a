//! Extreme Value Machine.
//!
//! Every training point becomes a candidate extreme vector: the `tail_size`
//! nearest points of other classes are taken, their distances halved (the
//! margin lies halfway to a rival), and a two-parameter Weibull is fitted to
//! those margins by maximum likelihood. A query at distance `d` from the
//! anchor is included with probability `exp(-(d / scale)^shape)`. A class
//! scores the best inclusion probability over its extreme vectors and the
//! query goes to the highest-scoring class.
//!
//! Greedy set cover then keeps, per class, a small subset of vectors whose
//! inclusion regions still cover every training point of the class at the
//! cover threshold.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::{FeatureVector, LabeledDataset};

pub const DEFAULT_TAIL_SIZE: usize = 27;
pub const DEFAULT_COVER_THRESHOLD: f64 = 0.3;
pub const MODEL_FORMAT_VERSION: u32 = 1;

const WEIBULL_TOL: f64 = 1e-9;
const WEIBULL_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            _ => Err(Error::Argument(format!("unknown metric `{s}`"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Euclidean distance, or cosine distance `1 - cos(a, b)` clamped to `[0, 2]`.
pub fn distance(a: &[f64], b: &[f64], metric: Metric) -> Result<f64> {
    check_dims(a, b)?;
    match metric {
        Metric::Euclidean => Ok(a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()),
        Metric::Cosine => {
            let (na, nb) = (norm(a), norm(b));
            if na == 0.0 || nb == 0.0 {
                return Err(Error::Degenerate("cosine distance of a zero vector".into()));
            }
            Ok(cosine_with_norms(a, na, b, nb))
        }
    }
}

fn cosine_with_norms(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (1.0 - dot(a, b) / (na * nb)).clamp(0.0, 2.0)
}

/// Points with their norms cached for repeated distance evaluation.
struct Prepared<'a> {
    points: Vec<&'a [f64]>,
    norms: Vec<f64>,
    metric: Metric,
}

impl<'a> Prepared<'a> {
    fn new(points: Vec<&'a [f64]>, metric: Metric) -> Result<Self> {
        let norms: Vec<f64> = points.iter().map(|p| norm(p)).collect();
        if metric == Metric::Cosine {
            if let Some(i) = norms.iter().position(|&n| n == 0.0) {
                return Err(Error::Degenerate(format!(
                    "point {i} is the zero vector, undefined under the cosine metric"
                )));
            }
        }
        Ok(Prepared {
            points,
            norms,
            metric,
        })
    }

    fn dist(&self, i: usize, j: usize) -> f64 {
        match self.metric {
            Metric::Euclidean => self.points[i]
                .iter()
                .zip(self.points[j])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Metric::Cosine => {
                cosine_with_norms(self.points[i], self.norms[i], self.points[j], self.norms[j])
            }
        }
    }
}

/// Two-parameter Weibull (location fixed at zero).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullParams {
    pub shape: f64,
    pub scale: f64,
}

impl WeibullParams {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        let p = WeibullParams { shape, scale };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shape > 0.0
            && self.shape.is_finite()
            && self.scale > 0.0
            && self.scale.is_finite())
        {
            return Err(Error::Argument(format!(
                "Weibull shape {} and scale {} must be positive and finite",
                self.shape, self.scale
            )));
        }
        Ok(())
    }

    pub fn shift(&self) -> f64 {
        0.0
    }

    /// Survival function `exp(-(d / scale)^shape)`.
    pub fn inclusion(&self, d: f64) -> f64 {
        if d <= 0.0 {
            return 1.0;
        }
        (-(d / self.scale).powf(self.shape)).exp()
    }

    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        let (k, l) = (self.shape, self.scale);
        samples
            .iter()
            .map(|&x| k.ln() - l.ln() + (k - 1.0) * (x / l).ln() - (x / l).powf(k))
            .sum()
    }
}

/// Maximum-likelihood Weibull fit.
///
/// Solves the profile equation
/// `sum x^k ln x / sum x^k - 1/k - mean(ln x) = 0` for the shape by a
/// bracketed Newton iteration (bisection whenever a step leaves the bracket),
/// then sets `scale = (mean x^k)^(1/k)`. Samples are normalised by their
/// maximum first so powers stay bounded.
pub fn weibull_fit(samples: &[f64]) -> Result<WeibullParams> {
    if samples.len() < 2 {
        return Err(Error::Argument(format!(
            "Weibull fit needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    if let Some(x) = samples.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(Error::Argument(format!(
            "Weibull samples must be positive, got {x}"
        )));
    }
    let max = samples.iter().copied().fold(f64::MIN, f64::max);
    let min = samples.iter().copied().fold(f64::MAX, f64::min);
    if max == min {
        return Err(Error::Degenerate(format!(
            "all {} samples equal {max}",
            samples.len()
        )));
    }
    let logs: Vec<f64> = samples.iter().map(|x| (x / max).ln()).collect();
    let n = logs.len() as f64;
    let mean_log = logs.iter().sum::<f64>() / n;
    let sd_log = (logs.iter().map(|l| (l - mean_log).powi(2)).sum::<f64>() / n).sqrt();

    // value and derivative of the profile equation at shape k
    let profile = |k: f64| {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &l in &logs {
            let w = (k * l).exp();
            s0 += w;
            s1 += w * l;
            s2 += w * l * l;
        }
        let g = s1 / s0 - 1.0 / k - mean_log;
        let dg = (s2 * s0 - s1 * s1) / (s0 * s0) + 1.0 / (k * k);
        (g, dg)
    };

    let mut k = if sd_log > 0.0 {
        std::f64::consts::PI / (6f64.sqrt() * sd_log)
    } else {
        1.0
    };
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut trace = Vec::with_capacity(WEIBULL_MAX_ITER);
    let mut converged = false;
    for _ in 0..WEIBULL_MAX_ITER {
        let (g, dg) = profile(k);
        trace.push(k);
        if g == 0.0 {
            converged = true;
            break;
        }
        if g < 0.0 {
            lo = lo.max(k);
        } else {
            hi = hi.min(k);
        }
        let mut next = k - g / dg;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                2.0 * k
            };
        }
        let step = (next - k).abs();
        k = next;
        if step < WEIBULL_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        let tail: Vec<String> = trace
            .iter()
            .rev()
            .take(5)
            .map(|k| format!("{k:.12}"))
            .collect();
        return Err(Error::Numeric(format!(
            "Weibull shape did not converge in {WEIBULL_MAX_ITER} iterations; last iterates {}",
            tail.join(", ")
        )));
    }
    let mean_pow = logs.iter().map(|l| (k * l).exp()).sum::<f64>() / n;
    let scale = max * mean_pow.powf(1.0 / k);
    WeibullParams::new(k, scale).map_err(|e| Error::Numeric(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremeVector {
    pub anchor: FeatureVector,
    #[serde(flatten)]
    pub weibull: WeibullParams,
    /// Position of the anchor in the training set.
    pub source_index: usize,
    #[serde(skip)]
    pub class_label: usize,
}

/// Probability that `query` falls inside the extreme vector's region.
pub fn psi(ev: &ExtremeVector, query: &[f64], metric: Metric) -> Result<f64> {
    Ok(ev.weibull.inclusion(distance(&ev.anchor, query, metric)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    pub label: String,
    pub extreme_vectors: Vec<ExtremeVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvmModel {
    pub metric: Metric,
    pub tail_size: usize,
    /// `None` until [`evm_reduce`] has run.
    pub cover_threshold: Option<f64>,
    pub reject_threshold: f64,
    pub dim: usize,
    pub classes: Vec<ClassModel>,
    /// Training points without an extreme vector (zero margin or a
    /// degenerate tail).
    #[serde(default)]
    pub skipped_points: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// Class index, or `None` when rejected as unknown.
    pub label: Option<usize>,
    pub probability: f64,
}

impl EvmModel {
    pub fn num_extreme_vectors(&self) -> usize {
        self.classes.iter().map(|c| c.extreme_vectors.len()).sum()
    }

    pub fn class_labels(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.label.clone()).collect()
    }

    pub fn with_reject_threshold(mut self, threshold: f64) -> Self {
        self.reject_threshold = threshold;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.tail_size == 0 {
            return Err(Error::Argument("tail size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.reject_threshold) {
            return Err(Error::Argument(format!(
                "reject threshold {} outside [0, 1]",
                self.reject_threshold
            )));
        }
        if let Some(t) = self.cover_threshold {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Argument(format!(
                    "cover threshold {t} outside (0, 1]"
                )));
            }
        }
        for class in &self.classes {
            if class.extreme_vectors.is_empty() {
                return Err(Error::Argument(format!(
                    "class `{}` has no extreme vectors",
                    class.label
                )));
            }
            for ev in &class.extreme_vectors {
                if ev.anchor.dim() != self.dim {
                    return Err(Error::Argument(format!(
                        "class `{}` anchor has dimension {} but the model has {}",
                        class.label,
                        ev.anchor.dim(),
                        self.dim
                    )));
                }
                ev.weibull.validate()?;
            }
        }
        Ok(())
    }

    fn relabel(&mut self) {
        for (l, class) in self.classes.iter_mut().enumerate() {
            for ev in &mut class.extreme_vectors {
                ev.class_label = l;
            }
        }
    }

    /// Best inclusion probability per class.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Argument(format!(
                "query dimension {} does not match model dimension {}",
                x.len(),
                self.dim
            )));
        }
        let xn = norm(x);
        if self.metric == Metric::Cosine && xn == 0.0 {
            return Err(Error::Degenerate("cosine distance of a zero vector".into()));
        }
        self.classes
            .iter()
            .map(|c| {
                c.extreme_vectors.iter().try_fold(0.0f64, |best, ev| {
                    let d = match self.metric {
                        Metric::Cosine => cosine_with_norms(&ev.anchor, norm(&ev.anchor), x, xn),
                        Metric::Euclidean => distance(&ev.anchor, x, Metric::Euclidean)?,
                    };
                    Ok(best.max(ev.weibull.inclusion(d)))
                })
            })
            .collect()
    }
}

/// Fits one candidate extreme vector per training point.
pub fn evm_fit(train: &LabeledDataset, tail_size: usize, metric: Metric) -> Result<EvmModel> {
    if tail_size == 0 {
        return Err(Error::Argument("tail size must be >= 1".into()));
    }
    let counts = train.class_counts();
    if counts.len() < 2 {
        return Err(Error::Argument(format!(
            "EVM needs at least 2 classes, got {}",
            counts.len()
        )));
    }
    if let Some(l) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Argument(format!(
            "class `{}` has no training points",
            train.classes()[l]
        )));
    }
    let labels = train.labels();
    let prepared = Prepared::new(
        train.features().iter().map(|f| f.as_slice()).collect(),
        metric,
    )?;

    let fits: Vec<std::result::Result<WeibullParams, String>> = (0..train.len())
        .into_par_iter()
        .map(|i| {
            let mut dists: Vec<f64> = (0..train.len())
                .filter(|&j| labels[j] != labels[i])
                .map(|j| prepared.dist(i, j))
                .collect();
            let tail = tail_size.min(dists.len());
            if tail < dists.len() {
                dists.select_nth_unstable_by(tail - 1, f64::total_cmp);
                dists.truncate(tail);
            }
            dists.sort_by(f64::total_cmp);
            let margins: Vec<f64> = dists.iter().map(|d| d / 2.0).collect();
            fit_margins(&margins)
        })
        .collect();

    let mut classes: Vec<ClassModel> = train
        .classes()
        .iter()
        .map(|label| ClassModel {
            label: label.clone(),
            extreme_vectors: Vec::new(),
        })
        .collect();
    let mut skipped_points = Vec::new();
    for (i, fit) in fits.into_iter().enumerate() {
        match fit {
            Ok(weibull) => classes[labels[i]].extreme_vectors.push(ExtremeVector {
                anchor: train.features()[i].clone(),
                weibull,
                source_index: i,
                class_label: labels[i],
            }),
            Err(reason) => {
                log::warn!("training point {i} skipped: {reason}");
                skipped_points.push(i);
            }
        }
    }
    if let Some(c) = classes.iter().find(|c| c.extreme_vectors.is_empty()) {
        return Err(Error::Degenerate(format!(
            "every training point of class `{}` was skipped",
            c.label
        )));
    }
    Ok(EvmModel {
        metric,
        tail_size,
        cover_threshold: None,
        reject_threshold: 0.0,
        dim: train.dim(),
        classes,
        skipped_points,
    })
}

fn fit_margins(margins: &[f64]) -> std::result::Result<WeibullParams, String> {
    if margins.first().is_none_or(|&m| m <= 0.0) {
        return Err("zero margin to a point of another class".into());
    }
    if margins.len() == 1 {
        // a single margin carries no spread: exponential tail at that scale
        return Ok(WeibullParams {
            shape: 1.0,
            scale: margins[0],
        });
    }
    weibull_fit(margins).map_err(|e| e.to_string())
}

/// Greedy set cover. `covers[i][j]` says candidate `i` covers element `j`.
/// Repeatedly picks the candidate covering the most uncovered elements,
/// lowest index on ties, until nothing more can be covered. Returns the
/// picks in selection order.
pub fn greedy_cover(covers: &[Vec<bool>]) -> Vec<usize> {
    let n = covers.first().map_or(0, Vec::len);
    let mut covered = vec![false; n];
    let mut picked = Vec::new();
    loop {
        let mut best: Option<(usize, usize)> = None;
        for (i, row) in covers.iter().enumerate() {
            let gain = row
                .iter()
                .zip(&covered)
                .filter(|(&c, &done)| c && !done)
                .count();
            if gain > 0 && best.is_none_or(|(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        let Some((i, _)) = best else { break };
        picked.push(i);
        for (done, &c) in covered.iter_mut().zip(&covers[i]) {
            *done |= c;
        }
    }
    picked
}

/// Keeps, per class, a greedy cover of the class's extreme vectors: vector
/// `i` covers vector `j` when `psi_i(anchor_j) >= cover_threshold`.
pub fn evm_reduce(model: &EvmModel, cover_threshold: f64) -> Result<EvmModel> {
    if !(cover_threshold > 0.0 && cover_threshold <= 1.0) {
        return Err(Error::Argument(format!(
            "cover threshold {cover_threshold} outside (0, 1]"
        )));
    }
    let classes = model
        .classes
        .par_iter()
        .map(|class| {
            let evs = &class.extreme_vectors;
            let prepared = Prepared::new(
                evs.iter().map(|e| e.anchor.as_slice()).collect(),
                model.metric,
            )?;
            let covers: Vec<Vec<bool>> = (0..evs.len())
                .map(|i| {
                    (0..evs.len())
                        .map(|j| {
                            i == j
                                || evs[i].weibull.inclusion(prepared.dist(i, j)) >= cover_threshold
                        })
                        .collect()
                })
                .collect();
            let mut keep = greedy_cover(&covers);
            keep.sort_unstable();
            Ok(ClassModel {
                label: class.label.clone(),
                extreme_vectors: keep.into_iter().map(|i| evs[i].clone()).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvmModel {
        classes,
        cover_threshold: Some(cover_threshold),
        ..model.clone()
    })
}

/// Highest-scoring class, lowest index on ties; `None` when the best score
/// is below the model's reject threshold.
pub fn evm_predict(model: &EvmModel, x: &[f64]) -> Result<Prediction> {
    let scores = model.scores(x)?;
    let mut best = 0;
    for (l, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = l;
        }
    }
    let probability = scores[best];
    let label = (probability >= model.reject_threshold).then_some(best);
    Ok(Prediction { label, probability })
}

#[derive(Serialize, Deserialize)]
struct EvmFile<M> {
    format_version: u32,
    evm: M,
}

pub fn model_to_json(model: &EvmModel) -> Result<String> {
    model.validate()?;
    Ok(serde_json::to_string_pretty(&EvmFile {
        format_version: MODEL_FORMAT_VERSION,
        evm: model,
    })
    .expect("model serialises"))
}

pub fn model_from_json(text: &str) -> Result<EvmModel> {
    let file: EvmFile<EvmModel> = parse_json(text)?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::ModelLoad {
            field: "format_version".into(),
            msg: format!(
                "expected version {MODEL_FORMAT_VERSION}, found {}",
                file.format_version
            ),
        });
    }
    let mut model = file.evm;
    model.relabel();
    model.validate().map_err(|e| Error::ModelLoad {
        field: "evm".into(),
        msg: e.to_string(),
    })?;
    Ok(model)
}

pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::ModelLoad {
            field: if path == "." { "<root>".into() } else { path },
            msg: e.into_inner().to_string(),
        }
    })
}

pub fn save_model(model: &EvmModel, path: &Path) -> Result<()> {
    let text = model_to_json(model)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<EvmModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}
