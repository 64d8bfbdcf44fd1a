//! End-to-end runs: filter, window, extract, scale, train, evaluate.
//!
//! A [`RunConfig`] fully determines every output for a given dataset. Work
//! fans out across recordings and windows with rayon; every merge happens in
//! recording order, so results do not depend on the thread count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arburg::{self, extract_features_with};
use crate::baselines::{self, knn_fit, knn_predict, KnnModel};
use crate::dataio::{
    trim_range, window_offsets, Frame, Gesture, RawRecording, RecordingKey, Side, TrialSplit,
    DATASET_SAMPLE_RATE,
};
use crate::error::{Error, Result};
use crate::evalkit::{confuse, metrics, ConfusionMatrix, EvalReport};
use crate::evm::{self, evm_fit, evm_predict, evm_reduce, EvmModel, Metric};
use crate::feature::{FeatureVector, LabeledDataset};
use crate::preprocess::{apply_chain, default_chain, fit_scaler, FilterSpec, ScalerParams};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub win_len: usize,
    pub step: usize,
    /// Fraction of each recording dropped at the head and at the tail.
    pub trim: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            win_len: 1000,
            step: 500,
            trim: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvmConfig {
    pub metric: Metric,
    pub tail_size: usize,
    /// `None` disables reduction.
    pub cover_threshold: Option<f64>,
    pub reject_threshold: f64,
}

impl Default for EvmConfig {
    fn default() -> Self {
        EvmConfig {
            metric: Metric::Cosine,
            tail_size: evm::DEFAULT_TAIL_SIZE,
            cover_threshold: Some(evm::DEFAULT_COVER_THRESHOLD),
            reject_threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnConfig {
    pub k: usize,
    pub metric: Metric,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: baselines::DEFAULT_K,
            metric: Metric::Cosine,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    #[default]
    Evm,
    Knn,
}

impl ClassifierKind {
    pub fn display_name(self) -> &'static str {
        match self {
            ClassifierKind::Evm => "EVM",
            ClassifierKind::Knn => "KNN",
        }
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "evm" => Ok(ClassifierKind::Evm),
            "knn" => Ok(ClassifierKind::Knn),
            _ => Err(Error::Config(format!("unknown classifier `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub window: WindowConfig,
    pub filters: Vec<FilterSpec>,
    pub order: usize,
    pub include_noise_var: bool,
    pub classifier: ClassifierKind,
    pub evm: EvmConfig,
    pub knn: KnnConfig,
    pub split: TrialSplit,
    /// Majority vote over the windows of each trial before scoring.
    pub vote_per_trial: bool,
    /// Train and evaluate one model per subject.
    pub per_subject: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            window: WindowConfig::default(),
            filters: default_chain(DATASET_SAMPLE_RATE),
            order: arburg::DEFAULT_ORDER,
            include_noise_var: false,
            classifier: ClassifierKind::Evm,
            evm: EvmConfig::default(),
            knn: KnnConfig::default(),
            split: TrialSplit::default(),
            vote_per_trial: false,
            per_subject: false,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("malformed run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.window.win_len == 0 || self.window.step == 0 {
            return bad("window length and step must be >= 1".into());
        }
        if !(0.0..0.5).contains(&self.window.trim) {
            return bad(format!(
                "trim fraction {} outside [0, 0.5)",
                self.window.trim
            ));
        }
        if !(1..=arburg::MAX_ORDER).contains(&self.order) {
            return bad(format!(
                "AR order {} outside 1..={}",
                self.order,
                arburg::MAX_ORDER
            ));
        }
        if self.order >= self.window.win_len {
            return bad(format!(
                "AR order {} needs windows longer than {}",
                self.order, self.window.win_len
            ));
        }
        for f in &self.filters {
            f.validate()?;
        }
        if self.evm.tail_size == 0 {
            return bad("EVM tail size must be >= 1".into());
        }
        if let Some(t) = self.evm.cover_threshold {
            if !(t > 0.0 && t <= 1.0) {
                return bad(format!("cover threshold {t} outside (0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.evm.reject_threshold) {
            return bad(format!(
                "reject threshold {} outside [0, 1]",
                self.evm.reject_threshold
            ));
        }
        if self.knn.k == 0 {
            return bad("KNN k must be >= 1".into());
        }
        self.split
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub key: RecordingKey,
    pub window: usize,
    pub features: FeatureVector,
}

/// Per-window features of a set of recordings, in recording order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

pub fn feature_columns(channels: usize, order: usize, include_noise_var: bool) -> Vec<String> {
    let mut cols = Vec::new();
    for ch in 0..channels {
        cols.extend((1..=order).map(|i| format!("ch{ch}_k{i}")));
        if include_noise_var {
            cols.push(format!("ch{ch}_var"));
        }
    }
    cols
}

const KEY_COLUMNS: [&str; 4] = ["subject", "label", "trial", "window"];

impl FeatureTable {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&KEY_COLUMNS.join(","));
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for row in &self.rows {
            write!(
                out,
                "{},{},{},{}",
                row.key.subject, row.key.label, row.key.trial, row.window
            )
            .unwrap();
            for v in row.features.iter() {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path)
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Structure {
            path: path.to_path_buf(),
            msg: "feature file is empty".into(),
        })?;
        let head: Vec<&str> = header.split(',').map(str::trim).collect();
        if head.len() < 4 || head[..4] != KEY_COLUMNS {
            return Err(Error::Structure {
                path: path.to_path_buf(),
                msg: format!("header must start with {}", KEY_COLUMNS.join(",")),
            });
        }
        let columns: Vec<String> = head[4..].iter().map(|s| s.to_string()).collect();
        let mut rows = Vec::new();
        for (idx, line) in lines {
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                msg,
            };
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != head.len() {
                return Err(parse_err(format!(
                    "expected {} fields, found {}",
                    head.len(),
                    cells.len()
                )));
            }
            let int = |s: &str, what: &str| {
                s.parse::<u32>()
                    .map_err(|_| parse_err(format!("{what} `{s}` is not an integer")))
            };
            let key = RecordingKey {
                subject: int(cells[0], "subject")?,
                label: cells[1]
                    .parse()
                    .map_err(|e: Error| parse_err(e.to_string()))?,
                trial: int(cells[2], "trial")?,
            };
            let window = int(cells[3], "window")? as usize;
            let features = cells[4..]
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| parse_err(format!("`{s}` is not a number")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(FeatureRow {
                key,
                window,
                features: features.into(),
            });
        }
        Ok(FeatureTable { columns, rows })
    }

    pub fn rows_on(&self, split: &TrialSplit, side: Side) -> Vec<&FeatureRow> {
        self.rows
            .iter()
            .filter(|r| split.route(r.key.trial) == Some(side))
            .collect()
    }

    pub fn subjects(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self.rows.iter().map(|r| r.key.subject).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn for_subject(&self, subject: u32) -> FeatureTable {
        FeatureTable {
            columns: self.columns.clone(),
            rows: self
                .rows
                .iter()
                .filter(|r| r.key.subject == subject)
                .cloned()
                .collect(),
        }
    }
}

/// Filters, trims and windows every recording, then extracts Burg
/// reflection coefficients channel by channel. No scaling happens here.
pub fn extract(recordings: &[RawRecording], config: &RunConfig) -> Result<FeatureTable> {
    config.validate()?;
    let channels = recordings.first().map_or(0, RawRecording::num_channels);
    if let Some(r) = recordings.iter().find(|r| r.num_channels() != channels) {
        return Err(Error::Argument(format!(
            "recording {:?} has {} channels, expected {channels}",
            r.key,
            r.num_channels()
        )));
    }
    if let Some(f) = config.filters.first() {
        if let Some(r) = recordings.iter().find(|r| r.sample_rate != f.sample_rate) {
            return Err(Error::Config(format!(
                "filters are designed for {} Hz but recording {:?} is sampled at {} Hz",
                f.sample_rate, r.key, r.sample_rate
            )));
        }
    }
    let per_recording: Vec<Vec<FeatureRow>> = recordings
        .par_iter()
        .map(|rec| extract_recording(rec, config))
        .collect::<Result<_>>()?;
    Ok(FeatureTable {
        columns: feature_columns(channels, config.order, config.include_noise_var),
        rows: per_recording.into_iter().flatten().collect(),
    })
}

fn extract_recording(rec: &RawRecording, config: &RunConfig) -> Result<Vec<FeatureRow>> {
    let filtered = rec
        .channels
        .iter()
        .map(|c| apply_chain(c, &config.filters))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Argument(format!("filtering {:?}: {e}", rec.key)))?;
    let range = trim_range(rec.len(), config.window.trim);
    let offsets = window_offsets(range.len(), config.window.win_len, config.window.step);
    if offsets.is_empty() {
        log::warn!("recording {:?} is too short for a single window", rec.key);
    }
    offsets
        .into_iter()
        .enumerate()
        .map(|(window, off)| {
            let start = range.start + off;
            let frames: Vec<Frame<'_>> = filtered
                .iter()
                .enumerate()
                .map(|(ch, signal)| Frame {
                    samples: &signal[start..start + config.window.win_len],
                    channel_id: ch,
                    offset: start,
                    origin: Some(rec.key),
                })
                .collect();
            let features = extract_features_with(&frames, config.order, config.include_noise_var)
                .map_err(|e| match e {
                Error::Degenerate(msg) => {
                    Error::Degenerate(format!("{:?} window {window}: {msg}", rec.key))
                }
                other => other,
            })?;
            Ok(FeatureRow {
                key: rec.key,
                window,
                features,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierModel {
    Evm(EvmModel),
    Knn(KnnModel),
}

/// Everything needed to classify raw recordings: effective configuration,
/// scaler fitted on the training split, and the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub format_version: u32,
    pub config: RunConfig,
    pub feature_columns: Vec<String>,
    pub classes: Vec<String>,
    pub scaler: ScalerParams,
    pub model: ClassifierModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub class_counts: Vec<(String, usize)>,
    /// Extreme vectors before reduction (or stored points for KNN).
    pub candidates: usize,
    /// Extreme vectors after reduction.
    pub kept: usize,
}

impl Bundle {
    pub fn classifier_name(&self) -> &'static str {
        match self.model {
            ClassifierModel::Evm(_) => "EVM",
            ClassifierModel::Knn(_) => "KNN",
        }
    }

    pub fn model_size(&self) -> usize {
        match &self.model {
            ClassifierModel::Evm(m) => m.num_extreme_vectors(),
            ClassifierModel::Knn(m) => m.points.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.scaler.validate()?;
        if self.scaler.dim() != self.feature_columns.len() {
            return Err(Error::Config("scaler and feature columns disagree".into()));
        }
        match &self.model {
            ClassifierModel::Evm(m) => {
                m.validate()?;
                if m.class_labels() != self.classes {
                    return Err(Error::Config(
                        "EVM classes differ from bundle classes".into(),
                    ));
                }
            }
            ClassifierModel::Knn(m) => {
                m.validate()?;
                if m.classes != self.classes {
                    return Err(Error::Config(
                        "KNN classes differ from bundle classes".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        Ok(serde_json::to_string_pretty(self).expect("bundle serialises"))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut bundle: Bundle = evm::parse_json(text)?;
        if bundle.format_version != BUNDLE_FORMAT_VERSION {
            return Err(Error::ModelLoad {
                field: "format_version".into(),
                msg: format!(
                    "expected version {BUNDLE_FORMAT_VERSION}, found {}",
                    bundle.format_version
                ),
            });
        }
        if let ClassifierModel::Evm(m) = &mut bundle.model {
            for (l, class) in m.classes.iter_mut().enumerate() {
                for ev in &mut class.extreme_vectors {
                    ev.class_label = l;
                }
            }
        }
        bundle.validate().map_err(|e| Error::ModelLoad {
            field: "model".into(),
            msg: e.to_string(),
        })?;
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Predicted class index per feature vector (already unscaled input).
    pub fn predict(&self, features: &[FeatureVector]) -> Result<Vec<Option<usize>>> {
        features
            .par_iter()
            .map(|f| {
                let x = self.scaler.transform(f)?;
                match &self.model {
                    ClassifierModel::Evm(m) => Ok(evm_predict(m, &x)?.label),
                    ClassifierModel::Knn(m) => Ok(Some(knn_predict(m, &x)?)),
                }
            })
            .collect()
    }
}

fn class_list(rows: &[&FeatureRow]) -> Vec<Gesture> {
    let mut g: Vec<Gesture> = rows.iter().map(|r| r.key.label).collect();
    g.sort_unstable();
    g.dedup();
    g
}

/// Fits the scaler and classifier on the training trials of `table`.
pub fn train(table: &FeatureTable, config: &RunConfig) -> Result<(Bundle, TrainSummary)> {
    config.validate()?;
    let rows = table.rows_on(&config.split, Side::Train);
    if rows.is_empty() {
        return Err(Error::Argument("training split is empty".into()));
    }
    let gestures = class_list(&rows);
    let classes: Vec<String> = gestures.iter().map(|g| g.to_string()).collect();
    let raw: Vec<FeatureVector> = rows.iter().map(|r| r.features.clone()).collect();
    let scaler = fit_scaler(&raw)?;
    let scaled = raw
        .iter()
        .map(|f| scaler.transform(f))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = rows
        .iter()
        .map(|r| gestures.binary_search(&r.key.label).unwrap())
        .collect();
    let dataset = LabeledDataset::new(scaled, labels, classes.clone())?;
    let class_counts = classes
        .iter()
        .cloned()
        .zip(dataset.class_counts())
        .collect();

    let (model, candidates, kept) = match config.classifier {
        ClassifierKind::Evm => {
            let full = evm_fit(&dataset, config.evm.tail_size, config.evm.metric)?;
            let candidates = full.num_extreme_vectors();
            let model = match config.evm.cover_threshold {
                Some(t) => evm_reduce(&full, t)?,
                None => full,
            }
            .with_reject_threshold(config.evm.reject_threshold);
            let kept = model.num_extreme_vectors();
            (ClassifierModel::Evm(model), candidates, kept)
        }
        ClassifierKind::Knn => {
            let model = knn_fit(&dataset, config.knn.k, config.knn.metric)?;
            let n = model.points.len();
            (ClassifierModel::Knn(model), n, n)
        }
    };
    let bundle = Bundle {
        format_version: BUNDLE_FORMAT_VERSION,
        config: config.clone(),
        feature_columns: table.columns.clone(),
        classes,
        scaler,
        model,
    };
    Ok((
        bundle,
        TrainSummary {
            class_counts,
            candidates,
            kept,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub report: EvalReport,
    /// `(row key, window or -1 when voting, truth, prediction)` in row order.
    pub predictions: Vec<(RecordingKey, Option<usize>, usize, Option<usize>)>,
}

/// Scores `bundle` on the rows of `table` that fall on `side` of the
/// bundle's trial split.
pub fn evaluate(bundle: &Bundle, table: &FeatureTable, side: Side) -> Result<Evaluation> {
    if table.columns != bundle.feature_columns {
        return Err(Error::Config(format!(
            "feature columns ({} dims) do not match the bundle ({} dims); re-extract with the bundle's configuration",
            table.dim(),
            bundle.feature_columns.len()
        )));
    }
    let rows = table.rows_on(&bundle.config.split, side);
    if rows.is_empty() {
        return Err(Error::Argument(format!("{side:?} split is empty")));
    }
    let truth = rows
        .iter()
        .map(|r| {
            bundle
                .classes
                .iter()
                .position(|c| *c == r.key.label.code())
                .ok_or_else(|| {
                    Error::Argument(format!("label {} was not seen in training", r.key.label))
                })
        })
        .collect::<Result<Vec<usize>>>()?;
    let feats: Vec<FeatureVector> = rows.iter().map(|r| r.features.clone()).collect();
    let predicted = bundle.predict(&feats)?;

    let predictions: Vec<_> = if bundle.config.vote_per_trial {
        let mut groups: BTreeMap<RecordingKey, (usize, Vec<Option<usize>>)> = BTreeMap::new();
        for ((r, &t), &p) in rows.iter().zip(&truth).zip(&predicted) {
            groups
                .entry(r.key)
                .or_insert_with(|| (t, Vec::new()))
                .1
                .push(p);
        }
        groups
            .into_iter()
            .map(|(key, (t, preds))| (key, None, t, majority(&preds, bundle.classes.len())))
            .collect()
    } else {
        rows.iter()
            .zip(&truth)
            .zip(&predicted)
            .map(|((r, &t), &p)| (r.key, Some(r.window), t, p))
            .collect()
    };
    let t: Vec<usize> = predictions.iter().map(|p| p.2).collect();
    let p: Vec<Option<usize>> = predictions.iter().map(|p| p.3).collect();
    let confusion = confuse(&t, &p, &bundle.classes)?;
    let report = metrics(&confusion)?;
    Ok(Evaluation {
        confusion,
        report,
        predictions,
    })
}

/// Most frequent non-rejected label; smallest index on ties.
fn majority(preds: &[Option<usize>], classes: usize) -> Option<usize> {
    let mut votes = vec![0usize; classes];
    for p in preds.iter().flatten() {
        votes[*p] += 1;
    }
    let best = (0..classes).fold(0, |b, c| if votes[c] > votes[b] { c } else { b });
    (votes[best] > 0).then_some(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub evaluation: Evaluation,
    pub model_size: usize,
    /// Test accuracy per subject when run per subject.
    pub per_subject: Vec<(u32, f64)>,
}

impl ExperimentResult {
    /// Headline accuracy: pooled, or the mean over subjects in per-subject mode.
    pub fn accuracy(&self) -> f64 {
        if self.per_subject.is_empty() {
            self.evaluation.report.accuracy
        } else {
            self.per_subject.iter().map(|s| s.1).sum::<f64>() / self.per_subject.len() as f64
        }
    }
}

/// Train on the training trials and score the test trials of an extracted
/// table, pooled or per subject as configured.
pub fn run_on_table(table: &FeatureTable, config: &RunConfig) -> Result<ExperimentResult> {
    if !config.per_subject {
        let (bundle, _) = train(table, config)?;
        let evaluation = evaluate(&bundle, table, Side::Test)?;
        return Ok(ExperimentResult {
            evaluation,
            model_size: bundle.model_size(),
            per_subject: Vec::new(),
        });
    }
    let mut per_subject = Vec::new();
    let mut truth = Vec::new();
    let mut preds = Vec::new();
    let mut all = Vec::new();
    let mut model_size = 0;
    let mut classes = Vec::new();
    for subject in table.subjects() {
        let sub = table.for_subject(subject);
        let (bundle, _) = train(&sub, config)?;
        let ev = evaluate(&bundle, &sub, Side::Test)?;
        per_subject.push((subject, ev.report.accuracy));
        model_size += bundle.model_size();
        if classes.is_empty() {
            classes = Gesture::ALL
                .iter()
                .map(|g| g.to_string())
                .collect::<Vec<_>>();
        }
        // re-index into the full gesture list so subjects can be pooled
        let map = |i: usize| {
            classes
                .iter()
                .position(|c| *c == bundle.classes[i])
                .unwrap()
        };
        for p in ev.predictions {
            truth.push(map(p.2));
            preds.push(p.3.map(map));
            all.push((p.0, p.1, map(p.2), p.3.map(map)));
        }
    }
    let confusion = confuse(&truth, &preds, &classes)?;
    let report = metrics(&confusion)?;
    Ok(ExperimentResult {
        evaluation: Evaluation {
            confusion,
            report,
            predictions: all,
        },
        model_size,
        per_subject,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    P,
    K,
    Tau,
    Cover,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p" | "order" => Ok(SweepParam::P),
            "k" => Ok(SweepParam::K),
            "tau" | "tail" | "tail_size" => Ok(SweepParam::Tau),
            "cover" | "cover_threshold" => Ok(SweepParam::Cover),
            _ => Err(Error::Config(format!("unknown sweep parameter `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub accuracy: f64,
    pub model_size: usize,
}

fn as_count(v: f64, what: &str) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::Config(format!(
            "{what} value {v} is not a non-negative integer"
        )))
    }
}

/// Applies one sweep value to a copy of `config`.
pub fn with_param(config: &RunConfig, param: SweepParam, value: f64) -> Result<RunConfig> {
    let mut cfg = config.clone();
    match param {
        SweepParam::P => cfg.order = as_count(value, "p")?,
        SweepParam::K => {
            cfg.classifier = ClassifierKind::Knn;
            cfg.knn.k = as_count(value, "k")?;
        }
        SweepParam::Tau => {
            cfg.classifier = ClassifierKind::Evm;
            cfg.evm.tail_size = as_count(value, "tau")?;
        }
        SweepParam::Cover => {
            cfg.classifier = ClassifierKind::Evm;
            cfg.evm.cover_threshold = Some(value);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One train + test run per value. Sweeping `p` re-extracts features; every
/// other parameter reuses one extraction.
pub fn sweep(
    recordings: &[RawRecording],
    config: &RunConfig,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let shared = match param {
        SweepParam::P => None,
        _ => Some(extract(recordings, config)?),
    };
    values
        .iter()
        .map(|&value| {
            let cfg = with_param(config, param, value)?;
            let table = match &shared {
                Some(t) => t.clone(),
                None => extract(recordings, &cfg)?,
            };
            let res = run_on_table(&table, &cfg)?;
            Ok(SweepRow {
                value,
                accuracy: res.accuracy(),
                model_size: res.model_size,
            })
        })
        .collect()
}

pub fn sweep_csv(param: SweepParam, rows: &[SweepRow]) -> String {
    let name = serde_json::to_value(param).unwrap();
    let mut out = format!("{},accuracy,model_size\n", name.as_str().unwrap());
    for r in rows {
        writeln!(out, "{},{},{}", r.value, r.accuracy, r.model_size).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{synth_recording, SynthConfig};

    fn tiny_recordings(subjects: u32) -> Vec<RawRecording> {
        let cfg = SynthConfig {
            subjects,
            samples: 4000,
            ..SynthConfig::default()
        };
        let mut out = Vec::new();
        for subject in 1..=subjects {
            for &label in &Gesture::ALL[..3] {
                for trial in 1..=6 {
                    out.push(synth_recording(
                        &cfg,
                        RecordingKey {
                            subject,
                            label,
                            trial,
                        },
                        2,
                    ));
                }
            }
        }
        out
    }

    fn small_config() -> RunConfig {
        RunConfig {
            window: WindowConfig {
                win_len: 400,
                step: 400,
                trim: 0.1,
            },
            order: 4,
            ..RunConfig::default()
        }
    }

    #[test]
    fn default_config_matches_published_hyperparameters() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.evm.metric, Metric::Cosine);
        assert_eq!(cfg.evm.tail_size, 27);
        assert_eq!(cfg.evm.cover_threshold, Some(0.3));
        assert_eq!(cfg.split, TrialSplit::new(1..=4, 5..=6).unwrap());
        cfg.validate().unwrap();
        let round = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(round, cfg);
        assert!(RunConfig::from_json(r#"{"order": 0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"ordr": 3}"#).is_err());
        assert_eq!(RunConfig::from_json(r#"{"order": 6}"#).unwrap().order, 6);
    }

    #[test]
    fn extraction_layout_and_csv_round_trip() {
        let recs = tiny_recordings(1);
        let cfg = small_config();
        let table = extract(&recs, &cfg).unwrap();
        // 4000 samples, 10% trimmed each side → 3200, windows of 400 → 8
        assert_eq!(table.rows.len(), recs.len() * 8);
        assert_eq!(table.dim(), 8);
        assert_eq!(table.columns[0], "ch0_k1");
        let csv = table.to_csv();
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 4 + 2 * 4);
        let back = FeatureTable::from_csv(&csv, Path::new("mem")).unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn train_and_evaluate_pooled_and_voted() {
        let table = extract(&tiny_recordings(1), &small_config()).unwrap();
        let (bundle, summary) = train(&table, &small_config()).unwrap();
        assert_eq!(summary.candidates, 3 * 4 * 8);
        assert!(summary.kept <= summary.candidates);
        let ev = evaluate(&bundle, &table, Side::Test).unwrap();
        assert_eq!(ev.report.total, 3 * 2 * 8);
        assert!(ev.report.accuracy > 80.0, "{}", ev.report.accuracy);

        let mut voting = bundle.clone();
        voting.config.vote_per_trial = true;
        let voted = evaluate(&voting, &table, Side::Test).unwrap();
        assert_eq!(voted.report.total, 3 * 2);

        let text = bundle.to_json().unwrap();
        assert_eq!(Bundle::from_json(&text).unwrap(), bundle);
    }

    #[test]
    fn no_reduction_keeps_every_training_window() {
        let mut cfg = small_config();
        cfg.evm.cover_threshold = None;
        let table = extract(&tiny_recordings(1), &cfg).unwrap();
        let (bundle, s) = train(&table, &cfg).unwrap();
        assert_eq!(s.kept, 3 * 4 * 8);
        assert_eq!(bundle.model_size(), s.kept);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let recs = tiny_recordings(1);
        let table = extract(&recs, &small_config()).unwrap();
        let (bundle, _) = train(&table, &small_config()).unwrap();
        let mut other = small_config();
        other.order = 3;
        let t3 = extract(&recs, &other).unwrap();
        assert!(matches!(
            evaluate(&bundle, &t3, Side::Test),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn empty_test_split_is_argument_error() {
        let table = extract(&tiny_recordings(1), &small_config()).unwrap();
        let mut cfg = small_config();
        cfg.split = TrialSplit::new(1..=6, []).unwrap();
        let (bundle, _) = train(&table, &cfg).unwrap();
        assert!(matches!(
            evaluate(&bundle, &table, Side::Test),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn per_subject_mode_averages_subjects() {
        let table = extract(&tiny_recordings(2), &small_config()).unwrap();
        let mut cfg = small_config();
        cfg.per_subject = true;
        let res = run_on_table(&table, &cfg).unwrap();
        assert_eq!(res.per_subject.len(), 2);
        let mean = (res.per_subject[0].1 + res.per_subject[1].1) / 2.0;
        assert_eq!(res.accuracy(), mean);
    }

    #[test]
    fn sweeps() {
        let recs = tiny_recordings(1);
        let cfg = small_config();
        let rows = sweep(&recs, &cfg, SweepParam::P, &[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(rows.len(), 3);
        let single = sweep(&recs, &cfg, SweepParam::Tau, &[27.0]).unwrap();
        let direct = run_on_table(&extract(&recs, &cfg).unwrap(), &cfg).unwrap();
        assert_eq!(single[0].accuracy, direct.accuracy());
        assert!(sweep(&recs, &cfg, SweepParam::K, &[1.5]).is_err());
        let csv = sweep_csv(SweepParam::Tau, &single);
        assert!(csv.starts_with("tau,accuracy,model_size\n27,"));
    }

    #[test]
    fn majority_vote_rules() {
        assert_eq!(majority(&[Some(1), Some(0), Some(1)], 3), Some(1));
        assert_eq!(majority(&[Some(2), Some(0)], 3), Some(0));
        assert_eq!(majority(&[None, None], 3), None);
    }
}
