//! Dataset ingestion, windowing, trial splits and synthetic fixtures.
//!
//! Recordings live on disk as CSV files (one row per sample, one column per
//! channel). A JSON manifest maps every `(subject, label, trial)` tuple to a
//! file and to the columns that hold its channels. [`scan_manifest`] builds a
//! manifest from the published dataset's file naming so that a bare directory
//! can be used directly.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::{FeatureVector, LabeledDataset};

/// Sample rate of the published recordings.
pub const DATASET_SAMPLE_RATE: f64 = 4000.0;

/// Trials are numbered from 1 to this value.
pub const MAX_TRIAL: u32 = 6;

/// The ten finger movements of the dataset, in canonical class order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Gesture {
    Thumb,
    Index,
    Middle,
    Ring,
    Little,
    ThumbIndex,
    ThumbMiddle,
    ThumbRing,
    ThumbLittle,
    HandClose,
}

impl Gesture {
    pub const ALL: [Gesture; 10] = [
        Gesture::Thumb,
        Gesture::Index,
        Gesture::Middle,
        Gesture::Ring,
        Gesture::Little,
        Gesture::ThumbIndex,
        Gesture::ThumbMiddle,
        Gesture::ThumbRing,
        Gesture::ThumbLittle,
        Gesture::HandClose,
    ];

    /// Short identifier used in manifests, feature files and reports.
    pub fn code(self) -> &'static str {
        match self {
            Gesture::Thumb => "T",
            Gesture::Index => "I",
            Gesture::Middle => "M",
            Gesture::Ring => "R",
            Gesture::Little => "L",
            Gesture::ThumbIndex => "TI",
            Gesture::ThumbMiddle => "TM",
            Gesture::ThumbRing => "TR",
            Gesture::ThumbLittle => "TL",
            Gesture::HandClose => "HC",
        }
    }

    pub fn index(self) -> usize {
        Gesture::ALL.iter().position(|&g| g == self).unwrap()
    }
}

impl fmt::Display for Gesture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Gesture {
    type Err = Error;

    /// Accepts the short codes plus the spellings used by the published files
    /// (`T-T`, `T-I`, `I-I`, `HC`, full finger names...), ignoring case and
    /// separators.
    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' ' | '.'))
            .flat_map(char::to_uppercase)
            .collect();
        let g = match norm.as_str() {
            "T" | "TT" | "THUMB" => Gesture::Thumb,
            "I" | "II" | "INDEX" => Gesture::Index,
            "M" | "MM" | "MIDDLE" => Gesture::Middle,
            "R" | "RR" | "RING" => Gesture::Ring,
            "L" | "LL" | "LITTLE" => Gesture::Little,
            "TI" | "THUMBINDEX" => Gesture::ThumbIndex,
            "TM" | "THUMBMIDDLE" => Gesture::ThumbMiddle,
            "TR" | "THUMBRING" => Gesture::ThumbRing,
            "TL" | "THUMBLITTLE" => Gesture::ThumbLittle,
            "HC" | "CLOSE" | "HANDCLOSE" | "CLOSEDHAND" => Gesture::HandClose,
            _ => return Err(Error::Argument(format!("unknown gesture label `{s}`"))),
        };
        Ok(g)
    }
}

impl From<Gesture> for String {
    fn from(g: Gesture) -> String {
        g.code().to_string()
    }
}

impl TryFrom<String> for Gesture {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Identity of one recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordingKey {
    pub subject: u32,
    pub label: Gesture,
    pub trial: u32,
}

/// One repetition of one movement, all channels at a common sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub key: RecordingKey,
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: f64,
}

impl RawRecording {
    pub fn new(key: RecordingKey, channels: Vec<Vec<f64>>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(Error::Argument(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if !(1..=MAX_TRIAL).contains(&key.trial) {
            return Err(Error::Argument(format!(
                "trial {} outside 1..={MAX_TRIAL}",
                key.trial
            )));
        }
        let len = channels.first().map_or(0, Vec::len);
        if len == 0 || channels.iter().any(|c| c.len() != len) {
            return Err(Error::Argument(
                "recording channels must be non-empty and of equal length".into(),
            ));
        }
        Ok(RawRecording {
            key,
            channels,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }
}

/// A borrowed window of one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame<'a> {
    pub samples: &'a [f64],
    pub channel_id: usize,
    /// Start of the window within its source signal, in samples.
    pub offset: usize,
    pub origin: Option<RecordingKey>,
}

/// Start offsets of every full window: `0, step, 2*step, ...`.
pub fn window_offsets(n: usize, win_len: usize, step: usize) -> Vec<usize> {
    assert!(
        win_len >= 1 && step >= 1,
        "window length and step must be >= 1"
    );
    if n < win_len {
        return Vec::new();
    }
    (0..=(n - win_len) / step).map(|i| i * step).collect()
}

pub fn window_signal(channel: &[f64], win_len: usize, step: usize) -> Vec<Frame<'_>> {
    window_offsets(channel.len(), win_len, step)
        .into_iter()
        .map(|offset| Frame {
            samples: &channel[offset..offset + win_len],
            channel_id: 0,
            offset,
            origin: None,
        })
        .collect()
}

/// Half-open sample range left after dropping `fraction` of the signal at
/// each end.
pub fn trim_range(n: usize, fraction: f64) -> std::ops::Range<usize> {
    let cut = ((n as f64) * fraction.clamp(0.0, 0.5)).floor() as usize;
    cut..n.saturating_sub(cut).max(cut)
}

/// Validated pair of disjoint trial sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSplit {
    pub train: BTreeSet<u32>,
    pub test: BTreeSet<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Train,
    Test,
}

impl TrialSplit {
    pub fn new(
        train: impl IntoIterator<Item = u32>,
        test: impl IntoIterator<Item = u32>,
    ) -> Result<Self> {
        let split = TrialSplit {
            train: train.into_iter().collect(),
            test: test.into_iter().collect(),
        };
        split.validate()?;
        Ok(split)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self
            .train
            .iter()
            .chain(&self.test)
            .find(|t| !(1..=MAX_TRIAL).contains(t))
        {
            return Err(Error::Argument(format!(
                "trial {t} outside 1..={MAX_TRIAL}"
            )));
        }
        let overlap: Vec<_> = self.train.intersection(&self.test).collect();
        if !overlap.is_empty() {
            return Err(Error::Argument(format!(
                "train and test trials overlap on {overlap:?}"
            )));
        }
        Ok(())
    }

    pub fn route(&self, trial: u32) -> Option<Side> {
        if self.train.contains(&trial) {
            Some(Side::Train)
        } else if self.test.contains(&trial) {
            Some(Side::Test)
        } else {
            None
        }
    }
}

impl Default for TrialSplit {
    fn default() -> Self {
        TrialSplit {
            train: (1..=4).collect(),
            test: (5..=6).collect(),
        }
    }
}

pub fn split_by_trial(
    recordings: Vec<RawRecording>,
    train_trials: &BTreeSet<u32>,
    test_trials: &BTreeSet<u32>,
) -> Result<(Vec<RawRecording>, Vec<RawRecording>)> {
    let split = TrialSplit::new(train_trials.iter().copied(), test_trials.iter().copied())?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for rec in recordings {
        match split.route(rec.key.trial) {
            Some(Side::Train) => train.push(rec),
            Some(Side::Test) => test.push(rec),
            None => {}
        }
    }
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject: u32,
    pub label: Gesture,
    pub trial: u32,
    /// Relative to the dataset root.
    pub path: PathBuf,
    pub channel_columns: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    #[serde(default)]
    pub has_header: bool,
    pub entries: Vec<ManifestEntry>,
}

fn default_sample_rate() -> f64 {
    DATASET_SAMPLE_RATE
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ManifestRepr {
    Full(Manifest),
    Bare(Vec<ManifestEntry>),
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let repr: ManifestRepr = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("malformed manifest: {e}")))?;
        Ok(match repr {
            ManifestRepr::Full(m) => m,
            ManifestRepr::Bare(entries) => Manifest {
                sample_rate: DATASET_SAMPLE_RATE,
                has_header: false,
                entries,
            },
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Manifest::from_json(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Builds a manifest from the published dataset's naming convention:
/// one directory per subject (the first integer in the directory name is the
/// subject id) holding files such as `T-I1.csv`, `T_T3.csv` or `HC-6.csv`,
/// where the trailing digit is the trial. Files that do not match are ignored.
pub fn scan_manifest(root: &Path) -> Result<Manifest> {
    let file_re = Regex::new(r"^(?P<label>.+?)[-_ ]?(?P<trial>[1-6])$").unwrap();
    let num_re = Regex::new(r"\d+").unwrap();
    let mut entries = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let listing = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for item in listing {
            let item = item.map_err(|e| Error::io(&dir, e))?;
            let path = item.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let is_csv = path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            if !is_csv {
                continue;
            }
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
            let Some(caps) = file_re.captures(stem) else {
                continue;
            };
            let Ok(label) = caps["label"].parse::<Gesture>() else {
                log::debug!("skipping {}: unrecognised label", path.display());
                continue;
            };
            let trial: u32 = caps["trial"].parse().unwrap();
            let rel = path.strip_prefix(root).unwrap().to_path_buf();
            let subject = rel
                .parent()
                .into_iter()
                .flat_map(Path::components)
                .filter_map(|c| c.as_os_str().to_str())
                .find_map(|c| num_re.find(c).and_then(|m| m.as_str().parse().ok()))
                .unwrap_or(1);
            entries.push(ManifestEntry {
                subject,
                label,
                trial,
                path: rel,
                channel_columns: vec![0, 1],
            });
        }
    }
    entries.sort_by(|a, b| {
        (a.subject, a.label, a.trial, &a.path).cmp(&(b.subject, b.label, b.trial, &b.path))
    });
    Ok(Manifest {
        sample_rate: DATASET_SAMPLE_RATE,
        has_header: false,
        entries,
    })
}

/// Loads a dataset from `manifest`, else `<root>/manifest.json`, else a
/// directory scan. An empty result is a structure error.
pub fn open_dataset(root: &Path, manifest: Option<&Path>) -> Result<Vec<RawRecording>> {
    let default = root.join("manifest.json");
    let manifest = match manifest {
        Some(p) => Manifest::read(p)?,
        None if default.is_file() => Manifest::read(&default)?,
        None => scan_manifest(root)?,
    };
    let recs = load_dataset(root, &manifest)?;
    if recs.is_empty() {
        return Err(Error::Structure {
            path: root.to_path_buf(),
            msg: "no recordings found".into(),
        });
    }
    Ok(recs)
}

/// Loads every manifest entry. The result is sorted by
/// `(subject, label, trial)`, independent of manifest or directory order.
pub fn load_dataset(root: &Path, manifest: &Manifest) -> Result<Vec<RawRecording>> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "dataset root is not a directory",
            ),
        ));
    }
    if manifest.entries.is_empty() {
        log::warn!("no recordings found under {}", root.display());
        return Ok(Vec::new());
    }
    let mut seen = HashSet::new();
    for e in &manifest.entries {
        if !seen.insert((e.subject, e.label, e.trial)) {
            return Err(Error::Structure {
                path: e.path.clone(),
                msg: format!(
                    "duplicate manifest tuple (subject {}, label {}, trial {})",
                    e.subject, e.label, e.trial
                ),
            });
        }
    }
    let results: Vec<Result<RawRecording>> = manifest
        .entries
        .par_iter()
        .map(|e| load_entry(root, manifest, e))
        .collect();
    let mut recordings = results.into_iter().collect::<Result<Vec<_>>>()?;
    recordings.sort_by_key(|r| r.key);
    Ok(recordings)
}

fn load_entry(root: &Path, manifest: &Manifest, entry: &ManifestEntry) -> Result<RawRecording> {
    let path = root.join(&entry.path);
    if !path.is_file() {
        return Err(Error::MissingRecording {
            subject: entry.subject,
            label: entry.label.to_string(),
            trial: entry.trial,
            path,
        });
    }
    if entry.channel_columns.is_empty() {
        return Err(Error::Config(format!(
            "manifest entry {} lists no channel columns",
            entry.path.display()
        )));
    }
    let channels = read_channels(&path, &entry.channel_columns, manifest.has_header)?;
    let key = RecordingKey {
        subject: entry.subject,
        label: entry.label,
        trial: entry.trial,
    };
    RawRecording::new(key, channels, manifest.sample_rate).map_err(|e| Error::Structure {
        path: path.clone(),
        msg: e.to_string(),
    })
}

/// Reads the selected columns of a sample-per-row CSV file. A column may end
/// early (empty cells); data after that point or a length difference between
/// columns is a structural error.
pub fn read_channels(path: &Path, columns: &[usize], has_header: bool) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut channels: Vec<Vec<f64>> = vec![Vec::new(); columns.len()];
    let mut ended = vec![false; columns.len()];
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record
            .position()
            .map_or(row_idx + 1 + has_header as usize, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        for (ch, &col) in columns.iter().enumerate() {
            let cell = record.get(col).unwrap_or("");
            if cell.is_empty() {
                ended[ch] = true;
                continue;
            }
            if ended[ch] {
                return Err(Error::Structure {
                    path: path.to_path_buf(),
                    msg: format!("column {col} resumes after a gap at line {line}"),
                });
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("column {col}: `{cell}` is not a number"),
            })?;
            channels[ch].push(v);
        }
    }
    let lens: Vec<usize> = channels.iter().map(Vec::len).collect();
    if lens.iter().any(|&l| l != lens[0]) {
        return Err(Error::Structure {
            path: path.to_path_buf(),
            msg: format!("channel columns {columns:?} have differing row counts {lens:?}"),
        });
    }
    if lens[0] == 0 {
        return Err(Error::Structure {
            path: path.to_path_buf(),
            msg: "file holds no samples".into(),
        });
    }
    Ok(channels)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{other:?}"),
        },
    }
}

/// Samples `V(n) = -sum_i a_i V(n-i) + e(n)` with Gaussian `e(n)` of standard
/// deviation `noise_std`.
///
/// The first `500 + 20 p` samples are generated and discarded so the output
/// starts close to stationarity. Stability of the polynomial
/// `1 + sum_i a_i z^-i` is the caller's responsibility; an unstable model
/// diverges.
pub fn gen_ar_process(ar_coeffs: &[f64], noise_std: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std.max(0.0)).expect("finite noise std");
    let p = ar_coeffs.len();
    let burn_in = if p == 0 { 0 } else { 500 + 20 * p };
    let mut history = vec![0.0; p];
    let mut out = Vec::with_capacity(n);
    for t in 0..burn_in + n {
        let mut v: f64 = noise.sample(&mut rng);
        for (i, a) in ar_coeffs.iter().enumerate() {
            v -= a * history[(t + p - 1 - i) % p];
        }
        if p > 0 {
            history[t % p] = v;
        }
        if t >= burn_in {
            out.push(v);
        }
    }
    out
}

/// Isotropic Gaussian clusters, `per_class` points around each centre.
/// Class `i` is named `"i"` and examples are grouped by class.
pub fn gen_gaussian_blobs(
    centers: &[FeatureVector],
    std: f64,
    per_class: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if centers.is_empty() || per_class == 0 {
        return Err(Error::Argument(
            "need at least one centre and one point per class".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, std.max(0.0)).expect("finite std");
    let mut features = Vec::with_capacity(centers.len() * per_class);
    let mut labels = Vec::with_capacity(features.capacity());
    for (label, c) in centers.iter().enumerate() {
        for _ in 0..per_class {
            let point: Vec<f64> = c
                .iter()
                .map(|&x| {
                    if std > 0.0 {
                        x + noise.sample(&mut rng)
                    } else {
                        x
                    }
                })
                .collect();
            features.push(point.into());
            labels.push(label);
        }
    }
    let classes = (0..centers.len()).map(|i| i.to_string()).collect();
    LabeledDataset::new(features, labels, classes)
}

/// Layout of a synthetic EMG-like dataset written by [`write_synthetic_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub subjects: u32,
    pub trials: u32,
    /// Samples per recording.
    pub samples: usize,
    pub sample_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 2,
            trials: MAX_TRIAL,
            samples: 8000,
            sample_rate: DATASET_SAMPLE_RATE,
            seed: 7,
        }
    }
}

fn mix_seed(parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    let mut z = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// AR coefficients `a_1..a_p` whose poles are the given `(radius, angle)`
/// conjugate pairs.
pub fn ar_from_pole_pairs(pairs: &[(f64, f64)]) -> Vec<f64> {
    let mut poly = vec![1.0];
    for &(r, theta) in pairs {
        let section = [1.0, -2.0 * r * theta.cos(), r * r];
        let mut next = vec![0.0; poly.len() + 2];
        for (i, &p) in poly.iter().enumerate() {
            for (j, &s) in section.iter().enumerate() {
                next[i + j] += p * s;
            }
        }
        poly = next;
    }
    poly[1..].to_vec()
}

/// One synthetic recording: class- and channel-specific resonances, a rest
/// segment at both ends, and 50 Hz mains interference.
pub fn synth_recording(cfg: &SynthConfig, key: RecordingKey, num_channels: usize) -> RawRecording {
    let class = key.label.index() as f64;
    let fs = cfg.sample_rate;
    let channels = (0..num_channels)
        .map(|ch| {
            let f1 = 50.0 + 40.0 * class + 9.0 * ch as f64 + 3.0 * key.subject as f64;
            let f2 = 430.0 - 37.0 * class + 13.0 * ch as f64;
            let r2 = 0.90 + 0.008 * class;
            let coeffs = ar_from_pole_pairs(&[
                (0.98, 2.0 * std::f64::consts::PI * f1 / fs),
                (r2, 2.0 * std::f64::consts::PI * f2 / fs),
            ]);
            let seed = mix_seed(&[
                cfg.seed,
                key.subject as u64,
                key.label.index() as u64,
                key.trial as u64,
                ch as u64,
            ]);
            let active = gen_ar_process(&coeffs, 1.0, cfg.samples, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let phase: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            let rest = cfg.samples / 10;
            active
                .iter()
                .enumerate()
                .map(|(n, &v)| {
                    let gain = if n < rest || n >= cfg.samples - rest {
                        0.05
                    } else {
                        1.0
                    };
                    let hum = 0.3 * (std::f64::consts::TAU * 50.0 * n as f64 / fs + phase).sin();
                    gain * v + hum
                })
                .collect()
        })
        .collect();
    RawRecording::new(key, channels, cfg.sample_rate).expect("synthetic recording is valid")
}

/// Writes `s<subject>/<label>_<trial>.csv` files for every gesture plus a
/// `manifest.json` at `root`, and returns the manifest.
pub fn write_synthetic_dataset(root: &Path, cfg: &SynthConfig) -> Result<Manifest> {
    if cfg.trials == 0 || cfg.trials > MAX_TRIAL || cfg.subjects == 0 || cfg.samples == 0 {
        return Err(Error::Argument(
            "synthetic dataset needs subjects >= 1, 1..=6 trials and samples >= 1".into(),
        ));
    }
    let mut keys = Vec::new();
    for subject in 1..=cfg.subjects {
        for &label in &Gesture::ALL {
            for trial in 1..=cfg.trials {
                keys.push(RecordingKey {
                    subject,
                    label,
                    trial,
                });
            }
        }
    }
    let entries = keys
        .par_iter()
        .map(|&key| {
            let rec = synth_recording(cfg, key, 2);
            let rel = PathBuf::from(format!("s{}", key.subject))
                .join(format!("{}_{}.csv", key.label, key.trial));
            let path = root.join(&rel);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let mut text = String::with_capacity(rec.len() * 24);
            for n in 0..rec.len() {
                let row: Vec<String> = rec.channels.iter().map(|c| c[n].to_string()).collect();
                text.push_str(&row.join(","));
                text.push('\n');
            }
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            Ok(ManifestEntry {
                subject: key.subject,
                label: key.label,
                trial: key.trial,
                path: rel,
                channel_columns: vec![0, 1],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        sample_rate: cfg.sample_rate,
        has_header: false,
        entries,
    };
    manifest.write(&root.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lag_ratio(x: &[f64], lag: usize) -> f64 {
        let r0: f64 = x.iter().map(|v| v * v).sum();
        let r1: f64 = x.windows(lag + 1).map(|w| w[0] * w[lag]).sum();
        r1 / r0
    }

    #[test]
    fn window_counts_and_offsets() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let frames = window_signal(&x, 5, 5);
        assert_eq!(
            frames.iter().map(|f| f.offset).collect::<Vec<_>>(),
            vec![0, 5]
        );
        assert_eq!(frames[1].samples, &x[5..10]);
        assert_eq!(window_offsets(10, 4, 3), vec![0, 3, 6]);
        assert!(window_signal(&x[..3], 5, 1).is_empty());
    }

    proptest! {
        #[test]
        fn window_count_formula(n in 1usize..1000, win in 1usize..1000, step in 1usize..1000) {
            let expected = if n >= win { (n - win) / step + 1 } else { 0 };
            let offs = window_offsets(n, win, step);
            prop_assert_eq!(offs.len(), expected);
            prop_assert!(offs.iter().all(|&o| o + win <= n));
        }
    }

    #[test]
    fn trim_drops_margins() {
        assert_eq!(trim_range(100, 0.1), 10..90);
        assert_eq!(trim_range(100, 0.0), 0..100);
        assert_eq!(trim_range(3, 0.5), 1..2);
    }

    fn fake_recordings() -> Vec<RawRecording> {
        let mut out = Vec::new();
        for subject in 1..=8 {
            for &label in &Gesture::ALL {
                for trial in 1..=6 {
                    let key = RecordingKey {
                        subject,
                        label,
                        trial,
                    };
                    out.push(RawRecording::new(key, vec![vec![0.0; 4]; 2], 4000.0).unwrap());
                }
            }
        }
        out
    }

    #[test]
    fn trial_split_counts() {
        let recs = fake_recordings();
        assert_eq!(recs.len(), 480);
        let train: BTreeSet<u32> = (1..=4).collect();
        let test: BTreeSet<u32> = (5..=6).collect();
        let (tr, te) = split_by_trial(recs.clone(), &train, &test).unwrap();
        assert_eq!((tr.len(), te.len()), (320, 160));

        let all: BTreeSet<u32> = (1..=6).collect();
        let (tr, te) = split_by_trial(recs.clone(), &all, &BTreeSet::new()).unwrap();
        assert_eq!((tr.len(), te.len()), (480, 0));

        let one: BTreeSet<u32> = [1].into();
        assert!(matches!(
            split_by_trial(recs, &one, &one),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn gesture_parsing_accepts_published_spellings() {
        assert_eq!("T-T".parse::<Gesture>().unwrap(), Gesture::Thumb);
        assert_eq!("t_i".parse::<Gesture>().unwrap(), Gesture::ThumbIndex);
        assert_eq!("HC".parse::<Gesture>().unwrap(), Gesture::HandClose);
        assert_eq!("L-L".parse::<Gesture>().unwrap(), Gesture::Little);
        assert!("wave".parse::<Gesture>().is_err());
        for g in Gesture::ALL {
            assert_eq!(g.code().parse::<Gesture>().unwrap(), g);
        }
    }

    #[test]
    fn white_noise_has_no_lag_one_correlation() {
        let n = 1000;
        let x = gen_ar_process(&[], 1.0, n, 3);
        assert_eq!(x.len(), n);
        assert!(lag_ratio(&x, 1).abs() < 5.0 / (n as f64).sqrt());
    }

    #[test]
    fn ar_generator_is_seed_deterministic() {
        let a = gen_ar_process(&[-0.5], 1.0, 500, 11);
        let b = gen_ar_process(&[-0.5], 1.0, 500, 11);
        let c = gen_ar_process(&[-0.5], 1.0, 500, 12);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn ar1_lag_one_autocorrelation_matches_pole() {
        // V(n) = 0.5 V(n-1) + e(n) has rho(1) = 0.5
        let x = gen_ar_process(&[-0.5], 1.0, 100_000, 5);
        assert!((lag_ratio(&x, 1) - 0.5).abs() < 0.02);
    }

    #[test]
    fn blobs_basics() {
        let centers = vec![
            FeatureVector(vec![0.0, 0.0]),
            FeatureVector(vec![10.0, 10.0]),
        ];
        let ds = gen_gaussian_blobs(&centers, 0.5, 50, 1).unwrap();
        assert_eq!(ds.len(), 100);
        // nearest-centre rule recovers every label
        for (x, label) in ds.iter() {
            let d: Vec<f64> = centers
                .iter()
                .map(|c| c.iter().zip(x.iter()).map(|(a, b)| (a - b).powi(2)).sum())
                .collect();
            let nearest = if d[0] <= d[1] { 0 } else { 1 };
            assert_eq!(nearest, label);
        }
        let flat = gen_gaussian_blobs(&centers, 0.0, 3, 1).unwrap();
        assert!(flat.iter().all(|(x, l)| x == &centers[l]));
        assert_eq!(
            gen_gaussian_blobs(&centers, 0.5, 5, 9).unwrap(),
            gen_gaussian_blobs(&centers, 0.5, 5, 9).unwrap()
        );
    }

    #[test]
    fn pole_pair_polynomial() {
        let a = ar_from_pole_pairs(&[(0.5, std::f64::consts::FRAC_PI_2)]);
        // (1 - 0.5j z^-1)(1 + 0.5j z^-1) = 1 + 0.25 z^-2
        assert!(a[0].abs() < 1e-15 && (a[1] - 0.25).abs() < 1e-15);
    }
}
