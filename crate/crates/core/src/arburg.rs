//! Autoregressive modelling through the lattice parameterisation.
//!
//! Sign convention: an AR model is `V(n) = -sum_i a_i V(n-i) + e(n)`, so the
//! prediction-error filter is `A(z) = 1 + sum_i a_i z^-i` and an AR(1) process
//! with its pole at `0.5` has `a_1 = -0.5`. The matching lattice uses
//!
//! ```text
//! f_i(n) = f_{i-1}(n) + k_i b_{i-1}(n-1)
//! b_i(n) = b_{i-1}(n-1) + k_i f_{i-1}(n)
//! ```
//!
//! with `f_0(n) = b_0(n) = V(n)`, and the step-up recursion turns `k` into
//! `a` with `a_m = k_m` at stage `m`.

use serde::{Deserialize, Serialize};

use crate::dataio::Frame;
use crate::error::{Error, Result};
use crate::feature::FeatureVector;

/// Stage denominators below this stop the Burg recursion.
pub const DENOMINATOR_FLOOR: f64 = 1e-30;

pub const DEFAULT_ORDER: usize = 10;
pub const MAX_ORDER: usize = 32;
pub const DEFAULT_PSD_POINTS: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionModel {
    pub k: Vec<f64>,
    pub noise_var: f64,
    /// Stage at which the recursion hit [`DENOMINATOR_FLOOR`]; coefficients
    /// from there on are zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated_at: Option<usize>,
}

impl ReflectionModel {
    pub fn order(&self) -> usize {
        self.k.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    /// `a_0..a_p`, with `a_0 = 1`.
    pub a: Vec<f64>,
    pub noise_var: f64,
}

impl ArModel {
    pub fn new(a: Vec<f64>, noise_var: f64) -> Result<Self> {
        if a.first() != Some(&1.0) {
            return Err(Error::Argument(
                "AR polynomial must start with a_0 = 1".into(),
            ));
        }
        if !(noise_var >= 0.0) {
            return Err(Error::Argument(format!(
                "noise variance {noise_var} must be >= 0"
            )));
        }
        Ok(ArModel { a, noise_var })
    }

    pub fn order(&self) -> usize {
        self.a.len() - 1
    }
}

/// Burg estimate of `order` reflection coefficients.
///
/// Each stage picks the `k_m` minimising the summed forward and backward
/// error energy of the previous stage,
/// `k_m = -2 sum f(n) b(n-1) / sum (f(n)^2 + b(n-1)^2)`, so `|k_m| <= 1`.
/// `noise_var` is the order-`p` prediction-error power
/// `E_0 prod (1 - k_m^2)` with `E_0` the frame's mean square.
pub fn burg(frame: &[f64], order: usize) -> Result<ReflectionModel> {
    let n = frame.len();
    if n <= order {
        return Err(Error::Argument(format!(
            "frame of {n} samples is too short for order {order}"
        )));
    }
    let energy: f64 = frame.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::Degenerate("all-zero frame".into()));
    }
    let mut f = frame.to_vec();
    let mut b = frame.to_vec();
    let mut k = Vec::with_capacity(order);
    let mut power = energy / n as f64;
    let mut truncated_at = None;

    for m in 1..=order {
        let (mut num, mut den) = (0.0, 0.0);
        for t in m..n {
            num += f[t] * b[t - 1];
            den += f[t] * f[t] + b[t - 1] * b[t - 1];
        }
        if den < DENOMINATOR_FLOOR {
            truncated_at = Some(m);
            k.resize(order, 0.0);
            break;
        }
        let km = (-2.0 * num / den).clamp(-1.0, 1.0);
        // descending so b[t - 1] still holds the previous stage
        for t in (m..n).rev() {
            let ft = f[t];
            f[t] = ft + km * b[t - 1];
            b[t] = b[t - 1] + km * ft;
        }
        power *= 1.0 - km * km;
        k.push(km);
    }
    Ok(ReflectionModel {
        k,
        noise_var: power,
        truncated_at,
    })
}

/// Unevaluated sum `hi + lo`, used to keep the step-up recursion correctly
/// rounded. Going from k to a is ill-conditioned close to the unit circle,
/// so plain f64 accumulation loses several digits at p around 10.
#[derive(Clone, Copy)]
struct TwoFloat {
    hi: f64,
    lo: f64,
}

impl TwoFloat {
    fn new(v: f64) -> Self {
        TwoFloat { hi: v, lo: 0.0 }
    }

    /// `self + k * other`
    fn add_scaled(self, k: f64, other: TwoFloat) -> Self {
        let p = k * other.hi;
        let p_err = k.mul_add(other.hi, -p);
        let s = self.hi + p;
        let bb = s - self.hi;
        let s_err = (self.hi - (s - bb)) + (p - bb);
        let lo = s_err + p_err + self.lo + k * other.lo;
        let hi = s + lo;
        TwoFloat {
            hi,
            lo: lo - (hi - s),
        }
    }
}

/// Step-up (Levinson) recursion from reflection to direct-form coefficients.
pub fn reflection_to_ar(model: &ReflectionModel) -> ArModel {
    let mut a = vec![TwoFloat::new(1.0)];
    for &km in &model.k {
        let m = a.len();
        let mut next = a.clone();
        next.push(TwoFloat::new(km));
        for i in 1..m {
            next[i] = a[i].add_scaled(km, a[m - i]);
        }
        a = next;
    }
    ArModel {
        a: a.iter().map(|v| v.hi).collect(),
        noise_var: model.noise_var,
    }
}

/// Forward and backward prediction errors of every lattice stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeState {
    pub forward: Vec<Vec<f64>>,
    pub backward: Vec<Vec<f64>>,
}

impl LatticeState {
    /// Runs the lattice from a zero initial state (`b_i(-1) = 0`).
    pub fn run(frame: &[f64], k: &[f64]) -> Self {
        let mut forward = vec![frame.to_vec()];
        let mut backward = vec![frame.to_vec()];
        for &ki in k {
            let f_prev = forward.last().unwrap();
            let b_prev = backward.last().unwrap();
            let mut f = Vec::with_capacity(frame.len());
            let mut b = Vec::with_capacity(frame.len());
            for t in 0..frame.len() {
                let b_delayed = if t == 0 { 0.0 } else { b_prev[t - 1] };
                f.push(f_prev[t] + ki * b_delayed);
                b.push(b_delayed + ki * f_prev[t]);
            }
            forward.push(f);
            backward.push(b);
        }
        LatticeState { forward, backward }
    }

    /// Output of the final stage, the residual `e(n)`.
    pub fn residual(&self) -> &[f64] {
        self.forward.last().unwrap()
    }
}

pub fn lattice_filter(frame: &[f64], k: &[f64]) -> Vec<f64> {
    let mut f = frame.to_vec();
    let mut b = frame.to_vec();
    for &ki in k {
        let mut b_delayed = 0.0;
        for t in 0..f.len() {
            let ft = f[t];
            let bt = b[t];
            f[t] = ft + ki * b_delayed;
            b[t] = b_delayed + ki * ft;
            b_delayed = bt;
        }
    }
    f
}

/// Evaluates `sigma^2 / |1 + sum_i a_i exp(-j 2 pi i f)|^2` at normalised
/// frequencies `f` (cycles per sample) in `[-0.5, 0.5]`. A pole on the grid
/// yields `f64::INFINITY` and a warning.
pub fn ar_psd(model: &ArModel, freqs: &[f64]) -> Result<Vec<f64>> {
    if model.a.first() != Some(&1.0) {
        return Err(Error::Argument(
            "AR polynomial must start with a_0 = 1".into(),
        ));
    }
    if let Some(f) = freqs.iter().find(|f| !(f.abs() <= 0.5)) {
        return Err(Error::Argument(format!(
            "normalised frequency {f} outside [-0.5, 0.5]"
        )));
    }
    Ok(freqs
        .iter()
        .map(|&f| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &ai) in model.a.iter().enumerate() {
                let w = -2.0 * std::f64::consts::PI * i as f64 * f;
                re += ai * w.cos();
                im += ai * w.sin();
            }
            let den = re * re + im * im;
            if den < 1e-300 {
                log::warn!("AR model has a pole on the evaluation grid at f = {f}");
                f64::INFINITY
            } else {
                model.noise_var / den
            }
        })
        .collect())
}

/// `points` evenly spaced normalised frequencies from 0 to 0.5 inclusive.
pub fn psd_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points)
            .map(|i| 0.5 * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Biased sample autocorrelation `R(m) = (1/N) sum_n V(n) V(n+m)` for
/// `m = 0..=max_lag`.
pub fn autocorrelation(signal: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = signal.len();
    if max_lag >= n {
        return Err(Error::Argument(format!(
            "lag {max_lag} needs more than the {n} samples available"
        )));
    }
    Ok((0..=max_lag)
        .map(|m| {
            signal[..n - m]
                .iter()
                .zip(&signal[m..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / n as f64
        })
        .collect())
}

/// Solves the Toeplitz normal equations of order `order` by Levinson-Durbin.
pub fn yule_walker(r: &[f64], order: usize) -> Result<ArModel> {
    if r.is_empty() || !(r[0] > 0.0) {
        return Err(Error::Degenerate("R(0) must be positive".into()));
    }
    if order >= r.len() {
        return Err(Error::Argument(format!(
            "order {order} needs {} lags, only {} given",
            order + 1,
            r.len()
        )));
    }
    let mut a = vec![1.0];
    let mut err = r[0];
    for m in 1..=order {
        if err <= r[0] * 1e-14 {
            return Err(Error::Degenerate(format!(
                "singular Toeplitz system at order {m}"
            )));
        }
        let acc: f64 = (0..m).map(|i| a[i] * r[m - i]).sum();
        let km = -acc / err;
        let mut next = a.clone();
        next.push(km);
        for i in 1..m {
            next[i] = a[i] + km * a[m - i];
        }
        a = next;
        err *= 1.0 - km * km;
    }
    Ok(ArModel {
        a,
        noise_var: err.max(0.0),
    })
}

/// Concatenated Burg reflection coefficients of each channel's frame, in
/// the order given.
pub fn extract_features(frames: &[Frame<'_>], order: usize) -> Result<FeatureVector> {
    extract_features_with(frames, order, false)
}

/// As [`extract_features`], optionally appending each channel's residual
/// variance after its coefficients.
pub fn extract_features_with(
    frames: &[Frame<'_>],
    order: usize,
    include_noise_var: bool,
) -> Result<FeatureVector> {
    if frames.is_empty() {
        return Err(Error::Argument("no channel frames supplied".into()));
    }
    let per = order + include_noise_var as usize;
    let mut out = Vec::with_capacity(frames.len() * per);
    for frame in frames {
        let model = burg(frame.samples, order)?;
        if let Some(stage) = model.truncated_at {
            log::debug!(
                "channel {} frame at {} truncated at stage {stage}",
                frame.channel_id,
                frame.offset
            );
        }
        out.extend_from_slice(&model.k);
        if include_noise_var {
            out.push(model.noise_var);
        }
    }
    Ok(out.into())
}
