//! Signal conditioning before feature extraction and feature standardisation
//! before classification.
//!
//! Filters are cascades of second-order sections designed by the bilinear
//! transform with frequency pre-warping:
//!
//! * notch: the standard constant-Q biquad with `w0 = 2 pi f0 / fs`,
//!   `alpha = sin(w0) / (2 Q)`, numerator `[1, -2 cos w0, 1]` and denominator
//!   `[1 + alpha, -2 cos w0, 1 - alpha]`, normalised by `a0`;
//! * band-pass: a Butterworth high-pass at `band_low` followed by a
//!   Butterworth low-pass at `band_high`, each of `filter_order`. With
//!   `K = tan(pi fc / fs)` and section damping `q = 2 sin(pi (2k + 1) / (2N))`
//!   the low-pass section is `K^2 [1, 2, 1] / (1 + qK + K^2)` over
//!   `[1, 2 (K^2 - 1), 1 - qK + K^2] / (1 + qK + K^2)` and the high-pass
//!   section replaces the numerator by `[1, -2, 1] / (1 + qK + K^2)`. Odd
//!   orders add one first-order section.
//!
//! All filters run forward only from a zero state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::FeatureVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Notch,
    Bandpass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub notch_freq: f64,
    pub notch_q: f64,
    pub band_low: f64,
    pub band_high: f64,
    pub filter_order: usize,
    pub sample_rate: f64,
}

pub const DEFAULT_NOTCH_FREQ: f64 = 50.0;
pub const DEFAULT_NOTCH_Q: f64 = 30.0;
pub const DEFAULT_BAND: (f64, f64) = (20.0, 450.0);
pub const DEFAULT_FILTER_ORDER: usize = 4;
pub const MAX_FILTER_ORDER: usize = 12;

impl FilterSpec {
    pub fn notch(freq: f64, q: f64, sample_rate: f64) -> Self {
        FilterSpec {
            kind: FilterKind::Notch,
            notch_freq: freq,
            notch_q: q,
            band_low: DEFAULT_BAND.0,
            band_high: DEFAULT_BAND.1,
            filter_order: DEFAULT_FILTER_ORDER,
            sample_rate,
        }
    }

    pub fn bandpass(low: f64, high: f64, order: usize, sample_rate: f64) -> Self {
        FilterSpec {
            kind: FilterKind::Bandpass,
            notch_freq: DEFAULT_NOTCH_FREQ,
            notch_q: DEFAULT_NOTCH_Q,
            band_low: low,
            band_high: high,
            filter_order: order,
            sample_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate / 2.0;
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() {
            return Err(Error::Config(format!(
                "sample rate {} must be positive",
                self.sample_rate
            )));
        }
        match self.kind {
            FilterKind::Notch => {
                if !(self.notch_freq > 0.0 && self.notch_freq < nyquist) {
                    return Err(Error::Config(format!(
                        "notch frequency {} Hz must lie in (0, {nyquist})",
                        self.notch_freq
                    )));
                }
                if !(self.notch_q > 0.0) {
                    return Err(Error::Config(format!(
                        "notch Q {} must be positive",
                        self.notch_q
                    )));
                }
            }
            FilterKind::Bandpass => {
                if !(self.band_low > 0.0
                    && self.band_low < self.band_high
                    && self.band_high < nyquist)
                {
                    return Err(Error::Config(format!(
                        "band edges must satisfy 0 < {} < {} < {nyquist}",
                        self.band_low, self.band_high
                    )));
                }
                if !(1..=MAX_FILTER_ORDER).contains(&self.filter_order) {
                    return Err(Error::Config(format!(
                        "filter order {} outside 1..={MAX_FILTER_ORDER}",
                        self.filter_order
                    )));
                }
            }
        }
        Ok(())
    }

    /// Second-order sections realising this filter.
    pub fn design(&self) -> Result<Vec<Biquad>> {
        self.validate()?;
        Ok(match self.kind {
            FilterKind::Notch => vec![Biquad::notch(
                self.notch_freq,
                self.notch_q,
                self.sample_rate,
            )],
            FilterKind::Bandpass => {
                let mut sections = butterworth(
                    self.band_low,
                    self.filter_order,
                    self.sample_rate,
                    Pass::High,
                );
                sections.extend(butterworth(
                    self.band_high,
                    self.filter_order,
                    self.sample_rate,
                    Pass::Low,
                ));
                sections
            }
        })
    }

    /// Samples needed before the output settles: the sum over sections of the
    /// slowest pole's time constant `-1 / ln |pole|`, rounded up.
    pub fn warmup_len(&self) -> Result<usize> {
        Ok(self
            .design()?
            .iter()
            .map(|s| {
                let r = s.pole_radius();
                if r <= 0.0 {
                    0
                } else {
                    (-1.0 / r.ln()).ceil() as usize
                }
            })
            .sum())
    }
}

/// The default conditioning chain: mains notch, then EMG band-pass.
pub fn default_chain(sample_rate: f64) -> Vec<FilterSpec> {
    vec![
        FilterSpec::notch(DEFAULT_NOTCH_FREQ, DEFAULT_NOTCH_Q, sample_rate),
        FilterSpec::bandpass(
            DEFAULT_BAND.0,
            DEFAULT_BAND.1,
            DEFAULT_FILTER_ORDER,
            sample_rate,
        ),
    ]
}

/// `y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

#[derive(Clone, Copy)]
enum Pass {
    Low,
    High,
}

impl Biquad {
    pub fn notch(freq: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * freq / fs;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        let c = -2.0 * w0.cos();
        Biquad {
            b0: 1.0 / a0,
            b1: c / a0,
            b2: 1.0 / a0,
            a1: c / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    /// Largest pole magnitude of `1 + a1 z^-1 + a2 z^-2`.
    pub fn pole_radius(&self) -> f64 {
        let disc = self.a1 * self.a1 - 4.0 * self.a2;
        if disc < 0.0 {
            self.a2.sqrt()
        } else {
            let s = disc.sqrt();
            ((-self.a1 + s) / 2.0)
                .abs()
                .max(((-self.a1 - s) / 2.0).abs())
        }
    }

    /// Runs the section over `x` in place (transposed direct form II).
    pub fn process_in_place(&self, x: &mut [f64]) {
        let (mut s1, mut s2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b0 * input + s1;
            s1 = self.b1 * input - self.a1 * y + s2;
            s2 = self.b2 * input - self.a2 * y;
            *v = y;
        }
    }
}

fn butterworth(fc: f64, order: usize, fs: f64, pass: Pass) -> Vec<Biquad> {
    let k = (std::f64::consts::PI * fc / fs).tan();
    let k2 = k * k;
    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for i in 0..order / 2 {
        let q = 2.0 * (std::f64::consts::PI * (2 * i + 1) as f64 / (2 * order) as f64).sin();
        let norm = 1.0 / (1.0 + q * k + k2);
        let (b0, b1, b2) = match pass {
            Pass::Low => (k2 * norm, 2.0 * k2 * norm, k2 * norm),
            Pass::High => (norm, -2.0 * norm, norm),
        };
        sections.push(Biquad {
            b0,
            b1,
            b2,
            a1: 2.0 * (k2 - 1.0) * norm,
            a2: (1.0 - q * k + k2) * norm,
        });
    }
    if order % 2 == 1 {
        let norm = 1.0 / (1.0 + k);
        let (b0, b1) = match pass {
            Pass::Low => (k * norm, k * norm),
            Pass::High => (norm, -norm),
        };
        sections.push(Biquad {
            b0,
            b1,
            b2: 0.0,
            a1: (k - 1.0) * norm,
            a2: 0.0,
        });
    }
    sections
}

/// Filters `signal` through `spec`. The signal must be longer than
/// [`FilterSpec::warmup_len`].
pub fn apply_filter(signal: &[f64], spec: &FilterSpec) -> Result<Vec<f64>> {
    let sections = spec.design()?;
    let warmup = spec.warmup_len()?;
    if signal.len() <= warmup {
        return Err(Error::Argument(format!(
            "signal of {} samples is not longer than the {warmup}-sample filter warm-up",
            signal.len()
        )));
    }
    let mut out = signal.to_vec();
    for s in &sections {
        s.process_in_place(&mut out);
    }
    Ok(out)
}

pub fn apply_chain(signal: &[f64], chain: &[FilterSpec]) -> Result<Vec<f64>> {
    let mut out = signal.to_vec();
    for spec in chain {
        out = apply_filter(&out, spec)?;
    }
    Ok(out)
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Dimensions whose spread is zero; they scale to 0.
    pub constant: Vec<bool>,
}

impl ScalerParams {
    pub fn identity(dim: usize) -> Self {
        ScalerParams {
            means: vec![0.0; dim],
            stds: vec![1.0; dim],
            constant: vec![false; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stds.len() != self.dim() || self.constant.len() != self.dim() {
            return Err(Error::Config(
                "scaler fields disagree on dimensionality".into(),
            ));
        }
        if self.stds.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config(
                "scaler standard deviations must be >= 0".into(),
            ));
        }
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Argument(format!(
                "feature dimension {} does not match scaler dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn transform(&self, x: &[f64]) -> Result<FeatureVector> {
        self.check_dim(x)?;
        Ok(x.iter()
            .enumerate()
            .map(|(i, &v)| {
                if self.constant[i] {
                    0.0
                } else {
                    (v - self.means[i]) / self.stds[i]
                }
            })
            .collect::<Vec<_>>()
            .into())
    }

    /// Inverse of [`transform`](Self::transform); constant dimensions come
    /// back as their mean.
    pub fn inverse(&self, z: &[f64]) -> Result<FeatureVector> {
        self.check_dim(z)?;
        Ok(z.iter()
            .enumerate()
            .map(|(i, &v)| {
                if self.constant[i] {
                    self.means[i]
                } else {
                    v * self.stds[i] + self.means[i]
                }
            })
            .collect::<Vec<_>>()
            .into())
    }
}

pub fn fit_scaler(features: &[FeatureVector]) -> Result<ScalerParams> {
    if features.len() < 2 {
        return Err(Error::Argument(format!(
            "scaler needs at least 2 examples, got {}",
            features.len()
        )));
    }
    let dim = features[0].dim();
    if features.iter().any(|f| f.dim() != dim) {
        return Err(Error::Argument(
            "feature vectors differ in dimension".into(),
        ));
    }
    let n = features.len() as f64;
    let mut means = vec![0.0; dim];
    for f in features {
        for (m, v) in means.iter_mut().zip(f.iter()) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut stds = vec![0.0; dim];
    for f in features {
        for ((s, v), m) in stds.iter_mut().zip(f.iter()).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    stds.iter_mut().for_each(|s| *s = (*s / n).sqrt());
    let constant = stds
        .iter()
        .zip(&means)
        .map(|(&s, &m): (&f64, &f64)| s <= 1e-12 * m.abs().max(1.0))
        .collect();
    Ok(ScalerParams {
        means,
        stds,
        constant,
    })
}

pub fn apply_scaler(
    features: &[FeatureVector],
    params: &ScalerParams,
) -> Result<Vec<FeatureVector>> {
    features.iter().map(|f| params.transform(f)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const FS: f64 = 4000.0;

    fn sine(freq: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / FS).sin())
            .collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    /// |H(e^{jw})| of a section evaluated directly from its coefficients.
    fn section_gain(s: &Biquad, f: f64) -> f64 {
        let w = 2.0 * PI * f / FS;
        let num = (
            s.b0 + s.b1 * w.cos() + s.b2 * (2.0 * w).cos(),
            -s.b1 * w.sin() - s.b2 * (2.0 * w).sin(),
        );
        let den = (
            1.0 + s.a1 * w.cos() + s.a2 * (2.0 * w).cos(),
            -s.a1 * w.sin() - s.a2 * (2.0 * w).sin(),
        );
        (num.0.hypot(num.1)) / (den.0.hypot(den.1))
    }

    /// Butterworth magnitude after pre-warping: the bilinear transform maps the
    /// analogue response onto `tan(pi f / fs)` exactly.
    fn butterworth_gain(f: f64, fc: f64, order: usize, high: bool) -> f64 {
        let w = (PI * f / FS).tan();
        let wc = (PI * fc / FS).tan();
        let ratio = if high { wc / w } else { w / wc };
        1.0 / (1.0 + ratio.powi(2 * order as i32)).sqrt()
    }

    #[test]
    fn notch_removes_its_centre_frequency() {
        let spec = FilterSpec::notch(50.0, 30.0, FS);
        // analytic response of the biquad at f0 is exactly zero
        assert!(section_gain(&spec.design().unwrap()[0], 50.0) < 1e-9);
        let x = sine(50.0, 20_000);
        let y = apply_filter(&x, &spec).unwrap();
        let settle = 8 * spec.warmup_len().unwrap();
        assert!(rms(&y[settle..]) <= 0.05 * rms(&x[settle..]));
    }

    #[test]
    fn bandpass_passes_band_centre() {
        let spec = FilterSpec::bandpass(20.0, 450.0, 4, FS);
        let centre = (20.0f64 * 450.0).sqrt();
        let expected =
            butterworth_gain(centre, 20.0, 4, true) * butterworth_gain(centre, 450.0, 4, false);
        let designed: f64 = spec
            .design()
            .unwrap()
            .iter()
            .map(|s| section_gain(s, centre))
            .product();
        assert!(
            (designed - expected).abs() < 1e-9,
            "{designed} vs {expected}"
        );
        let x = sine(centre, 20_000);
        let y = apply_filter(&x, &spec).unwrap();
        let settle = 8 * spec.warmup_len().unwrap();
        let ratio = rms(&y[settle..]) / rms(&x[settle..]);
        assert!((ratio - 1.0).abs() <= 0.10, "ratio {ratio}");
    }

    #[test]
    fn butterworth_sections_match_analytic_magnitude() {
        for order in 1..=6 {
            for &f in &[5.0, 20.0, 95.0, 300.0, 450.0, 900.0, 1900.0] {
                let bp = FilterSpec::bandpass(20.0, 450.0, order, FS);
                let got: f64 = bp
                    .design()
                    .unwrap()
                    .iter()
                    .map(|s| section_gain(s, f))
                    .product();
                let want = butterworth_gain(f, 20.0, order, true)
                    * butterworth_gain(f, 450.0, order, false);
                assert!(
                    (got - want).abs() < 1e-9,
                    "order {order} f {f}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let y = apply_chain(&vec![0.0; 5000], &default_chain(FS)).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_specs_are_config_errors() {
        let bad = [
            FilterSpec::notch(0.0, 30.0, FS),
            FilterSpec::notch(50.0, 0.0, FS),
            FilterSpec::bandpass(500.0, 450.0, 4, FS),
            FilterSpec::bandpass(20.0, 2500.0, 4, FS),
            FilterSpec::bandpass(20.0, 450.0, 0, FS),
        ];
        for spec in bad {
            assert!(matches!(
                apply_filter(&[0.0; 10_000], &spec),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn short_signal_is_rejected() {
        let spec = FilterSpec::notch(50.0, 30.0, FS);
        let w = spec.warmup_len().unwrap();
        assert!(apply_filter(&vec![1.0; w], &spec).is_err());
        assert!(apply_filter(&vec![1.0; w + 1], &spec).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn filters_are_linear(
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            seed in 0u64..1000,
        ) {
            let x = crate::dataio::gen_ar_process(&[], 1.0, 3000, seed);
            let y = crate::dataio::gen_ar_process(&[], 1.0, 3000, seed + 1);
            let chain = default_chain(FS);
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let fm = apply_chain(&mix, &chain).unwrap();
            let fx = apply_chain(&x, &chain).unwrap();
            let fy = apply_chain(&y, &chain).unwrap();
            let scale = fm.iter().map(|v| v.abs()).fold(1e-300, f64::max);
            for i in 0..fm.len() {
                prop_assert!((fm[i] - (a * fx[i] + b * fy[i])).abs() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn scaler_hand_example() {
        let feats = vec![
            FeatureVector(vec![0.0, 10.0]),
            FeatureVector(vec![2.0, 10.0]),
        ];
        let p = fit_scaler(&feats).unwrap();
        assert_eq!(p.means, vec![1.0, 10.0]);
        assert_eq!(p.stds, vec![1.0, 0.0]);
        assert_eq!(p.constant, vec![false, true]);
        assert_eq!(p.transform(&[1.0, 10.0]).unwrap().0, vec![0.0, 0.0]);
        assert!(matches!(fit_scaler(&feats[..1]), Err(Error::Argument(_))));
        assert!(matches!(p.transform(&[1.0]), Err(Error::Argument(_))));
    }

    #[test]
    fn scaler_on_standard_normal() {
        let x = crate::dataio::gen_ar_process(&[], 1.0, 1000, 2);
        let feats: Vec<FeatureVector> = x.iter().map(|&v| FeatureVector(vec![v])).collect();
        let p = fit_scaler(&feats).unwrap();
        // direct recomputation
        let mean = x.iter().sum::<f64>() / 1000.0;
        let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1000.0).sqrt();
        assert!((p.means[0] - mean).abs() < 1e-12 && (p.stds[0] - sd).abs() < 1e-12);
        assert!(p.means[0].abs() < 0.1 && (p.stds[0] - 1.0).abs() < 0.1);

        let scaled = apply_scaler(&feats, &p).unwrap();
        let refit = fit_scaler(&scaled).unwrap();
        assert!(refit.means[0].abs() < 1e-12 && (refit.stds[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_scaler_is_noop() {
        let p = ScalerParams::identity(3);
        assert_eq!(
            p.transform(&[1.5, -2.0, 7.0]).unwrap().0,
            vec![1.5, -2.0, 7.0]
        );
    }

    proptest! {
        #[test]
        fn scaler_round_trip(rows in proptest::collection::vec(proptest::collection::vec(-100.0f64..100.0, 3), 2..20)) {
            let feats: Vec<FeatureVector> = rows.into_iter().map(FeatureVector).collect();
            let p = fit_scaler(&feats).unwrap();
            for f in &feats {
                let back = p.inverse(&p.transform(f).unwrap()).unwrap();
                for i in 0..3 {
                    if !p.constant[i] {
                        prop_assert!((back[i] - f[i]).abs() <= 1e-12 * f[i].abs().max(1.0));
                    }
                }
            }
        }
    }
}
