//! Windowed FFT spectra, interpolated peak readout, per-channel amplitude
//! extraction and bead-presence decisions.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::array::ChannelPlan;
use crate::error::{Error, Result};

pub const MIN_SPECTRUM_SAMPLES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    Rectangular,
    #[default]
    Hann,
}

impl Window {
    pub fn name(self) -> &'static str {
        match self {
            Window::Rectangular => "rectangular",
            Window::Hann => "hann",
        }
    }

    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => {
                let d = (n - 1) as f64;
                (0..n).map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / d).cos()).collect()
            }
        }
    }
}

/// One-sided amplitude spectrum. A sinusoid of amplitude A centered on a
/// bin reports A.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEstimate {
    pub bin_width: f64,
    pub amplitudes: Vec<f64>,
    pub window: Window,
    pub zero_pad: usize,
    /// Samples in the analyzed record, before padding.
    pub record_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub frequency: f64,
    pub amplitude: f64,
    pub bin: usize,
}

impl SpectralEstimate {
    pub fn frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_width
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.amplitudes.len()).map(|k| self.frequency(k)).collect()
    }

    /// Bin spacing of the unpadded record.
    pub fn raw_bin_width(&self) -> f64 {
        self.bin_width * self.zero_pad as f64
    }

    /// Largest bin with frequency in `[f_lo, f_hi]`, refined by a parabola
    /// through the log-magnitudes of the bin and its neighbors.
    pub fn peak_in(&self, f_lo: f64, f_hi: f64) -> Option<Peak> {
        let n = self.amplitudes.len();
        if n == 0 {
            return None;
        }
        let lo = (f_lo / self.bin_width).ceil().max(0.0) as usize;
        let hi = ((f_hi / self.bin_width).floor().max(0.0) as usize).min(n - 1);
        if lo > hi {
            return None;
        }
        let (k, &peak) = self.amplitudes[lo..=hi]
            .iter()
            .enumerate()
            .fold((0, &f64::MIN), |best, (i, a)| if *a > *best.1 { (i, a) } else { best });
        let k = k + lo;
        let mut out = Peak { frequency: self.frequency(k), amplitude: peak, bin: k };
        if k == 0 || k + 1 >= n {
            return Some(out);
        }
        let (a, b, c) = (self.amplitudes[k - 1], peak, self.amplitudes[k + 1]);
        if a > 0.0 && b > 0.0 && c > 0.0 {
            let (la, lb, lc) = (a.ln(), b.ln(), c.ln());
            let denom = la - 2.0 * lb + lc;
            if denom < 0.0 {
                let p = (0.5 * (la - lc) / denom).clamp(-0.5, 0.5);
                out.frequency = (k as f64 + p) * self.bin_width;
                out.amplitude = (lb - 0.25 * (la - lc) * p).exp();
            }
        }
        Some(out)
    }
}

/// Amplitude spectrum of `series` sampled every `dt`, zero-padded to
/// `zero_pad` times its length and corrected for the window's coherent gain.
pub fn spectrum(series: &[f64], dt: f64, window: Window, zero_pad: usize) -> Result<SpectralEstimate> {
    let n = series.len();
    if n < MIN_SPECTRUM_SAMPLES {
        return Err(Error::domain(format!(
            "spectrum needs at least {MIN_SPECTRUM_SAMPLES} samples, got {n}"
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::domain("dt must be positive"));
    }
    if zero_pad == 0 {
        return Err(Error::domain("zero-pad factor must be at least 1"));
    }
    let w = window.coefficients(n);
    let gain: f64 = w.iter().sum();
    let len = n * zero_pad;
    let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); len];
    for (b, (x, wk)) in buf.iter_mut().zip(series.iter().zip(&w)) {
        b.re = x * wk;
    }
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let half = len / 2;
    let amplitudes = (0..=half)
        .map(|k| {
            let edge = k == 0 || (len % 2 == 0 && k == half);
            let s = if edge { 1.0 } else { 2.0 };
            s * buf[k].norm() / gain
        })
        .collect();
    Ok(SpectralEstimate {
        bin_width: 1.0 / (len as f64 * dt),
        amplitudes,
        window,
        zero_pad,
        record_len: n,
    })
}

/// Interpolated peak amplitude within ±`search_halfwidth` of each channel's
/// injection frequency.
pub fn channel_amplitudes(est: &SpectralEstimate, plan: &ChannelPlan, search_halfwidth: f64) -> Result<Vec<f64>> {
    if !(search_halfwidth > 0.0 && search_halfwidth < 0.5 * plan.margin) {
        return Err(Error::Config(format!(
            "search half-width {:.3e} Hz must lie in (0, margin/2 = {:.3e} Hz)",
            search_halfwidth,
            0.5 * plan.margin
        )));
    }
    plan.channels
        .iter()
        .map(|ch| {
            est.peak_in(ch.f_inj - search_halfwidth, ch.f_inj + search_halfwidth)
                .map(|p| p.amplitude)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "channel {} search window lies outside the spectrum",
                        ch.index
                    ))
                })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDecision {
    pub baseline: f64,
    pub measured: f64,
    pub sensitivity: Option<f64>,
    pub threshold: f64,
    /// `None` when the baseline is unusable.
    pub present: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub channels: Vec<ChannelDecision>,
}

impl DetectionReport {
    pub fn flagged(&self) -> Vec<usize> {
        self.channels
            .iter()
            .enumerate()
            .filter(|(_, c)| c.present == Some(true))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Flags channels whose relative amplitude change exceeds their threshold.
pub fn detect(baseline: &[f64], measured: &[f64], thresholds: &[f64]) -> Result<DetectionReport> {
    if baseline.len() != measured.len() || baseline.len() != thresholds.len() {
        return Err(Error::domain(format!(
            "channel count mismatch: {} baselines, {} measurements, {} thresholds",
            baseline.len(),
            measured.len(),
            thresholds.len()
        )));
    }
    let channels = baseline
        .iter()
        .zip(measured)
        .zip(thresholds)
        .map(|((&b, &m), &t)| {
            if b > 0.0 {
                let s = (m - b).abs() / b;
                ChannelDecision {
                    baseline: b,
                    measured: m,
                    sensitivity: Some(s),
                    threshold: t,
                    present: Some(s > t),
                    error: None,
                }
            } else {
                ChannelDecision {
                    baseline: b,
                    measured: m,
                    sensitivity: None,
                    threshold: t,
                    present: None,
                    error: Some(format!("baseline amplitude {b:e} is not positive")),
                }
            }
        })
        .collect();
    Ok(DetectionReport { channels })
}

/// Same threshold on every channel.
pub fn detect_uniform(baseline: &[f64], measured: &[f64], threshold: f64) -> Result<DetectionReport> {
    detect(baseline, measured, &vec![threshold; baseline.len()])
}

pub const MIN_NOISE_REPLICAS: usize = 10;

/// Per-channel threshold `multiplier × std` of the relative deviation
/// (a_k − ā)/ā over K no-bead replicas. `replicas[k][c]` is the amplitude of
/// channel `c` in replica `k`.
pub fn noise_floor_threshold(replicas: &[Vec<f64>], multiplier: f64) -> Result<Vec<f64>> {
    let k = replicas.len();
    if k < MIN_NOISE_REPLICAS {
        return Err(Error::domain(format!(
            "noise floor needs at least {MIN_NOISE_REPLICAS} replicas, got {k}"
        )));
    }
    let channels = replicas[0].len();
    if replicas.iter().any(|r| r.len() != channels) {
        return Err(Error::domain("replicas have different channel counts"));
    }
    (0..channels)
        .map(|c| {
            let mean = replicas.iter().map(|r| r[c]).sum::<f64>() / k as f64;
            if !(mean > 0.0) {
                return Err(Error::domain(format!("channel {c} has nonpositive mean amplitude")));
            }
            let var = replicas.iter().map(|r| ((r[c] - mean) / mean).powi(2)).sum::<f64>() / (k - 1) as f64;
            Ok(multiplier * var.sqrt())
        })
        .collect()
}

/// Arithmetic mean per channel over replicas.
pub fn mean_amplitudes(replicas: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = replicas.first() else {
        return Vec::new();
    };
    (0..first.len())
        .map(|c| replicas.iter().map(|r| r[c]).sum::<f64>() / replicas.len() as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{Channel, ChannelPlan};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tone(n: usize, dt: f64, f: f64, a: f64, phase: f64) -> Vec<f64> {
        (0..n).map(|k| a * (2.0 * PI * f * k as f64 * dt + phase).cos()).collect()
    }

    #[test]
    fn rectangular_bin_centered_tone() {
        let (n, dt) = (4096, 1e-12);
        let f = 300.0 / (n as f64 * dt);
        let est = spectrum(&tone(n, dt, f, 1.0, 0.2), dt, Window::Rectangular, 1).unwrap();
        assert!((est.amplitudes[300] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn hann_half_bin_offset_interpolated() {
        let (n, dt) = (4096, 1e-12);
        let f = 300.5 / (n as f64 * dt);
        let est = spectrum(&tone(n, dt, f, 0.5, 1.1), dt, Window::Hann, 4).unwrap();
        let p = est.peak_in(1e9, 400e9).unwrap();
        assert!((p.amplitude - 0.5).abs() / 0.5 < 1e-3);
        assert!((p.frequency - f).abs() < 0.1 * est.raw_bin_width());
    }

    #[test]
    fn zero_and_short_series() {
        let est = spectrum(&vec![0.0; 512], 1e-12, Window::Hann, 4).unwrap();
        assert!(est.amplitudes.iter().all(|&a| a == 0.0));
        assert!(spectrum(&vec![0.0; 255], 1e-12, Window::Hann, 4).is_err());
    }

    #[test]
    fn parseval_rectangular() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [1024usize, 1023] {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let est = spectrum(&x, 1e-12, Window::Rectangular, 1).unwrap();
            let time: f64 = x.iter().map(|v| v * v).sum();
            let last = est.amplitudes.len() - 1;
            let freq: f64 = est
                .amplitudes
                .iter()
                .enumerate()
                .map(|(k, a)| {
                    let edge = k == 0 || (n % 2 == 0 && k == last);
                    if edge {
                        a * a
                    } else {
                        a * a / 2.0
                    }
                })
                .sum::<f64>()
                * n as f64;
            assert!((time - freq).abs() / time < 1e-9);
        }
    }

    #[test]
    fn frequency_estimator_across_offsets() {
        let (n, dt) = (8192, 1e-12);
        let raw = 1.0 / (n as f64 * dt);
        for i in 0..20 {
            let f = (700.0 + i as f64 / 20.0) * raw;
            let est = spectrum(&tone(n, dt, f, 1.0, 0.3 * i as f64), dt, Window::Hann, 4).unwrap();
            let p = est.peak_in(10.0 * raw, 4000.0 * raw).unwrap();
            assert!((p.frequency - f).abs() < 0.1 * raw, "offset {i}");
        }
    }

    fn plan(freqs: &[f64], margin: f64) -> ChannelPlan {
        ChannelPlan {
            channels: freqs
                .iter()
                .enumerate()
                .map(|(i, &f)| Channel { index: i, target: f, i_dc: 0.0, i_rf: 0.0, f_inj: f })
                .collect(),
            margin,
            resolution: 10e-6,
        }
    }

    #[test]
    fn twenty_tone_recovery() {
        let (n, dt) = (100_000, 1e-12);
        let freqs: Vec<f64> = (0..20).map(|k| 12.0e9 + k as f64 * 0.1e9 + 3.3e6).collect();
        let amps: Vec<f64> = (0..20).map(|k| 0.05 + 0.01 * k as f64).collect();
        let mut x = vec![0.0; n];
        for (k, (&f, &a)) in freqs.iter().zip(&amps).enumerate() {
            for (j, v) in tone(n, dt, f, a, k as f64).iter().enumerate() {
                x[j] += v;
            }
        }
        let est = spectrum(&x, dt, Window::Hann, 4).unwrap();
        let got = channel_amplitudes(&est, &plan(&freqs, 0.1e9), 0.04e9).unwrap();
        for (g, a) in got.iter().zip(&amps) {
            assert!((g - a).abs() / a < 0.01, "{g} vs {a}");
        }
        // Channel with no tone: plan a frequency between two tones' windows.
        let idle = channel_amplitudes(&est, &plan(&[25.0e9], 0.1e9), 0.04e9).unwrap();
        assert!(idle[0] < 1e-3 * amps[0]);
        assert!(channel_amplitudes(&est, &plan(&freqs, 0.1e9), 0.05e9).is_err());
    }

    #[test]
    fn detection_examples() {
        let r = detect_uniform(&[0.5], &[0.495], 0.005).unwrap();
        assert_eq!(r.channels[0].present, Some(true));
        assert!((r.channels[0].sensitivity.unwrap() - 0.01).abs() < 1e-12);
        let r = detect_uniform(&[0.5, 0.2], &[0.5, 0.2], 0.0).unwrap();
        assert!(r.flagged().is_empty());
        let r = detect_uniform(&[0.5], &[0.495], 0.02).unwrap();
        assert_eq!(r.channels[0].present, Some(false));
        let r = detect_uniform(&[0.0, 1.0], &[0.1, 1.5], 0.1).unwrap();
        assert_eq!(r.channels[0].present, None);
        assert!(r.channels[0].error.is_some());
        assert_eq!(r.flagged(), vec![1]);
        assert!(detect_uniform(&[1.0], &[1.0, 2.0], 0.1).is_err());
    }

    #[test]
    fn noise_floor_examples() {
        let same = vec![vec![0.5, 0.3]; 12];
        assert!(noise_floor_threshold(&same, 3.0).unwrap().iter().all(|t| t.abs() < 1e-12));
        assert!(noise_floor_threshold(&same[..9], 3.0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sigma = 0.01;
        let replicas: Vec<Vec<f64>> = (0..4000)
            .map(|_| {
                let g: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                vec![0.5 + sigma * g]
            })
            .collect();
        let t = noise_floor_threshold(&replicas, 3.0).unwrap()[0];
        assert!((t - 3.0 * sigma / 0.5).abs() / (3.0 * sigma / 0.5) < 0.05);
        assert_eq!(noise_floor_threshold(&replicas, 0.0).unwrap()[0], 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn amplitude_linear(scale in 0.01f64..100.0, f in 5e9f64..20e9) {
                let x = tone(2048, 1e-12, f, 1.0, 0.0);
                let y: Vec<f64> = x.iter().map(|v| v * scale).collect();
                let a = spectrum(&x, 1e-12, Window::Hann, 4).unwrap();
                let b = spectrum(&y, 1e-12, Window::Hann, 4).unwrap();
                let top = b.amplitudes.iter().fold(0.0f64, |m, v| m.max(*v));
                for (p, q) in a.amplitudes.iter().zip(&b.amplitudes) {
                    prop_assert!((p * scale - q).abs() <= 1e-12 * top);
                }
            }

            #[test]
            fn leakage_between_spaced_tones(f in 10e9f64..14e9, offset in 0.0f64..1.0) {
                // 50 ns record, tones 0.1 GHz apart.
                let (n, dt) = (50_000, 1e-12);
                let f2 = f + 0.1e9 + offset * 1e6;
                let x = tone(n, dt, f2, 1.0, 0.4);
                let est = spectrum(&x, dt, Window::Hann, 4).unwrap();
                let leak = est.peak_in(f - 0.04e9, f + 0.04e9).unwrap().amplitude;
                prop_assert!(leak < 0.01);
            }

            #[test]
            fn raising_threshold_never_adds_detections(b in 0.1f64..1.0, m in 0.0f64..2.0, t in 0.0f64..0.5, dt in 0.0f64..0.5) {
                let lo = detect_uniform(&[b], &[m], t).unwrap();
                let hi = detect_uniform(&[b], &[m], t + dt).unwrap();
                if lo.channels[0].present == Some(false) {
                    prop_assert_eq!(hi.channels[0].present, Some(false));
                }
            }
        }
    }
}
