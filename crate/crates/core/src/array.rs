//! Frequency-division-multiplexed oscillator array: channel planning on a
//! quantized bias grid, capacitive mixing, drift calibration and time-slot
//! scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bead::{bead_perturbation, BeadParams, QuadratureConfig};
use crate::dsp::{spectrum, SpectralEstimate, Window};
use crate::dynamics::{DriveCurrent, MagnetParams, Simulator};
use crate::error::{Error, Result};
use crate::metrics::{trim, Probe, ZERO_PAD};
use crate::mtj::{voltage_series_with, ResistancePair, SignConvention};
use crate::units::Vec3;

/// Free-running frequency sampled against DC bias.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasCurve {
    /// (bias A, frequency Hz), sorted by bias.
    points: Vec<(f64, f64)>,
}

impl BiasCurve {
    /// Requires at least two points and strictly monotone frequency.
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::domain("bias curve needs at least two points"));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let up = points[1].1 > points[0].1;
        for w in points.windows(2) {
            let ok = if up { w[1].1 > w[0].1 } else { w[1].1 < w[0].1 };
            if !ok || w[1].0 == w[0].0 {
                return Err(Error::domain(format!(
                    "bias curve is not strictly monotone near {:.3e} A",
                    w[1].0
                )));
            }
        }
        Ok(BiasCurve { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn frequency_span(&self) -> (f64, f64) {
        let (a, b) = (self.points[0].1, self.points[self.points.len() - 1].1);
        (a.min(b), a.max(b))
    }

    /// Bias giving frequency `f`, by linear interpolation.
    pub fn invert(&self, f: f64) -> Option<f64> {
        let (lo, hi) = self.frequency_span();
        if f < lo || f > hi {
            return None;
        }
        self.points.windows(2).find_map(|w| {
            let ((i0, f0), (i1, f1)) = (w[0], w[1]);
            let inside = (f - f0) * (f - f1) <= 0.0;
            inside.then(|| i0 + (f - f0) / (f1 - f0) * (i1 - i0))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Channel {
    pub index: usize,
    pub target: f64,
    pub i_dc: f64,
    pub i_rf: f64,
    pub f_inj: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPlan {
    pub channels: Vec<Channel>,
    pub margin: f64,
    pub resolution: f64,
}

impl ChannelPlan {
    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn min_gap(&self) -> f64 {
        let mut f: Vec<f64> = self.channels.iter().map(|c| c.target).collect();
        f.sort_by(f64::total_cmp);
        f.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }
}

/// Rounds to the nearest multiple of `resolution`.
pub fn quantize(i: f64, resolution: f64) -> f64 {
    (i / resolution).round() * resolution
}

/// Targets `f_start + k·margin`, biases from the inverted curve rounded to
/// the resolution grid, injection at the target frequency.
pub fn plan_channels(
    n: usize,
    f_start: f64,
    margin: f64,
    curve: &BiasCurve,
    resolution: f64,
    i_rf: f64,
) -> Result<ChannelPlan> {
    if n == 0 {
        return Err(Error::domain("channel count must be at least 1"));
    }
    if !(margin > 0.0 && resolution > 0.0) {
        return Err(Error::domain("margin and bias resolution must be positive"));
    }
    let (lo, hi) = curve.frequency_span();
    if n > 1 && margin > (hi - lo) / (n - 1) as f64 {
        return Err(Error::Planning {
            channel: n - 1,
            reason: format!(
                "{n} channels at {:.3} GHz spacing exceed the bias-curve span {:.3}-{:.3} GHz",
                margin / 1e9,
                lo / 1e9,
                hi / 1e9
            ),
        });
    }
    let channels = (0..n)
        .map(|k| {
            let target = f_start + k as f64 * margin;
            let i = curve.invert(target).ok_or_else(|| Error::Planning {
                channel: k,
                reason: format!(
                    "target {:.4} GHz is outside the bias curve ({:.4}-{:.4} GHz)",
                    target / 1e9,
                    lo / 1e9,
                    hi / 1e9
                ),
            })?;
            Ok(Channel { index: k, target, i_dc: quantize(i, resolution), i_rf, f_inj: target })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelPlan { channels, margin, resolution })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingModel {
    pub coefficients: Vec<f64>,
}

impl CouplingModel {
    pub fn uniform(n: usize) -> Self {
        CouplingModel { coefficients: vec![1.0 / n as f64; n] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.coefficients.iter().any(|&c| !(c >= 0.0)) || !self.coefficients.iter().any(|&c| c > 0.0) {
            return Err(Error::domain("coupling coefficients must be nonnegative with at least one positive"));
        }
        Ok(())
    }
}

/// Σ c_i·V_i(t).
pub fn mix(signals: &[Vec<f64>], coupling: &CouplingModel) -> Result<Vec<f64>> {
    coupling.validate()?;
    if signals.len() != coupling.coefficients.len() {
        return Err(Error::domain(format!(
            "{} signals but {} coupling coefficients",
            signals.len(),
            coupling.coefficients.len()
        )));
    }
    let n = signals.first().map_or(0, Vec::len);
    if signals.iter().any(|s| s.len() != n) {
        return Err(Error::domain("signals have different lengths"));
    }
    let mut out = vec![0.0; n];
    for (s, &c) in signals.iter().zip(&coupling.coefficients) {
        for (o, v) in out.iter_mut().zip(s) {
            *o += c * v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdmSchedule {
    pub slots: Vec<Vec<usize>>,
    pub slot_duration: f64,
}

impl TdmSchedule {
    pub fn total_time(&self) -> f64 {
        self.slots.len() as f64 * self.slot_duration
    }
}

/// Consecutive sensors fill each slot in turn; the last slot may be partial.
pub fn schedule_tdm(total: usize, per_slot: usize, slot_duration: f64) -> Result<TdmSchedule> {
    if total == 0 || per_slot == 0 {
        return Err(Error::domain("sensor and per-slot counts must be at least 1"));
    }
    let ids: Vec<usize> = (0..total).collect();
    Ok(TdmSchedule { slots: ids.chunks(per_slot).map(<[usize]>::to_vec).collect(), slot_duration })
}

/// Static multiplicative parameter drift per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftScenario {
    pub ms_factor: Vec<f64>,
    pub alpha_factor: Vec<f64>,
}

impl DriftScenario {
    pub fn none(n: usize) -> Self {
        DriftScenario { ms_factor: vec![1.0; n], alpha_factor: vec![1.0; n] }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.ms_factor.len() != n || self.alpha_factor.len() != n {
            return Err(Error::domain("drift scenario must cover every channel"));
        }
        if self.ms_factor.iter().chain(&self.alpha_factor).any(|&f| !(f > 0.0)) {
            return Err(Error::domain("drift factors must be positive"));
        }
        Ok(())
    }

    pub fn is_drifted(&self, channel: usize) -> bool {
        self.ms_factor[channel] != 1.0 || self.alpha_factor[channel] != 1.0
    }

    pub fn apply(&self, channel: usize, params: &MagnetParams) -> MagnetParams {
        MagnetParams {
            ms_free: params.ms_free * self.ms_factor[channel],
            alpha: params.alpha * self.alpha_factor[channel],
            ..*params
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub bias: f64,
    pub frequency: f64,
    pub iterations: usize,
    /// (bias A, measured frequency Hz) in evaluation order.
    pub trace: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSettings {
    pub margin: f64,
    pub step: f64,
    pub max_iter: usize,
    /// Injection amplitude active during measurement (injection at f_target).
    pub i_rf: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings { margin: 0.1e9, step: 10e-6, max_iter: 40, i_rf: 100e-6 }
    }
}

fn measured_frequency(probe: &Probe, i_dc: f64, f_target: f64, i_rf: f64) -> Result<f64> {
    let drive = DriveCurrent { i_dc, i_rf, f_rf: f_target, phase: 0.0 };
    Ok(probe.measure(&drive)?.frequency)
}

/// Steps the bias one grid step at a time toward `f_target`, using the
/// measured local slope for direction, until within margin/2.
pub fn calibrate_bias(probe: &Probe, f_target: f64, start: f64, s: &CalibrationSettings) -> Result<Calibration> {
    if !(s.step > 0.0) {
        return Err(Error::domain("calibration step must be positive"));
    }
    let tol = 0.5 * s.margin;
    let mut trace = Vec::new();
    let fail = |reason: String, trace: &Vec<(f64, f64)>| Error::Calibration { reason, trace: trace.clone() };
    let measure = |i: f64, trace: &mut Vec<(f64, f64)>| -> Result<f64> {
        match measured_frequency(probe, i, f_target, s.i_rf) {
            Ok(f) => {
                trace.push((i, f));
                Ok(f)
            }
            Err(Error::NoOscillation(m)) => {
                Err(fail(format!("no oscillation at {:.1} uA: {m}", i * 1e6), trace))
            }
            Err(e) => Err(e),
        }
    };
    let mut i = quantize(start, s.step);
    let mut f = measure(i, &mut trace)?;
    let mut iterations = 1;
    if (f - f_target).abs() <= tol {
        return Ok(Calibration { bias: i, frequency: f, iterations, trace });
    }
    // Local slope from one neighboring grid point.
    let probe_i = i + s.step;
    let f_probe = measure(probe_i, &mut trace)?;
    let slope = f_probe - f;
    if slope == 0.0 {
        return Err(fail("flat frequency response; cannot choose a direction".into(), &trace));
    }
    let dir = ((f_target - f) * slope).signum();
    let mut err_prev = f - f_target;
    while iterations < s.max_iter {
        let next = i + dir * s.step;
        let f_next = if next == probe_i { f_probe } else { measure(next, &mut trace)? };
        iterations += 1;
        if (f_next - f) * dir * slope < 0.0 && (f_next - f).abs() > tol {
            return Err(fail("non-monotone frequency response".into(), &trace));
        }
        i = next;
        f = f_next;
        let err = f - f_target;
        if err.abs() <= tol {
            return Ok(Calibration { bias: i, frequency: f, iterations, trace });
        }
        if err.signum() != err_prev.signum() {
            return Err(fail(
                format!("target {:.4} GHz falls between grid points", f_target / 1e9),
                &trace,
            ));
        }
        err_prev = err;
    }
    Err(fail(format!("no convergence within {} iterations", s.max_iter), &trace))
}

/// Measured frequency on every grid point in `[lo, hi]`; the exhaustive
/// reference for calibration.
pub fn scan_bias_grid(probe: &Probe, f_target: f64, lo: f64, hi: f64, s: &CalibrationSettings) -> Vec<(f64, Option<f64>)> {
    let (a, b) = ((lo / s.step).round() as i64, (hi / s.step).round() as i64);
    (a..=b)
        .map(|k| {
            let i = k as f64 * s.step;
            (i, measured_frequency(probe, i, f_target, s.i_rf).ok())
        })
        .collect()
}

/// Everything shared by the channels of an array run.
#[derive(Debug, Clone, PartialEq)]
pub struct ArraySetup {
    /// Nominal device; its observable is ignored (the array reads voltage).
    pub probe: Probe,
    pub resistance: ResistancePair,
    pub sign: SignConvention,
    pub coupling: CouplingModel,
    pub bead: BeadParams,
    pub quadrature: QuadratureConfig,
    pub calibration: CalibrationSettings,
    pub search_halfwidth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTruth {
    pub index: usize,
    pub bead: bool,
    pub bead_field: Option<Vec3>,
    pub i_dc: f64,
    pub calibrated: bool,
    pub f_inj: f64,
    /// Spectral amplitude of this channel's own voltage near f_inj.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayRun {
    pub dt: f64,
    /// Trimmed, mixed voltage record.
    pub mixed: Vec<f64>,
    pub channels: Vec<ChannelTruth>,
}

/// Per-channel random stream: the master seed with the channel index as the
/// ChaCha stream number.
pub fn channel_rng(seed: u64, channel: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(channel as u64);
    rng
}

fn readout_spectrum(series: &[f64], dt: f64) -> Result<SpectralEstimate> {
    let mean = series.iter().sum::<f64>() / series.len().max(1) as f64;
    let centered: Vec<f64> = series.iter().map(|v| v - mean).collect();
    spectrum(&centered, dt, Window::Hann, ZERO_PAD)
}

/// Simulates each channel independently, mixes the trimmed voltages and
/// keeps per-channel ground truth.
pub fn run_array(
    plan: &ChannelPlan,
    drift: &DriftScenario,
    beads: &[bool],
    setup: &ArraySetup,
    seed: u64,
) -> Result<ArrayRun> {
    let n = plan.len();
    drift.validate(n)?;
    if beads.len() != n || setup.coupling.coefficients.len() != n {
        return Err(Error::domain("bead flags and coupling must cover every channel"));
    }
    let dt = setup.probe.integrator.dt;
    let mut voltages = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for ch in &plan.channels {
        let k = ch.index;
        let run = || -> Result<(Vec<f64>, ChannelTruth)> {
            let params = drift.apply(k, &setup.probe.params);
            let mut probe = Probe { params, ..setup.probe };
            let mut i_dc = ch.i_dc;
            let calibrated = drift.is_drifted(k);
            if calibrated {
                let cal = CalibrationSettings { i_rf: ch.i_rf, ..setup.calibration };
                let noiseless = Probe {
                    sources: crate::dynamics::FieldSources { thermal_enabled: false, ..probe.sources },
                    integrator: crate::dynamics::IntegratorConfig {
                        scheme: crate::dynamics::Scheme::Rk4,
                        ..probe.integrator
                    },
                    ..probe
                };
                i_dc = calibrate_bias(&noiseless, ch.f_inj, ch.i_dc, &cal)?.bias;
            }
            let bead_field = if beads[k] {
                let b = bead_perturbation(&setup.bead, &params, probe.sources.h_static, &setup.quadrature)?;
                Some(b.averaged.field)
            } else {
                None
            };
            probe.sources.bead_field = bead_field;
            let drive = DriveCurrent { i_dc, i_rf: ch.i_rf, f_rf: ch.f_inj, phase: 0.0 };
            let traj = Simulator::with_rng(probe.params, probe.sources, drive, probe.integrator, channel_rng(seed, k))?
                .run(probe.initial, probe.duration)?;
            let v = voltage_series_with(&traj, params.pinned_dir, &setup.resistance, setup.sign)?;
            let v = trim(&v, probe.trim).to_vec();
            let est = readout_spectrum(&v, dt)?;
            let amplitude = est
                .peak_in(ch.f_inj - setup.search_halfwidth, ch.f_inj + setup.search_halfwidth)
                .map_or(0.0, |p| p.amplitude);
            Ok((
                v,
                ChannelTruth { index: k, bead: beads[k], bead_field, i_dc, calibrated, f_inj: ch.f_inj, amplitude },
            ))
        };
        let (v, t) = run().map_err(|e| e.in_channel(k))?;
        voltages.push(v);
        truth.push(t);
    }
    let mixed = mix(&voltages, &setup.coupling)?;
    Ok(ArrayRun { dt, mixed, channels: truth })
}

/// Per-channel amplitudes recovered from the mixed record, divided by each
/// channel's coupling weight.
pub fn demux(run: &ArrayRun, plan: &ChannelPlan, coupling: &CouplingModel, halfwidth: f64) -> Result<Vec<f64>> {
    let est = readout_spectrum(&run.mixed, run.dt)?;
    let raw = crate::dsp::channel_amplitudes(&est, plan, halfwidth)?;
    Ok(raw
        .iter()
        .zip(&coupling.coefficients)
        .map(|(a, &c)| if c > 0.0 { a / c } else { 0.0 })
        .collect())
}

/// Mean-removed Hann spectrum of a mixed record.
pub fn mixed_spectrum(run: &ArrayRun) -> Result<SpectralEstimate> {
    readout_spectrum(&run.mixed, run.dt)
}
