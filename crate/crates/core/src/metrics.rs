//! Frequency and amplitude extraction, lock detection and the bead
//! sensitivity metric.

use crate::dsp::{spectrum, Peak, SpectralEstimate, Window};
use crate::dynamics::{DriveCurrent, FieldSources, IntegratorConfig, MagnetParams, SimState, Simulator, Trajectory};
use crate::error::{Error, Result};
use crate::mtj::{voltage_series_with, ResistancePair, SignConvention};

pub const MIN_ANALYSIS_SAMPLES: usize = 1024;
pub const DEFAULT_TRIM: f64 = 0.25;
pub const ZERO_PAD: usize = 4;

/// Peaks must exceed this fraction of the series' full scale.
const FLOOR_RELATIVE: f64 = 1e-9;
/// Raw bins excluded around DC, beyond the Hann main lobe.
const DC_GUARD_BINS: f64 = 3.0;

/// Drops the first `fraction` of the samples.
pub fn trim(series: &[f64], fraction: f64) -> &[f64] {
    let f = fraction.clamp(0.0, 1.0);
    &series[(series.len() as f64 * f).floor() as usize..]
}

fn analysis_spectrum(series: &[f64], dt: f64) -> Result<(SpectralEstimate, f64)> {
    if series.len() < MIN_ANALYSIS_SAMPLES {
        return Err(Error::domain(format!(
            "analysis needs at least {MIN_ANALYSIS_SAMPLES} samples, got {}",
            series.len()
        )));
    }
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let scale = series.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let centered: Vec<f64> = series.iter().map(|v| v - mean).collect();
    Ok((spectrum(&centered, dt, Window::Hann, ZERO_PAD)?, scale))
}

/// Largest non-DC spectral peak of a transient-trimmed series.
pub fn dominant_peak(series: &[f64], dt: f64) -> Result<Peak> {
    let (est, scale) = analysis_spectrum(series, dt)?;
    let f_lo = DC_GUARD_BINS * est.raw_bin_width();
    let peak = est
        .peak_in(f_lo, f64::INFINITY)
        .ok_or_else(|| Error::NoOscillation("record too short for a non-DC bin".into()))?;
    if !(peak.amplitude > FLOOR_RELATIVE * scale) || scale == 0.0 {
        return Err(Error::NoOscillation(format!(
            "largest non-DC peak {:.3e} is below the floor for a signal of scale {:.3e}",
            peak.amplitude, scale
        )));
    }
    Ok(peak)
}

pub fn dominant_frequency(series: &[f64], dt: f64) -> Result<f64> {
    dominant_peak(series, dt).map(|p| p.frequency)
}

/// Hann-windowed, gain-corrected spectral amplitude at the dominant peak.
pub fn steady_amplitude(series: &[f64], dt: f64) -> Result<f64> {
    dominant_peak(series, dt).map(|p| p.amplitude)
}

/// Zero-padded bin width used by the estimators for a record of `n` samples.
pub fn interpolated_bin_width(n: usize, dt: f64) -> f64 {
    1.0 / (n as f64 * ZERO_PAD as f64 * dt)
}

/// True iff the dominant frequency is within `tolerance` of `f_inj`
/// (default one interpolated bin).
pub fn is_locked(series: &[f64], dt: f64, f_inj: f64, tolerance: Option<f64>) -> Result<bool> {
    let tol = tolerance.unwrap_or_else(|| interpolated_bin_width(series.len(), dt));
    Ok((dominant_frequency(series, dt)? - f_inj).abs() <= tol)
}

/// |a_bead − a0| / a0.
pub fn sensitivity(a0: f64, a_bead: f64) -> Result<f64> {
    if !(a0 > 0.0) {
        return Err(Error::domain(format!("reference amplitude must be positive, got {a0:e}")));
    }
    Ok((a_bead - a0).abs() / a0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillationSummary {
    pub frequency: f64,
    pub amplitude: f64,
    pub locked: Option<bool>,
    pub lock_target: Option<f64>,
}

pub fn summarize(series: &[f64], dt: f64, f_inj: Option<f64>) -> Result<OscillationSummary> {
    let p = dominant_peak(series, dt)?;
    let tol = interpolated_bin_width(series.len(), dt);
    Ok(OscillationSummary {
        frequency: p.frequency,
        amplitude: p.amplitude,
        locked: f_inj.map(|f| (p.frequency - f).abs() <= tol),
        lock_target: f_inj,
    })
}

/// Which signal a measurement reads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observable {
    Mz,
    Voltage(ResistancePair, SignConvention),
}

/// A device plus everything needed to turn a drive into a measured series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub params: MagnetParams,
    pub sources: FieldSources,
    pub integrator: IntegratorConfig,
    pub initial: SimState,
    pub duration: f64,
    pub trim: f64,
    pub observable: Observable,
}

impl Probe {
    /// Reference-device probe: m_z over 100 ns at 1 ps, first 25% trimmed.
    pub fn new(params: MagnetParams, sources: FieldSources) -> Self {
        Probe {
            params,
            sources,
            integrator: IntegratorConfig::default(),
            initial: SimState::tilted_from(params.easy_axis, 1.0),
            duration: 100e-9,
            trim: DEFAULT_TRIM,
            observable: Observable::Mz,
        }
    }

    pub fn simulate(&self, drive: &DriveCurrent) -> Result<Trajectory> {
        Simulator::new(self.params, self.sources, *drive, self.integrator)?.run(self.initial, self.duration)
    }

    pub fn signal(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        match self.observable {
            Observable::Mz => Ok(traj.mz()),
            Observable::Voltage(pair, sign) => voltage_series_with(traj, self.params.pinned_dir, &pair, sign),
        }
    }

    /// Trimmed observable series for `drive`.
    pub fn series(&self, drive: &DriveCurrent) -> Result<Vec<f64>> {
        let full = self.signal(&self.simulate(drive)?)?;
        Ok(trim(&full, self.trim).to_vec())
    }

    pub fn measure(&self, drive: &DriveCurrent) -> Result<OscillationSummary> {
        let f_inj = (drive.i_rf > 0.0).then_some(drive.f_rf);
        summarize(&self.series(drive)?, self.integrator.dt, f_inj)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LockScan {
    /// Detuning step, Hz.
    pub step: f64,
    /// Largest detuning tried on either side, Hz.
    pub max_detuning: f64,
    /// Lock tolerance; one interpolated bin when `None`.
    pub tolerance: Option<f64>,
}

impl Default for LockScan {
    fn default() -> Self {
        LockScan { step: 50e6, max_detuning: 1.5e9, tolerance: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LockingRange {
    pub free_running: f64,
    /// Contiguous locked interval (Hz), `None` when empty.
    pub interval: Option<(f64, f64)>,
}

impl LockingRange {
    pub fn width(&self) -> f64 {
        self.interval.map_or(0.0, |(lo, hi)| hi - lo)
    }
}

/// Scans the injection frequency outward from the free-running frequency and
/// returns the contiguous interval over which the oscillator locks.
pub fn locking_range(probe: &Probe, i_dc: f64, i_rf: f64, scan: &LockScan) -> Result<LockingRange> {
    if !(scan.step > 0.0) {
        return Err(Error::domain("lock scan step must be positive"));
    }
    let free_running = probe.measure(&DriveCurrent::dc(i_dc))?.frequency;
    if i_rf <= 0.0 {
        return Ok(LockingRange { free_running, interval: None });
    }
    let locked_at = |f: f64| -> Result<bool> {
        let drive = DriveCurrent { i_dc, i_rf, f_rf: f, phase: 0.0 };
        match probe.series(&drive) {
            Ok(s) => match is_locked(&s, probe.integrator.dt, f, scan.tolerance) {
                Ok(v) => Ok(v),
                Err(Error::NoOscillation(_)) => Ok(false),
                Err(e) => Err(e),
            },
            Err(e) => Err(e),
        }
    };
    if !locked_at(free_running)? {
        return Ok(LockingRange { free_running, interval: None });
    }
    let steps = (scan.max_detuning / scan.step).floor() as i64;
    let mut edge = [0i64; 2];
    for (slot, dir) in [(0usize, -1i64), (1, 1)] {
        for k in 1..=steps {
            if locked_at(free_running + (dir * k) as f64 * scan.step)? {
                edge[slot] = dir * k;
            } else {
                break;
            }
        }
    }
    Ok(LockingRange {
        free_running,
        interval: Some((
            free_running + edge[0] as f64 * scan.step,
            free_running + edge[1] as f64 * scan.step,
        )),
    })
}
