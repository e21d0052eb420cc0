//! Experiment configuration: a TOML document with unit-suffixed scalars,
//! resolved to SI with reference-device defaults for anything omitted.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use serde_json::{json, Value};
use stno::array::CalibrationSettings;
use stno::bead::{BeadParams, QuadratureConfig};
use stno::dynamics::{DriveCurrent, FieldSources, IntegratorConfig, MagnetParams, Scheme};
use stno::metrics::{LockScan, Observable, Probe};
use stno::mtj::{ResistancePair, SignConvention};
use stno::units::KB;
use stno::Vec3;

use crate::error::{ConfigError, HarnessError};
use crate::units::{
    parse_energy, parse_si, Angle, Area, Current, Dimension, Dimensionless, Energy, Field, Frequency, Length,
    Magnetization, RawScalar, Resistance, Temperature, Time, Q,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    SingleRun,
    FreqVsBias,
    AmpVsRf,
    BiasVsArea,
    MonteCarlo,
    SensitivitySweep,
    DriftCalibration,
    ArrayDemo,
    LockingRange,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        ExperimentKind::SingleRun,
        ExperimentKind::FreqVsBias,
        ExperimentKind::AmpVsRf,
        ExperimentKind::BiasVsArea,
        ExperimentKind::MonteCarlo,
        ExperimentKind::SensitivitySweep,
        ExperimentKind::DriftCalibration,
        ExperimentKind::ArrayDemo,
        ExperimentKind::LockingRange,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SingleRun => "single-run",
            ExperimentKind::FreqVsBias => "freq-vs-bias",
            ExperimentKind::AmpVsRf => "amp-vs-rf",
            ExperimentKind::BiasVsArea => "bias-vs-area",
            ExperimentKind::MonteCarlo => "montecarlo",
            ExperimentKind::SensitivitySweep => "sensitivity-sweep",
            ExperimentKind::DriftCalibration => "drift-calibration",
            ExperimentKind::ArrayDemo => "array-demo",
            ExperimentKind::LockingRange => "locking-range",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentKind::SingleRun => "one trajectory: time series, spectrum, frequency and amplitude",
            ExperimentKind::FreqVsBias => "oscillation frequency and amplitude along a sweep axis (default i_dc)",
            ExperimentKind::AmpVsRf => "locked amplitude versus injected RF current",
            ExperimentKind::BiasVsArea => "bias current that puts the oscillator at a target frequency, per sweep point",
            ExperimentKind::MonteCarlo => "seeded thermal replicas; frequency mean, std and histogram",
            ExperimentKind::SensitivitySweep => "bead-induced amplitude change along a sweep axis",
            ExperimentKind::DriftCalibration => "bias recalibration under parameter drift, checked against a grid scan",
            ExperimentKind::ArrayDemo => "frequency-multiplexed sensor array with one bead-labelled channel",
            ExperimentKind::LockingRange => "injection locking interval versus RF current",
        }
    }

    /// Default sweep for kinds that take one.
    fn default_sweep(self) -> Option<(Axis, f64, f64, usize)> {
        match self {
            ExperimentKind::FreqVsBias => Some((Axis::IDc, 150e-6, 240e-6, 10)),
            ExperimentKind::AmpVsRf => Some((Axis::IRf, 0.0, 100e-6, 11)),
            ExperimentKind::BiasVsArea => Some((Axis::Area, 400e-18, 1600e-18, 7)),
            ExperimentKind::SensitivitySweep => Some((Axis::IRf, 0.0, 100e-6, 6)),
            ExperimentKind::DriftCalibration => Some((Axis::MsFactor, 0.95, 1.05, 5)),
            ExperimentKind::LockingRange => Some((Axis::IRf, 5e-6, 25e-6, 5)),
            ExperimentKind::SingleRun | ExperimentKind::MonteCarlo | ExperimentKind::ArrayDemo => None,
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ExperimentKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
            format!("unknown experiment kind `{s}` (expected one of {})", names.join(", "))
        })
    }
}

/// Parameters a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    IDc,
    IRf,
    FRf,
    HStatic,
    HRf,
    EnergyBarrier,
    TFree,
    Area,
    Alpha,
    MsFree,
    Polarization,
    Temperature,
    BeadDistance,
    BeadRadius,
    BeadMs,
    MsFactor,
    AlphaFactor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AxisDim {
    Current,
    Frequency,
    Field,
    Energy,
    Length,
    Area,
    Magnetization,
    Temperature,
    Number,
}

impl Axis {
    pub const ALL: [Axis; 17] = [
        Axis::IDc,
        Axis::IRf,
        Axis::FRf,
        Axis::HStatic,
        Axis::HRf,
        Axis::EnergyBarrier,
        Axis::TFree,
        Axis::Area,
        Axis::Alpha,
        Axis::MsFree,
        Axis::Polarization,
        Axis::Temperature,
        Axis::BeadDistance,
        Axis::BeadRadius,
        Axis::BeadMs,
        Axis::MsFactor,
        Axis::AlphaFactor,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Axis::IDc => "i_dc",
            Axis::IRf => "i_rf",
            Axis::FRf => "f_rf",
            Axis::HStatic => "h_static",
            Axis::HRf => "h_rf",
            Axis::EnergyBarrier => "energy_barrier",
            Axis::TFree => "t_free",
            Axis::Area => "area",
            Axis::Alpha => "alpha",
            Axis::MsFree => "ms_free",
            Axis::Polarization => "polarization",
            Axis::Temperature => "temperature",
            Axis::BeadDistance => "bead_distance",
            Axis::BeadRadius => "bead_radius",
            Axis::BeadMs => "bead_ms",
            Axis::MsFactor => "ms_factor",
            Axis::AlphaFactor => "alpha_factor",
        }
    }

    fn dim(self) -> AxisDim {
        match self {
            Axis::IDc | Axis::IRf => AxisDim::Current,
            Axis::FRf => AxisDim::Frequency,
            Axis::HStatic | Axis::HRf => AxisDim::Field,
            Axis::EnergyBarrier => AxisDim::Energy,
            Axis::TFree | Axis::BeadDistance | Axis::BeadRadius => AxisDim::Length,
            Axis::Area => AxisDim::Area,
            Axis::MsFree | Axis::BeadMs => AxisDim::Magnetization,
            Axis::Temperature => AxisDim::Temperature,
            Axis::Alpha | Axis::Polarization | Axis::MsFactor | Axis::AlphaFactor => AxisDim::Number,
        }
    }

    /// SI unit written into CSV headers.
    pub fn unit(self) -> &'static str {
        match self.dim() {
            AxisDim::Current => "A",
            AxisDim::Frequency => "Hz",
            AxisDim::Field | AxisDim::Magnetization => "A_per_m",
            AxisDim::Energy => "J",
            AxisDim::Length => "m",
            AxisDim::Area => "m2",
            AxisDim::Temperature => "K",
            AxisDim::Number => "1",
        }
    }

    /// CSV column name, e.g. `i_dc_A`.
    pub fn column(self) -> String {
        format!("{}_{}", self.symbol(), self.unit())
    }

    fn parse_value(self, text: &str, temperature: f64) -> Result<f64, String> {
        match self.dim() {
            AxisDim::Current => parse_si::<Current>(text),
            AxisDim::Frequency => parse_si::<Frequency>(text),
            AxisDim::Field => parse_si::<Field>(text),
            AxisDim::Length => parse_si::<Length>(text),
            AxisDim::Area => parse_si::<Area>(text),
            AxisDim::Magnetization => parse_si::<Magnetization>(text),
            AxisDim::Temperature => parse_si::<Temperature>(text),
            AxisDim::Number => parse_si::<Dimensionless>(text),
            AxisDim::Energy => parse_energy(text).map(|e| energy_to_joules(e, temperature)),
        }
    }

    /// Copy of `cfg` with this axis set to `value` (SI).
    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> ExperimentConfig {
        let mut c = cfg.clone();
        let g = &mut c.params.geometry;
        match self {
            Axis::IDc => c.drive.i_dc = value,
            Axis::IRf => c.drive.i_rf = value,
            Axis::FRf => c.f_rf = Some(value),
            Axis::HStatic => c.sources.h_static = c.static_dir * value,
            Axis::HRf => c.sources.h_rf_amplitude = c.rf_dir * value,
            Axis::EnergyBarrier => c.params.energy_barrier = value,
            Axis::TFree => g.t_free = value,
            Axis::Area => {
                let side = value.max(0.0).sqrt();
                g.length = side;
                g.width = side;
            }
            Axis::Alpha => c.params.alpha = value,
            Axis::MsFree => c.params.ms_free = value,
            Axis::Polarization => c.params.polarization = value,
            Axis::Temperature => {
                c.params.temperature = value;
                c.bead.temperature = value;
            }
            Axis::BeadDistance => c.bead.position = Vec3::new(c.bead.position.x, c.bead.position.y, value),
            Axis::BeadRadius => c.bead.radius = value,
            Axis::BeadMs => c.bead.ms = value,
            Axis::MsFactor => c.drift.ms_factor = value,
            Axis::AlphaFactor => c.drift.alpha_factor = value,
        }
        c
    }
}

fn energy_to_joules(e: Energy, temperature: f64) -> f64 {
    match e {
        Energy::Joules(j) => j,
        Energy::ThermalUnits(n) => n * KB * temperature,
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Axis::ALL.into_iter().find(|a| a.symbol() == s).ok_or_else(|| {
            let names: Vec<&str> = Axis::ALL.iter().map(|a| a.symbol()).collect();
            format!("unknown sweep axis `{s}` (expected one of {})", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub axis: Axis,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Sweep {
    /// Evenly spaced values, endpoints included.
    pub fn values(&self) -> Vec<f64> {
        let n = self.points;
        (0..n)
            .map(|k| {
                if k + 1 == n {
                    self.stop
                } else {
                    // Rounded to 15 significant digits so 150 uA + k·10 uA
                    // reads back as written.
                    let v = self.start + (self.stop - self.start) * k as f64 / (n - 1) as f64;
                    format!("{v:.14e}").parse().unwrap_or(v)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    Mz,
    Voltage,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub integrator: IntegratorConfig,
    pub duration: f64,
    pub trim: f64,
    pub initial: Vec3,
    pub readout: Readout,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LockSettings {
    pub scan: LockScan,
    pub duration: f64,
    pub trim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloSettings {
    pub replicas: usize,
    pub bins: usize,
    /// Frequency margin the 2σ spread is compared against.
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationConfig {
    pub settings: CalibrationSettings,
    pub f_target: f64,
    /// Bounds of the nominal bias curve and the exhaustive grid scan.
    pub scan_start: f64,
    pub scan_stop: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreaSearch {
    pub f_target: f64,
    pub i_min: f64,
    pub i_max: f64,
    /// Bisection stops when the bias bracket is narrower than this.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayConfig {
    pub channels: usize,
    pub f_start: f64,
    pub margin: f64,
    pub resolution: f64,
    pub i_rf: f64,
    pub bead_channel: Option<usize>,
    pub trials: usize,
    pub noise_replicas: usize,
    pub threshold_multiplier: f64,
    /// Lower bound on every detection threshold.
    pub threshold_floor: f64,
    pub search_halfwidth: f64,
    pub curve_start: f64,
    pub curve_stop: f64,
    pub curve_points: usize,
    /// Per-channel Ms drift factors; empty means no drift.
    pub ms_drift: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftFactors {
    pub ms_factor: f64,
    pub alpha_factor: f64,
}

/// Fully resolved experiment, SI throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub params: MagnetParams,
    pub resistance: ResistancePair,
    pub sign: SignConvention,
    pub sources: FieldSources,
    pub static_dir: Vec3,
    pub rf_dir: Vec3,
    pub drive: DriveCurrent,
    /// Injection frequency; `None` injects at the noise-free free-running
    /// frequency of the point being measured.
    pub f_rf: Option<f64>,
    pub run: RunSettings,
    pub bead: BeadParams,
    /// Whether a `[bead]` section was given (single-run applies the bead
    /// field only then).
    pub bead_present: bool,
    pub quadrature: QuadratureConfig,
    pub drift: DriftFactors,
    pub sweep: Option<Sweep>,
    pub lock: LockSettings,
    pub montecarlo: MonteCarloSettings,
    pub calibration: CalibrationConfig,
    pub area: AreaSearch,
    pub array: ArrayConfig,
}

impl ExperimentConfig {
    /// Reference configuration for `kind` (the empty document).
    pub fn defaults(kind: ExperimentKind) -> Self {
        parse_config(&format!("kind = \"{}\"\n", kind.name())).expect("defaults parse")
    }

    /// Device with drift factors applied.
    pub fn device(&self) -> MagnetParams {
        MagnetParams {
            ms_free: self.params.ms_free * self.drift.ms_factor,
            alpha: self.params.alpha * self.drift.alpha_factor,
            ..self.params
        }
    }

    pub fn observable(&self) -> Observable {
        match self.run.readout {
            Readout::Mz => Observable::Mz,
            Readout::Voltage => Observable::Voltage(self.resistance, self.sign),
        }
    }

    /// Probe over the drifted device with the configured run settings.
    pub fn probe(&self) -> Probe {
        Probe {
            params: self.device(),
            sources: self.sources,
            integrator: self.run.integrator,
            initial: stno::dynamics::SimState::new(self.run.initial),
            duration: self.run.duration,
            trim: self.run.trim,
            observable: self.observable(),
        }
    }

    /// Same probe without thermal noise, integrated with RK4.
    pub fn noiseless_probe(&self) -> Probe {
        let mut p = self.probe();
        p.sources.thermal_enabled = false;
        p.integrator.scheme = Scheme::Rk4;
        p
    }

    /// Resolved configuration as JSON, SI units, stable key order.
    pub fn to_json(&self) -> Value {
        let v = |x: Vec3| json!([x.x, x.y, x.z]);
        let p = &self.params;
        let g = &p.geometry;
        json!({
            "kind": self.kind.name(),
            "seed": self.seed,
            "device": {
                "length_m": g.length, "width_m": g.width, "t_free_m": g.t_free,
                "t_pinned_m": g.t_pinned, "t_spacer_m": g.t_spacer,
                "ms_free_A_per_m": p.ms_free, "ms_pinned_A_per_m": p.ms_pinned,
                "alpha": p.alpha, "gamma_m_per_A_s": p.gamma, "energy_barrier_J": p.energy_barrier,
                "polarization": p.polarization, "pinned_dir": v(p.pinned_dir), "easy_axis": v(p.easy_axis),
                "temperature_K": p.temperature,
                "r_p_ohm": self.resistance.r_p, "r_ap_ohm": self.resistance.r_ap,
                "sign_convention": match self.sign {
                    SignConvention::ParallelLow => "parallel-low",
                    SignConvention::AsPrinted => "as-printed",
                },
            },
            "field": {
                "static_A_per_m": v(self.sources.h_static),
                "rf_amplitude_A_per_m": v(self.sources.h_rf_amplitude),
                "rf_frequency_Hz": self.sources.h_rf_frequency,
                "thermal": self.sources.thermal_enabled,
            },
            "drive": {
                "i_dc_A": self.drive.i_dc, "i_rf_A": self.drive.i_rf,
                "f_rf_Hz": self.f_rf, "phase_rad": self.drive.phase,
            },
            "run": {
                "dt_s": self.run.integrator.dt,
                "scheme": match self.run.integrator.scheme { Scheme::Rk4 => "rk4", Scheme::Heun => "heun" },
                "renormalize": self.run.integrator.renormalize,
                "duration_s": self.run.duration, "trim": self.run.trim,
                "initial": v(self.run.initial),
                "readout": match self.run.readout { Readout::Mz => "mz", Readout::Voltage => "voltage" },
            },
            "bead": {
                "present": self.bead_present, "radius_m": self.bead.radius, "ms_A_per_m": self.bead.ms,
                "position_m": v(self.bead.position), "temperature_K": self.bead.temperature,
            },
            "quadrature": { "volume_points": self.quadrature.volume_points, "segments": self.quadrature.segments },
            "drift": { "ms_factor": self.drift.ms_factor, "alpha_factor": self.drift.alpha_factor },
            "sweep": self.sweep.as_ref().map(|s| json!({
                "axis": s.axis.symbol(), "unit": s.axis.unit(), "start": s.start, "stop": s.stop, "points": s.points,
            })),
            "lock": {
                "step_Hz": self.lock.scan.step, "max_detuning_Hz": self.lock.scan.max_detuning,
                "tolerance_Hz": self.lock.scan.tolerance, "duration_s": self.lock.duration, "trim": self.lock.trim,
            },
            "montecarlo": {
                "replicas": self.montecarlo.replicas, "bins": self.montecarlo.bins,
                "margin_Hz": self.montecarlo.margin,
            },
            "calibration": {
                "f_target_Hz": self.calibration.f_target, "step_A": self.calibration.settings.step,
                "max_iter": self.calibration.settings.max_iter, "margin_Hz": self.calibration.settings.margin,
                "i_rf_A": self.calibration.settings.i_rf,
                "scan_start_A": self.calibration.scan_start, "scan_stop_A": self.calibration.scan_stop,
            },
            "area_search": {
                "f_target_Hz": self.area.f_target, "i_min_A": self.area.i_min, "i_max_A": self.area.i_max,
                "tolerance_A": self.area.tolerance,
            },
            "array": {
                "channels": self.array.channels, "f_start_Hz": self.array.f_start, "margin_Hz": self.array.margin,
                "resolution_A": self.array.resolution, "i_rf_A": self.array.i_rf,
                "bead_channel": self.array.bead_channel, "trials": self.array.trials,
                "noise_replicas": self.array.noise_replicas,
                "threshold_multiplier": self.array.threshold_multiplier,
                "threshold_floor": self.array.threshold_floor,
                "search_halfwidth_Hz": self.array.search_halfwidth,
                "curve_start_A": self.array.curve_start, "curve_stop_A": self.array.curve_stop,
                "curve_points": self.array.curve_points, "ms_drift": self.array.ms_drift,
            },
        })
    }
}

// ---- document layout ----

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct Doc {
    kind: String,
    seed: Option<u64>,
    out: Option<PathBuf>,
    #[serde(default)]
    device: DeviceDoc,
    #[serde(default)]
    field: FieldDoc,
    #[serde(default)]
    drive: DriveDoc,
    #[serde(default)]
    run: RunDoc,
    bead: Option<BeadDoc>,
    #[serde(default)]
    quadrature: QuadratureDoc,
    #[serde(default)]
    drift: DriftDoc,
    sweep: Option<SweepDoc>,
    #[serde(default)]
    lock: LockDoc,
    #[serde(default)]
    montecarlo: MonteCarloDoc,
    #[serde(default)]
    calibration: CalibrationDoc,
    #[serde(default)]
    area_search: AreaDoc,
    #[serde(default)]
    array: ArrayDoc,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct DeviceDoc {
    length: Option<Q<Length>>,
    width: Option<Q<Length>>,
    t_free: Option<Q<Length>>,
    t_pinned: Option<Q<Length>>,
    t_spacer: Option<Q<Length>>,
    ms_free: Option<Q<Magnetization>>,
    ms_pinned: Option<Q<Magnetization>>,
    alpha: Option<f64>,
    gamma: Option<f64>,
    energy_barrier: Option<Energy>,
    polarization: Option<f64>,
    pinned_dir: Option<[f64; 3]>,
    easy_axis: Option<[f64; 3]>,
    temperature: Option<Q<Temperature>>,
    r_p: Option<Q<Resistance>>,
    r_ap: Option<Q<Resistance>>,
    sign_convention: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FieldDoc {
    #[serde(rename = "static")]
    static_: Option<Q<Field>>,
    static_dir: Option<[f64; 3]>,
    rf_amplitude: Option<Q<Field>>,
    rf_dir: Option<[f64; 3]>,
    rf_frequency: Option<Q<Frequency>>,
    thermal: Option<bool>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct DriveDoc {
    i_dc: Option<Q<Current>>,
    i_rf: Option<Q<Current>>,
    f_rf: Option<Q<Frequency>>,
    phase: Option<Q<Angle>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RunDoc {
    dt: Option<Q<Time>>,
    duration: Option<Q<Time>>,
    trim: Option<f64>,
    scheme: Option<String>,
    renormalize: Option<bool>,
    initial: Option<[f64; 3]>,
    readout: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct BeadDoc {
    radius: Option<Q<Length>>,
    ms: Option<Q<Magnetization>>,
    position: Option<[Q<Length>; 3]>,
    temperature: Option<Q<Temperature>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct QuadratureDoc {
    volume_points: Option<usize>,
    segments: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct DriftDoc {
    ms_factor: Option<f64>,
    alpha_factor: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepDoc {
    axis: String,
    start: RawScalar,
    stop: RawScalar,
    points: usize,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct LockDoc {
    step: Option<Q<Frequency>>,
    max_detuning: Option<Q<Frequency>>,
    tolerance: Option<Q<Frequency>>,
    duration: Option<Q<Time>>,
    trim: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct MonteCarloDoc {
    replicas: Option<usize>,
    bins: Option<usize>,
    margin: Option<Q<Frequency>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CalibrationDoc {
    f_target: Option<Q<Frequency>>,
    step: Option<Q<Current>>,
    max_iter: Option<usize>,
    margin: Option<Q<Frequency>>,
    i_rf: Option<Q<Current>>,
    scan_start: Option<Q<Current>>,
    scan_stop: Option<Q<Current>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct AreaDoc {
    f_target: Option<Q<Frequency>>,
    i_min: Option<Q<Current>>,
    i_max: Option<Q<Current>>,
    tolerance: Option<Q<Current>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ArrayDoc {
    channels: Option<usize>,
    f_start: Option<Q<Frequency>>,
    margin: Option<Q<Frequency>>,
    resolution: Option<Q<Current>>,
    i_rf: Option<Q<Current>>,
    bead_channel: Option<i64>,
    trials: Option<usize>,
    noise_replicas: Option<usize>,
    threshold_multiplier: Option<f64>,
    threshold_floor: Option<f64>,
    search_halfwidth: Option<Q<Frequency>>,
    curve_start: Option<Q<Current>>,
    curve_stop: Option<Q<Current>>,
    curve_points: Option<usize>,
    ms_drift: Option<Vec<f64>>,
}

fn si<D: Dimension>(q: Option<Q<D>>, default: f64) -> f64 {
    q.map_or(default, |q| q.si)
}

fn direction(path: &str, v: Option<[f64; 3]>, default: Vec3) -> Result<Vec3, ConfigError> {
    match v {
        None => Ok(default),
        Some([x, y, z]) => {
            let d = Vec3::new(x, y, z);
            if !(d.is_finite() && d.norm() > 0.0) {
                return Err(ConfigError::semantic(path, "direction must be a finite nonzero vector"));
            }
            Ok(d.normalized())
        }
    }
}

/// Parses and resolves a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = toml::de::Deserializer::parse(text).map_err(|e| ConfigError::from_toml(text, String::new(), &e))?;
    let doc: Doc = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::from_toml(text, if path == "." { String::new() } else { path }, e.inner())
    })?;
    resolve(doc).map_err(|e| e.with_line_from(text))
}

/// Reads and parses a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Io { path: path.to_path_buf(), source: e })?;
    Ok(parse_config(&text)?)
}

fn resolve(doc: Doc) -> Result<ExperimentConfig, ConfigError> {
    let kind: ExperimentKind = doc.kind.parse().map_err(|e: String| ConfigError::semantic("kind", e))?;
    let base = MagnetParams::default();
    let d = doc.device;
    let temperature = si(d.temperature, base.temperature);
    let bg = base.geometry;
    let geometry = stno::units::SensorGeometry {
        length: si(d.length, bg.length),
        width: si(d.width, bg.width),
        t_free: si(d.t_free, bg.t_free),
        t_pinned: si(d.t_pinned, bg.t_pinned),
        t_spacer: si(d.t_spacer, bg.t_spacer),
        center: bg.center,
    };
    let params = MagnetParams {
        ms_free: si(d.ms_free, base.ms_free),
        ms_pinned: si(d.ms_pinned, base.ms_pinned),
        alpha: d.alpha.unwrap_or(base.alpha),
        gamma: d.gamma.unwrap_or(base.gamma),
        energy_barrier: d.energy_barrier.map_or(40.0 * KB * temperature, |e| energy_to_joules(e, temperature)),
        geometry,
        polarization: d.polarization.unwrap_or(base.polarization),
        pinned_dir: direction("device.pinned_dir", d.pinned_dir, base.pinned_dir)?,
        easy_axis: direction("device.easy_axis", d.easy_axis, base.easy_axis)?,
        temperature,
    };
    params.validate().map_err(|e| ConfigError::semantic("device", e.to_string()))?;
    let base_r = ResistancePair::default();
    let resistance = ResistancePair { r_p: si(d.r_p, base_r.r_p), r_ap: si(d.r_ap, base_r.r_ap) };
    resistance.validate().map_err(|e| ConfigError::semantic("device.r_p", e.to_string()))?;
    let sign = match d.sign_convention.as_deref() {
        None | Some("parallel-low") => SignConvention::ParallelLow,
        Some("as-printed") => SignConvention::AsPrinted,
        Some(other) => {
            return Err(ConfigError::semantic(
                "device.sign_convention",
                format!("expected `parallel-low` or `as-printed`, got `{other}`"),
            ))
        }
    };

    let f = doc.field;
    let static_dir = direction("field.static_dir", f.static_dir, Vec3::X)?;
    let rf_dir = direction("field.rf_dir", f.rf_dir, Vec3::X)?;
    let h_static = static_dir * si(f.static_, 5000.0 * 1000.0 / (4.0 * std::f64::consts::PI));
    let rf_amp = si(f.rf_amplitude, 0.0);
    let rf_freq = si(f.rf_frequency, 0.0);
    if rf_amp != 0.0 && f.rf_frequency.is_none() {
        return Err(ConfigError::semantic("field.rf_frequency", "required when rf_amplitude is nonzero"));
    }
    let thermal = f.thermal.unwrap_or(kind == ExperimentKind::MonteCarlo);
    if kind == ExperimentKind::MonteCarlo && !thermal {
        return Err(ConfigError::semantic("field.thermal", "montecarlo needs thermal noise"));
    }
    let sources = FieldSources {
        h_static,
        h_rf_amplitude: rf_dir * rf_amp,
        h_rf_frequency: rf_freq,
        bead_field: None,
        thermal_enabled: thermal,
    };
    sources.validate().map_err(|e| ConfigError::semantic("field", e.to_string()))?;

    let dr = doc.drive;
    let drive = DriveCurrent {
        i_dc: si(dr.i_dc, 200e-6),
        i_rf: si(dr.i_rf, 0.0),
        f_rf: 0.0,
        phase: si(dr.phase, 0.0),
    };
    let f_rf = dr.f_rf.map(|q| q.si);

    let r = doc.run;
    let scheme = match r.scheme.as_deref() {
        None => {
            if thermal {
                Scheme::Heun
            } else {
                Scheme::Rk4
            }
        }
        Some("rk4") => Scheme::Rk4,
        Some("heun") => Scheme::Heun,
        Some(other) => {
            return Err(ConfigError::semantic("run.scheme", format!("expected `rk4` or `heun`, got `{other}`")))
        }
    };
    if thermal && scheme == Scheme::Rk4 {
        return Err(ConfigError::semantic("run.scheme", "thermal noise requires the heun scheme"));
    }
    let readout = match r.readout.as_deref() {
        None | Some("mz") => Readout::Mz,
        Some("voltage") => Readout::Voltage,
        Some(other) => {
            return Err(ConfigError::semantic("run.readout", format!("expected `mz` or `voltage`, got `{other}`")))
        }
    };
    let tilted = stno::dynamics::SimState::tilted_from(params.easy_axis, 1.0).m;
    let run = RunSettings {
        integrator: IntegratorConfig {
            dt: si(r.dt, 1e-12),
            scheme,
            renormalize: r.renormalize.unwrap_or(true),
            seed: 0,
        },
        duration: si(r.duration, 100e-9),
        trim: r.trim.unwrap_or(stno::metrics::DEFAULT_TRIM),
        initial: direction("run.initial", r.initial, tilted)?,
        readout,
    };
    if !(run.integrator.dt > 0.0 && run.duration > run.integrator.dt) {
        return Err(ConfigError::semantic("run", "need 0 < dt < duration"));
    }
    if !(0.0..1.0).contains(&run.trim) {
        return Err(ConfigError::semantic("run.trim", "trim fraction must lie in [0, 1)"));
    }

    let bead_present = doc.bead.is_some();
    let b = doc.bead.unwrap_or_default();
    let bd = BeadParams::default();
    let bead = BeadParams {
        radius: si(b.radius, bd.radius),
        ms: si(b.ms, bd.ms),
        position: b.position.map_or(bd.position, |[x, y, z]| Vec3::new(x.si, y.si, z.si)),
        temperature: si(b.temperature, temperature),
    };
    bead.validate(&params.geometry).map_err(|e| ConfigError::semantic("bead", e.to_string()))?;
    let qd = QuadratureConfig::default();
    let quadrature = QuadratureConfig {
        volume_points: doc.quadrature.volume_points.unwrap_or(qd.volume_points),
        segments: doc.quadrature.segments.unwrap_or(qd.segments),
    };
    quadrature.validate().map_err(|e| ConfigError::semantic("quadrature", e.to_string()))?;
    let drift = DriftFactors {
        ms_factor: doc.drift.ms_factor.unwrap_or(1.0),
        alpha_factor: doc.drift.alpha_factor.unwrap_or(1.0),
    };
    if !(drift.ms_factor > 0.0 && drift.alpha_factor > 0.0) {
        return Err(ConfigError::semantic("drift", "drift factors must be positive"));
    }

    let sweep = match (doc.sweep, kind.default_sweep()) {
        (Some(s), Some(_)) => {
            let axis: Axis = s.axis.parse().map_err(|e: String| ConfigError::semantic("sweep.axis", e))?;
            let start =
                axis.parse_value(&s.start.0, temperature).map_err(|e| ConfigError::semantic("sweep.start", e))?;
            let stop = axis.parse_value(&s.stop.0, temperature).map_err(|e| ConfigError::semantic("sweep.stop", e))?;
            if s.points < 2 {
                return Err(ConfigError::semantic("sweep.points", "a sweep needs at least 2 points"));
            }
            Some(Sweep { axis, start, stop, points: s.points })
        }
        (Some(_), None) => {
            return Err(ConfigError::semantic("sweep", format!("experiment `{kind}` does not take a sweep")))
        }
        (None, Some((axis, start, stop, points))) => Some(Sweep { axis, start, stop, points }),
        (None, None) => None,
    };

    let l = doc.lock;
    let ld = LockScan::default();
    let lock = LockSettings {
        scan: LockScan {
            step: si(l.step, 25e6),
            max_detuning: si(l.max_detuning, ld.max_detuning),
            tolerance: l.tolerance.map(|q| q.si),
        },
        duration: si(l.duration, 200e-9),
        trim: l.trim.unwrap_or(0.5),
    };
    if !(lock.scan.step > 0.0 && lock.scan.max_detuning >= lock.scan.step) {
        return Err(ConfigError::semantic("lock", "need 0 < step <= max_detuning"));
    }
    if !(0.0..1.0).contains(&lock.trim) {
        return Err(ConfigError::semantic("lock.trim", "trim fraction must lie in [0, 1)"));
    }

    let montecarlo = MonteCarloSettings {
        replicas: doc.montecarlo.replicas.unwrap_or(100),
        bins: doc.montecarlo.bins.unwrap_or(20),
        margin: si(doc.montecarlo.margin, 0.1e9),
    };
    if montecarlo.replicas == 0 || montecarlo.bins == 0 {
        return Err(ConfigError::semantic("montecarlo", "replicas and bins must be at least 1"));
    }

    let c = doc.calibration;
    let cd = CalibrationSettings::default();
    let calibration = CalibrationConfig {
        settings: CalibrationSettings {
            margin: si(c.margin, cd.margin),
            step: si(c.step, cd.step),
            max_iter: c.max_iter.unwrap_or(cd.max_iter),
            i_rf: si(c.i_rf, 20e-6),
        },
        f_target: si(c.f_target, 13.0e9),
        scan_start: si(c.scan_start, 120e-6),
        scan_stop: si(c.scan_stop, 240e-6),
    };
    if !(calibration.settings.step > 0.0 && calibration.scan_stop > calibration.scan_start) {
        return Err(ConfigError::semantic("calibration", "need step > 0 and scan_stop > scan_start"));
    }

    let a = doc.area_search;
    let area = AreaSearch {
        f_target: si(a.f_target, 10e9),
        i_min: si(a.i_min, 20e-6),
        i_max: si(a.i_max, 2e-3),
        tolerance: si(a.tolerance, 0.1e-6),
    };
    if !(area.i_min > 0.0 && area.i_max > area.i_min && area.tolerance > 0.0) {
        return Err(ConfigError::semantic("area_search", "need 0 < i_min < i_max and tolerance > 0"));
    }

    let ar = doc.array;
    let channels = ar.channels.unwrap_or(20);
    let bead_channel = match ar.bead_channel {
        None => Some(7.min(channels.saturating_sub(1))),
        Some(k) if k < 0 => None,
        Some(k) if (k as usize) < channels => Some(k as usize),
        Some(k) => {
            return Err(ConfigError::semantic(
                "array.bead_channel",
                format!("channel {k} does not exist in a {channels}-channel array"),
            ))
        }
    };
    let array = ArrayConfig {
        channels,
        f_start: si(ar.f_start, 12.0e9),
        margin: si(ar.margin, 0.1e9),
        resolution: si(ar.resolution, 10e-6),
        i_rf: si(ar.i_rf, 80e-6),
        bead_channel,
        trials: ar.trials.unwrap_or(20),
        noise_replicas: ar.noise_replicas.unwrap_or(stno::dsp::MIN_NOISE_REPLICAS),
        threshold_multiplier: ar.threshold_multiplier.unwrap_or(3.0),
        threshold_floor: ar.threshold_floor.unwrap_or(5e-4),
        search_halfwidth: si(ar.search_halfwidth, 25e6),
        curve_start: si(ar.curve_start, 150e-6),
        curve_stop: si(ar.curve_stop, 240e-6),
        curve_points: ar.curve_points.unwrap_or(19),
        ms_drift: ar.ms_drift.unwrap_or_default(),
    };
    if array.noise_replicas < stno::dsp::MIN_NOISE_REPLICAS {
        return Err(ConfigError::semantic(
            "array.noise_replicas",
            format!("the noise floor needs at least {} replicas", stno::dsp::MIN_NOISE_REPLICAS),
        ));
    }
    if array.channels == 0 || array.trials == 0 || array.curve_points < 2 {
        return Err(ConfigError::semantic("array", "channels, trials must be >= 1 and curve_points >= 2"));
    }
    if !array.ms_drift.is_empty() && array.ms_drift.len() != array.channels {
        return Err(ConfigError::semantic("array.ms_drift", "needs one factor per channel"));
    }

    Ok(ExperimentConfig {
        kind,
        seed: doc.seed.unwrap_or(0),
        out: doc.out,
        params,
        resistance,
        sign,
        sources,
        static_dir,
        rf_dir,
        drive,
        f_rf,
        run,
        bead,
        bead_present,
        quadrature,
        drift,
        sweep,
        lock,
        montecarlo,
        calibration,
        area,
        array,
    })
}
