//! Stochastic Landau-Lifshitz-Gilbert-Slonczewski integration for a single
//! macrospin free layer.
//!
//! The Gilbert equation is stepped in its explicit Landau-Lifshitz form:
//!
//! ```text
//! (1 + α²) dm/dt = −γ m×H − αγ m×(m×H) + T + α m×T
//! T = γ a_J m×(m_p×m),   a_J = ħ J P / (μ0 e t_f Ms)
//! ```

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::units::{current_to_density, SensorGeometry, Vec3, E_CHARGE, GAMMA, HBAR, KB, MU0};

/// Free-layer and stack parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagnetParams {
    pub ms_free: f64,
    pub ms_pinned: f64,
    pub alpha: f64,
    /// m/(A·s).
    pub gamma: f64,
    /// Anisotropy energy barrier, J.
    pub energy_barrier: f64,
    pub geometry: SensorGeometry,
    pub polarization: f64,
    pub pinned_dir: Vec3,
    pub easy_axis: Vec3,
    pub temperature: f64,
}

impl Default for MagnetParams {
    /// Reference device: 30×30×1.5 nm³ free layer, Ms 8e5 A/m, α 0.01,
    /// 40 kT barrier at 300 K. The pinned layer lies in-plane, 80° from −x.
    fn default() -> Self {
        let beta = 80f64.to_radians();
        MagnetParams {
            ms_free: 8e5,
            ms_pinned: 15e5,
            alpha: 0.01,
            gamma: GAMMA,
            energy_barrier: 40.0 * KB * 300.0,
            geometry: SensorGeometry::default(),
            polarization: 0.25,
            pinned_dir: Vec3::new(-beta.cos(), beta.sin(), 0.0),
            easy_axis: Vec3::Z,
            temperature: 300.0,
        }
    }
}

impl MagnetParams {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let unit = |name: &str, v: Vec3| {
            if (v.norm() - 1.0).abs() > 1e-9 {
                Err(Error::domain(format!("{name} must be a unit vector, |v| = {}", v.norm())))
            } else {
                Ok(())
            }
        };
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::domain(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.polarization > 0.0 && self.polarization <= 1.0) {
            return Err(Error::domain(format!(
                "polarization must lie in (0, 1], got {}",
                self.polarization
            )));
        }
        if !(self.energy_barrier > 0.0) {
            return Err(Error::domain("energy barrier must be positive"));
        }
        if !(self.ms_free > 0.0) {
            return Err(Error::domain("free-layer Ms must be positive"));
        }
        if !(self.ms_pinned >= 0.0) {
            return Err(Error::domain("pinned-layer Ms must be nonnegative"));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::domain("gamma must be positive"));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::domain("temperature must be nonnegative"));
        }
        unit("pinned_dir", self.pinned_dir)?;
        unit("easy_axis", self.easy_axis)
    }

    /// H_k = 2 E_b / (μ0 Ms V), A/m.
    pub fn anisotropy_field(&self) -> f64 {
        2.0 * self.energy_barrier / (MU0 * self.ms_free * self.geometry.volume_free())
    }

    /// Spin-torque field a_J per unit current density, (A/m) per (A/m²).
    pub fn stt_coefficient(&self) -> f64 {
        HBAR * self.polarization / (MU0 * E_CHARGE * self.geometry.t_free * self.ms_free)
    }

    /// Energy barrier expressed in units of k_B T at the device temperature.
    pub fn barrier_in_kt(&self) -> f64 {
        self.energy_barrier / (KB * self.temperature)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DriveCurrent {
    pub i_dc: f64,
    /// Amplitude of the injected RF current, A.
    pub i_rf: f64,
    pub f_rf: f64,
    pub phase: f64,
}

impl DriveCurrent {
    pub fn dc(i_dc: f64) -> Self {
        DriveCurrent { i_dc, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.i_rf >= 0.0 && self.f_rf >= 0.0) {
            return Err(Error::domain("RF current amplitude and frequency must be nonnegative"));
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> f64 {
        if self.i_rf == 0.0 {
            self.i_dc
        } else {
            self.i_dc + self.i_rf * (2.0 * PI * self.f_rf * t + self.phase).cos()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldSources {
    pub h_static: Vec3,
    pub h_rf_amplitude: Vec3,
    pub h_rf_frequency: f64,
    pub bead_field: Option<Vec3>,
    pub thermal_enabled: bool,
}

impl FieldSources {
    pub fn static_only(h: Vec3) -> Self {
        FieldSources { h_static: h, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h_rf_frequency >= 0.0) {
            return Err(Error::domain("RF field frequency must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimState {
    pub m: Vec3,
    pub t: f64,
}

impl SimState {
    pub fn new(m: Vec3) -> Self {
        SimState { m: m.normalized(), t: 0.0 }
    }

    /// Easy axis tilted by `deg` degrees toward x (or toward y when the easy
    /// axis is itself along x).
    pub fn tilted_from(easy_axis: Vec3, deg: f64) -> Self {
        let e = easy_axis.normalized();
        let toward = if e.cross(Vec3::X).norm() > 1e-6 { Vec3::X } else { Vec3::Y };
        let perp = (toward - e * toward.dot(e)).normalized();
        let a = deg.to_radians();
        SimState::new(e * a.cos() + perp * a.sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Classical fourth-order Runge-Kutta; deterministic runs only.
    Rk4,
    /// Stochastic Heun (Stratonovich); the thermal field is drawn once per step.
    Heun,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub renormalize: bool,
    pub seed: u64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { dt: 1e-12, scheme: Scheme::Rk4, renormalize: true, seed: 0 }
    }
}

/// Magnetization and drive current on a uniform time grid `t0 + k·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub m: Vec<Vec3>,
    pub current: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn mx(&self) -> Vec<f64> {
        self.m.iter().map(|v| v.x).collect()
    }

    pub fn my(&self) -> Vec<f64> {
        self.m.iter().map(|v| v.y).collect()
    }

    pub fn mz(&self) -> Vec<f64> {
        self.m.iter().map(|v| v.z).collect()
    }

    pub fn last_state(&self) -> Option<SimState> {
        self.m.last().map(|&m| SimState { m, t: self.time(self.m.len() - 1) })
    }
}

/// Number of samples recorded for a run: floor(duration/dt) + 1. A small
/// tolerance absorbs the rounding in ratios such as 100 ns / 1 ps.
pub fn sample_count(duration: f64, dt: f64) -> usize {
    (duration / dt * (1.0 + 1e-12)).floor() as usize + 1
}

/// Deterministic effective field: anisotropy, static, RF field and bead
/// field. The thermal term is added by the stepper.
pub fn effective_field(state: &SimState, params: &MagnetParams, sources: &FieldSources, t: f64) -> Vec3 {
    let e = params.easy_axis;
    let mut h = e * (params.anisotropy_field() * state.m.dot(e)) + sources.h_static;
    if sources.h_rf_frequency > 0.0 || sources.h_rf_amplitude != Vec3::ZERO {
        h += sources.h_rf_amplitude * (2.0 * PI * sources.h_rf_frequency * t).cos();
    }
    if let Some(b) = sources.bead_field {
        h += b;
    }
    h
}

/// Slonczewski torque γ a_J m×(m_p×m), in s⁻¹.
pub fn stt_torque(m: Vec3, j: f64, params: &MagnetParams) -> Vec3 {
    let a_j = params.stt_coefficient() * j;
    m.cross(params.pinned_dir.cross(m)) * (params.gamma * a_j)
}

/// Standard deviation of each Cartesian component of the Brown field.
pub fn thermal_sigma(params: &MagnetParams, dt: f64) -> f64 {
    if params.temperature <= 0.0 {
        return 0.0;
    }
    let v = params.geometry.volume_free();
    (2.0 * params.alpha * KB * params.temperature / (params.gamma * MU0 * params.ms_free * v * dt)).sqrt()
}

/// One draw of the thermal fluctuation field for a step of length `dt`.
pub fn thermal_field<R: rand::Rng + ?Sized>(params: &MagnetParams, dt: f64, rng: &mut R) -> Vec3 {
    let s = thermal_sigma(params, dt);
    if s == 0.0 {
        return Vec3::ZERO;
    }
    let mut g = || -> f64 { StandardNormal.sample(rng) };
    Vec3::new(g(), g(), g()) * s
}

/// Energy functional for static fields: Zeeman plus uniaxial anisotropy, J.
pub fn energy(m: Vec3, params: &MagnetParams, h_static: Vec3) -> f64 {
    let v = params.geometry.volume_free();
    let me = m.dot(params.easy_axis);
    -MU0 * params.ms_free * v * m.dot(h_static) - params.energy_barrier * me * me
}

/// A single oscillator instance. Owns its RNG stream.
#[derive(Debug, Clone)]
pub struct Simulator {
    params: MagnetParams,
    sources: FieldSources,
    drive: DriveCurrent,
    config: IntegratorConfig,
    rng: ChaCha8Rng,
    sigma: f64,
    hk: f64,
    aj_per_amp: f64,
}

impl Simulator {
    pub fn new(
        params: MagnetParams,
        sources: FieldSources,
        drive: DriveCurrent,
        config: IntegratorConfig,
    ) -> Result<Self> {
        Self::with_rng(params, sources, drive, config, ChaCha8Rng::seed_from_u64(config.seed))
    }

    /// Uses a caller-provided stream, e.g. one replica of a seeded ensemble.
    pub fn with_rng(
        params: MagnetParams,
        sources: FieldSources,
        drive: DriveCurrent,
        config: IntegratorConfig,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        params.validate()?;
        sources.validate()?;
        drive.validate()?;
        if !(config.dt > 0.0 && config.dt.is_finite()) {
            return Err(Error::domain(format!("dt must be positive, got {:e}", config.dt)));
        }
        let thermal = sources.thermal_enabled && params.temperature > 0.0;
        if thermal && config.scheme == Scheme::Rk4 {
            return Err(Error::domain("thermal noise requires the stochastic Heun scheme"));
        }
        let hk = params.anisotropy_field();
        let f_expected = params.gamma * (sources.h_static.norm() + hk) / (2.0 * PI);
        if config.dt > 1.0 / (50.0 * f_expected) {
            log::warn!(
                "dt = {:e} s gives fewer than 50 samples per period at ~{:.3} GHz",
                config.dt,
                f_expected / 1e9
            );
        }
        let aj_per_amp = params.stt_coefficient() / params.geometry.area();
        Ok(Simulator {
            params,
            sources,
            drive,
            config,
            rng,
            sigma: if thermal { thermal_sigma(&params, config.dt) } else { 0.0 },
            hk,
            aj_per_amp,
        })
    }

    pub fn params(&self) -> &MagnetParams {
        &self.params
    }

    pub fn config(&self) -> &IntegratorConfig {
        &self.config
    }

    /// dm/dt with an extra field `h_extra` (the thermal draw).
    fn rhs(&self, m: Vec3, t: f64, h_extra: Vec3) -> Vec3 {
        let p = &self.params;
        let e = p.easy_axis;
        let mut h = e * (self.hk * m.dot(e)) + self.sources.h_static + h_extra;
        if self.sources.h_rf_amplitude != Vec3::ZERO {
            h += self.sources.h_rf_amplitude * (2.0 * PI * self.sources.h_rf_frequency * t).cos();
        }
        if let Some(b) = self.sources.bead_field {
            h += b;
        }
        let mxh = m.cross(h);
        let mxmxh = m.cross(mxh);
        let a_j = self.aj_per_amp * self.drive.at(t);
        let torque = m.cross(p.pinned_dir.cross(m)) * (p.gamma * a_j);
        let a = p.alpha;
        (mxh * (-p.gamma) + mxmxh * (-a * p.gamma) + torque + m.cross(torque) * a) / (1.0 + a * a)
    }

    pub fn step(&mut self, state: SimState) -> Result<SimState> {
        let dt = self.config.dt;
        let (m, t) = (state.m, state.t);
        let next = match self.config.scheme {
            Scheme::Rk4 => {
                let z = Vec3::ZERO;
                let k1 = self.rhs(m, t, z);
                let k2 = self.rhs(m + k1 * (0.5 * dt), t + 0.5 * dt, z);
                let k3 = self.rhs(m + k2 * (0.5 * dt), t + 0.5 * dt, z);
                let k4 = self.rhs(m + k3 * dt, t + dt, z);
                m + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0)
            }
            Scheme::Heun => {
                let h_th = if self.sigma > 0.0 {
                    let mut g = || -> f64 { StandardNormal.sample(&mut self.rng) };
                    Vec3::new(g(), g(), g()) * self.sigma
                } else {
                    Vec3::ZERO
                };
                let a = self.rhs(m, t, h_th);
                let b = self.rhs(m + a * dt, t + dt, h_th);
                m + (a + b) * (0.5 * dt)
            }
        };
        if !next.is_finite() {
            return Err(Error::Integration { t, m });
        }
        let m = if self.config.renormalize { next.normalized() } else { next };
        Ok(SimState { m, t: t + dt })
    }

    /// Integrates from `initial` and records floor(duration/dt) + 1 samples.
    pub fn run(&mut self, initial: SimState, duration: f64) -> Result<Trajectory> {
        let dt = self.config.dt;
        if !(duration >= dt * (1.0 - 1e-12)) {
            return Err(Error::domain(format!("duration {duration:e} s is shorter than dt {dt:e} s")));
        }
        let n = sample_count(duration, dt);
        let mut m = Vec::with_capacity(n);
        let mut current = Vec::with_capacity(n);
        let mut s = initial;
        for k in 0..n {
            if k > 0 {
                s = self.step(s)?;
                // Avoid drift in t from repeated addition.
                s.t = initial.t + k as f64 * dt;
            }
            m.push(s.m);
            current.push(self.drive.at(s.t));
        }
        Ok(Trajectory { t0: initial.t, dt, m, current })
    }
}

/// Convenience wrapper around [`Simulator::run`].
pub fn simulate(
    initial: SimState,
    params: &MagnetParams,
    sources: &FieldSources,
    drive: &DriveCurrent,
    config: &IntegratorConfig,
    duration: f64,
) -> Result<Trajectory> {
    Simulator::new(*params, *sources, *drive, *config)?.run(initial, duration)
}

/// Single step with a fresh RNG seeded from `config.seed`.
pub fn step(
    state: SimState,
    params: &MagnetParams,
    sources: &FieldSources,
    drive: &DriveCurrent,
    config: &IntegratorConfig,
) -> Result<SimState> {
    Simulator::new(*params, *sources, *drive, *config)?.step(state)
}

/// Current density for a drive current through the device.
pub fn drive_density(i: f64, params: &MagnetParams) -> Result<f64> {
    current_to_density(i, &params.geometry)
}

/// Free-layer equilibrium under static fields, found by current-free,
/// noise-free relaxation with strong damping.
pub fn relaxed_direction(params: &MagnetParams, h_static: Vec3, start: Vec3) -> Result<Vec3> {
    let relax = MagnetParams { alpha: 0.5, ..*params };
    let cfg = IntegratorConfig { dt: 1e-12, scheme: Scheme::Rk4, renormalize: true, seed: 0 };
    let mut sim = Simulator::new(relax, FieldSources::static_only(h_static), DriveCurrent::default(), cfg)?;
    let mut s = SimState::new(start);
    for _ in 0..200_000 {
        let next = sim.step(s)?;
        let moved = (next.m - s.m).norm();
        s = next;
        if moved < 1e-13 {
            break;
        }
    }
    Ok(s.m)
}
