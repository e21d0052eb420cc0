//! Magnetic nanoparticle perturbation: the field that polarizes the bead,
//! its Langevin moment, and the bead's dipole field averaged over the free
//! layer.

use std::f64::consts::PI;

use crate::dynamics::{relaxed_direction, MagnetParams};
use crate::error::{Error, Result};
use crate::units::{SensorGeometry, Vec3, KB, MU0};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeadParams {
    pub radius: f64,
    /// Saturation magnetization of the bead material, A/m.
    pub ms: f64,
    /// Bead center relative to the free-layer center.
    pub position: Vec3,
    pub temperature: f64,
}

impl Default for BeadParams {
    /// 200 nm diameter bead of 480 emu/cc material, centered 400 nm above
    /// the free layer.
    fn default() -> Self {
        BeadParams {
            radius: 100e-9,
            ms: 4.8e5,
            position: Vec3::new(0.0, 0.0, 400e-9),
            temperature: 300.0,
        }
    }
}

impl BeadParams {
    pub fn validate(&self, geom: &SensorGeometry) -> Result<()> {
        if !(self.radius > 0.0 && self.ms > 0.0) {
            return Err(Error::domain("bead radius and Ms must be positive"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::domain("bead temperature must be positive"));
        }
        let c = geom.center + self.position;
        for layer in [Layer::Free, Layer::Pinned] {
            if layer.prism(geom).contains(c) {
                return Err(Error::domain("bead center lies inside the sensor stack"));
            }
        }
        Ok(())
    }

    /// Total saturation moment ms·(4/3)πr³, A·m².
    pub fn saturation_moment(&self) -> f64 {
        self.ms * 4.0 / 3.0 * PI * self.radius.powi(3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadratureConfig {
    /// Midpoint grid points per axis for the volume average.
    pub volume_points: usize,
    /// Midpoint grid points per side on each prism face.
    pub segments: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig { volume_points: 8, segments: 64 }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.volume_points < 2 || self.segments < 2 {
            return Err(Error::domain("quadrature counts must be at least 2"));
        }
        Ok(())
    }

    pub fn doubled(&self) -> Self {
        QuadratureConfig { volume_points: 2 * self.volume_points, segments: 2 * self.segments }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Free,
    Pinned,
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prism {
    pub center: Vec3,
    pub size: Vec3,
}

impl Prism {
    pub fn contains(&self, p: Vec3) -> bool {
        let d = p - self.center;
        d.x.abs() <= 0.5 * self.size.x && d.y.abs() <= 0.5 * self.size.y && d.z.abs() <= 0.5 * self.size.z
    }

    pub fn volume(&self) -> f64 {
        self.size.x * self.size.y * self.size.z
    }
}

impl Layer {
    pub fn prism(self, geom: &SensorGeometry) -> Prism {
        match self {
            Layer::Free => Prism {
                center: geom.center,
                size: Vec3::new(geom.length, geom.width, geom.t_free),
            },
            Layer::Pinned => Prism {
                center: geom.pinned_center(),
                size: Vec3::new(geom.length, geom.width, geom.t_pinned),
            },
        }
    }
}

/// coth(x) − 1/x.
pub fn langevin(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        x / 3.0 - x * x * x / 45.0
    } else {
        1.0 / x.tanh() - 1.0 / x
    }
}

/// Field of a point dipole `moment` at displacement `r` from it, A/m.
pub fn dipole_field(moment: Vec3, r: Vec3) -> Vec3 {
    let d = r.norm();
    let u = r / d;
    (u * (3.0 * moment.dot(u)) - moment) / (4.0 * PI * d * d * d)
}

/// Stray field of a uniformly magnetized box from its surface charges
/// σ = M·n̂, summed over all six faces with a midpoint rule of
/// `quad.segments` points per side.
pub fn prism_stray_field(prism: &Prism, magnetization: Vec3, at: Vec3, quad: &QuadratureConfig) -> Result<Vec3> {
    quad.validate()?;
    if prism.contains(at) {
        return Err(Error::domain("stray field requested inside the magnetized layer"));
    }
    let n = quad.segments;
    let half = prism.size * 0.5;
    let mut h = Vec3::ZERO;
    // Face normal along axis `a`; in-plane axes `b`, `c`.
    for a in 0..3 {
        let (b, c) = ((a + 1) % 3, (a + 2) % 3);
        let m_a = comp(magnetization, a);
        if m_a == 0.0 {
            continue;
        }
        let (lb, lc) = (comp(prism.size, b), comp(prism.size, c));
        let da = lb * lc / (n * n) as f64;
        for sign in [1.0, -1.0] {
            let sigma = sign * m_a;
            let mut acc = Vec3::ZERO;
            for i in 0..n {
                let ub = -0.5 * lb + (i as f64 + 0.5) * lb / n as f64;
                for j in 0..n {
                    let uc = -0.5 * lc + (j as f64 + 0.5) * lc / n as f64;
                    let mut off = Vec3::ZERO;
                    set(&mut off, a, sign * comp(half, a));
                    set(&mut off, b, ub);
                    set(&mut off, c, uc);
                    let r = at - (prism.center + off);
                    let d = r.norm();
                    acc += r / (d * d * d);
                }
            }
            h += acc * (sigma * da / (4.0 * PI));
        }
    }
    Ok(h)
}

fn comp(v: Vec3, i: usize) -> f64 {
    match i {
        0 => v.x,
        1 => v.y,
        _ => v.z,
    }
}

fn set(v: &mut Vec3, i: usize, val: f64) {
    match i {
        0 => v.x = val,
        1 => v.y = val,
        _ => v.z = val,
    }
}

/// Stray field of one layer of the stack, evaluated at an absolute position.
pub fn layer_stray_field(
    layer: Layer,
    magnetization: Vec3,
    geom: &SensorGeometry,
    at: Vec3,
    quad: &QuadratureConfig,
) -> Result<Vec3> {
    prism_stray_field(&layer.prism(geom), magnetization, at, quad)
}

/// Field polarizing the bead: external field plus the stray fields of the
/// free layer (along `free_dir`) and the pinned layer (along m_p).
pub fn field_at_bead(
    bead: &BeadParams,
    params: &MagnetParams,
    free_dir: Vec3,
    h_ext: Vec3,
    quad: &QuadratureConfig,
) -> Result<Vec3> {
    let geom = &params.geometry;
    let at = geom.center + bead.position;
    let free = layer_stray_field(Layer::Free, free_dir * params.ms_free, geom, at, quad)?;
    let pinned = layer_stray_field(Layer::Pinned, params.pinned_dir * params.ms_pinned, geom, at, quad)?;
    Ok(h_ext + free + pinned)
}

/// Langevin moment of the bead in field `h_tnp`, A·m².
pub fn bead_moment(h_tnp: Vec3, bead: &BeadParams) -> Vec3 {
    let h = h_tnp.norm();
    if h == 0.0 {
        return Vec3::ZERO;
    }
    let m_sat = bead.saturation_moment();
    let x = MU0 * m_sat * h / (KB * bead.temperature);
    h_tnp / h * (m_sat * langevin(x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedField {
    pub field: Vec3,
    /// Relative change when the grid is doubled.
    pub refinement_change: f64,
    pub warning: Option<String>,
}

fn volume_average(moment: Vec3, prism: &Prism, bead_center: Vec3, n: usize) -> Vec3 {
    let step = prism.size / n as f64;
    let corner = prism.center - prism.size * 0.5;
    let mut acc = Vec3::ZERO;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let p = corner
                    + Vec3::new(
                        (i as f64 + 0.5) * step.x,
                        (j as f64 + 0.5) * step.y,
                        (k as f64 + 0.5) * step.z,
                    );
                acc += dipole_field(moment, p - bead_center);
            }
        }
    }
    acc / (n * n * n) as f64
}

/// Bead dipole field averaged over the free-layer volume. `bead_position` is
/// relative to the free-layer center.
pub fn averaged_bead_field(
    moment: Vec3,
    geom: &SensorGeometry,
    bead_position: Vec3,
    quad: &QuadratureConfig,
) -> Result<AveragedField> {
    quad.validate()?;
    let prism = Layer::Free.prism(geom);
    let c = geom.center + bead_position;
    if prism.contains(c) {
        return Err(Error::domain("bead center lies inside the free layer"));
    }
    let n = quad.volume_points;
    let field = volume_average(moment, &prism, c, n);
    let fine = volume_average(moment, &prism, c, 2 * n);
    let scale = field.norm().max(fine.norm());
    let change = if scale > 0.0 { (fine - field).norm() / scale } else { 0.0 };
    let warning = (change > 1e-3).then(|| {
        format!("volume average changed by {:.2e} (relative) on grid doubling; increase volume_points", change)
    });
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok(AveragedField { field, refinement_change: change, warning })
}

/// Full bead chain for one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct BeadPerturbation {
    /// Quasi-static free-layer direction used for its stray field.
    pub free_dir: Vec3,
    pub h_tnp: Vec3,
    pub moment: Vec3,
    pub averaged: AveragedField,
}

/// Polarizes the bead with the static field plus layer stray fields, using
/// the free layer's relaxed equilibrium under `h_static`, and returns the
/// resulting averaged field at the sensor.
pub fn bead_perturbation(
    bead: &BeadParams,
    params: &MagnetParams,
    h_static: Vec3,
    quad: &QuadratureConfig,
) -> Result<BeadPerturbation> {
    bead.validate(&params.geometry)?;
    let start = if h_static.norm() > 0.0 { h_static.normalized() } else { params.easy_axis };
    let tilt = (start + params.easy_axis * 1e-3).normalized();
    let free_dir = relaxed_direction(params, h_static, tilt)?;
    let h_tnp = field_at_bead(bead, params, free_dir, h_static, quad)?;
    let moment = bead_moment(h_tnp, bead);
    let averaged = averaged_bead_field(moment, &params.geometry, bead.position, quad)?;
    Ok(BeadPerturbation { free_dir, h_tnp, moment, averaged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::oersted_to_si;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn langevin_values() {
        assert_eq!(langevin(0.0), 0.0);
        assert!((langevin(1e-6) - 1e-6 / 3.0).abs() < 1e-19);
        assert!((langevin(50.0) - 0.98).abs() < 1e-12);
        // coth(1) − 1 = 0.31303528549933...
        assert!((langevin(1.0) - 0.313035).abs() < 1e-6);
        assert!((langevin(-1.0) + langevin(1.0)).abs() < 1e-15);
        // Continuity across the series switch, limited by cancellation in coth(x) − 1/x.
        assert!((langevin(1e-4 * (1.0 + 1e-12)) - langevin(1e-4 * (1.0 - 1e-12))).abs() < 1e-11);
    }

    #[test]
    fn moment_examples() {
        let bead = BeadParams::default();
        assert_eq!(bead_moment(Vec3::ZERO, &bead), Vec3::ZERO);
        let m = bead_moment(Vec3::X * oersted_to_si(5000.0), &bead);
        assert!(rel(m.x, 2.0106e-15) < 1e-3);
        assert!(m.y == 0.0 && m.z == 0.0);
        let huge = bead_moment(Vec3::Z * 1e12, &bead);
        assert!(rel(huge.z, bead.saturation_moment()) < 1e-9);
    }

    #[test]
    fn zero_magnetization_zero_field() {
        let g = SensorGeometry::default();
        let h = layer_stray_field(Layer::Free, Vec3::ZERO, &g, Vec3::Z * 1e-7, &QuadratureConfig::default()).unwrap();
        assert_eq!(h, Vec3::ZERO);
    }

    #[test]
    fn inside_layer_is_rejected() {
        let g = SensorGeometry::default();
        let q = QuadratureConfig::default();
        assert!(layer_stray_field(Layer::Free, Vec3::X, &g, Vec3::ZERO, &q).is_err());
        assert!(layer_stray_field(Layer::Pinned, Vec3::X, &g, g.pinned_center(), &q).is_err());
        assert!(averaged_bead_field(Vec3::Z, &g, Vec3::ZERO, &q).is_err());
    }

    #[test]
    fn axis_symmetry_of_in_plane_layer() {
        let g = SensorGeometry::default();
        let q = QuadratureConfig::default();
        let h = layer_stray_field(Layer::Free, Vec3::X * 8e5, &g, Vec3::Z * 50e-9, &q).unwrap();
        assert!(h.y.abs() <= 1e-12 * h.norm());
        assert!(h.z.abs() <= 1e-9 * h.norm());
        assert!(h.x < 0.0);
    }

    #[test]
    fn far_field_matches_dipole() {
        let g = SensorGeometry::default();
        let q = QuadratureConfig::default();
        let mag = Vec3::new(8e5, 0.0, 0.0);
        let moment = mag * g.volume_free();
        let r = Vec3::new(0.3, 0.5, 1.0).normalized() * (100.0 * g.max_dimension());
        let h = layer_stray_field(Layer::Free, mag, &g, r, &q).unwrap();
        // Independent closed form: (3(m·r̂)r̂ − m)/(4πr³)
        let d = r.norm();
        let u = r / d;
        let oracle = (u * (3.0 * moment.dot(u)) - moment) / (4.0 * PI * d.powi(3));
        assert!((h - oracle).norm() / oracle.norm() < 0.01);
    }

    #[test]
    fn bead_field_dominated_by_external() {
        let p = MagnetParams::default();
        let bead = BeadParams::default();
        let h_ext = Vec3::X * oersted_to_si(5000.0);
        let q = QuadratureConfig::default();
        let h = field_at_bead(&bead, &p, Vec3::X, h_ext, &q).unwrap();
        assert!((h - h_ext).norm() / h_ext.norm() < 0.05);
        let bare = MagnetParams { ms_pinned: 0.0, ..p };
        let bare = MagnetParams { ms_free: 1e-300, ..bare };
        let h = field_at_bead(&bead, &bare, Vec3::X, h_ext, &q).unwrap();
        assert!((h - h_ext).norm() < 1e-200);
        let far = BeadParams { position: Vec3::Z * 1.0, ..bead };
        let h = field_at_bead(&far, &p, Vec3::X, Vec3::ZERO, &q).unwrap();
        assert!(h.norm() < 1e-12);
    }

    #[test]
    fn on_axis_bead_field() {
        let g = SensorGeometry::default();
        let q = QuadratureConfig::default();
        let m = Vec3::Z * 2.0106e-15;
        let avg = averaged_bead_field(m, &g, Vec3::Z * 400e-9, &q).unwrap();
        let oracle = 2.0 * 2.0106e-15 / (4.0 * PI * (400e-9f64).powi(3));
        assert!(rel(oracle, 5.0e3) < 0.01);
        assert!(rel(avg.field.z, oracle) < 0.01);
        assert!(avg.warning.is_none());
        assert_eq!(averaged_bead_field(Vec3::ZERO, &g, Vec3::Z * 400e-9, &q).unwrap().field, Vec3::ZERO);
    }

    #[test]
    fn bead_field_opposes_static_field() {
        let p = MagnetParams::default();
        let h = Vec3::X * oersted_to_si(5000.0);
        let b = bead_perturbation(&BeadParams::default(), &p, h, &QuadratureConfig::default()).unwrap();
        assert!(b.averaged.field.dot(h) < 0.0);
        assert!(b.free_dir.x > 0.999);
    }

    #[test]
    fn bead_inside_stack_rejected() {
        let p = MagnetParams::default();
        let bead = BeadParams { position: Vec3::ZERO, ..Default::default() };
        assert!(bead.validate(&p.geometry).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn averaged_field_is_linear(mx in -1e-15f64..1e-15, mz in -1e-15f64..1e-15, s in 0.1f64..10.0) {
                let g = SensorGeometry::default();
                let q = QuadratureConfig { volume_points: 4, segments: 8 };
                let m = Vec3::new(mx, 0.0, mz);
                let pos = Vec3::new(20e-9, -10e-9, 300e-9);
                let a = averaged_bead_field(m, &g, pos, &q).unwrap().field * s;
                let b = averaged_bead_field(m * s, &g, pos, &q).unwrap().field;
                prop_assert!((a - b).norm() <= 1e-12 * a.norm().max(1e-30));
            }

            #[test]
            fn langevin_bounded_and_odd(x in -1e3f64..1e3) {
                let l = langevin(x);
                prop_assert!(l.abs() < 1.0);
                prop_assert!((l + langevin(-x)).abs() <= 1e-15);
            }
        }
    }
}
