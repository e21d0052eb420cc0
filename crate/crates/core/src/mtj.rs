//! Angular TMR resistance model and the voltage seen under current drive.

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::units::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResistancePair {
    pub r_p: f64,
    pub r_ap: f64,
}

impl Default for ResistancePair {
    fn default() -> Self {
        ResistancePair { r_p: 1e3, r_ap: 2e3 }
    }
}

impl ResistancePair {
    pub fn new(r_p: f64, r_ap: f64) -> Result<Self> {
        let pair = ResistancePair { r_p, r_ap };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_p > 0.0 && self.r_p < self.r_ap) {
            return Err(Error::domain(format!(
                "resistances must satisfy 0 < r_p < r_ap, got r_p = {}, r_ap = {}",
                self.r_p, self.r_ap
            )));
        }
        Ok(())
    }
}

/// Sign of the cos θ term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignConvention {
    /// Parallel alignment gives the low resistance r_p.
    #[default]
    ParallelLow,
    /// Parallel alignment gives r_ap.
    AsPrinted,
}

/// R(θ) = (r_p + r_ap)/2 ∓ (r_ap − r_p)/2 · cos θ.
pub fn resistance(cos_theta: f64, pair: &ResistancePair) -> Result<f64> {
    resistance_with(cos_theta, pair, SignConvention::ParallelLow)
}

pub fn resistance_with(cos_theta: f64, pair: &ResistancePair, sign: SignConvention) -> Result<f64> {
    if !(cos_theta.abs() <= 1.0 + 1e-9) {
        return Err(Error::domain(format!("cos θ = {cos_theta} is outside [-1, 1]")));
    }
    let c = cos_theta.clamp(-1.0, 1.0);
    let mid = 0.5 * (pair.r_p + pair.r_ap);
    let half = 0.5 * (pair.r_ap - pair.r_p);
    Ok(match sign {
        SignConvention::ParallelLow => mid - half * c,
        SignConvention::AsPrinted => mid + half * c,
    })
}

/// V(t_k) = i(t_k)·R(m(t_k)·m_p).
pub fn voltage_series(traj: &Trajectory, m_p: Vec3, pair: &ResistancePair) -> Result<Vec<f64>> {
    voltage_series_with(traj, m_p, pair, SignConvention::ParallelLow)
}

pub fn voltage_series_with(
    traj: &Trajectory,
    m_p: Vec3,
    pair: &ResistancePair,
    sign: SignConvention,
) -> Result<Vec<f64>> {
    if traj.is_empty() {
        return Err(Error::domain("empty trajectory"));
    }
    traj.m
        .iter()
        .zip(&traj.current)
        .map(|(m, &i)| Ok(i * resistance_with(m.dot(m_p), pair, sign)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> ResistancePair {
        ResistancePair::default()
    }

    #[test]
    fn endpoints_and_midpoint() {
        assert_eq!(resistance(0.0, &pair()).unwrap(), 1500.0);
        assert_eq!(resistance(1.0, &pair()).unwrap(), 1000.0);
        assert_eq!(resistance(-1.0, &pair()).unwrap(), 2000.0);
        assert_eq!(resistance_with(1.0, &pair(), SignConvention::AsPrinted).unwrap(), 2000.0);
    }

    #[test]
    fn domain_and_clamping() {
        assert!(resistance(1.0 + 1e-6, &pair()).is_err());
        assert_eq!(resistance(1.0 + 1e-10, &pair()).unwrap(), 1000.0);
        assert!(ResistancePair::new(2e3, 1e3).is_err());
        assert!(ResistancePair::new(0.0, 1e3).is_err());
    }

    fn traj(m: Vec<Vec3>, current: Vec<f64>) -> Trajectory {
        Trajectory { t0: 0.0, dt: 1e-12, m, current }
    }

    #[test]
    fn perpendicular_constant_voltage() {
        let t = traj(vec![Vec3::Z; 8], vec![200e-6; 8]);
        let v = voltage_series(&t, Vec3::X, &pair()).unwrap();
        assert!(v.iter().all(|&x| (x - 0.3).abs() < 1e-12));
        let zero = traj(vec![Vec3::Z; 4], vec![0.0; 4]);
        assert!(voltage_series(&zero, Vec3::X, &pair()).unwrap().iter().all(|&x| x == 0.0));
        assert!(voltage_series(&traj(vec![], vec![]), Vec3::X, &pair()).is_err());
    }

    #[test]
    fn precessing_cone_peak_to_peak() {
        // m precesses on a cone of half-angle φ about an axis at angle ψ to m_p,
        // so cos θ sweeps [cos(ψ+φ), cos(ψ−φ)].
        let (phi, psi) = (0.4f64, 1.0f64);
        let axis = Vec3::new(psi.cos(), psi.sin(), 0.0);
        let u = Vec3::new(-psi.sin(), psi.cos(), 0.0);
        let n = 720;
        let m: Vec<Vec3> = (0..n)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                axis * phi.cos() + (u * a.cos() + Vec3::Z * a.sin()) * phi.sin()
            })
            .collect();
        let i = 200e-6;
        let t = traj(m.clone(), vec![i; n]);
        let v = voltage_series(&t, Vec3::X, &pair()).unwrap();
        for (vk, mk) in v.iter().zip(&m) {
            assert!((vk - i * resistance(mk.x, &pair()).unwrap()).abs() < 1e-15);
        }
        let (lo, hi) = v.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        let variation = (psi - phi).cos() - (psi + phi).cos();
        let expected = i * (2000.0 - 1000.0) * variation / 2.0;
        assert!(((hi - lo) - expected).abs() < 1e-9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn bounded_and_affine(c in -1.0f64..=1.0, rp in 1.0f64..1e4, extra in 1.0f64..1e4) {
                let p = ResistancePair::new(rp, rp + extra).unwrap();
                let r = resistance(c, &p).unwrap();
                prop_assert!(r >= p.r_p - 1e-9 && r <= p.r_ap + 1e-9);
                let sum = r + resistance(-c, &p).unwrap();
                prop_assert!((sum - (p.r_p + p.r_ap)).abs() <= 1e-9 * sum);
            }

            #[test]
            fn voltage_linear_in_current(i in -1e-3f64..1e-3, x in -1.0f64..1.0) {
                let m = Vec3::new(x, (1.0 - x * x).sqrt(), 0.0);
                let one = traj(vec![m; 3], vec![i; 3]);
                let two = traj(vec![m; 3], vec![2.0 * i; 3]);
                let v1 = voltage_series(&one, Vec3::X, &pair()).unwrap();
                let v2 = voltage_series(&two, Vec3::X, &pair()).unwrap();
                for (a, b) in v1.iter().zip(&v2) {
                    prop_assert!((2.0 * a - b).abs() <= 1e-15);
                }
            }
        }
    }
}
