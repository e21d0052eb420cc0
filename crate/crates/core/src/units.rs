//! Physical constants, a small 3-vector type, device geometry and the few
//! cgs conversions needed at the configuration boundary.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

/// Vacuum permeability, T·m/A.
pub const MU0: f64 = 4.0e-7 * PI;
/// Boltzmann constant, J/K.
pub const KB: f64 = 1.380649e-23;
/// Elementary charge, C.
pub const E_CHARGE: f64 = 1.602177e-19;
/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054572e-34;
/// Gyromagnetic ratio in m/(A·s), for fields expressed in A/m.
pub const GAMMA: f64 = 2.21e5;

const OE_TO_A_PER_M: f64 = 1000.0 / (4.0 * PI);

/// Converts a field in oersted to A/m.
pub fn oersted_to_si(h: f64) -> f64 {
    h * OE_TO_A_PER_M
}

/// Converts a field in A/m to oersted.
pub fn si_to_oersted(h: f64) -> f64 {
    h / OE_TO_A_PER_M
}

/// Converts a magnetization in emu/cm³ to A/m.
pub fn emu_cc_to_si(m: f64) -> f64 {
    m * 1000.0
}

/// Converts a magnetization in A/m to emu/cm³.
pub fn si_to_emu_cc(m: f64) -> f64 {
    m / 1000.0
}

/// Current density through the junction area. The sign is kept, since it
/// selects the torque polarity.
pub fn current_to_density(i: f64, geom: &SensorGeometry) -> Result<f64> {
    let area = geom.area();
    if !(area > 0.0) {
        return Err(Error::domain(format!("junction area must be positive, got {area:e} m²")));
    }
    Ok(i / area)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Unit vector along `self`; the zero vector is returned unchanged.
    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n > 0.0 {
            self / n
        } else {
            self
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn max_abs(self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:e}, {:e}, {:e})", self.x, self.y, self.z)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

/// Junction stack geometry. The free layer is centered on `center`; the
/// spacer and pinned layer sit below it along −z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorGeometry {
    /// Extent along x, m.
    pub length: f64,
    /// Extent along y, m.
    pub width: f64,
    pub t_free: f64,
    pub t_pinned: f64,
    pub t_spacer: f64,
    pub center: Vec3,
}

impl Default for SensorGeometry {
    fn default() -> Self {
        SensorGeometry {
            length: 30e-9,
            width: 30e-9,
            t_free: 1.5e-9,
            t_pinned: 2.0e-9,
            t_spacer: 2.0e-9,
            center: Vec3::ZERO,
        }
    }
}

impl SensorGeometry {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("length", self.length),
            ("width", self.width),
            ("t_free", self.t_free),
            ("t_pinned", self.t_pinned),
            ("t_spacer", self.t_spacer),
        ];
        for (name, v) in dims {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("geometry {name} must be positive, got {v:e} m")));
            }
        }
        if !self.center.is_finite() {
            return Err(Error::domain("geometry center must be finite"));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.length * self.width
    }

    pub fn volume_free(&self) -> f64 {
        self.area() * self.t_free
    }

    pub fn volume_pinned(&self) -> f64 {
        self.area() * self.t_pinned
    }

    /// Center of the pinned layer.
    pub fn pinned_center(&self) -> Vec3 {
        self.center - Vec3::Z * (0.5 * self.t_free + self.t_spacer + 0.5 * self.t_pinned)
    }

    pub fn max_dimension(&self) -> f64 {
        let stack = self.t_free + self.t_spacer + self.t_pinned;
        self.length.max(self.width).max(stack)
    }
}
