//! Unit-suffixed scalars in configuration documents ("5 kOe", "30 nm",
//! "200 uA"). Each dimension has a fixed unit table; bare numbers are taken
//! as SI.

use std::f64::consts::PI;
use std::fmt;
use std::marker::PhantomData;

use serde::de::{self, Deserializer, Visitor};
use serde::Deserialize;
use stno::units::{E_CHARGE, MU0};

/// Conversion to SI: an exact power of ten or a general factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scale {
    Pow10(i32),
    Factor(f64),
}

pub trait Dimension {
    const NAME: &'static str;
    fn units() -> &'static [(&'static str, Scale)];
}

macro_rules! dimension {
    ($ty:ident, $name:expr, [$(($u:expr, $f:expr)),* $(,)?]) => {
        #[derive(Debug, Clone, Copy, PartialEq)]
        pub struct $ty;
        impl Dimension for $ty {
            const NAME: &'static str = $name;
            fn units() -> &'static [(&'static str, Scale)] {
                const U: &[(&str, Scale)] = &[$(($u, $f)),*];
                U
            }
        }
    };
}

use Scale::{Factor, Pow10};

const OE: f64 = 1000.0 / (4.0 * PI);

dimension!(Field, "magnetic field", [
    ("A/m", Pow10(0)), ("kA/m", Pow10(3)), ("Oe", Factor(OE)), ("kOe", Factor(1e3 * OE)),
    ("T", Factor(1.0 / MU0)), ("mT", Factor(1e-3 / MU0)),
]);
dimension!(Magnetization, "magnetization", [
    ("A/m", Pow10(0)), ("kA/m", Pow10(3)), ("MA/m", Pow10(6)), ("emu/cc", Pow10(3)), ("emu/cm3", Pow10(3)),
]);
dimension!(Length, "length", [
    ("m", Pow10(0)), ("cm", Pow10(-2)), ("mm", Pow10(-3)), ("um", Pow10(-6)), ("µm", Pow10(-6)),
    ("nm", Pow10(-9)), ("pm", Pow10(-12)),
]);
dimension!(Area, "area", [
    ("m2", Pow10(0)), ("m^2", Pow10(0)), ("um2", Pow10(-12)), ("um^2", Pow10(-12)),
    ("nm2", Pow10(-18)), ("nm^2", Pow10(-18)),
]);
dimension!(Current, "current", [
    ("A", Pow10(0)), ("mA", Pow10(-3)), ("uA", Pow10(-6)), ("µA", Pow10(-6)), ("nA", Pow10(-9)),
]);
dimension!(Frequency, "frequency", [
    ("Hz", Pow10(0)), ("kHz", Pow10(3)), ("MHz", Pow10(6)), ("GHz", Pow10(9)),
]);
dimension!(Time, "time", [
    ("s", Pow10(0)), ("ms", Pow10(-3)), ("us", Pow10(-6)), ("µs", Pow10(-6)), ("ns", Pow10(-9)),
    ("ps", Pow10(-12)), ("fs", Pow10(-15)),
]);
dimension!(Temperature, "temperature", [("K", Pow10(0))]);
dimension!(Angle, "angle", [("rad", Pow10(0)), ("deg", Factor(PI / 180.0))]);
dimension!(Resistance, "resistance", [
    ("Ohm", Pow10(0)), ("ohm", Pow10(0)), ("Ω", Pow10(0)), ("kOhm", Pow10(3)), ("kohm", Pow10(3)), ("kΩ", Pow10(3)),
]);
dimension!(Dimensionless, "dimensionless number", []);

/// Energy may be given in joules, eV, or multiples of k_B T at the device
/// temperature ("40 kT").
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Energy {
    Joules(f64),
    ThermalUnits(f64),
}

/// Splits "5 kOe" / "5kOe" / "5" into number text and unit.
pub fn split_quantity(text: &str) -> Result<(&str, &str), String> {
    let t = text.trim();
    let end = t
        .char_indices()
        .find(|&(i, c)| {
            !(c.is_ascii_digit() || c == '.' || c == '+' || c == '-' || ((c == 'e' || c == 'E') && is_exponent(t, i)))
        })
        .map_or(t.len(), |(i, _)| i);
    let (num, unit) = t.split_at(end);
    let value: f64 = num.trim().parse().map_err(|_| format!("`{text}` does not start with a number"))?;
    if !value.is_finite() {
        return Err(format!("`{text}` is not finite"));
    }
    Ok((num.trim(), unit.trim()))
}

/// `num × 10^shift`, correctly rounded.
fn shifted(num: &str, shift: i32) -> f64 {
    let (mantissa, exp) = match num.find(['e', 'E']) {
        Some(i) => (&num[..i], num[i + 1..].parse::<i32>().unwrap_or(0)),
        None => (num, 0),
    };
    format!("{mantissa}e{}", exp + shift).parse().expect("validated number")
}

fn is_exponent(t: &str, i: usize) -> bool {
    let rest = &t[i + 1..];
    let mut chars = rest.chars();
    match chars.next() {
        Some(c) if c.is_ascii_digit() => true,
        Some('+') | Some('-') => chars.next().is_some_and(|c| c.is_ascii_digit()),
        _ => false,
    }
}

/// Converts `text` to SI using the unit table of `D`.
pub fn parse_si<D: Dimension>(text: &str) -> Result<f64, String> {
    let (num, unit) = split_quantity(text)?;
    if unit.is_empty() {
        return Ok(shifted(num, 0));
    }
    D::units()
        .iter()
        .find(|(u, _)| *u == unit)
        .map(|(_, scale)| match *scale {
            Pow10(k) => shifted(num, k),
            Factor(f) => shifted(num, 0) * f,
        })
        .ok_or_else(|| {
            let known: Vec<&str> = D::units().iter().map(|(u, _)| *u).collect();
            if known.is_empty() {
                format!("expected a plain number, got unit `{unit}`")
            } else {
                format!("expected a {} ({}), got unit `{unit}`", D::NAME, known.join(", "))
            }
        })
}

pub fn parse_energy(text: &str) -> Result<Energy, String> {
    let (num, unit) = split_quantity(text)?;
    let value = shifted(num, 0);
    match unit {
        "" | "J" => Ok(Energy::Joules(value)),
        "eV" => Ok(Energy::Joules(value * E_CHARGE)),
        "kT" | "kBT" | "k_BT" => Ok(Energy::ThermalUnits(value)),
        other => Err(format!("expected an energy (J, eV, kT), got unit `{other}`")),
    }
}

/// A scalar of dimension `D`, stored in SI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Q<D> {
    pub si: f64,
    _d: PhantomData<D>,
}

impl<D> Q<D> {
    pub fn new(si: f64) -> Self {
        Q { si, _d: PhantomData }
    }
}

struct QVisitor<D>(PhantomData<D>);

impl<'de, D: Dimension> Visitor<'de> for QVisitor<D> {
    type Value = Q<D>;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "a {} as a number or a unit-suffixed string", D::NAME)
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Self::Value, E> {
        Ok(Q::new(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Self::Value, E> {
        Ok(Q::new(v as f64))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Self::Value, E> {
        Ok(Q::new(v as f64))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Self::Value, E> {
        parse_si::<D>(v).map(Q::new).map_err(E::custom)
    }
}

impl<'de, D: Dimension> Deserialize<'de> for Q<D> {
    fn deserialize<De: Deserializer<'de>>(d: De) -> Result<Self, De::Error> {
        d.deserialize_any(QVisitor(PhantomData))
    }
}

impl<'de> Deserialize<'de> for Energy {
    fn deserialize<De: Deserializer<'de>>(d: De) -> Result<Self, De::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Energy;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an energy such as \"40 kT\" or \"1e-19 J\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Energy, E> {
                Ok(Energy::Joules(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Energy, E> {
                Ok(Energy::Joules(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Energy, E> {
                parse_energy(v).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

/// A scalar whose dimension is only known later (sweep bounds).
#[derive(Debug, Clone, PartialEq)]
pub struct RawScalar(pub String);

impl<'de> Deserialize<'de> for RawScalar {
    fn deserialize<De: Deserializer<'de>>(d: De) -> Result<Self, De::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = RawScalar;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or a unit-suffixed string")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<RawScalar, E> {
                Ok(RawScalar(format!("{v:e}")))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<RawScalar, E> {
                Ok(RawScalar(v.to_string()))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<RawScalar, E> {
                Ok(RawScalar(v.to_string()))
            }
        }
        d.deserialize_any(V)
    }
}
