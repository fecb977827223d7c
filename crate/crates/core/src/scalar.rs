//! Numeric backends for the engine.
//!
//! Everything in the crate is generic over [`Scalar`]. Two implementations
//! ship: [`Rational`] (exact, arbitrary precision) and `f64`. Stop/continue
//! decisions are driven by equalities such as `v = φ`, so the trait exposes
//! [`Scalar::ties`] instead of letting callers compare floats with `==`.

use std::fmt::{Debug, Display};
use std::hash::Hasher;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact rational number used in `Rational` arithmetic mode.
pub type Rational = BigRational;

/// Relative tolerance for the equality tests `v = φ` and `v = continuation`
/// in float mode.
pub const FLOAT_TIE_RTOL: f64 = 1e-9;

/// Tolerance for transition probabilities summing to one in float mode.
pub const FLOAT_PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arithmetic {
    Rational,
    Float,
}

impl Display for Arithmetic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arithmetic::Rational => f.write_str("rational"),
            Arithmetic::Float => f.write_str("float"),
        }
    }
}

impl FromStr for Arithmetic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rational" | "exact" => Ok(Arithmetic::Rational),
            "float" | "f64" => Ok(Arithmetic::Float),
            other => Err(Error::Parse(format!("unknown arithmetic mode `{other}`"))),
        }
    }
}

pub trait Scalar:
    Clone
    + Debug
    + Display
    + PartialOrd
    + Zero
    + One
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + Send
    + Sync
    + 'static
{
    const ARITHMETIC: Arithmetic;

    /// Equality as used by stopping decisions: exact for rationals,
    /// relative tolerance [`FLOAT_TIE_RTOL`] for floats.
    fn ties(&self, other: &Self) -> bool;

    /// True when `ties` holds but the values are not bitwise identical.
    /// Always false in exact mode.
    fn is_near_tie(&self, other: &Self) -> bool {
        let _ = other;
        false
    }

    /// Whether a sum of transition probabilities is acceptably close to one.
    fn is_unit_sum(&self) -> bool;

    fn to_f64(&self) -> f64;

    /// Exact conversion from a finite double. `None` for NaN or infinities.
    fn from_f64(x: f64) -> Option<Self>;

    /// Parses `"p/q"`, integers and decimal strings (`"0.35"`, `"1e-3"`).
    fn parse(s: &str) -> Result<Self>;

    /// Exact rational view, available only in exact mode.
    fn to_rational(&self) -> Option<Rational>;

    fn hash_into<H: Hasher>(&self, state: &mut H);

    fn powi(&self, exp: i32) -> Self;

    fn from_usize(n: usize) -> Self;

    fn is_negative(&self) -> bool {
        *self < Self::zero()
    }

    /// `a > b` with ties treated as equal.
    fn strictly_greater(&self, other: &Self) -> bool {
        self > other && !self.ties(other)
    }

    fn max_of(a: &Self, b: &Self) -> Self {
        if a >= b {
            a.clone()
        } else {
            b.clone()
        }
    }
}

impl Scalar for f64 {
    const ARITHMETIC: Arithmetic = Arithmetic::Float;

    fn ties(&self, other: &Self) -> bool {
        if self == other {
            return true;
        }
        let scale = self.abs().max(other.abs());
        (self - other).abs() <= FLOAT_TIE_RTOL * scale
    }

    fn is_near_tie(&self, other: &Self) -> bool {
        self != other && self.ties(other)
    }

    fn is_unit_sum(&self) -> bool {
        (self - 1.0).abs() <= FLOAT_PROB_SUM_TOL
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn from_f64(x: f64) -> Option<Self> {
        x.is_finite().then_some(x)
    }

    fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((p, q)) = s.split_once('/') {
            let p: f64 = p.trim().parse().map_err(|_| bad_number(s))?;
            let q: f64 = q.trim().parse().map_err(|_| bad_number(s))?;
            if q == 0.0 {
                return Err(bad_number(s));
            }
            return Ok(p / q);
        }
        let x: f64 = s.parse().map_err(|_| bad_number(s))?;
        if x.is_finite() {
            Ok(x)
        } else {
            Err(bad_number(s))
        }
    }

    fn to_rational(&self) -> Option<Rational> {
        None
    }

    fn hash_into<H: Hasher>(&self, state: &mut H) {
        // +0.0 and -0.0 hash alike
        let bits = if *self == 0.0 { 0 } else { self.to_bits() };
        state.write_u64(bits);
    }

    fn powi(&self, exp: i32) -> Self {
        f64::powi(*self, exp)
    }

    fn from_usize(n: usize) -> Self {
        n as f64
    }
}

impl Scalar for Rational {
    const ARITHMETIC: Arithmetic = Arithmetic::Rational;

    fn ties(&self, other: &Self) -> bool {
        self == other
    }

    fn is_unit_sum(&self) -> bool {
        self.is_one()
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn from_f64(x: f64) -> Option<Self> {
        BigRational::from_float(x)
    }

    fn parse(s: &str) -> Result<Self> {
        parse_rational(s)
    }

    fn to_rational(&self) -> Option<Rational> {
        Some(self.clone())
    }

    fn hash_into<H: Hasher>(&self, state: &mut H) {
        use std::hash::Hash;
        self.hash(state);
    }

    fn powi(&self, exp: i32) -> Self {
        num_traits::pow::Pow::pow(self, exp)
    }

    fn from_usize(n: usize) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }

    fn is_negative(&self) -> bool {
        Signed::is_negative(self)
    }
}

fn bad_number(s: &str) -> Error {
    Error::Parse(format!("cannot parse `{s}` as a number"))
}

/// Exact parse of `p/q`, integer, or decimal (with optional exponent) text.
fn parse_rational(text: &str) -> Result<Rational> {
    let s = text.trim();
    if s.is_empty() {
        return Err(bad_number(text));
    }
    if let Some((p, q)) = s.split_once('/') {
        let p = BigInt::from_str(p.trim()).map_err(|_| bad_number(text))?;
        let q = BigInt::from_str(q.trim()).map_err(|_| bad_number(text))?;
        if q.is_zero() {
            return Err(bad_number(text));
        }
        return Ok(BigRational::new(p, q));
    }

    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(i) => {
            let e: i32 = s[i + 1..].parse().map_err(|_| bad_number(text))?;
            (&s[..i], e)
        }
        None => (s, 0),
    };
    let (negative, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad_number(text));
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad_number(text));
    }
    let all_digits = format!("{int_part}{frac_part}");
    let numer = BigInt::from_str(&all_digits).map_err(|_| bad_number(text))?;
    let scale = exponent - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let mut value = BigRational::from_integer(numer);
    if scale >= 0 {
        value *= BigRational::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        value /= BigRational::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    Ok(if negative { -value } else { value })
}

/// Builds a rational `p/q` from machine integers. Panics if `q == 0`.
pub fn ratio(p: i64, q: i64) -> Rational {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_parsing_is_exact() {
        assert_eq!(Rational::parse("1/2").unwrap(), ratio(1, 2));
        assert_eq!(Rational::parse("0.35").unwrap(), ratio(7, 20));
        assert_eq!(Rational::parse("-2.5e1").unwrap(), ratio(-25, 1));
        assert_eq!(Rational::parse("1e-3").unwrap(), ratio(1, 1000));
        assert_eq!(Rational::parse(" 4 ").unwrap(), ratio(4, 1));
        assert!(Rational::parse("1/0").is_err());
        assert!(Rational::parse("abc").is_err());
        assert!(Rational::parse(".").is_err());
    }

    #[test]
    fn float_parsing_accepts_fractions() {
        assert_eq!(f64::parse("3/4").unwrap(), 0.75);
        assert_eq!(f64::parse("0.25").unwrap(), 0.25);
        assert!(f64::parse("inf").is_err());
    }

    #[test]
    fn float_ties_are_relative() {
        assert!(1.0f64.ties(&(1.0 + 1e-12)));
        assert!(!1.0f64.ties(&1.001));
        assert!(0.0f64.ties(&0.0));
        assert!(1.0f64.is_near_tie(&(1.0 + 1e-12)));
        assert!(!1.0f64.is_near_tie(&1.0));
        assert!(!(1.0 + 1e-12f64).strictly_greater(&1.0));
    }

    #[test]
    fn unit_sums() {
        assert!((ratio(1, 3) + ratio(2, 3)).is_unit_sum());
        assert!(!(ratio(6, 10) + ratio(5, 10)).is_unit_sum());
        assert!((0.1f64 + 0.2 + 0.7).is_unit_sum());
    }

    #[test]
    fn rational_powers() {
        assert_eq!(ratio(2, 1).powi(3), ratio(8, 1));
        assert_eq!(ratio(2, 1).powi(-2), ratio(1, 4));
    }
}
