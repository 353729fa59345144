//! Exact scalar fields used for probabilities, rewards and expectations.
//!
//! Everything that is an expected value in this crate is computed exactly.
//! Two fields are provided: [`Rational`] (arbitrary-precision rationals) and
//! [`QuadSurd`], the real quadratic field `Q(sqrt(d))`, which lets the
//! lower-bound family use an attempt probability of exactly `1/sqrt(L)`.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::str::FromStr;

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Roots;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Arbitrary-precision rational number.
pub type Rational = BigRational;

/// Ordered field with exact arithmetic.
pub trait Field:
    Clone
    + fmt::Debug
    + fmt::Display
    + FromStr
    + PartialEq
    + PartialOrd
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
    + 'static
{
    fn from_rational(q: &Rational) -> Self;

    /// Approximation for reporting and Monte Carlo only.
    fn to_f64(&self) -> f64;

    fn from_biguint(n: &BigUint) -> Self {
        Self::from_rational(&Rational::from_integer(BigInt::from(n.clone())))
    }

    fn from_int(n: i64) -> Self {
        Self::from_rational(&Rational::from_integer(BigInt::from(n)))
    }

    fn is_negative(&self) -> bool {
        *self < Self::zero()
    }
}

impl Field for Rational {
    fn from_rational(q: &Rational) -> Self {
        q.clone()
    }

    fn to_f64(&self) -> f64 {
        rational_to_f64(self)
    }
}

/// Convert a rational to the nearest-ish `f64`, staying finite for huge
/// numerators and denominators.
pub fn rational_to_f64(q: &Rational) -> f64 {
    if let Some(v) = ToPrimitive::to_f64(q) {
        if v.is_finite() {
            return v;
        }
    }
    // Shift both sides down so the quotient is representable.
    let nb = q.numer().bits() as i64;
    let db = q.denom().bits() as i64;
    let shift_n = (nb - 1000).max(0) as usize;
    let shift_d = (db - 1000).max(0) as usize;
    let n = (q.numer() >> shift_n).to_f64().unwrap_or(0.0);
    let d = (q.denom() >> shift_d).to_f64().unwrap_or(1.0);
    (n / d) * 2f64.powi((shift_n as i64 - shift_d as i64) as i32)
}

/// Build `num/den` as a [`Rational`].
pub fn rat(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

/// Parse `"num/den"` or `"num"`.
pub fn parse_rational(s: &str) -> Option<Rational> {
    let s = s.trim();
    match s.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.trim().parse().ok()?;
            let d: BigInt = d.trim().parse().ok()?;
            if d.is_zero() {
                return None;
            }
            Some(Rational::new(n, d))
        }
        None => Some(Rational::from_integer(s.parse().ok()?)),
    }
}

/// Element `rat + irr * sqrt(radicand)` of a real quadratic field.
///
/// `radicand` is square-free; elements with `irr == 0` are plain rationals and
/// carry radicand 0 so they mix freely with any field. Mixing two different
/// non-zero radicands is a programming error and panics.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct QuadSurd {
    rat: Rational,
    irr: Rational,
    radicand: u64,
}

impl QuadSurd {
    pub fn new(rat: Rational, irr: Rational, radicand: u64) -> Self {
        if irr.is_zero() || radicand == 0 {
            return Self::rational(rat);
        }
        let (outside, free) = split_square(radicand);
        let irr = irr * Rational::from_integer(BigInt::from(outside));
        if free == 1 {
            return Self::rational(rat + irr);
        }
        QuadSurd {
            rat,
            irr,
            radicand: free,
        }
    }

    pub fn rational(rat: Rational) -> Self {
        QuadSurd {
            rat,
            irr: Rational::zero(),
            radicand: 0,
        }
    }

    /// `sqrt(n)` exactly.
    pub fn sqrt(n: u64) -> Self {
        Self::new(Rational::zero(), Rational::one(), n)
    }

    pub fn rational_part(&self) -> &Rational {
        &self.rat
    }

    pub fn irrational_part(&self) -> &Rational {
        &self.irr
    }

    pub fn radicand(&self) -> u64 {
        self.radicand
    }

    fn joint_radicand(&self, other: &Self) -> u64 {
        match (self.radicand, other.radicand) {
            (0, r) | (r, 0) => r,
            (a, b) if a == b => a,
            (a, b) => panic!("mixing Q(sqrt({a})) with Q(sqrt({b}))"),
        }
    }

    fn signum(&self) -> Ordering {
        let sa = self.rat.cmp(&Rational::zero());
        let sb = self.irr.cmp(&Rational::zero());
        if sb == Ordering::Equal {
            return sa;
        }
        if sa != Ordering::Less && sb == Ordering::Greater {
            return Ordering::Greater;
        }
        if sa != Ordering::Greater && sb == Ordering::Less {
            return Ordering::Less;
        }
        // Opposite signs: compare rat^2 with irr^2 * d.
        let a2 = &self.rat * &self.rat;
        let b2d = &self.irr * &self.irr * Rational::from_integer(BigInt::from(self.radicand));
        let rat_dominates = a2 > b2d;
        match (sa, rat_dominates) {
            (Ordering::Greater, true) | (Ordering::Less, false) => Ordering::Greater,
            _ => Ordering::Less,
        }
    }
}

/// Write `n = outside^2 * free` with `free` square-free.
fn split_square(n: u64) -> (u64, u64) {
    let mut outside = 1u64;
    let mut free = n;
    let mut f = 2u64;
    while f * f <= free {
        while free.is_multiple_of(f * f) {
            free /= f * f;
            outside *= f;
        }
        f += 1;
    }
    if free > 1 {
        let r = free.sqrt();
        if r * r == free {
            return (outside * r, 1);
        }
    }
    (outside, free)
}

impl Add for QuadSurd {
    type Output = QuadSurd;
    fn add(self, rhs: QuadSurd) -> QuadSurd {
        let d = self.joint_radicand(&rhs);
        QuadSurd::new(self.rat + rhs.rat, self.irr + rhs.irr, d)
    }
}

impl Sub for QuadSurd {
    type Output = QuadSurd;
    fn sub(self, rhs: QuadSurd) -> QuadSurd {
        let d = self.joint_radicand(&rhs);
        QuadSurd::new(self.rat - rhs.rat, self.irr - rhs.irr, d)
    }
}

impl Mul for QuadSurd {
    type Output = QuadSurd;
    fn mul(self, rhs: QuadSurd) -> QuadSurd {
        let d = self.joint_radicand(&rhs);
        let dq = Rational::from_integer(BigInt::from(d));
        let rat = &self.rat * &rhs.rat + &self.irr * &rhs.irr * dq;
        let irr = &self.rat * &rhs.irr + &self.irr * &rhs.rat;
        QuadSurd::new(rat, irr, d)
    }
}

impl Div for QuadSurd {
    type Output = QuadSurd;
    fn div(self, rhs: QuadSurd) -> QuadSurd {
        assert!(!rhs.is_zero(), "division by zero");
        let d = self.joint_radicand(&rhs);
        let dq = Rational::from_integer(BigInt::from(d));
        // 1/(a + b s) = (a - b s)/(a^2 - b^2 d)
        let norm = &rhs.rat * &rhs.rat - &rhs.irr * &rhs.irr * dq;
        let conj = QuadSurd::new(rhs.rat.clone(), -rhs.irr.clone(), d);
        let num = self * conj;
        QuadSurd::new(num.rat / &norm, num.irr / &norm, d)
    }
}

impl Neg for QuadSurd {
    type Output = QuadSurd;
    fn neg(self) -> QuadSurd {
        QuadSurd {
            rat: -self.rat,
            irr: -self.irr,
            radicand: self.radicand,
        }
    }
}

impl Zero for QuadSurd {
    fn zero() -> Self {
        QuadSurd::rational(Rational::zero())
    }
    fn is_zero(&self) -> bool {
        self.rat.is_zero() && self.irr.is_zero()
    }
}

impl One for QuadSurd {
    fn one() -> Self {
        QuadSurd::rational(Rational::one())
    }
}

impl PartialOrd for QuadSurd {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.joint_radicand(other);
        Some((self.clone() - other.clone()).signum())
    }
}

impl fmt::Display for QuadSurd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.irr.is_zero() {
            return write!(f, "{}", self.rat);
        }
        let sign = if Signed::is_negative(&self.irr) { '-' } else { '+' };
        write!(f, "{}{}{}*sqrt({})", self.rat, sign, self.irr.abs(), self.radicand)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed number `{0}`")]
pub struct ParseNumberError(pub String);

impl FromStr for QuadSurd {
    type Err = ParseNumberError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseNumberError(s.to_string());
        let s = s.trim();
        let Some(star) = s.find("*sqrt(") else {
            return parse_rational(s).map(QuadSurd::rational).ok_or_else(err);
        };
        let radicand: u64 = s[star + 6..]
            .strip_suffix(')')
            .ok_or_else(err)?
            .parse()
            .map_err(|_| err())?;
        let head = &s[..star];
        let split = head
            .char_indices()
            .skip(1)
            .filter(|&(_, c)| c == '+' || c == '-')
            .map(|(i, _)| i)
            .last()
            .ok_or_else(err)?;
        let rat = parse_rational(&head[..split]).ok_or_else(err)?;
        let mut irr = parse_rational(&head[split + 1..]).ok_or_else(err)?;
        if head.as_bytes()[split] == b'-' {
            irr = -irr;
        }
        Ok(QuadSurd::new(rat, irr, radicand))
    }
}

impl Field for QuadSurd {
    fn from_rational(q: &Rational) -> Self {
        QuadSurd::rational(q.clone())
    }

    fn to_f64(&self) -> f64 {
        rational_to_f64(&self.rat) + rational_to_f64(&self.irr) * (self.radicand as f64).sqrt()
    }
}

/// Exact `2^j` as a big integer.
pub fn pow2(j: u32) -> BigUint {
    BigUint::one() << j as usize
}

/// `ceil(log2(n))` for `n >= 1`; 0 for `n <= 1`.
pub fn ceil_log2(n: &BigUint) -> u32 {
    if n <= &BigUint::one() {
        return 0;
    }
    let bits = n.bits() as u32;
    if n.count_ones() == 1 {
        bits - 1
    } else {
        bits
    }
}

/// Signed difference `a - b` of two naturals.
pub fn signed_diff(a: &BigUint, b: &BigUint) -> BigInt {
    BigInt::from_biguint(Sign::Plus, a.clone()) - BigInt::from_biguint(Sign::Plus, b.clone())
}
