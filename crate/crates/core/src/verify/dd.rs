//! Double-double arithmetic: an unevaluated sum `hi + lo` of two `f64`
//! carrying roughly 32 significant decimal digits.
//!
//! Used to evaluate the finite-difference oracle with rounding error far
//! below the truncation error of the difference quotient.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::tensor::Real;

const LN2: DoubleDouble = DoubleDouble {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, PartialOrd)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DoubleDouble {
    pub const fn new(hi: f64, lo: f64) -> Self {
        Self { hi, lo }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        Self { hi, lo }
    }

    /// Exact scaling by a power of two.
    fn scale(self, f: f64) -> Self {
        Self {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    fn square(self) -> Self {
        self * self
    }

    /// `exp(r) − 1` for `|r| ≲ 1e-3`, by Taylor series.
    fn expm1_small(r: Self) -> Self {
        let mut term = r;
        let mut sum = r;
        for k in 2..=14 {
            term = term * r / Self::of(k as f64);
            sum = sum + term;
            if term.hi.abs() < 1e-36 * sum.hi.abs() {
                break;
            }
        }
        sum
    }

    /// `exp(r) − 1` without cancellation for small `r`.
    pub fn exp_m1(self) -> Self {
        if self.hi.abs() > 0.34 {
            return self.exp() - Self::one();
        }
        let mut e = Self::expm1_small(self.scale(1.0 / 512.0));
        for _ in 0..9 {
            e = e.scale(2.0) + e.square();
        }
        e
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Self::renorm(s, e + f)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let (p, e) = two_prod(self.hi, o.hi);
        Self::renorm(p, e + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q1 = self.hi / o.hi;
        let r = self - o * Self::of(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Self::of(q2);
        let q3 = r.hi / o.hi;
        Self::renorm(q1, q2) + Self::of(q3)
    }
}

impl fmt::Display for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:e}{:+e}", self.hi, self.lo)
    }
}

impl Real for DoubleDouble {
    fn zero() -> Self {
        Self::new(0.0, 0.0)
    }

    fn one() -> Self {
        Self::new(1.0, 0.0)
    }

    fn of(v: f64) -> Self {
        Self::new(v, 0.0)
    }

    fn as_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn exp(self) -> Self {
        if self.hi > 709.0 {
            return Self::of(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Self::zero();
        }
        // x = k·ln2 + r, then exp(r) = (exp(r/512))^512 through expm1 doubling
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * Self::of(k)).scale(1.0 / 512.0);
        let mut e = Self::expm1_small(r);
        for _ in 0..9 {
            e = e.scale(2.0) + e.square();
        }
        let e = e + Self::one();
        // split 2^k so neither factor overflows or goes subnormal early
        let k = k as i32;
        let half = k / 2;
        e.scale(2f64.powi(half)).scale(2f64.powi(k - half))
    }

    fn ln_1p(self) -> Self {
        if self.hi == 0.0 {
            return Self::zero();
        }
        // Newton on expm1(y) = x
        let mut y = Self::of(self.as_f64().ln_1p());
        for _ in 0..2 {
            let e = y.exp_m1();
            y = y - (e - self) / (e + Self::one());
        }
        y
    }

    fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return Self::of(self.hi.sqrt());
        }
        let y = Self::of(self.hi.sqrt());
        y + (self - y.square()) / y.scale(2.0)
    }

    fn tanh(self) -> Self {
        if self.hi.abs() > 40.0 {
            return Self::of(self.hi.signum());
        }
        let e = (self.scale(2.0)).exp();
        (e - Self::one()) / (e + Self::one())
    }

    fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    fn powi(self, n: i32) -> Self {
        let mut base = if n < 0 { Self::one() / self } else { self };
        let mut m = n.unsigned_abs();
        let mut acc = Self::one();
        while m > 0 {
            if m & 1 == 1 {
                acc = acc * base;
            }
            base = base.square();
            m >>= 1;
        }
        acc
    }

    fn is_finite(self) -> bool {
        self.hi.is_finite() && self.lo.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(got: DoubleDouble, want: (f64, f64), rel: f64) {
        let want = DoubleDouble::new(want.0, want.1);
        let err = (got - want).abs().as_f64() / want.abs().as_f64();
        assert!(err <= rel, "got {got}, want {want}, rel {err:e}");
    }

    #[test]
    fn arithmetic_is_double_double_accurate() {
        let third = DoubleDouble::one() / DoubleDouble::of(3.0);
        let back = third * DoubleDouble::of(3.0) - DoubleDouble::one();
        assert!(back.as_f64().abs() < 1e-31);
        close(
            DoubleDouble::of(2.0).sqrt(),
            (std::f64::consts::SQRT_2, -9.667293313452913e-17),
            1e-30,
        );
        let tiny = DoubleDouble::of(1e-20);
        assert_eq!((DoubleDouble::one() + tiny - DoubleDouble::one()).as_f64(), 1e-20);
    }

    #[test]
    fn exp_matches_high_precision_values() {
        let cases = [
            (-0.7, (0.4965853037914095, 9.827550225511106e-18)),
            (3.3, (27.112638920657883, -2.243840361146525e-16)),
            (-40.25, (3.3086216207858244e-18, 1.3601916932590803e-34)),
            (0.0003, (1.0003000450045003, 2.192316751113921e-17)),
        ];
        for (x, want) in cases {
            close(DoubleDouble::of(x).exp(), want, 1e-30);
        }
    }

    #[test]
    fn ln_1p_matches_high_precision_values() {
        let cases = [
            (0.25, (0.22314355131420976, -9.091270597324799e-18)),
            (150.5, (5.020585624949423, 4.3503965480172763e-16)),
            (0.0078125, (0.007782140442054949, -1.2819179123343845e-20)),
            (3e-5, (2.99995500089998e-05, -1.1119191404232131e-21)),
        ];
        for (x, want) in cases {
            close(DoubleDouble::of(x).ln_1p(), want, 1e-29);
        }
    }

    #[test]
    fn powi_and_ordering() {
        close(
            DoubleDouble::of(3.0).powi(-2),
            (0.1111111111111111, 6.1679056923619804e-18),
            1e-30,
        );
        assert!(DoubleDouble::new(1.0, 1e-20) > DoubleDouble::one());
        assert!(DoubleDouble::of(-2.0) < DoubleDouble::zero());
    }
}
