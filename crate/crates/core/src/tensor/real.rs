use std::fmt::{Debug, Display};
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Element precision of a stored grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    /// Dtype byte used by the T2DM header.
    pub const fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub const fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub const fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }
}

impl std::str::FromStr for DType {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(DType::F32),
            "f64" => Ok(DType::F64),
            _ => Err(crate::error::Error::InvalidArgument(format!(
                "unknown dtype {s:?} (expected f32 or f64)"
            ))),
        }
    }
}

impl Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Arithmetic every scan in this crate is generic over.
pub trait Real:
    Copy
    + PartialOrd
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn zero() -> Self;
    fn one() -> Self;
    /// Conversion from `f64` (rounding when `Self` is narrower).
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln_1p(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn is_finite(self) -> bool;

    /// `out[k] = exp(scale·src[k])`, batched so implementations can
    /// vectorize. Must return exactly 1 for a zero product.
    fn exp_scaled(src: &[Self], scale: Self, out: &mut [Self]) {
        for (o, &s) in out.iter_mut().zip(src) {
            *o = (s * scale).exp();
        }
    }

    /// `out[k] = softplus(src[k] + shift)`, batched like
    /// [`Real::exp_scaled`].
    fn softplus_shifted(src: &[Self], shift: Self, out: &mut [Self]) {
        for (o, &s) in out.iter_mut().zip(src) {
            *o = softplus(s + shift);
        }
    }

    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

/// A [`Real`] that can be stored in a T2DM file.
pub trait Element: Real {
    const DTYPE: DType;

    /// Little-endian encoding appended to `out`.
    fn extend_le(self, out: &mut Vec<u8>);

    /// Decode from exactly `DTYPE.width()` little-endian bytes.
    fn from_le_slice(bytes: &[u8]) -> Self;

    /// Bit pattern widened to `u64`, for bit-exact comparisons.
    fn bits(self) -> u64;
}

macro_rules! native_real {
    ($t:ty $(, $($extra:tt)*)?) => {
        impl Real for $t {
            #[inline]
            fn zero() -> Self {
                0.0
            }
            #[inline]
            fn one() -> Self {
                1.0
            }
            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn ln_1p(self) -> Self {
                <$t>::ln_1p(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline]
            fn powi(self, n: i32) -> Self {
                <$t>::powi(self, n)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            $($($extra)*)?
        }
    };
}

native_real! {
    f32,
    #[inline]
    fn exp_scaled(src: &[f32], scale: f32, out: &mut [f32]) {
        for (o, &s) in out.iter_mut().zip(src) {
            *o = exp_f32_poly(s * scale);
        }
    }
    #[inline]
    fn softplus_shifted(src: &[f32], shift: f32, out: &mut [f32]) {
        for (o, &s) in out.iter_mut().zip(src) {
            *o = softplus_f32_poly(s + shift);
        }
    }
}
native_real!(f64);

/// `exp` for `f32` written without calls or saturating casts so that batched
/// loops vectorize: base-2 range reduction and a degree-7 polynomial,
/// within 2 ulp of the correctly rounded result on `[-87.3, 88.3]`;
/// arguments outside that range are clamped to it.
#[inline(always)]
#[allow(clippy::excessive_precision)]
fn exp_f32_poly(x: f32) -> f32 {
    const LO: f32 = -87.336_54;
    const HI: f32 = 88.3;
    // 1.5·2^23: adding it rounds to an integer held in the low mantissa bits
    const MAGIC: f32 = 12_582_912.0;
    let x = if x < LO { LO } else { x };
    let x = if x > HI { HI } else { x };
    let shifted = x * std::f32::consts::LOG2_E + MAGIC;
    let n = shifted - MAGIC;
    // ln 2 split in two so n·LN2_HI is exact
    let r = x - n * 0.693_359_4 - n * -2.121_944_4e-4;
    let mut p = 1.987_569_1e-4f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_5e-1;
    p = p * r + 5.000_000_1e-1;
    let y = p * r * r + r + 1.0;
    let k = shifted.to_bits().wrapping_sub(MAGIC.to_bits());
    y * f32::from_bits(k.wrapping_add(127) << 23)
}

/// Natural log of a positive normal `f32`, vectorizable: mantissa/exponent
/// split on the bit pattern and a degree-9 polynomial on `[√½ − 1, √2 − 1)`.
#[inline(always)]
#[allow(clippy::excessive_precision)]
fn ln_f32_poly(x: f32) -> f32 {
    let bits = x.to_bits();
    let mut e = ((bits >> 23) & 0xff) as i32 - 126;
    // mantissa in [0.5, 1)
    let mut m = f32::from_bits((bits & 0x807f_ffff) | 0x3f00_0000);
    let low = m < std::f32::consts::FRAC_1_SQRT_2;
    e -= i32::from(low);
    m = if low { m + m - 1.0 } else { m - 1.0 };
    let e = e as f32;
    let z = m * m;
    let mut p = 7.037_683_6e-2f32;
    p = p * m - 1.151_461e-1;
    p = p * m + 1.167_699_9e-1;
    p = p * m - 1.242_014_1e-1;
    p = p * m + 1.424_932_3e-1;
    p = p * m - 1.666_805_8e-1;
    p = p * m + 2.000_071_4e-1;
    p = p * m - 2.499_999_4e-1;
    p = p * m + 3.333_333_1e-1;
    let y = p * m * z + e * -2.121_944_4e-4 - 0.5 * z;
    m + y + e * 0.693_359_4
}

/// [`softplus`] for `f32` built from the vectorizable `exp` and `ln`;
/// `ln(1 + e)` is corrected by `e / ((1 + e) − 1)` so small `e` keeps full
/// relative precision.
#[inline(always)]
fn softplus_f32_poly(v: f32) -> f32 {
    let e = exp_f32_poly(v);
    let u = 1.0 + e;
    let d = u - 1.0;
    let l = if d == 0.0 { e } else { ln_f32_poly(u) * (e / d) };
    if v > 20.0 {
        v
    } else {
        l
    }
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    fn extend_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_le_slice(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }

    fn bits(self) -> u64 {
        u64::from(self.to_bits())
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    fn extend_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_le_slice(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }

    fn bits(self) -> u64 {
        self.to_bits()
    }
}

/// `softplus(v)` with the identity branch above 20.
pub fn softplus<T: Real>(v: T) -> T {
    if v > T::of(20.0) {
        v
    } else {
        v.exp().ln_1p()
    }
}

/// Derivative of [`softplus`], i.e. the logistic sigmoid.
pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// `v·sigmoid(v)`.
pub fn silu<T: Real>(v: T) -> T {
    v * sigmoid(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_branches() {
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(25.0f64), 25.0);
        assert!((softplus(-40.0f64) - (-40.0f64).exp()).abs() < 1e-30);
        assert!(softplus(20.0f32).is_finite());
    }

    #[test]
    fn sigmoid_is_symmetric() {
        for v in [-30.0, -2.0, 0.0, 0.5, 7.0] {
            let s = sigmoid(v) + sigmoid(-v);
            assert!((s - 1.0f64).abs() < 1e-15);
        }
    }

    #[test]
    fn batched_f32_exp_is_accurate() {
        let src: Vec<f32> = (0..200_000).map(|k| -100.0 + k as f32 * 9.4e-4 * 0.9415).collect();
        let mut out = vec![0.0f32; src.len()];
        f32::exp_scaled(&src, 1.0, &mut out);
        for (&x, &e) in src.iter().zip(&out) {
            let want = f64::from(x).exp();
            if want > 1.2e-38 {
                assert!(
                    ((f64::from(e) - want) / want).abs() < 2.5e-7,
                    "exp({x}) = {e}, want {want}"
                );
            } else {
                assert!(e <= 1.2e-38);
            }
        }
        let mut one = [0.0f32];
        f32::exp_scaled(&[0.0], -3.0, &mut one);
        assert_eq!(one[0], 1.0);
        f32::exp_scaled(&[5.0], 100.0, &mut one);
        assert!(one[0].is_finite() && one[0] > 1e38);
    }

    #[test]
    fn batched_f32_softplus_is_accurate() {
        let src: Vec<f32> = (0..120_000).map(|k| -80.0 + k as f32 * 1e-3).collect();
        let mut out = vec![0.0f32; src.len()];
        f32::softplus_shifted(&src, 0.5, &mut out);
        for (&z, &got) in src.iter().zip(&out) {
            let want = softplus(f64::from(z + 0.5));
            assert!(
                ((f64::from(got) - want) / want).abs() < 4e-7,
                "softplus({z} + 0.5) = {got}, want {want}"
            );
        }
        f32::softplus_shifted(&[25.0], 0.0, &mut out[..1]);
        assert_eq!(out[0], 25.0);
    }

    #[test]
    fn dtype_codes() {
        assert_eq!(DType::from_code(0), Some(DType::F32));
        assert_eq!(DType::from_code(1), Some(DType::F64));
        assert_eq!(DType::from_code(2), None);
    }
}
