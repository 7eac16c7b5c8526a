//! Forward-mode dual scalars.
//!
//! All cut geometry and quadrature is written against the [`Scalar`] trait so
//! the same code runs on `f64`, on first-order [`Dual1`] numbers (gradients)
//! and on second-order [`Dual2`] numbers (mixed second derivatives).
//!
//! Ordering and equality of duals only look at the primal part, matching how
//! branches in the geometry code are taken on primal values.
//!
//! ```
//! use cutform::dual::{Dual1, Scalar};
//!
//! let x = Dual1::new(3.0, 1.0);
//! let y = x * x;
//! assert_eq!((y.val, y.der), (9.0, 6.0));
//! ```

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

/// Real-like scalar carried through geometry, quadrature and integrands.
pub trait Scalar:
    Copy
    + fmt::Debug
    + Send
    + Sync
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + Sum
{
    fn from_f64(v: f64) -> Self;

    /// Primal part.
    fn re(&self) -> f64;

    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn powi(self, n: u32) -> Self {
        let mut acc = Self::one();
        for _ in 0..n {
            acc *= self;
        }
        acc
    }

    /// Smaller of the two by primal value; ties keep `self`.
    fn min(self, other: Self) -> Self {
        if other.re() < self.re() {
            other
        } else {
            self
        }
    }

    fn max(self, other: Self) -> Self {
        if other.re() > self.re() {
            other
        } else {
            self
        }
    }

    fn try_div(self, rhs: Self) -> Result<Self> {
        if rhs.re() == 0.0 {
            return Err(Error::SingularDerivative("division by a zero primal".into()));
        }
        Ok(self / rhs)
    }

    fn try_sqrt(self) -> Result<Self> {
        if !(self.re() > 0.0) {
            return Err(Error::SingularDerivative(format!(
                "sqrt of non-positive primal {}",
                self.re()
            )));
        }
        Ok(self.sqrt())
    }

    fn try_abs(self) -> Result<Self> {
        if self.re() == 0.0 {
            return Err(Error::SingularDerivative("abs at a zero primal".into()));
        }
        Ok(self.abs())
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn re(&self) -> f64 {
        *self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
}

/// `val + der * eps` with `eps^2 = 0`.
#[derive(Clone, Copy, Default)]
pub struct Dual1 {
    pub val: f64,
    pub der: f64,
}

impl Dual1 {
    pub const fn new(val: f64, der: f64) -> Self {
        Self { val, der }
    }

    pub const fn constant(val: f64) -> Self {
        Self { val, der: 0.0 }
    }

    pub const fn variable(val: f64) -> Self {
        Self { val, der: 1.0 }
    }

    #[inline]
    fn chain(self, f: f64, df: f64) -> Self {
        Self::new(f, df * self.der)
    }
}

/// Truncated second-order expansion in two independent directions:
/// `val + d1 e1 + d2 e2 + d12 e1 e2` with `e1^2 = e2^2 = 0`.
///
/// Seeding node `i` in `e1` and node `j` in `e2` yields the mixed second
/// derivative in `d12`; seeding the same node in both yields the pure one.
#[derive(Clone, Copy, Default)]
pub struct Dual2 {
    pub val: f64,
    pub d1: f64,
    pub d2: f64,
    pub d12: f64,
}

impl Dual2 {
    pub const fn new(val: f64, d1: f64, d2: f64, d12: f64) -> Self {
        Self { val, d1, d2, d12 }
    }

    pub const fn constant(val: f64) -> Self {
        Self::new(val, 0.0, 0.0, 0.0)
    }

    #[inline]
    fn chain(self, f: f64, df: f64, ddf: f64) -> Self {
        Self::new(
            f,
            df * self.d1,
            df * self.d2,
            df * self.d12 + ddf * self.d1 * self.d2,
        )
    }

    fn recip(self) -> Self {
        let inv = 1.0 / self.val;
        self.chain(inv, -inv * inv, 2.0 * inv * inv * inv)
    }
}

macro_rules! dual_common {
    ($t:ident) => {
        impl PartialEq for $t {
            fn eq(&self, other: &Self) -> bool {
                self.val == other.val
            }
        }

        impl PartialOrd for $t {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                self.val.partial_cmp(&other.val)
            }
        }

        impl From<f64> for $t {
            fn from(v: f64) -> Self {
                Self::constant(v)
            }
        }

        impl Add<f64> for $t {
            type Output = Self;
            fn add(mut self, rhs: f64) -> Self {
                self.val += rhs;
                self
            }
        }

        impl Sub<f64> for $t {
            type Output = Self;
            fn sub(mut self, rhs: f64) -> Self {
                self.val -= rhs;
                self
            }
        }

        impl Div for $t {
            type Output = Self;
            #[allow(clippy::suspicious_arithmetic_impl)]
            fn div(self, rhs: Self) -> Self {
                self * rhs.recip_dual()
            }
        }

        impl Div<f64> for $t {
            type Output = Self;
            fn div(self, rhs: f64) -> Self {
                self * (1.0 / rhs)
            }
        }

        impl AddAssign for $t {
            fn add_assign(&mut self, rhs: Self) {
                *self = *self + rhs;
            }
        }

        impl SubAssign for $t {
            fn sub_assign(&mut self, rhs: Self) {
                *self = *self - rhs;
            }
        }

        impl MulAssign for $t {
            fn mul_assign(&mut self, rhs: Self) {
                *self = *self * rhs;
            }
        }

        impl DivAssign for $t {
            fn div_assign(&mut self, rhs: Self) {
                *self = *self / rhs;
            }
        }

        impl Sum for $t {
            fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
                iter.fold(Self::default(), |a, b| a + b)
            }
        }
    };
}

dual_common!(Dual1);
dual_common!(Dual2);

impl Dual1 {
    fn recip_dual(self) -> Self {
        let inv = 1.0 / self.val;
        self.chain(inv, -inv * inv)
    }
}

impl Dual2 {
    fn recip_dual(self) -> Self {
        self.recip()
    }
}

impl Add for Dual1 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.val + rhs.val, self.der + rhs.der)
    }
}

impl Sub for Dual1 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.val - rhs.val, self.der - rhs.der)
    }
}

impl Mul for Dual1 {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self::new(self.val * rhs.val, self.val * rhs.der + self.der * rhs.val)
    }
}

impl Mul<f64> for Dual1 {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        Self::new(self.val * rhs, self.der * rhs)
    }
}

impl Neg for Dual1 {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.val, -self.der)
    }
}

impl Add for Dual2 {
    type Output = Self;
    fn add(self, r: Self) -> Self {
        Self::new(self.val + r.val, self.d1 + r.d1, self.d2 + r.d2, self.d12 + r.d12)
    }
}

impl Sub for Dual2 {
    type Output = Self;
    fn sub(self, r: Self) -> Self {
        Self::new(self.val - r.val, self.d1 - r.d1, self.d2 - r.d2, self.d12 - r.d12)
    }
}

impl Mul for Dual2 {
    type Output = Self;
    fn mul(self, r: Self) -> Self {
        Self::new(
            self.val * r.val,
            self.val * r.d1 + self.d1 * r.val,
            self.val * r.d2 + self.d2 * r.val,
            self.val * r.d12 + self.d1 * r.d2 + self.d2 * r.d1 + self.d12 * r.val,
        )
    }
}

impl Mul<f64> for Dual2 {
    type Output = Self;
    fn mul(self, c: f64) -> Self {
        Self::new(self.val * c, self.d1 * c, self.d2 * c, self.d12 * c)
    }
}

impl Neg for Dual2 {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.val, -self.d1, -self.d2, -self.d12)
    }
}

impl Scalar for Dual1 {
    fn from_f64(v: f64) -> Self {
        Self::constant(v)
    }
    fn re(&self) -> f64 {
        self.val
    }
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn abs(self) -> Self {
        if self.val < 0.0 {
            -self
        } else {
            self
        }
    }
    fn sin(self) -> Self {
        self.chain(self.val.sin(), self.val.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.val.cos(), -self.val.sin())
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.chain(e, e)
    }
}

impl Scalar for Dual2 {
    fn from_f64(v: f64) -> Self {
        Self::constant(v)
    }
    fn re(&self) -> f64 {
        self.val
    }
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * self.val))
    }
    fn abs(self) -> Self {
        if self.val < 0.0 {
            -self
        } else {
            self
        }
    }
    fn sin(self) -> Self {
        let (s, c) = self.val.sin_cos();
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.val.sin_cos();
        self.chain(c, -s, -c)
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.chain(e, e, e)
    }
}

impl fmt::Debug for Dual1 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} + {}ε)", self.val, self.der)
    }
}

impl fmt::Display for Dual1 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl fmt::Debug for Dual2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({} + {}ε₁ + {}ε₂ + {}ε₁ε₂)",
            self.val, self.d1, self.d2, self.d12
        )
    }
}

/// Lift `values` to duals with a unit derivative on entry `i`.
pub fn seed(values: &[f64], i: usize) -> Result<Vec<Dual1>> {
    if i >= values.len() {
        return Err(Error::InvalidArgument(format!(
            "seed index {i} out of range for {} values",
            values.len()
        )));
    }
    Ok(values
        .iter()
        .enumerate()
        .map(|(k, &v)| Dual1::new(v, if k == i { 1.0 } else { 0.0 }))
        .collect())
}

/// Second-order seeding: `i` carries the first direction, `j` the second.
pub fn seed2(values: &[f64], i: usize, j: usize) -> Result<Vec<Dual2>> {
    let n = values.len();
    if i >= n || j >= n {
        return Err(Error::InvalidArgument(format!(
            "seed indices ({i}, {j}) out of range for {n} values"
        )));
    }
    Ok(values
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            Dual2::new(
                v,
                if k == i { 1.0 } else { 0.0 },
                if k == j { 1.0 } else { 0.0 },
                0.0,
            )
        })
        .collect())
}

/// Primal parts of a dual vector.
pub fn primal<S: Scalar>(values: &[S]) -> Vec<f64> {
    values.iter().map(Scalar::re).collect()
}
