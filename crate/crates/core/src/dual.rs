//! Forward-mode dual numbers carrying a fixed-size gradient.
//!
//! `Dual<T, N>` holds a value and the partial derivatives with respect to `N`
//! seeded inputs. It implements [`num_traits::Float`], so any routine generic
//! over [`Scalar`](crate::Scalar) can be differentiated by instantiating it with
//! a dual type and seeding the inputs with [`Dual::var`].
//!
//! Comparisons look at the value only. Non-smooth points follow the usual
//! subgradient choices: `abs`, `max`, `min` and rounding functions take the
//! branch selected by the value, and `sqrt(0)` has zero derivative.

use std::cmp::Ordering;
use std::fmt;
use std::num::FpCategory;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, RemAssign, Sub, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};

#[derive(Clone, Copy, Debug)]
pub struct Dual<T, const N: usize> {
    pub value: T,
    pub grad: [T; N],
}

/// Dual number over `f64`.
pub type Dual64<const N: usize> = Dual<f64, N>;

impl<T: Float, const N: usize> Dual<T, N> {
    #[inline]
    pub fn constant(value: T) -> Self {
        Dual { value, grad: [T::zero(); N] }
    }

    /// Independent variable number `index`.
    #[inline]
    pub fn var(value: T, index: usize) -> Self {
        let mut grad = [T::zero(); N];
        grad[index] = T::one();
        Dual { value, grad }
    }

    /// Seeds a whole input vector, variable `i` taking slot `i`.
    pub fn vars(values: [T; N]) -> [Self; N] {
        let mut out = [Self::constant(T::zero()); N];
        for (i, v) in values.into_iter().enumerate() {
            out[i] = Self::var(v, i);
        }
        out
    }

    #[inline]
    fn chain(self, value: T, deriv: T) -> Self {
        let mut grad = self.grad;
        for g in grad.iter_mut() {
            *g = *g * deriv;
        }
        Dual { value, grad }
    }

    #[inline]
    fn combine(self, other: Self, value: T, da: T, db: T) -> Self {
        let mut grad = self.grad;
        for (g, o) in grad.iter_mut().zip(other.grad.iter()) {
            *g = *g * da + *o * db;
        }
        Dual { value, grad }
    }
}

impl<T: Float + fmt::Display, const N: usize> fmt::Display for Dual<T, N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} + ε{:?}", self.value, self.grad.iter().map(|g| g.to_f64()).collect::<Vec<_>>())
    }
}

impl<T: Float, const N: usize> PartialEq for Dual<T, N> {
    fn eq(&self, other: &Self) -> bool {
        self.value == other.value
    }
}

impl<T: Float, const N: usize> PartialOrd for Dual<T, N> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.value.partial_cmp(&other.value)
    }
}

impl<T: Float, const N: usize> Add for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let mut grad = self.grad;
        for (g, o) in grad.iter_mut().zip(rhs.grad.iter()) {
            *g = *g + *o;
        }
        Dual { value: self.value + rhs.value, grad }
    }
}

impl<T: Float, const N: usize> Sub for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        let mut grad = self.grad;
        for (g, o) in grad.iter_mut().zip(rhs.grad.iter()) {
            *g = *g - *o;
        }
        Dual { value: self.value - rhs.value, grad }
    }
}

impl<T: Float, const N: usize> Mul for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        self.combine(rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<T: Float, const N: usize> Div for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = T::one() / rhs.value;
        let value = self.value * inv;
        self.combine(rhs, value, inv, -value * inv)
    }
}

impl<T: Float, const N: usize> Rem for Dual<T, N> {
    type Output = Self;
    fn rem(self, rhs: Self) -> Self {
        // a % b = a - b * trunc(a / b)
        let q = (self.value / rhs.value).trunc();
        self.combine(rhs, self.value % rhs.value, T::one(), -q)
    }
}

impl<T: Float, const N: usize> Neg for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.chain(-self.value, -T::one())
    }
}

macro_rules! assign_op {
    ($tr:ident, $m:ident, $op:tt) => {
        impl<T: Float, const N: usize> $tr for Dual<T, N> {
            #[inline]
            fn $m(&mut self, rhs: Self) {
                *self = *self $op rhs;
            }
        }
    };
}
assign_op!(AddAssign, add_assign, +);
assign_op!(SubAssign, sub_assign, -);
assign_op!(MulAssign, mul_assign, *);
assign_op!(DivAssign, div_assign, /);
assign_op!(RemAssign, rem_assign, %);

impl<T: Float, const N: usize> std::iter::Sum for Dual<T, N> {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::zero(), |a, b| a + b)
    }
}

impl<T: Float, const N: usize> Zero for Dual<T, N> {
    fn zero() -> Self {
        Self::constant(T::zero())
    }
    fn is_zero(&self) -> bool {
        self.value.is_zero()
    }
}

impl<T: Float, const N: usize> One for Dual<T, N> {
    fn one() -> Self {
        Self::constant(T::one())
    }
}

impl<T: Float, const N: usize> Num for Dual<T, N> {
    type FromStrRadixErr = T::FromStrRadixErr;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        T::from_str_radix(s, radix).map(Self::constant)
    }
}

impl<T: Float, const N: usize> ToPrimitive for Dual<T, N> {
    fn to_i64(&self) -> Option<i64> {
        self.value.to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        self.value.to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        self.value.to_f64()
    }
    fn to_f32(&self) -> Option<f32> {
        self.value.to_f32()
    }
}

impl<T: Float, const N: usize> NumCast for Dual<T, N> {
    fn from<P: ToPrimitive>(n: P) -> Option<Self> {
        <T as NumCast>::from(n).map(Self::constant)
    }
}

impl<T: Float + FromPrimitive, const N: usize> FromPrimitive for Dual<T, N> {
    fn from_i64(n: i64) -> Option<Self> {
        T::from_i64(n).map(Self::constant)
    }
    fn from_u64(n: u64) -> Option<Self> {
        T::from_u64(n).map(Self::constant)
    }
    fn from_f64(n: f64) -> Option<Self> {
        T::from_f64(n).map(Self::constant)
    }
}

macro_rules! const_fn {
    ($($name:ident),*) => {
        $(
            fn $name() -> Self {
                Self::constant(T::$name())
            }
        )*
    };
}

impl<T: Float + FloatConst, const N: usize> FloatConst for Dual<T, N> {
    const_fn!(
        E, FRAC_1_PI, FRAC_1_SQRT_2, FRAC_2_PI, FRAC_2_SQRT_PI, FRAC_PI_2, FRAC_PI_3, FRAC_PI_4,
        FRAC_PI_6, FRAC_PI_8, LN_10, LN_2, LOG10_E, LOG2_E, PI, SQRT_2
    );
}

impl<T: Float, const N: usize> Float for Dual<T, N> {
    const_fn!(nan, infinity, neg_infinity, neg_zero, min_value, min_positive_value, max_value, epsilon);

    fn is_nan(self) -> bool {
        self.value.is_nan()
    }
    fn is_infinite(self) -> bool {
        self.value.is_infinite()
    }
    fn is_finite(self) -> bool {
        self.value.is_finite()
    }
    fn is_normal(self) -> bool {
        self.value.is_normal()
    }
    fn classify(self) -> FpCategory {
        self.value.classify()
    }
    fn floor(self) -> Self {
        Self::constant(self.value.floor())
    }
    fn ceil(self) -> Self {
        Self::constant(self.value.ceil())
    }
    fn round(self) -> Self {
        Self::constant(self.value.round())
    }
    fn trunc(self) -> Self {
        Self::constant(self.value.trunc())
    }
    fn fract(self) -> Self {
        Dual { value: self.value.fract(), grad: self.grad }
    }
    fn abs(self) -> Self {
        if self.value > T::zero() {
            self
        } else if self.value < T::zero() {
            -self
        } else {
            Self::constant(T::zero())
        }
    }
    fn signum(self) -> Self {
        Self::constant(self.value.signum())
    }
    fn is_sign_positive(self) -> bool {
        self.value.is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.value.is_sign_negative()
    }
    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }
    fn recip(self) -> Self {
        let inv = self.value.recip();
        self.chain(inv, -inv * inv)
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::one();
        }
        let deriv = T::from(n).unwrap() * self.value.powi(n - 1);
        self.chain(self.value.powi(n), deriv)
    }
    fn powf(self, n: Self) -> Self {
        let value = self.value.powf(n.value);
        let da = if self.value.is_zero() { T::zero() } else { n.value * self.value.powf(n.value - T::one()) };
        let db = if self.value > T::zero() { value * self.value.ln() } else { T::zero() };
        self.combine(n, value, da, db)
    }
    fn sqrt(self) -> Self {
        let value = self.value.sqrt();
        if value.is_zero() {
            return Self::constant(value);
        }
        self.chain(value, T::one() / (value + value))
    }
    fn exp(self) -> Self {
        let value = self.value.exp();
        self.chain(value, value)
    }
    fn exp2(self) -> Self {
        let value = self.value.exp2();
        self.chain(value, value * T::from(std::f64::consts::LN_2).unwrap())
    }
    fn ln(self) -> Self {
        self.chain(self.value.ln(), self.value.recip())
    }
    fn log(self, base: Self) -> Self {
        self.ln() / base.ln()
    }
    fn log2(self) -> Self {
        self.chain(self.value.log2(), (self.value * T::from(std::f64::consts::LN_2).unwrap()).recip())
    }
    fn log10(self) -> Self {
        self.chain(self.value.log10(), (self.value * T::from(std::f64::consts::LN_10).unwrap()).recip())
    }
    fn max(self, other: Self) -> Self {
        if other.value > self.value || self.value.is_nan() {
            other
        } else {
            self
        }
    }
    fn min(self, other: Self) -> Self {
        if other.value < self.value || self.value.is_nan() {
            other
        } else {
            self
        }
    }
    #[allow(deprecated)]
    fn abs_sub(self, other: Self) -> Self {
        if self.value <= other.value {
            Self::zero()
        } else {
            self - other
        }
    }
    fn cbrt(self) -> Self {
        let value = self.value.cbrt();
        if value.is_zero() {
            return Self::constant(value);
        }
        self.chain(value, (T::from(3.0).unwrap() * value * value).recip())
    }
    fn hypot(self, other: Self) -> Self {
        (self * self + other * other).sqrt()
    }
    fn sin(self) -> Self {
        self.chain(self.value.sin(), self.value.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.value.cos(), -self.value.sin())
    }
    fn tan(self) -> Self {
        let t = self.value.tan();
        self.chain(t, T::one() + t * t)
    }
    fn asin(self) -> Self {
        self.chain(self.value.asin(), (T::one() - self.value * self.value).sqrt().recip())
    }
    fn acos(self) -> Self {
        self.chain(self.value.acos(), -(T::one() - self.value * self.value).sqrt().recip())
    }
    fn atan(self) -> Self {
        self.chain(self.value.atan(), (T::one() + self.value * self.value).recip())
    }
    fn atan2(self, other: Self) -> Self {
        // d atan2(y, x) = (x dy - y dx) / (x² + y²)
        let r2 = self.value * self.value + other.value * other.value;
        if r2.is_zero() {
            return Self::constant(self.value.atan2(other.value));
        }
        self.combine(other, self.value.atan2(other.value), other.value / r2, -self.value / r2)
    }
    fn sin_cos(self) -> (Self, Self) {
        (self.sin(), self.cos())
    }
    fn exp_m1(self) -> Self {
        self.chain(self.value.exp_m1(), self.value.exp())
    }
    fn ln_1p(self) -> Self {
        self.chain(self.value.ln_1p(), (T::one() + self.value).recip())
    }
    fn sinh(self) -> Self {
        self.chain(self.value.sinh(), self.value.cosh())
    }
    fn cosh(self) -> Self {
        self.chain(self.value.cosh(), self.value.sinh())
    }
    fn tanh(self) -> Self {
        let t = self.value.tanh();
        self.chain(t, T::one() - t * t)
    }
    fn asinh(self) -> Self {
        self.chain(self.value.asinh(), (self.value * self.value + T::one()).sqrt().recip())
    }
    fn acosh(self) -> Self {
        self.chain(self.value.acosh(), (self.value * self.value - T::one()).sqrt().recip())
    }
    fn atanh(self) -> Self {
        self.chain(self.value.atanh(), (T::one() - self.value * self.value).recip())
    }
    fn integer_decode(self) -> (u64, i16, i8) {
        self.value.integer_decode()
    }
}
