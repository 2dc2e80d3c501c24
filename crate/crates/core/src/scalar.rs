use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, One, Zero};

/// Real scalar the whole crate is generic over: f32 or f64.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal fits the scalar type")
    }

    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count fits the scalar type")
    }

    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Field element for the banded factorizations and vector kernels: a real
/// number or a complex number over it.
pub trait Field<T: Real>:
    Copy
    + Debug
    + Send
    + Sync
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Mul<T, Output = Self>
    + 'static
{
    fn from_real(x: T) -> Self;
    fn modulus(self) -> T;
    fn modulus_sqr(self) -> T;
    fn conj(self) -> Self;
    fn real(self) -> T;
}

impl<T: Real> Field<T> for T {
    fn from_real(x: T) -> Self {
        x
    }
    fn modulus(self) -> T {
        self.abs()
    }
    fn modulus_sqr(self) -> T {
        self * self
    }
    fn conj(self) -> Self {
        self
    }
    fn real(self) -> T {
        self
    }
}

impl<T: Real> Field<T> for Complex<T> {
    fn from_real(x: T) -> Self {
        Complex::new(x, T::zero())
    }
    fn modulus(self) -> T {
        self.norm()
    }
    fn modulus_sqr(self) -> T {
        self.norm_sqr()
    }
    fn conj(self) -> Self {
        Complex::conj(&self)
    }
    fn real(self) -> T {
        self.re
    }
}

/// Euclidean inner product, antilinear in the first slot.
pub fn dot<T: Real, F: Field<T>>(a: &[F], b: &[F]) -> F {
    a.iter()
        .zip(b)
        .fold(F::zero(), |acc, (&x, &y)| acc + x.conj() * y)
}

pub fn norm<T: Real, F: Field<T>>(a: &[F]) -> T {
    a.iter().map(|x| x.modulus_sqr()).sum::<T>().sqrt()
}

pub fn axpy<T: Real, F: Field<T>>(alpha: F, x: &[F], y: &mut [F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale<T: Real, F: Field<T>>(alpha: F, x: &mut [F]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

pub fn complexify<T: Real>(x: &[T]) -> Vec<Complex<T>> {
    x.iter().map(|&v| Complex::new(v, T::zero())).collect()
}

pub fn conj_vec<T: Real>(x: &[Complex<T>]) -> Vec<Complex<T>> {
    x.iter().map(|v| v.conj()).collect()
}
