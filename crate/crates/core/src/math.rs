//! Small linear-algebra helpers shared by the renderer and the gradient code.
//!
//! Geometry uses `nalgebra` vectors. The per-sample shading terms are written
//! once over the [`Real`] trait so that the plain `f64` forward pass and the
//! [`Jet`] pass used for local derivatives execute the same floating-point
//! operations in the same order, which keeps their values bit-identical.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

// Below this angle the Rodrigues coefficients switch to their Taylor series.
const SERIES_ANGLE: f64 = 1e-2;

/// Coefficients of `R = I + a K + b K²` and their derivatives divided by θ.
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64, f64) {
    let t2 = theta * theta;
    if theta < SERIES_ANGLE {
        let t4 = t2 * t2;
        (
            1.0 - t2 / 6.0 + t4 / 120.0,
            0.5 - t2 / 24.0 + t4 / 720.0,
            -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0,
            -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        (
            s / theta,
            (1.0 - c) / t2,
            (theta * c - s) / (t2 * theta),
            (theta * s - 2.0 * (1.0 - c)) / (t2 * t2),
        )
    }
}

/// Rotation matrix of an axis-angle vector (Rodrigues' formula).
pub fn rotation_matrix(w: &Vec3) -> Mat3 {
    let (a, b, _, _) = rodrigues_coefficients(w.norm());
    let k = skew(w);
    Mat3::identity() + k * a + k * k * b
}

/// Partial derivatives `∂R/∂w_k` of [`rotation_matrix`] for k = 0, 1, 2.
pub fn rotation_jacobian(w: &Vec3) -> [Mat3; 3] {
    let (a, b, da, db) = rodrigues_coefficients(w.norm());
    let k = skew(w);
    let k2 = k * k;
    std::array::from_fn(|i| {
        let kk = skew(&Vec3::ith(i, 1.0));
        k * (da * w[i]) + kk * a + k2 * (db * w[i]) + (kk * k + k * kk) * b
    })
}

/// Axis-angle vector of a rotation matrix.
pub fn rotation_log(r: &Mat3) -> Vec3 {
    nalgebra::Rotation3::from_matrix_unchecked(*r).scaled_axis()
}

/// Scalar type usable by the generic shading code.
pub trait Real:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn cst(x: f64) -> Self;
    fn val(self) -> f64;
    fn sqrt(self) -> Self;
}

impl Real for f64 {
    #[inline]
    fn cst(x: f64) -> Self {
        x
    }
    #[inline]
    fn val(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

/// Forward-mode dual number carrying `N` directional derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

impl<const N: usize> Jet<N> {
    pub fn constant(v: f64) -> Self {
        Jet { v, d: [0.0; N] }
    }

    /// Independent variable `i`.
    pub fn var(v: f64, i: usize) -> Self {
        let mut d = [0.0; N];
        d[i] = 1.0;
        Jet { v, d }
    }
}

impl<const N: usize> Add for Jet<N> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Jet {
            v: self.v + o.v,
            d: std::array::from_fn(|i| self.d[i] + o.d[i]),
        }
    }
}

impl<const N: usize> Sub for Jet<N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Jet {
            v: self.v - o.v,
            d: std::array::from_fn(|i| self.d[i] - o.d[i]),
        }
    }
}

impl<const N: usize> Mul for Jet<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Jet {
            v: self.v * o.v,
            d: std::array::from_fn(|i| self.d[i] * o.v + self.v * o.d[i]),
        }
    }
}

impl<const N: usize> Div for Jet<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let q = self.v / o.v;
        Jet {
            v: q,
            d: std::array::from_fn(|i| (self.d[i] - q * o.d[i]) * inv),
        }
    }
}

impl<const N: usize> Neg for Jet<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Jet {
            v: -self.v,
            d: self.d.map(|x| -x),
        }
    }
}

impl<const N: usize> Real for Jet<N> {
    #[inline]
    fn cst(x: f64) -> Self {
        Jet::constant(x)
    }
    #[inline]
    fn val(self) -> f64 {
        self.v
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        let k = if s > 0.0 { 0.5 / s } else { 0.0 };
        Jet {
            v: s,
            d: self.d.map(|x| x * k),
        }
    }
}

pub(crate) type V3<T> = [T; 3];

#[inline]
pub(crate) fn dot3<T: Real>(a: &V3<T>, b: &V3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn sub3<T: Real>(a: &V3<T>, b: &V3<T>) -> V3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn add3<T: Real>(a: &V3<T>, b: &V3<T>) -> V3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub(crate) fn scale3<T: Real>(a: &V3<T>, s: T) -> V3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub(crate) fn div3<T: Real>(a: &V3<T>, s: T) -> V3<T> {
    [a[0] / s, a[1] / s, a[2] / s]
}

#[inline]
pub(crate) fn lift3<T: Real>(v: &Vec3) -> V3<T> {
    [T::cst(v.x), T::cst(v.y), T::cst(v.z)]
}
