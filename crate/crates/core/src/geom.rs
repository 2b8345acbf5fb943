//! Small fixed-size vectors and polylines.

use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Vec2<T> {
    #[inline]
    pub fn new(x: T, y: T) -> Self {
        Vec2 { x, y }
    }
    #[inline]
    pub fn zero() -> Self {
        Vec2 { x: T::zero(), y: T::zero() }
    }
    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }
    /// z-component of the 3D cross product.
    #[inline]
    pub fn cross(self, o: Self) -> T {
        self.x * o.y - self.y * o.x
    }
    #[inline]
    pub fn norm_sq(self) -> T {
        self.dot(self)
    }
    /// Euclidean norm; zero vectors have zero derivative.
    #[inline]
    pub fn norm(self) -> T {
        let s = self.norm_sq();
        if s == T::zero() {
            T::zero()
        } else {
            s.sqrt()
        }
    }
    #[inline]
    pub fn scale(self, s: T) -> Self {
        Vec2 { x: self.x * s, y: self.y * s }
    }
    pub fn cast<U: Scalar>(self) -> Vec2<U> {
        Vec2 { x: cast(self.x), y: cast(self.y) }
    }
    /// Counter-clockwise rotation by `angle`.
    pub fn rotate(self, angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        Vec2 { x: c * self.x - s * self.y, y: s * self.x + c * self.y }
    }
    pub fn extend(self, z: T) -> Vec3<T> {
        Vec3 { x: self.x, y: self.y, z }
    }
}

impl<T: Scalar> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Vec3 { x, y, z }
    }
    #[inline]
    pub fn zero() -> Self {
        Vec3 { x: T::zero(), y: T::zero(), z: T::zero() }
    }
    pub fn from_array(a: [T; 3]) -> Self {
        Vec3 { x: a[0], y: a[1], z: a[2] }
    }
    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }
    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }
    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Vec3 {
            x: self.y * o.z - self.z * o.y,
            y: self.z * o.x - self.x * o.z,
            z: self.x * o.y - self.y * o.x,
        }
    }
    #[inline]
    pub fn norm_sq(self) -> T {
        self.dot(self)
    }
    /// Euclidean norm; zero vectors have zero derivative.
    #[inline]
    pub fn norm(self) -> T {
        let s = self.norm_sq();
        if s == T::zero() {
            T::zero()
        } else {
            s.sqrt()
        }
    }
    #[inline]
    pub fn scale(self, s: T) -> Self {
        Vec3 { x: self.x * s, y: self.y * s, z: self.z * s }
    }
    #[inline]
    pub fn xy(self) -> Vec2<T> {
        Vec2 { x: self.x, y: self.y }
    }
    #[inline]
    pub fn dist(self, o: Self) -> T {
        (self - o).norm()
    }
    pub fn lerp(self, o: Self, t: T) -> Self {
        self + (o - self).scale(t)
    }
    pub fn cast<U: Scalar>(self) -> Vec3<U> {
        Vec3 { x: cast(self.x), y: cast(self.y), z: cast(self.z) }
    }
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
    pub fn max_abs_diff(self, o: Self) -> T {
        let d = self - o;
        d.x.abs().max(d.y.abs()).max(d.z.abs())
    }
}

macro_rules! vec_ops {
    ($ty:ident { $($f:ident),* }) => {
        impl<T: Scalar> Add for $ty<T> {
            type Output = Self;
            #[inline]
            fn add(self, o: Self) -> Self { $ty { $($f: self.$f + o.$f),* } }
        }
        impl<T: Scalar> Sub for $ty<T> {
            type Output = Self;
            #[inline]
            fn sub(self, o: Self) -> Self { $ty { $($f: self.$f - o.$f),* } }
        }
        impl<T: Scalar> Neg for $ty<T> {
            type Output = Self;
            #[inline]
            fn neg(self) -> Self { $ty { $($f: -self.$f),* } }
        }
        impl<T: Scalar> Mul<T> for $ty<T> {
            type Output = Self;
            #[inline]
            fn mul(self, s: T) -> Self { $ty { $($f: self.$f * s),* } }
        }
        impl<T: Scalar> Div<T> for $ty<T> {
            type Output = Self;
            #[inline]
            fn div(self, s: T) -> Self { $ty { $($f: self.$f / s),* } }
        }
        impl<T: Scalar> AddAssign for $ty<T> {
            #[inline]
            fn add_assign(&mut self, o: Self) { $(self.$f += o.$f;)* }
        }
        impl<T: Scalar> SubAssign for $ty<T> {
            #[inline]
            fn sub_assign(&mut self, o: Self) { $(self.$f -= o.$f;)* }
        }
    };
}
vec_ops!(Vec2 { x, y });
vec_ops!(Vec3 { x, y, z });

impl<T: Serialize> Serialize for Vec3<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [&self.x, &self.y, &self.z].serialize(s)
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Vec3<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [x, y, z] = <[T; 3]>::deserialize(d)?;
        Ok(Vec3 { x, y, z })
    }
}

impl<T: Serialize> Serialize for Vec2<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [&self.x, &self.y].serialize(s)
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Vec2<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [x, y] = <[T; 2]>::deserialize(d)?;
        Ok(Vec2 { x, y })
    }
}

/// Closest distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance<T: Scalar>(p: Vec3<T>, a: Vec3<T>, b: Vec3<T>) -> T {
    let ab = b - a;
    let len2 = ab.norm_sq();
    if len2 == T::zero() {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).max(T::zero()).min(T::one());
    p.dist(a + ab.scale(t))
}

/// Planar (xy) distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance_2d<T: Scalar>(p: Vec2<T>, a: Vec2<T>, b: Vec2<T>) -> T {
    let ab = b - a;
    let len2 = ab.norm_sq();
    if len2 == T::zero() {
        return (p - a).norm();
    }
    let t = ((p - a).dot(ab) / len2).max(T::zero()).min(T::one());
    (p - (a + ab.scale(t))).norm()
}

/// Ordered 3D polyline with at least two vertices and no repeated
/// consecutive vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline3<T> {
    points: Vec<Vec3<T>>,
}

impl<T: Scalar> Polyline3<T> {
    pub fn new(points: Vec<Vec3<T>>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid(format!("polyline needs at least 2 points, got {}", points.len())));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("polyline vertex {i} is not finite")));
        }
        if let Some(i) = points.windows(2).position(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("polyline vertices {i} and {} coincide", i + 1)));
        }
        Ok(Polyline3 { points })
    }

    /// Builds a polyline after dropping consecutive duplicates.
    pub fn from_points_dedup(points: Vec<Vec3<T>>) -> Result<Self> {
        let mut out: Vec<Vec3<T>> = Vec::with_capacity(points.len());
        for p in points {
            if out.last() != Some(&p) {
                out.push(p);
            }
        }
        Self::new(out)
    }

    pub fn points(&self) -> &[Vec3<T>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vec3<T>> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> Vec3<T> {
        self.points[0]
    }

    pub fn last(&self) -> Vec3<T> {
        self.points[self.points.len() - 1]
    }

    pub fn reversed(&self) -> Self {
        let mut points = self.points.clone();
        points.reverse();
        Polyline3 { points }
    }

    /// Cumulative 3D arc length at every vertex (first entry 0).
    pub fn cumulative_lengths(&self) -> Vec<T> {
        let mut acc = T::zero();
        let mut out = Vec::with_capacity(self.points.len());
        out.push(acc);
        for w in self.points.windows(2) {
            acc += w[0].dist(w[1]);
            out.push(acc);
        }
        out
    }

    pub fn length(&self) -> T {
        self.points.windows(2).fold(T::zero(), |acc, w| acc + w[0].dist(w[1]))
    }

    /// Point at arc length `s` (clamped to the polyline) using precomputed
    /// cumulative lengths.
    pub fn point_at_with(&self, cum: &[T], s: T) -> Vec3<T> {
        let total = cum[cum.len() - 1];
        if s <= T::zero() {
            return self.first();
        }
        if s >= total {
            return self.last();
        }
        // first vertex with cum > s
        let idx = cum.partition_point(|&c| c <= s).clamp(1, cum.len() - 1);
        let (s0, s1) = (cum[idx - 1], cum[idx]);
        let f = (s - s0) / (s1 - s0);
        self.points[idx - 1].lerp(self.points[idx], f)
    }

    pub fn point_at(&self, s: T) -> Vec3<T> {
        self.point_at_with(&self.cumulative_lengths(), s)
    }

    /// Unit xy tangent at arc length `s`.
    pub fn heading_at(&self, cum: &[T], s: T) -> Vec2<T> {
        let idx = cum.partition_point(|&c| c <= s).clamp(1, cum.len() - 1);
        let d = (self.points[idx] - self.points[idx - 1]).xy();
        let n = d.norm();
        if n == T::zero() {
            Vec2::new(T::one(), T::zero())
        } else {
            d / n
        }
    }

    /// Minimum 3D distance from `p` to the polyline.
    pub fn distance_to(&self, p: Vec3<T>) -> T {
        self.points
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(T::infinity(), T::min)
    }

    /// Minimum planar distance from `p` to the polyline's xy projection.
    pub fn distance_to_2d(&self, p: Vec2<T>) -> T {
        self.points
            .windows(2)
            .map(|w| point_segment_distance_2d(p, w[0].xy(), w[1].xy()))
            .fold(T::infinity(), T::min)
    }

    pub fn cast<U: Scalar>(&self) -> Polyline3<U> {
        Polyline3 { points: self.points.iter().map(|p| p.cast()).collect() }
    }
}

impl<T> Index<usize> for Polyline3<T> {
    type Output = Vec3<T>;
    fn index(&self, i: usize) -> &Vec3<T> {
        &self.points[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polyline_rejects_degenerate_input() {
        assert!(Polyline3::<f64>::new(vec![Vec3::zero()]).is_err());
        assert!(Polyline3::<f64>::new(vec![Vec3::zero(), Vec3::zero()]).is_err());
        assert!(Polyline3::new(vec![Vec3::zero(), Vec3::new(f64::NAN, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn arc_length_lookup() {
        let pl = Polyline3::new(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(3.0, 0.0, 0.0),
            Vec3::new(3.0, 4.0, 0.0),
        ])
        .unwrap();
        assert_eq!(pl.length(), 7.0);
        assert_eq!(pl.point_at(5.0), Vec3::new(3.0, 2.0, 0.0));
        assert_eq!(pl.point_at(-1.0), pl.first());
        assert_eq!(pl.point_at(9.0), pl.last());
    }

    #[test]
    fn segment_distance_clamps_to_endpoints() {
        let a = Vec3::new(0.0, 0.0, 0.0);
        let b = Vec3::new(1.0, 0.0, 0.0);
        assert_eq!(point_segment_distance(Vec3::new(0.5, 2.0, 0.0), a, b), 2.0);
        assert_eq!(point_segment_distance(Vec3::new(4.0, 4.0, 0.0), a, b), 5.0);
    }
}
