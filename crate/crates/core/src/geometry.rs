//! Planar vectors and poses. Lengths are centimeters, angles radians.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Checked constructor; rejects NaN and infinite components.
    pub fn try_new(x: f64, y: f64) -> Result<Self> {
        if x.is_finite() && y.is_finite() {
            Ok(Self { x, y })
        } else {
            Err(Error::InvalidInput(format!("non-finite vector ({x}, {y})")))
        }
    }

    // Trig goes through libm: optimized builds fuse a sin/cos pair into the
    // platform sincos, which can round differently and break reproducibility.
    pub fn from_angle(angle: f64) -> Self {
        Self::new(libm::cos(angle), libm::sin(angle))
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3-D cross product.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Unit vector, or `None` for the zero vector.
    pub fn normalized(self) -> Option<Vec2> {
        let n = self.norm();
        (n > 0.0).then(|| self * (1.0 / n))
    }

    pub fn angle(self) -> f64 {
        libm::atan2(self.y, self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Position plus heading; the heading is kept in `[-π, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec2,
    pub heading: f64,
}

impl Pose {
    pub fn new(position: Vec2, heading: f64) -> Self {
        Self {
            position,
            heading: wrap_angle(heading),
        }
    }

    pub fn direction(&self) -> Vec2 {
        Vec2::from_angle(self.heading)
    }
}

/// Maps any angle onto `[-π, π)`.
pub fn wrap_angle(angle: f64) -> f64 {
    let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if wrapped >= PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Counterclockwise rotation of `v` by `angle`.
pub fn rotate(v: Vec2, angle: f64) -> Vec2 {
    let (s, c) = (libm::sin(angle), libm::cos(angle));
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// Clips `x` to `[lo, hi]` and rescales the result onto `[0, 1]`.
pub fn clip_normalize(x: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::InvalidParameter(format!(
            "clip bounds must satisfy lo < hi, got [{lo}, {hi}]"
        )));
    }
    Ok((x.clamp(lo, hi) - lo) / (hi - lo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn clip_normalize_examples() {
        assert_abs_diff_eq!(clip_normalize(6.25, 2.5, 10.0).unwrap(), 0.5);
        assert_eq!(clip_normalize(1.0, 2.5, 10.0).unwrap(), 0.0);
        assert_eq!(clip_normalize(50.0, 2.5, 10.0).unwrap(), 1.0);
    }

    #[test]
    fn clip_normalize_rejects_inverted_bounds() {
        assert!(matches!(
            clip_normalize(1.0, 10.0, 2.5),
            Err(Error::InvalidParameter(_))
        ));
        assert!(clip_normalize(1.0, 3.0, 3.0).is_err());
    }

    #[test]
    fn rotate_examples() {
        let q = rotate(Vec2::new(1.0, 0.0), PI / 2.0);
        assert_abs_diff_eq!(q.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.y, 1.0, epsilon = 1e-12);
        assert_eq!(rotate(Vec2::new(3.0, 4.0), 0.0), Vec2::new(3.0, 4.0));
        let h = rotate(Vec2::new(1.0, 0.0), PI);
        assert_abs_diff_eq!(h.x, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h.y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), -PI);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-1e-18), -1e-18);
    }

    #[test]
    fn try_new_rejects_nan() {
        assert!(Vec2::try_new(f64::NAN, 0.0).is_err());
        assert!(Vec2::try_new(0.0, f64::INFINITY).is_err());
        assert!(Vec2::try_new(1.0, 2.0).is_ok());
    }

    proptest! {
        #[test]
        fn rotate_round_trip(x in -100.0..100.0f64, y in -100.0..100.0f64, a in -10.0..10.0f64) {
            let v = Vec2::new(x, y);
            let back = rotate(rotate(v, a), -a);
            prop_assert!((back - v).norm() < 1e-9);
            prop_assert!((rotate(v, a).norm() - v.norm()).abs() < 1e-9);
        }

        #[test]
        fn clip_normalize_monotone(a in -20.0..20.0f64, b in -20.0..20.0f64) {
            let (lo, hi) = (a.min(b), a.max(b));
            let fa = clip_normalize(lo, 2.5, 10.0).unwrap();
            let fb = clip_normalize(hi, 2.5, 10.0).unwrap();
            prop_assert!(fa <= fb);
            // already-normalized values pass through the identity bounds unchanged
            prop_assert_eq!(clip_normalize(fb, 0.0, 1.0).unwrap(), fb);
        }

        #[test]
        fn wrapped_heading_in_range(a in -1e4..1e4f64) {
            let w = wrap_angle(a);
            prop_assert!((-PI..PI).contains(&w));
        }
    }
}
