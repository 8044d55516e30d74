//! Planar pose and velocity types shared by every module.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Pose in the plane. `theta` is kept in `(-pi, pi]` by every constructor and
/// update in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn distance_to(&self, other: &Pose2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Expresses a world point in this pose's body frame.
    pub fn to_local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let dx = x - self.x;
        let dy = y - self.y;
        (c * dx + s * dy, -s * dx + c * dy)
    }

    /// Maps a body-frame point into the frame this pose lives in.
    pub fn to_world(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (self.x + c * x - s * y, self.y + s * x + c * y)
    }

    /// `self ⊕ other`: applies `other` (expressed in this frame) on top of `self`.
    pub fn compose(&self, other: &Pose2D) -> Pose2D {
        let (x, y) = self.to_world(other.x, other.y);
        Pose2D::new(x, y, self.theta + other.theta)
    }

    pub fn inverse(&self) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        Pose2D::new(
            -c * self.x - s * self.y,
            s * self.x - c * self.y,
            -self.theta,
        )
    }
}

/// Planar velocity command. Differential-drive commands always carry `vy == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist2D {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl Twist2D {
    pub const ZERO: Twist2D = Twist2D {
        vx: 0.0,
        vy: 0.0,
        omega: 0.0,
    };

    pub fn new(vx: f64, omega: f64) -> Self {
        Self { vx, vy: 0.0, omega }
    }

    pub fn is_zero(&self) -> bool {
        self.vx == 0.0 && self.vy == 0.0 && self.omega == 0.0
    }
}

/// Euclidean distance between the positions of two poses.
pub fn distance_to_goal(pose: &Pose2D, goal: &Pose2D) -> f64 {
    pose.distance_to(goal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn goal_distance_examples() {
        let o = Pose2D::default();
        assert_eq!(distance_to_goal(&o, &Pose2D::new(3.0, 4.0, 0.0)), 5.0);
        assert_eq!(distance_to_goal(&o, &o), 0.0);
        assert_eq!(
            distance_to_goal(&Pose2D::new(1.0, 1.0, 0.0), &Pose2D::new(4.0, 5.0, 0.0)),
            5.0
        );
    }

    #[test]
    fn normalize_keeps_pi_and_maps_minus_pi() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-15);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn normalized_range(theta in -1e4f64..1e4) {
            let a = normalize_angle(theta);
            prop_assert!(a > -PI && a <= PI);
            prop_assert!(((a - theta) / (2.0 * PI)).fract().abs() < 1e-6
                || (1.0 - ((a - theta) / (2.0 * PI)).fract().abs()) < 1e-6);
        }

        #[test]
        fn compose_inverse_is_identity(x in -10.0f64..10.0, y in -10.0f64..10.0, t in -3.0f64..3.0) {
            let p = Pose2D::new(x, y, t);
            let id = p.compose(&p.inverse());
            prop_assert!(id.x.abs() < 1e-9 && id.y.abs() < 1e-9 && id.theta.abs() < 1e-9);
        }
    }
}
