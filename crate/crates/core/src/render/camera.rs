use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::view::ViewPoint;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec3(pub [f32; 3]);

impl Vec3 {
    pub fn dot(self, o: Vec3) -> f32 {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        let (a, b) = (self.0, o.0);
        Vec3([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])
    }

    pub fn norm(self) -> f32 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Mul<f32> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f32) -> Vec3 {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

/// Orthonormal camera frame looking at the volume centre (the origin).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub eye: Vec3,
    pub forward: Vec3,
    pub up: Vec3,
    pub right: Vec3,
}

/// Within this many degrees of a pole the world up vector switches to +z.
const POLE_EPS_DEG: f32 = 1e-6;

/// Places the eye at `radius·(cosφ·sinθ, sinφ, cosφ·cosθ)`.
///
/// The up reference is world +y, or +z within 1e-6° of either pole.
pub fn camera_from_view(view: ViewPoint, radius: f32) -> Result<Camera> {
    if !(radius > 0.0) {
        return Err(Error::Config(format!("camera radius must be positive, got {radius}")));
    }
    let (theta, phi) = (view.theta().to_radians(), view.phi().to_radians());
    let eye = Vec3([phi.cos() * theta.sin(), phi.sin(), phi.cos() * theta.cos()]) * radius;
    let forward = (Vec3([0.0; 3]) - eye).normalized();
    let world_up = if 90.0 - view.phi().abs() <= POLE_EPS_DEG {
        Vec3([0.0, 0.0, 1.0])
    } else {
        Vec3([0.0, 1.0, 0.0])
    };
    let right = forward.cross(world_up).normalized();
    let up = right.cross(forward);
    Ok(Camera { eye, forward, up, right })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Vec3, b: [f32; 3]) -> bool {
        (0..3).all(|i| (a.0[i] - b[i]).abs() < 1e-6)
    }

    fn orthonormal(c: &Camera) -> bool {
        let unit = |v: Vec3| (v.norm() - 1.0).abs() < 1e-6;
        unit(c.forward)
            && unit(c.up)
            && unit(c.right)
            && c.forward.dot(c.up).abs() < 1e-6
            && c.forward.dot(c.right).abs() < 1e-6
            && c.up.dot(c.right).abs() < 1e-6
    }

    #[test]
    fn front_view() {
        let c = camera_from_view(ViewPoint::new(0.0, 0.0).unwrap(), 2.0).unwrap();
        assert!(close(c.eye, [0.0, 0.0, 2.0]));
        assert!(close(c.forward, [0.0, 0.0, -1.0]));
        assert!(close(c.right, [1.0, 0.0, 0.0]));
        assert!(close(c.up, [0.0, 1.0, 0.0]));
    }

    #[test]
    fn top_view_uses_pole_rule() {
        let c = camera_from_view(ViewPoint::new(0.0, 90.0).unwrap(), 1.0).unwrap();
        assert!(close(c.eye, [0.0, 1.0, 0.0]));
        assert!(close(c.forward, [0.0, -1.0, 0.0]));
        assert!(orthonormal(&c));
        // forward × (+z) = (-y) × z = -x
        assert!(close(c.right, [-1.0, 0.0, 0.0]));
    }

    #[test]
    fn side_view_on_x_axis() {
        // sin 90° = 1, cos 90° ≈ 0 → eye = (1, 0, 0)·r
        let c = camera_from_view(ViewPoint::new(90.0, 0.0).unwrap(), 3.0).unwrap();
        assert!(close(c.eye, [3.0, 0.0, 0.0]));
        assert!(orthonormal(&c));
    }

    #[test]
    fn rejects_bad_radius() {
        assert!(camera_from_view(ViewPoint::new(0.0, 0.0).unwrap(), 0.0).is_err());
        assert!(camera_from_view(ViewPoint::new(0.0, 0.0).unwrap(), f32::NAN).is_err());
    }

    #[test]
    fn frames_are_orthonormal_everywhere() {
        for t in (0..360).step_by(15) {
            for p in (-90..=90).step_by(15) {
                let c = camera_from_view(ViewPoint::new(t as f32, p as f32).unwrap(), 1.0).unwrap();
                assert!(orthonormal(&c), "theta {t} phi {p}");
            }
        }
    }
}
