use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Camera direction: azimuth `theta` in degrees, normalized into `[0, 360)`,
/// and elevation `phi` in degrees within `[-90, 90]`.
///
/// Out-of-range elevations are rejected rather than clamped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawView", into = "RawView")]
pub struct ViewPoint {
    theta: f32,
    phi: f32,
}

#[derive(Serialize, Deserialize)]
struct RawView {
    theta: f32,
    phi: f32,
}

impl TryFrom<RawView> for ViewPoint {
    type Error = Error;

    fn try_from(raw: RawView) -> Result<Self> {
        ViewPoint::new(raw.theta, raw.phi)
    }
}

impl From<ViewPoint> for RawView {
    fn from(v: ViewPoint) -> Self {
        RawView { theta: v.theta, phi: v.phi }
    }
}

impl ViewPoint {
    pub fn new(theta: f32, phi: f32) -> Result<Self> {
        if !theta.is_finite() || !phi.is_finite() {
            return Err(Error::ViewDomain(format!("non-finite angles ({theta}, {phi})")));
        }
        if !(-90.0..=90.0).contains(&phi) {
            return Err(Error::ViewDomain(format!("elevation {phi} outside [-90, 90]")));
        }
        let mut theta = theta.rem_euclid(360.0);
        if theta >= 360.0 {
            theta = 0.0;
        }
        Ok(Self { theta, phi })
    }

    pub fn theta(&self) -> f32 {
        self.theta
    }

    pub fn phi(&self) -> f32 {
        self.phi
    }

    /// Network input: `(θ/180 − 1, φ/90)`, both in `[-1, 1]`.
    pub fn normalized(&self) -> [f32; 2] {
        [self.theta / 180.0 - 1.0, self.phi / 90.0]
    }
}

/// Network input for raw angles; fails for out-of-domain elevations.
pub fn normalize_view(theta: f32, phi: f32) -> Result<[f32; 2]> {
    Ok(ViewPoint::new(theta, phi)?.normalized())
}
