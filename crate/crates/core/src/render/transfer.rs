use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPoint {
    pub value: f32,
    pub rgba: [f32; 4],
}

/// Piecewise-linear map from normalized scalar value to colour and opacity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ControlPoint>", into = "Vec<ControlPoint>")]
pub struct TransferFunction {
    points: Vec<ControlPoint>,
}

impl TryFrom<Vec<ControlPoint>> for TransferFunction {
    type Error = Error;

    fn try_from(points: Vec<ControlPoint>) -> Result<Self> {
        TransferFunction::new(points)
    }
}

impl From<TransferFunction> for Vec<ControlPoint> {
    fn from(tf: TransferFunction) -> Self {
        tf.points
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TfPreset {
    /// Blue → green → orange → red with opacity rising towards high values.
    Warm,
    /// Greyscale ramp with linear opacity.
    Grey,
}

impl TfPreset {
    pub fn id(&self) -> &'static str {
        match self {
            TfPreset::Warm => "warm",
            TfPreset::Grey => "grey",
        }
    }
}

impl std::str::FromStr for TfPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "warm" => Ok(Self::Warm),
            "grey" | "gray" => Ok(Self::Grey),
            _ => Err(Error::Unknown {
                kind: "transfer function",
                name: s.to_string(),
            }),
        }
    }
}

impl TransferFunction {
    pub fn new(points: Vec<ControlPoint>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Config("transfer function needs at least 2 control points".into()));
        }
        if points.first().unwrap().value != 0.0 || points.last().unwrap().value != 1.0 {
            return Err(Error::Config("transfer function must span values 0 to 1".into()));
        }
        if points.windows(2).any(|w| w[1].value <= w[0].value) {
            return Err(Error::Config("control point values must be strictly increasing".into()));
        }
        if points
            .iter()
            .any(|p| p.rgba.iter().any(|c| !(0.0..=1.0).contains(c)))
        {
            return Err(Error::Config("control point colours must lie in [0, 1]".into()));
        }
        Ok(Self { points })
    }

    pub fn preset(preset: TfPreset) -> Self {
        let cp = |value, rgba| ControlPoint { value, rgba };
        let points = match preset {
            TfPreset::Warm => vec![
                cp(0.0, [0.0, 0.0, 0.0, 0.0]),
                cp(0.15, [0.1, 0.2, 0.8, 0.0]),
                cp(0.35, [0.2, 0.5, 0.9, 0.02]),
                cp(0.6, [0.2, 0.9, 0.3, 0.06]),
                cp(0.8, [1.0, 0.7, 0.1, 0.15]),
                cp(1.0, [1.0, 0.2, 0.1, 0.4]),
            ],
            TfPreset::Grey => vec![cp(0.0, [0.0, 0.0, 0.0, 0.0]), cp(1.0, [1.0, 1.0, 1.0, 0.2])],
        };
        Self::new(points).expect("presets are valid")
    }

    pub fn points(&self) -> &[ControlPoint] {
        &self.points
    }

    pub fn lookup(&self, t: f32) -> [f32; 4] {
        let t = t.clamp(0.0, 1.0);
        let idx = self.points.partition_point(|p| p.value <= t);
        if idx == 0 {
            return self.points[0].rgba;
        }
        if idx >= self.points.len() {
            return self.points[self.points.len() - 1].rgba;
        }
        let (a, b) = (self.points[idx - 1], self.points[idx]);
        let f = (t - a.value) / (b.value - a.value);
        let mut out = [0.0; 4];
        for c in 0..4 {
            out[c] = a.rgba[c] + (b.rgba[c] - a.rgba[c]) * f;
        }
        out
    }

    /// Copy with every opacity transformed by `f` (clamped to `[0, 1]`).
    pub fn map_opacity(&self, f: impl Fn(f32) -> f32) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| {
                let mut q = *p;
                q.rgba[3] = f(p.rgba[3]).clamp(0.0, 1.0);
                q
            })
            .collect();
        Self { points }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let cp = |value| ControlPoint { value, rgba: [0.0; 4] };
        assert!(TransferFunction::new(vec![cp(0.0)]).is_err());
        assert!(TransferFunction::new(vec![cp(0.0), cp(0.9)]).is_err());
        assert!(TransferFunction::new(vec![cp(0.0), cp(0.5), cp(0.5), cp(1.0)]).is_err());
        assert!(TransferFunction::new(vec![cp(0.0), cp(1.0)]).is_ok());
    }

    #[test]
    fn lookup_interpolates() {
        let tf = TransferFunction::preset(TfPreset::Grey);
        assert_eq!(tf.lookup(0.5), [0.5, 0.5, 0.5, 0.1]);
        assert_eq!(tf.lookup(1.0), [1.0, 1.0, 1.0, 0.2]);
        assert_eq!(tf.lookup(-2.0), [0.0; 4]);
    }
}
