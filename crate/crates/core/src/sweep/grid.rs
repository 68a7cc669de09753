use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::view::ViewPoint;

/// Cell-centred grid over view space: `θ_i = (i + ½)·360/n_θ`,
/// `φ_j = −90 + (j + ½)·180/n_φ`. Flat index `j·n_θ + i` (φ-major rows).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct GridSpec {
    n_theta: usize,
    n_phi: usize,
}

#[derive(Serialize, Deserialize)]
struct RawGrid {
    n_theta: usize,
    n_phi: usize,
}

impl TryFrom<RawGrid> for GridSpec {
    type Error = Error;
    fn try_from(r: RawGrid) -> Result<Self> {
        GridSpec::new(r.n_theta, r.n_phi)
    }
}

impl From<GridSpec> for RawGrid {
    fn from(g: GridSpec) -> Self {
        RawGrid {
            n_theta: g.n_theta,
            n_phi: g.n_phi,
        }
    }
}

impl GridSpec {
    pub fn new(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta == 0 || n_phi == 0 {
            return Err(Error::Config(format!("grid {n_theta}x{n_phi} must be at least 1x1")));
        }
        Ok(Self { n_theta, n_phi })
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    pub fn len(&self) -> usize {
        self.n_theta * self.n_phi
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn theta(&self, i: usize) -> f32 {
        ((i as f64 + 0.5) * 360.0 / self.n_theta as f64) as f32
    }

    pub fn phi(&self, j: usize) -> f32 {
        (-90.0 + (j as f64 + 0.5) * 180.0 / self.n_phi as f64) as f32
    }

    pub fn view(&self, i: usize, j: usize) -> ViewPoint {
        ViewPoint::new(self.theta(i), self.phi(j)).expect("cell centres lie in the view domain")
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i < self.n_theta && j < self.n_phi
    }

    pub fn index(&self, i: usize, j: usize) -> Result<usize> {
        if !self.contains(i, j) {
            return Err(Error::Unknown {
                kind: "cell",
                name: format!("({i}, {j})"),
            });
        }
        Ok(j * self.n_theta + i)
    }

    pub fn cell(&self, idx: usize) -> (usize, usize) {
        (idx % self.n_theta, idx / self.n_theta)
    }
}

impl std::str::FromStr for GridSpec {
    type Err = Error;

    /// `"36x18"` → 36 azimuth by 18 elevation cells.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("grid `{s}` is not of the form <n_theta>x<n_phi>"));
        let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        GridSpec::new(a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?)
    }
}

impl std::fmt::Display for GridSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.n_theta, self.n_phi)
    }
}
