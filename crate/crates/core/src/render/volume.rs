use std::f32::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use viewuq_autodiff::rng;

use crate::error::{Error, IoContext, Result};

/// Scalar field on a regular grid, x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarVolume {
    dims: [usize; 3],
    data: Vec<f32>,
    value_range: (f32, f32),
}

impl ScalarVolume {
    pub fn new(dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() || n == 0 {
            return Err(Error::Shape(format!(
                "volume {dims:?} needs {n} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("volume contains non-finite values".into()));
        }
        let (lo, hi) = data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Ok(Self {
            dims,
            data,
            value_range: (lo, hi),
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn value_range(&self) -> (f32, f32) {
        self.value_range
    }

    pub fn at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[(z * self.dims[1] + y) * self.dims[0] + x]
    }

    /// Trilinear sample at continuous voxel coordinates, clamped to the grid.
    pub fn sample(&self, p: [f32; 3]) -> f32 {
        let mut i0 = [0usize; 3];
        let mut f = [0f32; 3];
        for a in 0..3 {
            let max = (self.dims[a] - 1) as f32;
            let c = p[a].clamp(0.0, max);
            let fl = c.floor().min((self.dims[a].saturating_sub(2)) as f32);
            i0[a] = fl as usize;
            f[a] = c - fl;
        }
        let step = |a: usize| usize::from(self.dims[a] > 1);
        let (x0, y0, z0) = (i0[0], i0[1], i0[2]);
        let (x1, y1, z1) = (x0 + step(0), y0 + step(1), z0 + step(2));
        let lerp = |a: f32, b: f32, t: f32| a + (b - a) * t;
        let c00 = lerp(self.at(x0, y0, z0), self.at(x1, y0, z0), f[0]);
        let c10 = lerp(self.at(x0, y1, z0), self.at(x1, y1, z0), f[0]);
        let c01 = lerp(self.at(x0, y0, z1), self.at(x1, y0, z1), f[0]);
        let c11 = lerp(self.at(x0, y1, z1), self.at(x1, y1, z1), f[0]);
        lerp(lerp(c00, c10, f[1]), lerp(c01, c11, f[1]), f[2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VolumeKind {
    Blobs,
    Shell,
    TurbulenceLike,
}

impl VolumeKind {
    pub fn id(&self) -> &'static str {
        match self {
            VolumeKind::Blobs => "blobs",
            VolumeKind::Shell => "shell",
            VolumeKind::TurbulenceLike => "turbulence-like",
        }
    }
}

impl std::str::FromStr for VolumeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(Self::Blobs),
            "shell" => Ok(Self::Shell),
            "turbulence-like" | "turbulence" => Ok(Self::TurbulenceLike),
            _ => Err(Error::Unknown {
                kind: "volume kind",
                name: s.to_string(),
            }),
        }
    }
}

/// Isotropic Gaussian in normalized grid coordinates `[-1, 1]³`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian {
    pub center: [f32; 3],
    pub sigma: f32,
    pub amplitude: f32,
}

/// Normalized coordinate of voxel `i` along an axis with `n` voxels.
fn unit_coord(i: usize, n: usize) -> f32 {
    2.0 * i as f32 / (n - 1) as f32 - 1.0
}

fn tabulate(dims: [usize; 3], f: impl Fn([f32; 3]) -> f32) -> Result<ScalarVolume> {
    let mut data = Vec::with_capacity(dims.iter().product());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                data.push(f([unit_coord(x, dims[0]), unit_coord(y, dims[1]), unit_coord(z, dims[2])]));
            }
        }
    }
    ScalarVolume::new(dims, data)
}

/// `f(u) = Σ a·exp(−‖u − c‖² / (2σ²))`.
pub fn blobs_volume(dims: [usize; 3], blobs: &[Gaussian]) -> Result<ScalarVolume> {
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::Config(format!("volume dims {dims:?} must be at least 2")));
    }
    tabulate(dims, |u| {
        blobs
            .iter()
            .map(|g| {
                let d2: f32 = (0..3).map(|a| (u[a] - g.center[a]).powi(2)).sum();
                g.amplitude * (-d2 / (2.0 * g.sigma * g.sigma)).exp()
            })
            .sum()
    })
}

const SHELL_RADIUS: f32 = 0.6;
const SHELL_WIDTH: f32 = 0.08;

/// Synthetic stand-in volumes on normalized coordinates `u ∈ [-1, 1]³`:
///
/// * `blobs`: six Gaussians, centres `U[-0.6, 0.6]³`, σ `U[0.12, 0.3]`,
///   amplitude `U[0.5, 1]`.
/// * `shell`: `exp(−(‖u‖ − 0.6)² / (2·0.08²))`.
/// * `turbulence-like`: 24 plane waves `Σ f^{-5/6} sin(2π f d·u + ψ)` with
///   random unit directions `d`, frequencies `f ∈ [1, 4]` and phases `ψ`.
///
/// All draws come from a ChaCha8 stream keyed by `seed`.
pub fn builtin_volume(kind: VolumeKind, dims: [usize; 3], seed: u64) -> Result<ScalarVolume> {
    if dims.iter().any(|&d| d < 8) {
        return Err(Error::Config(format!("builtin volumes need dims >= 8, got {dims:?}")));
    }
    let mut rng = rng::stream(seed);
    match kind {
        VolumeKind::Blobs => {
            let blobs: Vec<Gaussian> = (0..6)
                .map(|_| Gaussian {
                    center: [
                        rng.random_range(-0.6..0.6),
                        rng.random_range(-0.6..0.6),
                        rng.random_range(-0.6..0.6),
                    ],
                    sigma: rng.random_range(0.12..0.3),
                    amplitude: rng.random_range(0.5..1.0),
                })
                .collect();
            blobs_volume(dims, &blobs)
        }
        VolumeKind::Shell => tabulate(dims, |u| {
            let r = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
            (-(r - SHELL_RADIUS).powi(2) / (2.0 * SHELL_WIDTH * SHELL_WIDTH)).exp()
        }),
        VolumeKind::TurbulenceLike => {
            let waves: Vec<([f32; 3], f32, f32)> = (0..24)
                .map(|_| {
                    let z: f32 = rng.random_range(-1.0..1.0);
                    let az: f32 = rng.random_range(0.0..2.0 * PI);
                    let r = (1.0 - z * z).sqrt();
                    let dir = [r * az.cos(), r * az.sin(), z];
                    let f: f32 = rng.random_range(1.0..4.0);
                    let psi: f32 = rng.random_range(0.0..2.0 * PI);
                    (dir, f, psi)
                })
                .collect();
            tabulate(dims, |u| {
                waves
                    .iter()
                    .map(|(d, f, psi)| {
                        let proj = d[0] * u[0] + d[1] * u[1] + d[2] * u[2];
                        f.powf(-5.0 / 6.0) * (2.0 * PI * f * proj + psi).sin()
                    })
                    .sum()
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawDtype {
    F32,
    U8,
}

impl RawDtype {
    pub fn size(&self) -> usize {
        match self {
            RawDtype::F32 => 4,
            RawDtype::U8 => 1,
        }
    }
}

/// Reads a headerless little-endian volume; `u8` data is rescaled to `[0, 1]`.
pub fn load_raw_volume(path: &Path, dims: [usize; 3], dtype: RawDtype) -> Result<ScalarVolume> {
    let bytes = std::fs::read(path).at(path)?;
    let expected = dims.iter().product::<usize>() * dtype.size();
    if bytes.len() != expected {
        return Err(Error::RawSize {
            path: path.to_path_buf(),
            expected: expected as u64,
            actual: bytes.len() as u64,
        });
    }
    let data = match dtype {
        RawDtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        RawDtype::U8 => bytes.iter().map(|&b| b as f32 / 255.0).collect(),
    };
    ScalarVolume::new(dims, data)
}
