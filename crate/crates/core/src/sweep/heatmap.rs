use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::colormap;
use crate::error::{Error, IoContext, Result};
use crate::image::write_png;

use super::{Channel, GridSpec, Method, Quantity, SweepRecord};

/// One quantity over the grid, `values[j·n_θ + i]` for cell `(i, j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub method: Method,
    pub quantity: Quantity,
    pub channel: Channel,
    pub grid: GridSpec,
    pub min: f32,
    pub max: f32,
    pub values: Vec<f32>,
}

/// Sidecar JSON next to each heatmap blob.
#[derive(Serialize, Deserialize)]
struct Sidecar {
    method: Method,
    quantity: Quantity,
    channel: Channel,
    grid: GridSpec,
    min: f32,
    max: f32,
    layout: String,
    colormap: String,
}

const LAYOUT: &str = "f32le, row-major, phi-major: value(i, j) at j*n_theta + i";

/// Collects one quantity from records stored in grid order.
pub fn heatmap_grid(
    records: &[SweepRecord],
    grid: GridSpec,
    method: Method,
    quantity: Quantity,
    channel: Channel,
) -> Result<Heatmap> {
    if records.len() != grid.len() {
        return Err(Error::Shape(format!("{} records for a {grid} grid", records.len())));
    }
    let values = records
        .iter()
        .map(|r| r.value(method, quantity, channel))
        .collect::<Result<Vec<_>>>()?;
    let min = values.iter().copied().fold(f32::INFINITY, f32::min);
    let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    Ok(Heatmap {
        method,
        quantity,
        channel,
        grid,
        min,
        max,
        values,
    })
}

impl Heatmap {
    pub fn stem(method: Method, quantity: Quantity, channel: Channel) -> String {
        format!("{method}_{quantity}_{channel}")
    }

    pub fn value(&self, i: usize, j: usize) -> Result<f32> {
        Ok(self.values[self.grid.index(i, j)?])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// Interleaved RGB8, `n_θ` wide and `n_φ` tall with elevation increasing
    /// upwards: image row `r` shows `j = n_φ − 1 − r`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let (nt, np) = (self.grid.n_theta(), self.grid.n_phi());
        let mut out = Vec::with_capacity(3 * nt * np);
        for r in 0..np {
            let j = np - 1 - r;
            for i in 0..nt {
                let v = self.values[j * nt + i];
                out.extend(colormap::viridis(colormap::normalize(v, self.min, self.max)));
            }
        }
        out
    }

    /// Writes `{stem}.bin`, `{stem}.png` and `{stem}.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).at(dir)?;
        let stem = Self::stem(self.method, self.quantity, self.channel);
        let bin = dir.join(format!("{stem}.bin"));
        std::fs::write(&bin, self.to_bytes()).at(&bin)?;
        write_png(
            &dir.join(format!("{stem}.png")),
            self.grid.n_theta(),
            self.grid.n_phi(),
            self.to_rgb8(),
        )?;
        let sidecar = Sidecar {
            method: self.method,
            quantity: self.quantity,
            channel: self.channel,
            grid: self.grid,
            min: self.min,
            max: self.max,
            layout: LAYOUT.into(),
            colormap: "viridis".into(),
        };
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, serde_json::to_vec_pretty(&sidecar)?).at(&json)
    }

    pub fn load(dir: &Path, method: Method, quantity: Quantity, channel: Channel) -> Result<Self> {
        let stem = Self::stem(method, quantity, channel);
        let json: PathBuf = dir.join(format!("{stem}.json"));
        let side: Sidecar = serde_json::from_slice(&std::fs::read(&json).at(&json)?)?;
        let bin = dir.join(format!("{stem}.bin"));
        let bytes = std::fs::read(&bin).at(&bin)?;
        if bytes.len() != 4 * side.grid.len() {
            return Err(Error::RawSize {
                path: bin,
                expected: 4 * side.grid.len() as u64,
                actual: bytes.len() as u64,
            });
        }
        Ok(Self {
            method: side.method,
            quantity: side.quantity,
            channel: side.channel,
            grid: side.grid,
            min: side.min,
            max: side.max,
            values: bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        })
    }
}

/// Every valid (method, quantity, channel) combination; sensitivity maps
/// exist for the combined channel only.
pub fn heatmap_keys() -> Vec<(Method, Quantity, Channel)> {
    let mut keys = Vec::new();
    for &m in Method::ALL {
        for &q in Quantity::ALL {
            for &c in Channel::ALL {
                let sens = matches!(q, Quantity::Sensitivity | Quantity::SensitivityStd);
                if !sens || c == Channel::Combined {
                    keys.push((m, q, c));
                }
            }
        }
    }
    keys
}

/// Writes every heatmap of a finished sweep into `dir`.
pub fn export_heatmaps(dir: &Path, records: &[SweepRecord], grid: GridSpec) -> Result<Vec<Heatmap>> {
    heatmap_keys()
        .into_iter()
        .map(|(m, q, c)| {
            let h = heatmap_grid(records, grid, m, q, c)?;
            h.save(dir)?;
            Ok(h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::RECORD_LEN;

    fn records(grid: GridSpec, f: impl Fn(usize) -> f32) -> Vec<SweepRecord> {
        (0..grid.len())
            .map(|k| SweepRecord::from_f32s(&[f(k); RECORD_LEN]).unwrap())
            .collect()
    }

    #[test]
    fn blob_round_trips_and_addresses_cells() {
        let grid = GridSpec::new(4, 3).unwrap();
        let recs = records(grid, |k| k as f32 * 0.5);
        let dir = tempfile::tempdir().unwrap();
        let maps = export_heatmaps(dir.path(), &recs, grid).unwrap();
        assert_eq!(maps.len(), 2 * (3 * 4 + 2));
        let h = Heatmap::load(dir.path(), Method::Ensemble, Quantity::ErrorStd, Channel::G).unwrap();
        assert_eq!(h, maps.iter().find(|m| m.method == Method::Ensemble && m.quantity == Quantity::ErrorStd && m.channel == Channel::G).unwrap().clone());
        assert_eq!(h.value(1, 2).unwrap(), recs[2 * 4 + 1].ens.error_std[1]);
        assert!(h.value(4, 0).is_err());
    }

    #[test]
    fn png_rows_follow_the_colormap_table() {
        let grid = GridSpec::new(3, 2).unwrap();
        let recs = records(grid, |k| k as f32);
        let h = heatmap_grid(&recs, grid, Method::Mc, Quantity::Uncertainty, Channel::R).unwrap();
        let rgb = h.to_rgb8();
        for j in 0..2 {
            for i in 0..3 {
                let r = 1 - j;
                let px = &rgb[3 * (r * 3 + i)..3 * (r * 3 + i) + 3];
                let t = (j * 3 + i) as f32 / 5.0;
                assert_eq!(px, colormap::VIRIDIS[(t * 255.0).round() as usize]);
            }
        }
    }

    #[test]
    fn constant_field_is_single_colour() {
        let grid = GridSpec::new(5, 4).unwrap();
        let recs = records(grid, |_| 0.7);
        let h = heatmap_grid(&recs, grid, Method::Mc, Quantity::Sensitivity, Channel::Combined).unwrap();
        let rgb = h.to_rgb8();
        assert!(rgb.chunks(3).all(|p| p == &rgb[..3]));
        assert!(heatmap_grid(&recs, grid, Method::Mc, Quantity::Sensitivity, Channel::B).is_err());
    }
}
