use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use viewuq_autodiff::rng;

use crate::error::{Error, IoContext, Result};
use crate::image::{save_map_png, RgbImage};
use crate::model::SynthesisModel;
use crate::render::{render, ScalarVolume, TransferFunction};
use crate::uq::{compute_bundle, ensemble_passes, mc_passes, EnsembleSet, PredictionBundle, SampleSource, SampleStack, SensitivityResult};

use super::{export_heatmaps, GridSpec, MethodAggregates, SweepRecord, RECORD_FIELDS, RECORD_LEN};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.bin";
const CELLS_DIR: &str = "cells";
const HEATMAP_DIR: &str = "heatmaps";
const IMAGE_DIR_TEMPLATE: &str = "img/{i}_{j}";
const SCALES_FILE: &str = "scales.json";
const FORMAT: &str = "viewuq-sweep-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub grid: GridSpec,
    /// MC-Dropout passes per view; also the sensitivity reps.
    pub m: usize,
    pub seed: u64,
    pub dataset_id: String,
    pub volume_id: String,
    pub tf_id: String,
    #[serde(default = "yes")]
    pub write_images: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McMethodConfig {
    pub m: usize,
    pub eta: f32,
    /// Cell `k` uses pass seeds `mix(mix(seed, k), p)`.
    pub seed: u64,
    pub model_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMethodConfig {
    pub k: usize,
    pub member_seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub format: String,
    pub complete: bool,
    pub grid: GridSpec,
    pub dataset_id: String,
    pub volume_id: String,
    pub tf_id: String,
    pub resolution: usize,
    pub mc: McMethodConfig,
    pub ensemble: EnsembleMethodConfig,
    pub records_file: String,
    pub record_count: usize,
    /// Record `k` (cell `(k mod n_θ, k div n_θ)`) starts at byte `k·record_bytes`.
    pub record_bytes: usize,
    pub record_layout: Vec<String>,
    pub heatmap_dir: String,
    /// Empty when images were not written.
    pub image_dir_template: String,
    pub images: Vec<String>,
}

impl SweepManifest {
    pub fn image_dir(&self, i: usize, j: usize) -> String {
        self.image_dir_template
            .replace("{i}", &i.to_string())
            .replace("{j}", &j.to_string())
    }
}

/// Image stems written per cell, each as `{name}.png`.
pub fn image_names() -> Vec<String> {
    let mut names: Vec<String> = ["gt", "mc_mean", "ens_mean"].iter().map(|s| s.to_string()).collect();
    for method in ["mc", "ens"] {
        for q in ["unc", "err", "errstd"] {
            names.push(format!("{method}_{q}"));
            for c in ["r", "g", "b"] {
                names.push(format!("{method}_{q}_{c}"));
            }
        }
    }
    names
}

/// Writes via a sibling temporary file so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).at(&tmp)?;
    std::fs::rename(&tmp, path).at(path)
}

fn write_manifest(dir: &Path, manifest: &SweepManifest) -> Result<()> {
    write_atomic(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(manifest)?)
}

fn read_manifest(dir: &Path) -> Result<Option<SweepManifest>> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let m: SweepManifest = serde_json::from_slice(&std::fs::read(&path).at(&path)?)?;
    if m.format != FORMAT {
        return Err(Error::Config(format!("{}: unsupported sweep format `{}`", path.display(), m.format)));
    }
    Ok(Some(m))
}

fn planned_manifest(mc_model: &SynthesisModel, ensemble: &EnsembleSet, cfg: &SweepConfig) -> SweepManifest {
    SweepManifest {
        format: FORMAT.into(),
        complete: false,
        grid: cfg.grid,
        dataset_id: cfg.dataset_id.clone(),
        volume_id: cfg.volume_id.clone(),
        tf_id: cfg.tf_id.clone(),
        resolution: mc_model.config().image_resolution,
        mc: McMethodConfig {
            m: cfg.m,
            eta: mc_model.config().dropout_p,
            seed: cfg.seed,
            model_seed: mc_model.config().seed,
        },
        ensemble: EnsembleMethodConfig {
            k: ensemble.len(),
            member_seeds: ensemble.members().iter().map(|m| m.config().seed).collect(),
        },
        records_file: RECORDS_FILE.into(),
        record_count: cfg.grid.len(),
        record_bytes: 4 * RECORD_LEN,
        record_layout: RECORD_FIELDS.iter().map(|s| s.to_string()).collect(),
        heatmap_dir: HEATMAP_DIR.into(),
        image_dir_template: if cfg.write_images { IMAGE_DIR_TEMPLATE.into() } else { String::new() },
        images: if cfg.write_images { image_names() } else { Vec::new() },
    }
}

#[derive(Serialize)]
struct Scale {
    min: f32,
    max: f32,
}

fn max_of(map: &[f32]) -> f32 {
    map.iter().copied().fold(0.0, f32::max)
}

/// Map images of one cell. Both methods share one `[0, max]` scale per
/// quantity and channel so their colours compare directly.
fn write_cell_images(dir: &Path, gt: &RgbImage, mc: &PredictionBundle, ens: &PredictionBundle) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)?;
    let (h, w) = (gt.height(), gt.width());
    gt.save_png(&dir.join("gt.png"))?;
    mc.mean_image.save_png(&dir.join("mc_mean.png"))?;
    ens.mean_image.save_png(&dir.join("ens_mean.png"))?;
    type Pick = fn(&PredictionBundle) -> (&Vec<f32>, &[Vec<f32>; 3]);
    let quantities: [(&str, Pick); 3] = [
        ("unc", |b| (&b.combined_uncertainty, &b.channel_uncertainty)),
        ("err", |b| (&b.combined_error, &b.channel_error)),
        ("errstd", |b| (&b.combined_error_std, &b.channel_error_std)),
    ];
    let mut scales = BTreeMap::new();
    for (q, pick) in quantities {
        let (mc_all, mc_ch) = pick(mc);
        let (ens_all, ens_ch) = pick(ens);
        let suffixed = [("", mc_all, ens_all), ("_r", &mc_ch[0], &ens_ch[0]), ("_g", &mc_ch[1], &ens_ch[1]), ("_b", &mc_ch[2], &ens_ch[2])];
        for (suffix, a, b) in suffixed {
            let max = max_of(a).max(max_of(b));
            for (method, map) in [("mc", a), ("ens", b)] {
                let name = format!("{method}_{q}{suffix}");
                save_map_png(&dir.join(format!("{name}.png")), map, h, w, 0.0, max)?;
                scales.insert(name, Scale { min: 0.0, max });
            }
        }
    }
    let path = dir.join(SCALES_FILE);
    std::fs::write(&path, serde_json::to_vec_pretty(&scales)?).at(&path)
}

fn evaluate_cell(
    idx: usize,
    mc_model: &mut SynthesisModel,
    ensemble: &mut EnsembleSet,
    volume: &ScalarVolume,
    tf: &TransferFunction,
    cfg: &SweepConfig,
    image_dir: Option<PathBuf>,
) -> Result<SweepRecord> {
    let (i, j) = cfg.grid.cell(idx);
    let view = cfg.grid.view(i, j);
    let gt = render(volume, tf, view, mc_model.config().image_resolution)?;
    let seed = rng::mix(cfg.seed, idx as u64);
    let eta = mc_model.config().dropout_p;

    let (mc_images, mc_sens) = mc_passes(mc_model, view, cfg.m, seed, true)?;
    let mc_stack = SampleStack::new(mc_images, SampleSource::McDropout { m: cfg.m, eta, seed })?;
    let mc_bundle = compute_bundle(&mc_stack, &gt)?;

    let (ens_images, ens_sens) = ensemble_passes(ensemble, view, true)?;
    let members = (0..ensemble.len()).collect();
    let ens_bundle = compute_bundle(&SampleStack::new(ens_images, SampleSource::Ensemble { members })?, &gt)?;

    if let Some(dir) = image_dir {
        write_cell_images(&dir, &gt, &mc_bundle, &ens_bundle)?;
    }
    Ok(SweepRecord::new(
        view,
        MethodAggregates::from_bundle(&mc_bundle, &SensitivityResult::from_reps(&mc_sens)?),
        MethodAggregates::from_bundle(&ens_bundle, &SensitivityResult::from_reps(&ens_sens)?),
    ))
}

/// Evaluates both methods on every grid cell and writes the sweep layout
/// into `dir`.
///
/// Finished cells are kept across interruptions, so a rerun resumes and
/// produces the same bytes as an uninterrupted run. A complete sweep with
/// the same configuration is returned untouched; a different
/// configuration is an error.
pub fn sweep(
    dir: &Path,
    mc_model: &mut SynthesisModel,
    ensemble: &mut EnsembleSet,
    volume: &ScalarVolume,
    tf: &TransferFunction,
    cfg: &SweepConfig,
) -> Result<SweepManifest> {
    if cfg.m < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: cfg.m });
    }
    if mc_model.config().dropout_p == 0.0 {
        return Err(Error::ZeroDropout);
    }
    if ensemble.image_resolution() != mc_model.config().image_resolution {
        return Err(Error::Config("MC model and ensemble render different resolutions".into()));
    }
    let mut manifest = planned_manifest(mc_model, ensemble, cfg);
    if let Some(existing) = read_manifest(dir)? {
        let done = existing.complete;
        let unmarked = SweepManifest {
            complete: false,
            ..existing
        };
        if unmarked != manifest {
            return Err(Error::Sweep(format!(
                "{} holds a sweep with a different configuration",
                dir.display()
            )));
        }
        if done {
            manifest.complete = true;
            return Ok(manifest);
        }
    }
    let cells = dir.join(CELLS_DIR);
    std::fs::create_dir_all(&cells).at(&cells)?;
    write_manifest(dir, &manifest)?;

    let mut records = Vec::with_capacity(cfg.grid.len());
    for idx in 0..cfg.grid.len() {
        let cell_path = cells.join(format!("{idx:06}.bin"));
        if cell_path.exists() {
            records.push(SweepRecord::from_bytes(&std::fs::read(&cell_path).at(&cell_path)?)?);
            continue;
        }
        let image_dir = cfg.write_images.then(|| {
            let (i, j) = cfg.grid.cell(idx);
            dir.join(manifest.image_dir(i, j))
        });
        let record = evaluate_cell(idx, mc_model, ensemble, volume, tf, cfg, image_dir)?;
        write_atomic(&cell_path, &record.to_bytes())?;
        records.push(record);
    }

    let blob: Vec<u8> = records.iter().flat_map(|r| r.to_bytes()).collect();
    write_atomic(&dir.join(RECORDS_FILE), &blob)?;
    export_heatmaps(&dir.join(HEATMAP_DIR), &records, cfg.grid)?;
    manifest.complete = true;
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

/// Read-only view of a complete sweep directory.
#[derive(Clone, Debug)]
pub struct SweepData {
    dir: PathBuf,
    manifest: SweepManifest,
    records: Vec<SweepRecord>,
}

impl SweepData {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir)?.ok_or_else(|| Error::Io {
            path: dir.join(MANIFEST_FILE),
            source: std::io::ErrorKind::NotFound.into(),
        })?;
        if !manifest.complete {
            return Err(Error::IncompleteSweep(dir.to_path_buf()));
        }
        let path = dir.join(&manifest.records_file);
        let bytes = std::fs::read(&path).at(&path)?;
        let expected = manifest.record_count * manifest.record_bytes;
        if bytes.len() != expected || manifest.record_bytes != 4 * RECORD_LEN || manifest.record_count != manifest.grid.len() {
            return Err(Error::RawSize {
                path,
                expected: expected as u64,
                actual: bytes.len() as u64,
            });
        }
        let records = bytes
            .chunks_exact(4 * RECORD_LEN)
            .map(SweepRecord::from_bytes)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            records,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &SweepManifest {
        &self.manifest
    }

    pub fn grid(&self) -> GridSpec {
        self.manifest.grid
    }

    /// Records in grid order.
    pub fn records(&self) -> &[SweepRecord] {
        &self.records
    }

    pub fn record(&self, i: usize, j: usize) -> Result<&SweepRecord> {
        Ok(&self.records[self.grid().index(i, j)?])
    }

    /// Paths of the cell's images relative to the sweep directory, in
    /// manifest order.
    pub fn image_paths(&self, i: usize, j: usize) -> Result<Vec<(String, String)>> {
        self.grid().index(i, j)?;
        let base = self.manifest.image_dir(i, j);
        Ok(self
            .manifest
            .images
            .iter()
            .map(|name| (name.clone(), format!("{base}/{name}.png")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_name_list() {
        let names = image_names();
        assert_eq!(names.len(), 27);
        for n in ["gt", "mc_mean", "ens_mean", "mc_unc", "ens_unc", "mc_err", "ens_err", "mc_errstd", "ens_errstd", "ens_errstd_b"] {
            assert!(names.iter().any(|x| x == n), "{n}");
        }
    }

    #[test]
    fn open_rejects_missing_and_incomplete() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(SweepData::open(dir.path()), Err(Error::Io { .. })));
    }
}
