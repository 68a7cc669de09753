//! Small end-to-end checks: sampling, ensembles, sweeps and studies on
//! 16×16 models.

use viewuq_core::model::{train, Dropout, ModelConfig, SynthesisModel, TrainConfig};
use viewuq_core::render::{builtin_volume, generate_dataset, Dataset, ScalarVolume, TfPreset, TransferFunction, VolumeKind};
use viewuq_core::stats::pixel_mean;
use viewuq_core::study::{ensemble_size_study, mc_samples_study};
use viewuq_core::sweep::{sweep, GridSpec, Method, SweepConfig, SweepData, MANIFEST_FILE, RECORDS_FILE};
use viewuq_core::uq::{compute_bundle, ensemble_sample, ensemble_sensitivity, mc_sample, sensitivity, EnsembleSet};
use viewuq_core::ViewPoint;

fn tiny(seed: u64) -> ModelConfig {
    ModelConfig {
        image_resolution: 16,
        n_res_blocks: 2,
        fc_widths: vec![8, 16],
        base_channels: 8,
        min_channels: 4,
        dropout_p: 0.2,
        seed,
    }
}

fn scene() -> (ScalarVolume, TransferFunction) {
    (builtin_volume(VolumeKind::Blobs, [16; 3], 1).unwrap(), TransferFunction::preset(TfPreset::Warm))
}

fn data() -> Dataset {
    let (v, tf) = scene();
    generate_dataset(&v, &tf, 16, 16, 2).unwrap()
}

fn trained(seed: u64) -> SynthesisModel {
    let mut m = SynthesisModel::build(tiny(seed)).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        seed,
        ..TrainConfig::default()
    };
    train(&mut m, &data(), &cfg).unwrap();
    m
}

fn ensemble(seeds: &[u64]) -> EnsembleSet {
    EnsembleSet::new(seeds.iter().map(|&s| trained(s)).collect()).unwrap()
}

fn sweep_cfg(grid: GridSpec) -> SweepConfig {
    SweepConfig {
        grid,
        m: 4,
        seed: 11,
        dataset_id: "tiny".into(),
        volume_id: "blobs".into(),
        tf_id: "warm".into(),
        write_images: false,
    }
}

#[test]
fn mc_sampling_is_reproducible_and_stochastic() {
    let mut model = trained(1);
    let view = ViewPoint::new(40.0, 10.0).unwrap();
    let a = mc_sample(&mut model, view, 5, 3).unwrap();
    let b = mc_sample(&mut model, view, 5, 3).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.samples()[0], a.samples()[1]);
}

#[test]
fn identical_members_carry_no_uncertainty() {
    let member = trained(2);
    let mut ens = EnsembleSet::new(vec![member.clone(); 4]).unwrap();
    let view = ViewPoint::new(200.0, -30.0).unwrap();
    let (volume, tf) = scene();
    let gt = viewuq_core::render::render(&volume, &tf, view, 16).unwrap();
    let stack = ensemble_sample(&mut ens, view).unwrap();
    let b = compute_bundle(&stack, &gt).unwrap();
    let pred = member.clone().predict(view, Dropout::Off).unwrap();
    assert!(b.combined_uncertainty.iter().all(|&u| u == 0.0));
    assert!(b.combined_error_std.iter().all(|&u| u == 0.0));
    for c in 0..3 {
        for p in 0..256 {
            let want = (pred.data()[c * 256 + p] - gt.data()[c * 256 + p]).abs();
            assert_eq!(b.channel_error[c][p], want);
        }
    }
}

#[test]
fn ensemble_mean_is_the_member_average() {
    let mut ens = ensemble(&[3, 4, 5]);
    let view = ViewPoint::new(90.0, 45.0).unwrap();
    let stack = ensemble_sample(&mut ens, view).unwrap();
    let preds: Vec<_> = ens.members_mut().iter_mut().map(|m| m.predict(view, Dropout::Off).unwrap()).collect();
    assert_eq!(stack.samples(), &preds[..]);
    let (volume, tf) = scene();
    let gt = viewuq_core::render::render(&volume, &tf, view, 16).unwrap();
    let b = compute_bundle(&stack, &gt).unwrap();
    for i in 0..3 * 256 {
        let avg = preds.iter().map(|p| p.data()[i] as f64).sum::<f64>() / 3.0;
        assert!((b.mean_image.data()[i] as f64 - avg).abs() < 1e-6);
    }
}

#[test]
fn ensemble_sensitivity_ignores_member_order() {
    let ens = ensemble(&[6, 7, 8]);
    let mut reversed = EnsembleSet::new(ens.members().iter().rev().cloned().collect()).unwrap();
    let mut ens = ens;
    let view = ViewPoint::new(310.0, 5.0).unwrap();
    let a = ensemble_sensitivity(&mut ens, view).unwrap();
    let b = ensemble_sensitivity(&mut reversed, view).unwrap();
    assert_eq!(a.mean, b.mean);
    assert_eq!(a.std, b.std);
    let single = sensitivity(&mut ens.members_mut()[0], view, Dropout::Off, 1).unwrap();
    assert_eq!(single.per_rep[0], a.per_rep[0]);
}

#[test]
fn single_cell_sweep_aggregates_the_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let (volume, tf) = scene();
    let mut mc = trained(9);
    let mut ens = ensemble(&[10, 11]);
    let grid = GridSpec::new(1, 1).unwrap();
    let cfg = sweep_cfg(grid);
    sweep(dir.path(), &mut mc, &mut ens, &volume, &tf, &cfg).unwrap();
    let data = SweepData::open(dir.path()).unwrap();
    let rec = data.record(0, 0).unwrap();

    let view = grid.view(0, 0);
    let gt = viewuq_core::render::render(&volume, &tf, view, 16).unwrap();
    let cell_seed = viewuq_core::autodiff::rng::mix(cfg.seed, 0);
    let mc_b = compute_bundle(&mc_sample(&mut mc, view, cfg.m, cell_seed).unwrap(), &gt).unwrap();
    let ens_b = compute_bundle(&ensemble_sample(&mut ens, view).unwrap(), &gt).unwrap();
    for (method, b) in [(Method::Mc, &mc_b), (Method::Ensemble, &ens_b)] {
        let agg = rec.method(method);
        assert_eq!(agg.uncertainty[3], pixel_mean(&b.combined_uncertainty));
        assert_eq!(agg.error[3], pixel_mean(&b.combined_error));
        assert_eq!(agg.error_std[3], pixel_mean(&b.combined_error_std));
        for c in 0..3 {
            assert_eq!(agg.uncertainty[c], pixel_mean(&b.channel_uncertainty[c]));
        }
    }
    assert_eq!(rec.ens.sensitivity, ensemble_sensitivity(&mut ens, view).unwrap().mean);
}

#[test]
fn resumed_sweep_matches_single_shot() {
    let (volume, tf) = scene();
    let mut mc = trained(12);
    let mut ens = ensemble(&[13, 14]);
    let cfg = sweep_cfg(GridSpec::new(4, 3).unwrap());
    let whole = tempfile::tempdir().unwrap();
    sweep(whole.path(), &mut mc, &mut ens, &volume, &tf, &cfg).unwrap();

    // Simulate an interruption after five cells.
    let part = tempfile::tempdir().unwrap();
    sweep(part.path(), &mut mc, &mut ens, &volume, &tf, &cfg).unwrap();
    for idx in 5..12 {
        std::fs::remove_file(part.path().join(format!("cells/{idx:06}.bin"))).unwrap();
    }
    std::fs::remove_file(part.path().join(RECORDS_FILE)).unwrap();
    let manifest = part.path().join(MANIFEST_FILE);
    let mut m: serde_json::Value = serde_json::from_slice(&std::fs::read(&manifest).unwrap()).unwrap();
    m["complete"] = false.into();
    std::fs::write(&manifest, serde_json::to_vec_pretty(&m).unwrap()).unwrap();
    assert!(SweepData::open(part.path()).is_err());

    sweep(part.path(), &mut mc, &mut ens, &volume, &tf, &cfg).unwrap();
    for f in [RECORDS_FILE, MANIFEST_FILE] {
        assert_eq!(std::fs::read(whole.path().join(f)).unwrap(), std::fs::read(part.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn studies_follow_their_axes() {
    let test = data();
    let ens = ensemble(&[15, 16, 17]);
    let curve = ensemble_size_study(&ens, &test, &[1, 2, 3]).unwrap();
    assert_eq!(curve.points[0].mean_uncertainty, 0.0);
    assert!(curve.points[1].mean_uncertainty > 0.0);
    let mut mc = trained(18);
    let curve = mc_samples_study(&mut mc, &test, &[2, 8], 1).unwrap();
    assert_eq!(curve.points.len(), 2);
    assert!(mc_samples_study(&mut mc, &test, &[8, 2], 1).is_err());
    assert!(mc_samples_study(&mut mc, &test, &[], 1).is_err());
}

#[test]
fn desk_training_loss_trends_down() {
    let (volume, tf) = scene();
    let data = generate_dataset(&volume, &tf, 64, 16, 4).unwrap();
    let mut m: SynthesisModel = SynthesisModel::build(tiny(19)).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 16,
        seed: 19,
        ..TrainConfig::default()
    };
    let report = train(&mut m, &data, &cfg).unwrap();
    let first: f32 = report.loss_history[..10].iter().sum();
    let last: f32 = report.loss_history[20..].iter().sum();
    assert!(last < first, "{last} vs {first}");
}
