use std::collections::HashMap;
use std::path::Path;

use serde_json::{json, Value};
use viewuq_core::model::{ModelConfig, SynthesisModel};
use viewuq_core::render::{builtin_volume, TfPreset, TransferFunction, VolumeKind};
use viewuq_core::sweep::{sweep, GridSpec, SweepConfig};
use viewuq_core::uq::EnsembleSet;
use viewuq_service::api::Api;

fn model(seed: u64) -> SynthesisModel {
    SynthesisModel::build(ModelConfig {
        image_resolution: 16,
        n_res_blocks: 2,
        fc_widths: vec![8],
        base_channels: 8,
        min_channels: 4,
        dropout_p: 0.3,
        seed,
    })
    .unwrap()
}

fn fixture(root: &Path, id: &str, grid: GridSpec) {
    let volume = builtin_volume(VolumeKind::Blobs, [16; 3], 1).unwrap();
    let tf = TransferFunction::preset(TfPreset::Warm);
    let cfg = SweepConfig {
        grid,
        m: 3,
        seed: 5,
        dataset_id: id.into(),
        volume_id: "blobs".into(),
        tf_id: "warm".into(),
        write_images: true,
    };
    let mut ens = EnsembleSet::new(vec![model(2), model(3)]).unwrap();
    sweep(&root.join(id), &mut model(1), &mut ens, &volume, &tf, &cfg).unwrap();
}

fn q(pairs: &[(&str, &str)]) -> HashMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn get(api: &Api, path: &str, pairs: &[(&str, &str)]) -> (u16, Value) {
    let r = api.handle("GET", path, &q(pairs), b"");
    (r.status, r.body)
}

fn records_bin(root: &Path, id: &str) -> Vec<[f32; 30]> {
    let bytes = std::fs::read(root.join(id).join("records.bin")).unwrap();
    bytes
        .chunks_exact(120)
        .map(|rec| {
            let mut out = [0.0f32; 30];
            for (k, c) in rec.chunks_exact(4).enumerate() {
                out[k] = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            }
            out
        })
        .collect()
}

fn setup() -> (tempfile::TempDir, Api) {
    let tmp = tempfile::tempdir().unwrap();
    fixture(tmp.path(), "fix", GridSpec::new(3, 2).unwrap());
    let api = Api::new(tmp.path(), None);
    (tmp, api)
}

#[test]
fn datasets_and_heatmap_layout() {
    let (tmp, api) = setup();
    let (s, body) = get(&api, "/datasets", &[]);
    assert_eq!(s, 200);
    assert_eq!(body["datasets"][0]["id"], "fix");
    assert_eq!(body["datasets"][0]["grid"], json!({"n_theta": 3, "n_phi": 2}));

    let recs = records_bin(tmp.path(), "fix");
    let (s, h) = get(&api, "/heatmap", &[("dataset", "fix"), ("method", "mc"), ("quantity", "uncertainty"), ("channel", "combined")]);
    assert_eq!(s, 200);
    let values: Vec<f32> = serde_json::from_value(h["values"].clone()).unwrap();
    assert_eq!(values.len(), 6);
    // Record k is cell (k mod 3, k div 3); MC combined uncertainty is field 5.
    for (k, v) in values.iter().enumerate() {
        assert_eq!(*v, recs[k][5]);
    }
    let (_, red) = get(&api, "/heatmap", &[("dataset", "fix"), ("method", "ensemble"), ("quantity", "error"), ("channel", "r")]);
    let red: Vec<f32> = serde_json::from_value(red["values"].clone()).unwrap();
    assert_eq!(red[4], recs[4][20]);

    let (s, sens) = get(&api, "/sensitivity", &[("dataset", "fix"), ("method", "ens"), ("stat", "std")]);
    assert_eq!(s, 200);
    let sens: Vec<f32> = serde_json::from_value(sens["values"].clone()).unwrap();
    assert_eq!(sens[2], recs[2][29]);
}

#[test]
fn pcp_matches_binary_records() {
    let (tmp, api) = setup();
    let recs = records_bin(tmp.path(), "fix");
    let (_, body) = get(&api, "/pcp", &[("dataset", "fix")]);
    let tuples = body["tuples"].as_array().unwrap();
    assert_eq!(tuples.len(), 6);
    for t in tuples {
        let (i, j) = (t["i"].as_u64().unwrap() as usize, t["j"].as_u64().unwrap() as usize);
        let r = &recs[j * 3 + i];
        let expect = [r[5], r[9], r[13], r[19], r[23], r[27]];
        let got: Vec<f32> = serde_json::from_value(t["values"].clone()).unwrap();
        assert_eq!(got, expect);
    }
}

#[test]
fn view_urls_resolve() {
    let (_tmp, api) = setup();
    let (s, body) = get(&api, "/view", &[("dataset", "fix"), ("i", "2"), ("j", "1")]);
    assert_eq!(s, 200);
    let images = body["images"].as_object().unwrap();
    assert_eq!(images.len(), 27);
    for url in images.values() {
        let rest = url.as_str().unwrap().strip_prefix("/files/fix/").unwrap();
        assert!(api.file_path("fix", rest).is_some(), "{url}");
    }
    assert!(api.file_path("fix", "../fix/manifest.json").is_none());
    assert_eq!(get(&api, "/view", &[("dataset", "fix"), ("i", "3"), ("j", "0")]).0, 404);
}

#[test]
fn select_ranks_by_uncertainty() {
    let (_tmp, api) = setup();
    let r = api.handle("POST", "/select", &HashMap::new(), br#"{"dataset": "fix", "cells": []}"#);
    assert_eq!(r.status, 200);
    assert_eq!(r.body["records"], json!([]));

    let body = br#"{"dataset": "fix", "cells": [[0, 0], [1, 0], [2, 1], [0, 1], [1, 0]]}"#;
    let r = api.handle("POST", "/select", &HashMap::new(), body);
    let recs = r.body["records"].as_array().unwrap();
    assert_eq!(recs.len(), 4);
    let u: Vec<f64> = recs.iter().map(|x| x["record"]["mc.uncertainty.combined"].as_f64().unwrap()).collect();
    assert!(u.windows(2).all(|w| w[0] >= w[1]));

    let bad = api.handle("POST", "/select", &HashMap::new(), br#"{"dataset": "fix", "cells": [[9, 9]]}"#);
    assert_eq!(bad.status, 404);
}

#[test]
fn errors_and_determinism() {
    let (tmp, api) = setup();
    assert_eq!(get(&api, "/pcp", &[("dataset", "nope")]).0, 404);
    assert_eq!(get(&api, "/pcp", &[("dataset", "../fix")]).0, 404);
    assert_eq!(get(&api, "/heatmap", &[("dataset", "fix")]).0, 400);
    assert_eq!(
        get(&api, "/heatmap", &[("dataset", "fix"), ("method", "mc"), ("quantity", "sensitivity"), ("channel", "g")]).0,
        400
    );
    assert_eq!(api.handle("DELETE", "/pcp", &HashMap::new(), b"").status, 405);
    assert_eq!(get(&api, "/nowhere", &[]).0, 404);
    assert_eq!(get(&api, "/demo1d", &[]).0, 404);

    let a = api.handle("GET", "/pcp", &q(&[("dataset", "fix")]), b"").body.to_string();
    let b = api.handle("GET", "/pcp", &q(&[("dataset", "fix")]), b"").body.to_string();
    assert_eq!(a, b);

    let path = tmp.path().join("fix/manifest.json");
    let mut m: Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    m["complete"] = json!(false);
    std::fs::write(&path, serde_json::to_vec(&m).unwrap()).unwrap();
    let (s, body) = get(&api, "/pcp", &[("dataset", "fix")]);
    assert_eq!(s, 409);
    assert_eq!(body["error"]["code"], "incomplete_sweep");
}
