use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::view::ViewPoint;

use super::camera::{camera_from_view, Vec3};
use super::transfer::TransferFunction;
use super::volume::ScalarVolume;

/// Accumulated opacity at which a ray stops marching.
const EARLY_EXIT_ALPHA: f32 = 0.999;

/// Orthographic front-to-back ray caster.
///
/// The volume occupies the box `[-e, e]` with `e_a = (n_a − 1)/(n_max − 1)`,
/// so voxels are cubes of side `2/(n_max − 1)`. The image plane is a square
/// of half-size `‖e‖` centred on the view axis, so every view sees the whole
/// box. Rays advance half a voxel per step, sample trilinearly and composite
/// `C += (1−A)·α·rgb`, `A += (1−A)·α` over a black background. The result is
/// mapped to `2C − 1`.
pub fn render(volume: &ScalarVolume, tf: &TransferFunction, view: ViewPoint, resolution: usize) -> Result<RgbImage> {
    render_with_alpha(volume, tf, view, resolution).map(|(img, _)| img)
}

/// As [`render`], also returning the composited alpha per pixel (row-major).
pub fn render_with_alpha(
    volume: &ScalarVolume,
    tf: &TransferFunction,
    view: ViewPoint,
    resolution: usize,
) -> Result<(RgbImage, Vec<f32>)> {
    if resolution < 4 {
        return Err(Error::Config(format!("render resolution must be >= 4, got {resolution}")));
    }
    let dims = volume.dims();
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::Config(format!("cannot render degenerate volume {dims:?}")));
    }
    let n_max = *dims.iter().max().unwrap() as f32;
    let extent = dims.map(|d| (d as f32 - 1.0) / (n_max - 1.0));
    let half = Vec3(extent).norm();
    let step = 1.0 / (n_max - 1.0);
    let cam = camera_from_view(view, 2.0 * half)?;
    let (lo, hi) = volume.value_range();
    let inv_range = if hi > lo { 1.0 / (hi - lo) } else { 0.0 };
    let to_voxel = |p: Vec3| {
        let mut v = [0.0; 3];
        for a in 0..3 {
            v[a] = (p.0[a] + extent[a]) * 0.5 * (n_max - 1.0);
        }
        v
    };

    let n = resolution * resolution;
    let mut rgb = vec![-1.0f32; 3 * n];
    let mut alpha = vec![0.0f32; n];
    let pixel = 2.0 * half / resolution as f32;
    for r in 0..resolution {
        let v = half - (r as f32 + 0.5) * pixel;
        for c in 0..resolution {
            let u = (c as f32 + 0.5) * pixel - half;
            let origin = cam.eye + cam.right * u + cam.up * v;
            let Some((t0, t1)) = slab(origin, cam.forward, extent) else {
                continue;
            };
            let mut acc = [0.0f32; 3];
            let mut a_acc = 0.0f32;
            let mut k = 0usize;
            loop {
                let t = t0 + k as f32 * step;
                if t > t1 || a_acc >= EARLY_EXIT_ALPHA {
                    break;
                }
                let s = volume.sample(to_voxel(origin + cam.forward * t));
                let [cr, cg, cb, a] = tf.lookup((s - lo) * inv_range);
                if a > 0.0 {
                    let w = (1.0 - a_acc) * a;
                    acc[0] += w * cr;
                    acc[1] += w * cg;
                    acc[2] += w * cb;
                    a_acc += w;
                }
                k += 1;
            }
            let p = r * resolution + c;
            for ch in 0..3 {
                rgb[ch * n + p] = (2.0 * acc[ch] - 1.0).clamp(-1.0, 1.0);
            }
            alpha[p] = a_acc;
        }
    }
    Ok((RgbImage::from_planar(resolution, resolution, rgb)?, alpha))
}

/// Entry/exit parameters of the ray `o + t·d` through the box `[-e, e]`.
fn slab(o: Vec3, d: Vec3, e: [f32; 3]) -> Option<(f32, f32)> {
    let (mut t0, mut t1) = (f32::NEG_INFINITY, f32::INFINITY);
    for a in 0..3 {
        if d.0[a].abs() < 1e-12 {
            if o.0[a].abs() > e[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d.0[a];
        let (mut ta, mut tb) = ((-e[a] - o.0[a]) * inv, (e[a] - o.0[a]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 <= t1).then_some((t0.max(0.0), t1))
}
