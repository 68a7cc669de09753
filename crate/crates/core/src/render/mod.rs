//! Ground-truth image generation: scalar volumes, transfer functions, an
//! orthographic ray caster and (view, image) datasets.

mod camera;
mod dataset;
mod raycast;
mod transfer;
mod volume;

pub use camera::{camera_from_view, Camera, Vec3};
pub use dataset::{generate_dataset, Dataset};
pub use raycast::{render, render_with_alpha};
pub use transfer::{ControlPoint, TfPreset, TransferFunction};
pub use volume::{blobs_volume, builtin_volume, load_raw_volume, Gaussian, RawDtype, ScalarVolume, VolumeKind};
