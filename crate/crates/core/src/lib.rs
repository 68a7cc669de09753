//! View-conditioned image synthesis with per-pixel uncertainty from
//! MC-Dropout and deep ensembles.

pub mod colormap;
pub mod demo1d;
pub mod error;
pub mod image;
pub mod model;
pub mod render;
pub mod stats;
pub mod study;
pub mod sweep;
pub mod uq;
pub mod view;

pub use viewuq_autodiff as autodiff;
pub use error::{Error, Operand, Result};
pub use image::RgbImage;
pub use view::{normalize_view, ViewPoint};
