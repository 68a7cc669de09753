//! Dense θ×φ sweeps over both methods, persisted for the explorer.
//!
//! Directory layout:
//!
//! ```text
//! manifest.json            SweepManifest; `complete` flips to true last
//! cells/{idx:06}.bin       one record per finished cell (resume units)
//! records.bin              all records in grid order
//! img/{i}_{j}/*.png        per-view images, see IMAGE_NAMES
//! img/{i}_{j}/scales.json  colour scale of each map image
//! heatmaps/{method}_{quantity}_{channel}.{bin,png,json}
//! ```

mod grid;
mod heatmap;
mod record;
mod run;

pub use grid::GridSpec;
pub use heatmap::{export_heatmaps, heatmap_grid, heatmap_keys, Heatmap};
pub use record::{Channel, Method, MethodAggregates, Quantity, SweepRecord, RECORD_FIELDS, RECORD_LEN};
pub use run::{image_names, sweep, SweepConfig, SweepData, SweepManifest, MANIFEST_FILE, RECORDS_FILE};
