//! Point-wise semantic segmentation of LiDAR point clouds under severe
//! class imbalance.
//!
//! The crate covers the full pipeline: KITTI-format and synthetic dataset
//! ingestion, box-to-point ground-truth labeling, frequency-derived loss
//! weights, a compact point-wise classifier with exact hand-derived
//! gradients, phased class-incremental training with checkpoint chaining,
//! and per-class IoU evaluation. The `pointseg` binary drives it from the
//! command line.

pub mod geom;
pub mod ingest;
pub mod util;

pub use geom::{ClassId, LabeledCloud, OrientedBox3, Point3};
pub use ingest::{ClassCatalog, DatasetStats, Scene};
