//! Dataset ingestion: class catalogs, KITTI-format readers, deterministic
//! synthetic scene generation, preprocessing, and dataset statistics.

pub mod kitti;
pub mod synth;

use std::collections::BTreeSet;
use std::path::Path;

use thiserror::Error;

use crate::geom::{self, ClassId, GeomError, LabeledCloud, OrientedBox3, Point3};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("scan byte length {len} is not a multiple of 16")]
    ScanLength { len: usize },
    #[error("scan record {record} contains a non-finite value")]
    NonFiniteScanValue { record: usize },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("calibration key {0:?} not found")]
    MissingKey(&'static str),
    #[error("calibration rotation is not rigid: {0}")]
    NonRigid(String),
    #[error("class catalog invalid: {0}")]
    BadCatalog(String),
    #[error("label {label} out of range for catalog of {classes} classes")]
    UnknownLabel { label: u32, classes: usize },
    #[error("synthetic scene spec invalid: {0}")]
    Spec(String),
    #[error("dataset manifest invalid: {0}")]
    BadManifest(String),
    #[error("geometry error: {0}")]
    Geom(#[from] GeomError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl IngestError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Ordered list of class names. Position defines the `ClassId`; index 0 is
/// always the NoObject background class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassCatalog {
    names: Vec<String>,
}

/// Reserved name of the background class at index 0.
pub const NO_OBJECT_NAME: &str = "NoObject";

impl ClassCatalog {
    pub fn new(names: Vec<String>) -> Result<Self, IngestError> {
        if names.is_empty() {
            return Err(IngestError::BadCatalog("catalog is empty".into()));
        }
        if names[0] != NO_OBJECT_NAME {
            return Err(IngestError::BadCatalog(format!(
                "index 0 must be {NO_OBJECT_NAME:?}, got {:?}",
                names[0]
            )));
        }
        let mut seen = BTreeSet::new();
        for n in &names {
            if n.is_empty() || n.split_whitespace().count() != 1 {
                return Err(IngestError::BadCatalog(format!(
                    "class name {n:?} must be a single non-empty token"
                )));
            }
            if !seen.insert(n.clone()) {
                return Err(IngestError::BadCatalog(format!("duplicate class name {n:?}")));
            }
        }
        Ok(ClassCatalog { names })
    }

    /// NoObject followed by the object classes, in order.
    pub fn with_objects<S: Into<String>>(object_names: impl IntoIterator<Item = S>) -> Result<Self, IngestError> {
        let mut names = vec![NO_OBJECT_NAME.to_string()];
        names.extend(object_names.into_iter().map(Into::into));
        Self::new(names)
    }

    /// The KITTI classes used throughout: Car, Truck, Van, Pedestrian,
    /// Cyclist (plus NoObject at index 0).
    pub fn kitti_default() -> Self {
        Self::with_objects(["Car", "Truck", "Van", "Pedestrian", "Cyclist"]).unwrap()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: ClassId) -> &str {
        &self.names[id.index()]
    }

    pub fn id_of(&self, name: &str) -> Option<ClassId> {
        self.names.iter().position(|n| n == name).map(|i| ClassId(i as u32))
    }

    /// Looks up an object class by name; NoObject and unknown names both
    /// return None (label files cannot annotate background).
    pub fn object_id_of(&self, name: &str) -> Option<ClassId> {
        match self.id_of(name) {
            Some(id) if !id.is_no_object() => Some(id),
            _ => None,
        }
    }

    /// All object class ids (everything except NoObject).
    pub fn object_ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        (1..self.names.len()).map(|i| ClassId(i as u32))
    }

    pub fn ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        (0..self.names.len()).map(|i| ClassId(i as u32))
    }

    pub fn contains(&self, id: ClassId) -> bool {
        id.index() < self.names.len()
    }
}

/// One ingested scene: raw points plus box annotations, before labeling
/// and preprocessing. Synthetic and KITTI data both flow through this so
/// there is a single labeling code path.
#[derive(Clone, Debug)]
pub struct Scene {
    pub id: String,
    pub points: Vec<Point3>,
    pub annotations: Vec<(OrientedBox3, ClassId)>,
}

/// Preprocessing applied between labeling and training/evaluation.
#[derive(Clone, Copy, Debug)]
pub struct PreprocessConfig {
    /// Keep only the forward half-space (x > 0).
    pub frontal: bool,
    /// Drop points below this height; `f64::NEG_INFINITY` disables.
    pub z_min: f64,
    /// Apply the filters to raw points before box labeling instead of
    /// after. Labeling first is the default; the result differs only in
    /// which points exist, never in how a surviving point is labeled.
    pub filter_before_label: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            frontal: true,
            z_min: -1.4,
            filter_before_label: false,
        }
    }
}

impl PreprocessConfig {
    /// No filtering at all.
    pub fn off() -> Self {
        PreprocessConfig {
            frontal: false,
            z_min: f64::NEG_INFINITY,
            filter_before_label: false,
        }
    }

    fn apply_filters(&self, cloud: LabeledCloud) -> LabeledCloud {
        let cloud = if self.frontal {
            geom::frontal_filter(&cloud)
        } else {
            cloud
        };
        if self.z_min > f64::NEG_INFINITY {
            geom::ground_filter(&cloud, self.z_min)
        } else {
            cloud
        }
    }
}

/// Labels a scene's points from its box annotations and applies the
/// configured filters, yielding the cloud that training and evaluation
/// consume.
pub fn prepare_scene(scene: &Scene, prep: &PreprocessConfig) -> Result<LabeledCloud, IngestError> {
    let cloud = if prep.filter_before_label {
        let raw = prep.apply_filters(LabeledCloud::unlabeled(scene.points.clone()));
        let (points, _) = raw.into_parts();
        geom::label_points(&points, &scene.annotations)?
    } else {
        let labeled = geom::label_points(&scene.points, &scene.annotations)?;
        prep.apply_filters(labeled)
    };
    Ok(cloud)
}

/// Per-class point and instance counts over a dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetStats {
    point_counts: Vec<u64>,
    instance_counts: Vec<u64>,
}

impl DatasetStats {
    pub fn new(n_classes: usize) -> Self {
        DatasetStats {
            point_counts: vec![0; n_classes],
            instance_counts: vec![0; n_classes],
        }
    }

    pub fn record_cloud(&mut self, cloud: &LabeledCloud) -> Result<(), IngestError> {
        for label in cloud.labels() {
            let i = label.index();
            if i >= self.point_counts.len() {
                return Err(IngestError::UnknownLabel {
                    label: label.0,
                    classes: self.point_counts.len(),
                });
            }
            self.point_counts[i] += 1;
        }
        Ok(())
    }

    pub fn record_annotations(
        &mut self,
        annotations: &[(OrientedBox3, ClassId)],
    ) -> Result<(), IngestError> {
        for (_, class) in annotations {
            let i = class.index();
            if i >= self.instance_counts.len() {
                return Err(IngestError::UnknownLabel {
                    label: class.0,
                    classes: self.instance_counts.len(),
                });
            }
            self.instance_counts[i] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &DatasetStats) {
        assert_eq!(self.point_counts.len(), other.point_counts.len());
        for (a, b) in self.point_counts.iter_mut().zip(&other.point_counts) {
            *a += b;
        }
        for (a, b) in self.instance_counts.iter_mut().zip(&other.instance_counts) {
            *a += b;
        }
    }

    pub fn point_counts(&self) -> &[u64] {
        &self.point_counts
    }

    pub fn instance_counts(&self) -> &[u64] {
        &self.instance_counts
    }

    pub fn total_points(&self) -> u64 {
        self.point_counts.iter().sum()
    }

    pub fn n_classes(&self) -> usize {
        self.point_counts.len()
    }
}

/// Exact per-class point counts across labeled clouds. Instance counts stay
/// zero; use [`DatasetStats::record_annotations`] when annotation lists are
/// available.
pub fn compute_stats<'a>(
    clouds: impl IntoIterator<Item = &'a LabeledCloud>,
    catalog: &ClassCatalog,
) -> Result<DatasetStats, IngestError> {
    let mut stats = DatasetStats::new(catalog.len());
    for cloud in clouds {
        stats.record_cloud(cloud)?;
    }
    Ok(stats)
}

/// Point and instance counts for a full set of prepared scenes.
pub fn compute_scene_stats(
    scenes: &[Scene],
    clouds: &[LabeledCloud],
    catalog: &ClassCatalog,
) -> Result<DatasetStats, IngestError> {
    let mut stats = compute_stats(clouds.iter(), catalog)?;
    for scene in scenes {
        stats.record_annotations(&scene.annotations)?;
    }
    Ok(stats)
}

/// A stable fingerprint of (catalog, labeled clouds) used to check that two
/// runs were evaluated on the same data before comparing their reports.
pub fn dataset_fingerprint(catalog: &ClassCatalog, clouds: &[LabeledCloud]) -> u64 {
    let mut h = crate::util::Fnv1a64::new();
    for name in catalog.names() {
        h.update(name.as_bytes());
        h.update(b"\n");
    }
    h.update(&(clouds.len() as u64).to_le_bytes());
    for cloud in clouds {
        h.update(&(cloud.len() as u64).to_le_bytes());
        for (p, l) in cloud.points().iter().zip(cloud.labels()) {
            h.update(&p.x.to_bits().to_le_bytes());
            h.update(&p.y.to_bits().to_le_bytes());
            h.update(&p.z.to_bits().to_le_bytes());
            h.update(&p.intensity.to_bits().to_le_bytes());
            h.update(&l.0.to_le_bytes());
        }
    }
    h.finish()
}
