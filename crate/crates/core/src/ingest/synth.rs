//! Deterministic synthetic scene generation: a desk-scale stand-in for an
//! imbalanced driving dataset. Scenes are a pure function of (spec, seed):
//! a flat noisy ground sheet of background points plus boxed object
//! instances whose interiors are filled with uniform points.

use std::f64::consts::PI;
use std::path::Path;

use rand::prelude::IndexedRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ClassCatalog, IngestError, Scene};
use crate::geom::{ClassId, OrientedBox3, Point3};
use crate::util::{self, derive_seed, STREAM_SCENE};

/// Inclusive numeric range `[lo, hi]`.
pub type Range2<T> = [T; 2];

fn check_range<T: PartialOrd + std::fmt::Debug>(
    name: &str,
    r: &Range2<T>,
) -> Result<(), IngestError> {
    if r[0] > r[1] {
        return Err(IngestError::Spec(format!(
            "range {name} is empty: {:?} > {:?}",
            r[0], r[1]
        )));
    }
    Ok(())
}

/// Generation parameters for one object class.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ClassSpec {
    pub name: String,
    /// Instances per scene, inclusive.
    pub instances: Range2<u32>,
    /// Points sampled inside each instance box, inclusive.
    pub points_per_instance: Range2<u32>,
    /// Box dimension ranges, meters.
    pub length: Range2<f64>,
    pub width: Range2<f64>,
    pub height: Range2<f64>,
    /// Reflectance band for points of this class.
    #[serde(default = "full_band")]
    pub intensity: Range2<f64>,
}

fn full_band() -> Range2<f64> {
    [0.0, 1.0]
}

/// Scene-level generation parameters.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SyntheticSceneSpec {
    /// Object classes in catalog order (ids 1..).
    pub classes: Vec<ClassSpec>,
    /// Ground-sheet points drawn uniformly over the extent.
    pub background_points: u32,
    /// Scene half-width: x and y are drawn from [-extent/2, extent/2].
    pub extent: f64,
    /// Gaussian sigma of background height around the ground plane, meters.
    pub noise_sigma: f64,
    /// Ground plane height, meters.
    #[serde(default)]
    pub ground_z: f64,
    #[serde(default = "full_band")]
    pub background_intensity: Range2<f64>,
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<(), IngestError> {
        if !(self.extent.is_finite() && self.extent > 0.0) {
            return Err(IngestError::Spec(format!(
                "extent must be positive, got {}",
                self.extent
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(IngestError::Spec(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        if !self.ground_z.is_finite() {
            return Err(IngestError::Spec("ground_z must be finite".into()));
        }
        check_range("background_intensity", &self.background_intensity)?;
        for c in &self.classes {
            check_range(&format!("{}.instances", c.name), &c.instances)?;
            check_range(&format!("{}.points_per_instance", c.name), &c.points_per_instance)?;
            for (label, r) in [("length", &c.length), ("width", &c.width), ("height", &c.height)] {
                check_range(&format!("{}.{label}", c.name), r)?;
                if !(r[0].is_finite() && r[0] > 0.0) {
                    return Err(IngestError::Spec(format!(
                        "{}.{label} must be strictly positive",
                        c.name
                    )));
                }
            }
            check_range(&format!("{}.intensity", c.name), &c.intensity)?;
        }
        Ok(())
    }

    /// Catalog implied by the class list: NoObject plus the classes in
    /// order.
    pub fn catalog(&self) -> Result<ClassCatalog, IngestError> {
        ClassCatalog::with_objects(self.classes.iter().map(|c| c.name.clone()))
    }
}

/// A full dataset description: how many scenes plus the per-scene spec.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SyntheticDatasetSpec {
    pub scenes: u32,
    #[serde(flatten)]
    pub scene: SyntheticSceneSpec,
}

impl SyntheticDatasetSpec {
    pub fn from_toml(text: &str) -> Result<Self, IngestError> {
        let spec: SyntheticDatasetSpec =
            toml::from_str(text).map_err(|e| IngestError::Spec(e.to_string()))?;
        if spec.scenes == 0 {
            return Err(IngestError::Spec("scenes must be >= 1".into()));
        }
        spec.scene.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// Rounds through f32 so every generated coordinate survives the scan file
/// format bit-exactly.
fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

fn sample_range(rng: &mut ChaCha8Rng, r: &Range2<f64>) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn sample_count(rng: &mut ChaCha8Rng, r: &Range2<u32>) -> u32 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

/// Generates one scene deterministically from (spec, seed).
///
/// Draw order is fixed: background points first, then per class (in spec
/// order) each instance's box followed by its interior points, all from a
/// single ChaCha8 stream seeded with `seed`.
pub fn generate_synthetic_scene(
    spec: &SyntheticSceneSpec,
    seed: u64,
) -> Result<(Vec<Point3>, Vec<(OrientedBox3, ClassId)>), IngestError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = spec.extent / 2.0;
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE))
        .expect("sigma validated non-negative");

    let mut points = Vec::new();
    for _ in 0..spec.background_points {
        let x = rng.random_range(-half..half);
        let y = rng.random_range(-half..half);
        let dz = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        let intensity = sample_range(&mut rng, &spec.background_intensity);
        points.push(Point3::new(
            quantize(x),
            quantize(y),
            quantize(spec.ground_z + dz),
            quantize(intensity),
        ));
    }

    let mut annotations = Vec::new();
    for (class_idx, class) in spec.classes.iter().enumerate() {
        let class_id = ClassId(class_idx as u32 + 1);
        let n_instances = sample_count(&mut rng, &class.instances);
        for _ in 0..n_instances {
            let dims = [
                sample_range(&mut rng, &class.length),
                sample_range(&mut rng, &class.width),
                sample_range(&mut rng, &class.height),
            ];
            let yaw = rng.random_range(-PI..PI);
            let center = [
                rng.random_range(-half..half),
                rng.random_range(-half..half),
                spec.ground_z + dims[2] / 2.0,
            ];
            let oriented = OrientedBox3::new(center, dims, yaw)?;
            let n_points = sample_count(&mut rng, &class.points_per_instance);
            for _ in 0..n_points {
                let local = [
                    rng.random_range(-0.5..0.5) * dims[0],
                    rng.random_range(-0.5..0.5) * dims[1],
                    rng.random_range(-0.5..0.5) * dims[2],
                ];
                let world = oriented.from_box_frame(local);
                let intensity = sample_range(&mut rng, &class.intensity);
                points.push(Point3::new(
                    quantize(world[0]),
                    quantize(world[1]),
                    quantize(world[2]),
                    quantize(intensity),
                ));
            }
            annotations.push((oriented, class_id));
        }
    }
    Ok((points, annotations))
}

/// Generates a whole dataset in memory: scene `i` uses a seed derived from
/// (root seed, i), so any scene can be regenerated independently.
pub fn generate_synthetic_dataset(
    spec: &SyntheticDatasetSpec,
    seed: u64,
) -> Result<(ClassCatalog, Vec<Scene>), IngestError> {
    let catalog = spec.scene.catalog()?;
    let mut scenes = Vec::with_capacity(spec.scenes as usize);
    for i in 0..spec.scenes {
        let scene_seed = derive_seed(seed, STREAM_SCENE, i as u64);
        let (points, annotations) = generate_synthetic_scene(&spec.scene, scene_seed)?;
        scenes.push(Scene {
            id: format!("{i:06}"),
            points,
            annotations,
        });
    }
    Ok((catalog, scenes))
}

/// On-disk manifest of a synthetic dataset directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub catalog: Vec<String>,
    pub scenes: Vec<String>,
    /// Root seed the dataset was generated from, for provenance.
    pub seed: u64,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Serializes a sensor-frame annotation list: one line per box,
/// `class cx cy cz length width height yaw`, with shortest round-trip
/// float formatting so parsing reproduces the exact f64 values.
pub fn write_annotations(
    annotations: &[(OrientedBox3, ClassId)],
    catalog: &ClassCatalog,
) -> String {
    let mut out = String::new();
    for (b, class) in annotations {
        let c = b.center();
        let d = b.dims();
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            catalog.name(*class),
            c[0],
            c[1],
            c[2],
            d[0],
            d[1],
            d[2],
            b.yaw()
        ));
    }
    out
}

/// Parses the format produced by [`write_annotations`].
pub fn read_annotations(
    text: &str,
    catalog: &ClassCatalog,
) -> Result<Vec<(OrientedBox3, ClassId)>, IngestError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 8 {
            return Err(IngestError::Parse {
                line: line_no,
                message: format!("expected 8 fields, got {}", fields.len()),
            });
        }
        let class = catalog.object_id_of(fields[0]).ok_or_else(|| IngestError::Parse {
            line: line_no,
            message: format!("unknown class {:?}", fields[0]),
        })?;
        let num = |i: usize| -> Result<f64, IngestError> {
            fields[i].parse::<f64>().map_err(|_| IngestError::Parse {
                line: line_no,
                message: format!("field {} ({:?}) is not a number", i + 1, fields[i]),
            })
        };
        let b = OrientedBox3::new(
            [num(1)?, num(2)?, num(3)?],
            [num(4)?, num(5)?, num(6)?],
            num(7)?,
        )?;
        out.push((b, class));
    }
    Ok(out)
}

/// Writes a generated dataset to disk: `scans/<id>.bin` (scan record
/// format), `labels/<id>.txt` (sensor-frame annotations), and a JSON
/// manifest with the catalog and scene ids. All writes are atomic and the
/// tree is byte-identical for a fixed (spec, seed).
pub fn write_synth_dir(
    dir: &Path,
    catalog: &ClassCatalog,
    scenes: &[Scene],
    seed: u64,
) -> Result<(), IngestError> {
    for scene in scenes {
        let scan = super::kitti::write_point_scan(&scene.points);
        let scan_path = dir.join("scans").join(format!("{}.bin", scene.id));
        util::atomic_write(&scan_path, &scan).map_err(|e| IngestError::io(&scan_path, e))?;
        let ann = write_annotations(&scene.annotations, catalog);
        let ann_path = dir.join("labels").join(format!("{}.txt", scene.id));
        util::atomic_write(&ann_path, ann.as_bytes()).map_err(|e| IngestError::io(&ann_path, e))?;
    }
    let manifest = DatasetManifest {
        catalog: catalog.names().to_vec(),
        scenes: scenes.iter().map(|s| s.id.clone()).collect(),
        seed,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| IngestError::BadManifest(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    util::atomic_write(&path, json.as_bytes()).map_err(|e| IngestError::io(&path, e))?;
    Ok(())
}

/// Loads a dataset directory written by [`write_synth_dir`].
pub fn load_synth_dir(dir: &Path) -> Result<(ClassCatalog, Vec<Scene>), IngestError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text =
        std::fs::read_to_string(&manifest_path).map_err(|e| IngestError::io(&manifest_path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| IngestError::BadManifest(e.to_string()))?;
    let catalog = ClassCatalog::new(manifest.catalog)?;
    let mut scenes = Vec::with_capacity(manifest.scenes.len());
    for id in &manifest.scenes {
        let scan_path = dir.join("scans").join(format!("{id}.bin"));
        let bytes = std::fs::read(&scan_path).map_err(|e| IngestError::io(&scan_path, e))?;
        let points = super::kitti::read_point_scan(&bytes)?;
        let ann_path = dir.join("labels").join(format!("{id}.txt"));
        let ann_text =
            std::fs::read_to_string(&ann_path).map_err(|e| IngestError::io(&ann_path, e))?;
        let annotations = read_annotations(&ann_text, &catalog)?;
        scenes.push(Scene {
            id: id.clone(),
            points,
            annotations,
        });
    }
    Ok((catalog, scenes))
}
