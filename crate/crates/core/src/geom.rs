//! Point-cloud geometry: points, class ids, yaw-oriented boxes, box-to-point
//! labeling, and the frontal / ground preprocessing filters.
//!
//! Coordinates are meters in the sensor frame: x forward, y left, z up.
//! All operations here are pure functions over immutable inputs.

use std::collections::BTreeSet;
use std::f64::consts::{PI, TAU};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("box dimensions must be strictly positive and finite, got {0:?}")]
    NonPositiveDims([f64; 3]),
    #[error("box center and yaw must be finite")]
    NonFiniteBox,
    #[error("annotation {index} is labeled NoObject; boxes must carry an object class")]
    NoObjectAnnotation { index: usize },
    #[error("points/labels length mismatch: {points} points vs {labels} labels")]
    LengthMismatch { points: usize, labels: usize },
}

/// A single LiDAR return: position in meters plus reflectance intensity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Point3 { x, y, z, intensity }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }
}

/// Index into a [`ClassCatalog`](crate::ingest::ClassCatalog). Index 0 is
/// always the NoObject (background) class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassId(pub u32);

impl ClassId {
    pub const NO_OBJECT: ClassId = ClassId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_no_object(self) -> bool {
        self.0 == 0
    }
}

/// Normalizes an angle to the half-open interval (-pi, pi].
pub fn normalize_yaw(angle: f64) -> f64 {
    let mut r = angle.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

/// A yaw-oriented 3D box: axis-aligned in its own frame, rotated about the
/// world z-axis by `yaw` and translated to `center`.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientedBox3 {
    center: [f64; 3],
    /// (length, width, height): extents along the box x/y/z axes.
    dims: [f64; 3],
    yaw: f64,
}

impl OrientedBox3 {
    pub fn new(center: [f64; 3], dims: [f64; 3], yaw: f64) -> Result<Self, GeomError> {
        if !(dims.iter().all(|d| d.is_finite() && *d > 0.0)) {
            return Err(GeomError::NonPositiveDims(dims));
        }
        if !center.iter().all(|c| c.is_finite()) || !yaw.is_finite() {
            return Err(GeomError::NonFiniteBox);
        }
        Ok(OrientedBox3 {
            center,
            dims,
            yaw: normalize_yaw(yaw),
        })
    }

    pub fn center(&self) -> [f64; 3] {
        self.center
    }

    /// (length, width, height).
    pub fn dims(&self) -> [f64; 3] {
        self.dims
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn volume(&self) -> f64 {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Maps a world-frame position into the box frame (translate by
    /// -center, rotate by -yaw).
    pub fn to_box_frame(&self, p: [f64; 3]) -> [f64; 3] {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let dz = p[2] - self.center[2];
        let (s, c) = self.yaw.sin_cos();
        [c * dx + s * dy, -s * dx + c * dy, dz]
    }

    /// Maps a box-frame position back to the world frame.
    pub fn from_box_frame(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [
            self.center[0] + c * p[0] - s * p[1],
            self.center[1] + s * p[0] + c * p[1],
            self.center[2] + p[2],
        ]
    }

    /// Whether the point lies inside the box. Boundary points count as
    /// inside.
    pub fn contains(&self, p: &Point3) -> bool {
        let q = self.to_box_frame([p.x, p.y, p.z]);
        q[0].abs() <= self.dims[0] / 2.0
            && q[1].abs() <= self.dims[1] / 2.0
            && q[2].abs() <= self.dims[2] / 2.0
    }

    /// The eight corners, in a fixed sign order over (±l/2, ±w/2, ±h/2).
    pub fn corners(&self) -> [[f64; 3]; 8] {
        let [l, w, h] = self.dims;
        let mut out = [[0.0; 3]; 8];
        let mut i = 0;
        for sx in [-0.5, 0.5] {
            for sy in [-0.5, 0.5] {
                for sz in [-0.5, 0.5] {
                    out[i] = self.from_box_frame([sx * l, sy * w, sz * h]);
                    i += 1;
                }
            }
        }
        out
    }
}

/// A point cloud with one class label per point, kept in lockstep.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCloud {
    points: Vec<Point3>,
    labels: Vec<ClassId>,
}

impl LabeledCloud {
    pub fn new(points: Vec<Point3>, labels: Vec<ClassId>) -> Result<Self, GeomError> {
        if points.len() != labels.len() {
            return Err(GeomError::LengthMismatch {
                points: points.len(),
                labels: labels.len(),
            });
        }
        Ok(LabeledCloud { points, labels })
    }

    /// All points labeled NoObject.
    pub fn unlabeled(points: Vec<Point3>) -> Self {
        let labels = vec![ClassId::NO_OBJECT; points.len()];
        LabeledCloud { points, labels }
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_parts(self) -> (Vec<Point3>, Vec<ClassId>) {
        (self.points, self.labels)
    }
}

/// Assigns a class to every point from box annotations: a point inside at
/// least one box takes that box's class, everything else is NoObject.
///
/// When a point lies in several boxes the smallest-volume box wins
/// (fine-grained classes are physically smaller, so this preserves
/// rare-class points); exact volume ties go to the earlier annotation.
pub fn label_points(
    points: &[Point3],
    annotations: &[(OrientedBox3, ClassId)],
) -> Result<LabeledCloud, GeomError> {
    for (i, (_, class)) in annotations.iter().enumerate() {
        if class.is_no_object() {
            return Err(GeomError::NoObjectAnnotation { index: i });
        }
    }
    let volumes: Vec<f64> = annotations.iter().map(|(b, _)| b.volume()).collect();
    let labels = points
        .iter()
        .map(|p| {
            let mut best: Option<(f64, ClassId)> = None;
            for ((b, class), &vol) in annotations.iter().zip(&volumes) {
                if b.contains(p) {
                    match best {
                        Some((best_vol, _)) if vol >= best_vol => {}
                        _ => best = Some((vol, *class)),
                    }
                }
            }
            best.map_or(ClassId::NO_OBJECT, |(_, c)| c)
        })
        .collect();
    Ok(LabeledCloud {
        points: points.to_vec(),
        labels,
    })
}

/// Keeps only the forward half-space (x > 0, strictly), i.e. the 180-degree
/// scene in front of the sensor.
pub fn frontal_filter(cloud: &LabeledCloud) -> LabeledCloud {
    retain(cloud, |p| p.x > 0.0)
}

/// Keeps only points at or above `z_min`. Pass `f64::NEG_INFINITY` to
/// disable.
pub fn ground_filter(cloud: &LabeledCloud, z_min: f64) -> LabeledCloud {
    retain(cloud, |p| p.z >= z_min)
}

fn retain(cloud: &LabeledCloud, keep: impl Fn(&Point3) -> bool) -> LabeledCloud {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (p, l) in cloud.points.iter().zip(&cloud.labels) {
        if keep(p) {
            points.push(*p);
            labels.push(*l);
        }
    }
    LabeledCloud { points, labels }
}

/// Relabels everything outside `active` (and outside NoObject) as NoObject,
/// leaving points untouched. Used by the phased training procedure to hide
/// classes that are not yet being learned.
pub fn remap_labels(cloud: &LabeledCloud, active: &BTreeSet<ClassId>) -> LabeledCloud {
    let labels = cloud
        .labels
        .iter()
        .map(|l| if active.contains(l) { *l } else { ClassId::NO_OBJECT })
        .collect();
    LabeledCloud {
        points: cloud.points.clone(),
        labels,
    }
}
