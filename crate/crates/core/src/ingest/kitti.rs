//! KITTI-format readers: raw Velodyne scans, object label files, and the
//! velo-to-camera calibration, plus the camera-frame to sensor-frame box
//! conversion needed to label points in the sensor frame.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use super::{ClassCatalog, IngestError, Scene};
use crate::geom::{normalize_yaw, ClassId, OrientedBox3, Point3};

/// Bytes per scan record: four little-endian f32 (x, y, z, intensity).
pub const SCAN_RECORD_BYTES: usize = 16;

/// Decodes a raw scan: consecutive 16-byte records of four little-endian
/// 32-bit floats (x, y, z, intensity). Bit-exact; no normalization.
pub fn read_point_scan(bytes: &[u8]) -> Result<Vec<Point3>, IngestError> {
    if bytes.len() % SCAN_RECORD_BYTES != 0 {
        return Err(IngestError::ScanLength { len: bytes.len() });
    }
    let mut points = Vec::with_capacity(bytes.len() / SCAN_RECORD_BYTES);
    for (record, chunk) in bytes.chunks_exact(SCAN_RECORD_BYTES).enumerate() {
        let f = |i: usize| f32::from_le_bytes(chunk[4 * i..4 * i + 4].try_into().unwrap());
        let (x, y, z, intensity) = (f(0), f(1), f(2), f(3));
        if !(x.is_finite() && y.is_finite() && z.is_finite() && intensity.is_finite()) {
            return Err(IngestError::NonFiniteScanValue { record });
        }
        points.push(Point3::new(x as f64, y as f64, z as f64, intensity as f64));
    }
    Ok(points)
}

/// Encodes points in the scan record format. Coordinates are narrowed to
/// f32; values that originated from a scan (or were rounded through f32 at
/// generation time) round-trip bit-exactly.
pub fn write_point_scan(points: &[Point3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * SCAN_RECORD_BYTES);
    for p in points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Rescales intensities into [0, 1]. Scans in the wild store reflectance
/// either as 0..1 floats or 0..255 counts; if anything exceeds 1 the whole
/// scan is divided by 255 and clamped.
pub fn normalize_intensities(points: &mut [Point3]) {
    let max = points.iter().map(|p| p.intensity).fold(0.0, f64::max);
    if max > 1.0 {
        for p in points.iter_mut() {
            p.intensity = (p.intensity / 255.0).clamp(0.0, 1.0);
        }
    } else {
        for p in points.iter_mut() {
            p.intensity = p.intensity.clamp(0.0, 1.0);
        }
    }
}

/// One object from a KITTI label file, still in the camera frame:
/// `location` is the bottom-center of the box (camera axes: x right,
/// y down, z forward) and `rotation_y` the heading about the camera y axis.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraBoxRecord {
    pub class: ClassId,
    pub height: f64,
    pub width: f64,
    pub length: f64,
    pub location: [f64; 3],
    pub rotation_y: f64,
}

/// Result of parsing a label file: the recognized boxes plus how many
/// lines were skipped because their type is not in the catalog
/// (e.g. "DontCare", "Misc").
#[derive(Clone, Debug, Default)]
pub struct LabelParse {
    pub boxes: Vec<CameraBoxRecord>,
    pub skipped: usize,
}

/// Parses a KITTI object label file: whitespace-delimited lines of 15
/// fields (type, truncated, occluded, alpha, 4 image-bbox values, h, w, l,
/// x, y, z, rotation_y). Lines whose type is not an object class of the
/// catalog are skipped and counted. Malformed lines with a recognized type
/// are errors carrying the 1-based line number.
pub fn read_labels(text: &str, catalog: &ClassCatalog) -> Result<LabelParse, IngestError> {
    let mut out = LabelParse::default();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let Some(class) = catalog.object_id_of(fields[0]) else {
            out.skipped += 1;
            continue;
        };
        if fields.len() != 15 {
            return Err(IngestError::Parse {
                line: line_no,
                message: format!("expected 15 fields, got {}", fields.len()),
            });
        }
        let num = |i: usize| -> Result<f64, IngestError> {
            fields[i].parse::<f64>().map_err(|_| IngestError::Parse {
                line: line_no,
                message: format!("field {} ({:?}) is not a number", i + 1, fields[i]),
            })
        };
        out.boxes.push(CameraBoxRecord {
            class,
            height: num(8)?,
            width: num(9)?,
            length: num(10)?,
            location: [num(11)?, num(12)?, num(13)?],
            rotation_y: num(14)?,
        });
    }
    Ok(out)
}

/// A proper rigid motion: orthonormal rotation (det +1) plus translation.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidTransform {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

const RIGID_TOL: f64 = 1e-6;

impl RigidTransform {
    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self, IngestError> {
        // R Rᵀ = I within tolerance
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| rotation[i][k] * rotation[j][k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > RIGID_TOL {
                    return Err(IngestError::NonRigid(format!(
                        "R*R^T entry ({i},{j}) = {dot:.9}, expected {expect}"
                    )));
                }
            }
        }
        let det = det3(&rotation);
        if (det - 1.0).abs() > RIGID_TOL {
            return Err(IngestError::NonRigid(format!("det(R) = {det:.9}, expected 1")));
        }
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn rotation(&self) -> &[[f64; 3]; 3] {
        &self.rotation
    }

    pub fn translation(&self) -> [f64; 3] {
        self.translation
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + self.translation[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + self.translation[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + self.translation[2],
        ]
    }

    /// Closed-form inverse: (Rᵀ, -Rᵀ t).
    pub fn inverse(&self) -> RigidTransform {
        let r = &self.rotation;
        let rt = [
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ];
        let t = self.translation;
        let nt = [
            -(rt[0][0] * t[0] + rt[0][1] * t[1] + rt[0][2] * t[2]),
            -(rt[1][0] * t[0] + rt[1][1] * t[1] + rt[1][2] * t[2]),
            -(rt[2][0] * t[0] + rt[2][1] * t[1] + rt[2][2] * t[2]),
        ];
        RigidTransform {
            rotation: rt,
            translation: nt,
        }
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

const CALIB_KEY: &str = "Tr_velo_to_cam";

/// Parses the sensor-to-camera transform from a KITTI calibration file:
/// the line keyed `Tr_velo_to_cam:` followed by 12 numbers (3x4 row-major).
pub fn read_calibration(text: &str) -> Result<RigidTransform, IngestError> {
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        if key.trim() != CALIB_KEY {
            continue;
        }
        let values: Result<Vec<f64>, _> = rest.split_whitespace().map(str::parse).collect();
        let values = values.map_err(|_| IngestError::Parse {
            line: line_no,
            message: "non-numeric calibration value".into(),
        })?;
        if values.len() != 12 {
            return Err(IngestError::Parse {
                line: line_no,
                message: format!("expected 12 values after {CALIB_KEY}, got {}", values.len()),
            });
        }
        let rotation = [
            [values[0], values[1], values[2]],
            [values[4], values[5], values[6]],
            [values[8], values[9], values[10]],
        ];
        let translation = [values[3], values[7], values[11]];
        return RigidTransform::new(rotation, translation);
    }
    Err(IngestError::MissingKey(CALIB_KEY))
}

/// Converts a camera-frame label box into a sensor-frame oriented box.
///
/// The camera-frame location is the bottom-center; it is lifted by h/2
/// along the box's up axis (-y in camera coordinates) to the geometric
/// center, then mapped through the inverse calibration. The heading becomes
/// yaw = -rotation_y - pi/2 and the (l, w, h) dims map to (length, width,
/// height).
pub fn box_to_sensor_frame(
    rec: &CameraBoxRecord,
    calib: &RigidTransform,
) -> Result<(OrientedBox3, ClassId), IngestError> {
    let center_cam = [
        rec.location[0],
        rec.location[1] - rec.height / 2.0,
        rec.location[2],
    ];
    let center = calib.inverse().apply(center_cam);
    let yaw = normalize_yaw(-rec.rotation_y - FRAC_PI_2);
    let dims = [rec.length, rec.width, rec.height];
    Ok((OrientedBox3::new(center, dims, yaw)?, rec.class))
}

/// Inverse of [`box_to_sensor_frame`]: sensor-frame box back to a
/// camera-frame record (bottom-center location, rotation_y heading).
pub fn box_to_camera_frame(
    sensor_box: &OrientedBox3,
    class: ClassId,
    calib: &RigidTransform,
) -> CameraBoxRecord {
    let center_cam = calib.apply(sensor_box.center());
    let [length, width, height] = sensor_box.dims();
    let location = [center_cam[0], center_cam[1] + height / 2.0, center_cam[2]];
    CameraBoxRecord {
        class,
        height,
        width,
        length,
        location,
        rotation_y: normalize_yaw(-sensor_box.yaw() - FRAC_PI_2),
    }
}

/// Loads a KITTI-format directory: `velodyne/*.bin` scans with matching
/// `label_2/<id>.txt` and `calib/<id>.txt` files. Scene ids are the sorted
/// scan file stems. Intensities are normalized into [0, 1]; label boxes are
/// converted into the sensor frame. Returns the scenes plus the total count
/// of skipped unknown-type label lines.
pub fn load_kitti_dir(dir: &Path, catalog: &ClassCatalog) -> Result<(Vec<Scene>, usize), IngestError> {
    let velo = dir.join("velodyne");
    let mut ids: Vec<String> = std::fs::read_dir(&velo)
        .map_err(|e| IngestError::io(&velo, e))?
        .filter_map(|entry| {
            let path = entry.ok()?.path();
            if path.extension().is_some_and(|e| e == "bin") {
                Some(path.file_stem()?.to_string_lossy().into_owned())
            } else {
                None
            }
        })
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(IngestError::BadManifest(format!(
            "no .bin scans under {}",
            velo.display()
        )));
    }

    let mut scenes = Vec::with_capacity(ids.len());
    let mut skipped = 0;
    for id in ids {
        let scan_path = velo.join(format!("{id}.bin"));
        let bytes = std::fs::read(&scan_path).map_err(|e| IngestError::io(&scan_path, e))?;
        let mut points = read_point_scan(&bytes)?;
        normalize_intensities(&mut points);

        let label_path = dir.join("label_2").join(format!("{id}.txt"));
        let label_text =
            std::fs::read_to_string(&label_path).map_err(|e| IngestError::io(&label_path, e))?;
        let parsed = read_labels(&label_text, catalog)?;
        skipped += parsed.skipped;

        let calib_path = dir.join("calib").join(format!("{id}.txt"));
        let calib_text =
            std::fs::read_to_string(&calib_path).map_err(|e| IngestError::io(&calib_path, e))?;
        let calib = read_calibration(&calib_text)?;

        let annotations = parsed
            .boxes
            .iter()
            .map(|rec| box_to_sensor_frame(rec, &calib))
            .collect::<Result<Vec<_>, _>>()?;
        scenes.push(Scene {
            id,
            points,
            annotations,
        });
    }
    Ok((scenes, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn le_bytes(vals: &[f32]) -> Vec<u8> {
        vals.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn scan_decodes_two_points_exactly() {
        let bytes = le_bytes(&[1.0, 2.0, 3.0, 0.5, -1.0, 0.0, 2.0, 0.1]);
        let points = read_point_scan(&bytes).unwrap();
        assert_eq!(points.len(), 2);
        assert_eq!(points[0], Point3::new(1.0, 2.0, 3.0, 0.5));
        assert_eq!(points[1].x, -1.0);
        assert_eq!(points[1].intensity, 0.1f32 as f64);
    }

    #[test]
    fn scan_empty_and_bad_length() {
        assert!(read_point_scan(&[]).unwrap().is_empty());
        let err = read_point_scan(&[0u8; 17]).unwrap_err();
        assert!(matches!(err, IngestError::ScanLength { len: 17 }));
    }

    #[test]
    fn scan_rejects_non_finite() {
        let bytes = le_bytes(&[1.0, f32::NAN, 0.0, 0.0]);
        assert!(matches!(
            read_point_scan(&bytes),
            Err(IngestError::NonFiniteScanValue { record: 0 })
        ));
    }

    #[test]
    fn scan_round_trips_f32_values() {
        let points = vec![
            Point3::new(1.5, -2.25, 0.125, 0.5),
            Point3::new(0.1f32 as f64, 0.2f32 as f64, 0.3f32 as f64, 0.7f32 as f64),
        ];
        let bytes = write_point_scan(&points);
        assert_eq!(read_point_scan(&bytes).unwrap(), points);
    }

    #[test]
    fn labels_parse_car_line() {
        let cat = ClassCatalog::kitti_default();
        let text = "Car 0 0 0 0 0 0 0 1.5 1.6 3.9 2.0 1.7 10.0 0.0\n";
        let parsed = read_labels(text, &cat).unwrap();
        assert_eq!(parsed.skipped, 0);
        assert_eq!(parsed.boxes.len(), 1);
        let b = &parsed.boxes[0];
        assert_eq!(b.class, cat.id_of("Car").unwrap());
        assert_eq!((b.height, b.width, b.length), (1.5, 1.6, 3.9));
        assert_eq!(b.location, [2.0, 1.7, 10.0]);
        assert_eq!(b.rotation_y, 0.0);
    }

    #[test]
    fn labels_skip_unknown_types() {
        let cat = ClassCatalog::kitti_default();
        let text = "Misc 0 0 0 0 0 0 0 1 1 1 0 0 5 0\nDontCare -1 -1 -10 0 0 0 0 -1 -1 -1 -1000 -1000 -1000 -10\n";
        let parsed = read_labels(text, &cat).unwrap();
        assert!(parsed.boxes.is_empty());
        assert_eq!(parsed.skipped, 2);
    }

    #[test]
    fn labels_error_names_line() {
        let cat = ClassCatalog::kitti_default();
        let text = "Car 0 0 0 0 0 0 0 1.5 1.6 3.9 2.0 1.7 10.0 0.0\nCar 0 0 0 0 0 0 0 1.5 1.6 3.9 2.0 1.7 10.0\n";
        match read_labels(text, &cat) {
            Err(IngestError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let text = "Car 0 0 0 0 0 0 0 xyz 1.6 3.9 2.0 1.7 10.0 0.0\n";
        assert!(matches!(
            read_labels(text, &cat),
            Err(IngestError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn calibration_identity_and_translation() {
        let text = "Tr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n";
        let t = read_calibration(text).unwrap();
        assert_eq!(t, RigidTransform::identity());

        let text = "P0: 1 2 3\nTr_velo_to_cam: 1 0 0 0.0 0 1 0 -0.08 0 0 1 -0.27\n";
        let t = read_calibration(text).unwrap();
        assert_eq!(t.translation(), [0.0, -0.08, -0.27]);
        assert_eq!(t.rotation(), RigidTransform::identity().rotation());
    }

    #[test]
    fn calibration_missing_key_and_non_rigid() {
        assert!(matches!(
            read_calibration("P0: 1 0 0 0 0 1 0 0 0 0 1 0\n"),
            Err(IngestError::MissingKey(_))
        ));
        // R scaled by 2: det = 8
        let text = "Tr_velo_to_cam: 2 0 0 0 0 2 0 0 0 0 2 0\n";
        assert!(matches!(read_calibration(text), Err(IngestError::NonRigid(_))));
    }

    #[test]
    fn rigid_inverse_composes_to_identity() {
        let yaw: f64 = 0.4;
        let (s, c) = yaw.sin_cos();
        let t = RigidTransform::new(
            [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            [1.0, -2.0, 0.5],
        )
        .unwrap();
        let p = [3.0, 4.0, -1.0];
        let q = t.inverse().apply(t.apply(p));
        for k in 0..3 {
            assert!((q[k] - p[k]).abs() < 1e-12);
        }
    }

    /// The canonical velo->cam axis permutation: x_cam = -y_velo,
    /// y_cam = -z_velo, z_cam = x_velo.
    fn canonical_calib(translation: [f64; 3]) -> RigidTransform {
        RigidTransform::new(
            [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]],
            translation,
        )
        .unwrap()
    }

    /// Camera-frame corners of a label box: bottom-center location, length
    /// along the heading (rotation about y), height upward (-y).
    fn camera_box_corners(rec: &CameraBoxRecord) -> Vec<[f64; 3]> {
        let (s, c) = rec.rotation_y.sin_cos();
        let mut out = Vec::new();
        for sx in [-0.5, 0.5] {
            for sy in [0.0, -1.0] {
                for sz in [-0.5, 0.5] {
                    let bx = sx * rec.length;
                    let by = sy * rec.height;
                    let bz = sz * rec.width;
                    out.push([
                        rec.location[0] + c * bx + s * bz,
                        rec.location[1] + by,
                        rec.location[2] - s * bx + c * bz,
                    ]);
                }
            }
        }
        out
    }

    fn sorted_corners(mut corners: Vec<[f64; 3]>) -> Vec<[f64; 3]> {
        corners.sort_by(|a, b| a.partial_cmp(b).unwrap());
        corners
    }

    #[test]
    fn box_center_is_lifted_by_half_height() {
        // Identity calibration (hypothetical): the center must sit h/2 along
        // the camera up axis (-y) from the bottom-center, and
        // rotation_y = -pi/2 maps to yaw 0. Verified through the corner
        // oracle by refitting center and dims.
        let rec = CameraBoxRecord {
            class: ClassId(1),
            height: 2.0,
            width: 1.0,
            length: 4.0,
            location: [0.0, 0.0, 10.0],
            rotation_y: -FRAC_PI_2,
        };
        let calib = RigidTransform::identity();
        let (b, _) = box_to_sensor_frame(&rec, &calib).unwrap();
        assert_eq!(b.yaw(), 0.0);
        assert_eq!(b.dims(), [4.0, 1.0, 2.0]);
        // refit center from the brute-forced camera corners
        let corners = camera_box_corners(&rec);
        let mut mean = [0.0; 3];
        for c in &corners {
            for k in 0..3 {
                mean[k] += c[k] / 8.0;
            }
        }
        assert_eq!(b.center(), [0.0, -1.0, 10.0]);
        for k in 0..3 {
            assert!((b.center()[k] - mean[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn corner_sets_match_through_canonical_calibration() {
        // With a physical (up-axis preserving) calibration, the sensor box's
        // corner set must equal the calibration-inverse images of the
        // camera box's corners, within 1e-6 m.
        let calib = canonical_calib([0.27, -0.08, -0.42]);
        let mut rng_state = 99u64;
        for _ in 0..50 {
            let r = |lo: f64, hi: f64, state: &mut u64| {
                let u = (crate::util::splitmix64(state) >> 11) as f64 / (1u64 << 53) as f64;
                lo + u * (hi - lo)
            };
            let rec = CameraBoxRecord {
                class: ClassId(1),
                height: r(0.5, 3.0, &mut rng_state),
                width: r(0.5, 3.0, &mut rng_state),
                length: r(0.5, 6.0, &mut rng_state),
                location: [
                    r(-10.0, 10.0, &mut rng_state),
                    r(-2.0, 2.0, &mut rng_state),
                    r(2.0, 40.0, &mut rng_state),
                ],
                rotation_y: r(-PI, PI, &mut rng_state),
            };
            let (sensor_box, _) = box_to_sensor_frame(&rec, &calib).unwrap();
            let inv = calib.inverse();
            let expect = sorted_corners(
                camera_box_corners(&rec)
                    .into_iter()
                    .map(|c| inv.apply(c))
                    .collect(),
            );
            let got = sorted_corners(sensor_box.corners().to_vec());
            for (a, b) in expect.iter().zip(&got) {
                for k in 0..3 {
                    assert!(
                        (a[k] - b[k]).abs() < 1e-6,
                        "corner mismatch: {a:?} vs {b:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn box_round_trips_sensor_camera_sensor() {
        let calib = canonical_calib([0.1, -0.05, -0.3]);
        let b = OrientedBox3::new([12.0, -3.0, -0.8], [4.2, 1.8, 1.5], 0.6).unwrap();
        let rec = box_to_camera_frame(&b, ClassId(2), &calib);
        let (back, class) = box_to_sensor_frame(&rec, &calib).unwrap();
        assert_eq!(class, ClassId(2));
        for k in 0..3 {
            assert!((back.center()[k] - b.center()[k]).abs() < 1e-9);
            assert!((back.dims()[k] - b.dims()[k]).abs() < 1e-9);
        }
        assert!((back.yaw() - b.yaw()).abs() < 1e-9);
    }

    #[test]
    fn box_volume_preserved_through_frames() {
        let calib = canonical_calib([0.2, 0.1, -0.9]);
        let rec = CameraBoxRecord {
            class: ClassId(1),
            height: 1.7,
            width: 1.8,
            length: 4.4,
            location: [3.0, 1.2, 15.0],
            rotation_y: 0.3,
        };
        let (b, _) = box_to_sensor_frame(&rec, &calib).unwrap();
        let vol_in = rec.height * rec.width * rec.length;
        assert!((b.volume() - vol_in).abs() / vol_in < 1e-9);
    }

    #[test]
    fn intensity_normalization_handles_byte_scale() {
        let mut points = vec![
            Point3::new(0.0, 0.0, 0.0, 0.0),
            Point3::new(0.0, 0.0, 0.0, 128.0),
            Point3::new(0.0, 0.0, 0.0, 255.0),
        ];
        normalize_intensities(&mut points);
        assert_eq!(points[2].intensity, 1.0);
        assert!((points[1].intensity - 128.0 / 255.0).abs() < 1e-12);

        let mut unit = vec![Point3::new(0.0, 0.0, 0.0, 0.5)];
        normalize_intensities(&mut unit);
        assert_eq!(unit[0].intensity, 0.5);
    }
}
