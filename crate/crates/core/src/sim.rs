//! Deterministic synthetic-scene generator and evaluation harness.
//!
//! Scenes are spheres: their image is an analytically checkable disk and
//! their depth is the exact ray-sphere intersection, which gives the raw
//! centroid the same camera-facing bias a real sensor would produce. Noise
//! enters as per-frame Gaussian jitter of the rendered position, Gaussian
//! depth noise, per-pixel mask dropout, and detection false
//! negatives/positives. Frame RNG streams derive from (seed, frame index),
//! so logs are a pure function of (spec, seed).

use crate::geometry::{self, Frame, Intrinsics, Point3, Pose};
use crate::graph::RoomNode;
use crate::io::{FrameLogWriter, FrameTruth, GroundTruth, IoError};
use crate::mask::{DepthImage, Mask};
use crate::pipeline::{Detection, FrameInput, RelationDetection};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("frame index {0} outside trajectory of length {1}")]
    IndexOutOfRange(usize, usize),
    #[error("no matched samples to evaluate")]
    NoSamples,
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Rooms section reused by the scene spec (same schema as the room file).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoomsSection {
    pub rooms: Vec<RoomNode>,
    #[serde(default)]
    pub connections: Vec<[String; 2]>,
}

/// A simulated object: a sphere with a label and an optional lifespan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub label: String,
    /// True center in map-frame meters.
    pub position: [f64; 3],
    pub radius: f64,
    /// First frame the object exists in the scene.
    #[serde(default)]
    pub appear_frame: u64,
    /// Frame the object is removed from the scene, when set.
    #[serde(default)]
    pub disappear_frame: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Per-axis std of the map-frame position jitter applied before
    /// rendering each frame, meters.
    pub centroid_jitter_std: [f64; 3],
    /// Std of per-pixel depth noise, meters.
    pub depth_noise_std: f64,
    /// Probability each mask pixel is dropped.
    pub mask_dropout: f64,
    /// Probability a visible object yields no detection.
    pub false_negative_rate: f64,
    /// Probability a frame gains one spurious detection.
    pub false_positive_rate: f64,
    /// Half-width of the uniform jitter applied to relation probabilities.
    pub relation_jitter: f64,
    /// Probability an object's jitter draws from the outlier component
    /// instead (a mostly-right detector occasionally latching onto a wrong
    /// region produces exactly this spiky error profile).
    pub outlier_rate: f64,
    /// Per-axis std of the outlier jitter component, meters.
    pub outlier_jitter_std: [f64; 3],
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            centroid_jitter_std: [0.0, 0.0, 0.0],
            depth_noise_std: 0.0,
            mask_dropout: 0.0,
            false_negative_rate: 0.0,
            false_positive_rate: 0.0,
            relation_jitter: 0.05,
            outlier_rate: 0.0,
            outlier_jitter_std: [0.0, 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelationSpec {
    /// Subject and object by label.
    pub subject: String,
    pub object: String,
    pub predicate: String,
    pub base_probability: f64,
}

fn default_intrinsics() -> Intrinsics {
    Intrinsics::new(525.0, 525.0, 319.5, 239.5, 640, 480).expect("valid default intrinsics")
}

/// Full scene description; JSON-serializable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub rooms: RoomsSection,
    #[serde(default = "default_intrinsics")]
    pub intrinsics: Intrinsics,
    pub objects: Vec<ObjectSpec>,
    /// One camera-in-map pose per frame.
    pub trajectory: Vec<Pose>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub relations: Vec<RelationSpec>,
}

impl SceneSpec {
    pub fn from_json(text: &str) -> Result<SceneSpec, SimError> {
        let spec: SceneSpec = serde_json::from_str(text).map_err(|e| SimError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.trajectory.is_empty() {
            return Err(SimError::InvalidSpec("trajectory must be nonempty".into()));
        }
        let mut labels = std::collections::BTreeSet::new();
        for o in &self.objects {
            if !(o.radius > 0.0) {
                return Err(SimError::InvalidSpec(format!("object {} radius must be positive", o.label)));
            }
            if !labels.insert(&o.label) {
                // Evaluation matches estimates to truth by label.
                return Err(SimError::InvalidSpec(format!("duplicate object label {}", o.label)));
            }
        }
        for r in [
            self.noise.mask_dropout,
            self.noise.false_negative_rate,
            self.noise.false_positive_rate,
            self.noise.outlier_rate,
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(SimError::InvalidSpec(format!("rate {r} outside [0,1]")));
            }
        }
        for rel in &self.relations {
            if !labels.contains(&rel.subject) || !labels.contains(&rel.object) {
                return Err(SimError::InvalidSpec(format!(
                    "relation {} -> {} references unknown labels",
                    rel.subject, rel.object
                )));
            }
        }
        Ok(())
    }

    /// Objects present in the scene at this frame.
    fn active_objects(&self, frame_idx: u64) -> impl Iterator<Item = &ObjectSpec> {
        self.objects.iter().filter(move |o| {
            frame_idx >= o.appear_frame && o.disappear_frame.is_none_or(|d| frame_idx < d)
        })
    }
}

/// RNG stream for one frame: same (seed, frame) always replays identically.
pub fn frame_rng(seed: u64, frame_idx: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame_idx.wrapping_add(1));
    rng
}

struct RenderObject {
    label: String,
    /// Camera-frame center after jitter.
    center: Vector3<f64>,
    radius: f64,
    spurious: bool,
}

/// Renders one frame of the scene: masks, depth, detections and relation
/// detections, with all configured noise applied.
pub fn render_frame(spec: &SceneSpec, frame_idx: usize, rng: &mut ChaCha8Rng) -> Result<FrameInput, SimError> {
    if frame_idx >= spec.trajectory.len() {
        return Err(SimError::IndexOutOfRange(frame_idx, spec.trajectory.len()));
    }
    let pose = spec.trajectory[frame_idx];
    let k = &spec.intrinsics;
    let (w, h) = (k.width as usize, k.height as usize);

    let jitter: Vec<Normal<f64>> = spec
        .noise
        .centroid_jitter_std
        .iter()
        .map(|&s| Normal::new(0.0, s.max(1e-300)).expect("nonnegative std"))
        .collect();
    let outlier_jitter: Vec<Normal<f64>> = spec
        .noise
        .outlier_jitter_std
        .iter()
        .map(|&s| Normal::new(0.0, s.max(1e-300)).expect("nonnegative std"))
        .collect();

    // Visibility pass. RNG order is fixed: per active object, an optional
    // outlier draw, 3 jitter draws, then one false-negative draw when
    // visible.
    let mut rendered: Vec<RenderObject> = Vec::new();
    for obj in spec.active_objects(frame_idx as u64) {
        let component = if spec.noise.outlier_rate > 0.0 && rng.random::<f64>() < spec.noise.outlier_rate {
            &outlier_jitter
        } else {
            &jitter
        };
        let jittered = Vector3::new(
            obj.position[0] + component[0].sample(rng),
            obj.position[1] + component[1].sample(rng),
            obj.position[2] + component[2].sample(rng),
        );
        let cam = geometry::map_to_camera(&Point3::from_vector(jittered, Frame::Map), &pose);
        // Visible: fully in front of the camera with the center in-bounds.
        if cam.z <= obj.radius {
            continue;
        }
        let Ok((u, v)) = geometry::project(&cam, k) else { continue };
        if u < 0.0 || u >= k.width as f64 || v < 0.0 || v >= k.height as f64 {
            continue;
        }
        if spec.noise.false_negative_rate > 0.0 && rng.random::<f64>() < spec.noise.false_negative_rate {
            continue;
        }
        rendered.push(RenderObject { label: obj.label.clone(), center: cam.vector(), radius: obj.radius, spurious: false });
    }

    // Optional spurious sphere, rendered like a real one.
    if spec.noise.false_positive_rate > 0.0 && rng.random::<f64>() < spec.noise.false_positive_rate {
        let u = rng.random_range(0.25 * k.width as f64..0.75 * k.width as f64);
        let v = rng.random_range(0.25 * k.height as f64..0.75 * k.height as f64);
        let z = rng.random_range(1.0..3.0);
        let radius = rng.random_range(0.04..0.12);
        let center = geometry::unproject(u, v, z, k).expect("in-bounds spurious center").vector();
        rendered.push(RenderObject { label: "spurious".into(), center, radius, spurious: true });
    }

    // Depth buffer with per-pixel ownership (nearest surface wins).
    let mut depth_m = vec![f64::INFINITY; w * h];
    let mut owner = vec![usize::MAX; w * h];
    let depth_noise = Normal::new(0.0, spec.noise.depth_noise_std.max(1e-300)).expect("nonnegative std");
    for (obj_idx, obj) in rendered.iter().enumerate() {
        let z = obj.center.z;
        let (uc, vc) = geometry::project(&Point3::from_vector(obj.center, Frame::Camera), k)
            .expect("center in front of camera");
        let r_px_x = k.fx * obj.radius / z;
        let r_px_y = k.fy * obj.radius / z;
        let x0 = (uc - r_px_x).floor().max(0.0) as usize;
        let x1 = (uc + r_px_x).ceil().min(k.width as f64 - 1.0) as usize;
        let y0 = (vc - r_px_y).floor().max(0.0) as usize;
        let y1 = (vc + r_px_y).ceil().min(k.height as f64 - 1.0) as usize;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let du = (x as f64 - uc) / r_px_x;
                let dv = (y as f64 - vc) / r_px_y;
                if du * du + dv * dv > 1.0 {
                    continue;
                }
                // Exact ray-sphere intersection along this pixel's ray.
                let dir = Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0).normalize();
                let tc = dir.dot(&obj.center);
                let disc = tc * tc - obj.center.norm_squared() + obj.radius * obj.radius;
                if disc < 0.0 {
                    continue;
                }
                let t = tc - disc.sqrt();
                if t <= 0.0 {
                    continue;
                }
                let mut surface_z = t * dir.z;
                if spec.noise.depth_noise_std > 0.0 {
                    surface_z += depth_noise.sample(rng);
                }
                let idx = y * w + x;
                if surface_z > 0.001 && surface_z < depth_m[idx] {
                    depth_m[idx] = surface_z;
                    owner[idx] = obj_idx;
                }
            }
        }
    }

    // Masks from ownership, with per-pixel dropout.
    let mut bitmaps: Vec<Vec<bool>> = rendered.iter().map(|_| vec![false; w * h]).collect();
    for (idx, &o) in owner.iter().enumerate() {
        if o != usize::MAX {
            bitmaps[o][idx] = true;
        }
    }
    if spec.noise.mask_dropout > 0.0 {
        for bitmap in bitmaps.iter_mut() {
            for bit in bitmap.iter_mut() {
                if *bit && rng.random::<f64>() < spec.noise.mask_dropout {
                    *bit = false;
                }
            }
        }
    }

    let values: Vec<u16> = depth_m
        .iter()
        .map(|&z| {
            if z.is_finite() {
                (z * 1000.0).round().clamp(1.0, 65535.0) as u16
            } else {
                0
            }
        })
        .collect();
    let depth = DepthImage::new(k.width, k.height, values).expect("buffer sized to intrinsics");

    // Detection list; empty post-dropout masks vanish.
    let mut detections: Vec<Detection> = Vec::new();
    let mut det_idx_of_label: BTreeMap<&str, usize> = BTreeMap::new();
    for (obj_idx, obj) in rendered.iter().enumerate() {
        let mask = Mask::encode(k.width, k.height, &bitmaps[obj_idx]).expect("sized bitmap");
        if mask.is_empty() {
            continue;
        }
        let score = 0.85 + 0.14 * rng.random::<f64>();
        if !obj.spurious {
            det_idx_of_label.insert(obj.label.as_str(), detections.len());
        }
        detections.push(Detection { label: obj.label.clone(), score, mask });
    }

    // Relation detections for pairs detected this frame.
    let mut relations = Vec::new();
    for rel in &spec.relations {
        let (Some(&s), Some(&o)) = (det_idx_of_label.get(rel.subject.as_str()), det_idx_of_label.get(rel.object.as_str()))
        else {
            continue;
        };
        let jitter_amt = spec.noise.relation_jitter;
        let p = (rel.base_probability + rng.random_range(-jitter_amt..=jitter_amt)).clamp(0.0, 1.0);
        relations.push(RelationDetection { subject: s, object: o, predicate: rel.predicate.clone(), probability: p });
    }

    Ok(FrameInput { frame_id: frame_idx as u64, camera_pose: pose, intrinsics: *k, depth, detections, relations })
}

/// Paths produced by [`generate_log`].
#[derive(Debug, Clone)]
pub struct GeneratedLog {
    pub log_path: std::path::PathBuf,
    pub truth_path: std::path::PathBuf,
    pub frames: usize,
}

/// Renders the whole trajectory to `out_dir`: `log.jsonl`, `frames/*.pgm`
/// and `ground_truth.json`. Byte-identical for identical (spec, seed).
pub fn generate_log(spec: &SceneSpec, seed: u64, out_dir: &Path) -> Result<GeneratedLog, SimError> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(IoError::from)?;
    let log_path = out_dir.join("log.jsonl");
    let truth_path = out_dir.join("ground_truth.json");

    let mut writer = FrameLogWriter::create(&log_path)?;
    let mut truth = GroundTruth::default();
    for frame_idx in 0..spec.trajectory.len() {
        let mut rng = frame_rng(seed, frame_idx as u64);
        let frame = render_frame(spec, frame_idx, &mut rng)?;
        writer.write_frame(&frame)?;
        let positions: BTreeMap<String, [f64; 3]> = spec
            .active_objects(frame_idx as u64)
            .map(|o| (o.label.clone(), o.position))
            .collect();
        truth.frames.push(FrameTruth { frame_id: frame_idx as u64, positions });
    }
    writer.finish()?;
    truth.save(&truth_path)?;
    Ok(GeneratedLog { log_path, truth_path, frames: spec.trajectory.len() })
}

/// One matched (estimate, truth) pair.
#[derive(Debug, Clone, Copy)]
pub struct EvalSample {
    pub estimate: [f64; 3],
    pub truth: [f64; 3],
}

/// Table-style evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean true position over samples, per axis.
    pub mean_true_position: [f64; 3],
    /// Mean estimated position over samples, per axis.
    pub mean_position: [f64; 3],
    /// Mean of |estimate - truth| per axis.
    pub mean_abs_error: [f64; 3],
    /// Population standard deviation of (estimate - truth) per axis.
    pub error_std: [f64; 3],
    pub samples: usize,
    /// Map objects beyond the matched truth objects.
    pub duplicate_objects: usize,
    /// Truth objects with no matching map object.
    pub missed_objects: usize,
}

/// Position statistics over matched samples plus identity metrics from the
/// final map: `final_labels` are the labels of the map's objects,
/// `truth_labels` the distinct ground-truth labels.
pub fn evaluate(
    samples: &[EvalSample],
    final_labels: &[String],
    truth_labels: &[String],
) -> Result<EvalReport, SimError> {
    if samples.is_empty() {
        return Err(SimError::NoSamples);
    }
    let n = samples.len() as f64;
    let mut mean_true = [0.0; 3];
    let mut mean_est = [0.0; 3];
    let mut mae = [0.0; 3];
    for s in samples {
        for a in 0..3 {
            mean_true[a] += s.truth[a] / n;
            mean_est[a] += s.estimate[a] / n;
            mae[a] += (s.estimate[a] - s.truth[a]).abs() / n;
        }
    }
    let mut std = [0.0; 3];
    for a in 0..3 {
        let mean_err: f64 = samples.iter().map(|s| s.estimate[a] - s.truth[a]).sum::<f64>() / n;
        let var: f64 =
            samples.iter().map(|s| (s.estimate[a] - s.truth[a] - mean_err).powi(2)).sum::<f64>() / n;
        std[a] = var.sqrt();
    }

    let truth_set: std::collections::BTreeSet<&String> = truth_labels.iter().collect();
    let matched_truth: std::collections::BTreeSet<&String> =
        final_labels.iter().filter(|l| truth_set.contains(l)).collect();
    let duplicates = final_labels.len() - matched_truth.len();
    let missed = truth_set.len() - matched_truth.len();

    Ok(EvalReport {
        mean_true_position: mean_true,
        mean_position: mean_est,
        mean_abs_error: mae,
        error_std: std,
        samples: samples.len(),
        duplicate_objects: duplicates,
        missed_objects: missed,
    })
}

/// Convenience for building a single-object static spec with one room.
pub fn static_scene_spec(
    label: &str,
    position: [f64; 3],
    radius: f64,
    camera: Pose,
    frames: usize,
    noise: NoiseSpec,
) -> SceneSpec {
    SceneSpec {
        rooms: RoomsSection {
            rooms: vec![RoomNode {
                id: "r1".into(),
                name: "Lab".into(),
                polygon: vec![[-50.0, -50.0], [50.0, -50.0], [50.0, 50.0], [-50.0, 50.0]],
            }],
            connections: vec![],
        },
        intrinsics: default_intrinsics(),
        objects: vec![ObjectSpec {
            label: label.into(),
            position,
            radius,
            appear_frame: 0,
            disappear_frame: None,
        }],
        trajectory: vec![camera; frames],
        noise,
        relations: vec![],
    }
}

/// Room-file JSON for a spec's rooms section.
pub fn rooms_json(spec: &SceneSpec) -> String {
    serde_json::to_string(&spec.rooms).expect("serializable rooms")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::centroid3d;

    fn look_at_z(position: [f64; 3], distance: f64) -> Pose {
        // Camera on the -z side of the object, looking along +z.
        Pose::from_translation(position[0], position[1], position[2] - distance)
    }

    #[test]
    fn on_axis_sphere_renders_analytic_disk() {
        // Sphere at 2 m on the optical axis, radius 0.1: disk of radius
        // about fx * r / z = 26.25 px at the principal point.
        let mut spec = static_scene_spec("ball", [0.0, 0.0, 2.0], 0.1, Pose::identity(), 1, NoiseSpec::default());
        spec.intrinsics = Intrinsics::new(525.0, 525.0, 319.5, 239.5, 640, 480).unwrap();
        let frame = render_frame(&spec, 0, &mut frame_rng(1, 0)).unwrap();
        assert_eq!(frame.detections.len(), 1);
        let mask = &frame.detections[0].mask;
        let expected_r = 525.0 * 0.1 / 2.0;
        let expected_area = std::f64::consts::PI * expected_r * expected_r;
        let area = mask.area() as f64;
        assert!(
            (area - expected_area).abs() / expected_area < 0.05,
            "area {area} vs analytic {expected_area}"
        );
        // Centered at the principal point.
        let (mut su, mut sv, mut n) = (0.0, 0.0, 0.0);
        for (x, y) in mask.set_pixels() {
            su += x as f64;
            sv += y as f64;
            n += 1.0;
        }
        assert!((su / n - 319.5).abs() < 1.0);
        assert!((sv / n - 239.5).abs() < 1.0);
    }

    #[test]
    fn behind_camera_absent() {
        let spec = static_scene_spec("ball", [0.0, 0.0, -2.0], 0.1, Pose::identity(), 1, NoiseSpec::default());
        let frame = render_frame(&spec, 0, &mut frame_rng(1, 0)).unwrap();
        assert!(frame.detections.is_empty());
    }

    #[test]
    fn zero_noise_centroid_consistency() {
        // Small radius keeps the visible-cap bias under 1 cm: the mean
        // surface point sits about (2/3) r closer to the camera.
        let for_radius = |radius: f64| {
            let pos = [0.3, -0.2, 1.1];
            let spec = static_scene_spec("ball", pos, radius, look_at_z(pos, 1.0), 1, NoiseSpec::default());
            let frame = render_frame(&spec, 0, &mut frame_rng(5, 0)).unwrap();
            assert_eq!(frame.detections.len(), 1);
            let c = centroid3d(&frame.detections[0].mask, &frame.depth, &frame.intrinsics, &frame.camera_pose).unwrap();
            ((c.vector() - Vector3::new(pos[0], pos[1], pos[2])).norm(), c)
        };
        let (err_small, _) = for_radius(0.01);
        assert!(err_small < 0.01, "zero-noise centroid error {err_small}");
        // The bias is real and grows with the radius: that is the error
        // the filter corrects.
        let (err_large, c) = for_radius(0.1);
        assert!(err_large > 0.03, "expected visible-cap bias, got {err_large} at {c:?}");
    }

    #[test]
    fn render_is_deterministic_per_seed_and_frame() {
        let noise = NoiseSpec {
            centroid_jitter_std: [0.05; 3],
            depth_noise_std: 0.01,
            mask_dropout: 0.1,
            ..Default::default()
        };
        let pos = [0.0, 0.0, 2.0];
        let spec = static_scene_spec("ball", pos, 0.08, Pose::identity(), 3, noise);
        let a = render_frame(&spec, 2, &mut frame_rng(9, 2)).unwrap();
        let b = render_frame(&spec, 2, &mut frame_rng(9, 2)).unwrap();
        assert_eq!(a.detections[0].mask, b.detections[0].mask);
        assert_eq!(a.depth, b.depth);
        let c = render_frame(&spec, 2, &mut frame_rng(10, 2)).unwrap();
        assert_ne!(a.detections[0].mask, c.detections[0].mask);
    }

    #[test]
    fn occlusion_assigns_pixels_to_nearest() {
        let mut spec = static_scene_spec("front", [0.0, 0.0, 1.5], 0.08, Pose::identity(), 1, NoiseSpec::default());
        spec.objects.push(ObjectSpec {
            label: "back".into(),
            position: [0.0, 0.0, 2.5],
            radius: 0.3,
            appear_frame: 0,
            disappear_frame: None,
        });
        let frame = render_frame(&spec, 0, &mut frame_rng(1, 0)).unwrap();
        assert_eq!(frame.detections.len(), 2);
        let front = frame.detections.iter().find(|d| d.label == "front").unwrap();
        let back = frame.detections.iter().find(|d| d.label == "back").unwrap();
        // No shared pixels, and the back disk has a hole where the front is.
        assert_eq!(crate::mask::iou(&front.mask, &back.mask).unwrap(), 0.0);
        let solo = static_scene_spec("back", [0.0, 0.0, 2.5], 0.3, Pose::identity(), 1, NoiseSpec::default());
        let solo_frame = render_frame(&solo, 0, &mut frame_rng(1, 0)).unwrap();
        assert!(back.mask.area() < solo_frame.detections[0].mask.area());
    }

    #[test]
    fn lifespan_controls_visibility() {
        let mut spec = static_scene_spec("ball", [0.0, 0.0, 2.0], 0.1, Pose::identity(), 5, NoiseSpec::default());
        spec.objects[0].appear_frame = 1;
        spec.objects[0].disappear_frame = Some(3);
        for (idx, expect) in [(0usize, 0usize), (1, 1), (2, 1), (3, 0), (4, 0)] {
            let frame = render_frame(&spec, idx, &mut frame_rng(1, idx as u64)).unwrap();
            assert_eq!(frame.detections.len(), expect, "frame {idx}");
        }
    }

    #[test]
    fn relation_detections_for_visible_pairs() {
        let mut spec = static_scene_spec("cup", [0.0, 0.0, 2.0], 0.06, Pose::identity(), 1, NoiseSpec::default());
        spec.objects.push(ObjectSpec {
            label: "table".into(),
            position: [0.4, 0.1, 2.0],
            radius: 0.12,
            appear_frame: 0,
            disappear_frame: None,
        });
        spec.relations.push(RelationSpec {
            subject: "cup".into(),
            object: "table".into(),
            predicate: "on".into(),
            base_probability: 0.9,
        });
        let frame = render_frame(&spec, 0, &mut frame_rng(3, 0)).unwrap();
        assert_eq!(frame.relations.len(), 1);
        let rel = &frame.relations[0];
        assert_eq!(frame.detections[rel.subject].label, "cup");
        assert_eq!(frame.detections[rel.object].label, "table");
        assert!((rel.probability - 0.9).abs() <= 0.05 + 1e-12);
    }

    #[test]
    fn generate_log_writes_files_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let spec = static_scene_spec(
            "ball",
            [0.0, 0.0, 2.0],
            0.08,
            Pose::identity(),
            4,
            NoiseSpec { centroid_jitter_std: [0.02; 3], mask_dropout: 0.05, ..Default::default() },
        );
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        let out_c = dir.path().join("c");
        let gen_a = generate_log(&spec, 11, &out_a).unwrap();
        generate_log(&spec, 11, &out_b).unwrap();
        generate_log(&spec, 12, &out_c).unwrap();
        assert_eq!(gen_a.frames, 4);
        assert!(out_a.join("frames/000003.pgm").exists());

        let log_a = std::fs::read(out_a.join("log.jsonl")).unwrap();
        let log_b = std::fs::read(out_b.join("log.jsonl")).unwrap();
        let log_c = std::fs::read(out_c.join("log.jsonl")).unwrap();
        assert_eq!(log_a, log_b);
        assert_ne!(log_a, log_c);
        assert_eq!(
            std::fs::read(out_a.join("ground_truth.json")).unwrap(),
            std::fs::read(out_b.join("ground_truth.json")).unwrap()
        );
        for i in 0..4 {
            let name = format!("frames/{i:06}.pgm");
            assert_eq!(
                std::fs::read(out_a.join(&name)).unwrap(),
                std::fs::read(out_b.join(&name)).unwrap()
            );
        }

        // Readable end to end.
        let frames: Vec<FrameInput> = crate::io::FrameLogReader::open(&gen_a.log_path)
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(frames.len(), 4);
        let truth = GroundTruth::load(&gen_a.truth_path).unwrap();
        assert_eq!(truth.labels(), vec!["ball"]);
    }

    #[test]
    fn evaluate_exact_estimates_zero_error() {
        let samples: Vec<EvalSample> = (0..10)
            .map(|i| EvalSample { estimate: [i as f64, 1.0, 2.0], truth: [i as f64, 1.0, 2.0] })
            .collect();
        let labels = vec!["a".to_owned()];
        let r = evaluate(&samples, &labels, &labels).unwrap();
        assert_eq!(r.mean_abs_error, [0.0; 3]);
        assert_eq!(r.error_std, [0.0; 3]);
        assert_eq!(r.duplicate_objects, 0);
        assert_eq!(r.missed_objects, 0);
    }

    #[test]
    fn evaluate_single_sample_table_values() {
        // Mean position (0.74, -0.08, 0.93) against real (0.67, 0.10, 0.95)
        // gives per-axis absolute errors (0.07, 0.18, 0.02).
        let samples = [EvalSample { estimate: [0.74, -0.08, 0.93], truth: [0.67, 0.10, 0.95] }];
        let labels = vec!["obj".to_owned()];
        let r = evaluate(&samples, &labels, &labels).unwrap();
        for (got, want) in r.mean_abs_error.iter().zip([0.07, 0.18, 0.02]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(r.error_std, [0.0; 3]);
    }

    #[test]
    fn evaluate_matches_independent_recomputation() {
        // Spreadsheet-style oracle with different accumulation order.
        let mut state = 0xabcdu64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 1000) as f64 / 1000.0 - 0.5
        };
        let samples: Vec<EvalSample> = (0..30)
            .map(|_| EvalSample {
                estimate: [0.67 + next() * 0.2, 0.10 + next() * 0.2, 0.95 + next() * 0.1],
                truth: [0.67, 0.10, 0.95],
            })
            .collect();
        let labels = vec!["obj".to_owned()];
        let r = evaluate(&samples, &labels, &labels).unwrap();

        for axis in 0..3 {
            let errs: Vec<f64> = samples.iter().map(|s| s.estimate[axis] - s.truth[axis]).collect();
            let mae = errs.iter().map(|e| e.abs()).sum::<f64>() / errs.len() as f64;
            let mean = errs.iter().sum::<f64>() / errs.len() as f64;
            let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / errs.len() as f64;
            assert!((r.mean_abs_error[axis] - mae).abs() < 1e-12);
            assert!((r.error_std[axis] - var.sqrt()).abs() < 1e-12);
            let mean_est = samples.iter().map(|s| s.estimate[axis]).sum::<f64>() / 30.0;
            assert!((r.mean_position[axis] - mean_est).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluate_is_permutation_invariant() {
        let samples: Vec<EvalSample> = (0..20)
            .map(|i| EvalSample {
                estimate: [i as f64 * 0.01, 0.1 - i as f64 * 0.002, 1.0],
                truth: [0.1, 0.05, 1.0],
            })
            .collect();
        let mut reversed = samples.clone();
        reversed.reverse();
        let labels = vec!["obj".to_owned()];
        let a = evaluate(&samples, &labels, &labels).unwrap();
        let b = evaluate(&reversed, &labels, &labels).unwrap();
        for axis in 0..3 {
            assert!((a.mean_abs_error[axis] - b.mean_abs_error[axis]).abs() < 1e-12);
            assert!((a.error_std[axis] - b.error_std[axis]).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluate_identity_metrics() {
        let samples = [EvalSample { estimate: [0.0; 3], truth: [0.0; 3] }];
        let truth_labels = vec!["a".to_owned(), "b".to_owned()];
        // One matched, one duplicate ("a" twice -> second is unmatched
        // surplus), one truth object missed.
        let final_labels = vec!["a".to_owned(), "a".to_owned()];
        let r = evaluate(&samples, &final_labels, &truth_labels).unwrap();
        assert_eq!(r.duplicate_objects, 1);
        assert_eq!(r.missed_objects, 1);

        assert!(matches!(evaluate(&[], &final_labels, &truth_labels), Err(SimError::NoSamples)));
    }

    #[test]
    fn spec_validation() {
        let mut spec = static_scene_spec("ball", [0.0, 0.0, 2.0], 0.1, Pose::identity(), 1, NoiseSpec::default());
        assert!(spec.validate().is_ok());
        spec.objects.push(ObjectSpec {
            label: "ball".into(),
            position: [1.0; 3],
            radius: 0.1,
            appear_frame: 0,
            disappear_frame: None,
        });
        assert!(matches!(spec.validate(), Err(SimError::InvalidSpec(_))));

        let empty_traj = SceneSpec { trajectory: vec![], ..static_scene_spec("b", [0.0; 3], 0.1, Pose::identity(), 1, NoiseSpec::default()) };
        assert!(empty_traj.validate().is_err());
    }
}
