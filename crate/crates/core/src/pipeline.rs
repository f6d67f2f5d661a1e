//! Per-frame update loop.
//!
//! Each frame: compute the inter-frame camera motion, gate detections by
//! distance, associate them to tracked objects by IoU of reprojected masks,
//! run the per-object particle filters, create nodes for new detections,
//! age and retire stale tracks, gate and insert relation edges, and emit
//! the per-frame scene graph. The map revision advances exactly once per
//! frame.

use crate::filter::{self, FilterConfig, ParticleSet};
use crate::geometry::{self, Frame, Intrinsics, Point3, Pose};
use crate::graph::{GraphError, RelationOutcome, SemanticMap};
use crate::mask::{self, DepthImage, Mask, MaskError};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("frame {got} does not advance past frame {prev}")]
    NonMonotonicFrame { prev: u64, got: u64 },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Filter(#[from] filter::FilterError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
}

/// One detected object instance in a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub label: String,
    pub score: f64,
    pub mask: Mask,
}

/// Detected relation between two detections of the same frame, by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationDetection {
    pub subject: usize,
    pub object: usize,
    pub predicate: String,
    pub probability: f64,
}

/// One perception record: everything the engine consumes per frame.
#[derive(Debug, Clone)]
pub struct FrameInput {
    pub frame_id: u64,
    /// Camera-in-map pose.
    pub camera_pose: Pose,
    pub intrinsics: Intrinsics,
    pub depth: DepthImage,
    pub detections: Vec<Detection>,
    pub relations: Vec<RelationDetection>,
}

impl FrameInput {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        if self.depth.width() != w || self.depth.height() != h {
            return Err(PipelineError::InvalidFrame(format!(
                "depth {}x{} vs intrinsics {}x{}",
                self.depth.width(),
                self.depth.height(),
                w,
                h
            )));
        }
        for (i, d) in self.detections.iter().enumerate() {
            if d.mask.width() != w || d.mask.height() != h {
                return Err(PipelineError::InvalidFrame(format!("detection {i} mask dimensions differ from frame")));
            }
            if d.mask.is_empty() {
                return Err(PipelineError::InvalidFrame(format!("detection {i} has an empty mask")));
            }
            if !(0.0..=1.0).contains(&d.score) {
                return Err(PipelineError::InvalidFrame(format!("detection {i} score {} outside [0,1]", d.score)));
            }
        }
        for (i, r) in self.relations.iter().enumerate() {
            if r.subject >= self.detections.len() || r.object >= self.detections.len() {
                return Err(PipelineError::InvalidFrame(format!("relation {i} index out of range")));
            }
            if r.subject == r.object {
                return Err(PipelineError::InvalidFrame(format!("relation {i} relates a detection to itself")));
            }
            if !(0.0..=1.0).contains(&r.probability) {
                return Err(PipelineError::InvalidFrame(format!("relation {i} probability outside [0,1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Minimum IoU (strict) for a track-detection match.
    pub lambda_iou: f64,
    /// Minimum probability for a relation edge.
    pub rel_threshold: f64,
    /// Maximum centroid distance from the camera, meters.
    pub max_distance: f64,
    /// Consecutive in-view misses before an object is retired.
    pub max_misses: u32,
    /// Require equal labels for association.
    pub require_label_match: bool,
    /// Minimum detection score to create a new object.
    pub min_score: f64,
    /// When false, node positions are raw per-frame centroids and the
    /// particle filters are bypassed.
    pub use_filter: bool,
    pub filter: FilterConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            lambda_iou: 0.3,
            rel_threshold: 0.5,
            max_distance: 3.5,
            max_misses: 5,
            require_label_match: true,
            min_score: 0.0,
            use_filter: true,
            filter: FilterConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        for (name, v) in [("lambda_iou", self.lambda_iou), ("rel_threshold", self.rel_threshold)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(PipelineError::InvalidFrame(format!("{name} must be in (0, 1], got {v}")));
            }
        }
        if !(self.max_distance > 0.0) {
            return Err(PipelineError::InvalidFrame(format!("max_distance must be positive, got {}", self.max_distance)));
        }
        if !(0.0..=1.0).contains(&self.min_score) {
            return Err(PipelineError::InvalidFrame(format!("min_score must be in [0, 1], got {}", self.min_score)));
        }
        self.filter.validate()?;
        Ok(())
    }
}

/// Per-object tracking state. The mask, its depth values and the camera
/// pose are snapshotted at the last observation, so association can warp
/// the observed mask directly into any later frame.
#[derive(Debug, Clone)]
pub struct TrackedObject {
    pub object_id: u64,
    pub label: String,
    /// Mask from the last observation.
    pub last_mask: Mask,
    /// Depth restricted to the observed mask's pixels (0 elsewhere).
    pub mask_depth: DepthImage,
    /// Camera pose at the last observation.
    pub observed_pose: Pose,
    pub last_seen: u64,
    pub misses: u32,
    pub particles: Option<ParticleSet>,
}

impl TrackedObject {
    /// Captures the observation snapshot a track carries for association.
    pub fn observe(&mut self, mask: &Mask, depth: &DepthImage, pose: &Pose, frame_id: u64) {
        self.last_mask = mask.clone();
        self.mask_depth = sparse_depth(mask, depth);
        self.observed_pose = *pose;
        self.last_seen = frame_id;
        self.misses = 0;
    }
}

/// Depth image holding values only at the mask's set pixels.
pub fn sparse_depth(mask: &Mask, depth: &DepthImage) -> DepthImage {
    let (w, h) = (depth.width(), depth.height());
    let mut values = vec![0u16; (w as usize) * (h as usize)];
    for (x, y) in mask.set_pixels() {
        let idx = (y as usize) * (w as usize) + x as usize;
        values[idx] = depth.values()[idx];
    }
    DepthImage::new(w, h, values).expect("sized buffer")
}

/// Per-frame scene graph: detections and relations that survived gating,
/// resolved to map object ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    pub frame_id: u64,
    pub objects: Vec<SceneObject>,
    pub relations: Vec<SceneRelation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    /// Index into the frame's detection list.
    pub detection: usize,
    pub id: u64,
    pub label: String,
    pub score: f64,
    /// Map-frame position recorded in the map at this frame.
    pub position: [f64; 3],
    /// True when this frame created the object.
    pub created: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRelation {
    pub source: u64,
    pub target: u64,
    pub predicate: String,
    pub probability: f64,
}

impl SceneGraph {
    /// Deterministic single-line JSON (sorted keys) for scene JSONL files.
    pub fn to_json_line(&self) -> String {
        let objects: Vec<Value> = self
            .objects
            .iter()
            .map(|o| {
                let mut fields = vec![
                    ("detection", json!(o.detection)),
                    ("id", json!(o.id)),
                    ("label", json!(o.label)),
                    ("position", json!(o.position)),
                    ("score", json!(o.score)),
                ];
                if o.created {
                    fields.push(("created", json!(true)));
                }
                sorted_object(fields)
            })
            .collect();
        let relations: Vec<Value> = self
            .relations
            .iter()
            .map(|r| {
                sorted_object(vec![
                    ("source", json!(r.source)),
                    ("target", json!(r.target)),
                    ("predicate", json!(r.predicate)),
                    ("probability", json!(r.probability)),
                ])
            })
            .collect();
        let root = sorted_object(vec![
            ("frame_id", json!(self.frame_id)),
            ("objects", Value::Array(objects)),
            ("relations", Value::Array(relations)),
        ]);
        serde_json::to_string(&root).expect("serializable")
    }
}

fn sorted_object(fields: Vec<(&str, Value)>) -> Value {
    let mut sorted = fields;
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    Value::Object(sorted.into_iter().map(|(k, v)| (k.to_owned(), v)).collect())
}

/// Distance-gate result for one frame.
#[derive(Debug, Clone)]
pub struct DistanceFilterOutput {
    /// Kept detection indices with their map-frame centroids, ascending.
    pub kept: Vec<(usize, Point3)>,
    /// Detections past the distance gate.
    pub dropped_far: Vec<usize>,
    /// Detections whose mask had no valid depth.
    pub dropped_no_depth: Vec<usize>,
}

/// Computes each detection's 3D centroid and keeps those within
/// `max_distance` of the camera (inclusive). Detections without any valid
/// depth are dropped and reported, never fatal.
pub fn distance_filter(
    detections: &[Detection],
    depth: &DepthImage,
    intrinsics: &Intrinsics,
    camera_pose: &Pose,
    cfg: &PipelineConfig,
) -> Result<DistanceFilterOutput, PipelineError> {
    let mut out = DistanceFilterOutput { kept: Vec::new(), dropped_far: Vec::new(), dropped_no_depth: Vec::new() };
    for (idx, det) in detections.iter().enumerate() {
        let centroid = match mask::centroid3d(&det.mask, depth, intrinsics, camera_pose) {
            Ok(c) => c,
            Err(MaskError::NoValidDepth) => {
                out.dropped_no_depth.push(idx);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let dist = (centroid.vector() - camera_pose.translation).norm();
        if dist <= cfg.max_distance {
            out.kept.push((idx, centroid));
        } else {
            out.dropped_far.push(idx);
        }
    }
    Ok(out)
}

/// Association result: matched (object id, detection index) pairs plus the
/// leftovers on both sides and the reprojected track masks.
#[derive(Debug, Clone)]
pub struct Association {
    pub matches: Vec<(u64, usize)>,
    pub unmatched_tracks: Vec<u64>,
    pub unmatched_detections: Vec<usize>,
    pub reprojected: BTreeMap<u64, Mask>,
}

/// Greedy IoU matching between tracked objects and current detections.
///
/// Every track's last observed mask is first carried into the current
/// camera frame: the change of coordinates from the track's observation
/// pose to `camera_pose`, applied through the track's depth snapshot.
/// Candidate pairs need IoU strictly above `lambda_iou` and, when
/// `require_label_match` is set, equal labels; pairs are taken in
/// descending IoU order with ties broken by lower object id, then lower
/// detection index.
pub fn associate(
    tracks: &BTreeMap<u64, TrackedObject>,
    detections: &[Detection],
    kept: &[(usize, Point3)],
    intrinsics: &Intrinsics,
    camera_pose: &Pose,
    cfg: &PipelineConfig,
) -> Result<Association, PipelineError> {
    let mut reprojected = BTreeMap::new();
    for (&id, track) in tracks {
        let delta_t = geometry::frame_change(&track.observed_pose, camera_pose);
        let warped = if track.last_mask.is_empty() {
            track.last_mask.clone()
        } else {
            mask::reproject_mask(&track.last_mask, &track.mask_depth, intrinsics, &delta_t)?
        };
        reprojected.insert(id, warped);
    }

    // Candidate pairs above the gate, sorted for greedy selection.
    let mut candidates: Vec<(f64, u64, usize)> = Vec::new();
    for (&id, track) in tracks {
        for &(det_idx, _) in kept {
            let det = &detections[det_idx];
            if cfg.require_label_match && det.label != track.label {
                continue;
            }
            let score = mask::iou(&reprojected[&id], &det.mask)?;
            if score > cfg.lambda_iou {
                candidates.push((score, id, det_idx));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.partial_cmp(&a.0).expect("IoU is finite").then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    });

    let mut matches = Vec::new();
    let mut used_tracks = std::collections::BTreeSet::new();
    let mut used_detections = std::collections::BTreeSet::new();
    for (_, id, det_idx) in candidates {
        if used_tracks.contains(&id) || used_detections.contains(&det_idx) {
            continue;
        }
        used_tracks.insert(id);
        used_detections.insert(det_idx);
        matches.push((id, det_idx));
    }
    matches.sort();

    let unmatched_tracks = tracks.keys().filter(|id| !used_tracks.contains(id)).copied().collect();
    let unmatched_detections =
        kept.iter().map(|&(i, _)| i).filter(|i| !used_detections.contains(i)).collect();
    Ok(Association { matches, unmatched_tracks, unmatched_detections, reprojected })
}

/// Owns the map and tracker state; frames are processed strictly in order.
pub struct Pipeline {
    cfg: PipelineConfig,
    map: SemanticMap,
    tracks: BTreeMap<u64, TrackedObject>,
    prev_pose: Option<Pose>,
    last_frame_id: Option<u64>,
    rng: ChaCha8Rng,
}

impl Pipeline {
    pub fn new(map: SemanticMap, cfg: PipelineConfig, seed: u64) -> Result<Self, PipelineError> {
        cfg.validate()?;
        use rand::SeedableRng;
        Ok(Pipeline {
            cfg,
            map,
            tracks: BTreeMap::new(),
            prev_pose: None,
            last_frame_id: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn map(&self) -> &SemanticMap {
        &self.map
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn tracks(&self) -> &BTreeMap<u64, TrackedObject> {
        &self.tracks
    }

    pub fn into_map(self) -> SemanticMap {
        self.map
    }

    /// Runs the full per-frame update and returns the emitted scene graph.
    pub fn process_frame(&mut self, frame: FrameInput) -> Result<SceneGraph, PipelineError> {
        frame.validate()?;
        if let Some(prev) = self.last_frame_id {
            if frame.frame_id <= prev {
                return Err(PipelineError::NonMonotonicFrame { prev, got: frame.frame_id });
            }
        }

        // (1) Inter-frame camera motion: change of coordinates from the
        // previous camera frame into the current one (identity on the
        // first frame). Association warps per track from each track's own
        // observation pose; this delta drives the camera-frame filter
        // prediction.
        let delta_t = match &self.prev_pose {
            Some(prev) => geometry::frame_change(prev, &frame.camera_pose),
            None => Pose::identity(),
        };

        // (2) Distance gate.
        let gated = distance_filter(&frame.detections, &frame.depth, &frame.intrinsics, &frame.camera_pose, &self.cfg)?;
        log::debug!(
            "frame {}: {} detections, {} kept, {} far, {} no-depth",
            frame.frame_id,
            frame.detections.len(),
            gated.kept.len(),
            gated.dropped_far.len(),
            gated.dropped_no_depth.len()
        );

        // (3) Associate tracks to kept detections.
        let association = associate(
            &self.tracks,
            &frame.detections,
            &gated.kept,
            &frame.intrinsics,
            &frame.camera_pose,
            &self.cfg,
        )?;
        let centroid_of: BTreeMap<usize, Point3> = gated.kept.iter().cloned().collect();

        self.map.begin_frame();
        let result = self.apply_frame(&frame, &delta_t, &association, &centroid_of);
        let relations = match &result {
            Ok((_, id_of_detection)) => self.apply_relations(&frame, id_of_detection),
            Err(_) => Ok(Vec::new()),
        };
        // The revision advances exactly once per frame, error or not.
        self.map.commit_frame();
        let (mut scene_objects, _) = result?;
        let scene_relations = relations?;

        // (9) Emit the scene; bookkeeping for the next frame.
        scene_objects.retain(|o| self.map.object(o.id).is_some());
        self.prev_pose = Some(frame.camera_pose);
        self.last_frame_id = Some(frame.frame_id);
        Ok(SceneGraph { frame_id: frame.frame_id, objects: scene_objects, relations: scene_relations })
    }

    /// (8) Relation edges: both endpoints must have survived gating and
    /// resolved to live map objects; probability gating happens in the map
    /// (threshold from config). Runs inside the frame batch.
    fn apply_relations(
        &mut self,
        frame: &FrameInput,
        id_of_detection: &BTreeMap<usize, u64>,
    ) -> Result<Vec<SceneRelation>, PipelineError> {
        let mut scene_relations = Vec::new();
        for rel in &frame.relations {
            let (Some(&src), Some(&tgt)) = (id_of_detection.get(&rel.subject), id_of_detection.get(&rel.object)) else {
                continue;
            };
            if self.map.object(src).is_none() || self.map.object(tgt).is_none() {
                continue;
            }
            let outcome =
                self.map.upsert_relation(src, tgt, &rel.predicate, rel.probability, frame.frame_id, self.cfg.rel_threshold)?;
            if outcome == RelationOutcome::Inserted {
                scene_relations.push(SceneRelation {
                    source: src,
                    target: tgt,
                    predicate: rel.predicate.clone(),
                    probability: rel.probability,
                });
            }
        }
        Ok(scene_relations)
    }

    /// Steps (4)-(7): filter updates, new objects, misses, stale sweep.
    /// Runs inside the frame batch.
    #[allow(clippy::type_complexity)]
    fn apply_frame(
        &mut self,
        frame: &FrameInput,
        delta_t: &Pose,
        association: &Association,
        centroid_of: &BTreeMap<usize, Point3>,
    ) -> Result<(Vec<SceneObject>, BTreeMap<usize, u64>), PipelineError> {
        let mut scene_objects = Vec::new();
        let mut id_of_detection: BTreeMap<usize, u64> = BTreeMap::new();

        // (4) Matched tracks: predict, weight, resample, estimate, update.
        // Matches arrive sorted by object id, which fixes the RNG order.
        for &(id, det_idx) in &association.matches {
            let obs_map = centroid_of[&det_idx];
            let position = if self.cfg.use_filter {
                let track = self.tracks.get(&id).expect("matched track exists");
                let ps = track.particles.as_ref().expect("filtered track has particles");
                let ps = filter::predict(ps, delta_t, &self.cfg.filter, &mut self.rng)?;
                let obs = match self.cfg.filter.prediction_frame {
                    Frame::Map => obs_map,
                    Frame::Camera => geometry::map_to_camera(&obs_map, &frame.camera_pose),
                };
                let ps = filter::update_weights(&ps, &obs)?;
                let ps = if filter::effective_sample_size(&ps)
                    < self.cfg.filter.resample_ess_fraction * ps.len() as f64
                {
                    filter::resample(&ps, &mut self.rng)
                } else {
                    ps
                };
                let est = filter::estimate(&ps);
                let est_map = match self.cfg.filter.prediction_frame {
                    Frame::Map => est,
                    Frame::Camera => geometry::camera_to_map(&est, &frame.camera_pose),
                };
                self.tracks.get_mut(&id).expect("matched track exists").particles = Some(ps);
                est_map
            } else {
                obs_map
            };
            self.map.update_object(id, position, frame.frame_id)?;

            let track = self.tracks.get_mut(&id).expect("matched track exists");
            track.observe(&frame.detections[det_idx].mask, &frame.depth, &frame.camera_pose, frame.frame_id);
            id_of_detection.insert(det_idx, id);
            scene_objects.push(SceneObject {
                detection: det_idx,
                id,
                label: frame.detections[det_idx].label.clone(),
                score: frame.detections[det_idx].score,
                position: position.coords(),
                created: false,
            });
        }

        // (5) Unmatched detections found a new object each (subject to the
        // score gate); the node position is the raw centroid.
        for &det_idx in &association.unmatched_detections {
            let det = &frame.detections[det_idx];
            if det.score < self.cfg.min_score {
                continue;
            }
            let obs_map = centroid_of[&det_idx];
            let particles = if self.cfg.use_filter {
                let mu0 = match self.cfg.filter.prediction_frame {
                    Frame::Map => obs_map,
                    Frame::Camera => geometry::map_to_camera(&obs_map, &frame.camera_pose),
                };
                Some(filter::init(&mu0, &self.cfg.filter, &mut self.rng))
            } else {
                None
            };
            let id = self.map.upsert_object(&det.label, obs_map, frame.frame_id)?;
            self.tracks.insert(
                id,
                TrackedObject {
                    object_id: id,
                    label: det.label.clone(),
                    last_mask: det.mask.clone(),
                    mask_depth: sparse_depth(&det.mask, &frame.depth),
                    observed_pose: frame.camera_pose,
                    last_seen: frame.frame_id,
                    misses: 0,
                    particles,
                },
            );
            id_of_detection.insert(det_idx, id);
            scene_objects.push(SceneObject {
                detection: det_idx,
                id,
                label: det.label.clone(),
                score: det.score,
                position: obs_map.coords(),
                created: true,
            });
        }

        // (6) Unmatched tracks age by one miss; their observation snapshot
        // stays put, so a later re-observation still warps from the frame
        // that actually saw them.
        for &id in &association.unmatched_tracks {
            self.tracks.get_mut(&id).expect("track exists").misses += 1;
            self.map.record_miss(id)?;
        }

        // (7) Retire stale tracks.
        stale_sweep(&mut self.map, &mut self.tracks, &self.cfg, &frame.camera_pose, &frame.intrinsics)?;

        scene_objects.sort_by_key(|o| o.detection);
        Ok((scene_objects, id_of_detection))
    }
}

/// Removes tracks that exceeded the miss budget while their estimated
/// position stayed inside the current view frustum. Objects the camera is
/// not looking at are never removed for absence.
pub fn stale_sweep(
    map: &mut SemanticMap,
    tracks: &mut BTreeMap<u64, TrackedObject>,
    cfg: &PipelineConfig,
    camera_pose: &Pose,
    intrinsics: &Intrinsics,
) -> Result<(), PipelineError> {
    let stale: Vec<u64> = tracks
        .values()
        .filter(|t| t.misses >= cfg.max_misses)
        .filter(|t| {
            let Some(node) = map.object(t.object_id) else { return false };
            let cam = geometry::map_to_camera(&node.position, camera_pose);
            if cam.z <= 0.0 {
                return false;
            }
            match geometry::project(&cam, intrinsics) {
                Ok((u, v)) => {
                    u >= 0.0 && u < intrinsics.width as f64 && v >= 0.0 && v < intrinsics.height as f64
                }
                Err(_) => false,
            }
        })
        .map(|t| t.object_id)
        .collect();
    for id in stale {
        log::debug!("retiring stale object {id}");
        map.remove_object(id)?;
        tracks.remove(&id);
    }
    Ok(())
}
