//! Semantic scene-graph mapping engine.
//!
//! Consumes per-frame perception records (depth image, camera pose, object
//! masks, relation detections) and maintains a directed graph of rooms,
//! objects and relations. Object positions are tracked with one particle
//! filter per object; detections are associated across frames by IoU of
//! depth-reprojected masks.
//!
//! Module map:
//! - [`geometry`]: SE(3) poses and the pinhole camera model
//! - [`mask`]: RLE binary masks, IoU, reprojection, 3D centroids
//! - [`filter`]: per-object particle filter over 3D position
//! - [`graph`]: the semantic map (rooms, objects, edges, queries, export)
//! - [`pipeline`]: the per-frame update loop
//! - [`sim`]: synthetic scene generator and evaluation harness
//! - [`io`]: frame-log (JSONL) and depth (16-bit PGM) file formats
//! - [`cli`]: command implementations behind the `semgraph` binary

pub mod cli;
pub mod filter;
pub mod geometry;
pub mod graph;
pub mod io;
pub mod mask;
pub mod pipeline;
pub mod sim;

pub use filter::{FilterConfig, ParticleSet};
pub use geometry::{Frame, Intrinsics, Point3, Pose};
pub use graph::SemanticMap;
pub use mask::{DepthImage, Mask};
pub use pipeline::{FrameInput, Pipeline, PipelineConfig, SceneGraph};
