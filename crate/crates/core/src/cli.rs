//! Command implementations behind the `semgraph` binary: simulate, replay,
//! eval and query.
//!
//! Exit-code contract: 0 success, 1 runtime/I-O failure, 2 config or usage
//! error, 3 query target not found. Stdout carries machine-parseable JSON
//! except the eval table (which has a `--json` mode); diagnostics go to
//! stderr.

use crate::graph::SemanticMap;
use crate::io::{FrameLogReader, GroundTruth};
use crate::pipeline::{Pipeline, PipelineConfig, SceneGraph};
use crate::sim::{self, EvalReport, EvalSample, SceneSpec};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

/// Failure classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit 2: bad configuration, usage or unreadable inputs.
    Config(String),
    /// Exit 1: runtime or I/O failure.
    Runtime(String),
    /// Exit 3: query target not found.
    NotFound(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::NotFound(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) | CliError::NotFound(m) => m,
        }
    }
}

/// Resolved run configuration: engine parameters plus the RNG seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { pipeline: PipelineConfig::default(), seed: 0 }
    }
}

/// Command-line overrides for [`RunConfig`]; `None` keeps the config-file
/// or default value (flag wins over file).
#[derive(Debug, Clone, Default)]
pub struct ConfigOverrides {
    pub seed: Option<u64>,
    pub lambda_iou: Option<f64>,
    pub rel_threshold: Option<f64>,
    pub max_distance: Option<f64>,
    pub particles: Option<usize>,
    pub no_filter: bool,
}

impl RunConfig {
    /// Builds the effective config: defaults, then the flat dotted-key JSON
    /// config file, then command-line flags.
    pub fn resolve(config_path: Option<&Path>, overrides: &ConfigOverrides) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = config_path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
            cfg.apply_file(&text).map_err(|m| CliError::Config(format!("config {}: {m}", path.display())))?;
        }
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(v) = overrides.lambda_iou {
            cfg.pipeline.lambda_iou = v;
        }
        if let Some(v) = overrides.rel_threshold {
            cfg.pipeline.rel_threshold = v;
        }
        if let Some(v) = overrides.max_distance {
            cfg.pipeline.max_distance = v;
        }
        if let Some(v) = overrides.particles {
            cfg.pipeline.filter.n_particles = v;
        }
        if overrides.no_filter {
            cfg.pipeline.use_filter = false;
        }
        cfg.pipeline.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Applies a flat dotted-key JSON object, e.g.
    /// `{"lambda_iou":0.4,"filter.n_particles":200,"seed":7}`.
    fn apply_file(&mut self, text: &str) -> Result<(), String> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let obj = value.as_object().ok_or("config must be a JSON object")?;
        for (key, v) in obj {
            match key.as_str() {
                "seed" => self.seed = as_u64(key, v)?,
                "lambda_iou" => self.pipeline.lambda_iou = as_f64(key, v)?,
                "rel_threshold" => self.pipeline.rel_threshold = as_f64(key, v)?,
                "max_distance" => self.pipeline.max_distance = as_f64(key, v)?,
                "max_misses" => self.pipeline.max_misses = as_u64(key, v)? as u32,
                "require_label_match" => {
                    self.pipeline.require_label_match =
                        v.as_bool().ok_or(format!("{key} must be a boolean"))?
                }
                "min_score" => self.pipeline.min_score = as_f64(key, v)?,
                "use_filter" => {
                    self.pipeline.use_filter = v.as_bool().ok_or(format!("{key} must be a boolean"))?
                }
                "filter.n_particles" => self.pipeline.filter.n_particles = as_u64(key, v)? as usize,
                "filter.sigma0" => {
                    let arr: Vec<f64> =
                        serde_json::from_value(v.clone()).map_err(|_| format!("{key} must be [sx,sy,sz]"))?;
                    if arr.len() != 3 {
                        return Err(format!("{key} must have 3 components"));
                    }
                    self.pipeline.filter.sigma0 = [arr[0], arr[1], arr[2]];
                }
                "filter.prediction_frame" => {
                    self.pipeline.filter.prediction_frame =
                        serde_json::from_value(v.clone()).map_err(|_| format!("{key} must be \"map\" or \"camera\""))?
                }
                "filter.resample_ess_fraction" => {
                    self.pipeline.filter.resample_ess_fraction = as_f64(key, v)?
                }
                other => return Err(format!("unknown config key {other}")),
            }
        }
        Ok(())
    }
}

fn as_f64(key: &str, v: &serde_json::Value) -> Result<f64, String> {
    v.as_f64().ok_or(format!("{key} must be a number"))
}

fn as_u64(key: &str, v: &serde_json::Value) -> Result<u64, String> {
    v.as_u64().ok_or(format!("{key} must be a nonnegative integer"))
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if !path.is_file() {
        return Err(CliError::Config(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

/// Result of a replay run.
#[derive(Debug)]
pub struct ReplayOutcome {
    pub frames: usize,
    pub map: SemanticMap,
    pub scenes: Vec<SceneGraph>,
    pub mean_ms: f64,
    pub max_ms: f64,
}

/// Replays a frame log against a room file. When `out_dir` is set, writes
/// `map.json`, `map.dot` and `scenes.jsonl` there.
pub fn run_replay(
    log_path: &Path,
    rooms_path: &Path,
    cfg: &RunConfig,
    out_dir: Option<&Path>,
) -> Result<ReplayOutcome, CliError> {
    require_file(log_path, "frame log")?;
    require_file(rooms_path, "room file")?;
    let rooms_text = std::fs::read_to_string(rooms_path)
        .map_err(|e| CliError::Config(format!("room file {}: {e}", rooms_path.display())))?;
    let map = SemanticMap::load_rooms(&rooms_text).map_err(|e| CliError::Config(e.to_string()))?;

    let mut pipeline =
        Pipeline::new(map, cfg.pipeline.clone(), cfg.seed).map_err(|e| CliError::Config(e.to_string()))?;
    let reader = FrameLogReader::open(log_path).map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut scenes = Vec::new();
    let mut timings_ms: Vec<f64> = Vec::new();
    for frame in reader {
        let frame = frame.map_err(|e| CliError::Runtime(e.to_string()))?;
        let frame_id = frame.frame_id;
        let start = Instant::now();
        let scene = pipeline
            .process_frame(frame)
            .map_err(|e| CliError::Runtime(format!("frame {frame_id}: {e}")))?;
        timings_ms.push(start.elapsed().as_secs_f64() * 1000.0);
        scenes.push(scene);
    }

    let mean_ms = if timings_ms.is_empty() { 0.0 } else { timings_ms.iter().sum::<f64>() / timings_ms.len() as f64 };
    let max_ms = timings_ms.iter().copied().fold(0.0, f64::max);
    let outcome =
        ReplayOutcome { frames: scenes.len(), map: pipeline.into_map(), scenes, mean_ms, max_ms };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(e.to_string()))?;
        std::fs::write(dir.join("map.json"), outcome.map.export_json())
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        std::fs::write(dir.join("map.dot"), outcome.map.export_dot())
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let mut jsonl = String::new();
        for scene in &outcome.scenes {
            jsonl.push_str(&scene.to_json_line());
            jsonl.push('\n');
        }
        std::fs::write(dir.join("scenes.jsonl"), jsonl).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(outcome)
}

/// Collects matched (estimate, truth) samples from a replay's scenes.
fn collect_samples(scenes: &[SceneGraph], truth: &GroundTruth) -> Vec<EvalSample> {
    let mut samples = Vec::new();
    for scene in scenes {
        let Some(positions) = truth.positions_at(scene.frame_id) else { continue };
        for obj in &scene.objects {
            if let Some(&true_pos) = positions.get(&obj.label) {
                samples.push(EvalSample { estimate: obj.position, truth: true_pos });
            }
        }
    }
    samples
}

fn report_from(outcome: &ReplayOutcome, truth: &GroundTruth) -> Result<EvalReport, CliError> {
    let samples = collect_samples(&outcome.scenes, truth);
    let final_labels: Vec<String> = outcome.map.objects().map(|o| o.label.clone()).collect();
    sim::evaluate(&samples, &final_labels, &truth.labels()).map_err(|e| CliError::Runtime(e.to_string()))
}

/// Side-by-side evaluation: the log replayed with the particle filter and
/// with raw centroids. `filter` is absent when the run was forced raw-only.
#[derive(Debug, Serialize)]
pub struct EvalOutcome {
    pub filter: Option<EvalReport>,
    pub no_filter: EvalReport,
}

/// Replays with and without the particle filter and evaluates both against
/// ground truth. When `out_dir` is set, writes `eval.json`.
pub fn run_eval(
    log_path: &Path,
    truth_path: &Path,
    rooms_path: &Path,
    cfg: &RunConfig,
    raw_only: bool,
    out_dir: Option<&Path>,
) -> Result<EvalOutcome, CliError> {
    require_file(truth_path, "ground truth")?;
    let truth = GroundTruth::load(truth_path).map_err(|e| CliError::Config(e.to_string()))?;

    let raw_cfg = RunConfig {
        pipeline: PipelineConfig { use_filter: false, ..cfg.pipeline.clone() },
        seed: cfg.seed,
    };
    let raw_outcome = run_replay(log_path, rooms_path, &raw_cfg, None)?;
    let no_filter = report_from(&raw_outcome, &truth)?;

    let filter = if raw_only {
        None
    } else {
        let pf_cfg = RunConfig {
            pipeline: PipelineConfig { use_filter: true, ..cfg.pipeline.clone() },
            seed: cfg.seed,
        };
        let pf_outcome = run_replay(log_path, rooms_path, &pf_cfg, None)?;
        Some(report_from(&pf_outcome, &truth)?)
    };

    let outcome = EvalOutcome { filter, no_filter };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(e.to_string()))?;
        let mut bytes = serde_json::to_vec(&outcome).expect("serializable");
        bytes.push(b'\n');
        std::fs::write(dir.join("eval.json"), bytes).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(outcome)
}

fn triple(v: [f64; 3]) -> String {
    format!("({:.3}, {:.3}, {:.3})", v[0], v[1], v[2])
}

/// Fixed-width comparison table, one row per statistic.
pub fn eval_table(outcome: &EvalOutcome) -> String {
    let mut rows: Vec<(&str, String, String)> = Vec::new();
    let raw = &outcome.no_filter;
    let pf = outcome.filter.as_ref();
    let cell = |f: fn(&EvalReport) -> String, r: Option<&EvalReport>| -> String {
        r.map(f).unwrap_or_else(|| "-".into())
    };
    rows.push(("Real position [m]", triple(raw.mean_true_position), cell(|r| triple(r.mean_true_position), pf)));
    rows.push(("Mean position [m]", triple(raw.mean_position), cell(|r| triple(r.mean_position), pf)));
    rows.push(("Mean abs error [m]", triple(raw.mean_abs_error), cell(|r| triple(r.mean_abs_error), pf)));
    rows.push(("Error std dev [m]", triple(raw.error_std), cell(|r| triple(r.error_std), pf)));
    rows.push(("Samples", raw.samples.to_string(), cell(|r| r.samples.to_string(), pf)));
    rows.push((
        "Duplicates / missed",
        format!("{} / {}", raw.duplicate_objects, raw.missed_objects),
        cell(|r| format!("{} / {}", r.duplicate_objects, r.missed_objects), pf),
    ));

    let mut out = format!("{:<22} {:>26} {:>26}\n", "Property", "No Particle", "Particle");
    for (name, a, b) in rows {
        out.push_str(&format!("{name:<22} {a:>26} {b:>26}\n"));
    }
    out
}

/// Minimal view of an exported map, enough to answer queries.
#[derive(Deserialize)]
struct ExportedMap {
    rooms: Vec<ExportedRoom>,
    objects: Vec<ExportedObject>,
    #[serde(default)]
    room_connections: Vec<[String; 2]>,
}

#[derive(Deserialize)]
struct ExportedRoom {
    id: String,
}

#[derive(Deserialize)]
struct ExportedObject {
    id: u64,
    label: String,
    room: String,
}

/// Queries over an exported map JSON.
pub enum Query {
    ObjectsInRoom(String),
    Find(String),
    Path(String, String),
}

/// Answers a query; the result is a JSON value ready to print.
pub fn run_query(map_json_path: &Path, query: &Query) -> Result<serde_json::Value, CliError> {
    require_file(map_json_path, "map export")?;
    let text = std::fs::read_to_string(map_json_path).map_err(|e| CliError::Config(e.to_string()))?;
    let map: ExportedMap = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("map export {}: {e}", map_json_path.display())))?;
    let room_ids: std::collections::BTreeSet<&str> = map.rooms.iter().map(|r| r.id.as_str()).collect();

    match query {
        Query::ObjectsInRoom(room) => {
            if !room_ids.contains(room.as_str()) {
                return Err(CliError::NotFound(format!("unknown room {room}")));
            }
            let mut ids: Vec<u64> =
                map.objects.iter().filter(|o| &o.room == room).map(|o| o.id).collect();
            ids.sort_unstable();
            Ok(serde_json::json!(ids))
        }
        Query::Find(label) => {
            let mut ids: Vec<u64> =
                map.objects.iter().filter(|o| &o.label == label).map(|o| o.id).collect();
            if ids.is_empty() {
                return Err(CliError::NotFound(format!("no objects labeled {label}")));
            }
            ids.sort_unstable();
            Ok(serde_json::json!(ids))
        }
        Query::Path(from, to) => {
            for r in [from, to] {
                if !room_ids.contains(r.as_str()) {
                    return Err(CliError::NotFound(format!("unknown room {r}")));
                }
            }
            // BFS over the exported connections, smallest-id tie-break,
            // mirroring the in-memory room_path contract.
            let mut adjacency: BTreeMap<&str, std::collections::BTreeSet<&str>> = BTreeMap::new();
            for [a, b] in &map.room_connections {
                adjacency.entry(a).or_default().insert(b);
                adjacency.entry(b).or_default().insert(a);
            }
            let mut dist: BTreeMap<&str, usize> = BTreeMap::new();
            dist.insert(to, 0);
            let mut queue = std::collections::VecDeque::from([to.as_str()]);
            while let Some(cur) = queue.pop_front() {
                let d = dist[cur];
                if let Some(ns) = adjacency.get(cur) {
                    for &n in ns {
                        if !dist.contains_key(n) {
                            dist.insert(n, d + 1);
                            queue.push_back(n);
                        }
                    }
                }
            }
            if !dist.contains_key(from.as_str()) {
                return Err(CliError::NotFound(format!("no path from {from} to {to}")));
            }
            let mut path = vec![from.clone()];
            let mut cur = from.as_str();
            while cur != to {
                let d = dist[cur];
                let next = adjacency
                    .get(cur)
                    .and_then(|ns| ns.iter().find(|n| dist.get(**n).is_some_and(|nd| nd + 1 == d)))
                    .expect("reachable");
                path.push((*next).to_owned());
                cur = next;
            }
            Ok(serde_json::json!(path))
        }
    }
}

/// `simulate` command: renders a scene spec into a frame log.
pub fn cmd_simulate(spec_path: &Path, out_dir: &Path, seed: u64) -> Result<serde_json::Value, CliError> {
    require_file(spec_path, "scene spec")?;
    let text = std::fs::read_to_string(spec_path)
        .map_err(|e| CliError::Config(format!("scene spec {}: {e}", spec_path.display())))?;
    let spec = SceneSpec::from_json(&text).map_err(|e| CliError::Config(e.to_string()))?;
    let generated = sim::generate_log(&spec, seed, out_dir).map_err(|e| CliError::Runtime(e.to_string()))?;

    // Write the rooms section as a ready-to-use room file.
    let rooms_path = out_dir.join("rooms.json");
    std::fs::write(&rooms_path, sim::rooms_json(&spec) + "\n").map_err(|e| CliError::Runtime(e.to_string()))?;

    Ok(serde_json::json!({
        "frames": generated.frames,
        "log": generated.log_path.display().to_string(),
        "rooms": rooms_path.display().to_string(),
        "seed": seed,
        "truth": generated.truth_path.display().to_string(),
    }))
}

/// Initializes logging from the `SEMGRAPH_LOG` env var (off|info|debug).
pub fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("SEMGRAPH_LOG", "off"))
        .format_timestamp(None)
        .try_init();
}

/// Prints a JSON value plus newline to stdout.
pub fn print_json(value: &serde_json::Value) {
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{value}");
}
