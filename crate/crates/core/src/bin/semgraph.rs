//! Semantic scene-graph mapping engine CLI.
//!
//! Subcommands: `simulate` renders a synthetic scene into a frame log,
//! `replay` builds a semantic map from a log, `eval` compares filtered and
//! raw tracking against ground truth, `query` answers questions about an
//! exported map. Set `SEMGRAPH_LOG=info|debug` for diagnostics.

use clap::{Args, Parser, Subcommand};
use semgraph_core::cli::{self, CliError, ConfigOverrides, Query, RunConfig};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "semgraph", version, about = "Semantic scene-graph mapping engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigFlags {
    /// JSON config file with flat dotted keys (flags win).
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Minimum IoU for track-detection association.
    #[arg(long)]
    lambda_iou: Option<f64>,
    /// Minimum probability for relation edges.
    #[arg(long)]
    rel_threshold: Option<f64>,
    /// Distance gate in meters.
    #[arg(long)]
    max_distance: Option<f64>,
    /// Particles per tracked object.
    #[arg(long)]
    particles: Option<usize>,
    /// Bypass the particle filter (raw centroids).
    #[arg(long)]
    no_filter: bool,
}

impl ConfigFlags {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let overrides = ConfigOverrides {
            seed: self.seed,
            lambda_iou: self.lambda_iou,
            rel_threshold: self.rel_threshold,
            max_distance: self.max_distance,
            particles: self.particles,
            no_filter: self.no_filter,
        };
        RunConfig::resolve(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene spec into a frame log plus ground truth.
    Simulate {
        /// Scene spec JSON.
        spec: PathBuf,
        /// Output directory (log.jsonl, frames/, ground_truth.json, rooms.json).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Replay a frame log into a semantic map.
    Replay {
        /// Frame log (JSONL).
        log: PathBuf,
        /// Room file JSON.
        #[arg(long)]
        rooms: PathBuf,
        /// Output directory (map.json, map.dot, scenes.jsonl).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Replay with and without the particle filter and compare to truth.
    Eval {
        /// Frame log (JSONL).
        log: PathBuf,
        /// Ground-truth JSON.
        #[arg(long)]
        truth: PathBuf,
        /// Room file JSON.
        #[arg(long)]
        rooms: PathBuf,
        /// Optional output directory for eval.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print JSON instead of the table.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Query an exported map.
    Query {
        /// Map export JSON (from replay).
        map: PathBuf,
        #[command(subcommand)]
        what: QueryCommand,
    },
}

#[derive(Subcommand)]
enum QueryCommand {
    /// Ids of objects contained in a room.
    ObjectsInRoom { room: String },
    /// Ids of objects with a label.
    Find { label: String },
    /// Shortest room-to-room route.
    Path { from: String, to: String },
}

fn run() -> Result<(), CliError> {
    let args = Cli::parse();
    match args.command {
        Command::Simulate { spec, out, seed } => {
            let summary = cli::cmd_simulate(&spec, &out, seed)?;
            cli::print_json(&summary);
        }
        Command::Replay { log, rooms, out, config } => {
            let cfg = config.resolve()?;
            let outcome = cli::run_replay(&log, &rooms, &cfg, Some(&out))?;
            cli::print_json(&serde_json::json!({
                "frames": outcome.frames,
                "map_objects": outcome.map.object_count(),
                "map_revision": outcome.map.revision(),
                "mean_ms": outcome.mean_ms,
                "max_ms": outcome.max_ms,
                "out": out.display().to_string(),
            }));
        }
        Command::Eval { log, truth, rooms, out, json, config } => {
            let cfg = config.resolve()?;
            let raw_only = config.no_filter;
            let outcome = cli::run_eval(&log, &truth, &rooms, &cfg, raw_only, out.as_deref())?;
            if json {
                cli::print_json(&serde_json::to_value(&outcome).expect("serializable"));
            } else {
                print!("{}", cli::eval_table(&outcome));
            }
        }
        Command::Query { map, what } => {
            let query = match what {
                QueryCommand::ObjectsInRoom { room } => Query::ObjectsInRoom(room),
                QueryCommand::Find { label } => Query::Find(label),
                QueryCommand::Path { from, to } => Query::Path(from, to),
            };
            let value = cli::run_query(&map, &query)?;
            cli::print_json(&value);
        }
    }
    Ok(())
}

fn main() {
    cli::init_logging();
    if let Err(err) = run() {
        eprintln!("semgraph: {}", err.message());
        std::process::exit(err.exit_code());
    }
}
