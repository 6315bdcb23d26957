//! `roadscan`: pothole and obstacle detection on road point clouds.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use roadscan_core::keyvalue::KeyValues;

use crate::commands::CliError;
use crate::config::RunConfig;

/// Every setting is a key in the flat `key = value` file given by --config; flags override the
/// file. Environment variables are not consulted.
#[derive(Debug, Parser)]
#[command(name = "roadscan", version, about = "Pothole and road obstacle detection on point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment one cloud and extract obstacles.
    Detect(DetectArgs),
    /// Generate a labeled pothole scene, or a sequence of route frames with --route.
    Synth(SynthArgs),
    /// Compare predicted and ground-truth labeled clouds.
    Eval(EvalArgs),
    /// Render a class-labeled cloud into a PPM image.
    Render(RenderArgs),
    /// Run the obstacle registry server until killed.
    Serve(ServeArgs),
    /// Replay route frames as one agent against a registry server.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for synthesis, downsampling and plane fitting (key: seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct PipelineFlags {
    /// Neighbors per vertex (key: k).
    #[arg(long)]
    k: Option<usize>,
    /// Geometric saliency weight (key: w1).
    #[arg(long)]
    w1: Option<f64>,
    /// Spectral saliency weight (key: w2).
    #[arg(long)]
    w2: Option<f64>,
    /// Keep this fraction of the points, drawn with the seed (key: ratio).
    #[arg(long)]
    ratio: Option<f64>,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    pipeline: PipelineFlags,
    /// Input cloud (.xyz, .xyzl labeled, or .ply).
    #[arg(long)]
    input: PathBuf,
    /// Output directory for segmented.xyz, predicted.xyzl and obstacles.txt.
    #[arg(long)]
    output: PathBuf,
    /// Also write saliency.xyz with the fused saliency per vertex.
    #[arg(long)]
    saliency: bool,
    /// Also write the low-rank and sparse matrices and the singular values.
    #[arg(long)]
    dump_rpca: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
    /// Write route frames and route.txt instead of a single scene.
    #[arg(long)]
    route: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Predicted labeled cloud.
    #[arg(long)]
    input: PathBuf,
    /// Ground-truth labeled cloud with the same vertices.
    #[arg(long)]
    truth: PathBuf,
    /// Density ratio used for the table column (key: ratio).
    #[arg(long)]
    ratio: Option<f64>,
    /// Write the table as CSV here.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[command(flatten)]
    common: Common,
    /// "x y z class_id" cloud, e.g. segmented.xyz from detect.
    #[arg(long)]
    input: PathBuf,
    /// Output PPM path.
    #[arg(long)]
    output: PathBuf,
    /// Camera as a key=value list, e.g. fx=500,fy=500,width=640,height=480 (keys: camera.*).
    #[arg(long)]
    camera: Option<String>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    common: Common,
    /// Listen address; port 0 picks a free port (key: endpoint).
    #[arg(long)]
    endpoint: Option<String>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    pipeline: PipelineFlags,
    /// route.txt written by `synth --route`.
    #[arg(long)]
    input: PathBuf,
    /// Server address (key: endpoint).
    #[arg(long)]
    endpoint: Option<String>,
    /// Agent id (key: agent).
    #[arg(long)]
    agent: Option<String>,
    /// Write the replay summary here as well.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn overrides(common: &Common, pipeline: Option<&PipelineFlags>) -> KeyValues {
    let mut kv = KeyValues::default();
    if let Some(s) = common.seed {
        kv.set("seed", s.to_string());
    }
    if let Some(p) = pipeline {
        if let Some(v) = p.k {
            kv.set("k", v.to_string());
        }
        if let Some(v) = p.w1 {
            kv.set("w1", v.to_string());
        }
        if let Some(v) = p.w2 {
            kv.set("w2", v.to_string());
        }
        if let Some(v) = p.ratio {
            kv.set("ratio", v.to_string());
        }
    }
    kv
}

fn load(common: &Common, kv: &KeyValues) -> Result<RunConfig, CliError> {
    RunConfig::load(common.config.as_deref(), kv).map_err(|e| CliError::Input(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Detect(a) => {
            let cfg = load(&a.common, &overrides(&a.common, Some(&a.pipeline)))?;
            commands::detect(&a.input, &a.output, a.saliency, a.dump_rpca, &cfg)
        }
        Command::Synth(a) => {
            let cfg = load(&a.common, &overrides(&a.common, None))?;
            if a.route {
                commands::synth_route(&a.output, &cfg)
            } else {
                commands::synth_scene(&a.output, &cfg)
            }
        }
        Command::Eval(a) => {
            let mut kv = overrides(&a.common, None);
            if let Some(r) = a.ratio {
                kv.set("ratio", r.to_string());
            }
            let cfg = load(&a.common, &kv)?;
            commands::eval(&a.input, &a.truth, a.output.as_deref(), &cfg)
        }
        Command::Render(a) => {
            let mut kv = overrides(&a.common, None);
            if let Some(list) = &a.camera {
                let cam = KeyValues::parse_inline(list).map_err(|e| CliError::Input(format!("--camera: {e}")))?;
                for k in cam.keys() {
                    kv.set(&format!("camera.{k}"), cam.get(k).unwrap_or_default());
                }
            }
            let cfg = load(&a.common, &kv)?;
            commands::render(&a.input, &a.output, &cfg)
        }
        Command::Serve(a) => {
            let mut kv = overrides(&a.common, None);
            if let Some(e) = &a.endpoint {
                kv.set("endpoint", e.as_str());
            }
            commands::serve(&load(&a.common, &kv)?)
        }
        Command::Replay(a) => {
            let mut kv = overrides(&a.common, Some(&a.pipeline));
            if let Some(e) = &a.endpoint {
                kv.set("endpoint", e.as_str());
            }
            if let Some(id) = &a.agent {
                kv.set("agent", id.as_str());
            }
            let cfg = load(&a.common, &kv)?;
            commands::replay(&a.input, a.output.as_deref(), &cfg)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("roadscan: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
