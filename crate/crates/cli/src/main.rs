use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Result;
use clap::{Parser, Subcommand};
use splatedit_cli::commands::{self, Channel, Preset};
use splatedit_cli::eval::{evaluate, EvalInputs};
use splatedit_core::segmentation::PromptPoint;
use splatedit_service::{CorePipeline, InpainterSource, OracleSource, SessionManager};

#[derive(Parser)]
#[command(name = "splatedit", version, about = "Gaussian-splat object selection, removal and editing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic scene with cameras and its object-free twin.
    Synth {
        /// Scene spec JSON; overrides --preset.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "sphere-on-plane")]
        preset: Preset,
        #[arg(long, default_value_t = 12)]
        views: usize,
        #[arg(long, default_value_t = 96)]
        width: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select the prompted object and write a session directory.
    Segment {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        /// Per-splat labels, required by the gt oracle.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// gt, replay:DIR or http:URL
        #[arg(long, default_value = "gt")]
        oracle: OracleSource,
        /// Camera the prompt points refer to.
        #[arg(long, default_value_t = 0)]
        camera: usize,
        /// Prompt point as x,y or x,y,- (repeatable).
        #[arg(long = "point", required = true, value_parser = commands::parse_point)]
        points: Vec<PromptPoint>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Remove the selected object from a segmented session and fill the hole.
    Inpaint {
        #[arg(long)]
        session: PathBuf,
        /// builtin or http:URL
        #[arg(long, default_value = "builtin")]
        inpainter: InpainterSource,
        #[arg(long)]
        iterations: Option<usize>,
        /// Output session directory; defaults to rewriting --session.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a scene from its cameras to PNG (color, alpha) or PFM (depth).
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        view: Option<usize>,
        #[arg(long, value_enum, default_value = "color")]
        channel: Channel,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a rigid transform to the object and write the composite PLY.
    Edit {
        #[arg(long, conflicts_with_all = ["background", "object"])]
        session: Option<PathBuf>,
        #[arg(long, requires = "object")]
        background: Option<PathBuf>,
        #[arg(long, requires = "background")]
        object: Option<PathBuf>,
        #[arg(long)]
        transform: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare rendered images and masks against ground truth.
    Eval {
        #[arg(long)]
        rendered: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Region masks for masked PSNR.
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        pred_masks: Option<PathBuf>,
        #[arg(long)]
        gt_masks: Option<PathBuf>,
        /// Metrics JSON; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the editing service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value = "gt")]
        oracle: OracleSource,
        #[arg(long, default_value = "builtin")]
        inpainter: InpainterSource,
        #[arg(long)]
        iterations: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { spec, preset, views, width, seed, out } => {
            let spec = commands::synth(&commands::SynthArgs { spec, preset, views, width, seed, out: out.clone() })?;
            println!("wrote synthetic scene (seed {}, {} cameras) to {}", spec.seed, spec.cameras.count, out.display());
        }
        Command::Segment { scene, cameras, labels, oracle, camera, points, out } => {
            let m = commands::segment(&commands::SegmentArgs { scene, cameras, labels, oracle, camera, points, out: out.clone() })?;
            println!("segmented session written to {} ({} files)", out.display(), m.files.len());
        }
        Command::Inpaint { session, inpainter, iterations, out } => {
            let target = out.clone().unwrap_or_else(|| session.clone());
            commands::inpaint(&commands::InpaintArgs { session, inpainter, iterations, out })?;
            println!("inpainted session written to {}", target.display());
        }
        Command::Render { scene, cameras, view, channel, out } => {
            let files = commands::render_views(&commands::RenderArgs { scene, cameras, view, channel, out })?;
            println!("rendered {} views", files.len());
        }
        Command::Edit { session, background, object, transform, out } => {
            let n = commands::edit(&commands::EditArgs { session, background, object, transform, out: out.clone() })?;
            println!("wrote {n} splats to {}", out.display());
        }
        Command::Eval { rendered, gt, masks, pred_masks, gt_masks, out } => {
            let report = evaluate(&EvalInputs { rendered, gt, masks, pred_masks, gt_masks })?;
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => println!("{text}"),
            }
        }
        Command::Serve { addr, oracle, inpainter, iterations } => {
            let mut pipeline = CorePipeline::new(oracle, inpainter.build()?);
            if let Some(n) = iterations {
                pipeline.inpainting.iterations = n;
            }
            let manager = Arc::new(SessionManager::new(Arc::new(pipeline)));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(splatedit_service::server::serve(manager, addr, |a| log::info!("listening on {a}")))?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
