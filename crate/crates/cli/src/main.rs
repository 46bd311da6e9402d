use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lodsplat_cli::commands::{self, PackOptions, TrainOptions};
use lodsplat_cli::manifest::{Manifest, Overrides};
use lodsplat_cli::{configure_workers, CliError, EXIT_INPUT};

/// Depth-regularized LOD Gaussian splatting pipeline.
#[derive(Debug, Parser)]
#[command(name = "lodsplat", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Pipeline manifest (TOML).
    #[arg(long, global = true, default_value = "lodsplat.toml")]
    manifest: PathBuf,
    /// Run directory; overrides `run_dir`.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Finest point spacing in scene units.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Stop adding coarser levels below this many points.
    #[arg(long, global = true)]
    eps_p: Option<usize>,
    #[arg(long, global = true)]
    lambda_depth: Option<f64>,
    #[arg(long, global = true)]
    iterations: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Resident payload budget for rendering.
    #[arg(long, global = true)]
    budget_bytes: Option<u64>,
    /// Block grid over the horizontal footprint.
    #[arg(long, global = true, num_args = 2, value_names = ["NX", "NY"])]
    grid: Option<Vec<usize>>,
    #[arg(long, global = true)]
    port: Option<u16>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split fisheye frames, clean the mesh, render depth, partition blocks.
    Prepare,
    /// Sample the mesh and build multi-resolution point levels.
    BuildLod,
    /// Train all levels jointly.
    Train {
        /// Photometric-only training.
        #[arg(long)]
        no_depth: bool,
        /// Train on one block's views.
        #[arg(long)]
        block: Option<usize>,
    },
    /// Pack trained levels into hierarchy.bin + octree.bin.
    Pack {
        /// Pack the untrained level clouds instead.
        #[arg(long)]
        from_lod: bool,
    },
    /// Render a camera path through the budgeted LOD engine.
    Render {
        /// Camera file; defaults to the prepared cameras.
        #[arg(long)]
        camera_path: Option<PathBuf>,
    },
    /// Serve the store over HTTP with byte ranges.
    Serve,
}

fn load_manifest(g: &GlobalArgs, block: Option<usize>) -> Result<Manifest, CliError> {
    let mut m = Manifest::load(&g.manifest)?;
    let grid = match g.grid.as_deref() {
        Some(&[nx, ny]) => Some([nx, ny]),
        _ => None,
    };
    m.apply(&Overrides {
        run_dir: g.run_dir.clone(),
        tau: g.tau,
        eps_p: g.eps_p,
        lambda_depth: g.lambda_depth,
        iterations: g.iterations,
        seed: g.seed,
        budget_bytes: g.budget_bytes,
        grid,
        port: g.port,
        block,
    });
    Ok(m)
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_workers()?;
    let block = match &cli.command {
        Command::Train { block, .. } => *block,
        _ => None,
    };
    let mut m = load_manifest(&cli.global, block)?;
    let outcome = match cli.command {
        Command::Prepare => commands::prepare(&m)?,
        Command::BuildLod => commands::build_lod(&m)?,
        Command::Train { no_depth, .. } => commands::train(&m, TrainOptions { no_depth })?,
        Command::Pack { from_lod } => commands::pack(&m, PackOptions { from_lod })?,
        Command::Render { camera_path } => {
            if camera_path.is_some() {
                m.render.camera_path = camera_path;
            }
            commands::render(&m)?
        }
        Command::Serve => {
            return commands::serve(&m, |server| {
                let mut out = std::io::stdout();
                let _ = writeln!(out, "serving {} at {}", m.run_dir.join(commands::STORE_DIR).display(), server.url(""));
                let _ = out.flush();
            });
        }
    };
    let verb = if outcome.skipped { "up to date" } else { "done" };
    println!("{}: {verb} ({} outputs)", outcome.stage, outcome.outputs.len());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
