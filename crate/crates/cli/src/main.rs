mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use poresurr::pipeline::Layers;

use commands::{Ctx, GenGeomsArgs};
use config::PipelineConfig;
use error::CliError;

/// Surrogate models for reactive transport in voxelized porous samples.
#[derive(Debug, Parser)]
#[command(name = "poresurr", version)]
struct Cli {
    /// JSON pipeline configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate random sphere-packing geometries as `.pvx` files.
    GenGeoms {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_h: Option<usize>,
        /// Fix the target washcoat fraction for every sample.
        #[arg(long)]
        target_wf: Option<f64>,
        /// Fix the binder fraction for every sample.
        #[arg(long)]
        binder_frac: Option<f64>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute Minkowski features of every geometry.
    Features {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a PCA basis on the training part of one split.
    PcaFit {
        #[arg(long)]
        geoms: Option<PathBuf>,
        /// Index into the configured split seeds.
        #[arg(long, default_value_t = 0)]
        split: usize,
        #[arg(long)]
        n_f: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project geometries onto a stored PCA basis.
    PcaProject {
        #[arg(long)]
        geoms: Option<PathBuf>,
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the flow and transport solver on every geometry.
    Fom {
        #[arg(long)]
        geoms: Option<PathBuf>,
        #[arg(long)]
        pe: Option<f64>,
        #[arg(long)]
        da: Option<f64>,
        #[arg(long)]
        nt: Option<usize>,
        #[arg(long)]
        tend: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select, train and store every configured surrogate variant.
    Train,
    /// Re-evaluate stored models on their test splits.
    Report,
    /// Mean PCA test error as a function of the number of components.
    SweepNf {
        #[arg(long, value_delimiter = ',')]
        nf: Option<Vec<usize>>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let ctx = Ctx { verbose: cli.verbose };
    match cli.command {
        Command::GenGeoms {
            seed,
            n_h,
            target_wf,
            binder_frac,
            count,
            out,
        } => commands::gen_geoms(
            &ctx,
            &cfg,
            &GenGeomsArgs {
                seed,
                n_h,
                target_wf,
                binder_frac,
                count,
                out,
            },
        ),
        Command::Features { input, out } => commands::features(
            &ctx,
            &input.unwrap_or(cfg.paths.geometry_dir.clone()),
            &out.unwrap_or(cfg.paths.features.clone()),
        ),
        Command::PcaFit { geoms, split, n_f, out } => commands::pca_fit(
            &ctx,
            &cfg,
            &geoms.unwrap_or(cfg.paths.geometry_dir.clone()),
            &cfg.paths.dataset_dir,
            split,
            n_f.unwrap_or(cfg.experiment.pca_components),
            &out,
        ),
        Command::PcaProject { geoms, basis, out } => commands::pca_project(
            &ctx,
            &geoms.unwrap_or(cfg.paths.geometry_dir.clone()),
            &basis,
            &out,
        ),
        Command::Fom {
            geoms,
            pe,
            da,
            nt,
            tend,
            out,
        } => {
            let mut params = cfg.cdr.clone();
            params.pe = pe.unwrap_or(params.pe);
            params.da = da.unwrap_or(params.da);
            params.n_t = nt.unwrap_or(params.n_t);
            params.t_end = tend.unwrap_or(params.t_end);
            commands::fom(
                &ctx,
                &params,
                cfg.u_in,
                &geoms.unwrap_or(cfg.paths.geometry_dir.clone()),
                &out.unwrap_or(cfg.paths.dataset_dir.clone()),
            )
        }
        Command::Train => commands::train(&ctx, &cfg),
        Command::Report => commands::report(&ctx, &cfg),
        Command::SweepNf { nf } => {
            if let Some(nf) = nf {
                cfg.sweep_nf = nf;
            }
            let layers: Vec<Layers> = cfg.layers.clone();
            commands::sweep(&ctx, &cfg, &cfg.sweep_nf, &layers)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
