//! Argument parsing and subcommand dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::StudyConfig;
use crate::{study, CliError};

#[derive(Debug, Parser)]
#[command(name = "dyncal", version, about = "Sequential-design calibration of time-series simulators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Study configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; overrides `workers`.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Master seed; overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replicated sequential calibration runs.
    Calibrate(Common),
    /// saEI, exact and Monte-Carlo EI over a grid for the initial fit.
    EiMap {
        #[command(flatten)]
        common: Common,
        /// Number of grid points; overrides `grid_size`.
        #[arg(long)]
        grid_size: Option<usize>,
    },
    /// Paired naive vs ESL2D extraction on space-filling fits.
    ExtractCompare(Common),
    /// Fit the emulator on the initial design and save it.
    Fit(Common),
    /// Predict a series from a saved model.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Saved model file.
        #[arg(long)]
        model: PathBuf,
        /// Native-scale input, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        x: Vec<f64>,
    },
}

fn load(common: &Common) -> Result<crate::Resolved, CliError> {
    let mut config = StudyConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    if let Some(w) = common.workers {
        config.workers = Some(w);
    }
    if let Some(s) = common.seed {
        config.seed = s;
    }
    config.resolve()
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Calibrate(common) => {
            let res = load(&common)?;
            let summary = study::calibrate(&res)?;
            for o in &summary.replications {
                for f in &o.finals {
                    println!("replication {} {}: D_xi = {:.6e}", o.index, study::method_name(f.method), f.d_xi);
                }
            }
        }
        Command::EiMap { common, grid_size } => {
            let mut res = load(&common)?;
            if let Some(g) = grid_size {
                if g == 0 {
                    return Err(CliError::Config("--grid-size must be positive".into()));
                }
                res.config.grid_size = g;
            }
            let map = study::ei_map(&res)?;
            println!("{} grid points, p = {}, delta_min = {:.6e}", map.rows.len(), map.p, map.delta_min);
        }
        Command::ExtractCompare(common) => {
            let res = load(&common)?;
            for r in study::extract_compare(&res)? {
                println!("replication {}: log D_xi naive = {:.4}, esl2d = {:.4}", r.replication, r.log_d_xi_naive, r.log_d_xi_esl2d);
            }
        }
        Command::Fit(common) => {
            let res = load(&common)?;
            let model = study::fit(&res)?;
            println!("fitted p = {} on {} runs; sigma2_hat = {:.6e}", model.p, model.n_train(), model.sigma2_hat);
        }
        Command::Predict { common, model, x } => {
            let res = load(&common)?;
            let rows = study::predict(&res, &model, &x)?;
            println!("wrote {} predicted values", rows.len());
        }
    }
    Ok(())
}
