use clap::{Args, Parser, Subcommand};
use resqrl::cli::{
    cmd_estimate, cmd_fit, cmd_km, cmd_sensitivity, cmd_simulate, exit_code,
    load_estimate_config, load_fit_config, load_km_config, load_sensitivity_config,
    load_simulate_config, resolve_seed,
};
use std::path::PathBuf;
use std::process::ExitCode;

/// Bayesian nonparametric causal inference for quantile residual life under
/// right censoring: enriched DP mixture fitting, g-computation of survivor
/// quantile contrasts, sensitivity analyses, and a simulation harness.
#[derive(Parser)]
#[command(name = "resqrl", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration file; flags override config keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed (also via config `seed` or the RESQRL_SEED env var).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation scenario and report bias/RMSE/coverage.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fit the mixture model to a dataset and persist posterior draws.
    Fit {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset CSV (header: time,event,exposure,<covariates...>).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Informative-censoring location shift φ (refit sensitivity).
        #[arg(long)]
        phi: Option<f64>,
        /// Informative-censoring variance scale η (refit sensitivity).
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Compute survivor quantile contrasts from persisted draws.
    Estimate {
        #[command(flatten)]
        common: CommonArgs,
        /// Draw file written by `fit`.
        #[arg(long)]
        draws: Option<PathBuf>,
    },
    /// Post-hoc unmeasured-confounding sensitivity over the ψ grid.
    Sensitivity {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        draws: Option<PathBuf>,
    },
    /// Kaplan–Meier step function for a dataset.
    Km {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn configure_workers(config_workers: Option<usize>, flag_workers: Option<usize>) {
    if let Some(workers) = flag_workers.or(config_workers) {
        // Ignore failure: the global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
}

fn run() -> resqrl::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { common } => {
            let config = load_simulate_config(common.config.as_deref())?;
            let seed = resolve_seed(common.seed, config.seed)?;
            configure_workers(config.workers, common.workers);
            let table = cmd_simulate(&config, seed, &common.out)?;
            for cell in &table.cells {
                println!(
                    "{} nu={} rho={}: true={:.4} bias={:.4} rmse={:.4} cp={:.1}%",
                    table.model, cell.nu, cell.rho, cell.truth, cell.bias, cell.rmse,
                    cell.coverage_pct
                );
            }
            Ok(())
        }
        Command::Fit { common, data, phi, eta } => {
            let mut config = load_fit_config(common.config.as_deref())?;
            if phi.is_some() {
                config.phi = phi;
            }
            if eta.is_some() {
                config.eta = eta;
            }
            let seed = resolve_seed(common.seed, config.seed)?;
            configure_workers(config.workers, common.workers);
            let data_path = data
                .or_else(|| config.data.clone())
                .ok_or_else(|| resqrl::Error::Config("no dataset given: pass --data or set `data`".into()))?;
            let draws = cmd_fit(&config, &data_path, seed, &common.out)?;
            println!("retained {draws} posterior draws -> {}", common.out.display());
            Ok(())
        }
        Command::Estimate { common, draws } => {
            let config = load_estimate_config(common.config.as_deref())?;
            let seed = resolve_seed(common.seed, config.seed)?;
            configure_workers(config.workers, common.workers);
            let draws_path = draws
                .or_else(|| config.draws.clone())
                .ok_or_else(|| resqrl::Error::Config("no draw file given: pass --draws or set `draws`".into()))?;
            cmd_estimate(&config, &draws_path, seed, &common.out)?;
            println!("estimates written -> {}", common.out.display());
            Ok(())
        }
        Command::Sensitivity { common, draws } => {
            let config = load_sensitivity_config(common.config.as_deref())?;
            let seed = resolve_seed(common.seed, config.estimate.seed)?;
            configure_workers(config.estimate.workers, common.workers);
            let draws_path = draws
                .or_else(|| config.estimate.draws.clone())
                .ok_or_else(|| resqrl::Error::Config("no draw file given: pass --draws or set `draws`".into()))?;
            cmd_sensitivity(&config, &draws_path, seed, &common.out)?;
            println!("sensitivity grid written -> {}", common.out.display());
            Ok(())
        }
        Command::Km { common, data } => {
            let config = load_km_config(common.config.as_deref())?;
            let seed = resolve_seed(common.seed, config.seed)?;
            let data_path = data
                .or_else(|| config.data.clone())
                .ok_or_else(|| resqrl::Error::Config("no dataset given: pass --data or set `data`".into()))?;
            cmd_km(&config, &data_path, seed, &common.out)?;
            println!("step functions written -> {}", common.out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(exit_code(&error) as u8)
        }
    }
}
