use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fieldkalman::experiment::{
    cmd_oracle, cmd_plot_script, cmd_simulate, cmd_steady_state, cmd_validate, exit_code, ExperimentConfig,
};
use fieldkalman::Error;

#[derive(Parser)]
#[command(name = "fieldkalman", version, about = "Optimal filtering with field-valued measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads for Monte-Carlo trials and oracle strides (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the steady-state covariances.
    SteadyState(Common),
    /// Monte-Carlo run of truth and filter.
    Simulate(Common),
    /// Optimality and two-route consistency checks.
    Validate(Common),
    /// Compare against a dense Kalman filter on subsampled grids.
    Oracle(Common),
    /// Write a Python script that plots the `simulate` output.
    PlotScript {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.scenario.seed = seed;
    }
    if let Some(trials) = common.trials {
        cfg.scenario.trials = trials;
    }
    cfg.scenario.validate()?;
    if let Some(threads) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::SteadyState(c) => {
            let r = cmd_steady_state(&load(&c)?, &c.out)?;
            let (pm, pp) = (&r.steady.p_prior_inf, &r.steady.p_post_inf);
            println!("G1 = S[0][0] = {:.10}", r.g1());
            println!("P_prior_inf = {pm:.6}");
            println!("P_post_inf = {pp:.6}");
            println!("closed-loop spectral radius = {:.6}", r.steady.closed_loop_radius);
            Ok(true)
        }
        Command::Simulate(c) => {
            let r = cmd_simulate(&load(&c)?, &c.out)?;
            println!(
                "steady-state MSE (trials = {}): position {:.5} (theory {:.5}), velocity {:.5} (theory {:.5})",
                r.mse.trials, r.steady_emp[0], r.steady_theo[0], r.steady_emp[1], r.steady_theo[1]
            );
            Ok(true)
        }
        Command::Validate(c) => {
            let r = cmd_validate(&load(&c)?, &c.out)?;
            for row in &r.rows {
                let verdict = if row.passed() { "pass" } else { "FAIL" };
                println!("{verdict} {:<28} {:.3e} <= {:.1e}", row.check, row.residual, row.threshold);
            }
            Ok(r.all_passed())
        }
        Command::Oracle(c) => {
            let r = cmd_oracle(&load(&c)?, &c.out)?;
            for l in &r.study.levels {
                let flag = if l.non_comparable { " (noise nearly white at this spacing)" } else { "" };
                println!("stride {:>3}: {:>5} points, covariance gap {:.3e}{flag}", l.stride, l.points, l.covariance_gap);
            }
            Ok(r.passed())
        }
        Command::PlotScript { out } => {
            println!("{}", cmd_plot_script(&out)?.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
