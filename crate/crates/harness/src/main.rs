use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use langevin_core::analysis::ThresholdKind;
use langevin_harness::commands::{self, TheoremOptions, WORKERS_ENV};
use langevin_harness::config::parse_override;
use langevin_harness::error::EXIT_THRESHOLD;
use langevin_harness::{CommonOptions, HarnessError, HarnessResult, Outcome};

#[derive(Parser)]
#[command(name = "langevin", version, about = "Langevin dynamics experiments on Gaussian mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config (a run manifest also works).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
    /// Lift the desk-scale caps on iterations and batch size.
    #[arg(long)]
    full: bool,
    /// Override a top-level config key, e.g. `--set batch=200`.
    #[arg(long = "set", value_name = "KEY=JSON")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one sampler and write final states, modes and plots.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Compare analytic scores with central finite differences.
    ScoreCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 1e-5)]
        fd_step: f64,
        /// Check conditional patch scores instead of the joint score.
        #[arg(long)]
        conditional: bool,
    },
    /// Scan vanilla or annealed runs for entry into the non-universal modes.
    TheoremCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_kind, default_value = "vanilla-gaussian")]
        kind: ThresholdKind,
        #[arg(long)]
        c_v: Option<f64>,
        #[arg(long)]
        c_l: Option<f64>,
        /// Run even when the model fails the theorem's assumption.
        #[arg(long)]
        allow_unverified: bool,
    },
    /// Compare exact patch-wise sampling and chained dynamics to direct draws.
    TvCheck {
        #[command(flatten)]
        common: Common,
        /// Sample count; defaults to the config batch.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Vanilla, annealed and chained runs of a synthetic preset.
    ReproduceSynthetic {
        #[command(flatten)]
        common: Common,
        /// fig2-init-mode0, init-mode1 or init-mode2.
        preset: String,
        /// Comma-separated horizons; defaults to 1e3,1e4,1e5 (and 1e6 with --full).
        #[arg(long, value_delimiter = ',')]
        iterations: Option<Vec<usize>>,
    },
}

fn parse_kind(s: &str) -> Result<ThresholdKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
        "expected vanilla-gaussian, annealed-gaussian, vanilla-subgaussian or annealed-subgaussian".to_string()
    })
}

impl Common {
    fn options(&self) -> HarnessResult<CommonOptions> {
        Ok(CommonOptions {
            config: self.config.clone(),
            seed: self.seed,
            out: self.out.clone(),
            workers: self.workers,
            full: self.full,
            overrides: self.overrides.iter().map(|s| parse_override(s)).collect::<HarnessResult<_>>()?,
        })
    }
}

fn dispatch(command: Command) -> HarnessResult<Outcome> {
    match command {
        Command::Run { common } => commands::cmd_run(&common.options()?),
        Command::ScoreCheck {
            common,
            points,
            fd_step,
            conditional,
        } => commands::cmd_score_check(&common.options()?, points, fd_step, conditional),
        Command::TheoremCheck {
            common,
            kind,
            c_v,
            c_l,
            allow_unverified,
        } => commands::cmd_theorem_check(
            &common.options()?,
            TheoremOptions {
                kind,
                c_v,
                c_l,
                allow_unverified,
            },
        ),
        Command::TvCheck { common, n } => commands::cmd_tv_check(&common.options()?, n),
        Command::ReproduceSynthetic {
            common,
            preset,
            iterations,
        } => commands::cmd_reproduce(&common.options()?, &preset, iterations),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: threshold: acceptance threshold not met");
                ExitCode::from(EXIT_THRESHOLD as u8)
            }
        }
        Err(e) => {
            eprintln!("error: {}", single_line(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn single_line(e: &HarnessError) -> String {
    e.to_string().split_whitespace().collect::<Vec<_>>().join(" ")
}
