//! `geocrt`: design and analyze geographically clustered randomized trials.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use geocrt::design::ArmRule;
use geocrt::simulation::Model;
use geocrt::{Estimand, Metric};

use crate::commands::*;
use crate::io::{input, CliResult};

#[derive(Parser)]
#[command(name = "geocrt", version, about = "Clustered randomized trials under spatial interference")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Record the wall-clock time in output manifests.
    #[arg(long, global = true)]
    stamp: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Euclidean,
    Chebyshev,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Ma,
    CliffOrd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArmRuleArg {
    Uniform,
    Balanced,
}

#[derive(Subcommand)]
enum Command {
    /// Partition units into k clusters by k-medoids.
    Cluster {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        seed: u64,
        /// Points as CSV (`id,x[,y...]`) or JSON.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Coordinates are divided by this before clustering.
        #[arg(long, default_value_t = 1.0)]
        unit_length: f64,
        #[arg(long, value_enum, default_value = "euclidean")]
        metric: MetricArg,
        #[arg(long, default_value_t = 0.5)]
        rn_multiplier: f64,
    },
    /// Recommended number of clusters.
    PlanK {
        #[arg(long)]
        volume: f64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 2)]
        dim: usize,
    },
    /// Draw a two-stage assignment.
    Assign {
        #[arg(long)]
        clusters: PathBuf,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        replication: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Point estimates, variances and confidence intervals.
    Estimate {
        #[arg(long)]
        clusters: PathBuf,
        #[arg(long)]
        draw: PathBuf,
        /// CSV with header `id,y`.
        #[arg(long)]
        outcomes: PathBuf,
        /// D, I, T, O or all.
        #[arg(long, default_value = "all")]
        estimand: String,
        #[arg(long, default_value_t = 0.5)]
        rn_multiplier: f64,
        /// Constant of the bias bound; enables the bias-aware interval.
        #[arg(long, requires = "bias_gamma")]
        bias_c: Option<f64>,
        /// Decay exponent of the bias bound.
        #[arg(long, requires = "bias_c")]
        bias_gamma: Option<f64>,
        /// Also emit the bias-aware interval with the sqrt(k)-scaled bias term.
        #[arg(long)]
        strict_paper: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo study over the simulation grid.
    Simulate {
        /// TOML grid; defaults apply to omitted keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: u64,
        /// Report table (CSV).
        #[arg(long)]
        out: PathBuf,
        /// Full report with cell details (JSON).
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Estimate the decay exponent with ring designs.
    Variogram {
        #[arg(long, value_enum, default_value = "ma")]
        model: ModelArg,
        /// Number of ring arms.
        #[arg(long = "T", default_value_t = 4)]
        arms: usize,
        #[arg(long, default_value_t = 500)]
        reps: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 12)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        ring_width: f64,
        #[arg(long)]
        near_radius: Option<f64>,
        #[arg(long, value_enum, default_value = "balanced")]
        arm_rule: ArmRuleArg,
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        cliff_ord_self_loop: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_estimands(s: &str) -> CliResult<Vec<Estimand>> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(Estimand::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in s.split(',') {
        let q: Estimand = part
            .trim()
            .parse()
            .map_err(|_| input(format!("unknown estimand `{part}`; use D, I, T, O or all")))?;
        if !out.contains(&q) {
            out.push(q);
        }
    }
    Ok(out)
}

fn run(cli: Cli) -> CliResult<bool> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(input("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| input(format!("cannot configure thread pool: {e}")))?;
    }
    let stamp = cli.stamp;
    match cli.command {
        Command::Cluster {
            k,
            seed,
            input: path,
            out,
            unit_length,
            metric,
            rn_multiplier,
        } => {
            let metric = match metric {
                MetricArg::Euclidean => Metric::Euclidean,
                MetricArg::Chebyshev => Metric::Chebyshev,
            };
            let msg = cluster(
                &ClusterArgs {
                    k,
                    seed,
                    input: path,
                    out,
                    unit_length,
                    metric,
                    rn_multiplier,
                },
                stamp,
            )?;
            eprintln!("{msg}");
        }
        Command::PlanK { volume, n, gamma, dim } => {
            let (k, note) = plan(volume, n, gamma, dim)?;
            println!("{k}");
            eprintln!("{note}");
        }
        Command::Assign {
            clusters,
            p,
            q,
            seed,
            replication,
            out,
        } => {
            let msg = assign(
                &AssignArgs {
                    clusters,
                    p,
                    q,
                    seed,
                    replication,
                    out,
                },
                stamp,
            )?;
            eprintln!("{msg}");
        }
        Command::Estimate {
            clusters,
            draw,
            outcomes,
            estimand,
            rn_multiplier,
            bias_c,
            bias_gamma,
            strict_paper,
            out,
        } => {
            let args = EstimateArgs {
                clusters,
                draw,
                outcomes,
                estimands: parse_estimands(&estimand)?,
                rn_multiplier,
                bias: bias_c.zip(bias_gamma),
                strict_paper,
                out,
            };
            let (msg, dropped) = estimate(&args, stamp)?;
            println!("{msg}");
            return Ok(!dropped);
        }
        Command::Simulate {
            config,
            reps,
            seed,
            out,
            json,
        } => {
            let msg = simulate(
                &SimulateArgs {
                    config,
                    reps,
                    seed,
                    out,
                    json,
                },
                stamp,
            )?;
            eprintln!("{msg}");
        }
        Command::Variogram {
            model,
            arms,
            reps,
            seed,
            n,
            alpha,
            k,
            ring_width,
            near_radius,
            arm_rule,
            cliff_ord_self_loop,
            out,
        } => {
            let msg = variogram(
                &VariogramArgs {
                    model: match model {
                        ModelArg::Ma => Model::MovingAverage,
                        ModelArg::CliffOrd => Model::CliffOrd,
                    },
                    arms,
                    reps,
                    seed,
                    n,
                    alpha,
                    k,
                    ring_width,
                    near_radius,
                    arm_rule: match arm_rule {
                        ArmRuleArg::Uniform => ArmRule::Uniform,
                        ArmRuleArg::Balanced => ArmRule::Balanced,
                    },
                    cliff_ord_self_loop,
                    out,
                },
                stamp,
            )?;
            println!("{msg}");
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: at least one estimand was dropped because of a degenerate draw");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
