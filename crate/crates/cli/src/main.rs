use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use smallarea::bym::{BymPriors, McmcConfig};
use smallarea::graph::{WeightStyle, DEFAULT_TOLERANCE};
use smallarea::pipeline::{self, AdjacencyOptions, RunContext, SmoothOptions, SmoothReport};
use smallarea::synthetic::ScenarioConfig;

const EXIT_INVALID: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

/// Direct and spatially smoothed small-area prevalence estimation.
#[derive(Debug, Parser)]
#[command(name = "smallarea", version)]
struct Cli {
    /// Seed for simulation and MCMC (defaults to the scenario seed, else 1).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; step inputs default to files in it.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Scenario config (TOML). Its hash is recorded in every artifact.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic survey from the scenario config.
    Simulate,
    /// Design-weighted direct estimates per region.
    Direct {
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        boundaries: Option<PathBuf>,
    },
    /// Region adjacency graph from the boundaries.
    Adjacency {
        #[arg(long)]
        boundaries: Option<PathBuf>,
        #[command(flatten)]
        adjacency: AdjacencyArgs,
    },
    /// Fit the BYM model to the direct estimates.
    Smooth {
        #[arg(long)]
        direct: Option<PathBuf>,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[command(flatten)]
        mcmc: McmcArgs,
    },
    /// Sample-size, prevalence and per-group maps.
    Render {
        #[arg(long)]
        boundaries: Option<PathBuf>,
        #[arg(long)]
        direct: Option<PathBuf>,
        #[arg(long)]
        posterior: Option<PathBuf>,
    },
    /// Direct versus smoothed comparison figure.
    Compare {
        #[arg(long)]
        direct: Option<PathBuf>,
        #[arg(long)]
        posterior: Option<PathBuf>,
    },
    /// All steps, from scenario config to figures.
    Pipeline {
        #[command(flatten)]
        adjacency: AdjacencyArgs,
        #[command(flatten)]
        mcmc: McmcArgs,
    },
}

#[derive(Debug, Args)]
struct AdjacencyArgs {
    /// Snapping tolerance for shared borders, in coordinate units.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
    /// Neighbour weighting: B (binary) or W (row-standardized).
    #[arg(long, default_value_t = WeightStyle::B)]
    style: WeightStyle,
}

impl AdjacencyArgs {
    fn options(&self) -> AdjacencyOptions {
        AdjacencyOptions {
            tolerance: self.tolerance,
            style: self.style,
        }
    }
}

#[derive(Debug, Args)]
struct McmcArgs {
    #[arg(long, default_value_t = 4)]
    chains: usize,
    #[arg(long, default_value_t = 10_000)]
    iterations: usize,
    #[arg(long, default_value_t = 5_000)]
    burn_in: usize,
    #[arg(long, default_value_t = 1)]
    thin: usize,
    /// Also write per-draw hyperparameters to trace.csv.
    #[arg(long)]
    trace: bool,
    /// Exit with status 3 when the chains fail the convergence checks.
    #[arg(long)]
    strict: bool,
}

impl McmcArgs {
    fn options(&self) -> SmoothOptions {
        SmoothOptions {
            mcmc: McmcConfig {
                chains: self.chains,
                iterations: self.iterations,
                burn_in: self.burn_in,
                thin: self.thin,
                seed: 0,
            },
            priors: BymPriors::default(),
            trace: self.trace,
        }
    }
}

fn input(explicit: &Option<PathBuf>, out: &Path, default: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| out.join(default))
}

fn verdict(report: &SmoothReport, strict: bool) -> u8 {
    if report.converged {
        return 0;
    }
    for f in &report.failures {
        eprintln!("warning: {f}");
    }
    if strict {
        EXIT_NOT_CONVERGED
    } else {
        0
    }
}

fn run(cli: Cli) -> Result<u8, String> {
    let config_bytes = match &cli.config {
        Some(p) => Some(std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))?),
        None => None,
    };
    let scenario = match (&cli.config, &config_bytes) {
        (Some(p), Some(bytes)) => {
            let text = String::from_utf8_lossy(bytes);
            Some(ScenarioConfig::from_toml(&text, p).map_err(|e| e.to_string()))
        }
        _ => None,
    };
    let scenario_seed = scenario.as_ref().and_then(|s| s.as_ref().ok()).map(|s| s.seed);
    let ctx = RunContext::new(cli.seed.or(scenario_seed).unwrap_or(1), config_bytes.as_deref());
    let need_scenario = || -> Result<ScenarioConfig, String> {
        match &scenario {
            Some(Ok(s)) => Ok(s.clone()),
            Some(Err(e)) => Err(e.clone()),
            None => Err("this command needs --config <scenario.toml>".into()),
        }
    };

    let out = cli.out.as_path();
    std::fs::create_dir_all(out).map_err(|e| format!("{}: {e}", out.display()))?;
    let err = |e: pipeline::PipelineError| e.to_string();
    match &cli.command {
        Command::Simulate => {
            pipeline::simulate(&ctx, &need_scenario()?, out).map_err(err)?;
        }
        Command::Direct { records, boundaries } => {
            let report = pipeline::direct_step(
                &ctx,
                &input(records, out, pipeline::RECORDS_FILE),
                &input(boundaries, out, pipeline::BOUNDARIES_FILE),
                &out.join(pipeline::DIRECT_FILE),
            )
            .map_err(err)?;
            if report.dropped_records > 0 || !report.dropped_regions.is_empty() {
                eprintln!(
                    "dropped {} records without a boundary ({:.1}% retained) and {} regions without records",
                    report.dropped_records,
                    100.0 * report.retained_fraction,
                    report.dropped_regions.len()
                );
            }
        }
        Command::Adjacency { boundaries, adjacency } => {
            pipeline::adjacency_step(
                &ctx,
                &input(boundaries, out, pipeline::BOUNDARIES_FILE),
                &out.join(pipeline::GRAPH_FILE),
                adjacency.options(),
            )
            .map_err(err)?;
        }
        Command::Smooth { direct, graph, mcmc } => {
            let report = pipeline::smooth_step(
                &ctx,
                &input(direct, out, pipeline::DIRECT_FILE),
                &input(graph, out, pipeline::GRAPH_FILE),
                &out.join(pipeline::POSTERIOR_FILE),
                &mcmc.options(),
            )
            .map_err(err)?;
            return Ok(verdict(&report, mcmc.strict));
        }
        Command::Render {
            boundaries,
            direct,
            posterior,
        } => {
            pipeline::render_step(
                &ctx,
                &input(boundaries, out, pipeline::BOUNDARIES_FILE),
                &input(direct, out, pipeline::DIRECT_FILE),
                &input(posterior, out, pipeline::POSTERIOR_FILE),
                out,
            )
            .map_err(err)?;
        }
        Command::Compare { direct, posterior } => {
            pipeline::compare_step(
                &ctx,
                &input(direct, out, pipeline::DIRECT_FILE),
                &input(posterior, out, pipeline::POSTERIOR_FILE),
                &out.join(pipeline::FIG_COMPARISON),
            )
            .map_err(err)?;
        }
        Command::Pipeline { adjacency, mcmc } => {
            let report = pipeline::run_pipeline(&ctx, &need_scenario()?, adjacency.options(), &mcmc.options(), out)
                .map_err(err)?;
            return Ok(verdict(&report.smooth, mcmc.strict));
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}
