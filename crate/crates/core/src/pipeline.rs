//! File-to-file pipeline steps. Each step reads its inputs from disk and
//! writes its artifacts with a metadata header, so running the steps one by
//! one produces the same files as [`run_pipeline`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bym::output::{posterior_rows, read_posterior, write_posterior, write_trace, OutputError};
use crate::bym::{gibbs_fit, BymModelSpec, BymPriors, FitError, McmcConfig};
use crate::data::{
    drop_unlinked, load_boundaries, load_records, write_boundaries, write_records, DataError, DropReport, RecordSchema,
};
use crate::direct::{estimate_all, read_estimates, write_estimates, EstimateError};
use crate::graph::{build_adjacency, read_graph, write_graph, GraphError, WeightStyle, DEFAULT_TOLERANCE};
use crate::render::{render_choropleth, render_comparison, render_map_panels, ChoroplethSpec, RenderError, ScaleScope};
use crate::synthetic::{sample_survey, write_truth, ScenarioConfig, SyntheticError};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const RECORDS_FILE: &str = "records.csv";
pub const BOUNDARIES_FILE: &str = "boundaries.geojson";
pub const TRUTH_FILE: &str = "truth.csv";
pub const DIRECT_FILE: &str = "direct.csv";
pub const GRAPH_FILE: &str = "graph.toml";
pub const POSTERIOR_FILE: &str = "posterior.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const FIG_SAMPLE_SIZE: &str = "fig1_sample_size.svg";
pub const FIG_PREVALENCE: &str = "fig2_prevalence.svg";
pub const FIG_COUNTRY_ZOOM: &str = "fig3_country_zoom.svg";
pub const FIG_COMPARISON: &str = "fig4_5_comparison.svg";

/// Number of colour classes on every map.
pub const MAP_BINS: usize = 5;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn write_file(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn config_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Provenance stamped on every artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunContext {
    pub seed: u64,
    pub config_hash: Option<String>,
}

impl RunContext {
    pub fn new(seed: u64, config_bytes: Option<&[u8]>) -> Self {
        RunContext {
            seed,
            config_hash: config_bytes.map(config_hash),
        }
    }

    fn fields(&self, artifact: &str) -> Vec<(String, String)> {
        vec![
            ("generator".into(), format!("smallarea {VERSION}")),
            ("seed".into(), self.seed.to_string()),
            (
                "config_sha256".into(),
                self.config_hash.clone().unwrap_or_else(|| "none".into()),
            ),
            ("artifact".into(), artifact.into()),
        ]
    }

    /// `key: value` lines for CSV, TOML and SVG headers.
    pub fn header(&self, artifact: &str) -> Vec<String> {
        self.fields(artifact)
            .into_iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect()
    }

    fn metadata(&self, artifact: &str) -> BTreeMap<String, String> {
        self.fields(artifact).into_iter().collect()
    }
}

/// Draws a synthetic survey. The context seed replaces the scenario seed.
/// Writes records, boundaries and the true prevalence.
pub fn simulate(ctx: &RunContext, scenario: &ScenarioConfig, out: &Path) -> Result<(), PipelineError> {
    let mut scenario = scenario.clone();
    scenario.seed = ctx.seed;
    let truth = scenario.build_truth()?;
    let survey = sample_survey(&truth)?;
    write_records(&out.join(RECORDS_FILE), survey.records(), &ctx.header("survey records"))?;
    write_boundaries(
        &out.join(BOUNDARIES_FILE),
        survey.regions(),
        &ctx.metadata("region boundaries"),
    )?;
    write_truth(
        &out.join(TRUTH_FILE),
        truth.true_prevalence(),
        &ctx.header("true prevalence"),
    )?;
    Ok(())
}

/// Direct estimates for every region with both records and a boundary.
pub fn direct_step(
    ctx: &RunContext,
    records: &Path,
    boundaries: &Path,
    out_file: &Path,
) -> Result<DropReport, PipelineError> {
    let recs = load_records(records, &RecordSchema::default())?;
    let bounds = load_boundaries(boundaries)?;
    let (dataset, report) = drop_unlinked(recs, bounds, records.display().to_string())?;
    write_estimates(out_file, &estimate_all(&dataset), &ctx.header("direct estimates"))?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjacencyOptions {
    pub tolerance: f64,
    pub style: WeightStyle,
}

impl Default for AdjacencyOptions {
    fn default() -> Self {
        AdjacencyOptions {
            tolerance: DEFAULT_TOLERANCE,
            style: WeightStyle::B,
        }
    }
}

pub fn adjacency_step(
    ctx: &RunContext,
    boundaries: &Path,
    out_file: &Path,
    options: AdjacencyOptions,
) -> Result<(), PipelineError> {
    let bounds = load_boundaries(boundaries)?;
    let graph = build_adjacency(&bounds, options.tolerance, options.style)?;
    write_graph(out_file, &graph, &ctx.header("adjacency graph"))?;
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct SmoothOptions {
    /// The seed field is replaced by the context seed.
    pub mcmc: McmcConfig,
    pub priors: BymPriors,
    /// Also write per-draw hyperparameters.
    pub trace: bool,
}

/// Convergence verdict of a smoothing run.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothReport {
    pub converged: bool,
    pub failures: Vec<String>,
}

/// Fits the BYM model and writes the posterior table (and optionally the
/// trace, next to it). The table is written even when the chains have not
/// converged; the verdict is returned.
pub fn smooth_step(
    ctx: &RunContext,
    direct: &Path,
    graph: &Path,
    out_file: &Path,
    options: &SmoothOptions,
) -> Result<SmoothReport, PipelineError> {
    let estimates = read_estimates(direct)?;
    let graph = read_graph(graph)?;
    let spec = BymModelSpec::new(estimates.clone(), graph, options.priors)?;
    let config = McmcConfig {
        seed: ctx.seed,
        ..options.mcmc
    };
    let posterior = gibbs_fit(&spec, &config)?;
    let rows = posterior_rows(&estimates, &posterior)?;
    write_posterior(out_file, &rows, &ctx.header("smoothed posterior"))?;
    if options.trace {
        let trace = out_file.with_file_name(TRACE_FILE);
        write_trace(&trace, &posterior, &ctx.header("hyperparameter trace"))?;
    }
    Ok(SmoothReport {
        converged: posterior.converged(),
        failures: posterior.convergence_failures(),
    })
}

/// Sample-size map, prevalence maps with interval bounds, and per-group
/// zoom maps.
pub fn render_step(
    ctx: &RunContext,
    boundaries: &Path,
    direct: &Path,
    posterior: &Path,
    out: &Path,
) -> Result<(), PipelineError> {
    let bounds = load_boundaries(boundaries)?;
    let estimates = read_estimates(direct)?;
    let rows = read_posterior(posterior)?;

    let sizes: BTreeMap<String, f64> = estimates.iter().map(|e| (e.region_id.clone(), e.n as f64)).collect();
    let svg = render_choropleth(
        &bounds,
        &sizes,
        &ChoroplethSpec::new("Survey sample size per region", MAP_BINS),
        &ctx.header("sample size map"),
    )?;
    write_file(&out.join(FIG_SAMPLE_SIZE), &svg)?;

    let column = |f: fn(&crate::bym::summary::Summary) -> f64| -> BTreeMap<String, f64> {
        rows.iter().map(|r| (r.region_id.clone(), f(&r.prevalence))).collect()
    };
    let panels = vec![
        ("Smoothed prevalence (posterior mean)".to_string(), column(|s| s.mean)),
        ("95% CrI lower bound".to_string(), column(|s| s.q025)),
        ("95% CrI upper bound".to_string(), column(|s| s.q975)),
    ];
    let svg = render_map_panels(
        &bounds,
        &panels,
        &ChoroplethSpec::new("prevalence", MAP_BINS),
        &ctx.header("prevalence maps"),
    )?;
    write_file(&out.join(FIG_PREVALENCE), &svg)?;

    let svg = render_choropleth(
        &bounds,
        &column(|s| s.mean),
        &ChoroplethSpec::new("Smoothed prevalence", MAP_BINS).with_scope(ScaleScope::PerGroup),
        &ctx.header("per-group prevalence maps"),
    )?;
    write_file(&out.join(FIG_COUNTRY_ZOOM), &svg)?;
    Ok(())
}

pub fn compare_step(ctx: &RunContext, direct: &Path, posterior: &Path, out_file: &Path) -> Result<(), PipelineError> {
    let estimates = read_estimates(direct)?;
    let rows = read_posterior(posterior)?;
    let svg = render_comparison(&estimates, &rows, &ctx.header("direct vs smoothed comparison"))?;
    write_file(out_file, &svg)
}

/// What a full run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub drop: DropReport,
    pub smooth: SmoothReport,
}

/// Scenario to figures: simulate, direct, adjacency, smooth, render, compare.
pub fn run_pipeline(
    ctx: &RunContext,
    scenario: &ScenarioConfig,
    adjacency: AdjacencyOptions,
    smooth: &SmoothOptions,
    out: &Path,
) -> Result<PipelineReport, PipelineError> {
    fs::create_dir_all(out).map_err(|source| PipelineError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    simulate(ctx, scenario, out)?;
    let drop = direct_step(
        ctx,
        &out.join(RECORDS_FILE),
        &out.join(BOUNDARIES_FILE),
        &out.join(DIRECT_FILE),
    )?;
    adjacency_step(ctx, &out.join(BOUNDARIES_FILE), &out.join(GRAPH_FILE), adjacency)?;
    let smooth = smooth_step(
        ctx,
        &out.join(DIRECT_FILE),
        &out.join(GRAPH_FILE),
        &out.join(POSTERIOR_FILE),
        smooth,
    )?;
    render_step(
        ctx,
        &out.join(BOUNDARIES_FILE),
        &out.join(DIRECT_FILE),
        &out.join(POSTERIOR_FILE),
        out,
    )?;
    compare_step(
        ctx,
        &out.join(DIRECT_FILE),
        &out.join(POSTERIOR_FILE),
        &out.join(FIG_COMPARISON),
    )?;
    Ok(PipelineReport { drop, smooth })
}
