//! Area-level BYM model fitted by Gibbs sampling.
//!
//! ```text
//! Y_i ~ N(θ_i, V_i)            Y_i = logit p̂_i, V_i its delta-method variance
//! θ_i = β₀ + ε_i + S_i
//! ε_i ~ N(0, σ_ε²)             iid
//! S   ~ ICAR(σ_S²)             density ∝ exp(−SᵀQS / 2σ_S²)
//! β₀ flat, σ_ε², σ_S² ~ inverse-gamma
//! ```
//!
//! `V_i` is a known constant. Regions whose direct estimate is degenerate (or
//! has zero variance) contribute no likelihood term; their θ is predicted
//! from the random effects alone.
//!
//! Every conditional is normal or inverse-gamma, so each sweep is exact
//! single-site Gibbs: β₀, each ε_i, each S_i, then the two variances. After
//! the S sweep the spatial effect is recentred to sum to zero within every
//! connected component. The mean removed from the largest component is moved
//! into β₀, which leaves θ unchanged on connected maps.

pub mod diagnostics;
pub mod output;
pub mod summary;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::direct::DirectEstimate;
use crate::graph::{icar_precision, AdjacencyGraph, IcarPrecision};
use diagnostics::{diagnose, Convergence};
use summary::{summarize, summarize_prevalence, Summary};

pub const MIN_RETAINED_DRAWS: usize = 500;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("invalid MCMC configuration: {0}")]
    Config(String),
    #[error("invalid prior: {0}")]
    Prior(String),
    #[error("estimates and graph disagree on regions: {0}")]
    RegionMismatch(String),
    #[error("need at least 2 regions with a usable direct estimate, found {0}")]
    TooFewActive(usize),
    #[error("non-finite value in chain {chain} at iteration {iteration}")]
    NonFinite { chain: usize, iteration: usize },
}

/// Inverse-gamma hyperpriors and optional fixed variances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BymPriors {
    pub eps_shape: f64,
    pub eps_rate: f64,
    pub spatial_shape: f64,
    pub spatial_rate: f64,
    /// Hold σ_ε² at this value instead of sampling it.
    pub fixed_eps_variance: Option<f64>,
    /// Hold σ_S² at this value instead of sampling it.
    pub fixed_spatial_variance: Option<f64>,
}

impl Default for BymPriors {
    fn default() -> Self {
        BymPriors {
            eps_shape: 0.5,
            eps_rate: 0.0005,
            spatial_shape: 0.5,
            spatial_rate: 0.0005,
            fixed_eps_variance: None,
            fixed_spatial_variance: None,
        }
    }
}

impl BymPriors {
    fn validate(&self) -> Result<(), FitError> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        for (name, v) in [
            ("eps_shape", self.eps_shape),
            ("eps_rate", self.eps_rate),
            ("spatial_shape", self.spatial_shape),
            ("spatial_rate", self.spatial_rate),
        ] {
            if !pos(v) {
                return Err(FitError::Prior(format!("{name} must be positive, got {v}")));
            }
        }
        for v in [self.fixed_eps_variance, self.fixed_spatial_variance]
            .into_iter()
            .flatten()
        {
            if !pos(v) {
                return Err(FitError::Prior(format!("fixed variance must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McmcConfig {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            chains: 4,
            iterations: 10_000,
            burn_in: 5_000,
            thin: 1,
            seed: 1,
        }
    }
}

impl McmcConfig {
    pub fn retained_per_chain(&self) -> usize {
        self.iterations.saturating_sub(self.burn_in).div_ceil(self.thin.max(1))
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if self.chains < 2 {
            return Err(FitError::Config(format!("need at least 2 chains, got {}", self.chains)));
        }
        if self.thin == 0 {
            return Err(FitError::Config("thin must be at least 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(FitError::Config(format!(
                "burn-in {} must be below iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.retained_per_chain() < MIN_RETAINED_DRAWS {
            return Err(FitError::Config(format!(
                "only {} retained draws per chain, need {MIN_RETAINED_DRAWS}",
                self.retained_per_chain()
            )));
        }
        Ok(())
    }
}

/// Data, spatial structure and priors, aligned by region.
#[derive(Debug, Clone)]
pub struct BymModelSpec {
    estimates: Vec<DirectEstimate>,
    graph: AdjacencyGraph,
    precision: IcarPrecision,
    priors: BymPriors,
}

impl BymModelSpec {
    /// Pairs estimates with the graph. Both must cover the same regions; the
    /// estimates are reordered to the graph's node order.
    pub fn new(estimates: Vec<DirectEstimate>, graph: AdjacencyGraph, priors: BymPriors) -> Result<Self, FitError> {
        priors.validate()?;
        if estimates.len() != graph.len() {
            return Err(FitError::RegionMismatch(format!(
                "{} estimates for {} graph nodes",
                estimates.len(),
                graph.len()
            )));
        }
        let mut ordered: Vec<Option<DirectEstimate>> = vec![None; graph.len()];
        for e in estimates {
            let i = graph
                .index_of(&e.region_id)
                .ok_or_else(|| FitError::RegionMismatch(format!("`{}` is not in the graph", e.region_id)))?;
            if ordered[i].is_some() {
                return Err(FitError::RegionMismatch(format!("`{}` appears twice", e.region_id)));
            }
            ordered[i] = Some(e);
        }
        let estimates: Vec<DirectEstimate> = ordered.into_iter().map(|e| e.expect("bijection")).collect();
        let precision = icar_precision(&graph);
        Ok(BymModelSpec {
            estimates,
            graph,
            precision,
            priors,
        })
    }

    pub fn estimates(&self) -> &[DirectEstimate] {
        &self.estimates
    }

    pub fn graph(&self) -> &AdjacencyGraph {
        &self.graph
    }

    pub fn precision(&self) -> &IcarPrecision {
        &self.precision
    }

    pub fn priors(&self) -> &BymPriors {
        &self.priors
    }

    /// `(Y_i, V_i)` for regions that enter the likelihood.
    pub fn likelihood_terms(&self) -> Vec<Option<(f64, f64)>> {
        self.estimates
            .iter()
            .map(|e| match (e.logit_y, e.var_logit) {
                (Some(y), Some(v)) if !e.degenerate.is_degenerate() && v > 0.0 && v.is_finite() => Some((y, v)),
                _ => None,
            })
            .collect()
    }
}

/// Retained draws of one chain; region-major for θ and S.
struct ChainDraws {
    theta: Vec<Vec<f64>>,
    spatial: Vec<Vec<f64>>,
    beta0: Vec<f64>,
    var_eps: Vec<f64>,
    var_spatial: Vec<f64>,
}

struct ChainState {
    beta0: f64,
    eps: Vec<f64>,
    spatial: Vec<f64>,
    var_eps: f64,
    var_spatial: f64,
}

fn normal(rng: &mut ChaCha8Rng, mean: f64, precision: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    mean + z / precision.sqrt()
}

fn inverse_gamma(rng: &mut ChaCha8Rng, shape: f64, rate: f64) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters");
    1.0 / rng.sample(g)
}

struct Sampler<'a> {
    spec: &'a BymModelSpec,
    terms: Vec<Option<(f64, f64)>>,
    /// Components with at least two nodes, largest first.
    components: Vec<&'a [usize]>,
    active: usize,
}

impl<'a> Sampler<'a> {
    fn new(spec: &'a BymModelSpec) -> Self {
        let terms = spec.likelihood_terms();
        let active = terms.iter().filter(|t| t.is_some()).count();
        let mut components: Vec<&[usize]> = spec
            .graph
            .components()
            .iter()
            .filter(|c| c.len() > 1)
            .map(Vec::as_slice)
            .collect();
        components.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        Sampler {
            spec,
            terms,
            components,
            active,
        }
    }

    fn initial_state(&self, chain: usize) -> ChainState {
        let ys: Vec<f64> = self.terms.iter().flatten().map(|t| t.0).collect();
        let k = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / k;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (k - 1.0);
        let offset = if chain.is_multiple_of(2) { 2.0 } else { -2.0 } * var.sqrt();
        let start_var = (var / 2.0).max(0.01);
        let priors = &self.spec.priors;
        ChainState {
            beta0: mean + offset,
            eps: self.terms.iter().map(|t| t.map_or(0.0, |(y, _)| y - mean)).collect(),
            spatial: vec![0.0; self.terms.len()],
            var_eps: priors.fixed_eps_variance.unwrap_or(start_var),
            var_spatial: priors.fixed_spatial_variance.unwrap_or(start_var),
        }
    }

    fn sweep(&self, s: &mut ChainState, rng: &mut ChaCha8Rng) {
        let q = &self.spec.precision;
        let priors = &self.spec.priors;

        // (1) β₀ under a flat prior
        let (mut num, mut prec) = (0.0, 0.0);
        for (i, t) in self.terms.iter().enumerate() {
            if let Some((y, v)) = *t {
                num += (y - s.eps[i] - s.spatial[i]) / v;
                prec += 1.0 / v;
            }
        }
        s.beta0 = normal(rng, num / prec, prec);

        // (2) ε_i
        for (i, t) in self.terms.iter().enumerate() {
            let prior_prec = 1.0 / s.var_eps;
            s.eps[i] = match *t {
                Some((y, v)) => {
                    let prec = prior_prec + 1.0 / v;
                    normal(rng, (y - s.beta0 - s.spatial[i]) / v / prec, prec)
                }
                None => normal(rng, 0.0, prior_prec),
            };
        }

        // (3) S_i, single site; isolated nodes stay at 0
        for (i, t) in self.terms.iter().enumerate() {
            let d = q.diag()[i];
            if d == 0.0 {
                s.spatial[i] = 0.0;
                continue;
            }
            let prior_mean = q.neighbors(i).iter().map(|&(j, w)| w * s.spatial[j]).sum::<f64>() / d;
            let prior_prec = d / s.var_spatial;
            s.spatial[i] = match *t {
                Some((y, v)) => {
                    let prec = prior_prec + 1.0 / v;
                    let mean = (prior_prec * prior_mean + (y - s.beta0 - s.eps[i]) / v) / prec;
                    normal(rng, mean, prec)
                }
                None => normal(rng, prior_mean, prior_prec),
            };
        }
        for (k, comp) in self.components.iter().enumerate() {
            let m = comp.iter().map(|&i| s.spatial[i]).sum::<f64>() / comp.len() as f64;
            for &i in comp.iter() {
                s.spatial[i] -= m;
            }
            if k == 0 {
                s.beta0 += m;
            }
        }

        // (4) σ_ε² from likelihood-active ε only
        if priors.fixed_eps_variance.is_none() {
            let ss: f64 = self
                .terms
                .iter()
                .zip(&s.eps)
                .filter(|(t, _)| t.is_some())
                .map(|(_, e)| e * e)
                .sum();
            s.var_eps = inverse_gamma(
                rng,
                priors.eps_shape + self.active as f64 / 2.0,
                priors.eps_rate + ss / 2.0,
            );
        }

        // (5) σ_S²
        if priors.fixed_spatial_variance.is_none() && q.rank() > 0 {
            let qf = q.quadratic_form(&s.spatial).expect("state has model dimension");
            s.var_spatial = inverse_gamma(
                rng,
                priors.spatial_shape + q.rank() as f64 / 2.0,
                priors.spatial_rate + qf / 2.0,
            );
        }
    }

    fn run_chain(&self, chain: usize, config: &McmcConfig) -> Result<ChainDraws, FitError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(chain as u64);
        let n = self.terms.len();
        let keep = config.retained_per_chain();
        let mut out = ChainDraws {
            theta: vec![Vec::with_capacity(keep); n],
            spatial: vec![Vec::with_capacity(keep); n],
            beta0: Vec::with_capacity(keep),
            var_eps: Vec::with_capacity(keep),
            var_spatial: Vec::with_capacity(keep),
        };
        let mut state = self.initial_state(chain);
        for iteration in 0..config.iterations {
            self.sweep(&mut state, &mut rng);
            let finite = state.beta0.is_finite()
                && state.var_eps.is_finite()
                && state.var_spatial.is_finite()
                && state.var_eps > 0.0
                && state.var_spatial > 0.0
                && state.eps.iter().chain(&state.spatial).all(|v| v.is_finite());
            if !finite {
                return Err(FitError::NonFinite { chain, iteration });
            }
            if iteration >= config.burn_in && (iteration - config.burn_in).is_multiple_of(config.thin) {
                for i in 0..n {
                    out.theta[i].push(state.beta0 + state.eps[i] + state.spatial[i]);
                    out.spatial[i].push(state.spatial[i]);
                }
                out.beta0.push(state.beta0);
                out.var_eps.push(state.var_eps);
                out.var_spatial.push(state.var_spatial);
            }
        }
        Ok(out)
    }
}

/// Posterior summary for one region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPosterior {
    pub region_id: String,
    pub theta: Summary,
    pub prevalence: Summary,
    pub convergence: Convergence,
}

/// Hyperparameter summary.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperPosterior {
    pub name: &'static str,
    pub summary: Summary,
    /// `None` for quantities held fixed.
    pub convergence: Option<Convergence>,
}

#[derive(Debug, Clone)]
pub struct BymPosterior {
    region_ids: Vec<String>,
    /// `[region][chain][draw]`
    theta: Vec<Vec<Vec<f64>>>,
    /// `[region][chain][draw]`
    spatial: Vec<Vec<Vec<f64>>>,
    /// `[chain][draw]` for β₀, σ_ε², σ_S².
    beta0: Vec<Vec<f64>>,
    var_eps: Vec<Vec<f64>>,
    var_spatial: Vec<Vec<f64>>,
    regions: Vec<RegionPosterior>,
    hyper: Vec<HyperPosterior>,
    config: McmcConfig,
    priors: BymPriors,
}

impl BymPosterior {
    pub fn region_ids(&self) -> &[String] {
        &self.region_ids
    }

    pub fn regions(&self) -> &[RegionPosterior] {
        &self.regions
    }

    pub fn region(&self, id: &str) -> Option<&RegionPosterior> {
        self.regions.iter().find(|r| r.region_id == id)
    }

    pub fn hyperparameters(&self) -> &[HyperPosterior] {
        &self.hyper
    }

    /// `[chain][draw]` draws of θ for region `i`.
    pub fn theta_draws(&self, i: usize) -> &[Vec<f64>] {
        &self.theta[i]
    }

    /// `[chain][draw]` draws of the spatial effect for region `i`.
    pub fn spatial_draws(&self, i: usize) -> &[Vec<f64>] {
        &self.spatial[i]
    }

    pub fn beta0_draws(&self) -> &[Vec<f64>] {
        &self.beta0
    }

    pub fn var_eps_draws(&self) -> &[Vec<f64>] {
        &self.var_eps
    }

    pub fn var_spatial_draws(&self) -> &[Vec<f64>] {
        &self.var_spatial
    }

    pub fn config(&self) -> &McmcConfig {
        &self.config
    }

    pub fn priors(&self) -> &BymPriors {
        &self.priors
    }

    /// False when any monitored quantity fails R̂ or ESS checks.
    pub fn converged(&self) -> bool {
        self.regions.iter().all(|r| r.convergence.ok())
            && self.hyper.iter().all(|h| h.convergence.is_none_or(|c| c.ok()))
    }

    /// Quantities that failed a convergence check, with the diagnostics.
    pub fn convergence_failures(&self) -> Vec<String> {
        let describe = |name: &str, c: &Convergence| format!("{name}: R-hat {:.3}, ESS {:.0}", c.rhat, c.ess);
        let mut out: Vec<String> = self
            .regions
            .iter()
            .filter(|r| !r.convergence.ok())
            .map(|r| describe(&format!("theta[{}]", r.region_id), &r.convergence))
            .collect();
        out.extend(self.hyper.iter().filter_map(|h| match &h.convergence {
            Some(c) if !c.ok() => Some(describe(h.name, c)),
            _ => None,
        }));
        out
    }
}

fn pooled(chains: &[Vec<f64>]) -> Vec<f64> {
    chains.iter().flatten().copied().collect()
}

/// Runs `config.chains` chains (in parallel; results do not depend on
/// scheduling) and summarizes them.
pub fn gibbs_fit(spec: &BymModelSpec, config: &McmcConfig) -> Result<BymPosterior, FitError> {
    config.validate()?;
    let sampler = Sampler::new(spec);
    if sampler.active < 2 {
        return Err(FitError::TooFewActive(sampler.active));
    }
    let chains: Vec<ChainDraws> = (0..config.chains)
        .into_par_iter()
        .map(|c| sampler.run_chain(c, config))
        .collect::<Result<_, _>>()?;

    let n = spec.estimates.len();
    let by_region = |pick: fn(&ChainDraws) -> &Vec<Vec<f64>>| -> Vec<Vec<Vec<f64>>> {
        (0..n)
            .map(|i| chains.iter().map(|c| pick(c)[i].clone()).collect())
            .collect()
    };
    let theta = by_region(|c| &c.theta);
    let spatial = by_region(|c| &c.spatial);
    let beta0: Vec<Vec<f64>> = chains.iter().map(|c| c.beta0.clone()).collect();
    let var_eps: Vec<Vec<f64>> = chains.iter().map(|c| c.var_eps.clone()).collect();
    let var_spatial: Vec<Vec<f64>> = chains.iter().map(|c| c.var_spatial.clone()).collect();

    let regions: Vec<RegionPosterior> = (0..n)
        .into_par_iter()
        .map(|i| {
            let all = pooled(&theta[i]);
            RegionPosterior {
                region_id: spec.estimates[i].region_id.clone(),
                theta: summarize(&all),
                prevalence: summarize_prevalence(&all),
                convergence: diagnose(&theta[i]),
            }
        })
        .collect();

    let priors = spec.priors;
    let sampled_spatial = priors.fixed_spatial_variance.is_none() && spec.precision.rank() > 0;
    let hyper = vec![
        HyperPosterior {
            name: "beta0",
            summary: summarize(&pooled(&beta0)),
            convergence: Some(diagnose(&beta0)),
        },
        HyperPosterior {
            name: "var_eps",
            summary: summarize(&pooled(&var_eps)),
            convergence: priors.fixed_eps_variance.is_none().then(|| diagnose(&var_eps)),
        },
        HyperPosterior {
            name: "var_spatial",
            summary: summarize(&pooled(&var_spatial)),
            convergence: sampled_spatial.then(|| diagnose(&var_spatial)),
        },
    ];

    Ok(BymPosterior {
        region_ids: spec.estimates.iter().map(|e| e.region_id.clone()).collect(),
        theta,
        spatial,
        beta0,
        var_eps,
        var_spatial,
        regions,
        hyper,
        config: *config,
        priors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::direct::Degeneracy;
    use crate::graph::WeightStyle;

    fn estimate(id: &str, y: f64, v: f64) -> DirectEstimate {
        let p = summary::expit(y);
        DirectEstimate {
            region_id: id.into(),
            p_hat: p,
            var_p: Some(v * (p * (1.0 - p)).powi(2)),
            logit_y: Some(y),
            var_logit: Some(v),
            n: 100,
            m_clusters: 10,
            degenerate: Degeneracy::None,
        }
    }

    fn path(n: usize) -> AdjacencyGraph {
        let ids = (0..n).map(|i| format!("r{i:02}")).collect();
        AdjacencyGraph::new(ids, (1..n).map(|i| (i - 1, i)), WeightStyle::B).unwrap()
    }

    fn small_config(seed: u64) -> McmcConfig {
        McmcConfig {
            chains: 2,
            iterations: 1500,
            burn_in: 500,
            thin: 1,
            seed,
        }
    }

    #[test]
    fn config_validation() {
        assert!(McmcConfig::default().validate().is_ok());
        let bad = McmcConfig {
            chains: 1,
            ..McmcConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = McmcConfig {
            burn_in: 10_000,
            ..McmcConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = McmcConfig {
            iterations: 5_400,
            ..McmcConfig::default()
        };
        assert!(bad.validate().is_err());
        let ok = McmcConfig {
            iterations: 5_500,
            ..McmcConfig::default()
        };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn spec_rejects_mismatched_regions() {
        let est = vec![estimate("r00", 0.0, 0.1), estimate("zz", 0.0, 0.1)];
        assert!(matches!(
            BymModelSpec::new(est, path(2), BymPriors::default()),
            Err(FitError::RegionMismatch(_))
        ));
    }

    #[test]
    fn spec_rejects_bad_prior() {
        let est = vec![estimate("r00", 0.0, 0.1), estimate("r01", 0.0, 0.1)];
        let priors = BymPriors {
            eps_rate: 0.0,
            ..BymPriors::default()
        };
        assert!(matches!(
            BymModelSpec::new(est, path(2), priors),
            Err(FitError::Prior(_))
        ));
    }

    #[test]
    fn all_degenerate_is_an_error() {
        let mut est = vec![estimate("r00", 0.0, 0.1), estimate("r01", 0.0, 0.1)];
        for e in &mut est {
            e.degenerate = Degeneracy::AllZero;
            e.logit_y = None;
            e.var_logit = None;
        }
        let spec = BymModelSpec::new(est, path(2), BymPriors::default()).unwrap();
        assert!(matches!(
            gibbs_fit(&spec, &small_config(1)),
            Err(FitError::TooFewActive(0))
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let est: Vec<_> = (0..6)
            .map(|i| estimate(&format!("r{i:02}"), -2.0 + 0.1 * i as f64, 0.05))
            .collect();
        let spec = BymModelSpec::new(est, path(6), BymPriors::default()).unwrap();
        let a = gibbs_fit(&spec, &small_config(42)).unwrap();
        let b = gibbs_fit(&spec, &small_config(42)).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.regions, b.regions);
        let c = gibbs_fit(&spec, &small_config(43)).unwrap();
        assert_ne!(a.theta, c.theta);
    }

    #[test]
    fn spatial_effect_sums_to_zero_per_component() {
        let ids: Vec<String> = (0..7).map(|i| format!("r{i}")).collect();
        // components {0,1,2}, {3,4}, {5}, {6}
        let g = AdjacencyGraph::new(ids.clone(), [(0, 1), (1, 2), (3, 4)], WeightStyle::B).unwrap();
        let est: Vec<_> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| estimate(id, -1.0 + 0.2 * i as f64, 0.1))
            .collect();
        let spec = BymModelSpec::new(est, g.clone(), BymPriors::default()).unwrap();
        let post = gibbs_fit(&spec, &small_config(3)).unwrap();
        for comp in g.components() {
            for chain in 0..2 {
                for d in 0..post.config().retained_per_chain() {
                    let s: f64 = comp.iter().map(|&i| post.spatial_draws(i)[chain][d]).sum();
                    assert!(s.abs() < 1e-10, "{s}");
                }
            }
        }
        assert!(post.spatial_draws(5).iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn equal_data_gives_equal_posteriors() {
        let est: Vec<_> = (0..5).map(|i| estimate(&format!("r{i:02}"), -1.5, 0.04)).collect();
        let spec = BymModelSpec::new(est, path(5), BymPriors::default()).unwrap();
        let post = gibbs_fit(
            &spec,
            &McmcConfig {
                iterations: 6000,
                burn_in: 1000,
                ..small_config(8)
            },
        )
        .unwrap();
        for r in post.regions() {
            assert!((r.theta.mean + 1.5).abs() < 0.03, "{}", r.theta.mean);
        }
    }

    #[test]
    fn degenerate_region_gets_positive_prevalence() {
        let mut est: Vec<_> = (0..5).map(|i| estimate(&format!("r{i:02}"), -3.0, 0.2)).collect();
        est[2].degenerate = Degeneracy::AllZero;
        est[2].p_hat = 0.0;
        est[2].logit_y = None;
        est[2].var_logit = None;
        let spec = BymModelSpec::new(est, path(5), BymPriors::default()).unwrap();
        let post = gibbs_fit(&spec, &small_config(5)).unwrap();
        let r = &post.regions()[2];
        assert!(r.prevalence.q025 > 0.0 && r.prevalence.mean > 0.0);
        assert!(post.theta_draws(2).iter().flatten().all(|&t| summary::expit(t) > 0.0));
    }
}
