//! Synthetic multistage cluster surveys drawn from a known prevalence surface.
//!
//! A scenario lays out a grid of unit-square regions split into column
//! groups ("countries"), draws a zero-mean ICAR surface on the logit scale,
//! and samples clusters and individuals from it. Within each cluster the
//! population has a high-risk stratum that is oversampled by
//! `weight_dispersion`; the design weight is the inverse inclusion
//! probability, so the weighted estimator tracks the truth while the
//! unweighted mean overshoots it.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bym::summary::{expit, logit};
use crate::data::{write_comment_header, DataError, Geometry, IndividualRecord, RegionBoundary, SurveyDataset};
use crate::graph::{build_adjacency, icar_precision, GraphError, WeightStyle, DEFAULT_TOLERANCE};

/// Sampling fraction of the low-risk stratum; sets the weight scale.
const BASE_INCLUSION: f64 = 0.01;

const TRUTH_STREAM: u64 = 0;
const SURVEY_STREAM: u64 = 1;
const SIZE_STREAM: u64 = 2;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {reason}")]
    Config { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Key–value scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub group_breaks: Vec<usize>,
    pub base_logit: f64,
    pub spatial_sd: f64,
    pub clusters_per_region: usize,
    pub households_per_cluster: usize,
    pub weight_dispersion: f64,
    pub seed: u64,
    /// Logit-scale sd of cluster prevalence around the region truth.
    #[serde(default = "default_cluster_sd")]
    pub cluster_sd: f64,
    /// When set, region sample sizes are spread evenly over this inclusive
    /// range (in random order) and split across the region's clusters,
    /// replacing `households_per_cluster`.
    #[serde(default)]
    pub region_size_range: Option<[usize; 2]>,
    #[serde(default = "default_high_risk_share")]
    pub high_risk_share: f64,
    #[serde(default = "default_high_risk_odds_ratio")]
    pub high_risk_odds_ratio: f64,
}

fn default_cluster_sd() -> f64 {
    0.3
}

fn default_high_risk_share() -> f64 {
    0.3
}

fn default_high_risk_odds_ratio() -> f64 {
    3.0
}

impl ScenarioConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, SyntheticError> {
        toml::from_str(text).map_err(|e| SyntheticError::Config {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, SyntheticError> {
        let text = std::fs::read_to_string(path).map_err(|source| SyntheticError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn plan(&self) -> SamplingPlan {
        SamplingPlan {
            clusters_per_region: self.clusters_per_region,
            households_per_cluster: self.households_per_cluster,
            weight_dispersion: self.weight_dispersion,
            cluster_sd: self.cluster_sd,
            high_risk_share: self.high_risk_share,
            high_risk_odds_ratio: self.high_risk_odds_ratio,
            region_sizes: BTreeMap::new(),
        }
    }

    /// Grid, truth surface and sampling plan for this scenario.
    pub fn build_truth(&self) -> Result<SyntheticTruth, SyntheticError> {
        if self.rows * self.cols < 2 {
            return Err(SyntheticError::Invalid("scenario needs at least 2 regions".into()));
        }
        let regions = make_grid_regions(self.rows, self.cols, &self.group_breaks);
        let prevalence = spatial_truth(&regions, self.base_logit, self.spatial_sd, self.seed)?;
        let mut plan = self.plan();
        if let Some([lo, hi]) = self.region_size_range {
            if lo < self.clusters_per_region || hi < lo {
                return Err(SyntheticError::Invalid(format!(
                    "region_size_range [{lo}, {hi}] must be ordered and allow one person per cluster"
                )));
            }
            plan.region_sizes = spread_sizes(&regions, lo, hi, self.seed);
        }
        SyntheticTruth::new(regions, prevalence, plan, self.seed)
    }
}

fn spread_sizes(regions: &[RegionBoundary], lo: usize, hi: usize, seed: u64) -> BTreeMap<String, usize> {
    let k = regions.len();
    let mut sizes: Vec<usize> = (0..k)
        .map(|i| {
            if k == 1 {
                lo
            } else {
                (lo as f64 + (hi - lo) as f64 * i as f64 / (k - 1) as f64).round() as usize
            }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SIZE_STREAM);
    sizes.shuffle(&mut rng);
    regions.iter().map(|r| r.region_id.clone()).zip(sizes).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub clusters_per_region: usize,
    pub households_per_cluster: usize,
    /// Oversampling factor of the high-risk stratum (1 = equal probabilities).
    pub weight_dispersion: f64,
    pub cluster_sd: f64,
    pub high_risk_share: f64,
    pub high_risk_odds_ratio: f64,
    /// Per-region sample sizes; regions not listed use
    /// `clusters_per_region × households_per_cluster`.
    pub region_sizes: BTreeMap<String, usize>,
}

impl SamplingPlan {
    pub fn simple(clusters_per_region: usize, households_per_cluster: usize, weight_dispersion: f64) -> Self {
        SamplingPlan {
            clusters_per_region,
            households_per_cluster,
            weight_dispersion,
            cluster_sd: default_cluster_sd(),
            high_risk_share: default_high_risk_share(),
            high_risk_odds_ratio: default_high_risk_odds_ratio(),
            region_sizes: BTreeMap::new(),
        }
    }

    fn region_size(&self, region: &str) -> usize {
        self.region_sizes
            .get(region)
            .copied()
            .unwrap_or(self.clusters_per_region * self.households_per_cluster)
    }
}

/// A known prevalence surface with its sampling plan.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    regions: Vec<RegionBoundary>,
    true_prevalence: BTreeMap<String, f64>,
    plan: SamplingPlan,
    seed: u64,
}

impl SyntheticTruth {
    pub fn new(
        regions: Vec<RegionBoundary>,
        true_prevalence: BTreeMap<String, f64>,
        plan: SamplingPlan,
        seed: u64,
    ) -> Result<Self, SyntheticError> {
        for r in &regions {
            match true_prevalence.get(&r.region_id) {
                Some(&p) if p > 0.0 && p < 1.0 => {}
                Some(&p) => {
                    return Err(SyntheticError::Invalid(format!(
                        "true prevalence of `{}` must lie strictly in (0, 1), got {p}",
                        r.region_id
                    )))
                }
                None => {
                    return Err(SyntheticError::Invalid(format!(
                        "no true prevalence for `{}`",
                        r.region_id
                    )))
                }
            }
        }
        if plan.clusters_per_region == 0 || plan.households_per_cluster == 0 {
            return Err(SyntheticError::Invalid(
                "clusters per region and households per cluster must be at least 1".into(),
            ));
        }
        if !(plan.weight_dispersion.is_finite() && plan.weight_dispersion > 0.0) {
            return Err(SyntheticError::Invalid("weight_dispersion must be positive".into()));
        }
        if !(plan.cluster_sd.is_finite() && plan.cluster_sd >= 0.0) {
            return Err(SyntheticError::Invalid("cluster_sd must be non-negative".into()));
        }
        if !(plan.high_risk_share > 0.0 && plan.high_risk_share < 1.0) {
            return Err(SyntheticError::Invalid("high_risk_share must lie in (0, 1)".into()));
        }
        if !(plan.high_risk_odds_ratio.is_finite() && plan.high_risk_odds_ratio > 0.0) {
            return Err(SyntheticError::Invalid("high_risk_odds_ratio must be positive".into()));
        }
        Ok(SyntheticTruth {
            regions,
            true_prevalence,
            plan,
            seed,
        })
    }

    pub fn regions(&self) -> &[RegionBoundary] {
        &self.regions
    }

    pub fn true_prevalence(&self) -> &BTreeMap<String, f64> {
        &self.true_prevalence
    }

    pub fn plan(&self) -> &SamplingPlan {
        &self.plan
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Same surface and plan, different survey seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        SyntheticTruth { seed, ..self.clone() }
    }
}

/// `rows × cols` unit squares named `R_<row>_<col>`. A break value `b` starts
/// a new group at column `b` (0-based); groups are labelled `G1`, `G2`, ….
pub fn make_grid_regions(rows: usize, cols: usize, group_breaks: &[usize]) -> Vec<RegionBoundary> {
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let group = 1 + group_breaks.iter().filter(|&&b| b <= c).count();
            let (x, y) = (c as f64, r as f64);
            out.push(RegionBoundary {
                region_id: format!("R_{r}_{c}"),
                country: Some(format!("G{group}")),
                geometry: Geometry::Polygon(vec![vec![
                    [x, y],
                    [x + 1.0, y],
                    [x + 1.0, y + 1.0],
                    [x, y + 1.0],
                    [x, y],
                ]]),
            });
        }
    }
    out
}

/// Logit-scale ICAR surface over the rook graph of `regions`, scaled by
/// `spatial_sd`, mapped to prevalence through `expit(base_logit + surface)`.
///
/// The surface is drawn along the eigenvectors of the precision with
/// non-zero eigenvalue, so it sums to zero over each connected component.
pub fn spatial_truth(
    regions: &[RegionBoundary],
    base_logit: f64,
    spatial_sd: f64,
    seed: u64,
) -> Result<BTreeMap<String, f64>, SyntheticError> {
    let surface = icar_surface(regions, spatial_sd, seed)?;
    Ok(surface.into_iter().map(|(id, s)| (id, expit(base_logit + s))).collect())
}

/// Zero-mean ICAR draw with conditional scale `spatial_sd`, keyed by region.
pub fn icar_surface(
    regions: &[RegionBoundary],
    spatial_sd: f64,
    seed: u64,
) -> Result<BTreeMap<String, f64>, SyntheticError> {
    if !(spatial_sd.is_finite() && spatial_sd >= 0.0) {
        return Err(SyntheticError::Invalid(format!(
            "spatial_sd must be non-negative, got {spatial_sd}"
        )));
    }
    let graph = build_adjacency(regions, DEFAULT_TOLERANCE, WeightStyle::B)?;
    let n = graph.len();
    let mut surface = vec![0.0; n];
    if spatial_sd > 0.0 {
        let dense = icar_precision(&graph).to_dense();
        let q = DMatrix::from_fn(n, n, |i, j| dense[i][j]);
        let eig = SymmetricEigen::new(q);
        let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(TRUTH_STREAM);
        for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda <= 1e-9 * max.max(1.0) {
                continue;
            }
            let z: f64 = rng.sample(StandardNormal);
            let scale = spatial_sd * z / lambda.sqrt();
            for (i, s) in surface.iter_mut().enumerate() {
                *s += scale * eig.eigenvectors[(i, k)];
            }
        }
    }
    Ok(graph.node_ids().iter().cloned().zip(surface).collect())
}

/// Logit-scale centre `μ` with `E[expit(μ + sd·Z)] = p`, so that cluster
/// perturbations leave the region prevalence unchanged on average.
pub fn cluster_centre(p: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return logit(p);
    }
    // trapezoid rule on [-8, 8] standard deviations
    const STEPS: usize = 800;
    let h = 16.0 / STEPS as f64;
    let weights: Vec<(f64, f64)> = (0..=STEPS)
        .map(|k| {
            let z = -8.0 + k as f64 * h;
            let w = if k == 0 || k == STEPS { 0.5 } else { 1.0 };
            (z, w * h * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt())
        })
        .collect();
    let mean_at = |mu: f64| weights.iter().map(|&(z, w)| w * expit(mu + sd * z)).sum::<f64>();
    bisect(|mu| mean_at(mu) - p, -60.0, 60.0)
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Low- and high-risk prevalences whose population mix equals `p`.
fn stratum_prevalence(p: f64, share: f64, odds_ratio: f64) -> (f64, f64) {
    let shift = odds_ratio.ln();
    let low = bisect(|l| share * expit(l + shift) + (1.0 - share) * expit(l) - p, -60.0, 60.0);
    (expit(low), expit(low + shift))
}

/// Draws individual records for every region of the truth.
pub fn sample_records(truth: &SyntheticTruth) -> Vec<IndividualRecord> {
    let plan = &truth.plan;
    let mut rng = ChaCha8Rng::seed_from_u64(truth.seed);
    rng.set_stream(SURVEY_STREAM);
    let k = plan.weight_dispersion;
    let h = plan.high_risk_share;
    let p_high_in_sample = h * k / (h * k + 1.0 - h);
    let w_low = 1.0 / BASE_INCLUSION;
    let w_high = 1.0 / (BASE_INCLUSION * k);

    let mut regions: Vec<&RegionBoundary> = truth.regions.iter().collect();
    regions.sort_by(|a, b| a.region_id.cmp(&b.region_id));
    let mut out = Vec::new();
    for region in regions {
        let id = &region.region_id;
        let truth_p = truth.true_prevalence[id];
        let centre = cluster_centre(truth_p, plan.cluster_sd);
        let m = plan.clusters_per_region;
        let size = plan.region_size(id).max(m);
        for c in 0..m {
            let cluster_n = size / m + usize::from(c < size % m);
            let z: f64 = rng.sample(StandardNormal);
            let p_cluster = expit(centre + plan.cluster_sd * z);
            let (p_low, p_high) = stratum_prevalence(p_cluster, h, plan.high_risk_odds_ratio);
            let cluster_id = format!("{id}_c{c:03}");
            for _ in 0..cluster_n {
                let high = rng.random::<f64>() < p_high_in_sample;
                let (p, w) = if high { (p_high, w_high) } else { (p_low, w_low) };
                let y = u8::from(rng.random::<f64>() < p);
                out.push(IndividualRecord::new(id.clone(), cluster_id.clone(), w, y));
            }
        }
    }
    out
}

/// Draws a survey and packages it with the truth's boundaries.
pub fn sample_survey(truth: &SyntheticTruth) -> Result<SurveyDataset, SyntheticError> {
    let provenance = format!("synthetic survey, seed {}", truth.seed);
    Ok(SurveyDataset::new(
        sample_records(truth),
        truth.regions.clone(),
        provenance,
    )?)
}

pub fn write_truth(path: &Path, truth: &BTreeMap<String, f64>, header: &[String]) -> Result<(), SyntheticError> {
    let io_err = |source| SyntheticError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    write_comment_header(&mut out, header).map_err(io_err)?;
    writeln!(out, "region_id,true_prevalence").map_err(io_err)?;
    for (id, p) in truth {
        writeln!(out, "{id},{p}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::direct::{direct_prevalence, estimate_all};

    #[test]
    fn grid_one_by_two() {
        let g = make_grid_regions(1, 2, &[]);
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].country, g[1].country);
        let graph = build_adjacency(&g, DEFAULT_TOLERANCE, WeightStyle::B).unwrap();
        assert_eq!(graph.edges().len(), 1);
    }

    #[test]
    fn grid_three_by_three_with_break() {
        let g = make_grid_regions(3, 3, &[2]);
        let groups: std::collections::BTreeSet<_> = g.iter().map(|r| r.group().to_string()).collect();
        assert_eq!(groups.len(), 2);
        let graph = build_adjacency(&g, DEFAULT_TOLERANCE, WeightStyle::B).unwrap();
        // 3 rows × 2 horizontal + 2 × 3 vertical
        assert_eq!(graph.edges().len(), 12);
        let cross = graph
            .edge_ids()
            .iter()
            .filter(|(a, b)| {
                let ga = &g.iter().find(|r| &r.region_id == a).unwrap().country;
                let gb = &g.iter().find(|r| &r.region_id == b).unwrap().country;
                ga != gb
            })
            .count();
        assert_eq!(cross, 3);
    }

    #[test]
    fn grid_45_regions_three_groups() {
        let g = make_grid_regions(5, 9, &[3, 6]);
        assert_eq!(g.len(), 45);
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &g {
            *counts.entry(r.group()).or_default() += 1;
        }
        assert_eq!(counts.len(), 3);
        assert!(counts.values().all(|&c| c == 15));
    }

    #[test]
    fn flat_truth() {
        let g = make_grid_regions(2, 2, &[]);
        let t = spatial_truth(&g, 0.0, 0.0, 1).unwrap();
        assert!(t.values().all(|&p| p == 0.5));
        let t = spatial_truth(&g, logit(0.05), 0.0, 1).unwrap();
        assert!(t.values().all(|&p| (p - 0.05).abs() < 1e-15));
    }

    #[test]
    fn surface_sums_to_zero() {
        let g = make_grid_regions(4, 5, &[]);
        let s = icar_surface(&g, 1.0, 9).unwrap();
        assert!(s.values().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn zero_truth_rejected() {
        let g = make_grid_regions(1, 2, &[]);
        let truth: BTreeMap<_, _> = g.iter().map(|r| (r.region_id.clone(), 0.0)).collect();
        assert!(SyntheticTruth::new(g, truth, SamplingPlan::simple(1, 4, 1.0), 0).is_err());
    }

    #[test]
    fn single_cluster_equal_probabilities() {
        let g = make_grid_regions(1, 1, &[]);
        let truth: BTreeMap<_, _> = g.iter().map(|r| (r.region_id.clone(), 0.5)).collect();
        let t = SyntheticTruth::new(g, truth, SamplingPlan::simple(1, 4, 1.0), 11).unwrap();
        let recs = sample_records(&t);
        assert_eq!(recs.len(), 4);
        assert!(recs.iter().all(|r| r.weight == recs[0].weight));
    }

    #[test]
    fn cluster_centre_preserves_mean() {
        for &p in &[0.02, 0.1, 0.5, 0.9] {
            let mu = cluster_centre(p, 0.3);
            // independent check: Monte Carlo over a fixed normal sample
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let n = 400_000;
            let mc = (0..n)
                .map(|_| expit(mu + 0.3 * rng.sample::<f64, _>(StandardNormal)))
                .sum::<f64>()
                / n as f64;
            assert!((mc - p).abs() < 5e-4, "{p}: {mc}");
        }
    }

    #[test]
    fn reproducible() {
        let cfg = demo_like();
        let t = cfg.build_truth().unwrap();
        assert_eq!(sample_survey(&t).unwrap(), sample_survey(&t).unwrap());
        assert_ne!(sample_records(&t), sample_records(&t.with_seed(99)));
    }

    fn demo_like() -> ScenarioConfig {
        ScenarioConfig {
            rows: 5,
            cols: 9,
            group_breaks: vec![3, 6],
            base_logit: logit(0.06),
            spatial_sd: 0.6,
            clusters_per_region: 20,
            households_per_cluster: 30,
            weight_dispersion: 2.0,
            seed: 5,
            cluster_sd: 0.3,
            region_size_range: Some([308, 1942]),
            high_risk_share: 0.3,
            high_risk_odds_ratio: 3.0,
        }
    }

    #[test]
    fn sizes_span_range() {
        let t = demo_like().build_truth().unwrap();
        let ds = sample_survey(&t).unwrap();
        let est = estimate_all(&ds);
        assert_eq!(est.len(), 45);
        assert_eq!(est.iter().map(|e| e.n).min(), Some(308));
        assert_eq!(est.iter().map(|e| e.n).max(), Some(1942));
    }

    #[test]
    fn scenario_file_parses_with_defaults() {
        let text = "rows = 2\ncols = 3\ngroup_breaks = [1]\nbase_logit = -2.0\nspatial_sd = 0.5\n\
                    clusters_per_region = 4\nhouseholds_per_cluster = 10\nweight_dispersion = 1.5\nseed = 3\n";
        let cfg = ScenarioConfig::from_toml(text, Path::new("mem")).unwrap();
        assert_eq!(cfg.cluster_sd, 0.3);
        assert_eq!(cfg.region_size_range, None);
        assert!(ScenarioConfig::from_toml(&format!("{text}bogus = 1\n"), Path::new("mem")).is_err());
    }

    #[test]
    fn weighted_estimate_is_unbiased_for_region_truth() {
        let g = make_grid_regions(1, 2, &[]);
        let truth: BTreeMap<_, _> = g.iter().map(|r| (r.region_id.clone(), 0.10)).collect();
        let base = SyntheticTruth::new(g, truth, SamplingPlan::simple(30, 25, 2.0), 0).unwrap();
        let mut total = 0.0;
        for seed in 0..200 {
            let recs = sample_records(&base.with_seed(seed));
            let region: Vec<_> = recs.iter().filter(|r| r.region_id == "R_0_0").collect();
            total += direct_prevalence(&region).unwrap();
        }
        let mean = total / 200.0;
        assert!((mean - 0.10).abs() < 0.01, "{mean}");
    }
}
