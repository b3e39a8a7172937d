//! Design-based ("weighted only") prevalence per region.
//!
//! The point estimate is the Hájek ratio `Σ w·y / Σ w`. Its variance is the
//! ultimate-cluster linearization: with cluster residual totals
//! `z_c = Σ_{k∈c} w_k (y_k − p̂)` and `W = Σ w_k`,
//!
//! ```text
//! var(p̂) = m/(m−1) · Σ_c z_c² / W²
//! ```
//!
//! When records carry a stratum, the sum runs within strata around the
//! stratum mean of `z_c` with per-stratum factors `m_h/(m_h−1)`. A stratum
//! holding a single cluster contributes `z_c²` with factor 1.
//!
//! Estimates at 0 or 1, and regions with a single cluster, are flagged as
//! degenerate and carry no logit-scale value.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::data::{write_comment_header, IndividualRecord, SurveyDataset};

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("no records supplied")]
    Empty,
    #[error("records span several regions (`{0}` and `{1}`)")]
    MixedRegions(String, String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed CSV: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}, row {line}: {reason}")]
    Parse { path: PathBuf, line: u64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Degeneracy {
    None,
    AllZero,
    AllOne,
    SingleCluster,
}

impl Degeneracy {
    pub fn is_degenerate(self) -> bool {
        self != Degeneracy::None
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Degeneracy::None => "none",
            Degeneracy::AllZero => "all_zero",
            Degeneracy::AllOne => "all_one",
            Degeneracy::SingleCluster => "single_cluster",
        }
    }
}

impl fmt::Display for Degeneracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Degeneracy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "none" => Degeneracy::None,
            "all_zero" => Degeneracy::AllZero,
            "all_one" => Degeneracy::AllOne,
            "single_cluster" => Degeneracy::SingleCluster,
            other => return Err(format!("unknown degeneracy flag `{other}`")),
        })
    }
}

/// Direct estimate for one region.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectEstimate {
    pub region_id: String,
    pub p_hat: f64,
    /// `None` when the region has a single cluster.
    pub var_p: Option<f64>,
    /// `logit(p_hat)`, present iff the estimate is not degenerate.
    pub logit_y: Option<f64>,
    /// Delta-method variance of `logit_y`.
    pub var_logit: Option<f64>,
    pub n: usize,
    pub m_clusters: usize,
    pub degenerate: Degeneracy,
}

impl DirectEstimate {
    pub fn std_error(&self) -> Option<f64> {
        self.var_p.map(f64::sqrt)
    }

    /// Normal-approximation 95% interval on the prevalence scale.
    pub fn confidence_interval(&self) -> Option<(f64, f64)> {
        self.std_error().map(|se| {
            (
                self.p_hat - 1.959_963_984_540_054 * se,
                self.p_hat + 1.959_963_984_540_054 * se,
            )
        })
    }
}

fn single_region<'a>(records: &[&'a IndividualRecord]) -> Result<&'a str, EstimateError> {
    let first = records.first().ok_or(EstimateError::Empty)?;
    if let Some(other) = records.iter().find(|r| r.region_id != first.region_id) {
        return Err(EstimateError::MixedRegions(
            first.region_id.clone(),
            other.region_id.clone(),
        ));
    }
    Ok(&first.region_id)
}

/// Hájek weighted-ratio prevalence.
pub fn direct_prevalence(records: &[&IndividualRecord]) -> Result<f64, EstimateError> {
    single_region(records)?;
    let (num, den) = records.iter().fold((0.0, 0.0), |(num, den), r| {
        (num + r.weight * f64::from(r.outcome), den + r.weight)
    });
    Ok(num / den)
}

/// Ultimate-cluster linearized variance of `p_hat`. `None` when all records
/// come from one cluster.
pub fn direct_variance(records: &[&IndividualRecord], p_hat: f64) -> Option<f64> {
    // cluster -> (stratum, z_c), clusters in first-appearance order
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut clusters: Vec<(Option<&str>, f64)> = Vec::new();
    let mut total_weight = 0.0;
    for r in records {
        let i = *index.entry(r.cluster_id.as_str()).or_insert_with(|| {
            clusters.push((r.stratum.as_deref(), 0.0));
            clusters.len() - 1
        });
        clusters[i].1 += r.weight * (f64::from(r.outcome) - p_hat);
        total_weight += r.weight;
    }
    if clusters.len() < 2 {
        return None;
    }

    let stratified = clusters.iter().any(|(s, _)| s.is_some());
    let sum = if stratified {
        let mut strata: BTreeMap<Option<&str>, Vec<f64>> = BTreeMap::new();
        for (s, z) in &clusters {
            strata.entry(*s).or_default().push(*z);
        }
        strata
            .values()
            .map(|zs| {
                let m = zs.len() as f64;
                if zs.len() == 1 {
                    zs[0] * zs[0]
                } else {
                    let mean = zs.iter().sum::<f64>() / m;
                    m / (m - 1.0) * zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>()
                }
            })
            .sum::<f64>()
    } else {
        let m = clusters.len() as f64;
        m / (m - 1.0) * clusters.iter().map(|(_, z)| z * z).sum::<f64>()
    };
    Some(sum / (total_weight * total_weight))
}

/// Logit transform with delta-method variance. Fails with the matching
/// degeneracy flag when `p_hat` is 0 or 1.
pub fn logit_transform(p_hat: f64, var_p: f64) -> Result<(f64, f64), Degeneracy> {
    if p_hat <= 0.0 {
        return Err(Degeneracy::AllZero);
    }
    if p_hat >= 1.0 {
        return Err(Degeneracy::AllOne);
    }
    let q = p_hat * (1.0 - p_hat);
    Ok(((p_hat / (1.0 - p_hat)).ln(), var_p / (q * q)))
}

/// Full direct estimate for the records of one region.
pub fn estimate_region(records: &[&IndividualRecord]) -> Result<DirectEstimate, EstimateError> {
    let region_id = single_region(records)?.to_string();
    let p_hat = direct_prevalence(records)?;
    let var_p = direct_variance(records, p_hat);
    let mut clusters: Vec<&str> = records.iter().map(|r| r.cluster_id.as_str()).collect();
    clusters.sort_unstable();
    clusters.dedup();

    let (degenerate, logit) = match (logit_transform(p_hat, var_p.unwrap_or(0.0)), var_p) {
        (Err(flag), _) => (flag, None),
        (Ok(_), None) => (Degeneracy::SingleCluster, None),
        (Ok(pair), Some(_)) => (Degeneracy::None, Some(pair)),
    };
    Ok(DirectEstimate {
        region_id,
        p_hat,
        var_p,
        logit_y: logit.map(|l| l.0),
        var_logit: logit.map(|l| l.1),
        n: records.len(),
        m_clusters: clusters.len(),
        degenerate,
    })
}

/// One estimate per region of the dataset, sorted by region_id.
pub fn estimate_all(dataset: &SurveyDataset) -> Vec<DirectEstimate> {
    dataset
        .by_region()
        .values()
        .map(|recs| estimate_region(recs).expect("dataset regions are non-empty and homogeneous"))
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub const ESTIMATE_HEADER: [&str; 8] = [
    "region_id",
    "n",
    "m_clusters",
    "p_hat",
    "var_p",
    "logit_y",
    "var_logit",
    "degenerate",
];

pub fn write_estimates(path: &Path, estimates: &[DirectEstimate], header: &[String]) -> Result<(), EstimateError> {
    let io_err = |source| EstimateError::Io {
        path: path.to_path_buf(),
        source,
    };
    let csv_err = |source| EstimateError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    write_comment_header(&mut out, header).map_err(io_err)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ESTIMATE_HEADER).map_err(csv_err)?;
    for e in estimates {
        w.write_record([
            e.region_id.clone(),
            e.n.to_string(),
            e.m_clusters.to_string(),
            e.p_hat.to_string(),
            fmt_opt(e.var_p),
            fmt_opt(e.logit_y),
            fmt_opt(e.var_logit),
            e.degenerate.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn read_estimates(path: &Path) -> Result<Vec<DirectEstimate>, EstimateError> {
    let file = File::open(path).map_err(|source| EstimateError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let csv_err = |source| EstimateError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let mut cols = [0usize; 8];
    for (slot, name) in cols.iter_mut().zip(ESTIMATE_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| EstimateError::Parse {
                path: path.to_path_buf(),
                line: 1,
                reason: format!("missing column `{name}`"),
            })?;
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let bad = |reason: String| EstimateError::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let get = |i: usize| &row[cols[i]];
        let num = |i: usize| -> Result<f64, EstimateError> {
            get(i)
                .parse::<f64>()
                .map_err(|_| bad(format!("`{}` is not a number", get(i))))
        };
        let opt = |i: usize| -> Result<Option<f64>, EstimateError> {
            if get(i) == "NA" {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        let int = |i: usize| -> Result<usize, EstimateError> {
            get(i)
                .parse::<usize>()
                .map_err(|_| bad(format!("`{}` is not a count", get(i))))
        };
        out.push(DirectEstimate {
            region_id: get(0).to_string(),
            n: int(1)?,
            m_clusters: int(2)?,
            p_hat: num(3)?,
            var_p: opt(4)?,
            logit_y: opt(5)?,
            var_logit: opt(6)?,
            degenerate: get(7).parse().map_err(bad)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(region: &str, cluster: &str, w: f64, y: u8) -> IndividualRecord {
        IndividualRecord::new(region, cluster, w, y)
    }

    fn refs(v: &[IndividualRecord]) -> Vec<&IndividualRecord> {
        v.iter().collect()
    }

    #[test]
    fn equal_weights_half() {
        let v: Vec<_> = [1, 0, 1, 0].iter().map(|&y| rec("A", "c", 1.0, y)).collect();
        assert_eq!(direct_prevalence(&refs(&v)).unwrap(), 0.5);
    }

    #[test]
    fn unequal_weights_quarter() {
        let v = vec![rec("A", "c", 1.0, 1), rec("A", "c", 3.0, 0)];
        assert_eq!(direct_prevalence(&refs(&v)).unwrap(), 0.25);
    }

    #[test]
    fn empty_and_mixed_inputs() {
        assert!(matches!(direct_prevalence(&[]), Err(EstimateError::Empty)));
        let v = vec![rec("A", "c", 1.0, 1), rec("B", "d", 1.0, 0)];
        assert!(matches!(
            direct_prevalence(&refs(&v)),
            Err(EstimateError::MixedRegions(..))
        ));
    }

    #[test]
    fn two_cluster_worked_example() {
        let v = vec![
            rec("A", "a", 1.0, 1),
            rec("A", "a", 1.0, 1),
            rec("A", "b", 1.0, 0),
            rec("A", "b", 1.0, 0),
        ];
        let p = direct_prevalence(&refs(&v)).unwrap();
        assert_eq!(p, 0.5);
        assert_eq!(direct_variance(&refs(&v), p), Some(0.25));
    }

    #[test]
    fn identical_outcomes_zero_variance() {
        let v = vec![
            rec("A", "a", 1.0, 1),
            rec("A", "a", 2.0, 0),
            rec("A", "b", 1.0, 1),
            rec("A", "b", 2.0, 0),
        ];
        // both clusters have the same mean, so z_c vanishes up to rounding in 1/3
        let p = direct_prevalence(&refs(&v)).unwrap();
        assert!(direct_variance(&refs(&v), p).unwrap() < 1e-30);
    }

    #[test]
    fn single_cluster_is_flagged() {
        let v = vec![rec("A", "a", 1.0, 1), rec("A", "a", 1.0, 0)];
        assert_eq!(direct_variance(&refs(&v), 0.5), None);
        let e = estimate_region(&refs(&v)).unwrap();
        assert_eq!(e.degenerate, Degeneracy::SingleCluster);
        assert_eq!(e.logit_y, None);
        assert_eq!(e.var_p, None);
    }

    #[test]
    fn logit_examples() {
        assert_eq!(logit_transform(0.5, 0.01), Ok((0.0, 0.16)));
        assert_eq!(logit_transform(0.5, 0.0), Ok((0.0, 0.0)));
        assert_eq!(logit_transform(0.0, 0.0), Err(Degeneracy::AllZero));
        assert_eq!(logit_transform(1.0, 0.0), Err(Degeneracy::AllOne));
    }

    #[test]
    fn all_positive_region_flagged_all_one() {
        let v = vec![rec("A", "a", 1.0, 1), rec("A", "b", 2.0, 1)];
        let e = estimate_region(&refs(&v)).unwrap();
        assert_eq!(e.p_hat, 1.0);
        assert_eq!(e.degenerate, Degeneracy::AllOne);
        assert_eq!(e.var_p, Some(0.0));
    }

    #[test]
    fn stratified_sum_centres_within_strata() {
        let mut v = vec![
            rec("A", "a", 1.0, 1),
            rec("A", "b", 1.0, 0),
            rec("A", "c", 1.0, 1),
            rec("A", "d", 1.0, 1),
        ];
        for (r, s) in v.iter_mut().zip(["h1", "h1", "h2", "h2"]) {
            r.stratum = Some(s.into());
        }
        let p = direct_prevalence(&refs(&v)).unwrap();
        // z = (0.25, -0.75 | 0.25, 0.25); stratum h1: 2 * (0.5^2 * 2) = 1.0, h2: 0
        let var = direct_variance(&refs(&v), p).unwrap();
        assert!((var - 1.0 / 16.0).abs() < 1e-15, "{var}");
    }

    #[test]
    fn estimates_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let a = vec![rec("A", "a", 1.0, 1), rec("A", "b", 3.0, 0)];
        let b = vec![rec("B", "c", 1.0, 0)];
        let est = vec![estimate_region(&refs(&a)).unwrap(), estimate_region(&refs(&b)).unwrap()];
        write_estimates(&path, &est, &["meta".into()]).unwrap();
        assert_eq!(read_estimates(&path).unwrap(), est);
    }
}
