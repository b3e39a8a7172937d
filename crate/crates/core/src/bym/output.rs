//! Posterior CSV and hyperparameter trace files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::summary::Summary;
use super::BymPosterior;
use crate::data::write_comment_header;
use crate::direct::{Degeneracy, DirectEstimate};

#[derive(Debug, Error)]
pub enum OutputError {
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
    #[error("region `{0}` has a posterior but no direct estimate")]
    MissingDirect(String),
}

pub const POSTERIOR_HEADER: [&str; 14] = [
    "region_id",
    "prev_mean",
    "prev_median",
    "prev_sd",
    "prev_q025",
    "prev_q975",
    "theta_mean",
    "theta_sd",
    "direct_p",
    "direct_se",
    "n",
    "degenerate",
    "rhat_theta",
    "ess_theta",
];

/// One line of the posterior table.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorRow {
    pub region_id: String,
    pub prevalence: Summary,
    pub theta_mean: f64,
    pub theta_sd: f64,
    pub direct_p: f64,
    pub direct_se: Option<f64>,
    pub n: usize,
    pub degenerate: Degeneracy,
    pub rhat_theta: f64,
    pub ess_theta: f64,
}

/// Joins posterior summaries with the direct estimates, in region order.
pub fn posterior_rows(direct: &[DirectEstimate], posterior: &BymPosterior) -> Result<Vec<PosteriorRow>, OutputError> {
    posterior
        .regions()
        .iter()
        .map(|r| {
            let d = direct
                .iter()
                .find(|d| d.region_id == r.region_id)
                .ok_or_else(|| OutputError::MissingDirect(r.region_id.clone()))?;
            Ok(PosteriorRow {
                region_id: r.region_id.clone(),
                prevalence: r.prevalence,
                theta_mean: r.theta.mean,
                theta_sd: r.theta.sd,
                direct_p: d.p_hat,
                direct_se: d.std_error(),
                n: d.n,
                degenerate: d.degenerate,
                rhat_theta: r.convergence.rhat,
                ess_theta: r.convergence.ess,
            })
        })
        .collect()
}

pub fn write_posterior(path: &Path, rows: &[PosteriorRow], header: &[String]) -> Result<(), OutputError> {
    let io_err = |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    };
    let csv_err = |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    write_comment_header(&mut out, header).map_err(io_err)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(POSTERIOR_HEADER).map_err(csv_err)?;
    for r in rows {
        let p = &r.prevalence;
        w.write_record([
            r.region_id.clone(),
            p.mean.to_string(),
            p.median.to_string(),
            p.sd.to_string(),
            p.q025.to_string(),
            p.q975.to_string(),
            r.theta_mean.to_string(),
            r.theta_sd.to_string(),
            r.direct_p.to_string(),
            r.direct_se.map_or_else(|| "NA".into(), |v| v.to_string()),
            r.n.to_string(),
            r.degenerate.to_string(),
            r.rhat_theta.to_string(),
            r.ess_theta.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn read_posterior(path: &Path) -> Result<Vec<PosteriorRow>, OutputError> {
    let file = File::open(path).map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let csv_err = |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let mut cols = [0usize; 14];
    for (slot, name) in cols.iter_mut().zip(POSTERIOR_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| OutputError::Parse {
                path: path.to_path_buf(),
                line: 1,
                reason: format!("missing column `{name}`"),
            })?;
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |reason: String| OutputError::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let get = |i: usize| &rec[cols[i]];
        let num = |i: usize| -> Result<f64, OutputError> {
            get(i).parse().map_err(|_| bad(format!("`{}` is not a number", get(i))))
        };
        rows.push(PosteriorRow {
            region_id: get(0).to_string(),
            prevalence: Summary {
                mean: num(1)?,
                median: num(2)?,
                sd: num(3)?,
                q025: num(4)?,
                q975: num(5)?,
            },
            theta_mean: num(6)?,
            theta_sd: num(7)?,
            direct_p: num(8)?,
            direct_se: if get(9) == "NA" { None } else { Some(num(9)?) },
            n: get(10)
                .parse()
                .map_err(|_| bad(format!("`{}` is not a count", get(10))))?,
            degenerate: get(11).parse().map_err(bad)?,
            rhat_theta: num(12)?,
            ess_theta: num(13)?,
        });
    }
    Ok(rows)
}

/// Per-draw β₀, σ_ε², σ_S² for every chain.
pub fn write_trace(path: &Path, posterior: &BymPosterior, header: &[String]) -> Result<(), OutputError> {
    let io_err = |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    write_comment_header(&mut out, header).map_err(io_err)?;
    writeln!(out, "chain,draw,beta0,var_eps,var_spatial").map_err(io_err)?;
    for (c, ((b, e), s)) in posterior
        .beta0_draws()
        .iter()
        .zip(posterior.var_eps_draws())
        .zip(posterior.var_spatial_draws())
        .enumerate()
    {
        for d in 0..b.len() {
            writeln!(out, "{c},{d},{},{},{}", b[d], e[d], s[d]).map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)
}
