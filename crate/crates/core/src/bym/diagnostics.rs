//! Multi-chain convergence diagnostics: rank-normalized split-R̂ and
//! effective sample size.
//!
//! Both follow the rank-normalization scheme of Vehtari et al. (2021): draws
//! are pooled, replaced by normal scores of their (tie-averaged) ranks, and
//! chains are split in half before comparing. R̂ is the larger of the bulk
//! and folded (`|x − median|`) values.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use statrs::distribution::{ContinuousCDF, Normal};

pub const RHAT_THRESHOLD: f64 = 1.05;
pub const MIN_ESS: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvergenceIssue {
    /// R̂ above [`RHAT_THRESHOLD`] (or infinite).
    HighRhat,
    /// Bulk ESS below [`MIN_ESS`].
    LowEss,
    /// No variation within or between chains; R̂ and ESS are undefined.
    ZeroVariance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convergence {
    pub rhat: f64,
    pub ess: f64,
    pub issue: Option<ConvergenceIssue>,
}

impl Convergence {
    pub fn ok(&self) -> bool {
        self.issue.is_none()
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Classic potential scale reduction over equal-length chains.
/// `NaN` when all draws are identical, `+∞` when chains are internally
/// constant but disagree.
pub fn basic_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if chains.len() < 2 || n < 2 {
        return f64::NAN;
    }
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(&c[..n])).collect();
    let w = chains.iter().map(|c| var(&c[..n])).sum::<f64>() / chains.len() as f64;
    let b = nf * var(&means);
    if w <= 0.0 {
        return if b > 0.0 { f64::INFINITY } else { f64::NAN };
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    (var_plus / w).sqrt()
}

fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Replaces every draw by the normal score of its pooled, tie-averaged rank.
pub fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pooled: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, xs)| xs.iter().enumerate().map(move |(i, &x)| (x, c, i)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total = pooled.len() as f64;
    let normal = Normal::standard();
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut start = 0;
    while start < pooled.len() {
        let mut end = start + 1;
        while end < pooled.len() && pooled[end].0 == pooled[start].0 {
            end += 1;
        }
        // ranks are 1-based; ties share the average rank
        let rank = (start + end + 1) as f64 / 2.0;
        let z = normal.inverse_cdf((rank - 0.375) / (total + 0.25));
        for &(_, c, i) in &pooled[start..end] {
            out[c][i] = z;
        }
        start = end;
    }
    out
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    super::summary::quantile_sorted(values, 0.5)
}

/// Rank-normalized split-R̂: max of the bulk and folded variants.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let halves = split(chains);
    let bulk = basic_rhat(&rank_normalize(&halves));
    let mut all: Vec<f64> = chains.iter().flatten().copied().collect();
    let med = median(&mut all);
    let folded: Vec<Vec<f64>> = halves
        .iter()
        .map(|c| c.iter().map(|x| (x - med).abs()).collect())
        .collect();
    let tail = basic_rhat(&rank_normalize(&folded));
    if bulk.is_nan() || tail.is_nan() {
        // a constant fold alongside a varying bulk is fine
        return if bulk.is_nan() { tail } else { bulk };
    }
    bulk.max(tail)
}

fn autocovariance(x: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|v| Complex::new(v - m, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    // unnormalized inverse: divide by size, then by n for the biased estimator
    buf[..n].iter().map(|c| c.re / size as f64 / n as f64).collect()
}

/// Multi-chain effective sample size with Geyer's initial positive sequence:
/// autocorrelation pair sums are accumulated until the first negative one,
/// and forced to be non-increasing.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    let m = chains.len();
    if m == 0 || n < 4 {
        return f64::NAN;
    }
    let nf = n as f64;
    let mut planner = FftPlanner::new();
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(&c[..n], &mut planner)).collect();
    let chain_means: Vec<f64> = chains.iter().map(|c| mean(&c[..n])).collect();
    // acov[c][0] is the biased variance; rescale to unbiased
    let w = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let b_over_n = if m > 1 { var(&chain_means) } else { 0.0 };
    let var_plus = w * (nf - 1.0) / nf + b_over_n;
    // NaN-safe: anything not strictly positive fails
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(var_plus > 0.0) || !(w > 0.0) {
        return f64::NAN;
    }
    let rho = |t: usize| -> f64 {
        let mean_acov = acov.iter().map(|a| a[t]).sum::<f64>() / m as f64;
        1.0 - (w - mean_acov) / var_plus
    };

    let mut tau_sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let mut pair = rho(t) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        if pair > prev_pair {
            pair = prev_pair;
        }
        tau_sum += pair;
        prev_pair = pair;
        t += 2;
    }
    let tau = (-1.0 + 2.0 * tau_sum).max(1.0 / (m as f64 * nf).log10());
    m as f64 * nf / tau
}

/// ESS of rank-normalized split chains.
pub fn bulk_ess(chains: &[Vec<f64>]) -> f64 {
    effective_sample_size(&rank_normalize(&split(chains)))
}

/// R̂, bulk ESS, and the first failed check, if any.
pub fn diagnose(chains: &[Vec<f64>]) -> Convergence {
    let first = chains.first().and_then(|c| c.first()).copied();
    let constant = chains.iter().flatten().all(|&x| Some(x) == first);
    if constant {
        return Convergence {
            rhat: f64::NAN,
            ess: f64::NAN,
            issue: Some(ConvergenceIssue::ZeroVariance),
        };
    }
    let rhat = split_rhat(chains);
    let ess = bulk_ess(chains);
    // written so that NaN diagnostics count as failures
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    let issue = if !(rhat <= RHAT_THRESHOLD) {
        Some(ConvergenceIssue::HighRhat)
    } else if !(ess >= MIN_ESS) {
        Some(ConvergenceIssue::LowEss)
    } else {
        None
    };
    Convergence { rhat, ess, issue }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn iid_chains(seed: u64, m: usize, n: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    fn ar1(seed: u64, m: usize, n: usize, phi: f64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| {
                let mut x = 0.0;
                (0..n)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        x = phi * x + e * (1.0 - phi * phi).sqrt();
                        x
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn iid_chains_have_rhat_near_one() {
        for seed in 0..20 {
            let r = split_rhat(&iid_chains(seed, 2, 2000));
            assert!((0.99..=1.02).contains(&r), "seed {seed}: {r}");
        }
    }

    #[test]
    fn disjoint_constant_chains_are_flagged() {
        let chains = vec![vec![0.0; 500], vec![10.0; 500]];
        let d = diagnose(&chains);
        assert!(d.rhat > 1.05);
        assert_eq!(d.issue, Some(ConvergenceIssue::HighRhat));
    }

    #[test]
    fn constant_chains_are_degenerate_not_nan_panics() {
        let d = diagnose(&[vec![3.0; 600], vec![3.0; 600]]);
        assert_eq!(d.issue, Some(ConvergenceIssue::ZeroVariance));
        assert!(d.rhat.is_nan());
    }

    #[test]
    fn shifted_chains_have_large_rhat() {
        let mut c = iid_chains(1, 2, 1000);
        c[1].iter_mut().for_each(|x| *x += 3.0);
        assert!(split_rhat(&c) > 1.5);
    }

    #[test]
    fn ess_of_iid_is_close_to_draw_count() {
        let c = iid_chains(3, 4, 1000);
        let ess = effective_sample_size(&c);
        assert!((3000.0..5000.0).contains(&ess), "{ess}");
    }

    #[test]
    fn ess_of_ar1_matches_theory() {
        // integrated autocorrelation time of AR(1) is (1+φ)/(1−φ) = 19 for φ = 0.9
        let c = ar1(5, 4, 20_000, 0.9);
        let ess = effective_sample_size(&c);
        let expected = 80_000.0 / 19.0;
        assert!((ess / expected - 1.0).abs() < 0.2, "{ess} vs {expected}");
    }

    #[test]
    fn fft_autocovariance_matches_direct_sum() {
        let x: Vec<f64> = iid_chains(9, 1, 37).remove(0);
        let m = mean(&x);
        let mut planner = FftPlanner::new();
        let fast = autocovariance(&x, &mut planner);
        for (t, f) in fast.iter().enumerate() {
            let slow: f64 = (0..x.len() - t).map(|i| (x[i] - m) * (x[i + t] - m)).sum::<f64>() / x.len() as f64;
            assert!((f - slow).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_normalize_averages_ties() {
        let z = rank_normalize(&[vec![1.0, 2.0], vec![2.0, 3.0]]);
        assert_eq!(z[0][1], z[1][0]);
        assert!(z[0][0] < z[0][1] && z[0][1] < z[1][1]);
        assert!((z[0][0] + z[1][1]).abs() < 1e-12);
    }
}
