//! Posterior summaries of draw vectors.

/// Mean, median, sd and the central 95% interval of a set of draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
}

/// Numerically safe inverse logit.
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Linear-interpolation quantile of sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summarizes draws. Panics on an empty slice.
pub fn summarize(draws: &[f64]) -> Summary {
    assert!(!draws.is_empty(), "cannot summarize zero draws");
    let n = draws.len() as f64;
    // shifted by the first draw so constant input gives an exact mean
    let x0 = draws[0];
    let mean = x0 + draws.iter().map(|x| x - x0).sum::<f64>() / n;
    let sd = if draws.len() > 1 {
        (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    Summary {
        mean,
        median: quantile_sorted(&sorted, 0.5),
        sd,
        q025: quantile_sorted(&sorted, 0.025),
        q975: quantile_sorted(&sorted, 0.975),
    }
}

/// Summary of `expit(θ)`, transforming each draw before summarizing.
pub fn summarize_prevalence(theta_draws: &[f64]) -> Summary {
    let p: Vec<f64> = theta_draws.iter().map(|&t| expit(t)).collect();
    summarize(&p)
}
