//! Posterior Sharpe ratios along a solution path and the uncertainty-band
//! rule for picking λ.
//!
//! The reference is the densest (λ_min) portfolio on the path. Its Sharpe
//! ratio posterior defines a central band; walking from the sparsest end,
//! the first portfolio whose posterior *mean* Sharpe ratio lies inside the
//! band is selected. The reference itself always qualifies, so the walk
//! terminates.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::posterior::{MomentDraw, MomentPosterior};
use crate::solver::{normalize, SolutionPath};

/// Band probability used when none is given: a central 60% region.
pub const DEFAULT_BAND_PROB: f64 = 0.60;

/// Nonzero entries of a weight vector, for Sharpe evaluations that only
/// touch the held assets.
struct Holdings(Vec<(usize, f64)>);

impl Holdings {
    fn new(w: &DVector<f64>) -> Self {
        Holdings(w.iter().enumerate().filter(|(_, &x)| x != 0.0).map(|(i, &x)| (i, x)).collect())
    }

    fn sharpe(&self, draw: &MomentDraw) -> Option<f64> {
        let (mu, sigma) = (draw.mu(), draw.sigma());
        let mut mean = 0.0;
        let mut var = 0.0;
        for &(i, wi) in &self.0 {
            mean += wi * mu[i];
            let mut row = 0.0;
            for &(j, wj) in &self.0 {
                row += wj * sigma[(i, j)];
            }
            var += wi * row;
        }
        (var > 0.0).then(|| mean / var.sqrt())
    }
}

/// `wᵀμ / √(wᵀΣw)`.
pub fn sharpe(w: &DVector<f64>, moments: &MomentDraw) -> Result<f64> {
    if w.len() != moments.dim() {
        return Err(Error::Dimension(format!("{} weights for {} assets", w.len(), moments.dim())));
    }
    Holdings::new(w).sharpe(moments).ok_or_else(|| Error::ZeroVariance(String::new()))
}

/// Type-7 (linear interpolation) empirical quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quantile levels of a central band holding `band_prob` of the mass.
pub fn central_levels(band_prob: f64) -> (f64, f64) {
    let tail = 0.5 * (1.0 - band_prob);
    (tail, 1.0 - tail)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharpePosterior {
    pub values: Vec<f64>,
    pub mean: f64,
    /// Quantile levels `(lo, hi)`.
    pub levels: (f64, f64),
    /// Empirical quantiles at `levels`.
    pub quantiles: (f64, f64),
}

pub fn sharpe_posterior(w: &DVector<f64>, post: &MomentPosterior, levels: (f64, f64)) -> Result<SharpePosterior> {
    if !(0.0..=1.0).contains(&levels.0) || !(0.0..=1.0).contains(&levels.1) || levels.0 > levels.1 {
        return Err(Error::Config(format!("quantile levels {levels:?} must be ordered within [0, 1]")));
    }
    if w.len() != post.dim() {
        return Err(Error::Dimension(format!("{} weights for {} assets", w.len(), post.dim())));
    }
    let holdings = Holdings::new(w);
    let values = post
        .draws()
        .iter()
        .enumerate()
        .map(|(s, d)| holdings.sharpe(d).ok_or_else(|| Error::ZeroVariance(format!(" in draw {s}"))))
        .collect::<Result<Vec<_>>>()?;
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let quantiles = (quantile(&sorted, levels.0), quantile(&sorted, levels.1));
    Ok(SharpePosterior {
        values,
        mean,
        levels,
        quantiles,
    })
}

fn posterior_mean_sharpe(w: &DVector<f64>, post: &MomentPosterior) -> Result<f64> {
    let holdings = Holdings::new(w);
    let mut total = 0.0;
    for (s, d) in post.draws().iter().enumerate() {
        total += holdings.sharpe(d).ok_or_else(|| Error::ZeroVariance(format!(" in draw {s}")))?;
    }
    Ok(total / post.len() as f64)
}

/// Sharpe posterior at every path point; `None` where the portfolio is
/// uninvested.
pub fn sharpe_path(path: &SolutionPath, post: &MomentPosterior, levels: (f64, f64)) -> Result<Vec<Option<SharpePosterior>>> {
    path.weights
        .iter()
        .map(|w| if w.iter().all(|&x| x == 0.0) { Ok(None) } else { sharpe_posterior(w, post, levels).map(Some) })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub chosen_index: usize,
    pub chosen_lambda: f64,
    /// Normalized to sum to one.
    pub chosen_weights: DVector<f64>,
    /// Sharpe band of the reference (densest) portfolio.
    pub band: (f64, f64),
    /// Posterior mean Sharpe per path point; `None` for uninvested points
    /// and, in [`select_lambda_fast`], for points never evaluated.
    pub path_means: Vec<Option<f64>>,
}

/// Applies the band rule with a central band holding `band_prob` of the
/// reference portfolio's Sharpe posterior.
pub fn select_lambda(path: &SolutionPath, post: &MomentPosterior, band_prob: f64) -> Result<SelectionResult> {
    select(path, post, BandSpec::Prob(band_prob), true)
}

/// As [`select_lambda`], but stops evaluating at the chosen point.
pub fn select_lambda_fast(path: &SolutionPath, post: &MomentPosterior, band_prob: f64) -> Result<SelectionResult> {
    select(path, post, BandSpec::Prob(band_prob), false)
}

/// The band rule with an explicit `(lo, hi)` band (either end may be
/// infinite).
pub fn select_with_band(path: &SolutionPath, post: &MomentPosterior, band: (f64, f64)) -> Result<SelectionResult> {
    select(path, post, BandSpec::Fixed(band), true)
}

enum BandSpec {
    Prob(f64),
    Fixed((f64, f64)),
}

fn select(path: &SolutionPath, post: &MomentPosterior, band: BandSpec, full_trace: bool) -> Result<SelectionResult> {
    if path.is_empty() {
        return Err(Error::Data("empty solution path".into()));
    }
    if path.dim() != post.dim() {
        return Err(Error::Dimension(format!("path has {} assets, posterior {}", path.dim(), post.dim())));
    }
    let reference = path.len() - 1;
    let ref_w = &path.weights[reference];
    if ref_w.iter().all(|&x| x == 0.0) {
        return Err(Error::Uninvested(format!("the densest path point (lambda {}) holds nothing", path.lambdas[reference])));
    }
    let band = match band {
        BandSpec::Prob(p) => {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("band probability must lie in (0, 1), got {p}")));
            }
            sharpe_posterior(ref_w, post, central_levels(p))?.quantiles
        }
        BandSpec::Fixed(b) => {
            if !(b.0 <= b.1) {
                return Err(Error::Config(format!("band {b:?} is not ordered")));
            }
            b
        }
    };
    let mut path_means = vec![None; path.len()];
    let mut chosen = None;
    for (i, w) in path.weights.iter().enumerate() {
        if w.iter().all(|&x| x == 0.0) {
            continue;
        }
        let mean = posterior_mean_sharpe(w, post)?;
        path_means[i] = Some(mean);
        let inside = i == reference || (band.0 <= mean && mean <= band.1);
        if inside && chosen.is_none() {
            chosen = Some(i);
            if !full_trace {
                break;
            }
        }
    }
    let chosen_index = chosen.expect("reference point always qualifies");
    Ok(SelectionResult {
        chosen_index,
        chosen_lambda: path.lambdas[chosen_index],
        chosen_weights: normalize(&path.weights[chosen_index])?,
        band,
        path_means,
    })
}
