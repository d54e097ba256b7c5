//! Posterior inference for the first two moments of asset returns.
//!
//! Three models feed the decision step: a conjugate normal-inverse-Wishart
//! model ([`niw`]), a latent factor model fitted by Gibbs sampling
//! ([`factor`]), and discount-factor dynamic linear models ([`dlm`]). Each
//! produces a [`MomentPosterior`], a bag of `(mu, sigma)` draws.

pub mod dlm;
pub mod factor;
pub mod niw;
pub(crate) mod sampling;

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

pub use dlm::{compose_moments, dlm_filter_asset, dlm_filter_factors, DlmAssetState, DlmConfig, DlmFactorState, DlmModel};
pub use factor::{factor_gibbs, factor_gibbs_chain, FactorChain, FactorDraw, FactorModelConfig};
pub use niw::{niw_sample, niw_update, niw_update_rows, NiwParams};

/// One value of the return moments: mean vector and covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentDraw {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
}

impl MomentDraw {
    /// Symmetrizes `sigma` and clamps roundoff-level negative eigenvalues;
    /// genuinely indefinite matrices are rejected.
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let n = mu.len();
        if n == 0 || sigma.nrows() != n || sigma.ncols() != n {
            return Err(Error::Dimension(format!(
                "mu has {n} entries but sigma is {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite moment".into()));
        }
        let sigma = linalg::clamp_psd(sigma)?;
        Ok(Self { mu, sigma })
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mu, self.sigma)
    }

    /// The same moments restricted to the listed assets, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            mu: DVector::from_fn(idx.len(), |i, _| self.mu[idx[i]]),
            sigma: DMatrix::from_fn(idx.len(), idx.len(), |i, j| self.sigma[(idx[i], idx[j])]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelTag {
    Niw,
    Factor,
    Dlm,
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelTag::Niw => "niw",
            ModelTag::Factor => "factor",
            ModelTag::Dlm => "dlm",
        })
    }
}

impl std::str::FromStr for ModelTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "niw" => Ok(ModelTag::Niw),
            "factor" => Ok(ModelTag::Factor),
            "dlm" => Ok(ModelTag::Dlm),
            other => Err(Error::Config(format!("unknown model {other:?} (expected niw, factor or dlm)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MomentPosterior {
    draws: Vec<MomentDraw>,
    model: ModelTag,
}

impl MomentPosterior {
    pub fn new(draws: Vec<MomentDraw>, model: ModelTag) -> Result<Self> {
        let first = draws.first().ok_or_else(|| Error::Data("posterior needs at least one draw".into()))?;
        let n = first.dim();
        if let Some(bad) = draws.iter().position(|d| d.dim() != n) {
            return Err(Error::Dimension(format!("draw {bad} has dimension {} (expected {n})", draws[bad].dim())));
        }
        Ok(Self { draws, model })
    }

    pub fn draws(&self) -> &[MomentDraw] {
        &self.draws
    }

    pub fn model(&self) -> ModelTag {
        self.model
    }

    pub fn dim(&self) -> usize {
        self.draws[0].dim()
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Writes every draw as a block of rows: one `mu` row followed by N
    /// `sigma` rows.
    pub fn write_csv<W: Write>(&self, tickers: &[String], writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["draw".to_owned(), "kind".to_owned(), "row".to_owned()];
        header.extend(tickers.iter().cloned());
        w.write_record(&header)?;
        for (s, d) in self.draws.iter().enumerate() {
            let mut rec = vec![s.to_string(), "mu".to_owned(), String::new()];
            rec.extend(d.mu.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
            for i in 0..d.dim() {
                let mut rec = vec![s.to_string(), "sigma".to_owned(), tickers.get(i).cloned().unwrap_or_default()];
                rec.extend(d.sigma.row(i).iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::io("<posterior writer>", e))?;
        Ok(())
    }
}

/// Elementwise average of the draws.
pub fn posterior_mean(post: &MomentPosterior) -> Result<MomentDraw> {
    let n = post.dim();
    let count = post.len() as f64;
    let mut mu = DVector::zeros(n);
    let mut sigma = DMatrix::zeros(n, n);
    for d in &post.draws {
        mu += &d.mu;
        sigma += &d.sigma;
    }
    MomentDraw::new(mu / count, sigma / count)
}
