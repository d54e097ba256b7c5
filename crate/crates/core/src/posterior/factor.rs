//! Latent factor model `r_t = μ + B f_t + v_t` with `f_t ~ N(0, I_k)`,
//! `v_t ~ N(0, Ψ)` (Ψ diagonal) and `μ ~ N(0, Φ)`, fitted by Gibbs sampling.
//!
//! Loadings have independent N(0, 1) priors, idiosyncratic precisions
//! Gamma(2, 0.5·s²ᵢ) priors (shape, rate) where s²ᵢ is asset i's sample
//! variance. The top k×k block of B is lower triangular with a positive
//! diagonal, which pins down the rotation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::sampling::{gamma, outer_self, positive_normal, std_normal_vec};
use super::{ModelTag, MomentDraw, MomentPosterior};
use crate::error::{Error, Result};
use crate::market_data::ReturnPanel;
use crate::rng;

const PRECISION_SHAPE: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct FactorModelConfig {
    pub k: usize,
    /// Prior covariance of μ; identity when `None`.
    pub phi: Option<DMatrix<f64>>,
    pub n_iter: usize,
    pub n_burn: usize,
    pub seed: u64,
}

impl Default for FactorModelConfig {
    fn default() -> Self {
        Self {
            k: 3,
            phi: None,
            n_iter: 2000,
            n_burn: 500,
            seed: 0,
        }
    }
}

/// One retained state of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorDraw {
    pub mu: DVector<f64>,
    /// N×k loadings.
    pub loadings: DMatrix<f64>,
    /// Idiosyncratic variances (diagonal of Ψ).
    pub psi: DVector<f64>,
}

impl FactorDraw {
    /// `B Bᵀ`, exactly symmetric.
    pub fn common_covariance(&self) -> DMatrix<f64> {
        outer_self(&self.loadings)
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let mut s = self.common_covariance();
        for i in 0..s.nrows() {
            s[(i, i)] += self.psi[i];
        }
        s
    }

    pub fn to_moments(&self) -> Result<MomentDraw> {
        MomentDraw::new(self.mu.clone(), self.covariance())
    }
}

#[derive(Debug, Clone)]
pub struct FactorChain {
    pub draws: Vec<FactorDraw>,
}

impl FactorChain {
    pub fn to_posterior(&self) -> Result<MomentPosterior> {
        let draws = self.draws.iter().map(FactorDraw::to_moments).collect::<Result<Vec<_>>>()?;
        MomentPosterior::new(draws, ModelTag::Factor)
    }
}

pub fn factor_gibbs(data: &ReturnPanel, cfg: &FactorModelConfig) -> Result<MomentPosterior> {
    factor_gibbs_chain(data, cfg)?.to_posterior()
}

struct State {
    mu: DVector<f64>,
    loadings: DMatrix<f64>,
    precision: DVector<f64>,
    factors: DMatrix<f64>,
}

/// Runs the sampler and returns the retained (post burn-in) states.
pub fn factor_gibbs_chain(data: &ReturnPanel, cfg: &FactorModelConfig) -> Result<FactorChain> {
    let (t, n) = data.values().shape();
    let k = cfg.k;
    if k == 0 || k >= n {
        return Err(Error::Config(format!("factor count k={k} must satisfy 1 <= k < N={n}")));
    }
    if t <= k {
        return Err(Error::Data(format!("need more than k={k} periods, got {t}")));
    }
    if cfg.n_burn >= cfg.n_iter {
        return Err(Error::Config(format!("burn-in {} must be below iterations {}", cfg.n_burn, cfg.n_iter)));
    }
    let phi_inv = match &cfg.phi {
        None => DMatrix::identity(n, n),
        Some(phi) if phi.shape() == (n, n) => phi
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Config("phi must be positive definite".into()))?
            .inverse(),
        Some(phi) => return Err(Error::Config(format!("phi is {:?}, need {n}x{n}", phi.shape()))),
    };

    let r = data.values();
    let sample_mean: DVector<f64> = r.row_mean().transpose();
    let sample_var = DVector::from_fn(n, |i, _| {
        let col = r.column(i);
        (col.iter().map(|v| (v - sample_mean[i]).powi(2)).sum::<f64>() / t as f64).max(1e-12)
    });
    let precision_rate = sample_var.map(|v| 0.5 * v);

    let mut state = State {
        mu: sample_mean.clone(),
        loadings: initial_loadings(r, &sample_mean, k),
        precision: sample_var.map(|v| 2.0 / v),
        factors: DMatrix::zeros(t, k),
    };
    let mut rng = rng::substream(cfg.seed, "factor", 0);
    let mut draws = Vec::with_capacity(cfg.n_iter - cfg.n_burn);
    for iter in 0..cfg.n_iter {
        sample_factors(&mut rng, r, &mut state)?;
        sample_loadings(&mut rng, r, &mut state)?;
        sample_precisions(&mut rng, r, &precision_rate, &mut state)?;
        sample_mean_vector(&mut rng, r, &phi_inv, &mut state)?;
        if iter >= cfg.n_burn {
            draws.push(FactorDraw {
                mu: state.mu.clone(),
                loadings: state.loadings.clone(),
                psi: state.precision.map(|p| 1.0 / p),
            });
        }
    }
    Ok(FactorChain { draws })
}

/// Principal-component loadings rotated so the top k×k block is lower
/// triangular with a positive diagonal.
fn initial_loadings(r: &DMatrix<f64>, mean: &DVector<f64>, k: usize) -> DMatrix<f64> {
    let (t, n) = r.shape();
    let mut cov = DMatrix::zeros(n, n);
    for row in r.row_iter() {
        let d = row.transpose() - mean;
        cov += &d * d.transpose();
    }
    cov /= t as f64;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut b0 = DMatrix::zeros(n, k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let scale = eig.eigenvalues[idx].max(0.0).sqrt() * 0.9;
        b0.set_column(c, &(eig.eigenvectors.column(idx) * scale));
    }
    // top block = Rᵀ Qᵀ from the QR of its transpose; B0·Q has top block Rᵀ
    let qr = b0.rows(0, k).transpose().qr();
    let mut b = b0 * qr.q();
    for c in 0..k {
        if b[(c, c)] < 0.0 {
            b.column_mut(c).neg_mut();
        }
        if b[(c, c)] == 0.0 {
            b[(c, c)] = 1e-6;
        }
        for row in 0..c {
            b[(row, c)] = 0.0;
        }
    }
    b
}

fn sample_factors<R: Rng>(rng: &mut R, r: &DMatrix<f64>, s: &mut State) -> Result<()> {
    let (t, _) = r.shape();
    let k = s.loadings.ncols();
    // P = I + Bᵀ Ψ⁻¹ B, mean_t = P⁻¹ Bᵀ Ψ⁻¹ (r_t − μ)
    let weighted = DMatrix::from_fn(s.loadings.nrows(), k, |i, j| s.loadings[(i, j)] * s.precision[i]);
    let p = DMatrix::identity(k, k) + s.loadings.tr_mul(&weighted);
    let chol = p.cholesky().ok_or_else(|| Error::Degenerate("factor posterior precision".into()))?;
    let gain = chol.solve(&weighted.transpose());
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Degenerate("factor precision factor".into()))?;
    for ti in 0..t {
        let centered = r.row(ti).transpose() - &s.mu;
        let mean = &gain * centered;
        let noise = l_inv.tr_mul(&std_normal_vec(rng, k));
        s.factors.set_row(ti, &(mean + noise).transpose());
    }
    Ok(())
}

fn sample_loadings<R: Rng>(rng: &mut R, r: &DMatrix<f64>, s: &mut State) -> Result<()> {
    let (_, n) = r.shape();
    let k = s.loadings.ncols();
    let ftf = s.factors.tr_mul(&s.factors);
    for i in 0..n {
        let q = (i + 1).min(k);
        let prec = s.precision[i];
        let y = r.column(i).add_scalar(-s.mu[i]);
        let fty = s.factors.columns(0, q).tr_mul(&y);
        let post_prec = DMatrix::identity(q, q) + ftf.view((0, 0), (q, q)) * prec;
        let chol = post_prec
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Degenerate("loading posterior precision".into()))?;
        let mean = chol.solve(&(fty * prec));
        let mut row = DVector::zeros(q);
        if i >= k {
            let l_inv = chol
                .l()
                .solve_lower_triangular(&DMatrix::identity(q, q))
                .ok_or_else(|| Error::Degenerate("loading precision factor".into()))?;
            row = &mean + l_inv.tr_mul(&std_normal_vec(rng, q));
        } else {
            // diagonal entry d = i is constrained positive: update the free
            // entries given it, then it given them
            let d = i;
            let current = s.loadings[(i, d)];
            if d > 0 {
                let p_oo = post_prec.view((0, 0), (d, d)).into_owned();
                let p_od = post_prec.view((0, d), (d, 1)).into_owned();
                let chol_oo = p_oo.cholesky().ok_or_else(|| Error::Degenerate("loading block".into()))?;
                let cond_mean = mean.rows(0, d).into_owned() - chol_oo.solve(&(p_od * (current - mean[d])));
                let l_inv = chol_oo
                    .l()
                    .solve_lower_triangular(&DMatrix::identity(d, d))
                    .ok_or_else(|| Error::Degenerate("loading block factor".into()))?;
                let free = cond_mean + l_inv.tr_mul(&std_normal_vec(rng, d));
                row.rows_mut(0, d).copy_from(&free);
            }
            let p_dd = post_prec[(d, d)];
            let shift: f64 = (0..d).map(|j| post_prec[(d, j)] * (row[j] - mean[j])).sum();
            let cond_mean = mean[d] - shift / p_dd;
            row[d] = positive_normal(rng, cond_mean, p_dd.sqrt().recip());
        }
        for j in 0..k {
            s.loadings[(i, j)] = if j < q { row[j] } else { 0.0 };
        }
    }
    Ok(())
}

fn sample_precisions<R: Rng>(rng: &mut R, r: &DMatrix<f64>, rate0: &DVector<f64>, s: &mut State) -> Result<()> {
    let (t, n) = r.shape();
    let fitted = &s.factors * s.loadings.transpose();
    for i in 0..n {
        let sse: f64 = (0..t).map(|ti| (r[(ti, i)] - s.mu[i] - fitted[(ti, i)]).powi(2)).sum();
        s.precision[i] = gamma(rng, PRECISION_SHAPE + 0.5 * t as f64, rate0[i] + 0.5 * sse)?;
    }
    Ok(())
}

fn sample_mean_vector<R: Rng>(rng: &mut R, r: &DMatrix<f64>, phi_inv: &DMatrix<f64>, s: &mut State) -> Result<()> {
    let (t, n) = r.shape();
    let fitted = &s.factors * s.loadings.transpose();
    let resid_sum: DVector<f64> = (r - fitted).row_sum().transpose();
    let mut prec = phi_inv.clone();
    for i in 0..n {
        prec[(i, i)] += t as f64 * s.precision[i];
    }
    let rhs = resid_sum.component_mul(&s.precision);
    let chol = prec.cholesky().ok_or_else(|| Error::Degenerate("mean posterior precision".into()))?;
    let mean = chol.solve(&rhs);
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Degenerate("mean precision factor".into()))?;
    s.mu = mean + l_inv.tr_mul(&std_normal_vec(rng, n));
    Ok(())
}
