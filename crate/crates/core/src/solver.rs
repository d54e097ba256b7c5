//! Nonnegative, per-coordinate weighted lasso by cyclic coordinate descent.
//!
//! Solves `min_{w ≥ 0} ½‖Dw − r‖² + λ Σⱼ pⱼ wⱼ` through its Gram form
//! `½wᵀGw − bᵀw` with `G = DᵀD`, `b = Dᵀr`. Every returned solution is
//! checked against the KKT conditions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::objective::RegressionForm;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Stop when the largest coordinate move in a sweep is below this.
    pub tol: f64,
    pub max_sweeps: usize,
    pub kkt_tol: f64,
    /// `false` drops the sign constraint (plain weighted lasso).
    pub long_only: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_sweeps: 10_000,
            kkt_tol: 1e-8,
            long_only: true,
        }
    }
}

/// Gram-form view of a [`RegressionForm`].
struct Problem {
    gram: DMatrix<f64>,
    corr: DVector<f64>,
    penalty: DVector<f64>,
}

impl Problem {
    fn new(form: &RegressionForm) -> Result<Self> {
        let gram = form.gram();
        if let Some(j) = (0..form.dim()).find(|&j| !(gram[(j, j)] > 0.0)) {
            return Err(Error::Degenerate(format!("design column {j} is zero")));
        }
        Ok(Self {
            gram,
            corr: form.correlation(),
            penalty: form.penalty_weights.clone(),
        })
    }

    fn dim(&self) -> usize {
        self.corr.len()
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.gram * w - &self.corr
    }

    fn objective(&self, w: &DVector<f64>, lambda: f64) -> f64 {
        let pen: f64 = w.iter().zip(self.penalty.iter()).map(|(x, p)| p * x.abs()).sum();
        0.5 * w.dot(&(&self.gram * w)) - self.corr.dot(w) + lambda * pen
    }

    /// Largest KKT violation over the coordinates selected by `free`.
    fn kkt_residual(&self, w: &DVector<f64>, lambda: f64, long_only: bool, free: Option<&[bool]>) -> f64 {
        let grad = self.gradient(w);
        (0..self.dim())
            .filter(|&j| free.is_none_or(|f| f[j]))
            .map(|j| {
                let lp = lambda * self.penalty[j];
                let g = grad[j];
                match (long_only, w[j]) {
                    (true, x) if x > 0.0 => (g + lp).abs(),
                    (true, _) => (-(g + lp)).max(0.0),
                    (false, x) if x != 0.0 => (g + lp * x.signum()).abs(),
                    (false, _) => (g.abs() - lp).max(0.0),
                }
            })
            .fold(0.0, f64::max)
    }

    /// Coordinate descent over the coordinates where `free` is true; the
    /// others stay at their starting values.
    fn descend(&self, lambda: f64, start: DVector<f64>, free: &[bool], opts: &SolverOptions) -> Result<DVector<f64>> {
        let n = self.dim();
        let mut w = start;
        let mut grad = self.gradient(&w);
        let mut last_obj = if cfg!(debug_assertions) { self.objective(&w, lambda) } else { 0.0 };
        for sweep in 1..=opts.max_sweeps {
            let mut max_step: f64 = 0.0;
            for j in 0..n {
                if !free[j] {
                    continue;
                }
                let gjj = self.gram[(j, j)];
                let lp = lambda * self.penalty[j];
                let u = gjj * w[j] - grad[j];
                let next = if opts.long_only {
                    ((u - lp) / gjj).max(0.0)
                } else {
                    u.signum() * (u.abs() - lp).max(0.0) / gjj
                };
                let step = next - w[j];
                if step != 0.0 {
                    w[j] = next;
                    grad.axpy(step, &self.gram.column(j), 1.0);
                    max_step = max_step.max(step.abs());
                }
            }
            if cfg!(debug_assertions) {
                let obj = self.objective(&w, lambda);
                debug_assert!(
                    obj <= last_obj + 1e-12 * (1.0 + last_obj.abs()),
                    "objective increased from {last_obj} to {obj} in sweep {sweep}"
                );
                last_obj = obj;
            }
            if sweep % 64 == 0 {
                grad = self.gradient(&w);
            }
            if max_step < opts.tol {
                let restricted = self.kkt_residual(&w, lambda, opts.long_only, Some(free));
                if restricted <= opts.kkt_tol {
                    return Ok(w);
                }
                grad = self.gradient(&w);
            }
        }
        Err(Error::Convergence {
            sweeps: opts.max_sweeps,
            kkt_residual: self.kkt_residual(&w, lambda, opts.long_only, Some(free)),
        })
    }

    /// Exact solution over the unpenalized coordinates with every penalized
    /// coordinate held at zero.
    fn unpenalized_solution(&self, opts: &SolverOptions) -> Result<DVector<f64>> {
        let free: Vec<bool> = self.penalty.iter().map(|&p| p == 0.0).collect();
        let start = DVector::zeros(self.dim());
        if free.iter().any(|&f| f) {
            self.descend(0.0, start, &free, opts)
        } else {
            Ok(start)
        }
    }

    fn lambda_max(&self, opts: &SolverOptions) -> Result<(f64, DVector<f64>)> {
        if self.penalty.iter().all(|&p| p == 0.0) {
            return Err(Error::Config("lambda_max is undefined when every asset is unpenalized".into()));
        }
        let w = self.unpenalized_solution(opts)?;
        let grad = self.gradient(&w);
        let lmax = (0..self.dim())
            .filter(|&j| self.penalty[j] > 0.0)
            .map(|j| {
                let c = -grad[j];
                let c = if opts.long_only { c.max(0.0) } else { c.abs() };
                c / self.penalty[j]
            })
            .fold(0.0, f64::max);
        Ok((lmax, w))
    }
}

pub fn kkt_residual(form: &RegressionForm, lambda: f64, w: &DVector<f64>, long_only: bool) -> Result<f64> {
    Ok(Problem::new(form)?.kkt_residual(w, lambda, long_only, None))
}

/// Smallest λ at which every penalized coordinate of the solution is zero.
pub fn lambda_max(form: &RegressionForm) -> Result<f64> {
    lambda_max_with(form, &SolverOptions::default())
}

pub fn lambda_max_with(form: &RegressionForm, opts: &SolverOptions) -> Result<f64> {
    Ok(Problem::new(form)?.lambda_max(opts)?.0)
}

pub fn nn_lasso(form: &RegressionForm, lambda: f64, warm: Option<&DVector<f64>>) -> Result<DVector<f64>> {
    nn_lasso_with(form, lambda, warm, &SolverOptions::default())
}

pub fn nn_lasso_with(form: &RegressionForm, lambda: f64, warm: Option<&DVector<f64>>, opts: &SolverOptions) -> Result<DVector<f64>> {
    let problem = Problem::new(form)?;
    if problem.penalty.iter().any(|&p| p > 0.0) && lambda.is_finite() {
        let (lmax, w_unpen) = problem.lambda_max(opts)?;
        if lambda >= lmax {
            return Ok(w_unpen);
        }
    }
    solve_one(&problem, lambda, warm, opts)
}

fn solve_one(problem: &Problem, lambda: f64, warm: Option<&DVector<f64>>, opts: &SolverOptions) -> Result<DVector<f64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    let n = problem.dim();
    let start = match warm {
        Some(w) if w.len() != n => {
            return Err(Error::Dimension(format!("warm start has {} entries, need {n}", w.len())));
        }
        Some(w) if opts.long_only => w.map(|x| x.max(0.0)),
        Some(w) => w.clone(),
        None => DVector::zeros(n),
    };
    problem.descend(lambda, start, &vec![true; n], opts)
}

#[derive(Debug, Clone, PartialEq)]
pub enum LambdaGrid {
    /// `points` values spaced geometrically from λ_max down to
    /// `min_ratio·λ_max`.
    Geometric { points: usize, min_ratio: f64 },
    /// Explicit strictly decreasing values.
    Explicit(Vec<f64>),
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::Geometric {
            points: 100,
            min_ratio: 1e-4,
        }
    }
}

impl LambdaGrid {
    fn resolve(&self, lmax: f64) -> Result<Vec<f64>> {
        let values = match self {
            LambdaGrid::Geometric { points, min_ratio } => {
                if *points < 2 || !(*min_ratio > 0.0 && *min_ratio < 1.0) {
                    return Err(Error::Config(format!("grid needs >= 2 points and ratio in (0,1), got {points}, {min_ratio}")));
                }
                // with λ_max = 0 every λ gives the same solution; any scale works
                let top = if lmax > 0.0 { lmax } else { 1.0 };
                let step = min_ratio.ln() / (*points - 1) as f64;
                (0..*points).map(|i| top * (step * i as f64).exp()).collect()
            }
            LambdaGrid::Explicit(v) => v.clone(),
        };
        if values.len() < 2 {
            return Err(Error::Config("lambda grid needs at least two points".into()));
        }
        if values.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) || values.windows(2).any(|p| p[1] >= p[0]) {
            return Err(Error::Config("lambda grid must be nonnegative and strictly decreasing".into()));
        }
        Ok(values)
    }
}

/// Solutions over a decreasing λ grid, sparsest first.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPath {
    pub lambdas: Vec<f64>,
    pub weights: Vec<DVector<f64>>,
    pub active_counts: Vec<usize>,
}

impl SolutionPath {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, |w| w.len())
    }

    /// Assets in the order they first take a nonzero weight, scanning from
    /// the sparsest end; ties go to the lower index.
    pub fn entry_order(&self) -> Vec<usize> {
        let mut order = Vec::new();
        let mut seen = vec![false; self.dim()];
        for w in &self.weights {
            for (j, &x) in w.iter().enumerate() {
                if x != 0.0 && !seen[j] {
                    seen[j] = true;
                    order.push(j);
                }
            }
        }
        order
    }
}

pub fn solve_path(form: &RegressionForm, grid: &LambdaGrid) -> Result<SolutionPath> {
    solve_path_with(form, grid, &SolverOptions::default())
}

/// Traces the path from λ_max downward, warm-starting each point from the
/// previous solution.
pub fn solve_path_with(form: &RegressionForm, grid: &LambdaGrid, opts: &SolverOptions) -> Result<SolutionPath> {
    let problem = Problem::new(form)?;
    let (lmax, mut warm) = if problem.penalty.iter().all(|&p| p == 0.0) {
        // λ has no effect; every grid point carries the same solution
        (0.0, problem.unpenalized_solution(opts)?)
    } else {
        problem.lambda_max(opts)?
    };
    let lambdas = grid.resolve(lmax)?;
    let mut weights = Vec::with_capacity(lambdas.len());
    for &lambda in &lambdas {
        let w = if lambda >= lmax { warm.clone() } else { solve_one(&problem, lambda, Some(&warm), opts)? };
        warm = w.clone();
        weights.push(w);
    }
    let active_counts = weights.iter().map(|w| w.iter().filter(|&&x| x != 0.0).count()).collect();
    Ok(SolutionPath {
        lambdas,
        weights,
        active_counts,
    })
}

/// Minimizes `½‖Dw − r‖² + λ Σⱼ pⱼ|wⱼ − w_prevⱼ|` over `w ≥ 0`.
///
/// Trades are split as `w = w_prev + u⁺ − u⁻` with `u± ≥ 0` and
/// `u⁻ ≤ w_prev`, which makes the penalty linear; coordinate descent then
/// runs over the pairs `(u⁺ⱼ, u⁻ⱼ)`.
pub fn turnover_solve(form: &RegressionForm, lambda: f64, w_prev: &DVector<f64>) -> Result<DVector<f64>> {
    turnover_solve_with(form, lambda, w_prev, &SolverOptions::default())
}

pub fn turnover_solve_with(form: &RegressionForm, lambda: f64, w_prev: &DVector<f64>, opts: &SolverOptions) -> Result<DVector<f64>> {
    let problem = Problem::new(form)?;
    let n = problem.dim();
    if w_prev.len() != n {
        return Err(Error::Dimension(format!("previous weights have {} entries, need {n}", w_prev.len())));
    }
    if w_prev.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::Config("previous weights must be nonnegative".into()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    let mut up: DVector<f64> = DVector::zeros(n);
    let mut down: DVector<f64> = DVector::zeros(n);
    let mut w = w_prev.clone();
    let mut grad = problem.gradient(&w);
    for sweep in 1..=opts.max_sweeps {
        let mut max_step: f64 = 0.0;
        for j in 0..n {
            let gjj = problem.gram[(j, j)];
            let lp = lambda * problem.penalty[j];
            // buy leg: d/du⁺ = grad + λp
            let next_up = (up[j] - (grad[j] + lp) / gjj).max(0.0);
            let step = next_up - up[j];
            if step != 0.0 {
                up[j] = next_up;
                w[j] = w_prev[j] + up[j] - down[j];
                grad.axpy(step, &problem.gram.column(j), 1.0);
                max_step = max_step.max(step.abs());
            }
            // sell leg: d/du⁻ = −grad + λp, boxed by the current holding
            let next_down = (down[j] - (lp - grad[j]) / gjj).clamp(0.0, w_prev[j]);
            let step = next_down - down[j];
            if step != 0.0 {
                down[j] = next_down;
                w[j] = w_prev[j] + up[j] - down[j];
                grad.axpy(-step, &problem.gram.column(j), 1.0);
                max_step = max_step.max(step.abs());
            }
        }
        if sweep % 64 == 0 {
            grad = problem.gradient(&w);
        }
        if max_step < opts.tol {
            if turnover_kkt(&problem, lambda, &w, w_prev) <= opts.kkt_tol {
                return Ok(w);
            }
            grad = problem.gradient(&w);
        }
    }
    Err(Error::Convergence {
        sweeps: opts.max_sweeps,
        kkt_residual: turnover_kkt(&problem, lambda, &w, w_prev),
    })
}

fn turnover_kkt(problem: &Problem, lambda: f64, w: &DVector<f64>, w_prev: &DVector<f64>) -> f64 {
    let grad = problem.gradient(w);
    (0..problem.dim())
        .map(|j| {
            let (g, lp, x, prev) = (grad[j], lambda * problem.penalty[j], w[j], w_prev[j]);
            if x > prev {
                (g + lp).abs()
            } else if x < prev {
                if x > 0.0 {
                    (g - lp).abs()
                } else {
                    (lp - g).max(0.0)
                }
            } else if x > 0.0 {
                (g.abs() - lp).max(0.0)
            } else {
                (-(g + lp)).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Turnover-penalized KKT residual, for callers checking a solution.
pub fn turnover_kkt_residual(form: &RegressionForm, lambda: f64, w: &DVector<f64>, w_prev: &DVector<f64>) -> Result<f64> {
    Ok(turnover_kkt(&Problem::new(form)?, lambda, w, w_prev))
}

/// Rescales nonnegative weights to sum to one.
pub fn normalize(w: &DVector<f64>) -> Result<DVector<f64>> {
    if w.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::Data("weights must be nonnegative to normalize".into()));
    }
    let total = w.sum();
    if total <= 0.0 {
        return Err(Error::Uninvested("all weights are zero".into()));
    }
    Ok(w / total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_form(r: &[f64], penalties: &[f64]) -> RegressionForm {
        let n = r.len();
        RegressionForm {
            design: DMatrix::identity(n, n),
            response: DVector::from_row_slice(r),
            penalty_weights: DVector::from_row_slice(penalties),
        }
    }

    #[test]
    fn lambda_max_identity() {
        assert_eq!(lambda_max(&identity_form(&[0.5, 0.2], &[1.0, 1.0])).unwrap(), 0.5);
        assert_eq!(lambda_max(&identity_form(&[-0.5, 0.0], &[1.0, 1.0])).unwrap(), 0.0);
        assert!(matches!(lambda_max(&identity_form(&[0.5], &[0.0])), Err(Error::Config(_))));
    }

    #[test]
    fn soft_threshold_on_identity() {
        let f = identity_form(&[0.5, 0.2], &[1.0, 1.0]);
        let w = nn_lasso(&f, 0.3, None).unwrap();
        assert!((w[0] - 0.2).abs() < 1e-15);
        assert_eq!(w[1], 0.0);
        let w = nn_lasso(&identity_form(&[0.4, -0.1, 0.0], &[1.0; 3]), 0.0, None).unwrap();
        assert_eq!(w.as_slice(), &[0.4, 0.0, 0.0]);
    }

    #[test]
    fn sign_free_mode_allows_shorts() {
        let opts = SolverOptions {
            long_only: false,
            ..Default::default()
        };
        let f = identity_form(&[0.5, -0.4], &[1.0, 1.0]);
        let w = nn_lasso_with(&f, 0.1, None, &opts).unwrap();
        assert!((w[0] - 0.4).abs() < 1e-15);
        assert!((w[1] + 0.3).abs() < 1e-15);
        assert_eq!(lambda_max_with(&f, &opts).unwrap(), 0.5);
    }

    #[test]
    fn rejects_negative_lambda_and_bad_warm_start() {
        let f = identity_form(&[0.5, 0.2], &[1.0, 1.0]);
        assert!(nn_lasso(&f, -1.0, None).is_err());
        assert!(nn_lasso(&f, 0.1, Some(&DVector::zeros(3))).is_err());
    }

    #[test]
    fn path_activates_in_response_order() {
        let f = identity_form(&[0.1, 0.5, 0.3, 0.05], &[1.0; 4]);
        let path = solve_path(&f, &LambdaGrid::default()).unwrap();
        assert_eq!(path.len(), 100);
        assert_eq!(path.lambdas[0], 0.5);
        assert!(path.weights[0].iter().all(|&x| x == 0.0));
        assert_eq!(path.entry_order(), vec![1, 2, 0, 3]);
    }

    #[test]
    fn unpenalized_asset_always_held() {
        let f = identity_form(&[0.1, 0.5, 0.3], &[0.0, 1.0, 1.0]);
        let path = solve_path(&f, &LambdaGrid::default()).unwrap();
        assert!(path.weights.iter().all(|w| w[0] > 0.0));
        assert_eq!(path.entry_order()[0], 0);
    }

    #[test]
    fn all_penalties_zero_gives_flat_path() {
        let f = identity_form(&[0.1, 0.5], &[0.0, 0.0]);
        assert!(lambda_max(&f).is_err());
        let path = solve_path(&f, &LambdaGrid::Explicit(vec![1.0, 0.5, 0.1])).unwrap();
        assert!(path.weights.iter().all(|w| *w == DVector::from_vec(vec![0.1, 0.5])));
        let problem = Problem::new(&f).unwrap();
        let a = solve_one(&problem, 1.0, None, &SolverOptions::default()).unwrap();
        let b = solve_one(&problem, 0.0, None, &SolverOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grid_validation() {
        let f = identity_form(&[0.1, 0.5], &[1.0, 1.0]);
        assert!(solve_path(&f, &LambdaGrid::Explicit(vec![0.1, 0.2])).is_err());
        assert!(solve_path(&f, &LambdaGrid::Explicit(vec![0.1])).is_err());
        assert!(solve_path(&f, &LambdaGrid::Geometric { points: 1, min_ratio: 0.1 }).is_err());
        let p = solve_path(&f, &LambdaGrid::Explicit(vec![0.6, 0.2, 0.0])).unwrap();
        assert_eq!(p.active_counts, vec![0, 1, 2]);
    }

    #[test]
    fn turnover_limits() {
        let f = identity_form(&[0.5, 0.2, 0.1], &[1.0; 3]);
        let prev = DVector::from_vec(vec![0.0, 0.7, 0.3]);
        assert_eq!(turnover_solve(&f, 10.0, &prev).unwrap(), prev);
        let w0 = turnover_solve(&f, 0.0, &prev).unwrap();
        let w1 = nn_lasso(&f, 0.0, None).unwrap();
        assert!((w0 - w1).amax() < 1e-12);
        // λ = 0.15 on an identity design: wⱼ = rⱼ ∓ λ on the side of the trade
        let w = turnover_solve(&f, 0.15, &prev).unwrap();
        assert!((w[0] - 0.35).abs() < 1e-12);
        assert!((w[1] - 0.35).abs() < 1e-12);
        assert!((w[2] - 0.25).abs() < 1e-12);
        assert!(turnover_solve(&f, 0.1, &DVector::from_vec(vec![-0.1, 0.0, 0.0])).is_err());
    }

    #[test]
    fn normalize_cases() {
        assert_eq!(normalize(&DVector::from_vec(vec![1.0, 1.0])).unwrap().as_slice(), &[0.5, 0.5]);
        assert!(matches!(normalize(&DVector::zeros(2)), Err(Error::Uninvested(_))));
        assert!(normalize(&DVector::from_vec(vec![1.0, -0.5])).is_err());
    }
}
