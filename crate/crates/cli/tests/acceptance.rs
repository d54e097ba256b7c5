//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sparse_mv::backtest::{run_backtest, run_strategies, BacktestConfig, StrategyKind, StrategySpec};
use sparse_mv::market_data::{synth_factor_panels, synth_panel, AssetMeta, FactorSynthSpec, Period, ReturnPanel, SynthSpec};
use sparse_mv::objective::{build_regression_form, RegressionForm};
use sparse_mv::posterior::{
    dlm_filter_asset, dlm_filter_factors, factor_gibbs_chain, niw_sample, niw_update, niw_update_rows, posterior_mean, DlmAssetState, DlmFactorState,
    FactorModelConfig, MomentDraw, MomentPosterior, NiwParams,
};
use sparse_mv::selection::{select_lambda, select_with_band};
use sparse_mv::solver::{kkt_residual, lambda_max, nn_lasso, solve_path, LambdaGrid, SolutionPath};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("solver correctness", solver_correctness),
        ("analytic endpoints", analytic_endpoints),
        ("conjugacy", conjugacy),
        ("filter-batch equivalence", filter_batch_equivalence),
        ("factor model consistency", factor_model_consistency),
        ("selection rule", selection_rule),
        ("backtest integrity", backtest_integrity),
        ("sparse beats full on synthetic signal", sparse_beats_full),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} {name} ... PASS ({detail}; {secs:.1}s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name} ... FAIL ({why}; {secs:.1}s)", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * normal(rng))
}

fn spd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let a = normal_matrix(rng, n, n, 1.0);
    (&a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.2) * scale
}

struct Instance {
    sigma: DMatrix<f64>,
    mu: DVector<f64>,
    unpenalized: Vec<usize>,
}

impl Instance {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let n = rng.random_range(2..=6);
        let sigma = spd(rng, n, 1.0);
        let mu = DVector::from_fn(n, |_, _| 0.2 + 0.5 * normal(rng));
        let unpenalized = if rng.random_bool(0.3) { vec![rng.random_range(0..n)] } else { vec![] };
        Self { sigma, mu, unpenalized }
    }

    fn penalties(&self) -> DVector<f64> {
        DVector::from_fn(self.mu.len(), |j, _| if self.unpenalized.contains(&j) { 0.0 } else { 1.0 })
    }

    fn objective(&self, lambda: f64, w: &DVector<f64>) -> f64 {
        0.5 * w.dot(&(&self.sigma * w)) - self.mu.dot(w) + lambda * self.penalties().dot(&w.abs())
    }

    fn form(&self) -> RegressionForm {
        build_regression_form(&MomentDraw::new(self.mu.clone(), self.sigma.clone()).unwrap(), &self.unpenalized).unwrap()
    }
}

fn projected_gradient(inst: &Instance, lambda: f64) -> DVector<f64> {
    let step = 1.0 / inst.sigma.symmetric_eigenvalues().max();
    let shift = inst.penalties() * lambda;
    let mut w = DVector::zeros(inst.mu.len());
    for _ in 0..1_000_000 {
        let next = (&w - (&inst.sigma * &w - &inst.mu + &shift) * step).map(|x| x.max(0.0));
        let moved = (&next - &w).amax();
        w = next;
        if moved < 1e-15 {
            break;
        }
    }
    w
}

/// Long-only minimizer of `½wᵀΣw − μᵀw` by enumerating supports.
fn long_only_oracle(sigma: &DMatrix<f64>, mu: &DVector<f64>) -> DVector<f64> {
    let n = mu.len();
    let mut best = (0.0, DVector::zeros(n));
    for mask in 1u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
        let sub = sigma.select_rows(&idx).select_columns(&idx).cholesky().unwrap().solve(&DVector::from_iterator(idx.len(), idx.iter().map(|&j| mu[j])));
        if sub.iter().any(|&x| x < 0.0) {
            continue;
        }
        let mut w = DVector::zeros(n);
        for (k, &j) in idx.iter().enumerate() {
            w[j] = sub[k];
        }
        let val = 0.5 * w.dot(&(sigma * &w)) - mu.dot(&w);
        if val < best.0 {
            best = (val, w);
        }
    }
    best.1
}

fn solver_correctness() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_obj, mut worst_w, mut worst_kkt) = (0.0f64, 0.0f64, 0.0f64);
    for case in 0..200 {
        let inst = Instance::random(&mut rng);
        let f = inst.form();
        let lambda = lambda_max(&f).map_err(|e| e.to_string())? * rng.random_range(0.0..1.1);
        let w = nn_lasso(&f, lambda, None).map_err(|e| e.to_string())?;
        let oracle = projected_gradient(&inst, lambda);
        worst_obj = worst_obj.max((inst.objective(lambda, &w) - inst.objective(lambda, &oracle)).abs());
        worst_w = worst_w.max((&w - &oracle).amax());
        ensure!(worst_obj <= 1e-6 && worst_w <= 1e-5, "instance {case}: objective gap {worst_obj:.2e}, weight gap {worst_w:.2e}");
        let path = solve_path(&f, &LambdaGrid::Geometric { points: 50, min_ratio: 1e-4 }).map_err(|e| e.to_string())?;
        for (l, w) in path.lambdas.iter().zip(&path.weights) {
            worst_kkt = worst_kkt.max(kkt_residual(&f, *l, w, true).map_err(|e| e.to_string())?);
        }
        ensure!(worst_kkt <= 1e-8, "instance {case}: KKT residual {worst_kkt:.2e}");
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.1}s");
    Ok(format!("objective gap {worst_obj:.1e}, weight gap {worst_w:.1e}, KKT {worst_kkt:.1e}"))
}

fn analytic_endpoints() -> Outcome {
    let r = DVector::from_vec(vec![0.9, 0.3, -0.2, 0.55, 0.0, 1.7]);
    let f = build_regression_form(&MomentDraw::new(r.clone(), DMatrix::identity(6, 6)).unwrap(), &[]).unwrap();
    for lambda in [0.0, 0.05, 0.3, 0.55, 0.9, 1.7, 3.0] {
        let w = nn_lasso(&f, lambda, None).map_err(|e| e.to_string())?;
        ensure!(w == r.map(|x| (x - lambda).max(0.0)), "soft threshold differs at lambda {lambda}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let mut inst = Instance::random(&mut rng);
        let f = inst.form();
        let lmax = lambda_max(&f).map_err(|e| e.to_string())?;
        for scale in [1.0, 1.01, 4.0] {
            let w = nn_lasso(&f, lmax * scale, None).map_err(|e| e.to_string())?;
            ensure!(f.penalized_indices().iter().all(|&j| w[j] == 0.0), "instance {case}: penalized weight nonzero at {scale}·lambda_max");
        }
        inst.unpenalized.clear();
        let path = solve_path(&inst.form(), &LambdaGrid::Geometric { points: 60, min_ratio: 1e-7 }).map_err(|e| e.to_string())?;
        worst = worst.max((path.weights.last().unwrap() - long_only_oracle(&inst.sigma, &inst.mu)).amax());
        ensure!(worst <= 1e-5, "instance {case}: endpoint differs from long-only optimum by {worst:.2e}");
    }
    Ok(format!("endpoint gap {worst:.1e}"))
}

fn conjugacy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (mut direct, mut coherence) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let n = rng.random_range(1..=5);
        let t = rng.random_range(1..=40);
        let mu0 = normal_matrix(&mut rng, n, 1, 0.01).column(0).into_owned();
        let prior = NiwParams::new(mu0, rng.random_range(0.01..3.0), n as f64 + rng.random_range(0.5..5.0), spd(&mut rng, n, 0.002)).unwrap();
        let x = normal_matrix(&mut rng, t, n, 0.05);
        let post = niw_update_rows(&prior, &x).map_err(|e| e.to_string())?;

        let tt = t as f64;
        let xbar: DVector<f64> = x.row_mean().transpose();
        let kn = prior.kappa + tt;
        let mut vn = &prior.sigma * prior.nu;
        for a in 0..n {
            for b in 0..n {
                let s: f64 = (0..t).map(|k| (x[(k, a)] - xbar[a]) * (x[(k, b)] - xbar[b])).sum();
                vn[(a, b)] += s + prior.kappa * tt / kn * (xbar[a] - prior.mu[a]) * (xbar[b] - prior.mu[b]);
            }
        }
        let mun = (&prior.mu * prior.kappa + &xbar * tt) / kn;
        ensure!(post.kappa == kn && post.nu == prior.nu + tt, "degrees of freedom differ");
        direct = direct.max((&post.mu - mun).amax()).max((post.scale_matrix() - vn).amax());

        let split = rng.random_range(0..=t);
        let first = niw_update_rows(&prior, &x.rows(0, split).into_owned()).map_err(|e| e.to_string())?;
        let seq = niw_update_rows(&first, &x.rows(split, t - split).into_owned()).map_err(|e| e.to_string())?;
        coherence = coherence.max((&seq.mu - &post.mu).amax()).max((seq.scale_matrix() - post.scale_matrix()).amax());
    }
    ensure!(direct <= 1e-12, "update differs from transcription by {direct:.2e}");
    ensure!(coherence <= 1e-10, "sequential and batch differ by {coherence:.2e}");

    let n = 3;
    let prior = NiwParams::new(DVector::zeros(n), 0.5, n as f64 + 2.0, spd(&mut rng, n, 0.002)).unwrap();
    let post = niw_update_rows(&prior, &normal_matrix(&mut rng, 24, n, 0.04).add_scalar(0.01)).unwrap();
    let draws = niw_sample(&post, 50_000, 5).map_err(|e| e.to_string())?;
    let expected_sigma = post.scale_matrix() / (post.nu - n as f64 - 1.0);
    let s = draws.len() as f64;
    let mut worst_z = 0.0f64;
    let mut z_score = |values: Vec<f64>, target: f64| {
        let mean = values.iter().sum::<f64>() / s;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (s - 1.0);
        worst_z = worst_z.max((mean - target).abs() / (var / s).sqrt());
    };
    for i in 0..n {
        z_score(draws.draws().iter().map(|d| d.mu()[i]).collect(), post.mu[i]);
        for j in 0..=i {
            z_score(draws.draws().iter().map(|d| d.sigma()[(i, j)]).collect(), expected_sigma[(i, j)]);
        }
    }
    ensure!(worst_z <= 4.0, "Monte Carlo mean {worst_z:.2} standard errors from target");
    Ok(format!("transcription {direct:.1e}, coherence {coherence:.1e}, worst MC z {worst_z:.2}"))
}

fn filter_batch_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst_asset = 0.0f64;
    for _ in 0..50 {
        let p = rng.random_range(1..=4);
        let t = rng.random_range(5..=80);
        let m0 = normal_matrix(&mut rng, p, 1, 0.5).column(0).into_owned();
        let c0 = spd(&mut rng, p, 1.0);
        let n0 = rng.random_range(0.5..5.0);
        let d0 = n0 * rng.random_range(0.0005..0.005);
        let x = normal_matrix(&mut rng, t, p, 0.04);
        let y = &x * normal_matrix(&mut rng, p, 1, 1.0) + normal_matrix(&mut rng, t, 1, 0.02);
        let mut state = DlmAssetState::new(m0.clone(), c0.clone(), n0, d0, 1.0, 1.0).unwrap();
        for k in 0..t {
            state = dlm_filter_asset(&state, y[k], &x.row(k).transpose()).map_err(|e| e.to_string())?;
        }
        // normal-gamma regression: β | φ ~ N(m0, C0 / (S0 φ)), φ ~ Ga(n0/2, d0/2)
        let prec0 = c0.try_inverse().unwrap() * (d0 / n0);
        let prec_n = &prec0 + x.tr_mul(&x);
        let cov_n = prec_n.clone().try_inverse().unwrap();
        let m_n = &cov_n * (&prec0 * &m0 + x.tr_mul(&y).column(0));
        let d_n = d0 + y.column(0).dot(&y.column(0)) + m0.dot(&(&prec0 * &m0)) - m_n.dot(&(&prec_n * &m_n));
        let c_n = cov_n * (d_n / (n0 + t as f64));
        worst_asset = worst_asset
            .max((&state.m - &m_n).amax())
            .max((&state.c - &c_n).amax())
            .max((state.d - d_n).abs() / d_n.max(1.0))
            .max((state.n - n0 - t as f64).abs());
    }
    ensure!(worst_asset <= 1e-8, "asset filter differs from batch regression by {worst_asset:.2e}");

    let mut worst_factor = 0.0f64;
    for _ in 0..20 {
        let p = rng.random_range(1..=5);
        let t = rng.random_range(1..=60);
        let m0 = normal_matrix(&mut rng, p, 1, 0.01).column(0).into_owned();
        let c0 = rng.random_range(0.1..5.0);
        let s0 = spd(&mut rng, p, 0.002);
        let n0 = p as f64 + rng.random_range(0.5..4.0);
        let rf = normal_matrix(&mut rng, t, p, 0.04);
        let mut state = DlmFactorState::new(m0.clone(), c0, s0.clone(), n0, 1.0, 1.0).unwrap();
        for k in 0..t {
            state = dlm_filter_factors(&state, &rf.row(k).transpose()).map_err(|e| e.to_string())?;
        }
        let niw = niw_update_rows(&NiwParams::new(m0, 1.0 / c0, n0, s0).unwrap(), &rf).unwrap();
        worst_factor = worst_factor.max((&state.m - &niw.mu).amax()).max((&state.s - &niw.sigma).amax());
    }
    ensure!(worst_factor <= 1e-8, "factor filter differs from conjugate update by {worst_factor:.2e}");
    Ok(format!("asset {worst_asset:.1e}, factor {worst_factor:.1e}"))
}

fn monthly_dates(t: usize, start: u32) -> Vec<Period> {
    let mut d = Period::from_yyyymm(start).unwrap();
    (0..t)
        .map(|_| {
            let cur = d;
            d = d.next();
            cur
        })
        .collect()
}

fn panel(values: DMatrix<f64>, prefix: &str) -> ReturnPanel {
    let assets = (0..values.ncols()).map(|i| AssetMeta::new(format!("{prefix}{i}"), "")).collect();
    ReturnPanel::new(monthly_dates(values.nrows(), 190001), assets, values).unwrap()
}

fn factor_model_consistency() -> Outcome {
    let b: DVector<f64> = DVector::from_vec(vec![0.045, 0.025, 0.05, 0.03, 0.02]);
    let psi: DVector<f64> = DVector::from_vec(vec![0.0005, 0.0008, 0.0002, 0.0012, 0.0004]);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut values = DMatrix::zeros(2000, 5);
    for t in 0..2000 {
        let f = normal(&mut rng);
        for i in 0..5 {
            values[(t, i)] = 0.006 + b[i] * f + psi[i].sqrt() * normal(&mut rng);
        }
    }
    let truth = &b * b.transpose() + DMatrix::from_diagonal(&psi);
    let cfg = FactorModelConfig {
        k: 1,
        n_iter: 2000,
        n_burn: 500,
        seed: 3,
        ..Default::default()
    };
    let chain = factor_gibbs_chain(&panel(values, "A"), &cfg).map_err(|e| e.to_string())?;
    let post = chain.to_posterior().map_err(|e| e.to_string())?;
    let rel = (posterior_mean(&post).unwrap().sigma() - &truth).norm() / truth.norm();
    ensure!(rel < 0.10, "relative Frobenius error {rel:.3}");
    let mut worst = 0.0f64;
    for (draw, moments) in chain.draws.iter().zip(post.draws()) {
        ensure!(draw.psi.iter().all(|&v| v > 0.0), "nonpositive idiosyncratic variance");
        let residual = moments.sigma() - &draw.loadings * draw.loadings.transpose();
        worst = worst.max((&residual - DMatrix::from_diagonal(&draw.psi)).amax());
    }
    ensure!(worst <= 1e-15, "draw deviates from BBᵀ + Ψ by {worst:.2e}");
    Ok(format!("relative error {rel:.3}, decomposition residual {worst:.1e}"))
}

fn selection_posterior(seed: u64, n: usize) -> MomentPosterior {
    let spec = SynthSpec {
        means: Some((0..n).map(|i| 0.01 + 0.01 * i as f64 / (n - 1) as f64).collect()),
        ..Default::default()
    };
    let data = synth_panel(n, 240, seed, &spec).unwrap();
    niw_sample(&niw_update(&NiwParams::weak(&data).unwrap(), &data).unwrap(), 400, seed).unwrap()
}

fn mean_path(post: &MomentPosterior, unpenalized: &[usize]) -> SolutionPath {
    let form = build_regression_form(&posterior_mean(post).unwrap(), unpenalized).unwrap();
    solve_path(&form, &LambdaGrid::Geometric { points: 40, min_ratio: 1e-3 }).unwrap()
}

fn selection_rule() -> Outcome {
    for seed in 0..10 {
        let post = selection_posterior(seed, 6);
        let path = mean_path(&post, &[]);
        let first = path.weights.iter().position(|w| w.iter().any(|&x| x > 0.0)).unwrap();
        let wide = select_with_band(&path, &post, (f64::NEG_INFINITY, f64::INFINITY)).map_err(|e| e.to_string())?;
        ensure!(wide.chosen_index == first, "seed {seed}: covering band chose {} not {first}", wide.chosen_index);
        let narrow = select_lambda(&path, &post, 1e-12).map_err(|e| e.to_string())?;
        ensure!(narrow.chosen_index == path.len() - 1, "seed {seed}: degenerate band chose {}", narrow.chosen_index);

        let mean = posterior_mean(&post).unwrap();
        let ratio = |i: usize| mean.mu()[i] / mean.sigma()[(i, i)].sqrt();
        let anchor = (0..6).max_by(|&a, &b| ratio(a).total_cmp(&ratio(b))).unwrap();
        let anchored = mean_path(&post, &[anchor]);
        for p in [0.1, 0.6, 0.95] {
            let sel = select_lambda(&anchored, &post, p).map_err(|e| e.to_string())?;
            ensure!(sel.chosen_weights[anchor] > 0.0, "seed {seed}: unpenalized asset dropped at band {p}");
        }
    }
    for seed in 0..20 {
        let post = selection_posterior(500 + seed, 8);
        let path = mean_path(&post, &[]);
        let mut last = f64::INFINITY;
        for p in [0.99, 0.9, 0.8, 0.6, 0.4, 0.2, 0.05, 0.01] {
            let chosen = select_lambda(&path, &post, p).map_err(|e| e.to_string())?.chosen_lambda;
            ensure!(chosen <= last, "posterior {seed}: chosen lambda rose to {chosen} at band {p}");
            last = chosen;
        }
    }
    Ok("covering, degenerate, anchored and monotone cases hold".into())
}

fn backtest_integrity() -> Outcome {
    let (etf, factors) = synth_factor_panels(&FactorSynthSpec::with_signal_assets(8, 2), 72, 4).unwrap();
    let cfg = BacktestConfig {
        warmup: 24,
        n_draws: 200,
        seed: 2,
        ..Default::default()
    };
    let specs = [
        StrategySpec::new(StrategyKind::Sparse).with_unpenalized(&["E01"]),
        StrategySpec::new(StrategyKind::SparseMinvar).with_unpenalized(&["E01"]),
        StrategySpec::new(StrategyKind::FullMinvar),
        StrategySpec::new(StrategyKind::PickK(3)).with_unpenalized(&["E01"]),
    ];
    let full = run_strategies(&etf, &factors, &specs, &cfg).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..10 {
        let t = rng.random_range(cfg.warmup - 1..etf.n_periods() - 1);
        let cut = run_strategies(&etf.head(t + 2).unwrap(), &factors.head(t + 2).unwrap(), &specs, &cfg).map_err(|e| e.to_string())?;
        let k = t + 1 - cfg.warmup;
        for (a, b) in full.iter().zip(&cut) {
            ensure!(a.holdings[..=k] == b.holdings[..], "{} weights for period {} change with later data", a.name, t + 1);
        }
    }
    for ledger in &full {
        let mut wealth = 1.0;
        for (r, c) in ledger.realized.iter().zip(&ledger.cumulative) {
            wealth *= 1.0 + r;
            ensure!(*c == wealth, "{} cumulative return breaks the running product", ledger.name);
        }
    }
    let etf = panel(DMatrix::from_row_slice(4, 1, &[0.03, -0.02, 0.1, -0.1]), "A");
    let factors = panel(DMatrix::zeros(4, 1), "F");
    let toy_cfg = BacktestConfig {
        warmup: 2,
        ..Default::default()
    };
    let toy = run_backtest(&etf, &factors, &StrategySpec::new(StrategyKind::SingleAsset("A0".into())), &toy_cfg).map_err(|e| e.to_string())?;
    ensure!((toy.final_wealth() - 0.99).abs() < 1e-12, "toy cumulative {}", toy.final_wealth());
    Ok("10 truncations, exact accounting, toy wealth 0.99".into())
}

fn sparse_beats_full() -> Outcome {
    let started = Instant::now();
    let specs = [StrategySpec::new(StrategyKind::Sparse).with_unpenalized(&["E01"]), StrategySpec::new(StrategyKind::Full)];
    let mut wins = 0;
    let mut errors = Vec::new();
    for seed in 0..20 {
        let (etf, factors) = synth_factor_panels(&FactorSynthSpec::with_signal_assets(25, 3), 180, seed).unwrap();
        let cfg = BacktestConfig {
            warmup: 60,
            seed,
            ..Default::default()
        };
        match run_strategies(&etf, &factors, &specs, &cfg) {
            Ok(ledgers) => {
                let sharpe = |i: usize| ledgers[i].stats().map(|s| s.sharpe).unwrap_or(f64::NEG_INFINITY);
                if sharpe(0) >= sharpe(1) {
                    wins += 1;
                }
            }
            Err(e) => errors.push(format!("seed {seed}: {e}")),
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let detail = format!("sparse won {wins} of 20{}", if errors.is_empty() { String::new() } else { format!(", errors: {}", errors.join("; ")) });
    ensure!(wins >= 12, "{detail}");
    ensure!(secs < 300.0, "{detail}, took {secs:.0}s");
    Ok(detail)
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sparse-mv")).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(())
}

fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let (iid, fac) = (p("synth_iid/returns.csv"), p("synth_factor/etf.csv"));
    let factors = p("synth_factor/factors.csv");
    let runs: Vec<(&str, Vec<String>)> = vec![
        ("synth_iid", vec!["synth", "--assets", "6", "--periods", "120", "--seed", "3"].into_iter().map(String::from).collect()),
        ("synth_factor", ["synth", "--kind", "factor", "--assets", "8", "--signal", "2", "--periods", "72", "--seed", "4"].map(String::from).to_vec()),
        ("fit_niw", ["fit", "--returns", &iid, "--draws", "300", "--dump-draws"].map(String::from).to_vec()),
        ("fit_factor", ["fit", "--returns", &iid, "--model", "factor", "--latent-factors", "2", "--iters", "300", "--burn", "100", "--dump-draws"].map(String::from).to_vec()),
        ("fit_dlm", ["fit", "--returns", &fac, "--model", "dlm", "--factors", &factors, "--draws", "300", "--dump-draws"].map(String::from).to_vec()),
        ("path", ["path", "--returns", &iid, "--draws", "300", "--unpenalized", "A01", "--grid-points", "30"].map(String::from).to_vec()),
        ("select", ["select", "--returns", &iid, "--model", "factor", "--latent-factors", "2", "--iters", "300", "--burn", "100", "--band-prob", "0.5"].map(String::from).to_vec()),
        (
            "backtest",
            ["backtest", "--etf-csv", &fac, "--factors-csv", &factors, "--strategy", "sparse", "--strategy", "full_minvar", "--strategy", "pick_k:3", "--unpenalized", "E01", "--warmup", "48", "--draws", "150", "--grid-points", "40"]
                .map(String::from)
                .to_vec(),
        ),
    ];
    let mut files = 0;
    for (name, args) in &runs {
        let first = root.join(name);
        let mut a: Vec<&str> = args.iter().map(String::as_str).collect();
        let first_s = first.to_string_lossy().into_owned();
        a.extend(["--out-dir", &first_s]);
        run_cli(&a)?;
        let manifest = first.join("manifest.txt").to_string_lossy().into_owned();
        let again = root.join(format!("{name}_again")).to_string_lossy().into_owned();
        run_cli(&["--config", &manifest, args[0].as_str(), "--out-dir", &again])?;
        let (x, y) = (read_dir(&first), read_dir(Path::new(&again)));
        ensure!(x.keys().eq(y.keys()), "{name}: file sets differ");
        for (file, bytes) in &x {
            ensure!(y[file] == *bytes, "{name}: {file} differs on rerun");
        }
        files += x.len();
    }
    Ok(format!("{} commands, {files} files byte-identical", runs.len()))
}
