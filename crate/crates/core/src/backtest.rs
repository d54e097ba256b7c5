//! Monthly out-of-sample protocol: filter the dynamic models through period
//! t, form the next period's portfolio from the time-t posterior, hold it
//! for one period, repeat.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::market_data::{Period, ReturnPanel};
use crate::objective::{build_regression_form, minvar_form};
use crate::posterior::{DlmConfig, DlmModel, MomentDraw, MomentPosterior};
use crate::rng;
use crate::selection::{select_lambda_fast, DEFAULT_BAND_PROB};
use crate::solver::{nn_lasso, normalize, solve_path, LambdaGrid, SolutionPath};

#[derive(Debug, Clone, PartialEq)]
pub enum StrategyKind {
    /// Band-selected sparse mean-variance portfolio.
    Sparse,
    /// Minimum-variance weights on the sparse portfolio's assets.
    SparseMinvar,
    /// Long-only mean-variance portfolio over all assets (λ = 0).
    Full,
    /// Long-only minimum-variance portfolio over all assets.
    FullMinvar,
    /// Equal weights on the first k assets to enter the solution path.
    PickK(usize),
    /// Constant ticker weights.
    FixedWeights(Vec<(String, f64)>),
    SingleAsset(String),
}

impl StrategyKind {
    fn needs_model(&self) -> bool {
        !matches!(self, StrategyKind::FixedWeights(_) | StrategyKind::SingleAsset(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategySpec {
    pub name: String,
    pub kind: StrategyKind,
    /// Tickers exempt from the sparsity penalty.
    pub unpenalized: Vec<String>,
    pub band_prob: f64,
}

impl StrategySpec {
    pub fn new(kind: StrategyKind) -> Self {
        let name = match &kind {
            StrategyKind::Sparse => "sparse".to_owned(),
            StrategyKind::SparseMinvar => "sparse_minvar".to_owned(),
            StrategyKind::Full => "full".to_owned(),
            StrategyKind::FullMinvar => "full_minvar".to_owned(),
            StrategyKind::PickK(k) => format!("pick_{k}"),
            StrategyKind::FixedWeights(_) => "fixed".to_owned(),
            StrategyKind::SingleAsset(t) => t.clone(),
        };
        Self {
            name,
            kind,
            unpenalized: Vec::new(),
            band_prob: DEFAULT_BAND_PROB,
        }
    }

    pub fn with_unpenalized(mut self, tickers: &[&str]) -> Self {
        self.unpenalized = tickers.iter().map(|t| (*t).to_owned()).collect();
        self
    }

    pub fn with_band_prob(mut self, p: f64) -> Self {
        self.band_prob = p;
        self
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// The fixed Wealthfront allocation: 50% SPY, 15% EEM, 30% EZU, 5% IYW.
    pub fn wealthfront() -> Self {
        let weights = [("SPY", 0.50), ("EEM", 0.15), ("EZU", 0.30), ("IYW", 0.05)];
        Self::new(StrategyKind::FixedWeights(weights.iter().map(|(t, w)| ((*t).to_owned(), *w)).collect())).named("wealthfront")
    }

    /// Parses `sparse`, `sparse_minvar`, `full`, `full_minvar`, `pick_k[:K]`,
    /// `fixed:T1=w1,T2=w2,...`, `wealthfront` or `single:TICKER`.
    pub fn parse(s: &str) -> Result<Self> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let kind = match (head, arg) {
            ("sparse", None) => StrategyKind::Sparse,
            ("sparse_minvar", None) => StrategyKind::SparseMinvar,
            ("full", None) => StrategyKind::Full,
            ("full_minvar", None) => StrategyKind::FullMinvar,
            ("wealthfront", None) => return Ok(Self::wealthfront()),
            ("pick_k", None) => StrategyKind::PickK(5),
            ("pick_k", Some(k)) => StrategyKind::PickK(k.parse().map_err(|_| Error::Config(format!("bad pick_k count {k:?}")))?),
            ("single", Some(t)) if !t.is_empty() => StrategyKind::SingleAsset(t.to_owned()),
            ("fixed", Some(list)) => {
                let weights = list
                    .split(',')
                    .map(|pair| {
                        let (t, w) = pair
                            .split_once('=')
                            .ok_or_else(|| Error::Config(format!("fixed weight {pair:?} is not TICKER=WEIGHT")))?;
                        let w: f64 = w.trim().parse().map_err(|_| Error::Config(format!("bad weight in {pair:?}")))?;
                        Ok((t.trim().to_owned(), w))
                    })
                    .collect::<Result<Vec<_>>>()?;
                StrategyKind::FixedWeights(weights)
            }
            _ => return Err(Error::Config(format!("unknown strategy {s:?}"))),
        };
        Ok(Self::new(kind))
    }

    fn validate(&self, etf: &ReturnPanel) -> Result<()> {
        match &self.kind {
            StrategyKind::PickK(k) if *k == 0 || *k > etf.n_assets() => {
                return Err(Error::Config(format!("pick_k needs 1 <= k <= {}, got {k}", etf.n_assets())));
            }
            StrategyKind::FixedWeights(w) => {
                if w.iter().any(|(_, x)| !(*x >= 0.0)) {
                    return Err(Error::Config("fixed weights must be nonnegative".into()));
                }
                let total: f64 = w.iter().map(|(_, x)| x).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!("fixed weights sum to {total}, not 1")));
                }
                for (t, _) in w {
                    etf.index_of(t).ok_or_else(|| Error::Config(format!("unknown ticker {t}")))?;
                }
            }
            StrategyKind::SingleAsset(t) => {
                etf.index_of(t).ok_or_else(|| Error::Config(format!("unknown ticker {t}")))?;
            }
            _ => {}
        }
        for t in &self.unpenalized {
            etf.index_of(t).ok_or_else(|| Error::Config(format!("unknown unpenalized ticker {t}")))?;
        }
        if self.kind.needs_model() && !(self.band_prob > 0.0 && self.band_prob < 1.0) {
            return Err(Error::Config(format!("band probability must lie in (0, 1), got {}", self.band_prob)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BacktestConfig {
    /// Periods used only for filtering before the first portfolio is held.
    pub warmup: usize,
    pub dlm: DlmConfig,
    /// Posterior draws per period for the Sharpe bands.
    pub n_draws: usize,
    pub seed: u64,
    pub grid: LambdaGrid,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            warmup: 36,
            dlm: DlmConfig::default(),
            n_draws: 1000,
            seed: 0,
            grid: LambdaGrid::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestLedger {
    pub name: String,
    pub tickers: Vec<String>,
    /// Holding periods.
    pub dates: Vec<Period>,
    /// Normalized weights held over each period.
    pub holdings: Vec<DVector<f64>>,
    pub realized: Vec<f64>,
    pub cumulative: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OosStats {
    /// Annualized Sharpe ratio, `mean / sd · √12`.
    pub sharpe: f64,
    /// Annualized standard deviation in percent, `sd · √12 · 100`.
    pub sd: f64,
}

impl BacktestLedger {
    pub fn final_wealth(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(1.0)
    }

    pub fn stats(&self) -> Result<OosStats> {
        oos_stats(self)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_owned()];
        header.extend(self.tickers.iter().cloned());
        header.extend(["realized".to_owned(), "cumulative".to_owned()]);
        w.write_record(&header)?;
        for t in 0..self.dates.len() {
            let mut rec = vec![self.dates[t].to_string()];
            rec.extend(self.holdings[t].iter().map(|v| v.to_string()));
            rec.push(self.realized[t].to_string());
            rec.push(self.cumulative[t].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<ledger writer>", e))?;
        Ok(())
    }
}

/// Annualized out-of-sample Sharpe ratio and standard deviation of the
/// realized monthly returns.
pub fn oos_stats(ledger: &BacktestLedger) -> Result<OosStats> {
    oos_stats_from_returns(&ledger.realized)
}

pub fn oos_stats_from_returns(returns: &[f64]) -> Result<OosStats> {
    if returns.len() < 2 {
        return Err(Error::Data(format!("need at least 2 returns, got {}", returns.len())));
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(Error::ZeroVariance(" (constant realized returns)".into()));
    }
    let annual = 12f64.sqrt();
    Ok(OosStats {
        sharpe: mean / sd * annual,
        sd: sd * annual * 100.0,
    })
}

/// Per-period inputs shared by all strategies.
struct PeriodContext<'a> {
    t: usize,
    date: Period,
    moments: Option<MomentDraw>,
    model: Option<&'a DlmModel>,
    cfg: &'a BacktestConfig,
    posterior: Option<MomentPosterior>,
    paths: HashMap<Vec<usize>, SolutionPath>,
    selections: HashMap<(Vec<usize>, u64), DVector<f64>>,
}

impl PeriodContext<'_> {
    fn moments(&self) -> &MomentDraw {
        self.moments.as_ref().expect("model strategies always have moments")
    }

    fn posterior(&mut self) -> Result<&MomentPosterior> {
        if self.posterior.is_none() {
            let model = self.model.expect("model strategies always have a model");
            let mut rng = rng::substream(self.cfg.seed, "selection", self.t as u64);
            self.posterior = Some(model.sample_posterior(&mut rng, self.cfg.n_draws)?);
        }
        Ok(self.posterior.as_ref().expect("just filled"))
    }

    fn path(&mut self, unpenalized: &[usize]) -> Result<SolutionPath> {
        if let Some(p) = self.paths.get(unpenalized) {
            return Ok(p.clone());
        }
        let form = build_regression_form(self.moments(), unpenalized)?;
        let path = solve_path(&form, &self.cfg.grid)?;
        self.paths.insert(unpenalized.to_vec(), path.clone());
        Ok(path)
    }

    fn sparse_weights(&mut self, unpenalized: &[usize], band_prob: f64) -> Result<DVector<f64>> {
        let key = (unpenalized.to_vec(), band_prob.to_bits());
        if let Some(w) = self.selections.get(&key) {
            return Ok(w.clone());
        }
        let path = self.path(unpenalized)?;
        let w = select_lambda_fast(&path, self.posterior()?, band_prob)?.chosen_weights;
        self.selections.insert(key, w.clone());
        Ok(w)
    }

    fn uninvested(&self, name: &str) -> Error {
        Error::Uninvested(format!("strategy {name} holds nothing at period {} (t={})", self.date, self.t))
    }

    fn long_only_weights(&self, form: &crate::objective::RegressionForm, name: &str) -> Result<DVector<f64>> {
        let w = nn_lasso(form, 0.0, None)?;
        normalize(&w).map_err(|_| self.uninvested(name))
    }

    fn weights(&mut self, spec: &StrategySpec, etf: &ReturnPanel) -> Result<DVector<f64>> {
        let n = etf.n_assets();
        let mut unpenalized: Vec<usize> = spec.unpenalized.iter().filter_map(|t| etf.index_of(t)).collect();
        unpenalized.sort_unstable();
        unpenalized.dedup();
        match &spec.kind {
            StrategyKind::Sparse => self.sparse_weights(&unpenalized, spec.band_prob).map_err(|e| match e {
                Error::Uninvested(_) => self.uninvested(&spec.name),
                e => e,
            }),
            StrategyKind::SparseMinvar => {
                let sparse = self.sparse_weights(&unpenalized, spec.band_prob)?;
                let support: Vec<usize> = (0..n).filter(|&i| sparse[i] > 0.0).collect();
                let form = minvar_form(&self.moments().subset(&support), &[])?;
                let sub = self.long_only_weights(&form, &spec.name)?;
                let mut w = DVector::zeros(n);
                for (k, &i) in support.iter().enumerate() {
                    w[i] = sub[k];
                }
                Ok(w)
            }
            StrategyKind::Full => {
                let form = build_regression_form(self.moments(), &[])?;
                self.long_only_weights(&form, &spec.name)
            }
            StrategyKind::FullMinvar => {
                let form = minvar_form(self.moments(), &[])?;
                self.long_only_weights(&form, &spec.name)
            }
            StrategyKind::PickK(k) => {
                let entrants: Vec<usize> = self.path(&unpenalized)?.entry_order().into_iter().take(*k).collect();
                if entrants.is_empty() {
                    return Err(self.uninvested(&spec.name));
                }
                let share = 1.0 / entrants.len() as f64;
                let mut w = DVector::zeros(n);
                for i in entrants {
                    w[i] = share;
                }
                Ok(w)
            }
            StrategyKind::FixedWeights(map) => {
                let mut w = DVector::zeros(n);
                for (t, x) in map {
                    w[etf.index_of(t).expect("validated")] += x;
                }
                Ok(w)
            }
            StrategyKind::SingleAsset(t) => {
                let mut w = DVector::zeros(n);
                w[etf.index_of(t).expect("validated")] = 1.0;
                Ok(w)
            }
        }
    }
}

fn check_panels(etf: &ReturnPanel, factors: &ReturnPanel, cfg: &BacktestConfig) -> Result<()> {
    if etf.dates() != factors.dates() {
        return Err(Error::Data("asset and factor panels must be aligned on identical dates".into()));
    }
    if cfg.warmup == 0 {
        return Err(Error::Config("warmup must be at least one period".into()));
    }
    if etf.n_periods() <= cfg.warmup {
        return Err(Error::Data(format!(
            "need more than {} periods for the warmup, got {}",
            cfg.warmup,
            etf.n_periods()
        )));
    }
    if cfg.n_draws == 0 {
        return Err(Error::Config("need at least one posterior draw".into()));
    }
    Ok(())
}

/// Runs several strategies over the same periods, sharing the filtered
/// model, the posterior draws and the solution paths between them.
pub fn run_strategies(etf: &ReturnPanel, factors: &ReturnPanel, specs: &[StrategySpec], cfg: &BacktestConfig) -> Result<Vec<BacktestLedger>> {
    check_panels(etf, factors, cfg)?;
    for s in specs {
        s.validate(etf)?;
    }
    let needs_model = specs.iter().any(|s| s.kind.needs_model());
    let mut model = if needs_model {
        Some(DlmModel::new(etf.n_assets(), factors.n_assets(), &cfg.dlm)?)
    } else {
        None
    };
    let tickers: Vec<String> = etf.tickers().map(str::to_owned).collect();
    let mut ledgers: Vec<BacktestLedger> = specs
        .iter()
        .map(|s| BacktestLedger {
            name: s.name.clone(),
            tickers: tickers.clone(),
            dates: Vec::new(),
            holdings: Vec::new(),
            realized: Vec::new(),
            cumulative: Vec::new(),
        })
        .collect();
    let total = etf.n_periods();
    for t in 0..total - 1 {
        if let Some(m) = model.as_mut() {
            m.update(&etf.row(t), &factors.row(t))?;
        }
        if t + 1 < cfg.warmup {
            continue;
        }
        let next = etf.row(t + 1);
        let mut ctx = PeriodContext {
            t,
            date: etf.dates()[t],
            moments: model.as_ref().map(DlmModel::point_moments).transpose()?,
            model: model.as_ref(),
            cfg,
            posterior: None,
            paths: HashMap::new(),
            selections: HashMap::new(),
        };
        for (spec, ledger) in specs.iter().zip(ledgers.iter_mut()) {
            let w = ctx.weights(spec, etf)?;
            let realized = w.dot(&next);
            let prev = ledger.cumulative.last().copied().unwrap_or(1.0);
            ledger.dates.push(etf.dates()[t + 1]);
            ledger.holdings.push(w);
            ledger.realized.push(realized);
            ledger.cumulative.push(prev * (1.0 + realized));
        }
    }
    Ok(ledgers)
}

pub fn run_backtest(etf: &ReturnPanel, factors: &ReturnPanel, spec: &StrategySpec, cfg: &BacktestConfig) -> Result<BacktestLedger> {
    Ok(run_strategies(etf, factors, std::slice::from_ref(spec), cfg)?.remove(0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub name: String,
    pub sharpe: f64,
    pub sd: f64,
    pub final_wealth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub start: Period,
    pub end: Period,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn from_ledgers(ledgers: &[BacktestLedger]) -> Result<Self> {
        let first = ledgers.first().ok_or_else(|| Error::Config("no strategies to compare".into()))?;
        if ledgers.iter().any(|l| l.dates != first.dates) {
            return Err(Error::Data("strategies cover different periods".into()));
        }
        let rows = ledgers
            .iter()
            .map(|l| {
                let s = l.stats()?;
                Ok(ComparisonRow {
                    name: l.name.clone(),
                    sharpe: s.sharpe,
                    sd: s.sd,
                    final_wealth: l.final_wealth(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            start: first.dates[0],
            end: *first.dates.last().expect("nonempty ledger"),
            rows,
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["strategy", "sharpe", "sd", "final_wealth"])?;
        for r in &self.rows {
            w.write_record([r.name.clone(), r.sharpe.to_string(), r.sd.to_string(), r.final_wealth.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<table writer>", e))?;
        Ok(())
    }
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "out-of-sample {} to {}", self.start, self.end)?;
        writeln!(f, "{:<16} {:>8} {:>8} {:>10}", "strategy", "sharpe", "s.d.", "wealth")?;
        for r in &self.rows {
            writeln!(f, "{:<16} {:>8.2} {:>8.2} {:>10.3}", r.name, r.sharpe, r.sd, r.final_wealth)?;
        }
        Ok(())
    }
}

pub fn compare_strategies(etf: &ReturnPanel, factors: &ReturnPanel, specs: &[StrategySpec], cfg: &BacktestConfig) -> Result<ComparisonTable> {
    ComparisonTable::from_ledgers(&run_strategies(etf, factors, specs, cfg)?)
}
