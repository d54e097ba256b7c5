use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sparse_mv::backtest::{run_strategies, BacktestConfig, ComparisonTable, StrategySpec};
use sparse_mv::market_data::{align, load_panel, synth_factor_panels, synth_panel, write_panel_to, FactorSynthSpec, ReturnPanel, SynthSpec};
use sparse_mv::objective::build_regression_form;
use sparse_mv::posterior::{factor_gibbs, niw_sample, niw_update, posterior_mean, DlmConfig, DlmModel, FactorModelConfig, ModelTag, MomentPosterior, NiwParams};
use sparse_mv::rng;
use sparse_mv::selection::{central_levels, select_lambda, sharpe_path};
use sparse_mv::solver::{normalize, solve_path, LambdaGrid};

use crate::settings::{self, Resolver};
use crate::{BacktestArgs, Cli, Command, DlmArgs, Failure, FitArgs, GridArgs, ModelArgs, PathArgs, SynthArgs};

const DEFAULT_STRATEGIES: [&str; 5] = ["sparse", "sparse_minvar", "full", "full_minvar", "pick_k:5"];

/// Files produced by a command, written together once everything succeeded.
struct Outputs(Vec<(String, Vec<u8>)>);

impl Outputs {
    fn new() -> Self {
        Self(Vec::new())
    }

    fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.0.push((name.into(), bytes));
    }

    fn write(self, dir: &Path) -> Result<(), Failure> {
        std::fs::create_dir_all(dir).map_err(|e| Failure::config(format!("cannot create {}: {e}", dir.display())))?;
        for (name, bytes) in self.0 {
            let path = dir.join(&name);
            std::fs::write(&path, bytes).map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))?;
            println!("wrote {}", path.display());
        }
        Ok(())
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let mut file = match &cli.config {
        Some(p) => settings::read_file(p)?,
        None => BTreeMap::new(),
    };
    // the output location is not part of what a run computes
    let out_dir = match cli.out_dir {
        Some(d) => d,
        None => file.remove("out_dir").map_or_else(|| PathBuf::from("out"), PathBuf::from),
    };
    let name = match &cli.command {
        Command::Fit(_) => "fit",
        Command::Path(_) => "path",
        Command::Select(_) => "select",
        Command::Backtest(_) => "backtest",
        Command::Synth(_) => "synth",
    };
    let mut r = Resolver::new(name, file)?;
    let seed = r.value("seed", cli.seed, 0u64)?;
    let mut out = Outputs::new();
    match cli.command {
        Command::Fit(a) => fit(&mut r, a, seed, &mut out)?,
        Command::Path(a) => path(&mut r, a, seed, false, &mut out)?,
        Command::Select(a) => path(&mut r, a, seed, true, &mut out)?,
        Command::Backtest(a) => backtest(&mut r, a, seed, &mut out)?,
        Command::Synth(a) => synth(&mut r, a, seed, &mut out)?,
    }
    out.add("manifest.txt", r.finish()?.render().into_bytes());
    out.write(&out_dir)
}

fn dlm_config(r: &mut Resolver, a: DlmArgs) -> Result<DlmConfig, Failure> {
    let d = DlmConfig::default();
    Ok(DlmConfig {
        delta_beta: r.value("delta_beta", a.delta_beta, d.delta_beta)?,
        delta_eps: r.value("delta_eps", a.delta_eps, d.delta_eps)?,
        delta_c: r.value("delta_c", a.delta_c, d.delta_c)?,
        delta_f: r.value("delta_f", a.delta_f, d.delta_f)?,
        ..d
    })
}

fn grid(r: &mut Resolver, a: GridArgs) -> Result<LambdaGrid, Failure> {
    Ok(LambdaGrid::Geometric {
        points: r.value("grid_points", a.grid_points, 100usize)?,
        min_ratio: r.value("min_ratio", a.min_ratio, 1e-4f64)?,
    })
}

fn tickers(panel: &ReturnPanel) -> Vec<String> {
    panel.tickers().map(str::to_owned).collect()
}

fn fit_model(r: &mut Resolver, a: ModelArgs, seed: u64) -> Result<(MomentPosterior, Vec<String>), Failure> {
    let returns = load_panel(r.input("returns", a.returns)?)?;
    let model_flag = a.model.map(|m| m.parse::<ModelTag>()).transpose()?;
    let model = r.value("model", model_flag, ModelTag::Niw)?;
    let post = match model {
        ModelTag::Niw => {
            let draws = r.value("draws", a.draws, 1000usize)?;
            let post = niw_update(&NiwParams::weak(&returns)?, &returns)?;
            niw_sample(&post, draws, seed)?
        }
        ModelTag::Factor => {
            let cfg = FactorModelConfig {
                k: r.value("latent_factors", a.latent_factors, 3usize)?,
                n_iter: r.value("iters", a.iters, 2000usize)?,
                n_burn: r.value("burn", a.burn, 500usize)?,
                seed,
                ..Default::default()
            };
            factor_gibbs(&returns, &cfg)?
        }
        ModelTag::Dlm => {
            let factors = load_panel(r.input("factors", a.factors)?)?;
            let draws = r.value("draws", a.draws, 1000usize)?;
            let cfg = dlm_config(r, a.dlm)?;
            let (returns, factors) = align(&returns, &factors)?;
            let mut m = DlmModel::new(returns.n_assets(), factors.n_assets(), &cfg)?;
            for t in 0..returns.n_periods() {
                m.update(&returns.row(t), &factors.row(t))?;
            }
            m.sample_posterior(&mut rng::substream(seed, "model", 0), draws)?
        }
    };
    Ok((post, tickers(&returns)))
}

fn csv_bytes(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(sparse_mv::Error::from)?;
    for row in rows {
        w.write_record(&row).map_err(sparse_mv::Error::from)?;
    }
    w.into_inner().map_err(|e| Failure::config(e.to_string()))
}

fn fit(r: &mut Resolver, a: FitArgs, seed: u64, out: &mut Outputs) -> Result<(), Failure> {
    let (post, names) = fit_model(r, a.model, seed)?;
    let dump = r.flag("dump_draws", a.dump_draws)?;
    let mean = posterior_mean(&post)?;
    let mu_rows = names.iter().zip(mean.mu().iter()).map(|(t, v)| vec![t.clone(), v.to_string()]).collect();
    out.add("mu.csv", csv_bytes(vec!["ticker".into(), "mu".into()], mu_rows)?);
    let mut header = vec!["ticker".to_owned()];
    header.extend(names.iter().cloned());
    let sigma_rows = names
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut row = vec![t.clone()];
            row.extend(mean.sigma().row(i).iter().map(|v| v.to_string()));
            row
        })
        .collect();
    out.add("sigma.csv", csv_bytes(header, sigma_rows)?);
    if dump {
        let mut buf = Vec::new();
        post.write_csv(&names, &mut buf)?;
        out.add("draws.csv", buf);
    }
    Ok(())
}

#[derive(Serialize)]
struct Holding<'a> {
    ticker: &'a str,
    weight_pct: f64,
}

#[derive(Serialize)]
struct PathPoint {
    lambda: f64,
    active_count: usize,
    mean_sharpe: Option<f64>,
}

#[derive(Serialize)]
struct SelectionReport<'a> {
    model: String,
    band_prob: f64,
    band: [f64; 2],
    chosen_index: usize,
    chosen_lambda: f64,
    weights: Vec<Holding<'a>>,
    path: Vec<PathPoint>,
}

fn path(r: &mut Resolver, a: PathArgs, seed: u64, select: bool, out: &mut Outputs) -> Result<(), Failure> {
    let (post, names) = fit_model(r, a.model, seed)?;
    let unpenalized = r.list("unpenalized", a.unpenalized, &[])?;
    let grid = grid(r, a.grid)?;
    let band_prob = r.value("band_prob", a.band_prob, 0.6f64)?;
    if !(band_prob > 0.0 && band_prob < 1.0) {
        return Err(Failure::config(format!("band probability must lie in (0, 1), got {band_prob}")));
    }
    let idx = unpenalized
        .iter()
        .map(|t| names.iter().position(|n| n == t).ok_or_else(|| Failure::config(format!("unknown unpenalized ticker {t}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let form = build_regression_form(&posterior_mean(&post)?, &idx)?;
    let sol = solve_path(&form, &grid)?;
    let sharpes = sharpe_path(&sol, &post, central_levels(band_prob))?;

    let mut header = vec!["lambda".to_owned()];
    header.extend(names.iter().cloned());
    header.push("active_count".into());
    let rows = (0..sol.len())
        .map(|i| {
            let w = normalize(&sol.weights[i]).unwrap_or_else(|_| sol.weights[i].clone());
            let mut row = vec![sol.lambdas[i].to_string()];
            row.extend(w.iter().map(|v| v.to_string()));
            row.push(sol.active_counts[i].to_string());
            row
        })
        .collect();
    out.add("path.csv", csv_bytes(header, rows)?);
    let rows = (0..sol.len())
        .map(|i| {
            let mut row = vec![sol.lambdas[i].to_string(), sol.active_counts[i].to_string()];
            match &sharpes[i] {
                Some(s) => row.extend([s.mean.to_string(), s.quantiles.0.to_string(), s.quantiles.1.to_string()]),
                None => row.extend([String::new(), String::new(), String::new()]),
            }
            row
        })
        .collect();
    let header = ["lambda", "active_count", "mean", "lo", "hi"].map(String::from).to_vec();
    out.add("sharpe_path.csv", csv_bytes(header, rows)?);

    if select {
        let sel = select_lambda(&sol, &post, band_prob)?;
        let report = SelectionReport {
            model: post.model().to_string(),
            band_prob,
            band: [sel.band.0, sel.band.1],
            chosen_index: sel.chosen_index,
            chosen_lambda: sel.chosen_lambda,
            weights: names
                .iter()
                .zip(sel.chosen_weights.iter())
                .map(|(t, w)| Holding {
                    ticker: t,
                    weight_pct: 100.0 * w,
                })
                .collect(),
            path: (0..sol.len())
                .map(|i| PathPoint {
                    lambda: sol.lambdas[i],
                    active_count: sol.active_counts[i],
                    mean_sharpe: sel.path_means[i],
                })
                .collect(),
        };
        let mut json = serde_json::to_string_pretty(&report).map_err(|e| Failure::config(e.to_string()))?;
        json.push('\n');
        out.add("selection.json", json.into_bytes());
    }
    Ok(())
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

#[derive(Serialize)]
struct ComparisonRow<'a> {
    strategy: &'a str,
    sharpe: f64,
    sd: f64,
    final_wealth: f64,
}

#[derive(Serialize)]
struct ComparisonReport<'a> {
    start: String,
    end: String,
    periods: usize,
    rows: Vec<ComparisonRow<'a>>,
}

fn backtest(r: &mut Resolver, a: BacktestArgs, seed: u64, out: &mut Outputs) -> Result<(), Failure> {
    let etf = load_panel(r.input("etf_csv", a.etf_csv)?)?;
    let factors = load_panel(r.input("factors_csv", a.factors_csv)?)?;
    let strategies = r.list("strategy", a.strategy, &DEFAULT_STRATEGIES)?;
    let unpenalized = r.list("unpenalized", a.unpenalized, &[])?;
    let unpenalized: Vec<&str> = unpenalized.iter().map(String::as_str).collect();
    let band_prob = r.value("band_prob", a.band_prob, 0.6f64)?;
    let cfg = BacktestConfig {
        warmup: r.value("warmup", a.warmup, 36usize)?,
        n_draws: r.value("draws", a.draws, 1000usize)?,
        grid: grid(r, a.grid)?,
        dlm: dlm_config(r, a.dlm)?,
        seed,
    };
    let specs = strategies
        .iter()
        .map(|s| Ok(StrategySpec::parse(s)?.with_unpenalized(&unpenalized).with_band_prob(band_prob)))
        .collect::<Result<Vec<_>, Failure>>()?;
    let mut stems: Vec<String> = specs.iter().map(|s| file_stem(&s.name)).collect();
    stems.sort();
    if stems.windows(2).any(|p| p[0] == p[1]) {
        return Err(Failure::config("two strategies share a name".to_owned()));
    }

    let (etf, factors) = align(&etf, &factors)?;
    let ledgers = run_strategies(&etf, &factors, &specs, &cfg)?;
    let table = ComparisonTable::from_ledgers(&ledgers)?;
    for l in &ledgers {
        let mut buf = Vec::new();
        l.write_csv(&mut buf)?;
        out.add(format!("ledger_{}.csv", file_stem(&l.name)), buf);
    }
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    out.add("comparison.csv", buf);
    let report = ComparisonReport {
        start: table.start.to_string(),
        end: table.end.to_string(),
        periods: ledgers[0].dates.len(),
        rows: table
            .rows
            .iter()
            .map(|row| ComparisonRow {
                strategy: &row.name,
                sharpe: row.sharpe,
                sd: row.sd,
                final_wealth: row.final_wealth,
            })
            .collect(),
    };
    let mut json = serde_json::to_string_pretty(&report).map_err(|e| Failure::config(e.to_string()))?;
    json.push('\n');
    out.add("comparison.json", json.into_bytes());
    print!("{table}");
    Ok(())
}

fn synth(r: &mut Resolver, a: SynthArgs, seed: u64, out: &mut Outputs) -> Result<(), Failure> {
    let kind = r.value("kind", a.kind, "iid".to_owned())?;
    let periods = r.value("periods", a.periods, 240usize)?;
    let panel_bytes = |p: &ReturnPanel| -> Result<Vec<u8>, Failure> {
        let mut buf = Vec::new();
        write_panel_to(p, &mut buf)?;
        Ok(buf)
    };
    match kind.as_str() {
        "iid" => {
            let assets = r.value("assets", a.assets, 10usize)?;
            let panel = synth_panel(assets, periods, seed, &SynthSpec::default())?;
            out.add("returns.csv", panel_bytes(&panel)?);
        }
        "factor" => {
            let assets = r.value("assets", a.assets, 25usize)?;
            let signal = r.value("signal", a.signal, 3usize)?;
            if signal > assets {
                return Err(Failure::config(format!("{signal} signal assets exceed {assets} assets")));
            }
            let (etf, factors) = synth_factor_panels(&FactorSynthSpec::with_signal_assets(assets, signal), periods, seed)?;
            out.add("etf.csv", panel_bytes(&etf)?);
            out.add("factors.csv", panel_bytes(&factors)?);
        }
        other => return Err(Failure::config(format!("unknown synth kind {other:?} (expected iid or factor)"))),
    }
    Ok(())
}
