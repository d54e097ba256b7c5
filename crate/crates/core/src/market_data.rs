//! Dated monthly return panels: CSV loading and writing, date alignment and
//! synthetic generators.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

/// A monthly period encoded as `YYYYMM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Period(u32);

impl Period {
    pub fn from_yyyymm(v: u32) -> Option<Self> {
        let (year, month) = (v / 100, v % 100);
        ((1000..=9999).contains(&year) && (1..=12).contains(&month)).then_some(Period(v))
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if s.len() != 6 || !s.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        s.parse().ok().and_then(Self::from_yyyymm)
    }

    pub fn yyyymm(self) -> u32 {
        self.0
    }

    pub fn next(self) -> Self {
        let (year, month) = (self.0 / 100, self.0 % 100);
        if month == 12 {
            Period((year + 1) * 100 + 1)
        } else {
            Period(self.0 + 1)
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssetMeta {
    pub ticker: String,
    pub style: String,
}

impl AssetMeta {
    pub fn new(ticker: impl Into<String>, style: impl Into<String>) -> Self {
        Self {
            ticker: ticker.into(),
            style: style.into(),
        }
    }
}

/// T×N matrix of simple per-period returns, rows ordered by strictly
/// increasing date.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    dates: Vec<Period>,
    assets: Vec<AssetMeta>,
    values: DMatrix<f64>,
}

impl ReturnPanel {
    pub fn new(dates: Vec<Period>, assets: Vec<AssetMeta>, values: DMatrix<f64>) -> Result<Self> {
        if dates.is_empty() || assets.is_empty() {
            return Err(Error::Data("panel needs at least one period and one asset".into()));
        }
        if values.nrows() != dates.len() || values.ncols() != assets.len() {
            return Err(Error::Dimension(format!(
                "values are {}x{} but panel has {} dates and {} assets",
                values.nrows(),
                values.ncols(),
                dates.len(),
                assets.len()
            )));
        }
        for pair in dates.windows(2) {
            if pair[1] == pair[0] {
                return Err(Error::DuplicateDate(pair[0].yyyymm()));
            }
            if pair[1] < pair[0] {
                return Err(Error::Data(format!("dates not increasing at {}", pair[1])));
            }
        }
        let mut seen = HashSet::new();
        for a in &assets {
            if a.ticker.trim().is_empty() {
                return Err(Error::Data("empty ticker".into()));
            }
            if !seen.insert(a.ticker.as_str()) {
                return Err(Error::Data(format!("duplicate ticker {}", a.ticker)));
            }
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite return {v}")));
        }
        Ok(Self {
            dates,
            assets,
            values,
        })
    }

    pub fn dates(&self) -> &[Period] {
        &self.dates
    }

    pub fn assets(&self) -> &[AssetMeta] {
        &self.assets
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_periods(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn tickers(&self) -> impl Iterator<Item = &str> {
        self.assets.iter().map(|a| a.ticker.as_str())
    }

    pub fn index_of(&self, ticker: &str) -> Option<usize> {
        self.assets.iter().position(|a| a.ticker == ticker)
    }

    /// Returns for period `t` as an N-vector.
    pub fn row(&self, t: usize) -> DVector<f64> {
        self.values.row(t).transpose()
    }

    /// The first `n` periods.
    pub fn head(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.n_periods() {
            return Err(Error::Data(format!("cannot take {n} of {} periods", self.n_periods())));
        }
        Ok(Self {
            dates: self.dates[..n].to_vec(),
            assets: self.assets.clone(),
            values: self.values.rows(0, n).into_owned(),
        })
    }

    /// Attaches style labels from a ticker→style map; unknown tickers keep
    /// their current label.
    pub fn with_styles(mut self, styles: &HashMap<String, String>) -> Self {
        for a in &mut self.assets {
            if let Some(s) = styles.get(&a.ticker) {
                a.style = s.clone();
            }
        }
        self
    }

    fn select_dates(&self, keep: &HashSet<Period>) -> Self {
        let rows: Vec<usize> = (0..self.n_periods()).filter(|&t| keep.contains(&self.dates[t])).collect();
        Self {
            dates: rows.iter().map(|&t| self.dates[t]).collect(),
            assets: self.assets.clone(),
            values: self.values.select_rows(&rows),
        }
    }
}

pub fn load_panel(path: impl AsRef<Path>) -> Result<ReturnPanel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_panel(file)
}

/// Parses the panel CSV layout: a `date` column of YYYYMM periods followed by
/// one column of decimal returns per ticker.
pub fn read_panel<R: Read>(reader: R) -> Result<ReturnPanel> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::Data("header needs a date column and at least one ticker".into()));
    }
    let tickers: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let mut rows: Vec<(Period, Vec<f64>)> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(rows.len() + 2, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(Error::Ragged {
                row: line,
                expected: header.len(),
                found: record.len(),
            });
        }
        let date = Period::parse(&record[0]).ok_or_else(|| Error::DateParse {
            row: line,
            value: record[0].to_owned(),
        })?;
        let cells = record
            .iter()
            .skip(1)
            .zip(&tickers)
            .map(|(cell, ticker)| {
                cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::CellParse {
                    row: line,
                    column: ticker.clone(),
                    value: cell.to_owned(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((date, cells));
    }
    rows.sort_by_key(|(d, _)| *d);
    let n = tickers.len();
    let values = DMatrix::from_fn(rows.len(), n, |t, i| rows[t].1[i]);
    let dates = rows.into_iter().map(|(d, _)| d).collect();
    let assets = tickers.into_iter().map(|t| AssetMeta::new(t, "")).collect();
    ReturnPanel::new(dates, assets, values)
}

pub fn write_panel(panel: &ReturnPanel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_panel_to(panel, file)
}

/// Writes the panel CSV. Values use the shortest representation that parses
/// back to the identical `f64`.
pub fn write_panel_to<W: Write>(panel: &ReturnPanel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_owned()];
    header.extend(panel.tickers().map(str::to_owned));
    w.write_record(&header)?;
    for t in 0..panel.n_periods() {
        let mut rec = vec![panel.dates[t].to_string()];
        rec.extend(panel.values.row(t).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<panel writer>", e))?;
    Ok(())
}

/// Reads a `ticker,style` sidecar file.
pub fn load_styles(path: impl AsRef<Path>) -> Result<HashMap<String, String>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut out = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        if record.len() < 2 {
            return Err(Error::Data("style file rows need ticker,style".into()));
        }
        out.insert(record[0].to_owned(), record[1].to_owned());
    }
    Ok(out)
}

/// Restricts both panels to their common dates, keeping column order.
pub fn align(a: &ReturnPanel, b: &ReturnPanel) -> Result<(ReturnPanel, ReturnPanel)> {
    if a.dates == b.dates {
        return Ok((a.clone(), b.clone()));
    }
    let da: HashSet<Period> = a.dates.iter().copied().collect();
    let common: HashSet<Period> = b.dates.iter().copied().filter(|d| da.contains(d)).collect();
    if common.is_empty() {
        return Err(Error::NoOverlap);
    }
    Ok((a.select_dates(&common), b.select_dates(&common)))
}

/// Generator settings for i.i.d. multivariate normal returns.
#[derive(Debug, Clone, Default)]
pub struct SynthSpec {
    /// Per-asset mean; defaults to an even spread over 0.005..=0.012.
    pub means: Option<Vec<f64>>,
    /// Per-asset volatility; defaults to an even spread over 0.03..=0.08.
    pub vols: Option<Vec<f64>>,
    /// Pairwise correlation used with `vols`; `None` means 0.5.
    pub correlation: Option<f64>,
    /// Full covariance, overriding `vols` and `correlation`.
    pub covariance: Option<DMatrix<f64>>,
    pub start: Option<Period>,
}

fn spread(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

impl SynthSpec {
    pub fn mean_vector(&self, n: usize) -> Result<DVector<f64>> {
        let means = self.means.clone().unwrap_or_else(|| spread(0.005, 0.012, n));
        if means.len() != n {
            return Err(Error::Config(format!("{} means for {n} assets", means.len())));
        }
        Ok(DVector::from_vec(means))
    }

    pub fn covariance_matrix(&self, n: usize) -> Result<DMatrix<f64>> {
        if let Some(c) = &self.covariance {
            if c.nrows() != n || c.ncols() != n {
                return Err(Error::Config(format!("covariance is {}x{}, need {n}x{n}", c.nrows(), c.ncols())));
            }
            return Ok(c.clone());
        }
        let vols = self.vols.clone().unwrap_or_else(|| spread(0.03, 0.08, n));
        if vols.len() != n || vols.iter().any(|v| *v < 0.0) {
            return Err(Error::Config(format!("need {n} nonnegative volatilities")));
        }
        let rho = self.correlation.unwrap_or(0.5);
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::Config(format!("correlation {rho} outside [-1, 1]")));
        }
        Ok(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                vols[i] * vols[i]
            } else {
                rho * vols[i] * vols[j]
            }
        }))
    }
}

fn synth_dates(start: Option<Period>, n: usize) -> Vec<Period> {
    let mut d = start.unwrap_or(Period(199202));
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(d);
        d = d.next();
    }
    out
}

fn synth_tickers(prefix: &str, n: usize) -> Vec<AssetMeta> {
    (0..n).map(|i| AssetMeta::new(format!("{prefix}{:02}", i + 1), "synthetic")).collect()
}

/// Draws `n_periods` i.i.d. multivariate normal return vectors.
pub fn synth_panel(n_assets: usize, n_periods: usize, seed: u64, spec: &SynthSpec) -> Result<ReturnPanel> {
    if n_assets == 0 || n_periods == 0 {
        return Err(Error::Config("asset and period counts must be at least 1".into()));
    }
    let mean = spec.mean_vector(n_assets)?;
    let cov = spec.covariance_matrix(n_assets)?;
    let factor = linalg::psd_factor(&cov).map_err(|e| Error::Config(format!("covariance: {e}")))?;
    let mut rng = rng::substream(seed, "synth", 0);
    let mut values = DMatrix::zeros(n_periods, n_assets);
    for t in 0..n_periods {
        let z = DVector::from_fn(n_assets, |_, _| StandardNormal.sample(&mut rng));
        let r = &mean + &factor * z;
        values.set_row(t, &r.transpose());
    }
    ReturnPanel::new(synth_dates(spec.start, n_periods), synth_tickers("A", n_assets), values)
}

/// Generator for an asset panel driven by observable pricing factors:
/// `r_t = loadingsᵀ f_t + e_t` with independent normal factors and
/// idiosyncratic noise.
#[derive(Debug, Clone)]
pub struct FactorSynthSpec {
    pub factor_means: Vec<f64>,
    pub factor_vols: Vec<f64>,
    /// p×N, column i holds asset i's factor exposures.
    pub loadings: DMatrix<f64>,
    pub idio_vols: Vec<f64>,
    pub start: Option<Period>,
}

impl FactorSynthSpec {
    /// A market factor with a positive premium plus eight zero-mean style
    /// factors. Every asset has unit market beta. The first `n_signal`
    /// assets are clean market exposure with low idiosyncratic risk; the
    /// rest add style tilts and more idiosyncratic noise, which lowers their
    /// Sharpe ratio without changing their expected return.
    pub fn with_signal_assets(n_assets: usize, n_signal: usize) -> Self {
        let styles = 8;
        let p = styles + 1;
        let mut loadings = DMatrix::zeros(p, n_assets);
        let mut idio_vols = Vec::with_capacity(n_assets);
        for i in 0..n_assets {
            loadings[(0, i)] = 1.0;
            if i < n_signal {
                idio_vols.push(0.01);
            } else {
                loadings[(1 + i % styles, i)] = 1.0;
                loadings[(1 + (i + 1) % styles, i)] = 0.5;
                idio_vols.push(0.03);
            }
        }
        let mut factor_means = vec![0.0; p];
        factor_means[0] = 0.008;
        let mut factor_vols = vec![0.03; p];
        factor_vols[0] = 0.04;
        Self {
            factor_means,
            factor_vols,
            loadings,
            idio_vols,
            start: None,
        }
    }

    fn validate(&self) -> Result<(usize, usize)> {
        let (p, n) = self.loadings.shape();
        if p == 0 || n == 0 {
            return Err(Error::Config("loadings must be nonempty".into()));
        }
        if self.factor_means.len() != p || self.factor_vols.len() != p || self.idio_vols.len() != n {
            return Err(Error::Config("factor/asset parameter lengths do not match loadings".into()));
        }
        if self.factor_vols.iter().chain(&self.idio_vols).any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::Config("volatilities must be finite and nonnegative".into()));
        }
        Ok((p, n))
    }
}

/// Returns `(assets, factors)` panels on identical dates.
pub fn synth_factor_panels(spec: &FactorSynthSpec, n_periods: usize, seed: u64) -> Result<(ReturnPanel, ReturnPanel)> {
    let (p, n) = spec.validate()?;
    if n_periods == 0 {
        return Err(Error::Config("period count must be at least 1".into()));
    }
    let mut rng = rng::substream(seed, "synth", 1);
    let mut f = DMatrix::zeros(n_periods, p);
    let mut r = DMatrix::zeros(n_periods, n);
    for t in 0..n_periods {
        let ft = DVector::from_fn(p, |k, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            spec.factor_means[k] + spec.factor_vols[k] * z
        });
        let rt = spec.loadings.tr_mul(&ft)
            + DVector::from_fn(n, |i, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                spec.idio_vols[i] * z
            });
        f.set_row(t, &ft.transpose());
        r.set_row(t, &rt.transpose());
    }
    let dates = synth_dates(spec.start, n_periods);
    Ok((
        ReturnPanel::new(dates.clone(), synth_tickers("E", n), r)?,
        ReturnPanel::new(dates, synth_tickers("F", p), f)?,
    ))
}
