//! Rolling out-of-sample evaluation of portfolio forecasts.

use std::collections::BTreeMap;

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{fit_model, FitOptions, MarginMode, PseudoSample, SVineModel};
use crate::forecast::{replicate_rng, simulate_conditional, Measure};
use crate::stats::mean;
use crate::vine_graph::{d_vine, SVineSpec};

/// Random portfolio weights: the first `d − 1` are uniform on `[lo, hi]`,
/// the last one makes the weights sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSpec {
    pub count: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for PortfolioSpec {
    fn default() -> Self {
        PortfolioSpec {
            count: 100,
            lo: -0.15,
            hi: 0.25,
        }
    }
}

pub fn generate_portfolios(d: usize, spec: &PortfolioSpec, seed: u64) -> Result<Vec<Vec<f64>>> {
    if spec.count == 0 {
        return Err(Error::domain("at least one portfolio is required"));
    }
    if d == 0 || !(spec.lo <= spec.hi) {
        return Err(Error::domain(format!(
            "invalid portfolio range [{}, {}] for d = {d}",
            spec.lo, spec.hi
        )));
    }
    let mut rng = replicate_rng(seed, u64::MAX);
    Ok((0..spec.count)
        .map(|_| {
            let mut w: Vec<f64> = (0..d - 1)
                .map(|_| {
                    if spec.lo == spec.hi {
                        spec.lo
                    } else {
                        rng.random_range(spec.lo..spec.hi)
                    }
                })
                .collect();
            w.push(1.0 - w.iter().sum::<f64>());
            w
        })
        .collect())
}

/// Newey–West standard error of a sample mean with Bartlett weights.
pub fn newey_west_se(x: &[f64], lags: usize) -> f64 {
    let n = x.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(x);
    let gamma = |l: usize| (l..n).map(|t| (x[t] - m) * (x[t - l] - m)).sum::<f64>() / n as f64;
    let lags = lags.min(n - 1);
    let mut var = gamma(0);
    for l in 1..=lags {
        var += 2.0 * (1.0 - l as f64 / (lags + 1) as f64) * gamma(l);
    }
    (var.max(0.0) / n as f64).sqrt()
}

/// A forecasting model under evaluation.
#[derive(Debug, Clone)]
pub enum BacktestModel {
    /// Refitted on each estimation window.
    Refit(FitOptions),
    /// Used as is at every origin.
    Fixed(SVineModel),
    /// Margins refitted on each window, all copulas independent.
    Independence(MarginMode),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestConfig {
    /// Length of each estimation window.
    pub window: usize,
    /// Number of forecast origins between refits.
    pub stride: usize,
    /// Forecast horizon in rows; the target is the cumulative return.
    pub horizon: usize,
    pub n_sims: usize,
    pub measures: Vec<Measure>,
    pub portfolios: PortfolioSpec,
    pub seed: u64,
    /// Lags of the serial-dependence correction of standard errors.
    #[serde(default = "default_lags")]
    pub nw_lags: usize,
}

fn default_lags() -> usize {
    30
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            window: 750,
            stride: 125,
            horizon: 1,
            n_sims: 1000,
            measures: Measure::ALL.to_vec(),
            portfolios: PortfolioSpec::default(),
            seed: 1,
            nw_lags: 30,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self, t_len: usize) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::domain("stride must be at least 1"));
        }
        if self.horizon == 0 || self.n_sims == 0 {
            return Err(Error::domain("horizon and number of simulations must be positive"));
        }
        if self.measures.is_empty() {
            return Err(Error::domain("no measures requested"));
        }
        if self.portfolios.count == 0 {
            return Err(Error::domain("at least one portfolio is required"));
        }
        if self.window + self.horizon > t_len {
            return Err(Error::InsufficientData(format!(
                "T = {t_len} does not exceed window {} plus horizon {}",
                self.window, self.horizon
            )));
        }
        Ok(())
    }
}

/// Mean score and its standard error for one model and measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureResult {
    pub model: String,
    pub measure: Measure,
    pub mean: f64,
    pub se: f64,
    pub n: usize,
    /// Portfolio-averaged score at each forecast origin.
    pub series: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestReport {
    pub origins: Vec<usize>,
    pub results: Vec<MeasureResult>,
}

impl BacktestReport {
    pub fn get(&self, model: &str, measure: Measure) -> Option<&MeasureResult> {
        self.results.iter().find(|r| r.model == model && r.measure == measure)
    }

    /// `model,measure,mean,se,n` table.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,measure,mean,se,n\n");
        for r in &self.results {
            s.push_str(&format!("{},{},{},{},{}\n", r.model, r.measure, r.mean, r.se, r.n));
        }
        s
    }
}

fn independence_model(x: &Array2<f64>, mode: MarginMode) -> Result<SVineModel> {
    let d = x.ncols();
    let (_, margins) = PseudoSample::from_observations(x, mode)?;
    let id: Vec<u32> = (1..=d as u32).collect();
    let spec = SVineSpec::new(d_vine(d), id.clone(), id, 0)?;
    SVineModel::new(spec, BTreeMap::new())?.with_margins(margins, mode)
}

fn build(model: &BacktestModel, train: &Array2<f64>) -> Result<SVineModel> {
    match model {
        BacktestModel::Refit(opts) => fit_model(train, opts),
        BacktestModel::Fixed(m) => Ok(m.clone()),
        BacktestModel::Independence(mode) => independence_model(train, *mode),
    }
}

/// Rolling evaluation of named models on the same origins and portfolios.
///
/// At origin `t` the models see rows `t − window .. t` (refits happen every
/// `stride` origins), forecast rows `t .. t + horizon`, and every portfolio's
/// cumulative return over the horizon is scored.
pub fn run_backtest(x: &Array2<f64>, cfg: &BacktestConfig, models: &[(String, BacktestModel)]) -> Result<BacktestReport> {
    let t_len = x.nrows();
    let d = x.ncols();
    cfg.validate(t_len)?;
    if models.is_empty() {
        return Err(Error::domain("no models to evaluate"));
    }
    let weights = generate_portfolios(d, &cfg.portfolios, cfg.seed)?;
    let origins: Vec<usize> = (cfg.window..=t_len - cfg.horizon).collect();
    let mut results = Vec::new();
    for (name, spec) in models {
        let mut current: Option<SVineModel> = None;
        let mut series: Vec<Vec<f64>> = vec![Vec::with_capacity(origins.len()); cfg.measures.len()];
        for (oi, &t) in origins.iter().enumerate() {
            if oi % cfg.stride == 0 || current.is_none() {
                let train = x.slice(s![t - cfg.window..t, ..]).to_owned();
                match build(spec, &train) {
                    Ok(m) => current = Some(m),
                    Err(e) => {
                        log::warn!("{name}: refit at row {t} failed: {e}");
                        if current.is_none() {
                            return Err(e);
                        }
                    }
                }
            }
            let model = current.as_ref().expect("model available");
            let p = model.markov_order();
            let history = x.slice(s![t - p.min(t)..t, ..]).to_owned();
            let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(t as u64);
            let sims = simulate_conditional(model, &history, cfg.horizon, cfg.n_sims, seed)?;
            let mut acc = vec![0.0; cfg.measures.len()];
            for w in &weights {
                let sample: Vec<f64> = sims
                    .rows()
                    .into_iter()
                    .map(|r| {
                        (0..cfg.horizon)
                            .map(|h| (0..d).map(|j| w[j] * r[h * d + j]).sum::<f64>())
                            .sum()
                    })
                    .collect();
                let realized: f64 = (0..cfg.horizon)
                    .map(|h| (0..d).map(|j| w[j] * x[[t + h, j]]).sum::<f64>())
                    .sum();
                for (mi, m) in cfg.measures.iter().enumerate() {
                    acc[mi] += m.score(&sample, realized)?;
                }
            }
            for (mi, a) in acc.into_iter().enumerate() {
                series[mi].push(a / weights.len() as f64);
            }
        }
        for (mi, &m) in cfg.measures.iter().enumerate() {
            let v = std::mem::take(&mut series[mi]);
            results.push(MeasureResult {
                model: name.clone(),
                measure: m,
                mean: mean(&v),
                se: newey_west_se(&v, cfg.nw_lags),
                n: v.len(),
                series: v,
            });
        }
    }
    Ok(BacktestReport { origins, results })
}
