use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::special::norm_pdf;
use crate::stats::{mean, quantile_sorted, sorted, variance};

/// A scalar summary of a predictive sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Functional {
    Mean,
    /// Empirical `α`-quantile.
    Quantile(f64),
}

impl fmt::Display for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Functional::Mean => f.write_str("mean"),
            Functional::Quantile(a) => write!(f, "quantile:{a}"),
        }
    }
}

impl FromStr for Functional {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "mean" {
            return Ok(Functional::Mean);
        }
        let rest = s
            .strip_prefix("quantile:")
            .or_else(|| s.strip_prefix('q'))
            .ok_or_else(|| Error::domain(format!("unknown functional '{s}'")))?;
        let a: f64 = rest
            .parse()
            .map_err(|_| Error::domain(format!("bad quantile level in '{s}'")))?;
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::domain(format!("quantile level {a} outside (0, 1)")));
        }
        Ok(Functional::Quantile(a))
    }
}

impl Serialize for Functional {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Functional {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

pub fn predict_functional(sample: &[f64], f: Functional) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::domain("empty sample"));
    }
    match f {
        Functional::Mean => Ok(mean(sample)),
        Functional::Quantile(a) => {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::domain(format!("quantile level {a} outside (0, 1)")));
            }
            Ok(quantile_sorted(&sorted(sample), a))
        }
    }
}

/// Row-wise weighted sums `w'x` of a simulation matrix.
pub fn contract(sims: &Array2<f64>, weights: &[f64]) -> Result<Vec<f64>> {
    if sims.ncols() != weights.len() {
        return Err(Error::domain(format!(
            "{} weights for {} columns",
            weights.len(),
            sims.ncols()
        )));
    }
    Ok(sims
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(weights).map(|(x, w)| x * w).sum())
        .collect())
}

/// Sample CRPS in energy form, `E|X − y| − E|X − X'| / 2`.
pub fn crps(sample: &[f64], y: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::domain("empty sample"));
    }
    let n = sample.len() as f64;
    let s = sorted(sample);
    let abs_dev = s.iter().map(|x| (x - y).abs()).sum::<f64>() / n;
    let pair: f64 = s
        .iter()
        .enumerate()
        .map(|(i, x)| x * (2.0 * i as f64 - (n - 1.0)))
        .sum();
    Ok(abs_dev - pair / (n * n))
}

/// Silverman's rule `0.9 · min(sd, IQR / 1.34) · n^(−1/5)`, with a positive floor.
pub fn kde_bandwidth(sample: &[f64]) -> f64 {
    let n = sample.len() as f64;
    let s = sorted(sample);
    let sd = variance(sample).sqrt();
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr / 1.34),
        (true, false) => sd,
        (false, true) => iqr / 1.34,
        (false, false) => 0.0,
    };
    let h = 0.9 * spread * n.powf(-0.2);
    h.max(1e-8 * (1.0 + mean(sample).abs()))
}

/// Negative log of a Gaussian kernel density estimate at `y`.
pub fn log_score(sample: &[f64], y: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::domain("empty sample"));
    }
    let h = kde_bandwidth(sample);
    let dens = sample.iter().map(|x| norm_pdf((y - x) / h)).sum::<f64>() / (sample.len() as f64 * h);
    Ok(-dens.max(f64::MIN_POSITIVE).ln())
}

/// Check loss `ρ_α(y − q)` with `ρ_α(u) = u (α − 1{u < 0})`.
pub fn check_loss(alpha: f64, q: f64, y: f64) -> f64 {
    let u = y - q;
    u * (alpha - if u < 0.0 { 1.0 } else { 0.0 })
}

/// A scoring rule applied to predictive samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Crps,
    Logs,
    Var95,
    Var99,
}

impl Measure {
    pub const ALL: [Measure; 4] = [Measure::Crps, Measure::Logs, Measure::Var95, Measure::Var99];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Crps => "crps",
            Measure::Logs => "logs",
            Measure::Var95 => "var95",
            Measure::Var99 => "var99",
        }
    }

    pub fn score(self, sample: &[f64], y: f64) -> Result<f64> {
        match self {
            Measure::Crps => crps(sample, y),
            Measure::Logs => log_score(sample, y),
            Measure::Var95 => Ok(check_loss(0.05, predict_functional(sample, Functional::Quantile(0.05))?, y)),
            Measure::Var99 => Ok(check_loss(0.01, predict_functional(sample, Functional::Quantile(0.01))?, y)),
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "crps" => Ok(Measure::Crps),
            "logs" | "log" => Ok(Measure::Logs),
            "var95" => Ok(Measure::Var95),
            "var99" => Ok(Measure::Var99),
            other => Err(Error::domain(format!("unknown measure '{other}'"))),
        }
    }
}

/// Average and individual values of one measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub measure: Measure,
    pub mean: f64,
    pub values: Vec<f64>,
}

/// Scores each sample against its realization.
pub fn score_forecasts(samples: &[Vec<f64>], realized: &[f64], measures: &[Measure]) -> Result<Vec<ScoreSummary>> {
    if samples.len() != realized.len() {
        return Err(Error::domain(format!(
            "{} samples for {} realizations",
            samples.len(),
            realized.len()
        )));
    }
    if samples.is_empty() {
        return Err(Error::domain("nothing to score"));
    }
    measures
        .iter()
        .map(|&m| {
            let values = samples
                .iter()
                .zip(realized)
                .map(|(s, &y)| m.score(s, y))
                .collect::<Result<Vec<f64>>>()?;
            Ok(ScoreSummary {
                measure: m,
                mean: mean(&values),
                values,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn functionals_on_small_samples() {
        assert_eq!(predict_functional(&[1.0, 2.0, 3.0], Functional::Mean).unwrap(), 2.0);
        assert_eq!(predict_functional(&[1.0, 2.0, 3.0], Functional::Quantile(0.5)).unwrap(), 2.0);
        assert!(predict_functional(&[1.0], Functional::Quantile(1.0)).is_err());
        assert!(predict_functional(&[], Functional::Mean).is_err());
    }

    #[test]
    fn normal_median_is_near_zero() {
        let n = 10_000;
        let x = normals(n, 1);
        let m = predict_functional(&x, Functional::Quantile(0.5)).unwrap();
        assert!(m.abs() < 3.0 / (n as f64).sqrt() * 1.2533);
    }

    #[test]
    fn portfolio_contraction() {
        let sims = Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(contract(&sims, &[0.5, 0.5]).unwrap(), vec![1.5, 3.5]);
    }

    #[test]
    fn crps_of_a_point_mass_at_the_outcome_is_zero() {
        assert!(crps(&[2.5; 7], 2.5).unwrap().abs() < 1e-15);
    }

    #[test]
    fn crps_matches_the_normal_closed_form() {
        // CRPS(N(0,1), y) = y(2Φ(y) − 1) + 2φ(y) − 1/√π; at y = 0 this is 2φ(0) − 1/√π
        let exact = 2.0 * norm_pdf(0.0) - 1.0 / std::f64::consts::PI.sqrt();
        let got = crps(&normals(10_000, 2), 0.0).unwrap();
        assert!((got - exact).abs() < 0.01, "{got} vs {exact}");
    }

    #[test]
    fn crps_energy_form_matches_the_quadratic_sum() {
        let x = normals(50, 3);
        let n = x.len() as f64;
        let direct = x.iter().map(|a| (a - 0.3_f64).abs()).sum::<f64>() / n
            - x.iter()
                .flat_map(|a| x.iter().map(move |b| (a - b).abs()))
                .sum::<f64>()
                / (2.0 * n * n);
        assert!((crps(&x, 0.3).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn check_loss_is_zero_at_the_quantile() {
        assert_eq!(check_loss(0.05, 1.3, 1.3), 0.0);
        assert!((check_loss(0.05, 0.0, -1.0) - 0.95).abs() < 1e-15);
        assert!((check_loss(0.05, 0.0, 1.0) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn log_score_is_close_to_the_normal_density() {
        let x = normals(20_000, 4);
        let ls = log_score(&x, 0.0).unwrap();
        assert!((ls + norm_pdf(0.0).ln()).abs() < 0.05);
    }

    #[test]
    fn parsing_and_scoring() {
        assert_eq!("q0.05".parse::<Functional>().unwrap(), Functional::Quantile(0.05));
        assert_eq!("mean".parse::<Functional>().unwrap(), Functional::Mean);
        assert!("q1.5".parse::<Functional>().is_err());
        let s = score_forecasts(&[vec![0.0, 1.0], vec![2.0, 3.0]], &[0.5, 2.5], &Measure::ALL).unwrap();
        assert_eq!(s.len(), 4);
        assert!(score_forecasts(&[], &[], &[Measure::Crps]).is_err());
    }
}
