//! Marginal models: Fernández–Steel skew-t fitted by maximum likelihood and
//! the rescaled empirical distribution function.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::optim::nelder_mead;
use crate::special::{t_cdf, t_quantile};
use crate::stats::{mean, sorted, variance};

/// Upper bound on the degrees of freedom; beyond it the likelihood is flat.
pub const SKEW_T_DF_MAX: f64 = 500.0;
const SKEW_T_DF_MIN: f64 = 2.01;
/// Minimum series length for a parametric fit.
pub const MIN_MARGIN_OBS: usize = 30;

/// Location, scale, degrees of freedom and skewness of a Fernández–Steel
/// skew-t. `gamma = 1` is the symmetric Student-t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewTParams {
    pub mu: f64,
    pub sigma: f64,
    pub nu: f64,
    pub gamma: f64,
}

impl SkewTParams {
    pub fn new(mu: f64, sigma: f64, nu: f64, gamma: f64) -> Result<Self> {
        let ok = mu.is_finite() && sigma > 0.0 && sigma.is_finite() && nu > 2.0 && gamma > 0.0 && gamma.is_finite();
        if !ok {
            return Err(Error::domain(format!(
                "skew-t parameters out of domain: mu={mu}, sigma={sigma}, nu={nu}, gamma={gamma}"
            )));
        }
        Ok(SkewTParams { mu, sigma, nu, gamma })
    }

    /// Unconstrained coordinates `(mu, ln sigma, ln(nu − 2), ln gamma)`.
    pub fn to_unconstrained(&self) -> [f64; 4] {
        [self.mu, self.sigma.ln(), (self.nu - 2.0).ln(), self.gamma.ln()]
    }

    pub fn from_unconstrained(x: &[f64]) -> Self {
        SkewTParams {
            mu: x[0],
            sigma: x[1].exp(),
            nu: (2.0 + x[2].exp()).clamp(SKEW_T_DF_MIN, SKEW_T_DF_MAX),
            gamma: x[3].exp(),
        }
    }

    fn ln_norm(&self) -> f64 {
        let nu = self.nu;
        (2.0 / (self.gamma + 1.0 / self.gamma)).ln() - self.sigma.ln() + ln_gamma(0.5 * (nu + 1.0))
            - ln_gamma(0.5 * nu)
            - 0.5 * (nu * std::f64::consts::PI).ln()
    }

    fn ln_pdf_with(&self, x: f64, ln_norm: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        let s = if z < 0.0 { z * self.gamma } else { z / self.gamma };
        ln_norm - 0.5 * (self.nu + 1.0) * (s * s / self.nu).ln_1p()
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        self.ln_pdf_with(x, self.ln_norm())
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let g2 = self.gamma * self.gamma;
        let z = (x - self.mu) / self.sigma;
        if z < 0.0 {
            2.0 / (g2 + 1.0) * t_cdf(z * self.gamma, self.nu)
        } else {
            // 1 − 2γ²/(1+γ²)·P(T > z/γ), accurate in the upper tail
            1.0 - 2.0 * g2 / (1.0 + g2) * t_cdf(-z / self.gamma, self.nu)
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let g2 = self.gamma * self.gamma;
        let split = 1.0 / (1.0 + g2);
        let z = if u < split {
            t_quantile(u * (g2 + 1.0) / 2.0, self.nu) / self.gamma
        } else {
            -self.gamma * t_quantile((1.0 - u) * (1.0 + g2) / (2.0 * g2), self.nu)
        };
        self.mu + self.sigma * z
    }

    pub fn loglik(&self, x: &[f64]) -> f64 {
        let c = self.ln_norm();
        x.iter().map(|&v| self.ln_pdf_with(v, c)).sum()
    }

    /// Log-density of each observation.
    pub fn ln_pdf_each(&self, x: &[f64]) -> Vec<f64> {
        let c = self.ln_norm();
        x.iter().map(|&v| self.ln_pdf_with(v, c)).collect()
    }
}

/// Rescaled empirical distribution `G(x) = #{X_t ≤ x} / (T + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMargin {
    sample: Vec<f64>,
}

impl EmpiricalMargin {
    pub fn new(series: &[f64]) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::InsufficientData("empty series".into()));
        }
        if series.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("series contains non-finite values"));
        }
        Ok(EmpiricalMargin { sample: sorted(series) })
    }

    pub fn sorted_sample(&self) -> &[f64] {
        &self.sample
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let n = self.sample.len();
        let count = self.sample.partition_point(|&s| s <= x);
        count as f64 / (n + 1) as f64
    }

    /// Linear interpolation through `(k/(T+1), x_(k))`, constant beyond the
    /// smallest and largest order statistic.
    pub fn quantile(&self, u: f64) -> f64 {
        empirical_quantile(&self.sample, u)
    }
}

fn empirical_quantile(sample: &[f64], u: f64) -> f64 {
    let n = sample.len();
    let pos = u * (n + 1) as f64;
    if pos <= 1.0 {
        return sample[0];
    }
    if pos >= n as f64 {
        return sample[n - 1];
    }
    let k = pos.floor() as usize;
    let frac = pos - k as f64;
    sample[k - 1] + frac * (sample[k] - sample[k - 1])
}

/// A fitted marginal distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Margin {
    SkewT { parameters: SkewTParams },
    Empirical { sample: Vec<f64> },
}

impl Margin {
    pub fn skew_t(p: SkewTParams) -> Self {
        Margin::SkewT { parameters: p }
    }

    pub fn empirical(series: &[f64]) -> Result<Self> {
        Ok(Margin::Empirical {
            sample: EmpiricalMargin::new(series)?.sample,
        })
    }

    pub fn is_parametric(&self) -> bool {
        matches!(self, Margin::SkewT { .. })
    }

    pub fn n_params(&self) -> usize {
        if self.is_parametric() {
            4
        } else {
            0
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Margin::SkewT { parameters } => parameters.cdf(x),
            Margin::Empirical { sample } => {
                let n = sample.len();
                sample.partition_point(|&s| s <= x) as f64 / (n + 1) as f64
            }
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            Margin::SkewT { parameters } => parameters.quantile(u),
            Margin::Empirical { sample } => empirical_quantile(sample, u),
        }
    }

    /// Probability integral transform, clamped into the open unit interval.
    pub fn pit(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| crate::bicop::clamp_unit(self.cdf(v))).collect()
    }
}

/// Outcome of a parametric margin fit.
#[derive(Debug, Clone)]
pub struct MarginFit {
    pub params: SkewTParams,
    pub loglik: f64,
    pub start_loglik: f64,
    /// Set when the skew-t optimizer failed and a simpler model was used.
    pub fallback: Option<&'static str>,
}

fn validate_series(x: &[f64]) -> Result<(f64, f64)> {
    if x.len() < MIN_MARGIN_OBS {
        return Err(Error::InsufficientData(format!(
            "margin fit needs at least {MIN_MARGIN_OBS} observations, got {}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("series contains non-finite values"));
    }
    let m = mean(x);
    let sd = variance(x).sqrt();
    if !(sd > 1e-12 * (1.0 + m.abs())) {
        return Err(Error::domain("series has (numerically) zero variance"));
    }
    Ok((m, sd))
}

/// Maximum-likelihood skew-t fit by Nelder–Mead in unconstrained coordinates.
pub fn fit_margin_mle(x: &[f64]) -> Result<MarginFit> {
    let (m, sd) = validate_series(x)?;
    let s = sorted(x);
    let median = crate::stats::quantile_sorted(&s, 0.5);
    let nu0: f64 = 6.0;
    let start = SkewTParams::new(median, sd * ((nu0 - 2.0) / nu0).sqrt(), nu0, 1.0)?;
    let start_ll = start.loglik(x);
    let objective = |z: &[f64]| {
        let p = SkewTParams::from_unconstrained(z);
        let ll = p.loglik(x);
        if ll.is_finite() {
            -ll
        } else {
            f64::INFINITY
        }
    };
    let mut z = start.to_unconstrained().to_vec();
    let mut best = f64::INFINITY;
    let mut ok = false;
    for _ in 0..4 {
        let step = [0.1 * sd, 0.1, 0.5, 0.1];
        let r = nelder_mead(objective, &z, &step, 1e-10, 4000);
        let improved = best - r.value;
        if r.value.is_finite() && r.value <= best {
            z = r.x;
            best = r.value;
            ok = true;
        }
        if improved.abs() < 1e-7 {
            break;
        }
    }
    if ok && -best >= start_ll {
        return Ok(MarginFit {
            params: SkewTParams::from_unconstrained(&z),
            loglik: -best,
            start_loglik: start_ll,
            fallback: None,
        });
    }
    log::warn!("skew-t fit failed; falling back to a symmetric t");
    let sym = |z: &[f64]| {
        let p = SkewTParams::from_unconstrained(&[z[0], z[1], z[2], 0.0]);
        let ll = p.loglik(x);
        if ll.is_finite() {
            -ll
        } else {
            f64::INFINITY
        }
    };
    let r = nelder_mead(sym, &z[..3], &[0.1 * sd, 0.1, 0.5], 1e-10, 4000);
    if r.value.is_finite() && -r.value >= start_ll {
        return Ok(MarginFit {
            params: SkewTParams::from_unconstrained(&[r.x[0], r.x[1], r.x[2], 0.0]),
            loglik: -r.value,
            start_loglik: start_ll,
            fallback: Some("symmetric_t"),
        });
    }
    log::warn!("symmetric t fit failed; falling back to a normal margin");
    let normal = SkewTParams::new(m, sd, SKEW_T_DF_MAX, 1.0)?;
    Ok(MarginFit {
        params: normal,
        loglik: normal.loglik(x),
        start_loglik: start_ll,
        fallback: Some("normal"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, StudentT};

    /// Adaptive Simpson on (0,1) after mapping the real line through tan.
    fn integrate_line(f: &dyn Fn(f64) -> f64, center: f64, scale: f64) -> f64 {
        let g = |s: f64| {
            let th = std::f64::consts::PI * (s - 0.5);
            let c = th.cos();
            if c <= 0.0 {
                return 0.0;
            }
            f(center + scale * th.tan()) * scale * std::f64::consts::PI / (c * c)
        };
        fn simpson(g: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (g(lm), g(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
                return left + right + (left + right - whole) / 15.0;
            }
            simpson(g, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
                + simpson(g, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
        }
        let (a, b) = (1e-12, 1.0 - 1e-12);
        let (fa, fm, fb) = (g(a), g(0.5), g(b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        simpson(&g, a, b, fa, fm, fb, whole, 1e-10, 50)
    }

    #[test]
    fn density_integrates_to_one() {
        for &(nu, gamma) in &[(2.5, 0.7), (4.0, 1.0), (8.0, 1.4), (30.0, 2.0)] {
            let p = SkewTParams::new(0.3, 1.7, nu, gamma).unwrap();
            let total = integrate_line(&|x| p.pdf(x), p.mu, p.sigma);
            assert!((total - 1.0).abs() < 1e-6, "nu={nu} gamma={gamma}: {total}");
        }
    }

    #[test]
    fn cdf_matches_integrated_density() {
        let p = SkewTParams::new(-0.2, 0.8, 5.0, 1.3).unwrap();
        for &x in &[-2.0, -0.5, 0.0, 0.4, 1.5] {
            let lower = integrate_line(&|y| if y <= x { p.pdf(y) } else { 0.0 }, x, p.sigma);
            assert!((lower - p.cdf(x)).abs() < 1e-6, "x={x}");
        }
    }

    #[test]
    fn quantile_round_trip() {
        for &(nu, gamma) in &[(2.5, 0.6), (6.0, 1.0), (20.0, 1.8)] {
            let p = SkewTParams::new(1.0, 2.0, nu, gamma).unwrap();
            for i in 1..200 {
                let u = i as f64 / 200.0;
                assert!((p.cdf(p.quantile(u)) - u).abs() < 1e-8);
            }
            for &u in &[1e-9, 1e-6, 1.0 - 1e-6, 1.0 - 1e-9] {
                assert!((p.cdf(p.quantile(u)) - u).abs() < 1e-8);
            }
        }
        let sym = SkewTParams::new(0.0, 1.0, 400.0, 1.0).unwrap();
        assert!(sym.quantile(0.5).abs() < 1e-6);
    }

    #[test]
    fn empirical_rules() {
        let e = EmpiricalMargin::new(&[3.0, 1.0, 2.0]).unwrap();
        let m = Margin::empirical(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(m.pit(&[3.0, 1.0, 2.0]), vec![0.75, 0.25, 0.5]);
        assert_eq!(e.quantile(0.5), 2.0);
        assert_eq!(e.quantile(0.01), 1.0);
        assert_eq!(e.quantile(0.99), 3.0);
        assert!((e.quantile(0.625) - 2.5).abs() < 1e-15);
        let tied = Margin::empirical(&[1.0, 2.0, 2.0, 5.0]).unwrap();
        assert_eq!(tied.pit(&[2.0, 2.0]), vec![0.6, 0.6]);
        assert!(tied.pit(&[1.0, 2.0, 5.0]).iter().all(|&u| u > 0.0 && u < 1.0));
    }

    #[test]
    fn constant_series_is_rejected() {
        assert!(fit_margin_mle(&[1.5; 100]).is_err());
        assert!(fit_margin_mle(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn normal_sample_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let f = fit_margin_mle(&x).unwrap();
        assert!(f.loglik >= f.start_loglik);
        assert!(f.params.mu.abs() < 0.05, "{:?}", f.params);
        assert!((f.params.sigma - 1.0).abs() < 0.05, "{:?}", f.params);
        assert!((f.params.gamma - 1.0).abs() < 0.05, "{:?}", f.params);
    }

    #[test]
    fn student_sample_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = StudentT::new(5.0).unwrap();
        let x: Vec<f64> = (0..5000).map(|_| t.sample(&mut rng)).collect();
        let f = fit_margin_mle(&x).unwrap();
        assert!(f.params.nu > 3.5 && f.params.nu < 8.0, "{:?}", f.params);
        assert!(f.fallback.is_none());
    }

    #[test]
    fn json_tags() {
        let m = Margin::skew_t(SkewTParams::new(0.0, 1.0, 5.0, 1.2).unwrap());
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.starts_with(r#"{"type":"skew_t""#), "{s}");
        let e = Margin::empirical(&[2.0, 1.0]).unwrap();
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(s, r#"{"type":"empirical","sample":[1.0,2.0]}"#);
        assert_eq!(serde_json::from_str::<Margin>(&s).unwrap(), e);
    }
}
