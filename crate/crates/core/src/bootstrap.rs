//! Dependent multiplier bootstrap with a one-step Newton update.
//!
//! The step-wise estimator solves `Σ_t φ_t(η, θ) = 0`, where `φ_t` stacks
//! the marginal scores (parametric mode) and the score of every pair-copula
//! class at the translate ending at time `t`. A replicate reweights these
//! equations with serially dependent multipliers `ξ_t` and takes a single
//! Newton step from the point estimate, so no model is refitted.

use nalgebra::DMatrix;
use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bicop::BivariateCopula;
use crate::error::{Error, Result};
use crate::estimation::{propagate, MarginMode, SVineModel};
use crate::forecast::{evaluate_functionals, forecast, replicate_rng, ForecastRequest, FunctionalEstimate};
use crate::margins::{Margin, SkewTParams};
use crate::stats::{quantile_sorted, sorted};

/// Serially dependent multipliers with unit mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierStream {
    pub xi: Vec<f64>,
    pub block: usize,
}

/// Default block length `max(1, ⌊T^{1/3}⌋)`.
pub fn default_block(t_len: usize) -> usize {
    ((t_len as f64).cbrt().floor() as usize).max(1)
}

/// Triangular moving-average weights with unit sum of squares.
fn ma_weights(block: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..block).map(|j| (block - j) as f64).collect();
    let norm = raw.iter().map(|w| w * w).sum::<f64>().sqrt();
    raw.into_iter().map(|w| w / norm).collect()
}

/// `ξ_t = 1 + Σ_{j<ℓ} w_j Z_{t−j}` for iid standard normal `Z`.
pub fn gen_multipliers(t_len: usize, block: usize, seed: u64) -> Result<MultiplierStream> {
    if block == 0 || block >= t_len {
        return Err(Error::domain(format!(
            "block length {block} must satisfy 1 <= block < T = {t_len}"
        )));
    }
    let mut rng = replicate_rng(seed, 0);
    Ok(multipliers_from(t_len, block, &mut rng))
}

fn multipliers_from<R: rand::Rng + ?Sized>(t_len: usize, block: usize, rng: &mut R) -> MultiplierStream {
    let w = ma_weights(block);
    let z: Vec<f64> = (0..t_len + block - 1).map(|_| StandardNormal.sample(rng)).collect();
    let xi = (0..t_len)
        .map(|t| 1.0 + w.iter().enumerate().map(|(j, wj)| wj * z[t + block - 1 - j]).sum::<f64>())
        .collect();
    MultiplierStream { xi, block }
}

/// Position of every free parameter in the stacked vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub names: Vec<String>,
    /// Number of leading marginal parameters (4 per margin in parametric mode).
    pub n_margin: usize,
    /// `(class index, offset, count)` for classes with parameters.
    pub classes: Vec<(usize, usize, usize)>,
}

impl ParamLayout {
    pub fn of(model: &SVineModel) -> Self {
        let mut names = Vec::new();
        let parametric = parametric_margins(model).is_some();
        if parametric {
            for j in 1..=model.d() {
                for p in ["mu", "log_sigma", "log_nu_minus_2", "log_gamma"] {
                    names.push(format!("margin{j}.{p}"));
                }
            }
        }
        let n_margin = names.len();
        let mut classes = Vec::new();
        for (c, (class, cop)) in model.copulas().enumerate() {
            let k = cop.n_params();
            if k > 0 {
                classes.push((c, names.len(), k));
                for i in 0..k {
                    names.push(format!("{class}[{i}]"));
                }
            }
        }
        ParamLayout {
            names,
            n_margin,
            classes,
        }
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }
}

fn parametric_margins(model: &SVineModel) -> Option<Vec<SkewTParams>> {
    if model.mode() != MarginMode::Parametric {
        return None;
    }
    model
        .margins()?
        .iter()
        .map(|m| match m {
            Margin::SkewT { parameters } => Some(*parameters),
            Margin::Empirical { .. } => None,
        })
        .collect()
}

/// Stacked parameter vector of `model` in layout order.
pub fn param_vector(model: &SVineModel, layout: &ParamLayout) -> Vec<f64> {
    let mut v = Vec::with_capacity(layout.dim());
    if layout.n_margin > 0 {
        for p in parametric_margins(model).expect("layout has margins") {
            v.extend(p.to_unconstrained());
        }
    }
    for &(c, _, _) in &layout.classes {
        v.extend_from_slice(model.copula_list()[c].params());
    }
    v
}

/// Rebuilds a model from a stacked parameter vector; copula parameters are
/// clamped to their admissible boxes.
pub fn model_from_params(model: &SVineModel, layout: &ParamLayout, theta: &[f64]) -> Result<SVineModel> {
    if theta.len() != layout.dim() {
        return Err(Error::domain(format!(
            "parameter vector has length {}, layout needs {}",
            theta.len(),
            layout.dim()
        )));
    }
    let mut copulas = model.copula_list().to_vec();
    for &(c, off, k) in &layout.classes {
        copulas[c] = copulas[c].with_params_clamped(&theta[off..off + k]);
    }
    let mut out = model.with_copulas(copulas)?;
    if layout.n_margin > 0 {
        let margins = theta[..layout.n_margin]
            .chunks(4)
            .map(|c| Margin::skew_t(SkewTParams::from_unconstrained(c)))
            .collect();
        out = out.with_margins(margins, MarginMode::Parametric)?;
    }
    Ok(out)
}

fn step(x: f64) -> f64 {
    (1e-4 * x.abs()).max(1e-4)
}

/// Estimating-equation rows `φ_t`, shape `T × dim`.
fn score_rows(
    model: &SVineModel,
    layout: &ParamLayout,
    theta: &[f64],
    x: &Array2<f64>,
    fixed_u: Option<&Array2<f64>>,
) -> Result<Array2<f64>> {
    let t_len = x.nrows();
    let mut rows = Array2::zeros((t_len, layout.dim()));
    let u = if layout.n_margin > 0 {
        let mut u = Array2::zeros(x.raw_dim());
        for (j, eta) in theta[..layout.n_margin].chunks(4).enumerate() {
            let col: Vec<f64> = x.column(j).to_vec();
            let st = SkewTParams::from_unconstrained(eta);
            for (t, &xt) in col.iter().enumerate() {
                u[[t, j]] = crate::bicop::clamp_unit(st.cdf(xt));
            }
            for i in 0..4 {
                let h = step(eta[i]);
                let mut up = eta.to_vec();
                up[i] += h;
                let mut dn = eta.to_vec();
                dn[i] -= h;
                let (pu, pd) = (SkewTParams::from_unconstrained(&up), SkewTParams::from_unconstrained(&dn));
                for (t, &xt) in col.iter().enumerate() {
                    rows[[t, 4 * j + i]] = (pu.ln_pdf(xt) - pd.ln_pdf(xt)) / (2.0 * h);
                }
            }
        }
        u
    } else {
        match fixed_u {
            Some(u) => u.clone(),
            None => crate::estimation::transform(x, model.margins().ok_or_else(|| {
                Error::domain("model without margins needs copula-scale data")
            })?)?,
        }
    };
    let plan = model.plan();
    let mut copulas = model.copula_list().to_vec();
    for &(c, off, k) in &layout.classes {
        copulas[c] = copulas[c].with_params_clamped(&theta[off..off + k]);
    }
    let prop = propagate(plan, &copulas, &u)?;
    for &(c, off, k) in &layout.classes {
        let (a, b) = plan.inputs(c, &u, &prop.h);
        let span = plan.classes()[c].span;
        let base = copulas[c].params().to_vec();
        for i in 0..k {
            let h = step(base[i]);
            let mut up = base.clone();
            up[i] += h;
            let mut dn = base.clone();
            dn[i] -= h;
            let cu = copulas[c].with_params_clamped(&up);
            let cd = copulas[c].with_params_clamped(&dn);
            let width = cu.params()[i] - cd.params()[i];
            if width <= 0.0 {
                continue;
            }
            for s in 0..a.len() {
                rows[[s + span, off + i]] = (cu.ln_pdf(a[s], b[s]) - cd.ln_pdf(a[s], b[s])) / width;
            }
        }
    }
    Ok(rows)
}

/// Scores at the point estimate and the averaged Jacobian of their sum.
#[derive(Debug, Clone)]
pub struct ScoreJacobian {
    pub layout: ParamLayout,
    pub estimate: Vec<f64>,
    /// `T × dim` rows `φ_t`.
    pub scores: Array2<f64>,
    /// `T^{-1} ∂ Σ_t φ_t / ∂(η, θ)`.
    pub jacobian: Array2<f64>,
    /// A ridge term was added because the Jacobian was singular.
    pub ridged: bool,
    inverse: DMatrix<f64>,
}

impl ScoreJacobian {
    /// Column sums of the score rows.
    pub fn score_sums(&self) -> Vec<f64> {
        self.scores.columns().into_iter().map(|c| c.sum()).collect()
    }

    /// `θ̂ − Ĵ^{-1} T^{-1} Σ_t ξ_t φ_t`.
    pub fn newton_step(&self, xi: &[f64], scores: &Array2<f64>) -> Vec<f64> {
        let t_len = scores.nrows() as f64;
        let dim = self.layout.dim();
        let g = nalgebra::DVector::from_iterator(
            dim,
            (0..dim).map(|k| scores.column(k).iter().zip(xi).map(|(s, x)| s * x).sum::<f64>() / t_len),
        );
        let delta = &self.inverse * g;
        self.estimate.iter().zip(delta.iter()).map(|(t, d)| t - d).collect()
    }
}

/// Computes `φ_t` and `Ĵ` by central finite differences.
///
/// `x` is on the data scale when the model has margins and on the copula
/// scale otherwise.
pub fn score_and_jacobian(model: &SVineModel, x: &Array2<f64>) -> Result<ScoreJacobian> {
    let layout = ParamLayout::of(model);
    let theta = param_vector(model, &layout);
    let fixed_u = if model.margins().is_none() {
        Some(crate::estimation::PseudoSample::new(x.clone(), model.mode())?.data().clone())
    } else {
        None
    };
    let scores = score_rows(model, &layout, &theta, x, fixed_u.as_ref())?;
    let dim = layout.dim();
    let t_len = x.nrows() as f64;
    let sums = |th: &[f64]| -> Result<Vec<f64>> {
        let r = score_rows(model, &layout, th, x, fixed_u.as_ref())?;
        Ok(r.columns().into_iter().map(|c| c.sum()).collect())
    };
    let cols: Vec<Vec<f64>> = (0..dim)
        .into_par_iter()
        .map(|k| {
            let h = step(theta[k]);
            let mut up = theta.clone();
            up[k] += h;
            let mut dn = theta.clone();
            dn[k] -= h;
            let (su, sd) = (sums(&up)?, sums(&dn)?);
            Ok(su.iter().zip(&sd).map(|(a, b)| (a - b) / (2.0 * h * t_len)).collect())
        })
        .collect::<Result<_>>()?;
    let mut jac = Array2::zeros((dim, dim));
    for (k, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            jac[[i, k]] = *v;
        }
    }
    let mut m = DMatrix::from_fn(dim, dim, |i, j| jac[[i, j]]);
    let mut ridged = false;
    let inverse = match m.clone().try_inverse().filter(|inv| inv.iter().all(|v| v.is_finite())) {
        Some(inv) if dim == 0 || well_conditioned(&m) => inv,
        _ => {
            let tr = m.trace();
            let lambda = 1e-6 * tr.abs().max(1e-12) / dim.max(1) as f64 * if tr < 0.0 { -1.0 } else { 1.0 };
            for i in 0..dim {
                m[(i, i)] += lambda;
            }
            ridged = true;
            log::warn!("singular Jacobian; added ridge {lambda:e}");
            m.try_inverse()
                .ok_or_else(|| Error::numerical("inverting the Jacobian", "singular after ridge"))?
        }
    };
    Ok(ScoreJacobian {
        layout,
        estimate: theta,
        scores,
        jacobian: jac,
        ridged,
        inverse,
    })
}

fn well_conditioned(m: &DMatrix<f64>) -> bool {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    max > 0.0 && min / max > 1e-12
}

/// One bootstrap draw of the stacked parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReplicate {
    pub params: Vec<f64>,
    /// Margins rebuilt from the multipliers (semiparametric mode only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margins: Option<Vec<Vec<f64>>>,
    pub replicate: u64,
}

/// Multiplier-weighted empirical PIT, `Σ_t (ξ_t − ξ̄ + 1) 1{X_t ≤ x} / (T + 1)`,
/// clamped to `[1/(T+1), T/(T+1)]`.
pub fn weighted_pit(x: &Array2<f64>, xi: &[f64]) -> Array2<f64> {
    let t_len = x.nrows();
    let denom = (t_len + 1) as f64;
    let shift = 1.0 - xi.iter().sum::<f64>() / t_len.max(1) as f64;
    let (lo, hi) = (1.0 / denom, t_len as f64 / denom);
    let mut u = Array2::zeros(x.raw_dim());
    for j in 0..x.ncols() {
        let col: Vec<f64> = x.column(j).to_vec();
        let mut idx: Vec<usize> = (0..t_len).collect();
        idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
        let mut acc = 0.0;
        let mut i = 0;
        while i < t_len {
            let mut k = i;
            while k < t_len && col[idx[k]] == col[idx[i]] {
                acc += xi[idx[k]] + shift;
                k += 1;
            }
            let v = (acc / denom).clamp(lo, hi);
            for &t in &idx[i..k] {
                u[[t, j]] = v;
            }
            i = k;
        }
    }
    u
}

/// Parameter replicates by the one-step multiplier update.
///
/// In semiparametric mode the pseudo-observations of each replicate come
/// from the multiplier-weighted empirical margins, and the scores are
/// re-evaluated there with the Jacobian held fixed.
pub fn bootstrap_params(
    model: &SVineModel,
    x: &Array2<f64>,
    n_rep: usize,
    block: usize,
    seed: u64,
) -> Result<(ScoreJacobian, Vec<BootstrapReplicate>)> {
    let sj = score_and_jacobian(model, x)?;
    let reps = replicates_with(&sj, model, x, n_rep, block, seed)?;
    Ok((sj, reps))
}

/// Replicates from an already computed score/Jacobian pair.
pub fn replicates_with(
    sj: &ScoreJacobian,
    model: &SVineModel,
    x: &Array2<f64>,
    n_rep: usize,
    block: usize,
    seed: u64,
) -> Result<Vec<BootstrapReplicate>> {
    let t_len = x.nrows();
    if n_rep == 0 {
        return Ok(Vec::new());
    }
    if block == 0 || block >= t_len {
        return Err(Error::domain(format!(
            "block length {block} must satisfy 1 <= block < T = {t_len}"
        )));
    }
    let semipar = model.mode() == MarginMode::Semiparametric && model.margins().is_some();
    (0..n_rep as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r);
            let xi = multipliers_from(t_len, block, &mut rng).xi;
            if semipar {
                let u = weighted_pit(x, &xi);
                let rows = score_rows(model, &sj.layout, &sj.estimate, x, Some(&u))?;
                Ok(BootstrapReplicate {
                    params: sj.newton_step(&xi, &rows),
                    margins: Some(u.columns().into_iter().map(|c| c.to_vec()).collect()),
                    replicate: r,
                })
            } else {
                Ok(BootstrapReplicate {
                    params: sj.newton_step(&xi, &sj.scores),
                    margins: None,
                    replicate: r,
                })
            }
        })
        .collect()
}

/// CSV with one row per replicate and one column per parameter.
pub fn replicates_csv(layout: &ParamLayout, reps: &[BootstrapReplicate]) -> String {
    let mut s = String::from("replicate");
    for n in &layout.names {
        s.push(',');
        s.push('"');
        s.push_str(n);
        s.push('"');
    }
    s.push('\n');
    for r in reps {
        s.push_str(&r.replicate.to_string());
        for v in &r.params {
            s.push(',');
            s.push_str(&format!("{v}"));
        }
        s.push('\n');
    }
    s
}

/// Per-column intervals of each functional across bootstrapped models.
pub fn bootstrap_forecast(
    model: &SVineModel,
    x: &Array2<f64>,
    req: &ForecastRequest,
    n_rep: usize,
    block: usize,
    seed: u64,
    levels: &[f64],
) -> Result<Vec<FunctionalEstimate>> {
    if let Some(l) = levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        return Err(Error::domain(format!("band level {l} outside (0, 1)")));
    }
    let point = forecast(model, req)?;
    let (sj, reps) = bootstrap_params(model, x, n_rep, block, seed)?;
    let per_rep: Vec<Vec<FunctionalEstimate>> = reps
        .iter()
        .map(|r| {
            let m = model_from_params(model, &sj.layout, &r.params)?;
            let sub = ForecastRequest {
                seed: req.seed ^ (r.replicate.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                ..req.clone()
            };
            let sims = crate::forecast::simulate_conditional(&m, &sub.history, sub.horizon, sub.n_sims, sub.seed)?;
            evaluate_functionals(&sims, &req.functionals)
        })
        .collect::<Result<_>>()?;
    let mut out = point.estimates;
    for (fi, est) in out.iter_mut().enumerate() {
        est.bands = (0..est.values.len())
            .map(|col| {
                let vals: Vec<f64> = per_rep.iter().map(|e| e[fi].values[col]).collect();
                bands(&vals, levels)
            })
            .collect();
    }
    Ok(out)
}

/// Equal-tailed empirical intervals `(level, lower, upper)`.
pub fn bands(values: &[f64], levels: &[f64]) -> Vec<(f64, f64, f64)> {
    if values.is_empty() {
        return Vec::new();
    }
    let s = sorted(values);
    levels
        .iter()
        .map(|&l| {
            let a = (1.0 - l) / 2.0;
            (l, quantile_sorted(&s, a), quantile_sorted(&s, 1.0 - a))
        })
        .collect()
}

/// Copulas with parameters taken from `params` (layout order).
pub fn copulas_from(model: &SVineModel, layout: &ParamLayout, params: &[f64]) -> Vec<BivariateCopula> {
    let mut copulas = model.copula_list().to_vec();
    for &(c, off, k) in &layout.classes {
        copulas[c] = copulas[c].with_params_clamped(&params[off..off + k]);
    }
    copulas
}
