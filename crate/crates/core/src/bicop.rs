//! Bivariate parametric copula families.
//!
//! Every family is evaluated through an exchangeable base copula `C0`; the
//! rotated versions are
//!
//! * 90°:  `C(u, v) = v - C0(1 - u, v)`
//! * 180°: `C(u, v) = u + v - 1 + C0(1 - u, 1 - v)`
//! * 270°: `C(u, v) = u - C0(u, 1 - v)`
//!
//! Two conditional distributions are exposed: [`BivariateCopula::h_given_v`]
//! is `∂C/∂v = P(U ≤ u | V = v)` and [`BivariateCopula::h_given_u`] is
//! `∂C/∂u = P(V ≤ v | U = u)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::optim::{bisect, brent_minimize};
use crate::special::{gauss_legendre, norm_cdf, norm_quantile, t_cdf, t_quantile};
use crate::stats::kendall_tau;

/// Arguments are clamped into `[CLAMP_EPS, 1 - CLAMP_EPS]` before evaluation.
pub const CLAMP_EPS: f64 = 1e-10;

#[inline]
pub fn clamp_unit(u: f64) -> f64 {
    u.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Independence,
    Gaussian,
    StudentT,
    Clayton,
    Gumbel,
    Frank,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Independence,
        Family::Gaussian,
        Family::StudentT,
        Family::Clayton,
        Family::Gumbel,
        Family::Frank,
    ];

    pub fn n_params(self) -> usize {
        match self {
            Family::Independence => 0,
            Family::StudentT => 2,
            _ => 1,
        }
    }

    /// Only the Archimedean families without reflection symmetry are rotated.
    pub fn rotatable(self) -> bool {
        matches!(self, Family::Clayton | Family::Gumbel)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Independence => "independence",
            Family::Gaussian => "gaussian",
            Family::StudentT => "student_t",
            Family::Clayton => "clayton",
            Family::Gumbel => "gumbel",
            Family::Frank => "frank",
        }
    }
}

/// A family together with its rotation in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FamilyTag {
    pub family: Family,
    pub rotation: u16,
}

impl FamilyTag {
    pub fn new(family: Family, rotation: u16) -> Result<Self> {
        if !matches!(rotation, 0 | 90 | 180 | 270) {
            return Err(Error::domain(format!("rotation {rotation} not in {{0,90,180,270}}")));
        }
        if rotation != 0 && !family.rotatable() {
            return Err(Error::domain(format!(
                "{} does not take a rotation",
                family.name()
            )));
        }
        Ok(FamilyTag { family, rotation })
    }

    pub const fn plain(family: Family) -> Self {
        FamilyTag {
            family,
            rotation: 0,
        }
    }

    /// Independence, Gaussian, Student-t, Frank and all rotations of Clayton and Gumbel.
    pub fn default_menu() -> Vec<FamilyTag> {
        let mut menu = vec![
            FamilyTag::plain(Family::Independence),
            FamilyTag::plain(Family::Gaussian),
            FamilyTag::plain(Family::StudentT),
        ];
        for fam in [Family::Clayton, Family::Gumbel] {
            for rot in [0, 90, 180, 270] {
                menu.push(FamilyTag {
                    family: fam,
                    rotation: rot,
                });
            }
        }
        menu.push(FamilyTag::plain(Family::Frank));
        menu
    }

    /// Parses names such as `gaussian`, `t`, `clayton`, `gumbel180`, `clayton_270`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace(['-', '_'], "");
        let split = s.find(|c: char| c.is_ascii_digit()).unwrap_or(s.len());
        let (name, rot) = s.split_at(split);
        let family = match name {
            "indep" | "independence" | "independent" => Family::Independence,
            "gaussian" | "normal" | "gauss" => Family::Gaussian,
            "t" | "studentt" | "student" => Family::StudentT,
            "clayton" => Family::Clayton,
            "gumbel" => Family::Gumbel,
            "frank" => Family::Frank,
            _ => return Err(Error::domain(format!("unknown copula family '{s}'"))),
        };
        let rotation = if rot.is_empty() {
            0
        } else {
            rot.parse::<u16>()
                .map_err(|_| Error::domain(format!("bad rotation in '{s}'")))?
        };
        FamilyTag::new(family, rotation)
    }
}

impl fmt::Display for FamilyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.rotation == 0 {
            write!(f, "{}", self.family.name())
        } else {
            write!(f, "{}_{}", self.family.name(), self.rotation)
        }
    }
}

/// A parametric pair-copula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCopula", into = "RawCopula")]
pub struct BivariateCopula {
    tag: FamilyTag,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawCopula {
    family: Family,
    #[serde(default)]
    rotation: u16,
    #[serde(default)]
    parameters: Vec<f64>,
}

impl TryFrom<RawCopula> for BivariateCopula {
    type Error = Error;
    fn try_from(raw: RawCopula) -> Result<Self> {
        BivariateCopula::new(FamilyTag::new(raw.family, raw.rotation)?, raw.parameters)
    }
}

impl From<BivariateCopula> for RawCopula {
    fn from(c: BivariateCopula) -> Self {
        RawCopula {
            family: c.tag.family,
            rotation: c.tag.rotation,
            parameters: c.params,
        }
    }
}

/// Admissible parameter ranges used by the optimizer.
const GAUSS_RHO_MAX: f64 = 0.999;
const T_RHO_MAX: f64 = 0.995;
const T_DF_MIN: f64 = 2.05;
const T_DF_MAX: f64 = 50.0;
const CLAYTON_MAX: f64 = 28.0;
const GUMBEL_MAX: f64 = 17.0;
const FRANK_MAX: f64 = 35.0;
/// Frank parameters this close to zero are evaluated as independence.
const FRANK_ZERO: f64 = 1e-8;

impl BivariateCopula {
    pub fn new(tag: FamilyTag, params: Vec<f64>) -> Result<Self> {
        let tag = FamilyTag::new(tag.family, tag.rotation)?;
        if params.len() != tag.family.n_params() {
            return Err(Error::domain(format!(
                "{} expects {} parameter(s), got {}",
                tag.family.name(),
                tag.family.n_params(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::domain("non-finite copula parameter"));
        }
        let ok = match tag.family {
            Family::Independence => true,
            Family::Gaussian => params[0].abs() < 1.0,
            Family::StudentT => params[0].abs() < 1.0 && params[1] > 2.0,
            Family::Clayton => params[0] > 0.0,
            Family::Gumbel => params[0] >= 1.0,
            Family::Frank => params[0] != 0.0,
        };
        if !ok {
            return Err(Error::domain(format!(
                "parameters {params:?} outside the {} domain",
                tag.family.name()
            )));
        }
        Ok(BivariateCopula { tag, params })
    }

    pub fn independence() -> Self {
        BivariateCopula {
            tag: FamilyTag::plain(Family::Independence),
            params: Vec::new(),
        }
    }

    pub fn gaussian(rho: f64) -> Result<Self> {
        Self::new(FamilyTag::plain(Family::Gaussian), vec![rho])
    }

    pub fn student_t(rho: f64, df: f64) -> Result<Self> {
        Self::new(FamilyTag::plain(Family::StudentT), vec![rho, df])
    }

    pub fn clayton(theta: f64, rotation: u16) -> Result<Self> {
        Self::new(FamilyTag::new(Family::Clayton, rotation)?, vec![theta])
    }

    pub fn gumbel(theta: f64, rotation: u16) -> Result<Self> {
        Self::new(FamilyTag::new(Family::Gumbel, rotation)?, vec![theta])
    }

    pub fn frank(theta: f64) -> Result<Self> {
        Self::new(FamilyTag::plain(Family::Frank), vec![theta])
    }

    pub fn tag(&self) -> FamilyTag {
        self.tag
    }

    pub fn family(&self) -> Family {
        self.tag.family
    }

    pub fn rotation(&self) -> u16 {
        self.tag.rotation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn is_independence(&self) -> bool {
        self.tag.family == Family::Independence
    }

    /// Same family with new parameters, clamped into the optimizer's box.
    ///
    /// Used by numerical differentiation and the bootstrap, where a perturbed
    /// parameter may step slightly outside the domain.
    pub fn with_params_clamped(&self, params: &[f64]) -> Self {
        let mut p = params.to_vec();
        let (lo, hi) = param_box(self.tag.family);
        for (i, x) in p.iter_mut().enumerate() {
            *x = x.clamp(lo[i], hi[i]);
        }
        if self.tag.family == Family::Frank && p[0].abs() < FRANK_ZERO {
            p[0] = FRANK_ZERO.copysign(if p[0] == 0.0 { 1.0 } else { p[0] });
        }
        BivariateCopula {
            tag: self.tag,
            params: p,
        }
    }

    // ---- base (unrotated) evaluations -------------------------------------

    fn base_ln_pdf(&self, u: f64, v: f64) -> f64 {
        let p = &self.params;
        match self.tag.family {
            Family::Independence => 0.0,
            Family::Gaussian => gauss_ln_pdf(norm_quantile(u), norm_quantile(v), p[0]),
            Family::StudentT => {
                let (rho, df) = (p[0], p[1]);
                t_ln_pdf_scores(t_quantile(u, df), t_quantile(v, df), rho, df, t_ln_const(df))
            }
            Family::Clayton => {
                let th = p[0];
                let (lu, lv) = (u.ln(), v.ln());
                let a = clayton_sum(lu, lv, th);
                (1.0 + th).ln() - (1.0 + th) * (lu + lv) - (2.0 + 1.0 / th) * a.ln()
            }
            Family::Gumbel => {
                let th = p[0];
                let (x, y) = (-u.ln(), -v.ln());
                let (lx, ly) = (x.ln(), y.ln());
                let la = gumbel_ln_a(lx, ly, th);
                let a = la.exp();
                -a - u.ln() - v.ln() + (th - 1.0) * (lx + ly) + (1.0 - 2.0 * th) * la
                    + (a + th - 1.0).ln()
            }
            Family::Frank => {
                let th = p[0];
                if th.abs() < FRANK_ZERO {
                    return 0.0;
                }
                let g1 = -(-th).exp_m1();
                let gu = -(-th * u).exp_m1();
                let gv = -(-th * v).exp_m1();
                let den = g1 - gu * gv;
                (th * g1).ln() - th * (u + v) - 2.0 * den.abs().ln()
            }
        }
    }

    /// `∂C0(u, v)/∂v` for the exchangeable base copula.
    fn base_h(&self, u: f64, v: f64) -> f64 {
        let p = &self.params;
        match self.tag.family {
            Family::Independence => u,
            Family::Gaussian => {
                let rho = p[0];
                norm_cdf((norm_quantile(u) - rho * norm_quantile(v)) / (1.0 - rho * rho).sqrt())
            }
            Family::StudentT => {
                let (rho, df) = (p[0], p[1]);
                let x = t_quantile(u, df);
                let y = t_quantile(v, df);
                let scale = ((df + y * y) * (1.0 - rho * rho) / (df + 1.0)).sqrt();
                t_cdf((x - rho * y) / scale, df + 1.0)
            }
            Family::Clayton => {
                let th = p[0];
                let (lu, lv) = (u.ln(), v.ln());
                let a = clayton_sum(lu, lv, th);
                (-(th + 1.0) * lv - (1.0 + 1.0 / th) * a.ln()).exp()
            }
            Family::Gumbel => {
                let th = p[0];
                let (x, y) = (-u.ln(), -v.ln());
                let la = gumbel_ln_a(x.ln(), y.ln(), th);
                // C * A^{1-θ} * y^{θ-1} / v
                (-la.exp() + (1.0 - th) * la + (th - 1.0) * y.ln() + y).exp()
            }
            Family::Frank => {
                let th = p[0];
                if th.abs() < FRANK_ZERO {
                    return u;
                }
                let gu = (-th * u).exp_m1();
                let gv = (-th * v).exp_m1();
                let g1 = (-th).exp_m1();
                (-th * v).exp() * gu / (g1 + gu * gv)
            }
        }
    }

    /// Solves `base_h(u, v) = w` for `u`.
    fn base_hinv(&self, w: f64, v: f64) -> Result<f64> {
        let p = &self.params;
        let u = match self.tag.family {
            Family::Independence => w,
            Family::Gaussian => {
                let rho = p[0];
                norm_cdf(norm_quantile(w) * (1.0 - rho * rho).sqrt() + rho * norm_quantile(v))
            }
            Family::StudentT => {
                let (rho, df) = (p[0], p[1]);
                let y = t_quantile(v, df);
                let scale = ((df + y * y) * (1.0 - rho * rho) / (df + 1.0)).sqrt();
                t_cdf(t_quantile(w, df + 1.0) * scale + rho * y, df)
            }
            Family::Clayton => {
                let th = p[0];
                let lv = v.ln();
                let b = (-th / (1.0 + th) * (w.ln() + (th + 1.0) * lv)).exp() - (-th * lv).exp_m1();
                if b.is_finite() && b > 0.0 {
                    (-b.ln() / th).exp()
                } else {
                    return self.base_hinv_numeric(w, v);
                }
            }
            Family::Gumbel => return self.base_hinv_numeric(w, v),
            Family::Frank => {
                let th = p[0];
                if th.abs() < FRANK_ZERO {
                    return Ok(w);
                }
                let g1 = (-th).exp_m1();
                let a = w * g1 / (w + (1.0 - w) * (-th * v).exp());
                -a.ln_1p() / th
            }
        };
        if u.is_finite() {
            Ok(u.clamp(0.0, 1.0))
        } else {
            self.base_hinv_numeric(w, v)
        }
    }

    /// Safeguarded Newton iteration on the monotone map `u ↦ base_h(u, v)`.
    fn base_hinv_numeric(&self, w: f64, v: f64) -> Result<f64> {
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        let mut u = w;
        for _ in 0..300 {
            let uc = u.clamp(1e-300, 1.0 - 1e-16);
            let h = self.base_h(uc, v);
            let diff = h - w;
            if diff.abs() <= 1e-15 {
                return Ok(uc);
            }
            if diff > 0.0 {
                hi = uc;
            } else {
                lo = uc;
            }
            if hi - lo <= 1e-17 + 1e-15 * lo {
                return Ok(0.5 * (lo + hi));
            }
            let dens = self.base_ln_pdf(uc, v).exp();
            let mut next = uc - diff / dens;
            if !next.is_finite() || next <= lo || next >= hi {
                // geometric bisection keeps tiny roots well resolved
                next = if lo > 0.0 { (lo * hi).sqrt().max(0.5 * (lo + hi) * 1e-3) } else { 0.5 * hi };
                if next <= lo || next >= hi {
                    next = 0.5 * (lo + hi);
                }
            }
            u = next;
        }
        Err(Error::numerical(
            format!("hinv of {}", self.tag),
            format!("no convergence for w={w}, v={v}, params={:?}; bracket [{lo}, {hi}]", self.params),
        ))
    }

    // ---- public rotated evaluations ---------------------------------------

    pub fn ln_pdf(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clamp_unit(u), clamp_unit(v));
        match self.tag.rotation {
            90 => self.base_ln_pdf(1.0 - u, v),
            180 => self.base_ln_pdf(1.0 - u, 1.0 - v),
            270 => self.base_ln_pdf(u, 1.0 - v),
            _ => self.base_ln_pdf(u, v),
        }
    }

    pub fn pdf(&self, u: f64, v: f64) -> f64 {
        self.ln_pdf(u, v).exp()
    }

    /// `P(U ≤ u | V = v) = ∂C(u, v)/∂v`.
    pub fn h_given_v(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clamp_unit(u), clamp_unit(v));
        let h = match self.tag.rotation {
            90 => 1.0 - self.base_h(1.0 - u, v),
            180 => 1.0 - self.base_h(1.0 - u, 1.0 - v),
            270 => self.base_h(u, 1.0 - v),
            _ => self.base_h(u, v),
        };
        clamp_unit(h)
    }

    /// `P(V ≤ v | U = u) = ∂C(u, v)/∂u`.
    pub fn h_given_u(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clamp_unit(u), clamp_unit(v));
        let h = match self.tag.rotation {
            90 => self.base_h(v, 1.0 - u),
            180 => 1.0 - self.base_h(1.0 - v, 1.0 - u),
            270 => 1.0 - self.base_h(1.0 - v, u),
            _ => self.base_h(v, u),
        };
        clamp_unit(h)
    }

    /// Inverse of [`h_given_v`](Self::h_given_v) in `u`.
    pub fn hinv_given_v(&self, w: f64, v: f64) -> Result<f64> {
        let (w, v) = (clamp_unit(w), clamp_unit(v));
        let u = match self.tag.rotation {
            90 => 1.0 - self.base_hinv(1.0 - w, v)?,
            180 => 1.0 - self.base_hinv(1.0 - w, 1.0 - v)?,
            270 => self.base_hinv(w, 1.0 - v)?,
            _ => self.base_hinv(w, v)?,
        };
        Ok(clamp_unit(u))
    }

    /// Inverse of [`h_given_u`](Self::h_given_u) in `v`.
    pub fn hinv_given_u(&self, w: f64, u: f64) -> Result<f64> {
        let (w, u) = (clamp_unit(w), clamp_unit(u));
        let v = match self.tag.rotation {
            90 => self.base_hinv(w, 1.0 - u)?,
            180 => 1.0 - self.base_hinv(1.0 - w, 1.0 - u)?,
            270 => 1.0 - self.base_hinv(1.0 - w, u)?,
            _ => self.base_hinv(w, u)?,
        };
        Ok(clamp_unit(v))
    }

    pub fn kendall_tau(&self) -> f64 {
        let base = tau_of_base(self.tag.family, &self.params);
        match self.tag.rotation {
            90 | 270 => -base,
            _ => base,
        }
    }

    /// Draws `n` pairs by conditional inversion.
    pub fn simulate<R: rand::Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut us = Vec::with_capacity(n);
        let mut vs = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random();
            let w: f64 = rng.random();
            us.push(clamp_unit(u));
            vs.push(self.hinv_given_u(w, u)?);
        }
        Ok((us, vs))
    }
}

// ---- family helpers -------------------------------------------------------

fn gauss_ln_pdf(x: f64, y: f64, rho: f64) -> f64 {
    let r2 = rho * rho;
    -0.5 * (1.0 - r2).ln() - (r2 * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * (1.0 - r2))
}

fn t_ln_const(df: f64) -> f64 {
    ln_gamma(0.5 * (df + 2.0)) + ln_gamma(0.5 * df) - 2.0 * ln_gamma(0.5 * (df + 1.0))
}

fn t_ln_pdf_scores(x: f64, y: f64, rho: f64, df: f64, ln_const: f64) -> f64 {
    let r2 = 1.0 - rho * rho;
    let q = (x * x + y * y - 2.0 * rho * x * y) / (df * r2);
    ln_const - 0.5 * r2.ln() - 0.5 * (df + 2.0) * q.ln_1p()
        + 0.5 * (df + 1.0) * ((x * x / df).ln_1p() + (y * y / df).ln_1p())
}

/// `u^{-θ} + v^{-θ} - 1` from logs, without overflow for moderate θ.
fn clayton_sum(lu: f64, lv: f64, th: f64) -> f64 {
    (-th * lu).exp() + (-th * lv).exp_m1()
}

/// `ln (x^θ + y^θ)^{1/θ}` given `ln x`, `ln y`.
fn gumbel_ln_a(lx: f64, ly: f64, th: f64) -> f64 {
    let (a, b) = (th * lx, th * ly);
    let m = a.max(b);
    (m + ((a - m).exp() + (b - m).exp()).ln()) / th
}

fn tau_of_base(family: Family, p: &[f64]) -> f64 {
    match family {
        Family::Independence => 0.0,
        Family::Gaussian | Family::StudentT => 2.0 / PI * p[0].asin(),
        Family::Clayton => p[0] / (p[0] + 2.0),
        Family::Gumbel => 1.0 - 1.0 / p[0],
        Family::Frank => frank_tau(p[0]),
    }
}

/// Debye function `D1(x) = (1/x) ∫_0^x t / (e^t - 1) dt` for `x > 0`.
fn debye1(x: f64) -> f64 {
    let (nodes, weights) = gauss_legendre(64, 0.0, x);
    let s: f64 = nodes
        .iter()
        .zip(&weights)
        .map(|(&t, &w)| if t == 0.0 { w } else { w * t / t.exp_m1() })
        .sum();
    s / x
}

fn frank_tau(th: f64) -> f64 {
    if th.abs() < 1e-6 {
        return th / 9.0;
    }
    let a = th.abs();
    let tau = 1.0 - 4.0 / a * (1.0 - debye1(a));
    tau.copysign(th)
}

fn param_box(family: Family) -> (Vec<f64>, Vec<f64>) {
    match family {
        Family::Independence => (vec![], vec![]),
        Family::Gaussian => (vec![-GAUSS_RHO_MAX], vec![GAUSS_RHO_MAX]),
        Family::StudentT => (vec![-T_RHO_MAX, T_DF_MIN], vec![T_RHO_MAX, T_DF_MAX]),
        Family::Clayton => (vec![1e-4], vec![CLAYTON_MAX]),
        Family::Gumbel => (vec![1.0], vec![GUMBEL_MAX]),
        Family::Frank => (vec![-FRANK_MAX], vec![FRANK_MAX]),
    }
}

/// Parameter of the base family with Kendall's tau equal to `tau`, clamped
/// into the admissible box. Returns an empty vector for independence and
/// `[ρ, ν]` with a provisional ν for the t copula.
pub fn tau_inversion(tag: FamilyTag, tau: f64) -> Vec<f64> {
    let tau_base = match tag.rotation {
        90 | 270 => -tau,
        _ => tau,
    };
    let t = tau_base.clamp(-0.99, 0.99);
    match tag.family {
        Family::Independence => vec![],
        Family::Gaussian => vec![(PI * t / 2.0).sin().clamp(-GAUSS_RHO_MAX, GAUSS_RHO_MAX)],
        Family::StudentT => vec![(PI * t / 2.0).sin().clamp(-T_RHO_MAX, T_RHO_MAX), 6.0],
        Family::Clayton => vec![(2.0 * t / (1.0 - t)).clamp(1e-4, CLAYTON_MAX)],
        Family::Gumbel => vec![(1.0 / (1.0 - t.max(0.0))).clamp(1.0, GUMBEL_MAX)],
        Family::Frank => {
            let lo_tau = frank_tau(-FRANK_MAX);
            let hi_tau = frank_tau(FRANK_MAX);
            let th = if t <= lo_tau {
                -FRANK_MAX
            } else if t >= hi_tau {
                FRANK_MAX
            } else if t.abs() < 1e-9 {
                FRANK_ZERO * 10.0
            } else {
                bisect(|th| frank_tau(th) - t, -FRANK_MAX, FRANK_MAX, 1e-12, 200).unwrap_or(1.0)
            };
            vec![if th.abs() < FRANK_ZERO { FRANK_ZERO * 10.0 } else { th }]
        }
    }
}

// ---- fitting --------------------------------------------------------------

static PAIR_FITS: AtomicU64 = AtomicU64::new(0);

/// Process-wide number of [`fit_pair`] calls so far.
pub fn pair_fits_performed() -> u64 {
    PAIR_FITS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone)]
pub struct PairFit {
    pub copula: BivariateCopula,
    pub loglik: f64,
    /// Loglik at the tau-inversion starting point.
    pub start_loglik: f64,
    pub n_eff: f64,
    /// Set when the optimizer failed and the tau-inversion estimate was kept.
    pub fell_back: bool,
}

impl PairFit {
    pub fn aic(&self) -> f64 {
        -2.0 * self.loglik + 2.0 * self.copula.n_params() as f64
    }
}

/// Observations for a pair fit with optional nonnegative weights.
#[derive(Debug, Clone, Copy)]
pub struct PairData<'a> {
    pub u: &'a [f64],
    pub v: &'a [f64],
    pub weights: Option<&'a [f64]>,
}

impl<'a> PairData<'a> {
    pub fn new(u: &'a [f64], v: &'a [f64]) -> Self {
        PairData { u, v, weights: None }
    }

    pub fn weighted(u: &'a [f64], v: &'a [f64], weights: &'a [f64]) -> Self {
        PairData {
            u,
            v,
            weights: Some(weights),
        }
    }

    fn validate(&self) -> Result<f64> {
        if self.u.len() != self.v.len() {
            return Err(Error::domain("pair data: u and v lengths differ"));
        }
        if let Some(w) = self.weights {
            if w.len() != self.u.len() {
                return Err(Error::domain("pair data: weight length mismatch"));
            }
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::domain("pair data: weights must be finite and nonnegative"));
            }
        }
        if self
            .u
            .iter()
            .chain(self.v.iter())
            .any(|x| !(0.0..=1.0).contains(x))
        {
            return Err(Error::domain("pair data: observations must lie in [0,1]"));
        }
        let n_eff = match self.weights {
            None => self.u.len() as f64,
            Some(w) => {
                let s: f64 = w.iter().sum();
                let s2: f64 = w.iter().map(|x| x * x).sum();
                if s2 == 0.0 {
                    0.0
                } else {
                    s * s / s2
                }
            }
        };
        if n_eff < 10.0 {
            return Err(Error::InsufficientData(format!(
                "effective sample size {n_eff:.2} below 10"
            )));
        }
        Ok(n_eff)
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i])
    }

    fn tau(&self) -> f64 {
        match self.weights {
            None => kendall_tau(self.u, self.v),
            Some(w) => {
                let (u, v): (Vec<f64>, Vec<f64>) = (0..self.u.len())
                    .filter(|&i| w[i] > 0.0)
                    .map(|i| (self.u[i], self.v[i]))
                    .unzip();
                kendall_tau(&u, &v)
            }
        }
    }
}

/// Weighted log-likelihood of `copula` on `data`.
pub fn pair_loglik(copula: &BivariateCopula, data: &PairData<'_>) -> f64 {
    if copula.is_independence() {
        return 0.0;
    }
    (0..data.u.len())
        .map(|i| {
            let w = data.weight(i);
            if w == 0.0 {
                0.0
            } else {
                w * copula.ln_pdf(data.u[i], data.v[i])
            }
        })
        .sum()
}

/// Log-likelihood with normal or t scores cached for the elliptical families.
struct ScoreCache {
    x: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
}

impl ScoreCache {
    fn new(data: &PairData<'_>, quantile: impl Fn(f64) -> f64) -> Self {
        let n = data.u.len();
        ScoreCache {
            x: data.u.iter().map(|&u| quantile(clamp_unit(u))).collect(),
            y: data.v.iter().map(|&v| quantile(clamp_unit(v))).collect(),
            w: (0..n).map(|i| data.weight(i)).collect(),
        }
    }

    fn gauss(&self, rho: f64) -> f64 {
        let mut s = 0.0;
        for i in 0..self.x.len() {
            if self.w[i] != 0.0 {
                s += self.w[i] * gauss_ln_pdf(self.x[i], self.y[i], rho);
            }
        }
        s
    }

    fn student(&self, rho: f64, df: f64) -> f64 {
        let c = t_ln_const(df);
        let mut s = 0.0;
        for i in 0..self.x.len() {
            if self.w[i] != 0.0 {
                s += self.w[i] * t_ln_pdf_scores(self.x[i], self.y[i], rho, df, c);
            }
        }
        s
    }
}

const BRENT_TOL: f64 = 1e-10;
const DF_GRID: [f64; 7] = [2.5, 3.0, 4.0, 6.0, 10.0, 20.0, 30.0];

/// Maximum-likelihood fit of one family to (weighted) pair data, started at
/// the Kendall's tau inversion estimate.
pub fn fit_pair(data: &PairData<'_>, tag: FamilyTag) -> Result<PairFit> {
    PAIR_FITS.fetch_add(1, Ordering::Relaxed);
    let tag = FamilyTag::new(tag.family, tag.rotation)?;
    let n_eff = data.validate()?;
    if tag.family == Family::Independence {
        return Ok(PairFit {
            copula: BivariateCopula::independence(),
            loglik: 0.0,
            start_loglik: 0.0,
            n_eff,
            fell_back: false,
        });
    }
    let tau = data.tau();
    let start = tau_inversion(tag, tau);
    let (lo, hi) = param_box(tag.family);

    let (best, start_loglik, converged) = match tag.family {
        Family::Gaussian => {
            let cache = ScoreCache::new(data, norm_quantile);
            let start_ll = cache.gauss(start[0]);
            let m = brent_minimize(|r| -cache.gauss(r), lo[0], hi[0], BRENT_TOL, 500);
            pick(vec![m.x], -m.value, start, start_ll, m.converged)
        }
        Family::StudentT => fit_student(data, &start),
        _ => {
            let ll = |th: f64| {
                let c = BivariateCopula {
                    tag,
                    params: vec![th],
                };
                pair_loglik(&c, data)
            };
            let start_ll = ll(start[0]);
            let (a, b) = if tag.family == Family::Frank {
                // Frank is split at zero; search the side indicated by tau.
                if start[0] > 0.0 {
                    (FRANK_ZERO, hi[0])
                } else {
                    (lo[0], -FRANK_ZERO)
                }
            } else {
                (lo[0], hi[0])
            };
            let m = brent_minimize(|th| -ll(th), a, b, BRENT_TOL, 500);
            pick(vec![m.x], -m.value, start, start_ll, m.converged)
        }
    };

    let fell_back = !converged || !best.0.iter().all(|p| p.is_finite()) || !best.1.is_finite();
    let (params, loglik) = if fell_back {
        let s = tau_inversion(tag, tau);
        let c = BivariateCopula::new(tag, s.clone())?;
        let ll = pair_loglik(&c, data);
        log::warn!("pair fit for {tag} did not converge; keeping tau-inversion estimate");
        (s, ll)
    } else {
        best
    };
    Ok(PairFit {
        copula: BivariateCopula::new(tag, params)?,
        loglik,
        start_loglik,
        n_eff,
        fell_back,
    })
}

/// Returns the better of the optimizer result and the starting point.
fn pick(
    opt: Vec<f64>,
    opt_ll: f64,
    start: Vec<f64>,
    start_ll: f64,
    converged: bool,
) -> ((Vec<f64>, f64), f64, bool) {
    if opt_ll.is_finite() && opt_ll >= start_ll {
        ((opt, opt_ll), start_ll, converged)
    } else {
        ((start, start_ll), start_ll, true)
    }
}

fn fit_student(data: &PairData<'_>, start: &[f64]) -> ((Vec<f64>, f64), f64, bool) {
    let (lo, hi) = param_box(Family::StudentT);
    let profile = |df: f64| -> (f64, f64) {
        let cache = ScoreCache::new(data, |u| t_quantile(u, df));
        let m = brent_minimize(|r| -cache.student(r, df), lo[0], hi[0], BRENT_TOL, 500);
        (m.x, -m.value)
    };
    let start_ll = {
        let cache = ScoreCache::new(data, |u| t_quantile(u, start[1]));
        cache.student(start[0], start[1])
    };

    let (mut rho, mut df, mut ll) = (start[0], start[1], start_ll);
    let grid: Vec<(f64, f64)> = DF_GRID.iter().map(|&g| profile(g)).collect();
    let best = (0..grid.len())
        .max_by(|&i, &j| grid[i].1.total_cmp(&grid[j].1))
        .expect("nonempty grid");
    if grid[best].1 > ll {
        (rho, df, ll) = (grid[best].0, DF_GRID[best], grid[best].1);
    }
    // profile likelihood in log df, bracketed by the neighbours of the best grid point
    let a = if best == 0 { lo[1] } else { DF_GRID[best - 1] };
    let b = if best + 1 == DF_GRID.len() { hi[1] } else { DF_GRID[best + 1] };
    let m = brent_minimize(|x| -profile(x.exp()).1, a.ln(), b.ln(), 1e-4, 100);
    let cand = m.x.exp();
    let (r, l) = profile(cand);
    if l > ll {
        (rho, df, ll) = (r, cand, l);
    }
    ((vec![rho, df], ll), start_ll, true)
}

/// Result of AIC-based family selection.
#[derive(Debug, Clone)]
pub struct Selection {
    pub fit: PairFit,
    pub aic: f64,
    /// AIC of every candidate that could be fitted.
    pub candidates: Vec<(FamilyTag, f64)>,
}

/// Fits every candidate and keeps the one with the smallest AIC. Ties go to
/// fewer parameters, then to the fixed family order.
pub fn select_family(data: &PairData<'_>, candidates: &[FamilyTag]) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::domain("empty family candidate list"));
    }
    let mut scored: Vec<(FamilyTag, PairFit, f64)> = Vec::new();
    let mut last_err = None;
    for &tag in candidates {
        match fit_pair(data, tag) {
            Ok(fit) => {
                let aic = fit.aic();
                if aic.is_finite() {
                    scored.push((tag, fit, aic));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    if scored.is_empty() {
        if let Some(Error::InsufficientData(msg)) = last_err {
            return Err(Error::InsufficientData(msg));
        }
        let n_eff = data.validate().unwrap_or(0.0);
        return Ok(Selection {
            fit: PairFit {
                copula: BivariateCopula::independence(),
                loglik: 0.0,
                start_loglik: 0.0,
                n_eff,
                fell_back: true,
            },
            aic: 0.0,
            candidates: Vec::new(),
        });
    }
    let summary = scored.iter().map(|(t, _, a)| (*t, *a)).collect();
    let best = scored
        .into_iter()
        .min_by(|a, b| {
            a.2.total_cmp(&b.2)
                .then(a.0.family.n_params().cmp(&b.0.family.n_params()))
                .then(a.0.cmp(&b.0))
        })
        .expect("nonempty");
    Ok(Selection {
        aic: best.2,
        fit: best.1,
        candidates: summary,
    })
}
