//! Univariate normal and Student-t primitives plus Gauss-Legendre rules.
//!
//! Gamma and incomplete-beta functions come from `statrs`, `erfc` from `libm`; the
//! distribution functions built on top of them are accurate to well below
//! 1e-9 over the range used by the copula code.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use statrs::function::{beta::beta_reg, gamma::ln_gamma};

/// Degrees of freedom above which the t distribution is treated as normal.
const T_NORMAL_LIMIT: f64 = 1e7;

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal quantile (Wichura's AS 241).
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    let x = if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2509.080_928_730_122_7 * r + 33430.575_583_588_128) * r
            + 67265.770_927_008_7)
            * r
            + 45921.953_931_549_871)
            * r
            + 13731.693_765_509_461)
            * r
            + 1971.590_950_306_551_4)
            * r
            + 133.141_667_891_784_38)
            * r)
            + 3.387_132_872_796_366_6;
        let den = (((((((5226.495_278_852_545_9 * r + 28729.085_735_721_943) * r
            + 39307.895_800_092_71)
            * r
            + 21213.794_301_586_596)
            * r
            + 5394.196_021_424_751)
            * r
            + 687.187_007_492_057_9)
            * r
            + 42.313_330_701_600_911)
            * r)
            + 1.0;
        q * num / den
    } else {
        let tail = if q < 0.0 { p } else { 1.0 - p };
        let mut r = (-tail.ln()).sqrt();
        let val = if r <= 5.0 {
            r -= 1.6;
            let num = (((((((7.745_450_142_783_414e-4 * r + 0.022_723_844_989_269_185) * r
                + 0.241_780_725_177_450_6)
                * r
                + 1.270_458_252_452_368_4)
                * r
                + 3.647_848_324_763_204_6)
                * r
                + 5.769_497_221_460_691)
                * r
                + 4.630_337_846_156_545)
                * r)
                + 1.423_437_110_749_683_6;
            let den = (((((((1.050_750_071_644_416_8e-9 * r + 5.475_938_084_995_345e-4) * r
                + 0.015_198_666_563_616_457)
                * r
                + 0.148_103_976_427_480_07)
                * r
                + 0.689_767_334_985_1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_758_8)
                * r)
                + 1.0;
            num / den
        } else {
            r -= 5.0;
            let num = (((((((2.010_334_399_292_288e-7 * r + 2.711_555_568_743_487_6e-5) * r
                + 0.001_242_660_947_388_078_4)
                * r
                + 0.026_532_189_526_576_124)
                * r
                + 0.296_560_571_828_504_9)
                * r
                + 1.784_826_539_917_291_3)
                * r
                + 5.463_784_911_164_114)
                * r)
                + 6.657_904_643_501_103_8;
            let den = (((((((2.044_263_103_389_939_8e-15 * r + 1.421_511_758_316_446e-7) * r
                + 1.846_318_317_510_054_7e-5)
                * r
                + 7.868_691_311_456_133e-4)
                * r
                + 0.014_875_361_290_850_615)
                * r
                + 0.136_929_880_922_735_8)
                * r
                + 0.599_832_206_555_887_9)
                * r)
                + 1.0;
            num / den
        };
        if q < 0.0 {
            -val
        } else {
            val
        }
    };
    x
}

fn t_log_norm_const(df: f64) -> f64 {
    ln_gamma(0.5 * (df + 1.0)) - ln_gamma(0.5 * df) - 0.5 * (df * PI).ln()
}

pub fn t_ln_pdf(x: f64, df: f64) -> f64 {
    if df > T_NORMAL_LIMIT {
        return -0.5 * x * x - 0.5 * (2.0 * PI).ln();
    }
    t_log_norm_const(df) - 0.5 * (df + 1.0) * (x * x / df).ln_1p()
}

pub fn t_pdf(x: f64, df: f64) -> f64 {
    t_ln_pdf(x, df).exp()
}

/// Lower tail probability of the t distribution for `x <= 0`.
fn t_lower_tail(x: f64, df: f64) -> f64 {
    let z = df / (df + x * x);
    0.5 * beta_reg(0.5 * df, 0.5, z)
}

pub fn t_cdf(x: f64, df: f64) -> f64 {
    if df > T_NORMAL_LIMIT {
        return norm_cdf(x);
    }
    if x == 0.0 {
        return 0.5;
    }
    if x.is_infinite() {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    if x < 0.0 {
        t_lower_tail(x, df)
    } else {
        1.0 - t_lower_tail(-x, df)
    }
}

/// Quantile of the Student-t distribution with `df > 0` degrees of freedom.
///
/// Newton iterations on the log lower tail, safeguarded by a bracket.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    if df > T_NORMAL_LIMIT {
        return norm_quantile(p);
    }
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p == 0.5 {
        return 0.0;
    }
    if p > 0.5 {
        return -t_quantile_lower(1.0 - p, df);
    }
    t_quantile_lower(p, df)
}

/// Solves F(x) = p for p < 0.5, so x < 0.
fn t_quantile_lower(p: f64, df: f64) -> f64 {
    if (df - 1.0).abs() < 1e-14 {
        return (PI * (p - 0.5)).tan();
    }
    if (df - 2.0).abs() < 1e-14 {
        let a = 4.0 * p * (1.0 - p);
        return (2.0 * p - 1.0) * (2.0 / a).sqrt();
    }
    // Cornish-Fisher start.
    let z = norm_quantile(p);
    let z3 = z * z * z;
    let z5 = z3 * z * z;
    let mut x = z + (z3 + z) / (4.0 * df) + (5.0 * z5 + 16.0 * z3 + 3.0 * z) / (96.0 * df * df);
    if !x.is_finite() || x >= 0.0 {
        x = z;
    }
    let mut lo = f64::NEG_INFINITY;
    let mut hi = 0.0_f64;
    // Make sure a finite lower bracket exists.
    let mut probe = x.min(-1.0);
    for _ in 0..200 {
        if t_lower_tail(probe, df) < p {
            lo = probe;
            break;
        }
        hi = probe;
        probe *= 2.0;
    }
    if !lo.is_finite() {
        return probe;
    }
    if x <= lo || x >= hi {
        x = 0.5 * (lo + hi);
    }
    let ln_p = p.ln();
    for _ in 0..200 {
        let f = t_lower_tail(x, df);
        if f < p {
            lo = x;
        } else {
            hi = x;
        }
        // Newton on ln F(x) - ln p, slope f(x) / F(x).
        let g = f.ln() - ln_p;
        let slope = t_pdf(x, df) / f;
        let mut next = x - g / slope;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-14 * (1.0 + x.abs()) {
            return next;
        }
        x = next;
        if hi - lo <= 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

/// Gauss-Legendre nodes and weights on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let xm = 0.5 * (b + a);
    let xl = 0.5 * (b - a);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp;
        loop {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = xm - xl * z;
        nodes[n - 1 - i] = xm + xl * z;
        weights[i] = 2.0 * xl / ((1.0 - z * z) * pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    (nodes, weights)
}
