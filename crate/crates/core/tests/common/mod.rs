//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use svine::bicop::{BivariateCopula, Family};
use svine::special::gauss_legendre;

pub fn phi(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub fn phi_inv(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

fn t_dist(df: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, df).unwrap()
}

/// Bivariate standard normal CDF from `Φ(x)Φ(y) + ∫_0^ρ φ₂(x, y; r) dr`.
pub fn bvn_cdf(x: f64, y: f64, rho: f64) -> f64 {
    let (nodes, weights) = gauss_legendre(64, 0.0, rho);
    let dens: f64 = nodes
        .iter()
        .zip(&weights)
        .map(|(&r, &w)| {
            let s = 1.0 - r * r;
            w * (-(x * x - 2.0 * r * x * y + y * y) / (2.0 * s)).exp() / (2.0 * PI * s.sqrt())
        })
        .sum();
    phi(x) * phi(y) + dens
}

/// Bivariate Student t CDF for integer degrees of freedom (Dunnett–Sobel series).
pub fn bvt_cdf(nu: u32, h: f64, k: f64, r: f64) -> f64 {
    let n = nu as f64;
    let snu = n.sqrt();
    let ors = 1.0 - r * r;
    let hrk = h - r * k;
    let krh = k - r * h;
    let (xnhk, xnkh) = if hrk.abs() + ors > 0.0 {
        (
            hrk * hrk / (hrk * hrk + ors * (n + k * k)),
            krh * krh / (krh * krh + ors * (n + h * h)),
        )
    } else {
        (0.0, 0.0)
    };
    let hs = if hrk < 0.0 { -1.0 } else { 1.0 };
    let ks = if krh < 0.0 { -1.0 } else { 1.0 };
    if nu % 2 == 0 {
        let mut bvt = ors.sqrt().atan2(-r) / (2.0 * PI);
        let mut gmph = h / (16.0 * (n + h * h)).sqrt();
        let mut gmpk = k / (16.0 * (n + k * k)).sqrt();
        let mut btnckh = 2.0 * xnkh.sqrt().atan2((1.0 - xnkh).sqrt()) / PI;
        let mut btpdkh = 2.0 * (xnkh * (1.0 - xnkh)).sqrt() / PI;
        let mut btnchk = 2.0 * xnhk.sqrt().atan2((1.0 - xnhk).sqrt()) / PI;
        let mut btpdhk = 2.0 * (xnhk * (1.0 - xnhk)).sqrt() / PI;
        for j in 1..=nu / 2 {
            let j = j as f64;
            bvt += gmph * (1.0 + ks * btnckh) + gmpk * (1.0 + hs * btnchk);
            btnckh += btpdkh;
            btpdkh = 2.0 * j * btpdkh * (1.0 - xnkh) / (2.0 * j + 1.0);
            btnchk += btpdhk;
            btpdhk = 2.0 * j * btpdhk * (1.0 - xnhk) / (2.0 * j + 1.0);
            gmph = gmph * (2.0 * j - 1.0) / (2.0 * j * (1.0 + h * h / n));
            gmpk = gmpk * (2.0 * j - 1.0) / (2.0 * j * (1.0 + k * k / n));
        }
        bvt
    } else {
        let qhrk = (h * h + k * k - 2.0 * r * h * k + n * ors).sqrt();
        let hkrn = h * k + r * n;
        let hkn = h * k - n;
        let hpk = h + k;
        let mut bvt = (-snu * (hkn * qhrk + hpk * hkrn)).atan2(hkn * hkrn - n * hpk * qhrk) / (2.0 * PI);
        if bvt < -1e-15 {
            bvt += 1.0;
        }
        let mut gmph = h / (2.0 * PI * snu * (1.0 + h * h / n));
        let mut gmpk = k / (2.0 * PI * snu * (1.0 + k * k / n));
        let mut btnckh = xnkh.sqrt();
        let mut btpdkh = btnckh;
        let mut btnchk = xnhk.sqrt();
        let mut btpdhk = btnchk;
        for j in 1..=(nu - 1) / 2 {
            let j = j as f64;
            bvt += gmph * (1.0 + ks * btnckh) + gmpk * (1.0 + hs * btnchk);
            btpdkh = (2.0 * j - 1.0) * btpdkh * (1.0 - xnkh) / (2.0 * j);
            btnckh += btpdkh;
            btpdhk = (2.0 * j - 1.0) * btpdhk * (1.0 - xnhk) / (2.0 * j);
            btnchk += btpdhk;
            gmph = 2.0 * j * gmph / ((2.0 * j + 1.0) * (1.0 + h * h / n));
            gmpk = 2.0 * j * gmpk / ((2.0 * j + 1.0) * (1.0 + k * k / n));
        }
        bvt
    }
}

fn base_cdf(fam: Family, p: &[f64], u: f64, v: f64) -> f64 {
    match fam {
        Family::Independence => u * v,
        Family::Gaussian => bvn_cdf(phi_inv(u), phi_inv(v), p[0]),
        Family::StudentT => {
            assert!(p[1].fract() == 0.0, "integer degrees of freedom required");
            let t = t_dist(p[1]);
            bvt_cdf(p[1] as u32, t.inverse_cdf(u), t.inverse_cdf(v), p[0])
        }
        Family::Clayton => (u.powf(-p[0]) + v.powf(-p[0]) - 1.0).powf(-1.0 / p[0]),
        Family::Gumbel => (-((-u.ln()).powf(p[0]) + (-v.ln()).powf(p[0])).powf(1.0 / p[0])).exp(),
        Family::Frank => {
            let th = p[0];
            -((1.0 + (-th * u).exp_m1() * (-th * v).exp_m1() / (-th).exp_m1()).ln()) / th
        }
    }
}

/// Copula CDF including rotations.
pub fn copula_cdf(c: &BivariateCopula, u: f64, v: f64) -> f64 {
    let (f, p) = (c.family(), c.params());
    match c.rotation() {
        90 => v - base_cdf(f, p, 1.0 - u, v),
        180 => u + v - 1.0 + base_cdf(f, p, 1.0 - u, 1.0 - v),
        270 => u - base_cdf(f, p, u, 1.0 - v),
        _ => base_cdf(f, p, u, v),
    }
}

/// Kendall's tau by counting discordant pairs with a merge sort.
pub fn kendall_tau_merge(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = ys.clone();
    fn count(a: &mut [f64], buf: &mut [f64]) -> u64 {
        let n = a.len();
        if n < 2 {
            return 0;
        }
        let m = n / 2;
        let mut inv = count(&mut a[..m], &mut buf[..m]) + count(&mut a[m..], &mut buf[m..]);
        let (mut i, mut j, mut k) = (0, m, 0);
        while i < m && j < n {
            if a[i] <= a[j] {
                buf[k] = a[i];
                i += 1;
            } else {
                buf[k] = a[j];
                inv += (m - i) as u64;
                j += 1;
            }
            k += 1;
        }
        buf[k..k + m - i].copy_from_slice(&a[i..m]);
        let k2 = k + m - i;
        buf[k2..k2 + n - j].copy_from_slice(&a[j..n]);
        a.copy_from_slice(&buf[..n]);
        inv
    }
    let disc = count(&mut ys, &mut buf) as f64;
    let pairs = (n * (n - 1) / 2) as f64;
    1.0 - 2.0 * disc / pairs
}

/// `∂/∂ρ log c(u, v; ρ)` of the Gaussian copula.
pub fn gaussian_score(u: f64, v: f64, rho: f64) -> f64 {
    let (x, y) = (phi_inv(u), phi_inv(v));
    let s = 1.0 - rho * rho;
    rho / s - (rho * (x * x + y * y) - x * y * (1.0 + rho * rho)) / (s * s)
}

/// A representative grid of copulas over every family and rotation.
pub fn copula_grid() -> Vec<BivariateCopula> {
    let mut out = vec![BivariateCopula::independence()];
    for rho in [-0.7, -0.2, 0.3, 0.8] {
        out.push(BivariateCopula::gaussian(rho).unwrap());
    }
    for (rho, df) in [(-0.5, 4.0), (0.3, 5.0), (0.7, 8.0), (0.1, 3.0)] {
        out.push(BivariateCopula::student_t(rho, df).unwrap());
    }
    for th in [-8.0, -1.5, 2.0, 10.0] {
        out.push(BivariateCopula::frank(th).unwrap());
    }
    for rot in [0, 90, 180, 270] {
        for th in [0.7, 2.0, 5.0] {
            out.push(BivariateCopula::clayton(th, rot).unwrap());
        }
        for th in [1.3, 2.0, 4.0] {
            out.push(BivariateCopula::gumbel(th, rot).unwrap());
        }
    }
    out
}
