//! Two-dimensional argument: the Bessel-function series for 0F1(c; diag(u1, u2)).
//!
//! Term k is
//!   A_k = G(c-1/2) G(c) / (G(c+k-1/2) k!) (u1 u2)^k s^{-(c+2k-1)} I_{c+2k-1}(2s),
//! s = sqrt(u1 + u2). Consecutive terms differ by a product of two Bessel
//! ratios, so the whole sum needs one Bessel value and one ratio sweep.

use super::bessel::{ln_bessel_i, ratios};
use super::special::{ln_gamma, LogAcc};
use super::SeriesControl;

#[derive(Debug, Clone, Copy)]
pub(crate) struct P2Eval {
    pub log_f: f64,
    /// d log F / d u_i
    pub grad: [f64; 2],
    /// d^2 log F / d u_i d u_j
    pub hess: [[f64; 2]; 2],
    #[allow(dead_code)] // read by the tests
    pub terms: usize,
}

pub(crate) fn eval_p2(c: f64, u1: f64, u2: f64, ctl: &SeriesControl, with_hess: bool) -> P2Eval {
    let s2 = u1 + u2;
    if s2 == 0.0 {
        return P2Eval { log_f: 0.0, grad: [1.0 / c; 2], hess: [[0.0; 2]; 2], terms: 1 };
    }
    let s = s2.sqrt();
    let z = 2.0 * s;
    let ln_s = s.ln();
    let base_order = c - 1.0;
    let ln_i0 = ln_bessel_i(base_order, z);
    let prod = u1 * u2;

    if prod == 0.0 {
        return eval_axis(c, u1, u2, s, z, ln_i0);
    }

    let ln_prod = prod.ln();
    let ln_eps = ctl.eps.ln();
    let min_terms = (prod / (4.0 * ctl.eps1)).powf(0.25);
    let mut guess = (min_terms.ceil() as usize) + (3.0 * prod.sqrt() / s).ceil() as usize + 40;

    loop {
        let rho = ratios(base_order, 2 * guess + 2, z);
        let mut ln_terms: Vec<f64> = Vec::with_capacity(guess + 1);
        let mut acc = LogAcc::new();
        let mut ln_a = ln_gamma(c) - base_order * ln_s + ln_i0;
        let mut done = false;
        for k in 0..=guess {
            ln_terms.push(ln_a);
            acc.add(ln_a);
            let kf = k as f64;
            if ln_a <= ln_eps && kf * kf * kf * kf >= min_terms.powi(4) && ln_a - acc.value() <= -39.0 {
                done = true;
                break;
            }
            if k == guess {
                break;
            }
            ln_a += -(c + kf - 0.5).ln() - (kf + 1.0).ln() + ln_prod - 2.0 * ln_s
                + rho[2 * k].ln()
                + rho[2 * k + 1].ln();
        }
        if !done {
            guess *= 2;
            continue;
        }
        let log_f = acc.value();
        let mut g = [0.0; 2];
        let mut gg = [[0.0; 2]; 2];
        let mut dg = [[0.0; 2]; 2];
        let inv_u = [1.0 / u1, 1.0 / u2];
        for (k, &la) in ln_terms.iter().enumerate() {
            let w = (la - log_f).exp();
            if w == 0.0 {
                continue;
            }
            let kf = k as f64;
            let r0 = rho[2 * k];
            let r1 = rho[2 * k + 1];
            let common = r0 / s;
            let gk = [kf * inv_u[0] + common, kf * inv_u[1] + common];
            g[0] += w * gk[0];
            g[1] += w * gk[1];
            if with_hess {
                let t = r0 * (r1 - r0) / s2;
                for i in 0..2 {
                    for j in 0..2 {
                        gg[i][j] += w * gk[i] * gk[j];
                        dg[i][j] += w * t;
                    }
                    dg[i][i] -= w * kf * inv_u[i] * inv_u[i];
                }
            }
        }
        let mut hess = [[0.0; 2]; 2];
        if with_hess {
            for i in 0..2 {
                for j in 0..2 {
                    hess[i][j] = gg[i][j] + dg[i][j] - g[i] * g[j];
                }
            }
        }
        return P2Eval { log_f, grad: g, hess, terms: ln_terms.len() };
    }
}

// One of the arguments is zero: only the k = 0 term survives, which is the
// one-dimensional function of the other argument. The derivative in the zero
// direction also picks up the k = 1 term divided by the vanishing argument.
fn eval_axis(c: f64, u1: f64, u2: f64, s: f64, z: f64, ln_i0: f64) -> P2Eval {
    let ln_s = s.ln();
    let log_f = ln_gamma(c) - (c - 1.0) * ln_s + ln_i0;
    let rho = ratios(c - 1.0, 3, z);
    let along = rho[0] / s;
    // A_1 / u_zero = G(c)/(c-1/2) * u_other * s^{-(c+1)} I_{c+1}(2s)
    let ln_i2 = ln_i0 + rho[0].ln() + rho[1].ln();
    let across = (ln_gamma(c) - (c - 0.5).ln() + s.powi(2).ln() - (c + 1.0) * ln_s + ln_i2 - log_f).exp();
    let t = rho[0] * (rho[1] - rho[0]) / (s * s);
    let _ = u2;
    let (grad, hess) = if u1 == 0.0 {
        ([along + across, along], [[0.0, 0.0], [0.0, t]])
    } else {
        ([along, along + across], [[t, 0.0], [0.0, 0.0]])
    };
    P2Eval { log_f, grad, hess, terms: 1 }
}
