//! The map h(d) = grad_d log 0F1(n/2, D^2/4) and its inverse.
//!
//! h sends a concentration vector to the diagonal of the mean orientation, so
//! h^{-1} turns a target mean into the mode of a conjugate prior.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{derivs, ConcVector, SeriesControl};
use crate::error::{domain, Error, Result};

/// Log-derivatives of 0F1(n/2, D^2/4) with respect to each concentration.
pub fn h(n: usize, d: &[f64], ctl: &SeriesControl) -> Result<Vec<f64>> {
    Ok(derivs(n, d, ctl, false)?.grad)
}

/// Jacobian of h, i.e. the Hessian of log 0F1(n/2, D^2/4) in d.
pub fn h_jacobian(n: usize, d: &[f64], ctl: &SeriesControl) -> Result<Vec<Vec<f64>>> {
    Ok(derivs(n, d, ctl, true)?.hess.expect("hessian requested"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HInverse {
    pub d: ConcVector,
    pub iterations: usize,
    /// max-norm of h(d) - eta at the returned point
    pub residual: f64,
    pub warnings: Vec<String>,
}

const MAX_ITER: usize = 200;
const TARGET: f64 = 1e-9;
/// Iterates are kept below this. Series cost grows linearly in d, and an
/// iterate that runs away this far means eta is numerically unidentifiable
/// (for n = 2 the entries of h(d) agree to machine precision once d_p is
/// moderately large).
const D_MAX: f64 = 1e6;

/// Solve h(d) = eta by damped Newton iteration.
pub fn h_inv(eta: &[f64], n: usize, ctl: &SeriesControl) -> Result<HInverse> {
    let p = eta.len();
    if p == 0 || n < p {
        return domain(format!("need n >= p >= 1, got n={n}, p={p}"));
    }
    if let Some(bad) = eta.iter().find(|&&e| !(e > 0.0 && e < 1.0)) {
        return domain(format!("every eta_j must lie in (0,1), got {bad}"));
    }
    let mut warnings = Vec::new();
    let mut target = eta.to_vec();
    if target.windows(2).any(|w| w[0] < w[1] - 1e-12) {
        return domain(format!("eta must be descending, got {eta:?}"));
    }
    if target.windows(2).any(|w| w[0] <= w[1]) {
        for (j, e) in target.iter_mut().enumerate() {
            *e -= 1e-9 * j as f64;
        }
        let msg = format!("tied eta entries perturbed to {target:?}");
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let max_eta = target.iter().cloned().fold(0.0, f64::max);
    let mut d: Vec<f64> = if max_eta < 0.5 {
        target.iter().map(|&e| n as f64 * e).collect()
    } else {
        target.iter().map(|&e| (n as f64 - 1.0).max(0.5) / (2.0 * (1.0 - e))).collect()
    };

    let resid = |d: &[f64]| -> Result<(Vec<f64>, f64)> {
        let hv = h(n, d, ctl)?;
        let r: Vec<f64> = hv.iter().zip(&target).map(|(a, b)| a - b).collect();
        let norm = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        Ok((r, norm))
    };

    let (mut r, mut norm) = resid(&d)?;
    let mut best = (d.clone(), norm);
    let mut iterations = 0;
    while iterations < MAX_ITER {
        if norm < 1e-12 {
            break;
        }
        iterations += 1;
        let jac = h_jacobian(n, &d, ctl)?;
        let jm = DMatrix::from_fn(p, p, |i, j| jac[i][j]);
        let rv = DVector::from_vec(r.clone());
        let step = match jm.clone().lu().solve(&rv) {
            Some(s) if s.iter().all(|x| x.is_finite()) => s,
            _ => DVector::from_fn(p, |i, _| r[i] / jac[i][i].max(1e-12)),
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand: Vec<f64> = d.iter().zip(step.iter()).map(|(x, s)| (x - t * s).clamp(1e-10, D_MAX)).collect();
            let (rc, nc) = resid(&cand)?;
            if nc < norm {
                d = cand;
                r = rc;
                norm = nc;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if norm < best.1 {
            best = (d.clone(), norm);
        }
        if !improved {
            break;
        }
    }
    if best.1 >= TARGET {
        return Err(Error::NoConvergence { iterations, residual: best.1, best: best.0 });
    }
    let (d, residual) = best;
    let d = ConcVector::new(d.clone(), n).map_err(|_| Error::Domain(format!("solution {d:?} is not strictly descending")))?;
    Ok(HInverse { d, iterations, residual, warnings })
}
