//! Modified Bessel functions of the first kind, carried in log scale.
//!
//! Small and moderate arguments use the power series directly. For large
//! arguments the fractional-order value comes from the Hankel expansion and
//! is lifted to the requested order with ratios obtained by backward
//! recurrence, which is stable in that direction.

use super::special::ln_gamma;
use super::LogScalar;
use crate::error::{domain, Result};

const HANKEL_MIN_X: f64 = 30.0;

pub fn log_bessel_i(order: f64, x: f64) -> Result<LogScalar> {
    if !(order >= 0.0) || !order.is_finite() {
        return domain(format!("Bessel order must be finite and nonnegative, got {order}"));
    }
    if !(x >= 0.0) || !x.is_finite() {
        return domain(format!("Bessel argument must be finite and nonnegative, got {x}"));
    }
    Ok(LogScalar::new(ln_bessel_i(order, x)))
}

/// Unchecked log I_nu(x) for nu >= 0, x >= 0.
pub(crate) fn ln_bessel_i(nu: f64, x: f64) -> f64 {
    if x == 0.0 {
        return if nu == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if x <= HANKEL_MIN_X.max(2.0 * nu) {
        return ln_series(nu, x);
    }
    let nu0 = nu.fract();
    let steps = (nu - nu0).round() as usize;
    let mut out = ln_hankel(nu0, x);
    if steps > 0 {
        for r in ratios(nu0, steps, x) {
            out += r.ln();
        }
    }
    out
}

fn ln_series(nu: f64, x: f64) -> f64 {
    let half = 0.5 * x;
    let q = half * half;
    let mut ln_scale = nu * half.ln() - ln_gamma(nu + 1.0);
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut m = 0.0;
    loop {
        m += 1.0;
        term *= q / (m * (m + nu));
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
        if sum > 1e280 {
            sum *= 1e-280;
            term *= 1e-280;
            ln_scale += 280.0 * std::f64::consts::LN_10;
        }
    }
    ln_scale + sum.ln()
}

// Hankel expansion of e^{-x} sqrt(2 pi x) I_nu(x); only used with nu < 1, x > 30,
// where the smallest term is far below rounding.
fn ln_hankel(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        let odd = 2.0 * k - 1.0;
        let next = -term * (mu - odd * odd) / (k * 8.0 * x);
        if next.abs() >= term.abs() || next == 0.0 {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
        k += 1.0;
    }
    x - 0.5 * (2.0 * std::f64::consts::PI * x).ln() + sum.ln()
}

/// Ratios I_{nu0+i+1}(x) / I_{nu0+i}(x) for i = 0..count, by backward recurrence
/// 1/rho_nu = 2(nu+1)/x + rho_{nu+1} started well above the requested range.
pub(crate) fn ratios(nu0: f64, count: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; count];
    if x == 0.0 || count == 0 {
        return out;
    }
    let extra = 40 + (1.5 * x).ceil() as usize;
    let top = count + extra;
    let mut r = 0.0;
    let two_over_x = 2.0 / x;
    for i in (0..top).rev() {
        r = 1.0 / ((nu0 + i as f64 + 1.0) * two_over_x + r);
        if i < count {
            out[i] = r;
        }
    }
    out
}
