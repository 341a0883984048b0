//! Special functions behind the matrix Langevin normalizer.
//!
//! Everything is carried in log scale: the normalizer 0F1(n/2, D^2/4) grows
//! like exp(sum d) and overflows long before the concentrations seen in
//! posterior sampling.
//!
//! Argument conventions: [`log_0f1_p2`] and [`log_0f1_general`] take the
//! diagonal of the matrix argument itself, while [`log_0f1_ml`], [`h`] and
//! [`h_inv`] take concentrations d and evaluate at D^2/4.

mod bessel;
mod hmap;
mod series2;
pub(crate) mod special;
mod zonal;

pub use bessel::log_bessel_i;
pub use hmap::{h, h_inv, h_jacobian, HInverse};
pub use special::{ln_gamma, log_sum_exp};

pub(crate) use bessel::{ln_bessel_i, ratios as bessel_ratios};

use crate::error::{domain, Result};
use serde::{Deserialize, Serialize};

/// A positive quantity stored as its natural log. Zero is `-inf` and is
/// reported by [`LogScalar::is_zero`].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LogScalar(f64);

impl LogScalar {
    pub fn new(logval: f64) -> Self {
        LogScalar(logval)
    }

    pub fn ln(self) -> f64 {
        self.0
    }

    pub fn exp(self) -> f64 {
        self.0.exp()
    }

    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }
}

/// Concentrations in S_p: strictly positive and strictly descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcVector {
    d: Vec<f64>,
    n: usize,
}

impl ConcVector {
    pub fn new(d: Vec<f64>, n: usize) -> Result<Self> {
        let p = d.len();
        if p == 0 || n < p {
            return domain(format!("need n >= p >= 1, got n={n}, p={p}"));
        }
        if d.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return domain(format!("concentrations must be finite and positive: {d:?}"));
        }
        if d.windows(2).any(|w| w[0] <= w[1]) {
            return domain(format!("concentrations must be strictly descending: {d:?}"));
        }
        Ok(ConcVector { d, n })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.d
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.d.clone()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.d.len()
    }
}

/// Truncation controls for the series evaluators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeriesControl {
    /// absolute truncation error of the two-dimensional series
    pub eps: f64,
    /// ratio bound in (0, 1/2) for the two-dimensional tail estimate
    pub eps1: f64,
    /// largest total partition degree for p >= 3
    pub kmax_general: usize,
    /// consecutive degrees below `stabilization_tol` needed to stop
    pub stabilization_window: usize,
    pub stabilization_tol: f64,
}

impl Default for SeriesControl {
    fn default() -> Self {
        SeriesControl { eps: 1e-12, eps1: 0.25, kmax_general: 80, stabilization_window: 3, stabilization_tol: 1e-10 }
    }
}

impl SeriesControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return domain("eps must be positive");
        }
        if !(self.eps1 > 0.0 && self.eps1 < 0.5) {
            return domain("eps1 must lie in (0, 1/2)");
        }
        if self.kmax_general < 1 || self.stabilization_window < 1 {
            return domain("kmax_general and stabilization_window must be at least 1");
        }
        if !(self.stabilization_tol > 0.0) {
            return domain("stabilization_tol must be positive");
        }
        Ok(())
    }
}

/// Partition-series value with its stabilization report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralValue {
    pub value: LogScalar,
    /// total degree at which summation stopped
    pub degree: usize,
    /// largest relative contribution among the last window degrees
    pub diagnostic: f64,
    pub stabilized: bool,
}

fn check_args(a: f64, args: &[f64], min_a: f64) -> Result<()> {
    if !(a >= min_a) || !a.is_finite() {
        return domain(format!("parameter a = {a} must be at least {min_a}"));
    }
    if args.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return domain(format!("arguments must be finite and nonnegative: {args:?}"));
    }
    Ok(())
}

/// log 0F1(a; diag(u1, u2)) by the Bessel series with certified truncation.
///
/// Zero arguments are accepted and give the boundary value of the series.
pub fn log_0f1_p2(a: f64, u: &[f64], ctl: &SeriesControl) -> Result<LogScalar> {
    if u.len() != 2 {
        return domain(format!("expected two arguments, got {}", u.len()));
    }
    check_args(a, u, 1.0)?;
    ctl.validate()?;
    Ok(LogScalar(series2::eval_p2(a, u[0], u[1], ctl, false).log_f))
}

/// log 0F1(a; diag(u)) for any number of arguments. Two arguments go through
/// the certified series, one through the Bessel closed form and three or more
/// through the partition series, whose precision is only monitored.
pub fn log_0f1_general(a: f64, u: &[f64], ctl: &SeriesControl) -> Result<GeneralValue> {
    let p = u.len();
    if p == 0 {
        return domain("empty argument");
    }
    check_args(a, u, p as f64 / 2.0)?;
    ctl.validate()?;
    let exact = |v: f64| GeneralValue { value: LogScalar(v), degree: 0, diagnostic: 0.0, stabilized: true };
    match p {
        1 => Ok(exact(log_0f1_scalar(a, u[0]))),
        2 => Ok(exact(series2::eval_p2(a.max(1.0), u[0], u[1], ctl, false).log_f)),
        _ => {
            let e = zonal::eval_general(
                a,
                u,
                ctl.kmax_general,
                ctl.stabilization_window,
                ctl.stabilization_tol,
                true,
            );
            if !e.stabilized {
                log::warn!("partition series not stabilized at degree {} (diagnostic {:.2e})", e.degree, e.diagnostic);
            }
            Ok(GeneralValue { value: LogScalar(e.log_f), degree: e.degree, diagnostic: e.diagnostic, stabilized: e.stabilized })
        }
    }
}

fn log_0f1_scalar(a: f64, u: f64) -> f64 {
    if u == 0.0 {
        return 0.0;
    }
    ln_gamma(a) + 0.5 * (1.0 - a) * u.ln() + ln_bessel_i(a - 1.0, 2.0 * u.sqrt())
}

pub(crate) fn quarter_squares(d: &[f64]) -> Vec<f64> {
    d.iter().map(|&x| 0.25 * x * x).collect()
}

fn check_conc(n: usize, d: &[f64]) -> Result<()> {
    let p = d.len();
    if p == 0 || n < p {
        return domain(format!("need n >= p >= 1, got n={n}, p={p}"));
    }
    if d.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return domain(format!("concentrations must be finite and nonnegative: {d:?}"));
    }
    Ok(())
}

/// log 0F1(n/2, D^2/4): the log normalizer of the matrix Langevin density
/// with concentrations d (any order, zeros allowed).
pub fn log_0f1_ml(n: usize, d: &[f64], ctl: &SeriesControl) -> Result<LogScalar> {
    check_conc(n, d)?;
    Ok(log_0f1_general(n as f64 / 2.0, &quarter_squares(d), ctl)?.value)
}

/// Gradient and (optionally) Hessian of log 0F1(n/2, D^2/4) in d.
pub(crate) struct Derivs {
    pub grad: Vec<f64>,
    pub hess: Option<Vec<Vec<f64>>>,
}

pub(crate) fn derivs(n: usize, d: &[f64], ctl: &SeriesControl, with_hess: bool) -> Result<Derivs> {
    check_conc(n, d)?;
    ctl.validate()?;
    let a = n as f64 / 2.0;
    let p = d.len();
    match p {
        1 => {
            let x = d[0];
            if x == 0.0 {
                return Ok(Derivs { grad: vec![0.0], hess: with_hess.then(|| vec![vec![1.0 / (2.0 * a)]]) });
            }
            let rho = bessel_ratios(a - 1.0, 1, x)[0];
            let second = 1.0 - (2.0 * a - 1.0) * rho / x - rho * rho;
            Ok(Derivs { grad: vec![rho], hess: with_hess.then(|| vec![vec![second]]) })
        }
        2 => {
            let e = series2::eval_p2(a, 0.25 * d[0] * d[0], 0.25 * d[1] * d[1], ctl, with_hess);
            let grad = vec![0.5 * d[0] * e.grad[0], 0.5 * d[1] * e.grad[1]];
            let hess = with_hess.then(|| {
                let mut h = vec![vec![0.0; 2]; 2];
                for i in 0..2 {
                    for j in 0..2 {
                        h[i][j] = 0.25 * d[i] * d[j] * e.hess[i][j];
                    }
                    h[i][i] += 0.5 * e.grad[i];
                }
                h
            });
            Ok(Derivs { grad, hess })
        }
        _ => {
            let (_, grad, diag) = general_gradient(a, d, ctl);
            let hess = if with_hess {
                // off-diagonal entries from differences of the analytic gradient
                let mut h = vec![vec![0.0; p]; p];
                for j in 0..p {
                    let step = 1e-5 * d[j].max(1.0);
                    let mut up = d.to_vec();
                    let mut dn = d.to_vec();
                    up[j] += step;
                    dn[j] = (dn[j] - step).max(0.0);
                    let width = up[j] - dn[j];
                    let gu = general_gradient(a, &up, ctl).1;
                    let gd = general_gradient(a, &dn, ctl).1;
                    for i in 0..p {
                        h[i][j] = (gu[i] - gd[i]) / width;
                    }
                }
                for i in 0..p {
                    for j in 0..i {
                        let m = 0.5 * (h[i][j] + h[j][i]);
                        h[i][j] = m;
                        h[j][i] = m;
                    }
                    h[i][i] = diag[i];
                }
                Some(h)
            } else {
                None
            };
            Ok(Derivs { grad, hess })
        }
    }
}

// Gradient of the partition series by differentiating one-variable slices.
fn general_gradient(a: f64, d: &[f64], ctl: &SeriesControl) -> (f64, Vec<f64>, Vec<f64>) {
    let p = d.len();
    let u = quarter_squares(d);
    let mut grad = vec![0.0; p];
    let mut diag = vec![0.0; p];
    let mut lf = 0.0;
    for j in 0..p {
        let rest: Vec<f64> = (0..p).filter(|&i| i != j).map(|i| u[i]).collect();
        let sl = zonal::Slice::build(a, &rest, u[j], ctl.kmax_general, ctl.stabilization_window, ctl.stabilization_tol);
        let (l, d1, d2) = sl.eval(u[j]);
        if j == 0 {
            lf = l;
        }
        grad[j] = 0.5 * d[j] * d1;
        diag[j] = 0.25 * d[j] * d[j] * d2 + 0.5 * d1;
    }
    (lf, grad, diag)
}

/// log 0F1(n/2, diag(x, rest)^2 / 4) as a function of one concentration x with
/// the others held fixed; the workhorse of the one-dimensional samplers.
#[derive(Debug, Clone)]
pub struct CoordinateSlice {
    n: usize,
    rest: Vec<f64>,
    ctl: SeriesControl,
    zonal: Option<zonal::Slice>,
}

impl CoordinateSlice {
    pub fn new(n: usize, rest: &[f64], ctl: &SeriesControl) -> Result<Self> {
        let start = rest.iter().cloned().fold(1.0, f64::max) * 2.0;
        CoordinateSlice::with_range(n, rest, ctl, start)
    }

    /// As [`CoordinateSlice::new`] with the cached expansion covering [0, x_max].
    pub fn with_range(n: usize, rest: &[f64], ctl: &SeriesControl, x_max: f64) -> Result<Self> {
        check_conc(n, &[rest, &[0.0]].concat())?;
        ctl.validate()?;
        let mut s = CoordinateSlice { n, rest: rest.to_vec(), ctl: *ctl, zonal: None };
        s.ensure_range(x_max.max(1.0));
        Ok(s)
    }

    /// Make evaluations up to concentration x_max use the cached expansion.
    pub fn ensure_range(&mut self, x_max: f64) {
        if self.rest.len() < 2 {
            return;
        }
        let u_max = 0.25 * x_max * x_max;
        if let Some(z) = &self.zonal {
            if z.u_max >= u_max {
                return;
            }
        }
        let a = self.n as f64 / 2.0;
        let rest_u = quarter_squares(&self.rest);
        let target = self.zonal.as_ref().map_or(u_max, |z| u_max.max(4.0 * z.u_max));
        self.zonal = Some(zonal::Slice::build(
            a,
            &rest_u,
            target,
            self.ctl.kmax_general,
            self.ctl.stabilization_window,
            self.ctl.stabilization_tol,
        ));
    }

    /// (log F, d log F / dx) at concentration x >= 0.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let a = self.n as f64 / 2.0;
        let u = 0.25 * x * x;
        match self.rest.len() {
            0 => {
                if x == 0.0 {
                    return (0.0, 0.0);
                }
                (log_0f1_scalar(a, u), bessel_ratios(a - 1.0, 1, x)[0])
            }
            1 => {
                let e = series2::eval_p2(a, u, 0.25 * self.rest[0] * self.rest[0], &self.ctl, false);
                (e.log_f, 0.5 * x * e.grad[0])
            }
            _ => {
                if let Some(z) = self.zonal.as_ref().filter(|z| u <= z.u_max) {
                    let (lf, d1, _) = z.eval(u);
                    return (lf, 0.5 * x * d1);
                }
                let z = zonal::Slice::build(
                    a,
                    &quarter_squares(&self.rest),
                    u,
                    self.ctl.kmax_general,
                    self.ctl.stabilization_window,
                    self.ctl.stabilization_tol,
                );
                let (lf, d1, _) = z.eval(u);
                (lf, 0.5 * x * d1)
            }
        }
    }

    pub fn log_f(&self, x: f64) -> f64 {
        self.eval(x).0
    }
}
