//! Points on V_{n,p}, the canonical SVD parametrization and the matrix
//! Langevin density etr(V D M^T X) / 0F1(n/2, D^2/4) w.r.t. Haar measure.

mod sampler;

pub use sampler::{ml_sample, ml_sample_chain, vmf_sample, BURN_IN_SCANS, DEFAULT_SCANS};
pub(crate) use sampler::ml_update;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matfn::{self, ConcVector, SeriesControl};

pub const ORTHO_TOL: f64 = 1e-10;

/// max |X^T X - I| entry.
pub fn orthonormality_error(x: &DMatrix<f64>) -> f64 {
    let g = x.transpose() * x;
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// An n x p matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StiefelPoint {
    x: DMatrix<f64>,
}

impl StiefelPoint {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(x, ORTHO_TOL)
    }

    pub fn with_tolerance(x: DMatrix<f64>, tol: f64) -> Result<Self> {
        let (n, p) = x.shape();
        if p == 0 || n < p {
            return Err(Error::Shape(format!("need n >= p >= 1, got {n}x{p}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotOrthonormal("non-finite entry".into()));
        }
        let err = orthonormality_error(&x);
        if err >= tol {
            return Err(Error::NotOrthonormal(format!("|X^T X - I| = {err:.3e}")));
        }
        Ok(StiefelPoint { x })
    }

    /// Nearest-frame cleanup by QR with a positive R diagonal.
    pub fn orthonormalize(x: &DMatrix<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if p == 0 || n < p {
            return Err(Error::Shape(format!("need n >= p >= 1, got {n}x{p}")));
        }
        Ok(StiefelPoint { x: qr_frame(x.clone()) })
    }

    pub(crate) fn from_trusted(x: DMatrix<f64>) -> Self {
        debug_assert!(orthonormality_error(&x) < 1e-8);
        StiefelPoint { x }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.x
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

// Q factor with columns signed so that R has a positive diagonal.
pub(crate) fn qr_frame(a: DMatrix<f64>) -> DMatrix<f64> {
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Matrix Langevin parameters: orientation M (first row nonnegative),
/// concentrations d in S_p and a p x p rotation V.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MLParams {
    m: StiefelPoint,
    d: ConcVector,
    v: StiefelPoint,
}

impl MLParams {
    pub fn new(m: StiefelPoint, d: ConcVector, v: StiefelPoint) -> Result<Self> {
        let (n, p) = (m.n(), m.p());
        if d.p() != p || d.n() != n || v.n() != p || v.p() != p {
            return Err(Error::Shape(format!(
                "M is {n}x{p}, d has {} entries (n={}), V is {}x{}",
                d.p(),
                d.n(),
                v.n(),
                v.p()
            )));
        }
        if let Some(j) = (0..p).find(|&j| m.matrix()[(0, j)] < -1e-12) {
            return Err(Error::Invalid(format!("first row of M must be nonnegative (column {j})")));
        }
        Ok(MLParams { m, d, v })
    }

    /// Canonical parameters of F = M D V^T.
    pub fn from_f(f: &DMatrix<f64>) -> Result<Self> {
        let svd = unique_svd(f)?;
        let n = f.nrows();
        let d = ConcVector::new(svd.d.clone(), n)?;
        MLParams::new(svd.m, d, svd.v)
    }

    pub fn m(&self) -> &StiefelPoint {
        &self.m
    }

    pub fn d(&self) -> &ConcVector {
        &self.d
    }

    pub fn v(&self) -> &StiefelPoint {
        &self.v
    }

    pub fn n(&self) -> usize {
        self.m.n()
    }

    pub fn p(&self) -> usize {
        self.m.p()
    }

    /// F = M diag(d) V^T
    pub fn f(&self) -> DMatrix<f64> {
        compose(self.m.matrix(), self.d.as_slice(), self.v.matrix())
    }
}

pub fn compose(m: &DMatrix<f64>, d: &[f64], v: &DMatrix<f64>) -> DMatrix<f64> {
    let mut md = m.clone();
    for (j, &dj) in d.iter().enumerate() {
        md.column_mut(j).scale_mut(dj);
    }
    md * v.transpose()
}

/// A = M diag(d) V^T with d descending and the first row of M nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniqueSvd {
    pub m: StiefelPoint,
    pub d: Vec<f64>,
    pub v: StiefelPoint,
    pub warnings: Vec<String>,
}

const DEGENERATE: f64 = 1e-12;

pub fn unique_svd(a: &DMatrix<f64>) -> Result<UniqueSvd> {
    let (n, p) = a.shape();
    if p == 0 || n < p {
        return Err(Error::Shape(format!("need n >= p >= 1, got {n}x{p}")));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("matrix has non-finite entries".into()));
    }
    let svd = nalgebra::SVD::new_unordered(a.clone(), true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v requested");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..p).collect();
    // stable: columns with equal singular values keep the decomposition order
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap_or(std::cmp::Ordering::Equal));

    let mut m = DMatrix::zeros(n, p);
    let mut v = DMatrix::zeros(p, p);
    let mut d = vec![0.0; p];
    let mut warnings = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        d[dst] = s[src];
        m.set_column(dst, &u.column(src));
        v.set_column(dst, &vt.row(src).transpose());
    }
    for j in 0..p {
        let col = m.column(j);
        let pivot = if col[0].abs() > DEGENERATE {
            0
        } else {
            let r = (0..n).find(|&r| col[r].abs() > DEGENERATE).unwrap_or(0);
            warnings.push(format!("column {j}: first entry of M is zero, sign fixed by row {r}"));
            r
        };
        if m[(pivot, j)] < 0.0 {
            m.column_mut(j).neg_mut();
            v.column_mut(j).neg_mut();
        }
    }
    for j in 0..p {
        if d[j] <= DEGENERATE {
            warnings.push(format!("singular value {j} is zero"));
        }
        if j + 1 < p && d[j] - d[j + 1] <= DEGENERATE {
            warnings.push(format!("singular values {j} and {} coincide", j + 1));
        }
    }
    // restore exact zeros for round-off sized negatives in the first row
    for j in 0..p {
        if m[(0, j)] < 0.0 {
            m[(0, j)] = 0.0;
        }
    }
    Ok(UniqueSvd { m: StiefelPoint::from_trusted(m), d, v: StiefelPoint::from_trusted(v), warnings })
}

/// Uniform draw on V_{n,p}.
pub fn haar_sample<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> Result<StiefelPoint> {
    if p == 0 || n < p {
        return Err(Error::Shape(format!("need n >= p >= 1, got {n}x{p}")));
    }
    let g = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(StiefelPoint { x: qr_frame(g) })
}

fn check_shapes(x: &StiefelPoint, theta: &MLParams) -> Result<()> {
    if x.n() != theta.n() || x.p() != theta.p() {
        return Err(Error::Shape(format!(
            "point is {}x{}, parameters are {}x{}",
            x.n(),
            x.p(),
            theta.n(),
            theta.p()
        )));
    }
    Ok(())
}

/// tr(V D M^T X): the exponent of the density.
pub fn ml_exponent(x: &DMatrix<f64>, m: &DMatrix<f64>, d: &[f64], v: &DMatrix<f64>) -> f64 {
    // tr(V D M^T X) = sum_j d_j (M^T X V)_{jj}
    let mtxv = m.transpose() * x * v;
    d.iter().enumerate().map(|(j, &dj)| dj * mtxv[(j, j)]).sum()
}

/// Log density w.r.t. the normalized Haar measure.
pub fn ml_logpdf(x: &StiefelPoint, theta: &MLParams, ctl: &SeriesControl) -> Result<f64> {
    check_shapes(x, theta)?;
    let log_norm = matfn::log_0f1_ml(theta.n(), theta.d().as_slice(), ctl)?;
    Ok(ml_exponent(x.matrix(), theta.m().matrix(), theta.d().as_slice(), theta.v().matrix()) - log_norm.ln())
}

/// E[X] = M diag(h(d)) V^T
pub fn ml_mean(theta: &MLParams, ctl: &SeriesControl) -> Result<DMatrix<f64>> {
    let hv = matfn::h(theta.n(), theta.d().as_slice(), ctl)?;
    Ok(compose(theta.m().matrix(), &hv, theta.v().matrix()))
}
