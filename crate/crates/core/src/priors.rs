//! Conjugate prior families for (M, d, V): the joint prior JCPD(nu, Psi) and
//! the conditional prior CCPD(nu, eta) on the concentrations alone, plus the
//! product prior that pairs a CCPD with matrix Langevin priors on M and V.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::matfn::{self, LogScalar, SeriesControl};
use crate::stiefel::{compose, unique_svd, MLParams, StiefelPoint};

/// Tolerance for treating a spectral norm as exactly one.
pub const BOUNDARY_TOL: f64 = 1e-12;

pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().svd(false, false).singular_values.max()
}

fn check_matrix(a: &DMatrix<f64>, what: &str) -> Result<()> {
    let (n, p) = a.shape();
    if p == 0 || n < p {
        return Err(Error::Shape(format!("{what}: need n >= p >= 1, got {n}x{p}")));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return domain(format!("{what} has non-finite entries"));
    }
    Ok(())
}

/// JCPD(nu, Psi). nu = 0 is the flat improper prior.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JCPDParams {
    nu: f64,
    psi: DMatrix<f64>,
}

impl JCPDParams {
    pub fn new(nu: f64, psi: DMatrix<f64>) -> Result<Self> {
        if !(nu >= 0.0) || !nu.is_finite() {
            return domain(format!("nu must be finite and nonnegative, got {nu}"));
        }
        check_matrix(&psi, "Psi")?;
        Ok(JCPDParams { nu, psi })
    }

    pub fn uniform(n: usize, p: usize) -> Result<Self> {
        JCPDParams::new(0.0, DMatrix::zeros(n, p))
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn n(&self) -> usize {
        self.psi.nrows()
    }

    pub fn p(&self) -> usize {
        self.psi.ncols()
    }

    pub fn is_proper(&self) -> bool {
        self.nu > 0.0 && spectral_norm(&self.psi) < 1.0 - BOUNDARY_TOL
    }
}

/// CCPD(nu, eta) on the positive orthant of R^p, for ambient dimension n.
/// nu = 0 gives the flat improper prior on d.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CCPDParams {
    nu: f64,
    eta: Vec<f64>,
    n: usize,
}

impl CCPDParams {
    pub fn new(nu: f64, eta: Vec<f64>, n: usize) -> Result<Self> {
        if !(nu >= 0.0) || !nu.is_finite() {
            return domain(format!("nu must be finite and nonnegative, got {nu}"));
        }
        if eta.is_empty() || eta.len() > n {
            return domain(format!("need 1 <= p <= n, got p={}, n={n}", eta.len()));
        }
        if eta.iter().any(|x| !x.is_finite()) {
            return domain("eta has non-finite entries");
        }
        Ok(CCPDParams { nu, eta, n })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.eta.len()
    }

    pub fn is_proper(&self) -> bool {
        self.nu > 0.0 && self.eta.iter().all(|&e| e < 1.0)
    }
}

/// Product prior M ~ ML(F_M), d ~ CCPD, V ~ ML(F_V). The ML parameters are
/// held as full matrices so that zero (uniform) components are allowed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CCPCPrior {
    f_m: DMatrix<f64>,
    d_prior: CCPDParams,
    f_v: DMatrix<f64>,
}

impl CCPCPrior {
    /// `f_m` is n x p, `f_v` is p x p.
    pub fn new(f_m: DMatrix<f64>, d_prior: CCPDParams, f_v: DMatrix<f64>) -> Result<Self> {
        check_matrix(&f_m, "F_M")?;
        let (n, p) = f_m.shape();
        if f_v.shape() != (p, p) || d_prior.p() != p || d_prior.n() != n {
            return Err(Error::Shape(format!(
                "F_M is {n}x{p}, F_V is {}x{}, CCPD has p={} n={}",
                f_v.nrows(),
                f_v.ncols(),
                d_prior.p(),
                d_prior.n()
            )));
        }
        if f_v.iter().any(|x| !x.is_finite()) {
            return domain("F_V has non-finite entries");
        }
        Ok(CCPCPrior { f_m, d_prior, f_v })
    }

    pub fn from_ml(m_prior: &MLParams, d_prior: CCPDParams, v_prior: &MLParams) -> Result<Self> {
        CCPCPrior::new(m_prior.f(), d_prior, v_prior.f())
    }

    /// Flat on all three components.
    pub fn uniform(n: usize, p: usize) -> Result<Self> {
        CCPCPrior::new(DMatrix::zeros(n, p), CCPDParams::new(0.0, vec![0.0; p], n)?, DMatrix::zeros(p, p))
    }

    /// Orientation priors centred on (M, V) with common concentration
    /// `kappa`, and d ~ CCPD(nu, h(d)).
    pub fn informative(
        m: &StiefelPoint,
        d: &[f64],
        v: &StiefelPoint,
        nu: f64,
        kappa: f64,
        ctl: &SeriesControl,
    ) -> Result<Self> {
        let eta = matfn::h(m.n(), d, ctl)?;
        CCPCPrior::new(m.matrix() * kappa, CCPDParams::new(nu, eta, m.n())?, v.matrix() * kappa)
    }

    pub fn f_m(&self) -> &DMatrix<f64> {
        &self.f_m
    }

    pub fn f_v(&self) -> &DMatrix<f64> {
        &self.f_v
    }

    pub fn d_prior(&self) -> &CCPDParams {
        &self.d_prior
    }

    /// G0 with prior kernel etr(G0 M).
    pub fn g0(&self) -> DMatrix<f64> {
        self.f_m.transpose()
    }

    /// H0 with prior kernel etr(H0 V).
    pub fn h0(&self) -> DMatrix<f64> {
        self.f_v.transpose()
    }

    pub fn n(&self) -> usize {
        self.f_m.nrows()
    }

    pub fn p(&self) -> usize {
        self.f_m.ncols()
    }
}

fn trace_term(m: &DMatrix<f64>, d: &[f64], v: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    // tr(V D M^T A) = sum_j d_j (M^T A V)_jj
    let core = m.transpose() * a * v;
    d.iter().enumerate().map(|(j, &dj)| dj * core[(j, j)]).sum()
}

/// nu tr(V D M^T Psi) - nu log 0F1(n/2, D^2/4).
pub fn jcpd_log_kernel(
    m: &DMatrix<f64>,
    d: &[f64],
    v: &DMatrix<f64>,
    prior: &JCPDParams,
    ctl: &SeriesControl,
) -> Result<LogScalar> {
    let (n, p) = prior.psi.shape();
    if m.shape() != (n, p) || d.len() != p || v.shape() != (p, p) {
        return Err(Error::Shape(format!("parameters do not match a {n}x{p} prior")));
    }
    if prior.nu == 0.0 {
        return Ok(LogScalar::new(0.0));
    }
    let lf = matfn::log_0f1_ml(n, d, ctl)?.ln();
    Ok(LogScalar::new(prior.nu * (trace_term(m, d, v, &prior.psi) - lf)))
}

/// nu eta^T d - nu log 0F1(n/2, D^2/4).
pub fn ccpd_log_kernel(d: &[f64], prior: &CCPDParams, ctl: &SeriesControl) -> Result<LogScalar> {
    if d.len() != prior.p() {
        return Err(Error::Shape(format!("d has {} entries, prior has {}", d.len(), prior.p())));
    }
    if d.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return domain(format!("concentrations must be positive: {d:?}"));
    }
    if prior.nu == 0.0 {
        return Ok(LogScalar::new(0.0));
    }
    let lin: f64 = prior.eta.iter().zip(d).map(|(e, x)| e * x).sum();
    let lf = matfn::log_0f1_ml(prior.n, d, ctl)?.ln();
    Ok(LogScalar::new(prior.nu * (lin - lf)))
}

/// The mode h^{-1}(eta), in the order of eta.
pub fn ccpd_mode(prior: &CCPDParams, ctl: &SeriesControl) -> Result<Vec<f64>> {
    if let Some(e) = prior.eta.iter().find(|&&e| e <= 0.0) {
        return Err(Error::NoInteriorMode(format!("eta component {e} <= 0, density decreasing in that direction")));
    }
    if let Some(e) = prior.eta.iter().find(|&&e| e >= 1.0) {
        return Err(Error::Improper(format!("eta component {e} >= 1")));
    }
    let mut order: Vec<usize> = (0..prior.p()).collect();
    order.sort_by(|&a, &b| prior.eta[b].total_cmp(&prior.eta[a]));
    let sorted: Vec<f64> = order.iter().map(|&i| prior.eta[i]).collect();
    let inv = matfn::h_inv(&sorted, prior.n, ctl)?;
    for w in &inv.warnings {
        log::warn!("{w}");
    }
    let mut out = vec![0.0; prior.p()];
    for (k, &i) in order.iter().enumerate() {
        out[i] = inv.d.as_slice()[k];
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeTriple {
    pub m: StiefelPoint,
    pub d: Vec<f64>,
    pub v: StiefelPoint,
    pub warnings: Vec<String>,
}

impl ModeTriple {
    pub fn f(&self) -> DMatrix<f64> {
        compose(self.m.matrix(), &self.d, self.v.matrix())
    }
}

/// (M_Psi, h^{-1}(d_Psi), V_Psi) from the unique SVD of Psi; independent of nu.
pub fn jcpd_mode(prior: &JCPDParams, ctl: &SeriesControl) -> Result<ModeTriple> {
    if !(prior.nu > 0.0) {
        return Err(Error::Improper("nu = 0: the flat prior has no mode".into()));
    }
    let svd = unique_svd(&prior.psi)?;
    if svd.d[0] >= 1.0 - BOUNDARY_TOL {
        return Err(Error::Improper(format!("||Psi||_2 = {} is not below 1", svd.d[0])));
    }
    for w in &svd.warnings {
        log::warn!("{w}");
    }
    let d = ccpd_mode(&CCPDParams::new(prior.nu, svd.d.clone(), prior.n())?, ctl)?;
    Ok(ModeTriple { m: svd.m, d, v: svd.v, warnings: svd.warnings })
}

/// Arithmetic mean of the observations.
pub fn sample_mean(data: &[StiefelPoint]) -> Result<DMatrix<f64>> {
    let first = data.first().ok_or_else(|| Error::Invalid("empty dataset".into()))?;
    let (n, p) = (first.n(), first.p());
    let mut sum = DMatrix::zeros(n, p);
    for x in data {
        if x.n() != n || x.p() != p {
            return Err(Error::Shape(format!("observation is {}x{}, expected {n}x{p}", x.n(), x.p())));
        }
        sum += x.matrix();
    }
    Ok(sum / data.len() as f64)
}

/// How a prior is chosen.
#[derive(Debug, Clone)]
pub enum Belief<'a> {
    /// Prior mode at (M, d, V) with strength nu.
    Informative { m: &'a StiefelPoint, d: &'a [f64], v: &'a StiefelPoint, nu: f64 },
    /// Psi = sample mean; nu defaults to ceil(N / 10).
    Empirical { data: &'a [StiefelPoint], nu: Option<f64> },
    Uniform { n: usize, p: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selected {
    pub prior: JCPDParams,
    pub warnings: Vec<String>,
}

pub fn select_hyperparameters(belief: Belief<'_>, ctl: &SeriesControl) -> Result<Selected> {
    let mut warnings = Vec::new();
    let prior = match belief {
        Belief::Informative { m, d, v, nu } => {
            if d.len() != m.p() || v.n() != m.p() || v.p() != m.p() {
                return Err(Error::Shape("belief components do not agree".into()));
            }
            if !(nu > 0.0) {
                return domain("an informative prior needs nu > 0");
            }
            matfn::ConcVector::new(d.to_vec(), m.n())?;
            let eta = matfn::h(m.n(), d, ctl)?;
            JCPDParams::new(nu, compose(m.matrix(), &eta, v.matrix()))?
        }
        Belief::Empirical { data, nu } => {
            let wbar = sample_mean(data)?;
            let cap = (0.1 * data.len() as f64).ceil();
            let nu = match nu {
                Some(v) => {
                    if v > cap {
                        warnings.push(format!("nu = {v} exceeds 10% of the sample size ({cap})"));
                    }
                    v
                }
                None => cap,
            };
            let norm = spectral_norm(&wbar);
            if norm >= 1.0 - BOUNDARY_TOL {
                warnings.push(format!("||W_bar||_2 = {norm} is not below 1; the prior is improper"));
            }
            JCPDParams::new(nu, wbar)?
        }
        Belief::Uniform { n, p } => JCPDParams::uniform(n, p)?,
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Selected { prior, warnings })
}

/// JCPD(nu + N, (nu Psi + N W_bar) / (nu + N)).
pub fn posterior_update(prior: &JCPDParams, data: &[StiefelPoint]) -> Result<JCPDParams> {
    let wbar = sample_mean(data)?;
    if wbar.shape() != prior.psi.shape() {
        return Err(Error::Shape("data and prior dimensions differ".into()));
    }
    let big_n = data.len() as f64;
    let nu = prior.nu + big_n;
    let psi = (&prior.psi * prior.nu + wbar * big_n) / nu;
    JCPDParams::new(nu, psi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Propriety {
    Proper,
    /// ||Psi_hat||_2 equals one to within `BOUNDARY_TOL`.
    Boundary,
    Improper,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProprietyReport {
    pub status: Propriety,
    pub nu_post: f64,
    pub psi_norm: f64,
    /// N >= 2 when p < n, N >= 3 when p = n >= 3; false when p = n <= 2,
    /// a case the sample-size rule does not cover.
    pub sample_size_rule: bool,
    pub notes: Vec<String>,
}

impl ProprietyReport {
    pub fn is_proper(&self) -> bool {
        self.status == Propriety::Proper
    }

    /// Error describing the violated condition, if any.
    pub fn require(&self) -> Result<()> {
        if self.is_proper() {
            Ok(())
        } else {
            Err(Error::Improper(self.notes.join("; ")))
        }
    }
}

pub fn check_posterior_propriety(prior: &JCPDParams, data: &[StiefelPoint]) -> ProprietyReport {
    let (n, p) = (prior.n(), prior.p());
    let big_n = data.len();
    let post = if data.is_empty() { Ok(prior.clone()) } else { posterior_update(prior, data) };
    let mut notes = Vec::new();
    let (nu_post, psi_norm) = match &post {
        Ok(q) => (q.nu, spectral_norm(&q.psi)),
        Err(e) => {
            notes.push(e.to_string());
            (prior.nu, f64::NAN)
        }
    };
    let sample_size_rule = if p < n {
        big_n >= 2
    } else {
        p >= 3 && big_n >= 3
    };
    let status = if post.is_err() || !(nu_post > 0.0) {
        notes.push(format!("posterior concentration nu = {nu_post} is not positive"));
        Propriety::Improper
    } else if (psi_norm - 1.0).abs() <= BOUNDARY_TOL {
        notes.push(format!("||Psi_hat||_2 = {psi_norm} lies on the boundary 1"));
        Propriety::Boundary
    } else if psi_norm > 1.0 {
        notes.push(format!("||Psi_hat||_2 = {psi_norm} exceeds 1"));
        Propriety::Improper
    } else {
        Propriety::Proper
    };
    if !sample_size_rule {
        notes.push(if p < n {
            format!("N = {big_n}: the almost-sure guarantee needs N >= 2 when p < n")
        } else if p >= 3 {
            format!("N = {big_n}: the almost-sure guarantee needs N >= 3 when p = n >= 3")
        } else {
            format!("p = n = {p}: no sample-size guarantee; propriety rests on ||Psi_hat||_2 alone")
        });
    }
    ProprietyReport { status, nu_post, psi_norm, sample_size_rule, notes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matfn::ConcVector;
    use crate::stiefel::haar_sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame32() -> StiefelPoint {
        StiefelPoint::new(DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0])).unwrap()
    }

    fn eye2() -> StiefelPoint {
        StiefelPoint::new(DMatrix::identity(2, 2)).unwrap()
    }

    #[test]
    fn ccpd_mode_recovers_seven_five() {
        let ctl = SeriesControl::default();
        let eta = matfn::h(3, &[7.0, 5.0], &ctl).unwrap();
        let m = ccpd_mode(&CCPDParams::new(10.0, eta, 3).unwrap(), &ctl).unwrap();
        assert!((m[0] - 7.0).abs() < 1e-6 && (m[1] - 5.0).abs() < 1e-6);
        let again = ccpd_mode(&CCPDParams::new(10.0, vec![0.89, 0.85], 3).unwrap(), &ctl).unwrap();
        assert!(again[0] > again[1] && again[1] > 0.0);
    }

    #[test]
    fn ccpd_mode_symmetric_and_errors() {
        let ctl = SeriesControl::default();
        let m = ccpd_mode(&CCPDParams::new(1.0, vec![0.5, 0.5], 3).unwrap(), &ctl).unwrap();
        assert!((m[0] - m[1]).abs() < 1e-5);
        assert!(matches!(
            ccpd_mode(&CCPDParams::new(1.0, vec![0.5, -0.1], 3).unwrap(), &ctl),
            Err(Error::NoInteriorMode(_))
        ));
        assert!(matches!(ccpd_mode(&CCPDParams::new(1.0, vec![1.0, 0.5], 3).unwrap(), &ctl), Err(Error::Improper(_))));
    }

    #[test]
    fn ccpd_mode_maximizes_kernel_and_ignores_nu() {
        let ctl = SeriesControl::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let a: f64 = rng.random_range(0.1..0.95);
            let b: f64 = rng.random_range(0.05..a);
            let m1 = ccpd_mode(&CCPDParams::new(1.0, vec![a, b], 4).unwrap(), &ctl).unwrap();
            let m2 = ccpd_mode(&CCPDParams::new(50.0, vec![a, b], 4).unwrap(), &ctl).unwrap();
            assert_eq!(m1, m2);
            let hv = matfn::h(4, &m1, &ctl).unwrap();
            assert!((hv[0] - a).abs() < 1e-6 && (hv[1] - b).abs() < 1e-6);
            let pr = CCPDParams::new(3.0, vec![a, b], 4).unwrap();
            let top = ccpd_log_kernel(&m1, &pr, &ctl).unwrap().ln();
            for _ in 0..20 {
                let x = [m1[0] * rng.random_range(0.7..1.3), m1[1] * rng.random_range(0.7..1.3)];
                assert!(ccpd_log_kernel(&x, &pr, &ctl).unwrap().ln() <= top + 1e-12);
            }
        }
    }

    #[test]
    fn jcpd_mode_of_example_prior() {
        let ctl = SeriesControl::default();
        let m = frame32();
        let sel = select_hyperparameters(Belief::Informative { m: &m, d: &[7.0, 5.0], v: &eye2(), nu: 10.0 }, &ctl).unwrap();
        let psi = sel.prior.psi();
        assert!((psi[(0, 0)] - 0.882412475613591).abs() < 1e-9);
        assert!((psi[(1, 1)] - 0.849963898454045).abs() < 1e-9);
        assert!(psi[(0, 1)].abs() + psi[(1, 0)].abs() + psi[(2, 0)].abs() + psi[(2, 1)].abs() < 1e-15);
        let mode = jcpd_mode(&sel.prior, &ctl).unwrap();
        assert!((mode.d[0] - 7.0).abs() < 1e-6 && (mode.d[1] - 5.0).abs() < 1e-6);
        assert!((mode.m.matrix() - m.matrix()).amax() < 1e-12);
        assert!((mode.v.matrix() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
        let stronger = JCPDParams::new(1000.0, psi.clone()).unwrap();
        assert_eq!(jcpd_mode(&stronger, &ctl).unwrap().d, mode.d);
    }

    #[test]
    fn jcpd_kernel_peaks_at_mode_and_splits_by_trace() {
        let ctl = SeriesControl::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let psi = DMatrix::from_row_slice(3, 2, &[0.5, 0.1, -0.2, 0.6, 0.3, 0.1]);
        let prior = JCPDParams::new(4.0, psi.clone()).unwrap();
        let mode = jcpd_mode(&prior, &ctl).unwrap();
        let top = jcpd_log_kernel(mode.m.matrix(), &mode.d, mode.v.matrix(), &prior, &ctl).unwrap().ln();
        for _ in 0..2000 {
            let m = haar_sample(3, 2, &mut rng).unwrap();
            let v = haar_sample(2, 2, &mut rng).unwrap();
            let d = [rng.random_range(0.01..8.0), rng.random_range(0.01..8.0)];
            let k = jcpd_log_kernel(m.matrix(), &d, v.matrix(), &prior, &ctl).unwrap().ln();
            assert!(k <= top);
            let core = m.matrix().transpose() * &psi * v.matrix();
            let cc = CCPDParams::new(4.0, vec![core[(0, 0)], core[(1, 1)]], 3).unwrap();
            let via = ccpd_log_kernel(&d, &cc, &ctl).unwrap().ln();
            assert!((k - via).abs() < 1e-10 * k.abs().max(1.0));
        }
        let flat = JCPDParams::uniform(3, 2).unwrap();
        assert_eq!(jcpd_log_kernel(mode.m.matrix(), &mode.d, mode.v.matrix(), &flat, &ctl).unwrap().ln(), 0.0);
    }

    #[test]
    fn ccpd_kernel_concave_on_segments() {
        let ctl = SeriesControl::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let pr = CCPDParams::new(rng.random_range(0.5..5.0), vec![rng.random_range(-0.5..1.5), rng.random_range(-0.5..1.5)], 3).unwrap();
            let a = [rng.random_range(0.01..20.0), rng.random_range(0.01..20.0)];
            let b = [rng.random_range(0.01..20.0), rng.random_range(0.01..20.0)];
            let f = |t: f64| {
                let x = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                ccpd_log_kernel(&x, &pr, &ctl).unwrap().ln()
            };
            let (f0, fh, f1) = (f(0.0), f(0.5), f(1.0));
            assert!(fh >= 0.5 * (f0 + f1) - 1e-9 * (f0.abs() + f1.abs() + 1.0));
        }
        let bad = CCPDParams::new(1.0, vec![1.2, 0.1], 3).unwrap();
        assert!(!bad.is_proper());
        assert!(ccpd_log_kernel(&[2.0, 1.0], &bad, &ctl).is_ok());
        assert!(ccpd_log_kernel(&[2.0, 0.0], &bad, &ctl).is_err());
    }

    #[test]
    fn posterior_update_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data: Vec<StiefelPoint> = (0..28).map(|_| haar_sample(3, 2, &mut rng).unwrap()).collect();
        let wbar = sample_mean(&data).unwrap();
        let flat = JCPDParams::uniform(3, 2).unwrap();
        let post = posterior_update(&flat, &data).unwrap();
        assert_eq!(post.nu(), 28.0);
        assert!((post.psi() - &wbar).amax() < 1e-15);
        let fixed = posterior_update(&JCPDParams::new(5.0, wbar.clone()).unwrap(), &data).unwrap();
        assert!((fixed.psi() - &wbar).amax() < 1e-15);
        let psi = DMatrix::from_element(3, 2, 0.1);
        let equal = posterior_update(&JCPDParams::new(28.0, psi.clone()).unwrap(), &data).unwrap();
        assert!((equal.psi() - (&psi + &wbar) / 2.0).amax() < 1e-15);
        let seq = posterior_update(&posterior_update(&JCPDParams::new(3.0, psi.clone()).unwrap(), &data[..10]).unwrap(), &data[10..]).unwrap();
        let once = posterior_update(&JCPDParams::new(3.0, psi).unwrap(), &data).unwrap();
        assert_eq!(seq.nu(), once.nu());
        assert!((seq.psi() - once.psi()).amax() < 1e-15);
    }

    #[test]
    fn empirical_and_uniform_selection() {
        let ctl = SeriesControl::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data: Vec<StiefelPoint> = (0..45).map(|_| haar_sample(4, 2, &mut rng).unwrap()).collect();
        let sel = select_hyperparameters(Belief::Empirical { data: &data, nu: None }, &ctl).unwrap();
        assert_eq!(sel.prior.nu(), 5.0);
        assert_eq!(sel.prior.psi(), &sample_mean(&data).unwrap());
        let over = select_hyperparameters(Belief::Empirical { data: &data, nu: Some(20.0) }, &ctl).unwrap();
        assert_eq!(over.warnings.len(), 1);
        let uni = select_hyperparameters(Belief::Uniform { n: 4, p: 2 }, &ctl).unwrap();
        assert_eq!(uni.prior.nu(), 0.0);
        assert_eq!(uni.prior.psi(), &DMatrix::zeros(4, 2));
    }

    #[test]
    fn propriety_reports() {
        let x = frame32();
        let flat = JCPDParams::uniform(3, 2).unwrap();
        let one = check_posterior_propriety(&flat, std::slice::from_ref(&x));
        assert_eq!(one.status, Propriety::Boundary);
        assert!(!one.sample_size_rule && one.require().is_err());
        let big = JCPDParams::new(2.0, DMatrix::from_row_slice(3, 2, &[1.5, 0.0, 0.0, 0.2, 0.0, 0.0])).unwrap();
        assert_eq!(check_posterior_propriety(&big, &[]).status, Propriety::Improper);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<StiefelPoint> = (0..5).map(|_| haar_sample(3, 3, &mut rng).unwrap()).collect();
        let rep = check_posterior_propriety(&JCPDParams::uniform(3, 3).unwrap(), &data);
        assert!(rep.is_proper() && rep.sample_size_rule);
        let rep = check_posterior_propriety(&JCPDParams::uniform(3, 3).unwrap(), &data[..2]);
        assert!(!rep.sample_size_rule);
    }

    #[test]
    fn ccpc_prior_shapes() {
        let ctl = SeriesControl::default();
        let u = CCPCPrior::uniform(3, 2).unwrap();
        assert_eq!(u.g0().shape(), (2, 3));
        assert_eq!(u.h0().shape(), (2, 2));
        let theta = MLParams::new(frame32(), ConcVector::new(vec![2.0, 1.0], 3).unwrap(), eye2()).unwrap();
        let vp = MLParams::new(eye2(), ConcVector::new(vec![2.0, 1.0], 2).unwrap(), eye2()).unwrap();
        let c = CCPCPrior::from_ml(&theta, CCPDParams::new(1.0, vec![0.5, 0.4], 3).unwrap(), &vp).unwrap();
        assert_eq!(c.g0(), theta.f().transpose());
        let inf = CCPCPrior::informative(&frame32(), &[7.0, 5.0], &eye2(), 2.0, 3.0, &ctl).unwrap();
        assert!((inf.d_prior().eta()[0] - 0.882412475613591).abs() < 1e-9);
        assert!(CCPCPrior::new(DMatrix::zeros(3, 2), CCPDParams::new(1.0, vec![0.1], 3).unwrap(), DMatrix::zeros(2, 2)).is_err());
    }
}
