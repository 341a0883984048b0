//! Gibbs samplers for (M, d, V) under the joint and the product conjugate
//! priors. Both alternate three full conditionals: matrix Langevin for M and
//! for V, and the exact rejection sampler for each concentration.
//!
//! The d-step draws each coordinate on the whole half line, so the state may
//! leave the canonical ordering. Joint column permutations and sign flips of
//! (M, d, V) leave F and every conditional unchanged, so each sweep ends by
//! mapping the state back to its canonical representative.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::chain::{ChainMeta, Draw, PosteriorChain, PriorSpec};
use super::rejection::{CcpdStar, RejectionConfig};
use crate::error::{Error, Result};
use crate::matfn::{self, SeriesControl};
use crate::priors::{
    check_posterior_propriety, posterior_update, sample_mean, CCPCPrior, CCPDParams, JCPDParams,
};
use crate::stiefel::{ml_update, unique_svd, StiefelPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GibbsConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    /// column sweeps per matrix Langevin update, warm-started from the
    /// current state
    pub ml_scans: usize,
    pub rejection: RejectionConfig,
    pub series: SeriesControl,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            n_iter: 3000,
            burn_in: 1000,
            ml_scans: 2,
            rejection: RejectionConfig::default(),
            series: SeriesControl::default(),
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter <= self.burn_in {
            return Err(Error::Domain(format!(
                "n_iter ({}) must exceed burn_in ({})",
                self.n_iter, self.burn_in
            )));
        }
        if self.ml_scans == 0 {
            return Err(Error::Domain("ml_scans must be at least 1".into()));
        }
        self.rejection.validate()?;
        self.series.validate()
    }
}

// Everything the three conditionals need, reduced to sufficient statistics.
enum Model<'a> {
    Joint { nu: f64, psi: DMatrix<f64> },
    Product { prior: &'a CCPCPrior, big_n: f64, wbar: DMatrix<f64> },
}

impl Model<'_> {
    fn f_m(&self, d: &[f64], v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut vd = v.clone();
        for (j, &dj) in d.iter().enumerate() {
            vd.column_mut(j).scale_mut(dj);
        }
        match self {
            Model::Joint { nu, psi } => psi * vd * *nu,
            Model::Product { prior, big_n, wbar } => wbar * vd * *big_n + prior.f_m(),
        }
    }

    fn f_v(&self, m: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
        let mut md = m.clone();
        for (j, &dj) in d.iter().enumerate() {
            md.column_mut(j).scale_mut(dj);
        }
        match self {
            Model::Joint { nu, psi } => psi.transpose() * md * *nu,
            Model::Product { prior, big_n, wbar } => wbar.transpose() * md * *big_n + prior.f_v(),
        }
    }

    // (concentration, eta) of the d conditional
    fn d_conditional(&self, m: &DMatrix<f64>, v: &DMatrix<f64>) -> (f64, Vec<f64>) {
        match self {
            Model::Joint { nu, psi } => (*nu, diag_core(m, psi, v)),
            Model::Product { prior, big_n, wbar } => {
                let dp = prior.d_prior();
                let total = dp.nu() + big_n;
                let eta = diag_core(m, wbar, v)
                    .iter()
                    .zip(dp.eta())
                    .map(|(w, e)| (dp.nu() * e + big_n * w) / total)
                    .collect();
                (total, eta)
            }
        }
    }

    fn log_kernel(&self, m: &DMatrix<f64>, d: &[f64], v: &DMatrix<f64>, lf: f64) -> f64 {
        let tr = |a: &DMatrix<f64>| -> f64 { diag_core(m, a, v).iter().zip(d).map(|(x, y)| x * y).sum() };
        match self {
            Model::Joint { nu, psi } => nu * (tr(psi) - lf),
            Model::Product { prior, big_n, wbar } => {
                let dp = prior.d_prior();
                let lin: f64 = dp.eta().iter().zip(d).map(|(e, x)| e * x).sum();
                let d_part = if dp.nu() > 0.0 { dp.nu() * (lin - lf) } else { 0.0 };
                big_n * (tr(wbar) - lf) + prior.f_m().dot(m) + prior.f_v().dot(v) + d_part
            }
        }
    }
}

// diag(M^T A V)
fn diag_core(m: &DMatrix<f64>, a: &DMatrix<f64>, v: &DMatrix<f64>) -> Vec<f64> {
    let core = m.transpose() * a * v;
    (0..core.ncols()).map(|j| core[(j, j)]).collect()
}

/// Sort d descending and make the first row of M nonnegative, moving the
/// columns of M and V along.
pub(crate) fn canonicalize(m: &mut DMatrix<f64>, d: &mut [f64], v: &mut DMatrix<f64>) {
    let p = d.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
    if order.iter().enumerate().any(|(i, &o)| i != o) {
        let (m0, v0, d0) = (m.clone(), v.clone(), d.to_vec());
        for (dst, &src) in order.iter().enumerate() {
            m.set_column(dst, &m0.column(src));
            v.set_column(dst, &v0.column(src));
            d[dst] = d0[src];
        }
    }
    for j in 0..p {
        if m[(0, j)] < 0.0 {
            m.column_mut(j).neg_mut();
            v.column_mut(j).neg_mut();
        }
    }
}

// Start at the mode of JCPD(., W_bar), falling back to unit concentrations.
fn initial_state(wbar: &DMatrix<f64>, ctl: &SeriesControl) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let svd = unique_svd(wbar)?;
    let n = wbar.nrows();
    let d = if svd.d.iter().all(|&x| x > 0.0 && x < 1.0) {
        matfn::h_inv(&svd.d, n, ctl).map(|r| r.d.to_vec()).ok()
    } else {
        None
    };
    let p = svd.d.len();
    let d = d.unwrap_or_else(|| (0..p).map(|j| (p - j) as f64).collect());
    Ok((svd.m.into_matrix(), d, svd.v.into_matrix()))
}

fn ml_step<R: Rng + ?Sized>(x: &DMatrix<f64>, f: &DMatrix<f64>, scans: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    let svd = unique_svd(f)?;
    Ok(ml_update(x, svd.m.matrix(), &svd.d, svd.v.matrix(), scans, rng))
}

struct Counters {
    proposals: u64,
    draws: u64,
}

fn d_step<R: Rng + ?Sized>(
    model: &Model<'_>,
    n: usize,
    m: &DMatrix<f64>,
    d: &mut [f64],
    v: &DMatrix<f64>,
    cfg: &GibbsConfig,
    counters: &mut Counters,
    rng: &mut R,
) -> Result<()> {
    let (nu, eta) = model.d_conditional(m, v);
    for j in 0..d.len() {
        let rest: Vec<f64> = d.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, &x)| x).collect();
        let mut target = CcpdStar::from_parts(nu, eta[j], n, &rest, &cfg.series)?;
        let pieces = target.proposal(&cfg.rejection)?;
        let (x, tries) = target.draw(&pieces, &cfg.rejection, rng)?;
        d[j] = x;
        counters.proposals += tries;
        counters.draws += 1;
    }
    Ok(())
}

fn run<R: Rng + ?Sized>(
    model: Model<'_>,
    spec: PriorSpec,
    n_obs: usize,
    wbar: &DMatrix<f64>,
    cfg: &GibbsConfig,
    rng: &mut R,
) -> Result<PosteriorChain> {
    cfg.validate()?;
    let n = wbar.nrows();
    let (mut m, mut d, mut v) = initial_state(wbar, &cfg.series)?;
    let mut counters = Counters { proposals: 0, draws: 0 };
    let kept = cfg.n_iter - cfg.burn_in;
    let mut draws = Vec::with_capacity(kept);
    let mut log_kernels = Vec::with_capacity(kept);
    let mut log_likelihoods = Vec::with_capacity(kept);
    for it in 0..cfg.n_iter {
        let wrap = |e: Error| Error::Gibbs { iteration: it, source: Box::new(e) };
        m = ml_step(&m, &model.f_m(&d, &v), cfg.ml_scans, rng).map_err(wrap)?;
        d_step(&model, n, &m, &mut d, &v, cfg, &mut counters, rng).map_err(wrap)?;
        v = ml_step(&v, &model.f_v(&m, &d), cfg.ml_scans, rng).map_err(wrap)?;
        canonicalize(&mut m, &mut d, &mut v);
        if it >= cfg.burn_in {
            let lf = matfn::log_0f1_ml(n, &d, &cfg.series).map_err(wrap)?.ln();
            log_kernels.push(model.log_kernel(&m, &d, &v, lf));
            let tr: f64 = diag_core(&m, wbar, &v).iter().zip(&d).map(|(x, y)| x * y).sum();
            log_likelihoods.push(n_obs as f64 * (tr - lf));
            draws.push(Draw { m: m.clone(), d: d.clone(), v: v.clone() });
        }
    }
    Ok(PosteriorChain {
        draws,
        log_kernels,
        log_likelihoods,
        meta: ChainMeta {
            prior: spec,
            n_obs,
            n_iter: cfg.n_iter,
            burn_in: cfg.burn_in,
            seed: None,
            proposals: counters.proposals,
            concentration_draws: counters.draws,
        },
    })
}

/// Posterior draws under a JCPD prior.
pub fn gibbs_jcpc<R: Rng + ?Sized>(
    data: &[StiefelPoint],
    prior: &JCPDParams,
    cfg: &GibbsConfig,
    rng: &mut R,
) -> Result<PosteriorChain> {
    check_posterior_propriety(prior, data).require()?;
    let post = posterior_update(prior, data)?;
    let wbar = sample_mean(data)?;
    let model = Model::Joint { nu: post.nu(), psi: post.psi().clone() };
    run(model, PriorSpec::Jcpc(prior.clone()), data.len(), &wbar, cfg, rng)
}

/// Posterior draws under the product prior.
pub fn gibbs_ccpc<R: Rng + ?Sized>(
    data: &[StiefelPoint],
    prior: &CCPCPrior,
    cfg: &GibbsConfig,
    rng: &mut R,
) -> Result<PosteriorChain> {
    let wbar = sample_mean(data)?;
    if wbar.shape() != (prior.n(), prior.p()) {
        return Err(Error::Shape("data and prior dimensions differ".into()));
    }
    if prior.d_prior().eta().iter().any(|&e| e >= 1.0) && prior.d_prior().nu() > 0.0 {
        return Err(Error::Improper("the concentration prior has eta >= 1".into()));
    }
    let model = Model::Product { prior, big_n: data.len() as f64, wbar: wbar.clone() };
    run(model, PriorSpec::Ccpc(prior.clone()), data.len(), &wbar, cfg, rng)
}

/// Draws from CCPD(nu, eta) by coordinate-wise Gibbs over the exact
/// one-dimensional conditionals.
pub fn sample_ccpd<R: Rng + ?Sized>(
    prior: &CCPDParams,
    count: usize,
    burn_in: usize,
    rejection: &RejectionConfig,
    ctl: &SeriesControl,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if !prior.is_proper() {
        return Err(Error::Improper(format!("CCPD(nu={}, eta={:?})", prior.nu(), prior.eta())));
    }
    let p = prior.p();
    let mut x: Vec<f64> = vec![1.0; p];
    let mut out = Vec::with_capacity(count);
    for it in 0..burn_in + count {
        for j in 0..p {
            let rest: Vec<f64> = x.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, &v)| v).collect();
            let mut t = CcpdStar::from_parts(prior.nu(), prior.eta()[j], prior.n(), &rest, ctl)
                .map_err(|e| Error::Gibbs { iteration: it, source: Box::new(e) })?;
            let pieces = t.proposal(rejection)?;
            x[j] = t.draw(&pieces, rejection, rng)?.0;
        }
        if it >= burn_in {
            out.push(x.clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matfn::ConcVector;
    use crate::priors::ccpd_log_kernel;
    use crate::stiefel::{ml_sample_chain, orthonormality_error, MLParams, ORTHO_TOL};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn truth(d: &[f64]) -> MLParams {
        let n = 3;
        let mut m = DMatrix::zeros(n, 2);
        m[(0, 0)] = 1.0;
        m[(1, 1)] = 1.0;
        MLParams::new(
            StiefelPoint::new(m).unwrap(),
            ConcVector::new(d.to_vec(), n).unwrap(),
            StiefelPoint::new(DMatrix::identity(2, 2)).unwrap(),
        )
        .unwrap()
    }

    fn data(big_n: usize, seed: u64) -> Vec<StiefelPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ml_sample_chain(&truth(&[12.0, 5.0]), big_n, 10, &mut rng).unwrap()
    }

    fn mean_d(chain: &PosteriorChain, range: std::ops::Range<usize>) -> Vec<f64> {
        let k = range.len() as f64;
        let mut s = vec![0.0; 2];
        for dr in &chain.draws[range] {
            s[0] += dr.d[0];
            s[1] += dr.d[1];
        }
        s.iter().map(|x| x / k).collect()
    }

    #[test]
    fn canonical_form_is_restored() {
        let mut m = DMatrix::from_row_slice(3, 2, &[-0.6, 0.8, 0.0, 0.0, 0.8, 0.6]);
        let mut v = DMatrix::<f64>::identity(2, 2);
        let mut d = vec![2.0, 7.0];
        let f0 = compose_f(&m, &d, &v);
        canonicalize(&mut m, &mut d, &mut v);
        assert_eq!(d, vec![7.0, 2.0]);
        assert!(m.row(0).iter().all(|&x| x >= 0.0));
        assert!((compose_f(&m, &d, &v) - f0).abs().max() < 1e-14);
    }

    fn compose_f(m: &DMatrix<f64>, d: &[f64], v: &DMatrix<f64>) -> DMatrix<f64> {
        crate::stiefel::compose(m, d, v)
    }

    #[test]
    fn jcpc_chain_is_stationary_and_canonical() {
        let obs = data(300, 1);
        let cfg = GibbsConfig { n_iter: 1400, burn_in: 200, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let chain = gibbs_jcpc(&obs, &JCPDParams::uniform(3, 2).unwrap(), &cfg, &mut rng).unwrap();
        assert_eq!(chain.len(), 1200);
        for dr in &chain.draws {
            assert!(dr.d[0] >= dr.d[1] && dr.d[1] > 0.0);
            assert!(dr.m.row(0).iter().all(|&x| x >= 0.0));
            assert!(orthonormality_error(&dr.m) < ORTHO_TOL && orthonormality_error(&dr.v) < ORTHO_TOL);
        }
        // both halves agree, and both sit near the truth
        let a = mean_d(&chain, 0..600);
        let b = mean_d(&chain, 600..1200);
        for j in 0..2 {
            assert!((a[j] - b[j]).abs() < 0.08 * a[j], "halves {a:?} {b:?}");
        }
        assert!((a[0] - 12.0).abs() < 2.0 && (a[1] - 5.0).abs() < 1.0, "{a:?}");
        assert!(chain.meta.acceptance_rate() > 0.6);
        assert!(chain.log_kernels.iter().chain(&chain.log_likelihoods).all(|x| x.is_finite()));
    }

    #[test]
    fn flat_product_prior_matches_flat_joint_prior() {
        // with no prior information both samplers run the same conditionals
        let obs = data(100, 3);
        let cfg = GibbsConfig { n_iter: 60, burn_in: 10, ..Default::default() };
        let a = gibbs_jcpc(&obs, &JCPDParams::uniform(3, 2).unwrap(), &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = gibbs_ccpc(&obs, &CCPCPrior::uniform(3, 2).unwrap(), &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for (x, y) in a.draws.iter().zip(&b.draws) {
            assert!((x.f() - y.f()).abs().max() < 1e-8);
        }
    }

    #[test]
    fn strong_prior_dominates() {
        // a very concentrated product prior pulls d to its mode
        let obs = data(20, 4);
        let ctl = SeriesControl::default();
        let mut m = DMatrix::zeros(3, 2);
        m[(0, 0)] = 1.0;
        m[(1, 1)] = 1.0;
        let prior = CCPCPrior::informative(
            &StiefelPoint::new(m).unwrap(),
            &[3.0, 1.5],
            &StiefelPoint::new(DMatrix::identity(2, 2)).unwrap(),
            20000.0,
            0.0,
            &ctl,
        )
        .unwrap();
        let cfg = GibbsConfig { n_iter: 300, burn_in: 50, ..Default::default() };
        let chain = gibbs_ccpc(&obs, &prior, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let md = mean_d(&chain, 0..chain.len());
        assert!((md[0] - 3.0).abs() < 0.15 && (md[1] - 1.5).abs() < 0.15, "{md:?}");
    }

    #[test]
    fn ccpd_draws_match_quadrature() {
        let ctl = SeriesControl::default();
        let prior = CCPDParams::new(5.0, vec![0.6, 0.3], 3).unwrap();
        // grid moments of the two-dimensional density
        let h = 0.05;
        let (mut z, mut s0, mut s1) = (0.0, 0.0, 0.0);
        let mut lk = Vec::new();
        for i in 0..500 {
            for j in 0..500 {
                let x = [h * (i as f64 + 0.5), h * (j as f64 + 0.5)];
                lk.push((x, ccpd_log_kernel(&x, &prior, &ctl).unwrap().ln()));
            }
        }
        let top = lk.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
        for (x, l) in &lk {
            let w = (l - top).exp();
            z += w;
            s0 += w * x[0];
            s1 += w * x[1];
        }
        let exact = [s0 / z, s1 / z];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = sample_ccpd(&prior, 6000, 100, &RejectionConfig::default(), &ctl, &mut rng).unwrap();
        let got: Vec<f64> = (0..2).map(|j| draws.iter().map(|x| x[j]).sum::<f64>() / draws.len() as f64).collect();
        for j in 0..2 {
            assert!((got[j] - exact[j]).abs() < 0.05 * exact[j], "{got:?} vs {exact:?}");
        }
    }

    #[test]
    fn improper_ccpd_is_refused() {
        let prior = CCPDParams::new(2.0, vec![1.2, 0.3], 3).unwrap();
        let r = sample_ccpd(&prior, 1, 0, &RejectionConfig::default(), &SeriesControl::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::Improper(_))));
    }
}
