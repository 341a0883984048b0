//! Estimation and testing on top of the samplers: posterior modes, posterior
//! means of F with entrywise spread, repeated-sampling consistency runs and a
//! two-sample Bayes factor from harmonic-mean marginal likelihoods.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matfn::{log_sum_exp, SeriesControl};
use crate::priors::{check_posterior_propriety, jcpd_mode, posterior_update, sample_mean, JCPDParams, ModeTriple};
use crate::samplers::{gibbs_jcpc, GibbsConfig};
use crate::stiefel::{ml_sample, MLParams, StiefelPoint};

pub use crate::samplers::PosteriorChain;

/// Log-likelihood spread across draws above which the harmonic mean is
/// flagged as unreliable.
pub const HME_RANGE_LIMIT: f64 = 50.0;

/// Mode of the JCPD posterior.
pub fn posterior_mode(prior: &JCPDParams, data: &[StiefelPoint], ctl: &SeriesControl) -> Result<ModeTriple> {
    check_posterior_propriety(prior, data).require()?;
    jcpd_mode(&posterior_update(prior, data)?, ctl)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FSummary {
    pub mean: DMatrix<f64>,
    pub sd: DMatrix<f64>,
}

/// Entrywise posterior mean and standard deviation of F = M diag(d) V^T.
pub fn posterior_mean_f(chain: &PosteriorChain) -> Result<FSummary> {
    let first = chain.draws.first().ok_or_else(|| Error::Invalid("empty chain".into()))?;
    let (n, p) = first.m.shape();
    let k = chain.len() as f64;
    let mut mean = DMatrix::zeros(n, p);
    let mut sq = DMatrix::zeros(n, p);
    // two passes keep the variance free of cancellation
    let fs: Vec<DMatrix<f64>> = chain.draws.iter().map(|d| d.f()).collect();
    for f in &fs {
        mean += f;
    }
    mean /= k;
    for f in &fs {
        let e = f - &mean;
        sq += e.component_mul(&e);
    }
    let denom = if chain.len() > 1 { k - 1.0 } else { 1.0 };
    Ok(FSummary { mean, sd: (sq / denom).map(f64::sqrt) })
}

/// Frobenius norm of F_hat - F_true relative to that of F_true.
pub fn relative_error(f_hat: &DMatrix<f64>, f_true: &DMatrix<f64>) -> Result<f64> {
    if f_hat.shape() != f_true.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", f_hat.shape(), f_true.shape())));
    }
    let denom = f_true.norm();
    if denom == 0.0 {
        return Err(Error::Domain("reference matrix is zero".into()));
    }
    Ok((f_hat - f_true).norm() / denom)
}

/// Standard error of the mean of a correlated series by non-overlapping
/// batch means. Uses about sqrt(len) batches when `batches` is None.
pub fn batch_means_se(xs: &[f64], batches: Option<usize>) -> Result<f64> {
    let b = batches.unwrap_or_else(|| (xs.len() as f64).sqrt().floor() as usize);
    if b < 2 || xs.len() < 2 * b {
        return Err(Error::Invalid(format!("{} values cannot form {b} batches", xs.len())));
    }
    let size = xs.len() / b;
    let means: Vec<f64> = (0..b).map(|i| xs[i * size..(i + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let grand = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (b - 1) as f64;
    Ok((var / b as f64).sqrt())
}

/// `count` independent ML draws.
pub fn simulate_data<R: Rng + ?Sized>(theta: &MLParams, count: usize, rng: &mut R) -> Result<Vec<StiefelPoint>> {
    (0..count).map(|_| ml_sample(theta, rng)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyRow {
    pub n_obs: usize,
    /// relative error of the posterior-mode F, one per replicate
    pub errors: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyTable {
    pub rows: Vec<ConsistencyRow>,
}

impl ConsistencyTable {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n_obs", "replicate", "relative_error"]).map_err(crate::samplers::csv_err)?;
        for row in &self.rows {
            for (i, e) in row.errors.iter().enumerate() {
                w.write_record([row.n_obs.to_string(), i.to_string(), format!("{e:e}")])
                    .map_err(crate::samplers::csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    let sd = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt() } else { 0.0 };
    (mean, sd)
}

/// Replicate `replicates` datasets at each sample size and record the error
/// of the posterior mode under the uniform prior. Replicate r at every size
/// uses its own stream seeded from `rng`, so results do not depend on the
/// thread count.
pub fn consistency_experiment<R: Rng + ?Sized>(
    theta: &MLParams,
    sizes: &[usize],
    replicates: usize,
    ctl: &SeriesControl,
    rng: &mut R,
) -> Result<ConsistencyTable> {
    if replicates == 0 || sizes.is_empty() {
        return Err(Error::Invalid("need at least one size and one replicate".into()));
    }
    let f_true = theta.f();
    let prior = JCPDParams::uniform(theta.n(), theta.p())?;
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let seeds: Vec<u64> = (0..replicates).map(|_| rng.random()).collect();
        let errors = seeds
            .par_iter()
            .map(|&s| {
                let mut r = ChaCha8Rng::seed_from_u64(s);
                let data = simulate_data(theta, size, &mut r)?;
                let mode = posterior_mode(&prior, &data, ctl)?;
                relative_error(&mode.f(), &f_true)
            })
            .collect::<Result<Vec<f64>>>()?;
        let (mean, sd) = mean_sd(&errors);
        rows.push(ConsistencyRow { n_obs: size, errors, mean, sd });
    }
    Ok(ConsistencyTable { rows })
}

/// Two-sample Bayes factor for H0: both groups share one ML distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    /// log B01, positive values favour the shared-parameter model
    pub log_bayes_factor: f64,
    pub model0_logml: f64,
    pub model1_logml: f64,
    pub decision_note: String,
    /// true when some chain's log-likelihoods spread over more than
    /// `HME_RANGE_LIMIT` nats
    pub hme_unstable: bool,
    pub loglik_ranges: [f64; 3],
    pub acceptance_rates: [f64; 3],
}

impl TestResult {
    pub fn new(model0_logml: f64, model1_logml: f64, hme_unstable: bool) -> Self {
        let lbf = model0_logml - model1_logml;
        let strength = match lbf.abs() {
            x if x < 1.0 => "barely worth mentioning",
            x if x < 3.0 => "positive",
            x if x < 5.0 => "strong",
            _ => "very strong",
        };
        let side = if lbf >= 0.0 { "a common distribution" } else { "separate distributions" };
        let mut decision_note = format!("log B01 = {lbf:.3}: {strength} evidence for {side}");
        if hme_unstable {
            decision_note.push_str(" (harmonic-mean estimate flagged as unstable)");
        }
        TestResult {
            log_bayes_factor: lbf,
            model0_logml,
            model1_logml,
            decision_note,
            hme_unstable,
            loglik_ranges: [f64::NAN; 3],
            acceptance_rates: [f64::NAN; 3],
        }
    }
}

/// Harmonic-mean estimate of the log marginal likelihood from per-draw
/// log-likelihoods, computed in the log domain.
pub fn log_hme(logliks: &[f64]) -> Result<f64> {
    if logliks.is_empty() {
        return Err(Error::Invalid("no draws".into()));
    }
    let neg: Vec<f64> = logliks.iter().map(|x| -x).collect();
    Ok((logliks.len() as f64).ln() - log_sum_exp(&neg))
}

fn range(xs: &[f64]) -> f64 {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

/// Empirical JCPD prior: Psi = sample mean, nu = max(1, ceil(frac * N)).
pub fn empirical_test_prior(data: &[StiefelPoint], frac: f64) -> Result<JCPDParams> {
    if !(frac >= 0.0) || !frac.is_finite() {
        return Err(Error::Domain(format!("prior strength fraction must be nonnegative, got {frac}")));
    }
    let nu = (frac * data.len() as f64).ceil().max(1.0);
    JCPDParams::new(nu, sample_mean(data)?)
}

/// Compare one shared parameter triple (model 0) against one per group
/// (model 1). Each fit uses an empirical prior of strength
/// `prior_strength_frac` times its own sample size.
pub fn bayes_factor_two_sample<R: Rng + ?Sized>(
    data1: &[StiefelPoint],
    data2: &[StiefelPoint],
    prior_strength_frac: f64,
    cfg: &GibbsConfig,
    rng: &mut R,
) -> Result<TestResult> {
    let (a, b) = (data1.first(), data2.first());
    let (a, b) = match (a, b) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Invalid("both groups need at least one observation".into())),
    };
    if (a.n(), a.p()) != (b.n(), b.p()) {
        return Err(Error::Shape(format!("groups live on V({},{}) and V({},{})", a.n(), a.p(), b.n(), b.p())));
    }
    let pooled: Vec<StiefelPoint> = data1.iter().chain(data2).cloned().collect();
    let groups = [&pooled[..], data1, data2];
    let seeds: Vec<u64> = (0..3).map(|_| rng.random()).collect();
    let chains = groups
        .par_iter()
        .zip(&seeds)
        .map(|(g, &s)| {
            let prior = empirical_test_prior(g, prior_strength_frac)?;
            gibbs_jcpc(g, &prior, cfg, &mut ChaCha8Rng::seed_from_u64(s))
        })
        .collect::<Result<Vec<_>>>()?;
    let logml = chains.iter().map(|c| log_hme(&c.log_likelihoods)).collect::<Result<Vec<_>>>()?;
    let ranges = [0, 1, 2].map(|i| range(&chains[i].log_likelihoods));
    let unstable = ranges.iter().any(|&r| r > HME_RANGE_LIMIT);
    if unstable {
        log::warn!("harmonic-mean log-likelihood ranges {ranges:?} exceed {HME_RANGE_LIMIT} nats");
    }
    let mut out = TestResult::new(logml[0], logml[1] + logml[2], unstable);
    out.loglik_ranges = ranges;
    out.acceptance_rates = [0, 1, 2].map(|i| chains[i].meta.acceptance_rate());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matfn::ConcVector;
    use crate::samplers::{ChainMeta, Draw, PriorSpec};

    fn theta(d: &[f64]) -> MLParams {
        let mut m = DMatrix::zeros(3, 2);
        m[(0, 0)] = 1.0;
        m[(1, 1)] = 1.0;
        MLParams::new(
            StiefelPoint::new(m).unwrap(),
            ConcVector::new(d.to_vec(), 3).unwrap(),
            StiefelPoint::new(DMatrix::identity(2, 2)).unwrap(),
        )
        .unwrap()
    }

    fn chain_of(draws: Vec<Draw>) -> PosteriorChain {
        let k = draws.len();
        PosteriorChain {
            draws,
            log_kernels: vec![0.0; k],
            log_likelihoods: vec![0.0; k],
            meta: ChainMeta {
                prior: PriorSpec::Jcpc(JCPDParams::uniform(3, 2).unwrap()),
                n_obs: 1,
                n_iter: k,
                burn_in: 0,
                seed: None,
                proposals: 0,
                concentration_draws: 0,
            },
        }
    }

    #[test]
    fn relative_error_definition() {
        let f = theta(&[3.0, 1.0]).f();
        assert_eq!(relative_error(&f, &f).unwrap(), 0.0);
        assert!((relative_error(&(&f * 2.0), &f).unwrap() - 1.0).abs() < 1e-15);
        let mut e = DMatrix::zeros(3, 2);
        e[(2, 1)] = 0.5;
        let want = 0.5 / 10f64.sqrt();
        assert!((relative_error(&(&f + e), &f).unwrap() - want).abs() < 1e-15);
        assert!(relative_error(&f, &DMatrix::zeros(3, 2)).is_err());
        assert!(relative_error(&f, &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn constant_chain_has_zero_spread() {
        let t = theta(&[3.0, 1.0]);
        let dr = Draw { m: t.m().matrix().clone(), d: vec![3.0, 1.0], v: t.v().matrix().clone() };
        let s = posterior_mean_f(&chain_of(vec![dr; 5])).unwrap();
        assert!((s.mean - t.f()).abs().max() < 1e-15);
        assert_eq!(s.sd.max(), 0.0);
        assert!(posterior_mean_f(&chain_of(vec![])).is_err());
    }

    #[test]
    fn hme_is_a_log_domain_harmonic_mean() {
        let ll = [-1000.0, -1001.0, -1003.0];
        let direct = -((ll.iter().map(|x: &f64| (-(x + 1000.0)).exp()).sum::<f64>() / 3.0).ln()) - 1000.0;
        assert!((log_hme(&ll).unwrap() - direct).abs() < 1e-12);
        assert_eq!(log_hme(&[-5.0; 4]).unwrap(), -5.0);
    }

    #[test]
    fn test_result_identity_is_exact() {
        let r = TestResult::new(-123.456, -130.0, false);
        assert_eq!(r.log_bayes_factor, r.model0_logml - r.model1_logml);
        assert!(r.decision_note.contains("common"));
        assert!(TestResult::new(1.0, 9.0, true).decision_note.contains("unstable"));
    }

    #[test]
    fn batch_means_of_iid_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..40000).map(|_| rng.random::<f64>()).collect();
        // sd of U(0,1) is 1/sqrt(12)
        let want = (1.0f64 / 12.0).sqrt() / 200.0;
        let se = batch_means_se(&xs, None).unwrap();
        assert!((se / want - 1.0).abs() < 0.25, "{se} vs {want}");
        assert!(batch_means_se(&xs[..3], None).is_err());
    }

    #[test]
    fn mode_prior_at_sample_mean_ignores_nu() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = simulate_data(&theta(&[8.0, 3.0]), 50, &mut rng).unwrap();
        let ctl = SeriesControl::default();
        let wbar = sample_mean(&data).unwrap();
        let a = posterior_mode(&JCPDParams::new(1.0, wbar.clone()).unwrap(), &data, &ctl).unwrap();
        let b = posterior_mode(&JCPDParams::new(40.0, wbar).unwrap(), &data, &ctl).unwrap();
        for (x, y) in a.d.iter().zip(&b.d) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn mode_grows_along_a_ray() {
        // shrinking the spread of the data pushes the mode concentrations up
        let ctl = SeriesControl::default();
        let mut last = [0.0, 0.0];
        for &s in &[0.5, 0.7, 0.9, 0.97] {
            let mut a = DMatrix::zeros(3, 2);
            a[(0, 0)] = 1.0;
            a[(1, 1)] = 1.0;
            let mut b = a.clone();
            b[(0, 0)] = 2.0 * s - 1.0;
            b[(2, 0)] = (1.0 - (2.0 * s - 1.0f64).powi(2)).sqrt();
            let mut c = a.clone();
            c[(1, 1)] = -1.0;
            let data: Vec<StiefelPoint> = [a, b, c].into_iter().map(|x| StiefelPoint::new(x).unwrap()).collect();
            let prior = JCPDParams::new(1.0, sample_mean(&data).unwrap()).unwrap();
            let mode = posterior_mode(&prior, &data, &ctl).unwrap();
            assert!(mode.d[0] > last[0]);
            last = [mode.d[0], mode.d[1]];
        }
    }

    #[test]
    fn consistency_is_deterministic_and_improves() {
        let ctl = SeriesControl::default();
        let t = theta(&[10.0, 4.0]);
        let run = |s| consistency_experiment(&t, &[100, 2000], 6, &ctl, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
        let a = run(5);
        assert_eq!(a, run(5));
        let (small, large) = (&a.rows[0], &a.rows[1]);
        let better = small.errors.iter().zip(&large.errors).filter(|(s, l)| s > l).count();
        assert!(better >= 5, "{small:?} {large:?}");
        assert!(large.mean < small.mean);
    }
}
