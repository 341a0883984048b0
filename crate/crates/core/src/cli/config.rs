//! JSON run configuration. Every field has a default, so `{}` is a valid
//! config. Matrices are written as arrays of rows.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matfn::SeriesControl;
use crate::priors::{
    select_hyperparameters, Belief, CCPCPrior, CCPDParams, JCPDParams, Selected,
};
use crate::samplers::{GibbsConfig, RejectionConfig};
use crate::stiefel::{MLParams, StiefelPoint};

pub fn to_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if nr == 0 || nc == 0 || rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Shape(format!("{what} must be a nonempty rectangular array of rows")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum PriorConfig {
    Uniform,
    /// Psi = sample mean; nu defaults to ceil(N / 10)
    Empirical {
        #[serde(default)]
        nu: Option<f64>,
    },
    Jcpc { nu: f64, psi: Vec<Vec<f64>> },
    /// orientation parameters F_M (n x p), F_V (p x p) and a CCPD on d
    Ccpc { f_m: Vec<Vec<f64>>, f_v: Vec<Vec<f64>>, nu: f64, eta: Vec<f64> },
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig::Uniform
    }
}

/// What the Gibbs samplers need from a prior section.
pub enum ResolvedPrior {
    Joint(Selected),
    Product(CCPCPrior),
}

impl PriorConfig {
    pub fn resolve(&self, data: &[StiefelPoint], n: usize, p: usize, ctl: &SeriesControl) -> Result<ResolvedPrior> {
        let joint = |s: Selected| -> Result<ResolvedPrior> {
            if (s.prior.n(), s.prior.p()) != (n, p) {
                return Err(Error::Shape(format!(
                    "prior is {}x{}, data are {n}x{p}",
                    s.prior.n(),
                    s.prior.p()
                )));
            }
            Ok(ResolvedPrior::Joint(s))
        };
        match self {
            PriorConfig::Uniform => joint(select_hyperparameters(Belief::Uniform { n, p }, ctl)?),
            PriorConfig::Empirical { nu } => joint(select_hyperparameters(Belief::Empirical { data, nu: *nu }, ctl)?),
            PriorConfig::Jcpc { nu, psi } => {
                joint(Selected { prior: JCPDParams::new(*nu, from_rows(psi, "psi")?)?, warnings: vec![] })
            }
            PriorConfig::Ccpc { f_m, f_v, nu, eta } => {
                let prior =
                    CCPCPrior::new(from_rows(f_m, "f_m")?, CCPDParams::new(*nu, eta.clone(), n)?, from_rows(f_v, "f_v")?)?;
                if (prior.n(), prior.p()) != (n, p) {
                    return Err(Error::Shape(format!("prior is {}x{}, data are {n}x{p}", prior.n(), prior.p())));
                }
                Ok(ResolvedPrior::Product(prior))
            }
        }
    }

    /// The JCPD form, for commands that only work with the joint prior.
    pub fn resolve_joint(&self, data: &[StiefelPoint], n: usize, p: usize, ctl: &SeriesControl) -> Result<Selected> {
        match self.resolve(data, n, p, ctl)? {
            ResolvedPrior::Joint(s) => Ok(s),
            ResolvedPrior::Product(_) => Err(Error::Invalid("this command needs a uniform, empirical or jcpc prior".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub iters: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub ml_scans: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        let g = GibbsConfig::default();
        McmcConfig { iters: g.n_iter, burn_in: g.burn_in, chains: 1, ml_scans: g.ml_scans }
    }
}

/// Law of one concentration: scale * Gamma(shape, rate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaLaw {
    pub shape: f64,
    pub rate: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// posterior mean of F from the Gibbs sampler
    PosteriorMean,
    /// closed-form posterior mode under the uniform prior
    PosteriorMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub n: usize,
    pub p: usize,
    pub sizes: Vec<usize>,
    pub replicates: usize,
    /// one law per concentration; draws are sorted in decreasing order
    pub d_law: Vec<GammaLaw>,
    pub estimator: Estimator,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            n: 3,
            p: 2,
            sizes: vec![2000, 3000],
            replicates: 10,
            d_law: vec![
                GammaLaw { shape: 160.0, rate: 20.0, scale: 0.5 },
                GammaLaw { shape: 100.0, rate: 20.0, scale: 0.5 },
            ],
            estimator: Estimator::PosteriorMean,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.n < self.p {
            return Err(Error::Domain(format!("need n >= p >= 1, got n={} p={}", self.n, self.p)));
        }
        if self.d_law.len() != self.p {
            return Err(Error::Shape(format!("d_law has {} entries, p = {}", self.d_law.len(), self.p)));
        }
        if self.d_law.iter().any(|g| !(g.shape > 0.0 && g.rate > 0.0 && g.scale > 0.0)) {
            return Err(Error::Domain("gamma shapes, rates and scales must be positive".into()));
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) || self.replicates == 0 {
            return Err(Error::Domain("need positive sample sizes and at least one replicate".into()));
        }
        Ok(())
    }

    /// Canonical frames: M = first p columns of the identity, V = identity.
    pub fn truth(&self, d: Vec<f64>) -> Result<MLParams> {
        MLParams::new(
            StiefelPoint::new(DMatrix::identity(self.n, self.p))?,
            crate::matfn::ConcVector::new(d, self.n)?,
            StiefelPoint::new(DMatrix::identity(self.p, self.p))?,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    /// empirical prior strength as a fraction of each fit's sample size
    pub prior_strength_frac: f64,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig { prior_strength_frac: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub prior: PriorConfig,
    pub mcmc: McmcConfig,
    pub rejection: RejectionConfig,
    pub series: SeriesControl,
    pub test: TestConfig,
    pub simulate: Scenario,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            prior: PriorConfig::default(),
            mcmc: McmcConfig::default(),
            rejection: RejectionConfig::default(),
            series: SeriesControl::default(),
            test: TestConfig::default(),
            simulate: Scenario::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn gibbs(&self) -> GibbsConfig {
        GibbsConfig {
            n_iter: self.mcmc.iters,
            burn_in: self.mcmc.burn_in,
            ml_scans: self.mcmc.ml_scans,
            rejection: self.rejection,
            series: self.series,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gibbs().validate()?;
        if self.mcmc.chains == 0 {
            return Err(Error::Domain("mcmc.chains must be at least 1".into()));
        }
        if !(self.test.prior_strength_frac >= 0.0) || !self.test.prior_strength_frac.is_finite() {
            return Err(Error::Domain("test.prior_strength_frac must be finite and nonnegative".into()));
        }
        self.simulate.validate()
    }
}
