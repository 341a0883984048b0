use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::priors::{CCPCPrior, JCPDParams};
use crate::stiefel::compose;

/// One posterior state in canonical form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Draw {
    pub m: DMatrix<f64>,
    pub d: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl Draw {
    pub fn f(&self) -> DMatrix<f64> {
        compose(&self.m, &self.d, &self.v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PriorSpec {
    Jcpc(JCPDParams),
    Ccpc(CCPCPrior),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainMeta {
    pub prior: PriorSpec,
    pub n_obs: usize,
    pub n_iter: usize,
    pub burn_in: usize,
    pub seed: Option<u64>,
    /// proposals consumed by the concentration updates
    pub proposals: u64,
    pub concentration_draws: u64,
}

impl ChainMeta {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            return f64::NAN;
        }
        self.concentration_draws as f64 / self.proposals as f64
    }
}

/// Post-burn-in draws with the joint log posterior kernel and the data
/// log-likelihood of each.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorChain {
    pub draws: Vec<Draw>,
    pub log_kernels: Vec<f64>,
    pub log_likelihoods: Vec<f64>,
    pub meta: ChainMeta,
}

impl PosteriorChain {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// One row per draw: M and V flattened column-major, then d and the
    /// log kernel.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let first = self.draws.first().ok_or_else(|| Error::Invalid("empty chain".into()))?;
        let (n, p) = first.m.shape();
        let mut w = csv::Writer::from_writer(out);
        let mut header = Vec::new();
        for c in 1..=p {
            for r in 1..=n {
                header.push(format!("m_{r}_{c}"));
            }
        }
        header.extend((1..=p).map(|j| format!("d_{j}")));
        for c in 1..=p {
            for r in 1..=p {
                header.push(format!("v_{r}_{c}"));
            }
        }
        header.push("log_kernel".into());
        header.push("log_likelihood".into());
        w.write_record(&header).map_err(csv_err)?;
        for (k, draw) in self.draws.iter().enumerate() {
            let tail = [self.log_kernels[k], self.log_likelihoods[k]];
            let row = draw.m.iter().chain(draw.d.iter()).chain(draw.v.iter()).chain(tail.iter()).map(|x| format!("{x:e}"));
            w.write_record(row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}
