//! Posterior simulation: the exact rejection sampler for single
//! concentrations and the Gibbs samplers built on it.

mod chain;
mod gibbs;
mod rejection;

pub use chain::{ChainMeta, Draw, PosteriorChain, PriorSpec};
pub(crate) use chain::csv_err;
pub use gibbs::{gibbs_ccpc, gibbs_jcpc, sample_ccpd, GibbsConfig};
pub use rejection::{
    build_proposal, ccpd_star_log_kernel, sample_ccpd_star, CcpdStar, ProposalPieces, RejectionConfig, TailKind,
};
