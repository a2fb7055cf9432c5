//! Shared MCMC machinery: probit reparameterization, adaptive random-walk
//! proposals, chain storage/summaries, and the RNG substream contract.

pub mod chain;
pub mod proposal;
pub mod rng;
pub mod transform;

pub use chain::{chain_summaries, quantile, summarize_series, Chain, Summary};
pub use proposal::AdaptiveProposal;
pub use rng::{stream, substream};
pub use transform::{from_real, log_jacobian, to_real, TransformedParam};
