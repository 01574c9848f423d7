//! Path-space Markov chain Monte Carlo and the estimators built on it.

pub mod chain;
pub mod estimators;
pub mod exact;
pub mod stats;
pub mod surrogate;

pub use chain::{
    bridge_block_move, chain_rng, run_chain, AcceptCounts, ChainRecord, ChainState, EstimatorReport, InitStrategy, MoveMix,
    Observable, SamplerParams, RNG_NAME, STREAM_RULE,
};
pub use estimators::{
    estimate_covariance_decay, estimate_diffusion, estimate_log_partition, estimate_magnetization, estimate_marginal_ratio,
    tail_exponent_check,
};
pub use exact::{sample_pphi1_exact, ExactSampler};
