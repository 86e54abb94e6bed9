//! Block spin Potts model.
//!
//! `N` sites are split into `s` contiguous blocks; each site carries one of
//! `q` colours. Equal colours within a block interact with strength `β`,
//! across blocks with `α ≤ β`, both scaled by `1/N`:
//!
//! ```text
//! H_N(ω) = −(β/2N) Σ_k Σ_{i,j∈S_k} 1{ω_i=ω_j} − (α/2N) Σ_{k≠l} Σ_{i∈S_k, j∈S_l} 1{ω_i=ω_j}
//! ```
//!
//! The crate covers exact laws of the count matrix for small `N`, a
//! heat-bath sampler for large `N`, the large-deviation rate functions and
//! the maximizers of the free energy `G`, and finite-`N` checks of the
//! log-Sobolev constants.
//!
//! Everything numeric is generic over [`Scalar`] (`f64` or `f32`); the
//! `*64`/`*32` aliases below fix the precision.
// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod equilibria;
pub mod error;
pub mod exact;
pub mod glauber;
pub mod lsi;
pub mod model;
pub mod rate;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use model::{
    count_matrix, hamiltonian_direct, hamiltonian_quadratic, BlockStructure, CountMatrix,
    DistributionMatrix, ModelDocument, ModelParams, Normalization, SpinConfig,
};
pub use scalar::Scalar;

pub use equilibria::{maximize_g, EquilibriumReport, MaximizeOptions, Phase, TwoColumnPoint};
pub use exact::{
    exact_conditional, exact_distribution, ConfigurationMeasure, ExactDistribution, ExactOptions,
};
pub use glauber::{
    run_chain, run_chains, ChainOptions, ChainState, ChainSummary, InitialState, ScanOrder,
};
pub use lsi::{
    lsi_condition, lsi_constants, verify_lsi_suite, InterdependenceMatrix, LsiConstants,
    LsiSuiteOptions,
};
pub use rate::{free_energy_g, rate_i, rate_j, rate_j_prime, RateEvaluation, RateValue};

pub type ModelParams64 = ModelParams<f64>;
pub type ModelParams32 = ModelParams<f32>;
pub type DistributionMatrix64 = DistributionMatrix<f64>;
pub type DistributionMatrix32 = DistributionMatrix<f32>;
pub type ExactDistribution64 = exact::ExactDistribution<f64>;
pub type ExactDistribution32 = exact::ExactDistribution<f32>;
pub type ChainSummary64 = glauber::ChainSummary<f64>;
pub type ChainSummary32 = glauber::ChainSummary<f32>;
