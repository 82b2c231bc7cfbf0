//! Memory-based Markov abstractions of stochastic systems.
//!
//! A continuous-state system is observed through a finite grid partition.
//! The crate estimates a memory-`ℓ` Markov chain over the partition cells
//! from a single long output trace, propagates it forward from an estimated
//! initial law and turns the resulting cell probabilities into a piecewise
//! constant density with respect to the invariant measure. The accuracy of
//! the approximation is measured in total variation and compared with a
//! priori bounds built from spectral properties of the estimated chain.
//!
//! ```
//! use std::sync::Arc;
//! use memabs::{Abstraction, GaussianChannel, GridPartition, LeakPolicy, SampleBudget, StochasticSystem};
//!
//! let system = StochasticSystem::linear_gaussian(GaussianChannel::benchmark_2d());
//! let partition = Arc::new(GridPartition::grid(2, 3, -1.0, 1.0)?);
//! let budget = SampleBudget::new(20_000, 20_000);
//! let abstraction = Abstraction::build(&system, partition, 2, &budget, 0)?.with_leak_policy(LeakPolicy::Absorb);
//! let density = abstraction.density_at(10)?;
//! // Mass that reaches never-observed windows is dropped, not renormalised.
//! assert!(density.integral() <= 1.0 + 1e-12);
//! # Ok::<(), memabs::Error>(())
//! ```

// `!(a < b)` is how parameter checks reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod abstraction;
pub mod analysis;
pub mod config;
pub mod error;
pub mod experiment;
pub mod gaussian;
pub mod partition;
pub mod report;
pub mod rng;
pub mod system;

pub use abstraction::{
    run_algorithm1, Abstraction, JointDistribution, LeakPolicy, MemoryMarkovModel, PiecewiseConstantDensity,
    SampleBudget,
};
pub use analysis::{
    bound_combined, bound_decreasing, bound_increasing, estimate_spectral_params, tv_monte_carlo, tv_piecewise, McEstimate,
    Provenance, SpectralParams,
};
pub use config::{ConfigFile, ExperimentConfig, Profile};
pub use error::{Error, Result};
pub use gaussian::Gaussian;
pub use partition::{GridPartition, SequenceCodec};
pub use system::{MuWeightedGaussian, FiniteChain, GaussianBelief, GaussianChannel, GroundTruth, StochasticSystem};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/concepts/memory.md")]
    struct Memory;
    #[doc = include_str!("../../../book/src/concepts/estimation.md")]
    struct Estimation;
    #[doc = include_str!("../../../book/src/concepts/densities.md")]
    struct Densities;
    #[doc = include_str!("../../../book/src/concepts/bounds.md")]
    struct Bounds;
}
