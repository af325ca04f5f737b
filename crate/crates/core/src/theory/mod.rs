//! Bound calculators and exact or Monte-Carlo checks of the closed-form
//! results about noisy labels: noise consistency, estimation and
//! approximation bounds, the capacity crossover, and the optimum of the
//! representation regularizer in a Gaussian feature model.

mod bounds;
mod consistency;
mod gaussian;
mod theorem3;

pub use bounds::{
    approximation_bound, corollary_beta_prime, crossover_beta, crossover_holds, effective_rate, estimation_bound,
    Capacity, Crossover, NoiseKind, TheoryParams, Threshold,
};
pub use consistency::{
    consistency_constants, measure_affine_constants, verify_noise_decoupling, ConsistencyConstants, DecouplingCheck,
    DiscreteProblem,
};
pub use gaussian::{expected_sq_gaussian_distance, monte_carlo_sq_distance, psd_factor};
pub use theorem3::{
    simulate_theorem3, theorem3_delta, theorem3_from_delta, theorem3_solutions, GaussianFeatureSpec, Theorem3Estimate,
    Theorem3Simulation, Theorem3Solution,
};
