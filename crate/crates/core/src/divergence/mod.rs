//! Domain-shift quantities: kernel MMD between input marginals and exact
//! importance weights for mixture-constructed tasks.

pub mod mmd;
pub mod weights;

pub use mmd::{
    gaussian_kernel, median_pairwise_distance, mmd_estimate, mmd_linear_in_order, mmd_linear_shuffled,
    mmd_quadratic_biased, mmd_u_statistic_std_error, Bandwidths, LinearMmd, MmdConfig, MmdEstimate,
};
pub use weights::{beta_infinity, mixture_weights, one_sided_weight, MixtureTaskSpec, WeightRow, WeightTable};
