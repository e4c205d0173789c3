//! PAC-Bayes certificates for target risk under unsupervised domain
//! adaptation.
//!
//! The crate trains small stochastic feedforward classifiers with a
//! data-dependent prior, estimates the empirical quantities the bounds
//! consume (Gibbs risk, importance-weighted risk, expected disagreement and
//! joint error, kernel MMD), and evaluates five bounds with union-bound
//! corrected grid search over their free parameters:
//!
//! * `mcallester`: the base PAC-Bayes bound on a single domain,
//! * `mult`: density-ratio (β∞) multiplicative bound,
//! * `add`: additive bound with domain disagreement (needs oracle `λ_ρ`),
//! * `iw`: importance-weighted PAC-Bayes bound,
//! * `mmd`: PAC-Bayes plus kernel MMD between input marginals.

pub mod bounds;
pub mod check;
pub mod data;
pub mod divergence;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod risk;
pub mod rng;
pub mod stochastic;
pub mod tasks;

pub use data::{LabeledSample, UnlabeledSample};
pub use error::{Error, Result};
pub use nn::{Activation, CheckpointSchedule, MlpArchitecture, TrainConfig, WeightVector};
pub use stochastic::{IsotropicGaussian, PosteriorSampleSet, PriorPosteriorPair};
