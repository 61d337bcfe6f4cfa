//! Desk-scale active domain adaptation.
//!
//! The crate pairs a submodular batch selector — uncertainty from
//! adversarial input perturbations, KL diversity and facility-location
//! representativeness, maximized greedily under a budget — with an
//! adversarially aligned training procedure (domain discriminator through
//! gradient reversal, conditional entropy and smoothness regularization,
//! uniform-rate SGD with global gradient clipping). An experiment harness
//! runs the full select/label/retrain cycle loop on synthetic two-domain
//! data or externally supplied files, deterministically per seed.
//!
//! Modules:
//! * [`prob`] — divergences and similarities on discrete distributions
//! * [`nn`] — the small differentiable model with analytic gradients
//! * [`perturb`] — power-method adversarial perturbations and bundles
//! * [`train`] — loss assembly and the training loop
//! * [`submodular`] — the selection criterion and greedy maximization
//! * [`baselines`] — competing samplers
//! * [`experiment`] — the active-adaptation cycle loop
//! * [`data`] — dataset generation, splits and file formats
//! * [`report`] — cross-seed aggregation
//! * [`gradcheck`] — finite-difference gradient verification

// Negated float comparisons like `!(x > 0.0)` are deliberate throughout:
// they treat NaN as invalid instead of silently accepting it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod nn;
pub mod perturb;
pub mod prob;
pub mod report;
pub mod submodular;
pub mod train;

pub use error::{Error, Result};
