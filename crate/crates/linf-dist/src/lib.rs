//! Training, certification, attack, and constructive tooling for
//! l-infinity distance networks.
//!
//! A distance neuron computes `||x - w||_inf + b`. Stacking such neurons
//! gives a network that is 1-Lipschitz under the l-infinity norm by
//! construction, so a prediction margin directly certifies robustness:
//! if the margin exceeds `2 * eps`, no perturbation within an eps-ball
//! can flip the prediction. This crate implements the full pipeline:
//!
//! - [`core_math`]: overflow-safe p-norms and exact gradients, including a
//!   fast branchless `pow` kernel that the training loop lives on;
//! - [`network`]: the model, forward/backward passes, mean-shift
//!   normalization, and a binary checkpoint format;
//! - [`losses`]: hinge, scaled cross-entropy, and the composite training
//!   objective with a learnable temperature;
//! - [`optimization`]: Adam and the p / lambda / learning-rate schedules
//!   implementing p-relaxation training;
//! - [`trainer`]: the epoch loop, metrics, and data augmentation;
//! - [`certification`]: margin certificates, PGD attacks, and empirical
//!   Lipschitz lower bounds;
//! - [`constructive`]: explicit networks that classify a finite dataset
//!   perfectly and robustly, witnessing the architecture's expressive
//!   power;
//! - [`data`]: MNIST / CIFAR-10 loaders and a synthetic generator;
//! - [`config`] and [`cli`]: a key=value config format with presets and
//!   the command-line front end.

// modules under construction are enabled as they land
pub mod certification;
pub mod cli;
pub mod config;
pub mod constructive;
pub mod core_math;
pub mod data;
pub mod trainer;
pub mod error;
pub mod losses;
pub mod network;
pub mod optimization;

pub use error::Error;
