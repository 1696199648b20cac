//! Tabular reinforcement-learning laboratory for length-penalized policy
//! optimization.
//!
//! The crate builds small synthetic reasoning worlds in which the effect of a
//! verifier-gated length penalty can be measured exactly:
//!
//! - [`tasks`]: two synthetic task families — "menu" tasks (a multinomial
//!   choice over scored responses) and "chain" tasks (think tokens followed by
//!   an answer, where correctness requires a minimum amount of thinking).
//! - [`policy`]: tabular softmax policies over those tasks with exact
//!   sampling, log-probabilities, analytic gradients and KL divergence.
//! - [`shaping`]: the length-penalized reward — correct responses are
//!   discounted by a sigmoid of their group-normalized length.
//! - [`rl`]: RLOO advantage estimation, the group-normalized variant, a PPO
//!   clipped surrogate with sequence-level advantages, Adam, and the trainer.
//! - [`oracle`]: exact population-level maximizers for menu suites, used as
//!   ground truth for trainer convergence.
//! - [`baselines`]: generation cutoff, rejection-sampling SFT and DPO.
//! - [`eval`]: pass-rate@k evaluation, accuracy/token frontiers and the
//!   advantage-normalization ablation.
//!
//! Everything is deterministic given a seed: randomness flows through named,
//! counter-derived ChaCha streams (see [`rng`]), so results are independent
//! of scheduling and task ordering.
//!
//! The crate is `no_std` (with `alloc`); IO, file formats and the command
//! line live in the companion `lenrl` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod baselines;
pub mod error;
pub mod eval;
pub mod math;
pub mod oracle;
pub mod policy;
pub mod rl;
pub mod rng;
pub mod shaping;
pub mod tasks;

pub use error::{Error, Result};
