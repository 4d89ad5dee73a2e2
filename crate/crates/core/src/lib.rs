//! Feedback capacity of unifilar finite-state channels.
//!
//! This crate computes and bounds the feedback capacity of unifilar
//! finite-state channels, demonstrated on the Ising channel with an
//! arbitrary alphabet size. It combines several routes to the same
//! quantity so that each one can check the others:
//!
//! - [`channel`] — generic unifilar channels and the Ising family.
//! - [`belief`] — the feedback-capacity MDP: belief states, action
//!   matrices, the Bayes (BCJR) belief recursion, mutual-information
//!   rewards, and Monte-Carlo rate evaluation.
//! - [`nn`] — a small self-contained MLP with exact backprop, used for
//!   actor and critic networks.
//! - [`rl`] — two trainers that produce numerical capacity lower
//!   bounds: DDPG with expected targets and a clustered replay buffer,
//!   and direct policy optimization through an unrolled environment.
//! - [`qgraph`] — Q-graphs (output-labelled directed graphs), their
//!   extraction from rollout traces via k-means, and the two
//!   parameterized Ising graph families.
//! - [`duality`] — the duality upper bound as a finite average-reward
//!   MDP with KL rewards, relative value iteration, Bellman-equation
//!   verification of conjectured value functions, and the closed-form
//!   capacity/bound expressions.
//! - [`verify`] — tightness certification: a structured input
//!   distribution whose induced output law reproduces the test
//!   distribution node-by-node, its stationary distribution, and its
//!   single-letter rate.
//! - [`coding`] — zero-error coding-scheme simulators whose empirical
//!   rates match the closed forms.
//!
//! All entropies, divergences, and rates are in bits.

pub mod belief;
pub mod channel;
pub mod coding;
pub mod duality;
pub mod error;
pub mod nn;
pub mod qgraph;
pub mod rl;
pub mod verify;

pub use belief::{ActionMatrix, BeliefState, StepOutcome};
pub use channel::UnifilarChannel;
pub use error::{Error, Result};

