//! Subsampled mean-field Q-learning for a system of one global agent and `n`
//! homogeneous local agents.
//!
//! The engine learns a Q-function for a `k`-agent subsystem, either with an
//! explicit table over the `k` sampled agents or with a mean-field table that
//! keeps one focal agent and the empirical distribution of the other `k-1`.
//! The learned greedy policy is executed on the full system by resampling
//! subsets at every step.

pub mod envs;
pub mod error;
pub mod experiment;
pub mod learner;
pub mod mdp;
pub mod meanfield;
pub mod policy;
pub mod qtable;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
pub use mdp::{system_reward, surrogate_reward, Dims, JointAction, JointState, SystemSpec};
pub use policy::{LearnedPolicy, Strategy};
pub use qtable::{Layout, QTable};
