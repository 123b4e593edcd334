//! Environments the engines train on.
//!
//! Both environments are continuing tasks: `reset` is called once at the
//! start of a run and every subsequent `step` is one decision epoch.

use alloc::vec::Vec;

use nalgebra::DVector;
use rand::Rng;

use crate::policy::ActionFeatures;
use crate::Result;

pub mod abstract_mdp;
pub mod oracle;
pub mod traffic;

pub use abstract_mdp::{AbstractEnv, AbstractMdp, AbstractParams};
pub use oracle::{Oracle, OracleReport};
pub use traffic::{ArrivalPattern, SignalPlan, TrafficEnv, TrafficParams};

pub trait Environment {
    fn num_agents(&self) -> usize;

    fn num_actions(&self, agent: usize) -> usize;

    /// Dimension of agent `agent`'s policy parameter.
    fn policy_dim(&self, agent: usize) -> usize;

    /// Dimension `L` of the state features `φ(s)`.
    fn value_dim(&self) -> usize;

    /// Dimension `M` of the state-action features `f(s,a)`.
    fn reward_dim(&self) -> usize;

    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R);

    /// Features of every action of `agent` in the current state, one row per
    /// action.
    fn policy_features(&self, agent: usize) -> ActionFeatures;

    /// `φ(s)` of the current state.
    fn state_features(&self) -> DVector<f64>;

    /// `f(s,a)` of the current state and the given joint action.
    fn reward_features(&self, joint: &[usize]) -> Result<DVector<f64>>;

    /// Applies the joint action and returns each agent's reward.
    fn step<R: Rng + ?Sized>(&mut self, joint: &[usize], rng: &mut R) -> Result<Vec<f64>>;

    /// The network-level figure reported per epoch. Defaults to the globally
    /// averaged reward.
    fn network_total(&self, rewards: &[f64]) -> f64 {
        if rewards.is_empty() {
            0.0
        } else {
            rewards.iter().sum::<f64>() / rewards.len() as f64
        }
    }
}
