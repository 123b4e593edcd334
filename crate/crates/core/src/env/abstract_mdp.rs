//! Garnet-style random multi-agent MDP.
//!
//! Joint actions are indexed in mixed radix with agent 0 as the least
//! significant digit. Tables are stored flat: transitions as
//! `[state][joint][next]`, mean rewards as `[state][joint][agent]` and reward
//! features as `[state][joint][k]`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::Environment;
use crate::error::check_dim;
use crate::policy::ActionFeatures;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AbstractParams {
    pub num_agents: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub policy_dim: usize,
    pub value_dim: usize,
    pub reward_dim: usize,
    pub transition_floor: f64,
    pub reward_max: f64,
    pub reward_half_width: f64,
}

impl Default for AbstractParams {
    fn default() -> Self {
        AbstractParams {
            num_agents: 15,
            num_states: 15,
            num_actions: 2,
            policy_dim: 5,
            value_dim: 5,
            reward_dim: 10,
            transition_floor: 1e-5,
            reward_max: 4.0,
            reward_half_width: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbstractMdp {
    actions: Vec<usize>,
    num_states: usize,
    joint_count: usize,
    transitions: Vec<f64>,
    rewards: Vec<f64>,
    state_features: DMatrix<f64>,
    reward_features: Vec<f64>,
    reward_dim: usize,
    policy_features: Vec<Vec<ActionFeatures>>,
    reward_half_width: f64,
}

fn joint_count(actions: &[usize]) -> Result<usize> {
    actions
        .iter()
        .try_fold(1usize, |acc, &a| acc.checked_mul(a))
        .ok_or_else(|| Error::invalid("joint action space overflows usize"))
}

impl AbstractMdp {
    /// Draws a random instance. Tables are drawn in the order transitions,
    /// mean rewards, state features, reward features, policy features.
    pub fn generate<R: Rng + ?Sized>(params: &AbstractParams, rng: &mut R) -> Result<Self> {
        if params.num_agents < 1 || params.num_states < 1 || params.num_actions < 1 {
            return Err(Error::invalid("agents, states and actions must all be at least 1"));
        }
        if params.policy_dim < 1 || params.value_dim < 1 || params.reward_dim < 1 {
            return Err(Error::invalid("feature dimensions must be at least 1"));
        }
        if !(params.transition_floor > 0.0) {
            return Err(Error::invalid("transition floor must be positive"));
        }
        let actions = vec![params.num_actions; params.num_agents];
        let joints = joint_count(&actions)?;
        let ns = params.num_states;
        let n = params.num_agents;

        let mut transitions = Vec::with_capacity(ns * joints * ns);
        for _ in 0..ns * joints {
            let start = transitions.len();
            transitions.extend((0..ns).map(|_| rng.random::<f64>() + params.transition_floor));
            let row = &mut transitions[start..];
            let z: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= z);
        }
        let rewards: Vec<f64> = (0..ns * joints * n)
            .map(|_| rng.random::<f64>() * params.reward_max)
            .collect();
        let mut state_features = DMatrix::zeros(ns, params.value_dim);
        for s in 0..ns {
            for l in 0..params.value_dim {
                state_features[(s, l)] = rng.random::<f64>();
            }
        }
        let reward_features: Vec<f64> = (0..ns * joints * params.reward_dim)
            .map(|_| rng.random::<f64>())
            .collect();
        let mut policy_features = Vec::with_capacity(n);
        for _ in 0..n {
            let mut per_state = Vec::with_capacity(ns);
            for _ in 0..ns {
                let mut q = DMatrix::zeros(params.num_actions, params.policy_dim);
                for b in 0..params.num_actions {
                    for k in 0..params.policy_dim {
                        q[(b, k)] = rng.random::<f64>();
                    }
                }
                per_state.push(q);
            }
            policy_features.push(per_state);
        }
        Ok(AbstractMdp {
            actions,
            num_states: ns,
            joint_count: joints,
            transitions,
            rewards,
            state_features,
            reward_features,
            reward_dim: params.reward_dim,
            policy_features,
            reward_half_width: params.reward_half_width,
        })
    }

    /// Builds an instance from explicit tables in the documented flat layout.
    pub fn from_tables(
        actions: Vec<usize>,
        num_states: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        state_features: DMatrix<f64>,
        reward_features: Vec<f64>,
        policy_features: Vec<Vec<ActionFeatures>>,
        reward_half_width: f64,
    ) -> Result<Self> {
        if actions.is_empty() || num_states == 0 || actions.contains(&0) {
            return Err(Error::EmptyInput);
        }
        let joints = joint_count(&actions)?;
        let n = actions.len();
        check_dim(num_states * joints * num_states, transitions.len())?;
        check_dim(num_states * joints * n, rewards.len())?;
        check_dim(num_states, state_features.nrows())?;
        let pairs = num_states * joints;
        if reward_features.len() % pairs != 0 || reward_features.is_empty() {
            return Err(Error::invalid("reward feature table is not a whole number of rows"));
        }
        let reward_dim = reward_features.len() / pairs;
        check_dim(n, policy_features.len())?;
        for (agent, per_state) in policy_features.iter().enumerate() {
            check_dim(num_states, per_state.len())?;
            let m = per_state[0].ncols();
            for q in per_state {
                check_dim(actions[agent], q.nrows())?;
                check_dim(m, q.ncols())?;
            }
        }
        for row in transitions.chunks(num_states) {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                return Err(Error::NotSimplex { sum });
            }
        }
        if !(reward_half_width >= 0.0) {
            return Err(Error::invalid("reward half width must be nonnegative"));
        }
        Ok(AbstractMdp {
            actions,
            num_states,
            joint_count: joints,
            transitions,
            rewards,
            state_features,
            reward_features,
            reward_dim,
            policy_features,
            reward_half_width,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.actions.len()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn reward_dim(&self) -> usize {
        self.reward_dim
    }

    pub fn reward_half_width(&self) -> f64 {
        self.reward_half_width
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn reward_feature_table(&self) -> &[f64] {
        &self.reward_features
    }

    pub fn state_feature_table(&self) -> &DMatrix<f64> {
        &self.state_features
    }

    pub fn policy_feature_table(&self) -> &[Vec<ActionFeatures>] {
        &self.policy_features
    }

    pub fn policy_features(&self, agent: usize, state: usize) -> &ActionFeatures {
        &self.policy_features[agent][state]
    }

    pub fn joint_index(&self, joint: &[usize]) -> Result<usize> {
        check_dim(self.actions.len(), joint.len())?;
        let mut idx = 0;
        let mut radix = 1;
        for (&a, &count) in joint.iter().zip(&self.actions) {
            if a >= count {
                return Err(Error::OutOfRange { index: a, len: count });
            }
            idx += a * radix;
            radix *= count;
        }
        Ok(idx)
    }

    pub fn joint_actions(&self, mut idx: usize) -> Vec<usize> {
        self.actions
            .iter()
            .map(|&count| {
                let a = idx % count;
                idx /= count;
                a
            })
            .collect()
    }

    fn check_state(&self, s: usize) -> Result<()> {
        if s < self.num_states {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                index: s,
                len: self.num_states,
            })
        }
    }

    /// `P(·|s,a)` for a joint index.
    pub fn transition_row(&self, s: usize, joint: usize) -> &[f64] {
        let start = (s * self.joint_count + joint) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    /// `R^i(s,a)` for every agent.
    pub fn mean_rewards(&self, s: usize, joint: usize) -> &[f64] {
        let n = self.actions.len();
        let start = (s * self.joint_count + joint) * n;
        &self.rewards[start..start + n]
    }

    pub fn mean_reward_avg(&self, s: usize, joint: usize) -> f64 {
        let r = self.mean_rewards(s, joint);
        r.iter().sum::<f64>() / r.len() as f64
    }

    pub fn reward_features_at(&self, s: usize, joint: usize) -> &[f64] {
        let start = (s * self.joint_count + joint) * self.reward_dim;
        &self.reward_features[start..start + self.reward_dim]
    }

    pub fn phi(&self, s: usize) -> DVector<f64> {
        self.state_features.row(s).transpose()
    }

    /// Samples `s′ ~ P(·|s,a)` and `r^i ~ U[R^i − w, R^i + w]`.
    pub fn step<R: Rng + ?Sized>(&self, s: usize, joint: &[usize], rng: &mut R) -> Result<(usize, Vec<f64>)> {
        self.check_state(s)?;
        let j = self.joint_index(joint)?;
        let row = self.transition_row(s, j);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut next = self.num_states - 1;
        for (k, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                next = k;
                break;
            }
        }
        let w = self.reward_half_width;
        let rewards = self
            .mean_rewards(s, j)
            .iter()
            .map(|&r| r - w + 2.0 * w * rng.random::<f64>())
            .collect();
        Ok((next, rewards))
    }

    /// `V(s; v) = vᵀφ(s)` for every state.
    pub fn relative_value(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.state_features.ncols(), v.len())?;
        Ok(&self.state_features * v)
    }
}

/// A running episode over a shared [`AbstractMdp`].
#[derive(Debug, Clone)]
pub struct AbstractEnv<'a> {
    mdp: &'a AbstractMdp,
    state: usize,
}

impl<'a> AbstractEnv<'a> {
    pub fn new(mdp: &'a AbstractMdp) -> Self {
        AbstractEnv { mdp, state: 0 }
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn set_state(&mut self, s: usize) -> Result<()> {
        self.mdp.check_state(s)?;
        self.state = s;
        Ok(())
    }

    pub fn mdp(&self) -> &AbstractMdp {
        self.mdp
    }
}

impl Environment for AbstractEnv<'_> {
    fn num_agents(&self) -> usize {
        self.mdp.num_agents()
    }

    fn num_actions(&self, agent: usize) -> usize {
        self.mdp.actions[agent]
    }

    fn policy_dim(&self, agent: usize) -> usize {
        self.mdp.policy_features[agent][0].ncols()
    }

    fn value_dim(&self) -> usize {
        self.mdp.state_features.ncols()
    }

    fn reward_dim(&self) -> usize {
        self.mdp.reward_dim
    }

    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.state = rng.random_range(0..self.mdp.num_states);
    }

    fn policy_features(&self, agent: usize) -> ActionFeatures {
        self.mdp.policy_features[agent][self.state].clone()
    }

    fn state_features(&self) -> DVector<f64> {
        self.mdp.phi(self.state)
    }

    fn reward_features(&self, joint: &[usize]) -> Result<DVector<f64>> {
        let j = self.mdp.joint_index(joint)?;
        Ok(DVector::from_column_slice(self.mdp.reward_features_at(self.state, j)))
    }

    fn step<R: Rng + ?Sized>(&mut self, joint: &[usize], rng: &mut R) -> Result<Vec<f64>> {
        let (next, rewards) = self.mdp.step(self.state, joint, rng)?;
        self.state = next;
        Ok(rewards)
    }
}
