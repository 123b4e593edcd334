//! Linear critics: state values `vᵀφ(s)`, the global reward model `λᵀf(s,a)`,
//! temporal-difference errors and each agent's local critic step before
//! consensus.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::check_dim;
use crate::policy::FisherState;
use crate::{linalg, Error, Result};

/// Which critic recursions accumulate the eligibility trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceTarget {
    #[default]
    ValueOnly,
    ValueAndReward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticState {
    pub mu: f64,
    pub v: DVector<f64>,
    pub lambda: DVector<f64>,
    pub w: DVector<f64>,
    pub trace_v: DVector<f64>,
    pub trace_lambda: DVector<f64>,
    pub fisher: Option<FisherState>,
}

impl CriticState {
    /// All-zero critic. `fisher` is kept only by the engines that need it.
    pub fn zeros(value_dim: usize, reward_dim: usize, policy_dim: usize, fisher: Option<FisherState>) -> Self {
        CriticState {
            mu: 0.0,
            v: DVector::zeros(value_dim),
            lambda: DVector::zeros(reward_dim),
            w: DVector::zeros(policy_dim),
            trace_v: DVector::zeros(value_dim),
            trace_lambda: DVector::zeros(reward_dim),
            fisher,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mu.is_finite()
            && linalg::all_finite(&self.v)
            && linalg::all_finite(&self.lambda)
            && linalg::all_finite(&self.w)
    }
}

/// One observed transition as seen by every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSample {
    pub rewards: Vec<f64>,
    pub phi_s: DVector<f64>,
    pub phi_s_next: DVector<f64>,
    pub f_sa: DVector<f64>,
}

impl TransitionSample {
    pub fn reward(&self, agent: usize) -> Result<f64> {
        self.rewards.get(agent).copied().ok_or(Error::OutOfRange {
            index: agent,
            len: self.rewards.len(),
        })
    }
}

pub fn value(v: &DVector<f64>, phi: &DVector<f64>) -> Result<f64> {
    check_dim(v.len(), phi.len())?;
    Ok(v.dot(phi))
}

pub fn reward_estimate(lambda: &DVector<f64>, f: &DVector<f64>) -> Result<f64> {
    check_dim(lambda.len(), f.len())?;
    Ok(lambda.dot(f))
}

/// `δ = r − μ + vᵀφ(s′) − vᵀφ(s)`.
pub fn td_error(sample: &TransitionSample, cs: &CriticState, agent: usize) -> Result<f64> {
    let r = sample.reward(agent)?;
    Ok(r - cs.mu + value(&cs.v, &sample.phi_s_next)? - value(&cs.v, &sample.phi_s)?)
}

/// `δ̃ = λᵀf(s,a) − μ + vᵀφ(s′) − vᵀφ(s)`.
pub fn td_error_param(sample: &TransitionSample, cs: &CriticState) -> Result<f64> {
    Ok(reward_estimate(&cs.lambda, &sample.f_sa)? - cs.mu + value(&cs.v, &sample.phi_s_next)?
        - value(&cs.v, &sample.phi_s)?)
}

/// Local (pre-consensus) critic values `(μ̃, ṽ, λ̃)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCritic {
    pub mu: f64,
    pub v: DVector<f64>,
    pub lambda: DVector<f64>,
    pub delta: f64,
}

/// Computes `μ̃`, `ṽ` and `λ̃` from the current critic, advancing the
/// eligibility traces in place.
pub fn critic_local_update(
    cs: &mut CriticState,
    sample: &TransitionSample,
    agent: usize,
    beta_v: f64,
    trace_decay: f64,
    target: TraceTarget,
) -> Result<LocalCritic> {
    if !(beta_v >= 0.0 && beta_v <= 1.0) {
        return Err(Error::invalid("critic step size must lie in [0, 1]"));
    }
    if !(0.0..1.0).contains(&trace_decay) {
        return Err(Error::invalid("trace decay must lie in [0, 1)"));
    }
    let r = sample.reward(agent)?;
    let delta = td_error(sample, cs, agent)?;
    let mu = (1.0 - beta_v) * cs.mu + beta_v * r;

    cs.trace_v.scale_mut(trace_decay);
    cs.trace_v += &sample.phi_s;
    let mut v = cs.v.clone();
    v.axpy(beta_v * delta, &cs.trace_v, 1.0);

    let reward_err = r - reward_estimate(&cs.lambda, &sample.f_sa)?;
    let mut lambda = cs.lambda.clone();
    match target {
        TraceTarget::ValueOnly => lambda.axpy(beta_v * reward_err, &sample.f_sa, 1.0),
        TraceTarget::ValueAndReward => {
            cs.trace_lambda.scale_mut(trace_decay);
            cs.trace_lambda += &sample.f_sa;
            lambda.axpy(beta_v * reward_err, &cs.trace_lambda, 1.0);
        }
    }
    Ok(LocalCritic { mu, v, lambda, delta })
}

/// Enumerated reward-fitting problem over state-action pairs.
///
/// `features` has one row `f(s,a)ᵀ` per pair, `weights` holds `d(s)π(s,a)`
/// and `rewards` holds one column of `R^i(s,a)` per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardFit {
    pub features: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub rewards: DMatrix<f64>,
}

impl RewardFit {
    pub fn new(features: DMatrix<f64>, weights: DVector<f64>, rewards: DMatrix<f64>) -> Result<Self> {
        check_dim(features.nrows(), weights.len())?;
        check_dim(features.nrows(), rewards.nrows())?;
        if rewards.ncols() == 0 {
            return Err(Error::EmptyInput);
        }
        Ok(RewardFit {
            features,
            weights,
            rewards,
        })
    }

    fn mean_reward(&self) -> DVector<f64> {
        self.rewards.column_mean()
    }

    /// Gradient in `λ` of `Σ d̃ (R̄ − λᵀf)²`.
    pub fn gradient_mean_objective(&self, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.features.ncols(), lambda.len())?;
        let resid = self.mean_reward() - &self.features * lambda;
        let weighted = resid.component_mul(&self.weights);
        Ok(self.features.tr_mul(&weighted) * -2.0)
    }

    /// Gradient in `λ` of `Σ_i Σ d̃ (R^i − λᵀf)²`.
    pub fn gradient_sum_objective(&self, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.features.ncols(), lambda.len())?;
        let fitted = &self.features * lambda;
        let mut grad = DVector::zeros(lambda.len());
        for col in self.rewards.column_iter() {
            let resid = col - &fitted;
            let weighted = resid.component_mul(&self.weights);
            grad -= self.features.tr_mul(&weighted) * 2.0;
        }
        Ok(grad)
    }

    /// Weighted least-squares solution of `FᵀD(R̄ − Fλ) = 0`.
    pub fn fixed_point(&self) -> Result<DVector<f64>> {
        let mut ftd = self.features.transpose();
        for (mut col, &w) in ftd.column_iter_mut().zip(self.weights.iter()) {
            col *= w;
        }
        let normal = &ftd * &self.features;
        let rhs = &ftd * self.mean_reward();
        linalg::solve(normal, &rhs)
    }
}
