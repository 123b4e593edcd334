//! Exact analysis of small [`AbstractMdp`] instances under a joint Boltzmann
//! policy: stationary distribution, average reward, relative values,
//! action values, policy gradients and Fisher matrices.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::AbstractMdp;
use crate::approx::RewardFit;
use crate::error::check_dim;
use crate::policy::{all_compatible, exact_fisher, BoltzmannPolicy};
use crate::{linalg, Error, Result};

/// Largest `|S|·|A|` the oracle accepts.
pub const DEFAULT_PAIR_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub d_theta: DVector<f64>,
    pub j: f64,
    /// Relative values with `dᵀV = 0`.
    pub v: DVector<f64>,
    /// `Q(s, a)` with one row per state and one column per joint action.
    pub q: DMatrix<f64>,
    pub grad_j: Vec<DVector<f64>>,
    pub fisher: Vec<DMatrix<f64>>,
    pub poisson_residual: f64,
}

/// Stationary distribution of a row-stochastic matrix, solved as
/// `(Pᵀ − I) d = 0` with the last equation replaced by `Σ d = 1`.
pub fn stationary_distribution_of(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    check_dim(n, p.ncols())?;
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let mut a = p.transpose() - DMatrix::identity(n, n);
    a.row_mut(n - 1).fill(1.0);
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let d = linalg::solve(a, &b)?;
    let residual = (p.tr_mul(&d) - &d).amax();
    if !(residual < 1e-10) || d.iter().any(|&x| x < -1e-12) {
        return Err(Error::NotErgodic { residual });
    }
    Ok(d)
}

pub struct Oracle<'a> {
    mdp: &'a AbstractMdp,
}

impl<'a> Oracle<'a> {
    pub fn new(mdp: &'a AbstractMdp) -> Result<Self> {
        Self::with_cap(mdp, DEFAULT_PAIR_CAP)
    }

    pub fn with_cap(mdp: &'a AbstractMdp, cap: usize) -> Result<Self> {
        let pairs = mdp.num_states().saturating_mul(mdp.joint_count());
        if pairs > cap {
            return Err(Error::OracleTooLarge { pairs, cap });
        }
        Ok(Oracle { mdp })
    }

    pub fn mdp(&self) -> &AbstractMdp {
        self.mdp
    }

    fn check_thetas(&self, thetas: &[DVector<f64>]) -> Result<()> {
        check_dim(self.mdp.num_agents(), thetas.len())?;
        for (i, th) in thetas.iter().enumerate() {
            check_dim(self.mdp.policy_features(i, 0).ncols(), th.len())?;
        }
        Ok(())
    }

    /// Per-agent action probabilities, indexed `[agent][state]`.
    pub fn marginals(&self, thetas: &[DVector<f64>]) -> Result<Vec<Vec<DVector<f64>>>> {
        self.check_thetas(thetas)?;
        (0..self.mdp.num_agents())
            .map(|i| {
                let pol = BoltzmannPolicy::new(thetas[i].clone());
                (0..self.mdp.num_states())
                    .map(|s| pol.action_probabilities(self.mdp.policy_features(i, s)))
                    .collect()
            })
            .collect()
    }

    /// `π(s, a) = Π_i π^i(s, a^i)` with one row per state.
    pub fn joint_policy(&self, thetas: &[DVector<f64>]) -> Result<DMatrix<f64>> {
        let marg = self.marginals(thetas)?;
        let ns = self.mdp.num_states();
        let nj = self.mdp.joint_count();
        let mut pi = DMatrix::zeros(ns, nj);
        for s in 0..ns {
            for j in 0..nj {
                let joint = self.mdp.joint_actions(j);
                pi[(s, j)] = joint.iter().enumerate().map(|(i, &a)| marg[i][s][a]).product();
            }
        }
        Ok(pi)
    }

    fn markov_matrix(&self, pi: &DMatrix<f64>) -> DMatrix<f64> {
        let ns = self.mdp.num_states();
        let mut p = DMatrix::zeros(ns, ns);
        for s in 0..ns {
            for j in 0..self.mdp.joint_count() {
                let w = pi[(s, j)];
                for (k, &pk) in self.mdp.transition_row(s, j).iter().enumerate() {
                    p[(s, k)] += w * pk;
                }
            }
        }
        p
    }

    fn expected_reward(&self, pi: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_fn(self.mdp.num_states(), |s, _| {
            (0..self.mdp.joint_count())
                .map(|j| pi[(s, j)] * self.mdp.mean_reward_avg(s, j))
                .sum()
        })
    }

    pub fn stationary_distribution(&self, thetas: &[DVector<f64>]) -> Result<DVector<f64>> {
        let pi = self.joint_policy(thetas)?;
        stationary_distribution_of(&self.markov_matrix(&pi))
    }

    /// Globally averaged long-run reward `J(θ)`.
    pub fn objective(&self, thetas: &[DVector<f64>]) -> Result<f64> {
        let pi = self.joint_policy(thetas)?;
        let d = stationary_distribution_of(&self.markov_matrix(&pi))?;
        Ok(d.dot(&self.expected_reward(&pi)))
    }

    /// Full analysis at `thetas`. The gradient is formed with the advantage
    /// `Q − V`; [`Self::gradient_with_q`] forms it with `Q` alone.
    pub fn report(&self, thetas: &[DVector<f64>]) -> Result<OracleReport> {
        let core = self.solve(thetas)?;
        let n = self.mdp.num_agents();
        let mut grad_j = Vec::with_capacity(n);
        let mut fisher = Vec::with_capacity(n);
        for i in 0..n {
            grad_j.push(self.gradient_from(&core, thetas, i, true)?);
            let pol = BoltzmannPolicy::new(thetas[i].clone());
            let qs: Vec<_> = (0..self.mdp.num_states())
                .map(|s| self.mdp.policy_features(i, s).clone())
                .collect();
            let weights: Vec<f64> = core.d.iter().copied().collect();
            fisher.push(exact_fisher(&pol, &qs, &weights, usize::MAX)?);
        }
        Ok(OracleReport {
            d_theta: core.d,
            j: core.j,
            v: core.v,
            q: core.q,
            grad_j,
            fisher,
            poisson_residual: core.residual,
        })
    }

    pub fn gradient(&self, thetas: &[DVector<f64>], agent: usize) -> Result<DVector<f64>> {
        let core = self.solve(thetas)?;
        self.gradient_from(&core, thetas, agent, true)
    }

    pub fn gradient_with_q(&self, thetas: &[DVector<f64>], agent: usize) -> Result<DVector<f64>> {
        let core = self.solve(thetas)?;
        self.gradient_from(&core, thetas, agent, false)
    }

    /// Exact Fisher matrix of one agent under the stationary distribution.
    pub fn fisher(&self, thetas: &[DVector<f64>], agent: usize) -> Result<DMatrix<f64>> {
        let d = self.stationary_distribution(thetas)?;
        let qs: Vec<_> = (0..self.mdp.num_states())
            .map(|s| self.mdp.policy_features(agent, s).clone())
            .collect();
        let weights: Vec<f64> = d.iter().copied().collect();
        exact_fisher(&BoltzmannPolicy::new(thetas[agent].clone()), &qs, &weights, usize::MAX)
    }

    /// The reward-fitting problem weighted by `d(s)π(s,a)`.
    pub fn reward_fit(&self, thetas: &[DVector<f64>]) -> Result<RewardFit> {
        let pi = self.joint_policy(thetas)?;
        let d = stationary_distribution_of(&self.markov_matrix(&pi))?;
        let ns = self.mdp.num_states();
        let nj = self.mdp.joint_count();
        let n = self.mdp.num_agents();
        let m = self.mdp.reward_dim();
        let pairs = ns * nj;
        let features = DMatrix::from_row_slice(pairs, m, self.mdp.reward_feature_table());
        let weights = DVector::from_fn(pairs, |p, _| d[p / nj] * pi[(p / nj, p % nj)]);
        let rewards = DMatrix::from_row_slice(pairs, n, self.mdp.rewards());
        RewardFit::new(features, weights, rewards)
    }

    fn solve(&self, thetas: &[DVector<f64>]) -> Result<Solved> {
        let pi = self.joint_policy(thetas)?;
        let p = self.markov_matrix(&pi);
        let d = stationary_distribution_of(&p)?;
        let rbar = self.expected_reward(&pi);
        let j = d.dot(&rbar);
        let ns = self.mdp.num_states();

        // (I − P + 1dᵀ) V = r̄ − J1 has the unique solution with dᵀV = 0.
        let ones = DVector::from_element(ns, 1.0);
        let a = DMatrix::identity(ns, ns) - &p + &ones * d.transpose();
        let v = linalg::solve(a, &(&rbar - &ones * j))?;
        let residual = (&rbar - &ones * j + &p * &v - &v).norm();

        let nj = self.mdp.joint_count();
        let q = DMatrix::from_fn(ns, nj, |s, jj| {
            let next: f64 = self
                .mdp
                .transition_row(s, jj)
                .iter()
                .zip(v.iter())
                .map(|(pk, vk)| pk * vk)
                .sum();
            self.mdp.mean_reward_avg(s, jj) - j + next
        });
        Ok(Solved {
            pi,
            d,
            j,
            v,
            q,
            residual,
        })
    }

    fn gradient_from(&self, core: &Solved, thetas: &[DVector<f64>], agent: usize, advantage: bool) -> Result<DVector<f64>> {
        if agent >= self.mdp.num_agents() {
            return Err(Error::OutOfRange {
                index: agent,
                len: self.mdp.num_agents(),
            });
        }
        let pol = BoltzmannPolicy::new(thetas[agent].clone());
        let mut grad = DVector::zeros(pol.dim());
        let radix: usize = self.mdp.actions()[..agent].iter().product();
        let count = self.mdp.actions()[agent];
        for s in 0..self.mdp.num_states() {
            let psis = all_compatible(&pol, self.mdp.policy_features(agent, s))?;
            for jj in 0..self.mdp.joint_count() {
                let a = (jj / radix) % count;
                let mut target = core.q[(s, jj)];
                if advantage {
                    target -= core.v[s];
                }
                grad.axpy(core.d[s] * core.pi[(s, jj)] * target, &psis[a], 1.0);
            }
        }
        Ok(grad)
    }
}

struct Solved {
    pi: DMatrix<f64>,
    d: DVector<f64>,
    j: f64,
    v: DVector<f64>,
    q: DMatrix<f64>,
    residual: f64,
}
