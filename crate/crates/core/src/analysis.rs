//! Validators for the optimisation theory behind the natural-gradient
//! engines: KL geometry of Boltzmann policies, the smallest singular value
//! of the Fisher matrix, and the deterministic MAAC versus FI-MAN comparison.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::algorithms::Rate;
use crate::env::Oracle;
use crate::error::check_dim;
use crate::policy::{all_compatible, compatible_from_probs, exact_fisher, sample_action, ActionFeatures, BoltzmannPolicy};
use crate::{linalg, Error, Result};

/// A single-agent enumerable setting: per-state action features and a state
/// weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyInstance {
    pub features: Vec<ActionFeatures>,
    pub weights: Vec<f64>,
}

impl PolicyInstance {
    pub fn new(features: Vec<ActionFeatures>, weights: Vec<f64>) -> Result<Self> {
        check_dim(features.len(), weights.len())?;
        if features.is_empty() {
            return Err(Error::EmptyInput);
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::NotSimplex { sum });
        }
        Ok(PolicyInstance { features, weights })
    }

    /// Random features in `[0, 1]` and random state weights.
    pub fn random<R: Rng + ?Sized>(states: usize, actions: usize, m: usize, rng: &mut R) -> Self {
        let features = (0..states)
            .map(|_| DMatrix::from_fn(actions, m, |_, _| rng.random::<f64>()))
            .collect();
        let mut weights: Vec<f64> = (0..states).map(|_| rng.random::<f64>() + 0.05).collect();
        let z: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= z);
        PolicyInstance { features, weights }
    }

    pub fn fisher(&self, policy: &BoltzmannPolicy) -> Result<DMatrix<f64>> {
        exact_fisher(policy, &self.features, &self.weights, usize::MAX)
    }

    /// Largest `‖ψ(s, a)‖` over the instance.
    pub fn max_score_norm(&self, policy: &BoltzmannPolicy) -> Result<f64> {
        let mut worst = 0.0f64;
        for q in &self.features {
            for psi in all_compatible(policy, q)? {
                worst = worst.max(psi.norm());
            }
        }
        Ok(worst)
    }
}

fn shifted(policy: &BoltzmannPolicy, delta: &DVector<f64>) -> Result<BoltzmannPolicy> {
    check_dim(policy.dim(), delta.len())?;
    Ok(BoltzmannPolicy::new(policy.theta() + delta))
}

/// `KL(π_θ ‖ π_{θ+Δθ})` in closed form,
/// `E_{s, a~π_θ}[log Σ_b π_θ(s,b) exp((q_b − q_a)ᵀΔθ)]`.
pub fn kl_boltzmann(policy: &BoltzmannPolicy, delta: &DVector<f64>, inst: &PolicyInstance) -> Result<f64> {
    check_dim(policy.dim(), delta.len())?;
    let mut kl = 0.0;
    for (q, &w) in inst.features.iter().zip(&inst.weights) {
        let probs = policy.action_probabilities(q)?;
        let proj = q * delta;
        for a in 0..q.nrows() {
            // log(1 + Σ_b π_b (e^{x_b} − 1)) keeps precision for tiny Δθ.
            let inner: f64 = (0..q.nrows())
                .map(|b| probs[b] * libm::expm1(proj[b] - proj[a]))
                .sum();
            kl += w * probs[a] * libm::log1p(inner);
        }
    }
    Ok(kl)
}

/// `Σ_s w(s) Σ_a π log(π / π′)` from log-probabilities.
pub fn kl_definitional(policy: &BoltzmannPolicy, delta: &DVector<f64>, inst: &PolicyInstance) -> Result<f64> {
    let other = shifted(policy, delta)?;
    let log_softmax = |pol: &BoltzmannPolicy, q: &ActionFeatures| {
        let l = q * pol.theta();
        let max = l.max();
        let lse = max + linalg::ln(l.iter().map(|x| linalg::exp(x - max)).sum::<f64>());
        l.map(|x| x - lse)
    };
    let mut kl = 0.0;
    for (q, &w) in inst.features.iter().zip(&inst.weights) {
        let lp = log_softmax(policy, q);
        let lq = log_softmax(&other, q);
        for a in 0..q.nrows() {
            kl += w * linalg::exp(lp[a]) * (lp[a] - lq[a]);
        }
    }
    Ok(kl)
}

/// `∇_{Δθ} KL = −E_{s, a~π_θ}[ψ_{θ+Δθ}(s, a)]`, evaluated exactly.
pub fn kl_gradient_exact(policy: &BoltzmannPolicy, delta: &DVector<f64>, inst: &PolicyInstance) -> Result<DVector<f64>> {
    let other = shifted(policy, delta)?;
    let mut grad = DVector::zeros(policy.dim());
    for (q, &w) in inst.features.iter().zip(&inst.weights) {
        let p = policy.action_probabilities(q)?;
        let p_other = other.action_probabilities(q)?;
        for a in 0..q.nrows() {
            grad.axpy(-w * p[a], &compatible_from_probs(q, &p_other, a)?, 1.0);
        }
    }
    Ok(grad)
}

/// Monte-Carlo estimate of [`kl_gradient_exact`] from `samples` draws of
/// `s ~ w`, `a ~ π_θ(s, ·)`.
pub fn kl_gradient_estimate<R: Rng + ?Sized>(
    policy: &BoltzmannPolicy,
    delta: &DVector<f64>,
    inst: &PolicyInstance,
    samples: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if samples == 0 {
        return Err(Error::EmptyInput);
    }
    let other = shifted(policy, delta)?;
    let own: Vec<DVector<f64>> = inst
        .features
        .iter()
        .map(|q| policy.action_probabilities(q))
        .collect::<Result<_>>()?;
    let scores: Vec<Vec<DVector<f64>>> = inst
        .features
        .iter()
        .map(|q| all_compatible(&other, q))
        .collect::<Result<_>>()?;
    let mut counts: Vec<Vec<u64>> = own.iter().map(|p| alloc::vec![0; p.len()]).collect();
    for _ in 0..samples {
        let s = sample_action(&inst.weights, rng)?;
        let a = sample_action(own[s].as_slice(), rng)?;
        counts[s][a] += 1;
    }
    let mut grad = DVector::zeros(policy.dim());
    for (per_state, psis) in counts.iter().zip(&scores) {
        for (&c, psi) in per_state.iter().zip(psis) {
            if c > 0 {
                grad.axpy(-(c as f64) / samples as f64, psi, 1.0);
            }
        }
    }
    Ok(grad)
}

/// `½ ΔθᵀGΔθ`.
pub fn kl_quadratic(delta: &DVector<f64>, fisher: &DMatrix<f64>) -> Result<f64> {
    check_dim(fisher.ncols(), delta.len())?;
    Ok(0.5 * delta.dot(&(fisher * delta)))
}

/// Smallest singular value of a symmetric matrix and whether it is at most
/// `1/m` (with `1e-9` slack).
pub fn sigma_min_check(fisher: &DMatrix<f64>, m: usize) -> Result<(f64, bool)> {
    if fisher.nrows() != fisher.ncols() || fisher.nrows() == 0 {
        return Err(Error::invalid("Fisher matrix must be square and nonempty"));
    }
    if m == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    let sigma = linalg::symmetric_eigenvalues(fisher)
        .into_iter()
        .map(f64::abs)
        .fold(f64::INFINITY, f64::min);
    Ok((sigma, sigma <= 1.0 / m as f64 + 1e-9))
}

/// Central differences, component-wise.
pub fn finite_difference_gradient<F>(f: F, theta: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::invalid("difference step must be positive"));
    }
    let mut grad = DVector::zeros(theta.len());
    let mut probe = theta.clone();
    for k in 0..theta.len() {
        probe[k] = theta[k] + h;
        let up = f(&probe)?;
        probe[k] = theta[k] - h;
        let down = f(&probe)?;
        probe[k] = theta[k];
        grad[k] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlReport {
    pub exact_kl: f64,
    pub quadratic_approx: f64,
    pub mc_gradient: DVector<f64>,
    pub fd_gradient: DVector<f64>,
}

pub fn kl_report<R: Rng + ?Sized>(
    policy: &BoltzmannPolicy,
    delta: &DVector<f64>,
    inst: &PolicyInstance,
    samples: usize,
    h: f64,
    rng: &mut R,
) -> Result<KlReport> {
    let fisher = inst.fisher(policy)?;
    Ok(KlReport {
        exact_kl: kl_boltzmann(policy, delta, inst)?,
        quadratic_approx: kl_quadratic(delta, &fisher)?,
        mc_gradient: kl_gradient_estimate(policy, delta, inst, samples, rng)?,
        fd_gradient: finite_difference_gradient(|d| kl_boltzmann(policy, d, inst), delta, h)?,
    })
}

/// `G⁻¹∇J` by a direct symmetric solve, with a `1e-8·I` ridge when `G` is
/// numerically singular. The flag reports whether the ridge was needed.
pub fn natural_gradient(fisher: &DMatrix<f64>, grad: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    check_dim(fisher.ncols(), grad.len())?;
    if let Some(chol) = fisher.clone().cholesky() {
        let x = chol.solve(grad);
        if linalg::all_finite(&x) {
            return Ok((x, false));
        }
    }
    let ridged = fisher + DMatrix::identity(grad.len(), grad.len()) * 1e-8;
    Ok((linalg::solve(ridged, grad)?, true))
}

/// Proportionality between the KL gradient and the policy gradient when the
/// parameter moves along the natural gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ProportionalityReport {
    /// Fitted `ρ` with `∇KL ≈ −(1/ρ)∇J`.
    pub rho: f64,
    /// `‖∇KL + (1/ρ)∇J‖ / ‖∇KL‖` with `∇KL` by finite differences.
    pub residual: f64,
    /// The same fit quality for `E[ψ_{θ+Δθ}] ≈ (1/ρ)∇J` evaluated exactly.
    pub score_residual: f64,
}

/// Moves agent `agent` by `step_norm` along `G⁻¹∇J` and measures how well
/// the resulting KL gradient lines up with `∇J`.
pub fn kl_gradient_proportionality(
    oracle: &Oracle<'_>,
    thetas: &[DVector<f64>],
    agent: usize,
    step_norm: f64,
    h: f64,
) -> Result<ProportionalityReport> {
    let rep = oracle.report(thetas)?;
    let grad = &rep.grad_j[agent];
    let (nat, _) = natural_gradient(&rep.fisher[agent], grad)?;
    let norm = nat.norm();
    if !(norm > 0.0) {
        return Err(Error::invalid("gradient vanishes"));
    }
    let delta = nat * (step_norm / norm);
    let mdp = oracle.mdp();
    let inst = PolicyInstance {
        features: (0..mdp.num_states()).map(|s| mdp.policy_features(agent, s).clone()).collect(),
        weights: rep.d_theta.iter().copied().collect(),
    };
    let policy = BoltzmannPolicy::new(thetas[agent].clone());
    let fd = finite_difference_gradient(|d| kl_boltzmann(&policy, d, &inst), &delta, h)?;
    let fit = |g: &DVector<f64>| {
        let c = -g.dot(grad) / grad.norm_squared();
        (c, (g + grad * c).norm() / g.norm())
    };
    let (c, residual) = fit(&fd);
    let (_, score_residual) = fit(&kl_gradient_exact(&policy, &delta, &inst)?);
    Ok(ProportionalityReport {
        rho: 1.0 / c,
        residual,
        score_residual,
    })
}

/// One iteration of the deterministic comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicStep {
    pub t: usize,
    pub beta: f64,
    pub theta_m: Vec<DVector<f64>>,
    pub theta_n: Vec<DVector<f64>>,
    pub j_m: f64,
    pub j_n: f64,
    pub grad_norm_m: f64,
    pub grad_norm_n: f64,
    /// `J(θ^M) ≤ J(θ^N)`.
    pub objective_ordered: bool,
    /// `‖∇J(θ^M)‖ ≤ ‖∇J(θ^N)‖`.
    pub gradient_ordered: bool,
    /// `β m H / 2 + 1 − m² ≤ 0`.
    pub step_condition: bool,
    pub fisher_regularized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicTrace {
    pub steps: Vec<DeterministicStep>,
    /// Largest finite-difference Hessian entry over the visited MAAC iterates.
    pub hessian_bound: f64,
    pub m: usize,
}

/// Outcome of checking the dominance claim on one trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DominanceOutcome {
    /// No `t₀` satisfies the preconditions.
    PreconditionsFail,
    Holds { t0: usize },
    Violated { t0: usize, t: usize, gap: f64 },
}

impl DeterministicTrace {
    /// Earliest `t₀` with `J(θ^M_{t₀}) ≤ J(θ^N_{t₀})` and the gradient and
    /// step conditions holding at every `t ≥ t₀`.
    pub fn earliest_t0(&self) -> Option<usize> {
        let n = self.steps.len();
        let mut tail_ok = alloc::vec![false; n + 1];
        tail_ok[n] = true;
        for t in (0..n).rev() {
            let s = &self.steps[t];
            tail_ok[t] = tail_ok[t + 1] && s.gradient_ordered && s.step_condition;
        }
        (0..n).find(|&t| tail_ok[t] && self.steps[t].objective_ordered)
    }

    /// Checks `J(θ^N_t) ≥ J(θ^M_t) − tol` for all `t ≥ t₀`.
    pub fn dominance(&self, tol: f64) -> DominanceOutcome {
        let Some(t0) = self.earliest_t0() else {
            return DominanceOutcome::PreconditionsFail;
        };
        for s in &self.steps[t0..] {
            if s.j_n < s.j_m - tol {
                return DominanceOutcome::Violated {
                    t0,
                    t: s.t,
                    gap: s.j_m - s.j_n,
                };
            }
        }
        DominanceOutcome::Holds { t0 }
    }
}

fn max_hessian_entry(oracle: &Oracle<'_>, thetas: &[DVector<f64>], h: f64) -> Result<f64> {
    let n = thetas.len();
    let grad_all = |th: &[DVector<f64>]| -> Result<Vec<DVector<f64>>> { (0..n).map(|i| oracle.gradient(th, i)).collect() };
    let mut worst = 0.0f64;
    let mut probe: Vec<DVector<f64>> = thetas.to_vec();
    for i in 0..n {
        for k in 0..thetas[i].len() {
            probe[i][k] = thetas[i][k] + h;
            let up = grad_all(&probe)?;
            probe[i][k] = thetas[i][k] - h;
            let down = grad_all(&probe)?;
            probe[i][k] = thetas[i][k];
            for (gu, gd) in up.iter().zip(&down) {
                for (a, b) in gu.iter().zip(gd.iter()) {
                    worst = worst.max(((a - b) / (2.0 * h)).abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Runs deterministic MAAC (`θ += β∇J`) and deterministic FI-MAN
/// (`θ^i += β G(θ^i)⁻¹∇_iJ`) from a shared start with exact gradients and
/// exact Fisher matrices, recording the dominance preconditions at each step.
pub fn deterministic_compare(oracle: &Oracle<'_>, theta0: &[DVector<f64>], steps: usize, schedule: Rate) -> Result<DeterministicTrace> {
    let n = oracle.mdp().num_agents();
    check_dim(n, theta0.len())?;
    let m = theta0[0].len();
    if theta0.iter().any(|t| t.len() != m) {
        return Err(Error::invalid("deterministic comparison needs a common policy dimension"));
    }
    let mut theta_m = theta0.to_vec();
    let mut theta_n = theta0.to_vec();
    let mut raw = Vec::with_capacity(steps);
    let mut hessian_bound = 0.0f64;
    for t in 0..steps {
        let beta = schedule.at(t);
        let rm = oracle.report(&theta_m)?;
        let rn = oracle.report(&theta_n)?;
        hessian_bound = hessian_bound.max(max_hessian_entry(oracle, &theta_m, 1e-4)?);
        let norm = |g: &[DVector<f64>]| linalg::sqrt(g.iter().map(|x| x.norm_squared()).sum());
        let mut regularized = false;
        let mut next_n = Vec::with_capacity(n);
        for i in 0..n {
            let (nat, ridge) = natural_gradient(&rn.fisher[i], &rn.grad_j[i])?;
            regularized |= ridge;
            let mut th = theta_n[i].clone();
            th.axpy(beta, &nat, 1.0);
            next_n.push(th);
        }
        let next_m: Vec<DVector<f64>> = theta_m
            .iter()
            .zip(&rm.grad_j)
            .map(|(th, g)| {
                let mut out = th.clone();
                out.axpy(beta, g, 1.0);
                out
            })
            .collect();
        raw.push((t, beta, theta_m.clone(), theta_n.clone(), rm.j, rn.j, norm(&rm.grad_j), norm(&rn.grad_j), regularized));
        theta_m = next_m;
        theta_n = next_n;
        if theta_m.iter().chain(&theta_n).any(|th| !linalg::all_finite(th)) {
            return Err(Error::NonFinite("deterministic iterate"));
        }
    }
    let mf = m as f64;
    let steps = raw
        .into_iter()
        .map(|(t, beta, tm, tn, j_m, j_n, gm, gn, reg)| DeterministicStep {
            t,
            beta,
            theta_m: tm,
            theta_n: tn,
            j_m,
            j_n,
            grad_norm_m: gm,
            grad_norm_n: gn,
            objective_ordered: j_m <= j_n,
            gradient_ordered: gm <= gn,
            step_condition: beta * mf * hessian_bound / 2.0 + 1.0 - mf * mf <= 0.0,
            fisher_regularized: reg,
        })
        .collect();
    Ok(DeterministicTrace { steps, hessian_bound, m })
}

/// A random single-agent instance rescaled so that every `‖ψ‖ ≤ 1`, together
/// with the policy it was rescaled for.
pub fn unit_bounded_instance<R: Rng + ?Sized>(
    states: usize,
    actions: usize,
    m: usize,
    rng: &mut R,
) -> Result<(PolicyInstance, BoltzmannPolicy)> {
    let mut inst = PolicyInstance::random(states, actions, m, rng);
    let theta = DVector::from_fn(m, |_, _| rng.random::<f64>() * 4.0 - 2.0);
    let policy = BoltzmannPolicy::new(theta.clone());
    let worst = inst.max_score_norm(&policy)?;
    if worst == 0.0 {
        return Ok((inst, policy));
    }
    // Scaling q by 1/c and θ by c leaves every probability unchanged and
    // scales ψ by 1/c.
    let c = worst * (1.0 + rng.random::<f64>());
    inst.features.iter_mut().for_each(|q| *q /= c);
    Ok((inst, BoltzmannPolicy::new(theta * c)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{AbstractMdp, AbstractParams};
    use crate::rng::{substream, Stream};
    use alloc::vec;

    fn instance(seed: u64) -> (PolicyInstance, BoltzmannPolicy) {
        let mut rng = substream(seed, Stream::Analysis);
        let inst = PolicyInstance::random(3, 3, 4, &mut rng);
        let theta = DVector::from_fn(4, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        (inst, BoltzmannPolicy::new(theta))
    }

    fn direction(seed: u64, m: usize, norm: f64) -> DVector<f64> {
        let mut rng = substream(seed, Stream::Analysis);
        let d = DVector::from_fn(m, |_, _| rng.random::<f64>() - 0.5);
        &d * (norm / d.norm())
    }

    #[test]
    fn zero_step_has_zero_kl() {
        let (inst, pol) = instance(1);
        assert_eq!(kl_boltzmann(&pol, &DVector::zeros(4), &inst).unwrap(), 0.0);
        assert_eq!(kl_quadratic(&DVector::zeros(4), &inst.fisher(&pol).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn orthogonal_feature_differences_give_zero_kl() {
        let q = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.5, 1.0, 0.0, -0.5]);
        let inst = PolicyInstance::new(vec![q], vec![1.0]).unwrap();
        let pol = BoltzmannPolicy::new(DVector::from_vec(vec![0.3, 0.1, 0.2]));
        let delta = DVector::from_vec(vec![0.7, -2.0, 0.0]);
        assert!(kl_boltzmann(&pol, &delta, &inst).unwrap().abs() < 1e-15);
    }

    #[test]
    fn closed_form_matches_definition() {
        for seed in 0..20 {
            let (inst, pol) = instance(seed);
            let delta = direction(seed + 100, 4, 0.5);
            let a = kl_boltzmann(&pol, &delta, &inst).unwrap();
            let b = kl_definitional(&pol, &delta, &inst).unwrap();
            assert!(a >= 0.0);
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn quadratic_form_examples() {
        let d = DVector::from_vec(vec![0.3, -0.4]);
        assert!((kl_quadratic(&d, &DMatrix::identity(2, 2)).unwrap() - 0.125).abs() < 1e-15);
        for seed in 0..10 {
            let (inst, pol) = instance(seed);
            let delta = direction(seed + 7, 4, 1e-3);
            let ratio = kl_boltzmann(&pol, &delta, &inst).unwrap()
                / kl_quadratic(&delta, &inst.fisher(&pol).unwrap()).unwrap();
            assert!((ratio - 1.0).abs() < 0.01, "ratio {ratio}");
        }
    }

    #[test]
    fn exact_kl_gradient_matches_finite_differences() {
        let (inst, pol) = instance(3);
        let delta = direction(4, 4, 0.3);
        let fd = finite_difference_gradient(|d| kl_boltzmann(&pol, d, &inst), &delta, 1e-6).unwrap();
        let exact = kl_gradient_exact(&pol, &delta, &inst).unwrap();
        assert!((fd - &exact).norm() / exact.norm() < 1e-6);
    }

    #[test]
    fn mc_gradient_vanishes_at_zero_step() {
        let (inst, pol) = instance(5);
        let samples = 40_000;
        let est = kl_gradient_estimate(&pol, &DVector::zeros(4), &inst, samples, &mut substream(1, Stream::Analysis)).unwrap();
        let bound = inst.max_score_norm(&pol).unwrap();
        assert!(est.norm() <= 2.0 * bound / libm::sqrt(samples as f64) * 2.0);
    }

    #[test]
    fn sigma_min_examples() {
        let (s, ok) = sigma_min_check(&(DMatrix::identity(4, 4) / 4.0), 4).unwrap();
        assert!((s - 0.25).abs() < 1e-15 && ok);
        let rank_one = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]) * 0.5;
        let (s, ok) = sigma_min_check(&rank_one, 2).unwrap();
        assert!(s < 1e-15 && ok);
    }

    #[test]
    fn unit_bounded_instances_satisfy_the_bound() {
        let mut rng = substream(2, Stream::Analysis);
        for _ in 0..100 {
            let (inst, pol) = unit_bounded_instance(3, 3, 4, &mut rng).unwrap();
            assert!(inst.max_score_norm(&pol).unwrap() <= 1.0 + 1e-12);
            assert!(sigma_min_check(&inst.fisher(&pol).unwrap(), 4).unwrap().1);
        }
    }

    #[test]
    fn finite_differences_examples() {
        let lin = |x: &DVector<f64>| Ok(3.0 * x[0] - 2.0 * x[1] + 1.0);
        let g = finite_difference_gradient(lin, &DVector::from_vec(vec![0.4, 7.0]), 1e-3).unwrap();
        assert!((g - DVector::from_vec(vec![3.0, -2.0])).amax() < 1e-12);
        let quad = |x: &DVector<f64>| Ok(0.5 * x.norm_squared());
        let g = finite_difference_gradient(quad, &DVector::from_vec(vec![1.0, 0.0]), 1e-4).unwrap();
        assert!((g - DVector::from_vec(vec![1.0, 0.0])).amax() < 1e-8);
        let cubic = |x: &DVector<f64>| Ok(libm::exp(x[0]) + x[0] * x[0] * x[0]);
        let at = DVector::from_vec(vec![0.7]);
        let truth = libm::exp(0.7) + 3.0 * 0.49;
        let e1 = (finite_difference_gradient(cubic, &at, 1e-2).unwrap()[0] - truth).abs();
        let e2 = (finite_difference_gradient(cubic, &at, 5e-3).unwrap()[0] - truth).abs();
        assert!((e1 / e2 - 4.0).abs() < 0.05, "ratio {}", e1 / e2);
    }

    #[test]
    fn natural_gradient_matches_inverse() {
        let (inst, pol) = instance(8);
        let g = inst.fisher(&pol).unwrap() + DMatrix::identity(4, 4) * 0.01;
        let grad = direction(9, 4, 1.0);
        let (x, ridge) = natural_gradient(&g, &grad).unwrap();
        assert!(!ridge);
        let inv = g.clone().try_inverse().unwrap();
        assert!((x - inv * grad).amax() < 1e-10);
    }

    fn tiny_mdp(seed: u64) -> AbstractMdp {
        let params = AbstractParams {
            num_agents: 2,
            num_states: 3,
            ..AbstractParams::default()
        };
        AbstractMdp::generate(&params, &mut substream(seed, Stream::EnvGeneration)).unwrap()
    }

    #[test]
    fn deterministic_trace_records_every_step() {
        let mdp = tiny_mdp(1);
        let oracle = Oracle::new(&mdp).unwrap();
        let theta0 = vec![DVector::zeros(5); 2];
        let trace = deterministic_compare(&oracle, &theta0, 5, Rate::Polynomial(0.85)).unwrap();
        assert_eq!(trace.steps.len(), 5);
        assert_eq!(trace.steps[0].j_m, trace.steps[0].j_n);
        assert!(trace.steps[0].objective_ordered);
        assert!(trace.hessian_bound > 0.0);
        assert_eq!(trace.m, 5);
    }

    #[test]
    fn dominance_bookkeeping() {
        let step = |t, j_m: f64, j_n: f64, g| DeterministicStep {
            t,
            beta: 1.0,
            theta_m: vec![],
            theta_n: vec![],
            j_m,
            j_n,
            grad_norm_m: 0.0,
            grad_norm_n: 0.0,
            objective_ordered: j_m <= j_n,
            gradient_ordered: g,
            step_condition: true,
            fisher_regularized: false,
        };
        let trace = DeterministicTrace {
            steps: vec![step(0, 1.0, 0.5, false), step(1, 1.0, 1.5, true), step(2, 1.0, 1.2, true)],
            hessian_bound: 0.0,
            m: 2,
        };
        assert_eq!(trace.earliest_t0(), Some(1));
        assert_eq!(trace.dominance(1e-12), DominanceOutcome::Holds { t0: 1 });
        let broken = DeterministicTrace {
            steps: vec![step(0, 1.0, 1.5, true), step(1, 1.0, 0.5, true)],
            ..trace.clone()
        };
        assert!(matches!(broken.dominance(1e-12), DominanceOutcome::Violated { t0: 0, t: 1, .. }));
        let none = DeterministicTrace {
            steps: vec![step(0, 1.0, 0.5, true)],
            ..trace
        };
        assert_eq!(none.dominance(1e-12), DominanceOutcome::PreconditionsFail);
    }
}
