//! Analysis suites behind `analyze-kl`, `compare-deterministic` and
//! `check-fisher`. Each suite draws its instances from the analysis stream of
//! the given seed and returns plain rows for printing or persisting.

use std::fmt::Write as _;
use std::path::Path;

use man_core::algorithms::Rate;
use man_core::analysis::{
    deterministic_compare, kl_boltzmann, kl_definitional, kl_gradient_estimate, kl_gradient_proportionality,
    kl_quadratic, sigma_min_check, unit_bounded_instance, finite_difference_gradient, DominanceOutcome,
    PolicyInstance,
};
use man_core::env::{AbstractEnv, AbstractMdp, AbstractParams, Environment, Oracle};
use man_core::policy::{sample_action, BoltzmannPolicy, FisherState};
use man_core::rng::{substream, Stream, StreamRng};
use man_core::DVector;
use rand::Rng;

use crate::error::HarnessError;

/// A small enumerable MDP suitable for the exact oracle.
pub fn small_mdp(agents: usize, states: usize, policy_dim: usize, rng: &mut StreamRng) -> Result<AbstractMdp, HarnessError> {
    let params = AbstractParams {
        num_agents: agents,
        num_states: states,
        num_actions: 2,
        policy_dim,
        value_dim: 2,
        reward_dim: 3,
        ..AbstractParams::default()
    };
    Ok(AbstractMdp::generate(&params, rng)?)
}

pub fn random_thetas(n: usize, m: usize, scale: f64, rng: &mut StreamRng) -> Vec<DVector<f64>> {
    (0..n)
        .map(|_| DVector::from_fn(m, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * scale))
        .collect()
}

pub fn random_direction(m: usize, norm: f64, rng: &mut StreamRng) -> DVector<f64> {
    let d = DVector::from_fn(m, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let len = d.norm();
    d * (norm / len)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlRow {
    pub instance: usize,
    pub delta_norm: f64,
    pub exact_kl: f64,
    /// `|closed form − definition|`.
    pub definition_gap: f64,
    /// Relative error of `½ΔθᵀGΔθ` against the exact KL.
    pub quadratic_error: f64,
    /// `‖MC − FD‖ / ‖FD‖` for the KL gradient.
    pub gradient_error: f64,
}

/// KL checks on random 3-state, 3-action single-agent instances, at each
/// requested step norm.
pub fn kl_suite(seed: u64, instances: usize, norms: &[f64], samples: usize) -> Result<Vec<KlRow>, HarnessError> {
    let mut rng = substream(seed, Stream::Analysis);
    let mut rows = Vec::new();
    for instance in 0..instances {
        let inst = PolicyInstance::random(3, 3, 3, &mut rng);
        let policy = BoltzmannPolicy::new(random_thetas(1, 3, 1.0, &mut rng).remove(0));
        let fisher = inst.fisher(&policy)?;
        for &norm in norms {
            let delta = random_direction(3, norm, &mut rng);
            let exact = kl_boltzmann(&policy, &delta, &inst)?;
            let definition = kl_definitional(&policy, &delta, &inst)?;
            let quadratic = kl_quadratic(&delta, &fisher)?;
            let fd = finite_difference_gradient(|d| kl_boltzmann(&policy, d, &inst), &delta, 1e-5)?;
            let mc = kl_gradient_estimate(&policy, &delta, &inst, samples, &mut rng)?;
            rows.push(KlRow {
                instance,
                delta_norm: norm,
                exact_kl: exact,
                definition_gap: (exact - definition).abs(),
                quadratic_error: rel(quadratic, exact),
                gradient_error: (&mc - &fd).norm() / fd.norm(),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProportionalityRow {
    pub instance: usize,
    pub agent: usize,
    pub step_norm: f64,
    pub rho: f64,
    pub residual: f64,
    pub score_residual: f64,
}

/// Fits `∇KL ≈ −(1/ρ)∇J` after a natural-gradient step on random two-agent
/// MDPs.
pub fn proportionality_suite(seed: u64, instances: usize, norms: &[f64]) -> Result<Vec<ProportionalityRow>, HarnessError> {
    let mut rng = substream(seed, Stream::Analysis);
    let mut rows = Vec::new();
    for instance in 0..instances {
        let mdp = small_mdp(2, 3, 3, &mut rng)?;
        let oracle = Oracle::new(&mdp)?;
        let thetas = random_thetas(2, 3, 1.0, &mut rng);
        for agent in 0..2 {
            for &norm in norms {
                let r = kl_gradient_proportionality(&oracle, &thetas, agent, norm, 1e-6)?;
                rows.push(ProportionalityRow {
                    instance,
                    agent,
                    step_norm: norm,
                    rho: r.rho,
                    residual: r.residual,
                    score_residual: r.score_residual,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicRow {
    pub instance: usize,
    pub outcome: DominanceOutcome,
    pub hessian_bound: f64,
    pub final_j_maac: f64,
    pub final_j_fi_man: f64,
    pub regularized_steps: usize,
}

/// Deterministic MAAC against deterministic FI-MAN with exact gradients on
/// random two-agent MDPs.
pub fn deterministic_suite(seed: u64, instances: usize, steps: usize, rate: Rate) -> Result<Vec<DeterministicRow>, HarnessError> {
    let mut rng = substream(seed, Stream::Analysis);
    let mut rows = Vec::new();
    for instance in 0..instances {
        let mdp = small_mdp(2, 3, 3, &mut rng)?;
        let oracle = Oracle::new(&mdp)?;
        let theta0 = random_thetas(2, 3, 1.0, &mut rng);
        let trace = deterministic_compare(&oracle, &theta0, steps, rate)?;
        let last = trace.steps.last();
        rows.push(DeterministicRow {
            instance,
            outcome: trace.dominance(1e-12),
            hessian_bound: trace.hessian_bound,
            final_j_maac: last.map_or(f64::NAN, |s| s.j_m),
            final_j_fi_man: last.map_or(f64::NAN, |s| s.j_n),
            regularized_steps: trace.steps.iter().filter(|s| s.fisher_regularized).count(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherReport {
    pub samples: usize,
    /// `‖G_T − G(θ)‖_F / ‖G(θ)‖_F` for the averaging recursion.
    pub recursion_error: f64,
    /// Largest `‖G·G⁻¹ − I‖_F` seen while running both recursions in lockstep.
    pub lockstep_residual: f64,
    pub skipped_updates: usize,
}

/// Runs the Fisher recursions along a sampled trajectory of a small MDP at a
/// fixed joint policy.
pub fn fisher_suite(seed: u64, samples: usize) -> Result<FisherReport, HarnessError> {
    let mut rng = substream(seed, Stream::Analysis);
    let mdp = small_mdp(2, 4, 3, &mut rng)?;
    let thetas = random_thetas(2, 3, 1.0, &mut rng);
    let exact = Oracle::new(&mdp)?.fisher(&thetas, 0)?;
    let policies: Vec<BoltzmannPolicy> = thetas.iter().cloned().map(BoltzmannPolicy::new).collect();

    let mut env = AbstractEnv::new(&mdp);
    let mut dyn_rng = substream(seed, Stream::EnvDynamics);
    let mut act_rng = substream(seed, Stream::Policy);
    env.reset(&mut dyn_rng);
    let mut averaged = FisherState::scaled_identity(3, 1.0, true);
    let mut lockstep = FisherState::scaled_identity(3, 1.0, true);
    let mut lockstep_residual = 0.0f64;
    let mut skipped = 0;
    let eye = man_core::DMatrix::<f64>::identity(3, 3);
    for t in 0..samples {
        let mut joint = Vec::with_capacity(2);
        let mut psi = None;
        for (i, pol) in policies.iter().enumerate() {
            let q = env.policy_features(i);
            let probs = pol.action_probabilities(&q)?;
            let a = sample_action(probs.as_slice(), &mut act_rng)?;
            if i == 0 {
                psi = Some(pol.compatible_features(&q, a)?);
            }
            joint.push(a);
        }
        let psi = psi.expect("agent 0 exists");
        averaged.fisher_update(&psi, 1.0 / (t + 1) as f64)?;
        match lockstep.update_both(&psi, 1.0 / (t + 2) as f64) {
            Ok(_) => {}
            Err(man_core::Error::SingularUpdate { .. }) => skipped += 1,
            Err(e) => return Err(e.into()),
        }
        let g = lockstep.g().expect("tracked");
        lockstep_residual = lockstep_residual.max((g * lockstep.g_inv() - &eye).norm());
        env.step(&joint, &mut dyn_rng)?;
    }
    let g = averaged.g().expect("tracked");
    Ok(FisherReport {
        samples,
        recursion_error: (g - &exact).norm() / exact.norm(),
        lockstep_residual,
        skipped_updates: skipped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaReport {
    pub cases: usize,
    pub holds: usize,
    /// Largest `σ_min − 1/m` over the sweep.
    pub worst_margin: f64,
}

/// Checks `σ_min(G) ≤ 1/m` on random instances rescaled to `‖ψ‖ ≤ 1`, with
/// 1 to 5 states, 2 to 4 actions and `m` from 2 to 5.
pub fn sigma_sweep(seed: u64, cases: usize) -> Result<SigmaReport, HarnessError> {
    let mut rng = substream(seed, Stream::Analysis);
    let mut holds = 0;
    let mut worst = f64::NEG_INFINITY;
    for case in 0..cases {
        let m = 2 + case % 4;
        let (inst, policy) = unit_bounded_instance(1 + case % 5, 2 + case % 3, m, &mut rng)?;
        let (sigma, ok) = sigma_min_check(&inst.fisher(&policy)?, m)?;
        holds += usize::from(ok);
        worst = worst.max(sigma - 1.0 / m as f64);
    }
    Ok(SigmaReport {
        cases,
        holds,
        worst_margin: worst,
    })
}

pub fn outcome_label(o: &DominanceOutcome) -> String {
    match o {
        DominanceOutcome::PreconditionsFail => "preconditions-fail".to_string(),
        DominanceOutcome::Holds { t0 } => format!("holds from t0={t0}"),
        DominanceOutcome::Violated { t0, t, gap } => format!("VIOLATED t0={t0} t={t} gap={gap:e}"),
    }
}

pub fn render_kl(rows: &[KlRow], prop: &[ProportionalityRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>4} {:>9} {:>12} {:>12} {:>12} {:>12}",
        "inst", "|dtheta|", "KL", "def gap", "quad err", "grad err"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>4} {:>9.1e} {:>12.4e} {:>12.2e} {:>12.2e} {:>12.2e}",
            r.instance, r.delta_norm, r.exact_kl, r.definition_gap, r.quadratic_error, r.gradient_error
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:>4} {:>5} {:>9} {:>12} {:>12} {:>12}",
        "inst", "agent", "|dtheta|", "rho", "residual", "score res"
    );
    for r in prop {
        let _ = writeln!(
            out,
            "{:>4} {:>5} {:>9.1e} {:>12.4e} {:>12.2e} {:>12.2e}",
            r.instance, r.agent, r.step_norm, r.rho, r.residual, r.score_residual
        );
    }
    out
}

pub fn render_deterministic(rows: &[DeterministicRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>4} {:>10} {:>10} {:>10} {:>6}  outcome",
        "inst", "H", "J MAAC", "J FI-MAN", "ridge"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>4} {:>10.3e} {:>10.6} {:>10.6} {:>6}  {}",
            r.instance,
            r.hessian_bound,
            r.final_j_maac,
            r.final_j_fi_man,
            r.regularized_steps,
            outcome_label(&r.outcome)
        );
    }
    out
}

pub fn render_fisher(r: &FisherReport, sigma: &SigmaReport) -> String {
    format!(
        "samples                 {}\nrecursion error (Frob.) {:.4e}\nlockstep max |GG^-1-I| {:.4e}\nskipped updates         {}\nsigma_min <= 1/m        {}/{} (worst margin {:.3e})\n",
        r.samples,
        r.recursion_error,
        r.lockstep_residual,
        r.skipped_updates,
        sigma.holds,
        sigma.cases,
        sigma.worst_margin
    )
}

pub fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_rows_are_consistent() {
        let rows = kl_suite(3, 2, &[1e-3], 20_000).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert!(r.exact_kl >= 0.0);
            assert!(r.definition_gap < 1e-10);
            assert!(r.quadratic_error < 0.01);
        }
    }

    #[test]
    fn deterministic_rows_cover_every_instance() {
        let rows = deterministic_suite(5, 2, 5, Rate::Constant(0.1)).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.hessian_bound > 0.0));
    }

    #[test]
    fn fisher_report_is_sane() {
        let r = fisher_suite(2, 5_000).unwrap();
        assert!(r.recursion_error < 0.2, "{r:?}");
        assert!(r.lockstep_residual < 0.1, "{r:?}");
        let s = sigma_sweep(2, 20).unwrap();
        assert_eq!(s.holds, 20);
        assert!(s.worst_margin <= 1e-9);
    }
}
