//! The four training engines: MAAC and the natural-gradient variants FI-MAN,
//! AP-MAN and FIAP-MAN.
//!
//! One iteration, for every agent `i`:
//!
//! 1. sample `a^i ~ π^i(s, ·)`, observe `r^i` and `s′`;
//! 2. form `μ̃^i`, `ṽ^i`, `λ̃^i` from the current critic and `δ̃^i`, `ψ^i`;
//! 3. take the actor step, using `G^{i,-1}` from before this iteration;
//! 4. mix `(μ̃, ṽ, λ̃)` across agents with the consensus matrix;
//! 5. update `G^{i,-1}` (FI-MAN and FIAP-MAN only).

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::approx::{critic_local_update, td_error_param, CriticState, TraceTarget, TransitionSample};
use crate::consensus::{self, Topology};
use crate::env::Environment;
use crate::metrics::{EpochRecord, RunMetrics};
use crate::policy::{compatible_from_probs, sample_action, BoltzmannPolicy, FisherState};
use crate::rng::{substream, Stream, StreamRng};
use crate::{linalg, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AlgorithmKind {
    Maac,
    FiMan,
    ApMan,
    FiapMan,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 4] = [
        AlgorithmKind::Maac,
        AlgorithmKind::FiMan,
        AlgorithmKind::ApMan,
        AlgorithmKind::FiapMan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Maac => "MAAC",
            AlgorithmKind::FiMan => "FI-MAN",
            AlgorithmKind::ApMan => "AP-MAN",
            AlgorithmKind::FiapMan => "FIAP-MAN",
        }
    }

    /// Accepts the display names case-insensitively, with `_` for `-`.
    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| {
            let a = k.name().bytes().map(|b| b.to_ascii_uppercase());
            let b = name.trim().bytes().map(|b| match b.to_ascii_uppercase() {
                b'_' => b'-',
                c => c,
            });
            a.eq(b)
        })
    }

    pub fn uses_fisher(self) -> bool {
        matches!(self, AlgorithmKind::FiMan | AlgorithmKind::FiapMan)
    }

    pub fn uses_advantage(self) -> bool {
        matches!(self, AlgorithmKind::ApMan | AlgorithmKind::FiapMan)
    }
}

impl core::fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    /// `1 / (t + 1)^exponent`.
    Polynomial(f64),
    Constant(f64),
}

impl Rate {
    pub fn at(self, t: usize) -> f64 {
        match self {
            Rate::Polynomial(e) => 1.0 / linalg::powf((t + 1) as f64, e),
            Rate::Constant(c) => c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub critic: Rate,
    pub actor: Rate,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule {
            critic: Rate::Polynomial(0.65),
            actor: Rate::Polynomial(0.85),
        }
    }
}

impl StepSchedule {
    /// Two-timescale polynomial schedule; requires
    /// `0.5 < exponent_v < exponent_theta ≤ 1`.
    pub fn polynomial(exponent_v: f64, exponent_theta: f64) -> Result<Self> {
        let valid = |e: f64| e > 0.5 && e <= 1.0;
        if !valid(exponent_v) || !valid(exponent_theta) {
            return Err(Error::invalid("step-size exponents must lie in (0.5, 1]"));
        }
        if exponent_theta <= exponent_v {
            return Err(Error::invalid("actor exponent must exceed critic exponent"));
        }
        Ok(StepSchedule {
            critic: Rate::Polynomial(exponent_v),
            actor: Rate::Polynomial(exponent_theta),
        })
    }

    pub fn constant(beta_v: f64, beta_theta: f64) -> Self {
        StepSchedule {
            critic: Rate::Constant(beta_v),
            actor: Rate::Constant(beta_theta),
        }
    }

    /// `(β_v, β_θ)` at step `t`.
    pub fn step_sizes(&self, t: usize) -> (f64, f64) {
        (self.critic.at(t), self.actor.at(t))
    }
}

/// `θ + β_θ δ̃ ψ`.
pub fn maac_actor_step(theta: &DVector<f64>, delta_tilde: f64, psi: &DVector<f64>, beta_theta: f64) -> DVector<f64> {
    let mut out = theta.clone();
    out.axpy(beta_theta * delta_tilde, psi, 1.0);
    out
}

/// `θ + β_θ δ̃ G⁻¹ψ`.
pub fn fi_man_actor_step(
    theta: &DVector<f64>,
    g_inv: &DMatrix<f64>,
    delta_tilde: f64,
    psi: &DVector<f64>,
    beta_theta: f64,
) -> DVector<f64> {
    maac_actor_step(theta, delta_tilde, &(g_inv * psi), beta_theta)
}

/// `(I − β ψψᵀ) w + β δ̃ ψ`.
pub fn ap_man_advantage_update(w: &DVector<f64>, psi: &DVector<f64>, delta_tilde: f64, beta_v: f64) -> DVector<f64> {
    let mut out = w.clone();
    out.axpy(beta_v * (delta_tilde - psi.dot(w)), psi, 1.0);
    out
}

/// `(1 − β) w + β δ̃ G⁻¹ψ`.
pub fn fiap_man_advantage_update(
    w: &DVector<f64>,
    g_inv: &DMatrix<f64>,
    psi: &DVector<f64>,
    delta_tilde: f64,
    beta_v: f64,
) -> DVector<f64> {
    let mut out = w * (1.0 - beta_v);
    out.axpy(beta_v * delta_tilde, &(g_inv * psi), 1.0);
    out
}

/// `θ + β_θ w`.
pub fn natural_actor_step(theta: &DVector<f64>, w_next: &DVector<f64>, beta_theta: f64) -> DVector<f64> {
    let mut out = theta.clone();
    out.axpy(beta_theta, w_next, 1.0);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub kind: AlgorithmKind,
    pub schedule: StepSchedule,
    pub topology: Topology,
    pub trace_decay: f64,
    pub trace_target: TraceTarget,
    /// `G₀⁻¹ = fisher_init · I`.
    pub fisher_init: f64,
    /// The inverse-Fisher recursion at step `t` uses `β_v(t + fisher_step_offset)`.
    pub fisher_step_offset: usize,
    /// Keeps `G⁻¹` at its initial value (diagnostic).
    pub freeze_fisher: bool,
    pub steps: usize,
    /// Steps averaged into one metrics record.
    pub record_interval: usize,
    pub record_theta: bool,
    pub divergence_threshold: f64,
}

impl TrainConfig {
    /// Settings of the 15-agent abstract experiment.
    pub fn abstract_default(kind: AlgorithmKind) -> Self {
        TrainConfig {
            kind,
            schedule: StepSchedule::default(),
            topology: Topology::Random {
                connectivity_ratio: 4.0 / 15.0,
            },
            trace_decay: 0.0,
            trace_target: TraceTarget::ValueOnly,
            fisher_init: 1.5,
            fisher_step_offset: 1,
            freeze_fisher: false,
            steps: 12_000,
            record_interval: 100,
            record_theta: false,
            divergence_threshold: 1e6,
        }
    }

    /// Settings of the traffic experiment.
    pub fn traffic_default(kind: AlgorithmKind) -> Self {
        TrainConfig {
            kind,
            schedule: StepSchedule::default(),
            topology: Topology::Complete,
            trace_decay: 0.25,
            trace_target: TraceTarget::ValueOnly,
            fisher_init: 1.0,
            fisher_step_offset: 1,
            freeze_fisher: false,
            steps: 1500,
            record_interval: 1,
            record_theta: true,
            divergence_threshold: 1e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.record_interval == 0 {
            return Err(Error::invalid("steps and record interval must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.trace_decay) {
            return Err(Error::invalid("trace decay must lie in [0, 1)"));
        }
        if !(self.fisher_init > 0.0) {
            return Err(Error::invalid("Fisher initialisation must be positive"));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::invalid("divergence threshold must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRuntime {
    pub policy: BoltzmannPolicy,
    pub critic: CriticState,
}

/// What one agent did during one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentStep {
    pub action: usize,
    pub delta: f64,
    pub delta_tilde: f64,
    pub psi: DVector<f64>,
    pub theta_increment: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub t: usize,
    pub beta_v: f64,
    pub beta_theta: f64,
    pub rewards: Vec<f64>,
    pub agents: Vec<AgentStep>,
    pub fisher_skipped: usize,
}

/// The per-run random streams.
#[derive(Debug, Clone)]
pub struct RunRngs {
    pub env: StreamRng,
    pub policy: StreamRng,
    pub consensus: StreamRng,
}

impl RunRngs {
    pub fn from_seed(seed: u64) -> Self {
        RunRngs {
            env: substream(seed, Stream::EnvDynamics),
            policy: substream(seed, Stream::Policy),
            consensus: substream(seed, Stream::Consensus),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    agents: Vec<AgentRuntime>,
    t: usize,
    fisher_skipped: usize,
}

impl Trainer {
    /// Zero-initialised agents sized for `env`.
    pub fn new<E: Environment>(env: &E, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let n = env.num_agents();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        let agents = (0..n)
            .map(|i| {
                let m = env.policy_dim(i);
                let fisher = config
                    .kind
                    .uses_fisher()
                    .then(|| FisherState::scaled_identity(m, config.fisher_init, false));
                AgentRuntime {
                    policy: BoltzmannPolicy::zeros(m),
                    critic: CriticState::zeros(env.value_dim(), env.reward_dim(), m, fisher),
                }
            })
            .collect();
        Ok(Trainer {
            config,
            agents,
            t: 0,
            fisher_skipped: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn agents(&self) -> &[AgentRuntime] {
        &self.agents
    }

    pub fn agents_mut(&mut self) -> &mut [AgentRuntime] {
        &mut self.agents
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }

    pub fn fisher_skipped(&self) -> usize {
        self.fisher_skipped
    }

    pub fn thetas(&self) -> Vec<DVector<f64>> {
        self.agents.iter().map(|a| a.policy.theta().clone()).collect()
    }

    /// Stacked `(μ, v, λ)` disagreement across agents.
    pub fn critic_disagreement(&self) -> f64 {
        let stacked: Vec<DVector<f64>> = self
            .agents
            .iter()
            .map(|a| {
                let c = &a.critic;
                let mut s = DVector::zeros(1 + c.v.len() + c.lambda.len());
                s[0] = c.mu;
                s.rows_mut(1, c.v.len()).copy_from(&c.v);
                s.rows_mut(1 + c.v.len(), c.lambda.len()).copy_from(&c.lambda);
                s
            })
            .collect();
        consensus::disagreement(&stacked).unwrap_or(0.0)
    }

    /// Runs one iteration of the configured engine.
    pub fn step<E: Environment>(&mut self, env: &mut E, rngs: &mut RunRngs) -> Result<StepReport> {
        let n = self.agents.len();
        let t = self.t;
        let kind = self.config.kind;

        let mut features = Vec::with_capacity(n);
        let mut probs = Vec::with_capacity(n);
        let mut joint = Vec::with_capacity(n);
        for (i, agent) in self.agents.iter().enumerate() {
            let q = env.policy_features(i);
            let p = agent.policy.action_probabilities(&q)?;
            let a = sample_action(p.as_slice(), &mut rngs.policy)?;
            features.push(q);
            probs.push(p);
            joint.push(a);
        }
        let phi_s = env.state_features();
        let f_sa = env.reward_features(&joint)?;
        let rewards = env.step(&joint, &mut rngs.env)?;
        let sample = TransitionSample {
            rewards,
            phi_s,
            phi_s_next: env.state_features(),
            f_sa,
        };
        let (beta_v, beta_theta) = self.config.schedule.step_sizes(t);

        let mut locals = Vec::with_capacity(n);
        let mut steps = Vec::with_capacity(n);
        for (i, agent) in self.agents.iter_mut().enumerate() {
            let delta_tilde = td_error_param(&sample, &agent.critic)?;
            let local = critic_local_update(
                &mut agent.critic,
                &sample,
                i,
                beta_v,
                self.config.trace_decay,
                self.config.trace_target,
            )?;
            let psi = compatible_from_probs(&features[i], &probs[i], joint[i])?;
            let theta = agent.policy.theta().clone();
            let g_inv = agent.critic.fisher.as_ref().map(|f| f.g_inv());
            let next = match (kind, g_inv) {
                (AlgorithmKind::Maac, _) => maac_actor_step(&theta, delta_tilde, &psi, beta_theta),
                (AlgorithmKind::FiMan, Some(g)) => fi_man_actor_step(&theta, g, delta_tilde, &psi, beta_theta),
                (AlgorithmKind::ApMan, _) => {
                    let w = ap_man_advantage_update(&agent.critic.w, &psi, delta_tilde, beta_v);
                    let th = natural_actor_step(&theta, &w, beta_theta);
                    agent.critic.w = w;
                    th
                }
                (AlgorithmKind::FiapMan, Some(g)) => {
                    let w = fiap_man_advantage_update(&agent.critic.w, g, &psi, delta_tilde, beta_v);
                    let th = natural_actor_step(&theta, &w, beta_theta);
                    agent.critic.w = w;
                    th
                }
                _ => return Err(Error::invalid("engine requires a Fisher state")),
            };
            let increment = &next - &theta;
            *agent.policy.theta_mut() = next;
            steps.push(AgentStep {
                action: joint[i],
                delta: local.delta,
                delta_tilde,
                psi,
                theta_increment: increment,
            });
            locals.push(local);
        }

        let c = self.config.topology.matrix_at(n, &mut rngs.consensus)?;
        let mus: Vec<f64> = locals.iter().map(|l| l.mu).collect();
        let vs: Vec<DVector<f64>> = locals.iter().map(|l| l.v.clone()).collect();
        let lambdas: Vec<DVector<f64>> = locals.into_iter().map(|l| l.lambda).collect();
        let mus = consensus::mix_scalars(&c, &mus)?;
        let vs = consensus::mix(&c, &vs)?;
        let lambdas = consensus::mix(&c, &lambdas)?;
        for (((agent, mu), v), lambda) in self.agents.iter_mut().zip(mus).zip(vs).zip(lambdas) {
            agent.critic.mu = mu;
            agent.critic.v = v;
            agent.critic.lambda = lambda;
        }

        let mut skipped = 0;
        if kind.uses_fisher() && !self.config.freeze_fisher {
            let beta = self.config.schedule.critic.at(t + self.config.fisher_step_offset);
            if beta > 0.0 {
                for (i, (agent, step)) in self.agents.iter_mut().zip(&steps).enumerate() {
                    let fisher = agent.critic.fisher.as_mut().expect("Fisher state present");
                    match fisher.sherman_morrison_update(&step.psi, beta) {
                        Ok(_) => {}
                        Err(Error::SingularUpdate { denominator }) => {
                            log::warn!("step {t}, agent {i}: singular Fisher update (denominator {denominator:e}) skipped");
                            skipped += 1;
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
        }
        self.fisher_skipped += skipped;

        for (i, agent) in self.agents.iter().enumerate() {
            let theta = agent.policy.theta();
            if !linalg::all_finite(theta) || !agent.critic.is_finite() {
                return Err(Error::Diverged {
                    step: t,
                    agent: i,
                    reason: "non-finite parameter",
                });
            }
            if theta.norm() > self.config.divergence_threshold {
                return Err(Error::Diverged {
                    step: t,
                    agent: i,
                    reason: "actor parameter norm above threshold",
                });
            }
        }

        self.t += 1;
        Ok(StepReport {
            t,
            beta_v,
            beta_theta,
            rewards: sample.rewards,
            agents: steps,
            fisher_skipped: skipped,
        })
    }
}

/// Trains from scratch on `env` with every random stream derived from `seed`.
pub fn train<E: Environment>(env: &mut E, config: &TrainConfig, seed: u64) -> Result<RunMetrics> {
    let mut trainer = Trainer::new(env, config.clone())?;
    let mut rngs = RunRngs::from_seed(seed);
    env.reset(&mut rngs.env);
    let n = env.num_agents();
    let interval = config.record_interval;

    let mut metrics = RunMetrics::new(config.kind, seed, n);
    let mut block_rewards = alloc::vec![0.0; n];
    let mut block_total = 0.0;
    let mut block_len = 0usize;
    let mut reward_sum = 0.0;

    for _ in 0..config.steps {
        let report = trainer.step(env, &mut rngs)?;
        for (acc, r) in block_rewards.iter_mut().zip(&report.rewards) {
            *acc += r;
        }
        block_total += env.network_total(&report.rewards);
        reward_sum += report.rewards.iter().sum::<f64>() / n as f64;
        block_len += 1;
        if block_len == interval || trainer.steps_taken() == config.steps {
            let k = block_len as f64;
            metrics.records.push(EpochRecord {
                epoch: metrics.records.len() + 1,
                step: trainer.steps_taken(),
                rewards: block_rewards.iter().map(|r| r / k).collect(),
                network_total: block_total / k,
                disagreement: trainer.critic_disagreement(),
            });
            if config.record_theta {
                metrics.theta_trace.push(trainer.thetas());
            }
            block_rewards.iter_mut().for_each(|r| *r = 0.0);
            block_total = 0.0;
            block_len = 0;
        }
    }

    metrics.steps = trainer.steps_taken();
    metrics.global_average_reward = reward_sum / config.steps as f64;
    metrics.fisher_skipped = trainer.fisher_skipped();
    metrics.final_theta = trainer.thetas();
    metrics.final_mu = trainer.agents().iter().map(|a| a.critic.mu).collect();
    metrics.final_v = trainer.agents().iter().map(|a| a.critic.v.clone()).collect();
    Ok(metrics)
}
