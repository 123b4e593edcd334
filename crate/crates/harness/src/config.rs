//! Run configuration, read from a TOML file.
//!
//! ```toml
//! [run]
//! env = "traffic"
//! algorithms = ["MAAC", "FI-MAN"]
//! seeds = "1..5"          # or a list such as [1, 4, 9]
//!
//! [traffic]
//! pattern = 2
//! ```
//!
//! Every key is optional and unknown sections or keys are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use man_core::algorithms::{AlgorithmKind, StepSchedule, TrainConfig};
use man_core::approx::TraceTarget;
use man_core::consensus::Topology;
use man_core::env::{AbstractParams, ArrivalPattern, TrafficParams};

use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Abstract,
    Traffic,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Abstract => "abstract",
            EnvKind::Traffic => "traffic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvKind,
    pub abstract_params: AbstractParams,
    /// Load the abstract MDP from this file instead of generating one per seed.
    pub env_file: Option<PathBuf>,
    pub traffic: TrafficParams,
    pub algorithms: Vec<AlgorithmKind>,
    /// Training iterations per run (decision epochs for traffic).
    pub epochs: usize,
    /// Iterations averaged into one metrics row.
    pub record_interval: usize,
    pub seeds: Vec<u64>,
    pub exponent_v: f64,
    pub exponent_theta: f64,
    pub topology: Topology,
    pub trace_lambda: f64,
    pub trace_target: TraceTarget,
    pub fisher_init: f64,
    pub divergence_threshold: f64,
    /// Summary window in metrics rows; 0 means the whole run.
    pub window: usize,
    /// Parallel runs; 0 uses every available core.
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn defaults(env: EnvKind) -> Self {
        let base = match env {
            EnvKind::Abstract => TrainConfig::abstract_default(AlgorithmKind::Maac),
            EnvKind::Traffic => TrainConfig::traffic_default(AlgorithmKind::Maac),
        };
        RunConfig {
            env,
            abstract_params: AbstractParams::default(),
            env_file: None,
            traffic: TrafficParams::default(),
            algorithms: AlgorithmKind::ALL.to_vec(),
            epochs: base.steps,
            record_interval: base.record_interval,
            seeds: (1..=10).collect(),
            exponent_v: 0.65,
            exponent_theta: 0.85,
            topology: base.topology,
            trace_lambda: base.trace_decay,
            trace_target: base.trace_target,
            fisher_init: base.fisher_init,
            divergence_threshold: base.divergence_threshold,
            window: match env {
                EnvKind::Abstract => 0,
                EnvKind::Traffic => 200,
            },
            workers: 0,
            out_dir: PathBuf::from("out"),
        }
    }

    pub fn num_agents(&self) -> usize {
        match self.env {
            EnvKind::Abstract => self.abstract_params.num_agents,
            EnvKind::Traffic => man_core::env::traffic::NUM_LIGHTS,
        }
    }

    /// The CI profile: 300 epochs and the first three seeds.
    pub fn apply_fast(&mut self) {
        self.epochs = 300;
        self.seeds.truncate(3);
        if self.env == EnvKind::Abstract {
            self.record_interval = self.record_interval.min(10);
        }
    }

    pub fn train_config(&self, kind: AlgorithmKind) -> Result<TrainConfig, ConfigError> {
        let schedule = StepSchedule::polynomial(self.exponent_v, self.exponent_theta)
            .map_err(|e| ConfigError::Invalid(vec![e.to_string()]))?;
        let base = match self.env {
            EnvKind::Abstract => TrainConfig::abstract_default(kind),
            EnvKind::Traffic => TrainConfig::traffic_default(kind),
        };
        let config = TrainConfig {
            schedule,
            topology: self.topology,
            trace_decay: self.trace_lambda,
            trace_target: self.trace_target,
            fisher_init: self.fisher_init,
            steps: self.epochs,
            record_interval: self.record_interval,
            record_theta: self.algorithms.contains(&AlgorithmKind::Maac),
            divergence_threshold: self.divergence_threshold,
            ..base
        };
        config.validate().map_err(|e| ConfigError::Invalid(vec![e.to_string()]))?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        if self.seeds.is_empty() {
            problems.push("at least one seed is required".to_string());
        }
        if self.algorithms.is_empty() {
            problems.push("at least one algorithm is required".to_string());
        }
        if self.epochs == 0 {
            problems.push("epochs must be at least 1".to_string());
        }
        if self.record_interval == 0 {
            problems.push("record_interval must be at least 1".to_string());
        }
        if let Err(e) = StepSchedule::polynomial(self.exponent_v, self.exponent_theta) {
            problems.push(format!("schedule: {e}"));
        }
        if !(0.0..1.0).contains(&self.trace_lambda) {
            problems.push("trace_lambda must lie in [0, 1)".to_string());
        }
        if !(self.fisher_init > 0.0) {
            problems.push("fisher_init must be positive".to_string());
        }
        if !(self.divergence_threshold > 0.0) {
            problems.push("divergence_threshold must be positive".to_string());
        }
        if let Topology::Random { connectivity_ratio } = self.topology {
            if !(connectivity_ratio > 0.0 && connectivity_ratio <= 1.0) {
                problems.push("connectivity_ratio must lie in (0, 1]".to_string());
            }
        }
        if let Err(e) = self.traffic.validate() {
            problems.push(format!("traffic: {e}"));
        }
        let p = &self.abstract_params;
        if p.num_agents == 0 || p.num_states == 0 || p.num_actions == 0 {
            problems.push("abstract env needs agents, states and actions".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    run: RawRun,
    #[serde(default)]
    schedule: RawSchedule,
    #[serde(default)]
    consensus: RawConsensus,
    #[serde(default)]
    critic: RawCritic,
    #[serde(default, rename = "abstract")]
    abstract_env: RawAbstract,
    #[serde(default)]
    traffic: RawTraffic,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    env: Option<String>,
    algorithms: Option<Vec<String>>,
    epochs: Option<usize>,
    record_interval: Option<usize>,
    seeds: Option<RawSeeds>,
    window: Option<usize>,
    workers: Option<usize>,
    out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawSeeds {
    List(Vec<u64>),
    Range(String),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    exponent_v: Option<f64>,
    exponent_theta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConsensus {
    mode: Option<String>,
    connectivity_ratio: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCritic {
    trace_lambda: Option<f64>,
    trace_target: Option<String>,
    fisher_init: Option<f64>,
    divergence_threshold: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAbstract {
    agents: Option<usize>,
    states: Option<usize>,
    actions: Option<usize>,
    policy_dim: Option<usize>,
    value_dim: Option<usize>,
    reward_dim: Option<usize>,
    env_file: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTraffic {
    pattern: Option<u8>,
    vehicles: Option<u64>,
    horizon: Option<u64>,
    epoch_seconds: Option<u32>,
    capacity: Option<usize>,
    service_rate: Option<f64>,
    link_travel_seconds: Option<u32>,
    warmup_epochs: Option<u32>,
}

/// Line of the first key `section.key` in `text`, for errors found after
/// deserialisation.
fn line_of(text: &str, section: &str, key: &str) -> usize {
    let mut current = "";
    for (idx, raw) in text.lines().enumerate() {
        let t = raw.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            current = name.trim();
        } else if current == section && t.split('=').next().map(str::trim) == Some(key) {
            return idx + 1;
        }
    }
    0
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn parse_seeds(text: &str, seeds: RawSeeds) -> Result<Vec<u64>, ConfigError> {
    match seeds {
        RawSeeds::List(v) => Ok(v),
        RawSeeds::Range(r) => {
            let bad = || ConfigError::parse(line_of(text, "run", "seeds"), format!("invalid seed range `{r}`"));
            let (a, b) = r.split_once("..").ok_or_else(bad)?;
            let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            if b < a {
                return Err(bad());
            }
            Ok((a..=b).collect())
        }
    }
}

/// Parses configuration text. Empty input yields the abstract-environment
/// defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1);
        ConfigError::parse(line, e.message().trim_end().to_string())
    })?;
    let at = |section: &str, key: &str, message: String| ConfigError::parse(line_of(text, section, key), message);

    let env = match raw.run.env.as_deref() {
        None | Some("abstract") => EnvKind::Abstract,
        Some("traffic") => EnvKind::Traffic,
        Some(other) => return Err(at("run", "env", format!("unknown env `{other}`"))),
    };
    let mut c = RunConfig::defaults(env);

    let run = raw.run;
    if let Some(names) = run.algorithms {
        let mut kinds = Vec::new();
        for name in names {
            let kind = AlgorithmKind::from_name(&name)
                .ok_or_else(|| at("run", "algorithms", format!("unknown algorithm `{name}`")))?;
            if !kinds.contains(&kind) {
                kinds.push(kind);
            }
        }
        c.algorithms = kinds;
    }
    if let Some(seeds) = run.seeds {
        c.seeds = parse_seeds(text, seeds)?;
    }
    set(&mut c.epochs, run.epochs);
    set(&mut c.record_interval, run.record_interval);
    set(&mut c.window, run.window);
    set(&mut c.workers, run.workers);
    set(&mut c.out_dir, run.out);

    set(&mut c.exponent_v, raw.schedule.exponent_v);
    set(&mut c.exponent_theta, raw.schedule.exponent_theta);

    let critic = raw.critic;
    set(&mut c.trace_lambda, critic.trace_lambda);
    set(&mut c.fisher_init, critic.fisher_init);
    set(&mut c.divergence_threshold, critic.divergence_threshold);
    if let Some(target) = critic.trace_target {
        c.trace_target = match target.as_str() {
            "value" => TraceTarget::ValueOnly,
            "value_and_reward" => TraceTarget::ValueAndReward,
            other => return Err(at("critic", "trace_target", format!("unknown trace target `{other}`"))),
        };
    }

    let a = raw.abstract_env;
    let p = &mut c.abstract_params;
    set(&mut p.num_agents, a.agents);
    set(&mut p.num_states, a.states);
    set(&mut p.num_actions, a.actions);
    set(&mut p.policy_dim, a.policy_dim);
    set(&mut p.value_dim, a.value_dim);
    set(&mut p.reward_dim, a.reward_dim);
    c.env_file = a.env_file;

    let t = raw.traffic;
    if let Some(id) = t.pattern {
        c.traffic.pattern = ArrivalPattern::from_id(id).map_err(|e| at("traffic", "pattern", e.to_string()))?;
    }
    set(&mut c.traffic.n_vehicles, t.vehicles);
    set(&mut c.traffic.horizon_seconds, t.horizon);
    set(&mut c.traffic.epoch_seconds, t.epoch_seconds);
    set(&mut c.traffic.capacity, t.capacity);
    set(&mut c.traffic.service_rate, t.service_rate);
    set(&mut c.traffic.link_travel_seconds, t.link_travel_seconds);
    set(&mut c.traffic.warmup_epochs, t.warmup_epochs);

    // Resolved last so the agent count is known.
    let random = match raw.consensus.mode.as_deref() {
        None => env == EnvKind::Abstract,
        Some("complete") => false,
        Some("random") => true,
        Some(other) => return Err(at("consensus", "mode", format!("unknown consensus mode `{other}`"))),
    };
    c.topology = match (random, raw.consensus.connectivity_ratio) {
        (false, None) => Topology::Complete,
        (false, Some(_)) => {
            return Err(at("consensus", "connectivity_ratio", "connectivity_ratio needs `mode = \"random\"`".into()))
        }
        (true, ratio) => Topology::Random {
            connectivity_ratio: ratio.unwrap_or((4.0 / c.num_agents() as f64).min(1.0)),
        },
    };
    c.validate()?;
    Ok(c)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_config(&text)
}
