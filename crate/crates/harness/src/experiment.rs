//! Fan-out of (seed × algorithm) training runs.
//!
//! Runs of one seed share the environment draws: the abstract MDP is drawn
//! once per seed from the generation stream (or loaded from `env_file`) and
//! every run replays the same dynamics stream. MAAC runs first on each seed
//! so that the other algorithms can record their actor distance to it.

use std::path::Path;

use man_core::algorithms::{train, AlgorithmKind};
use man_core::env::{AbstractEnv, AbstractMdp, TrafficEnv};
use man_core::metrics::RunMetrics;
use man_core::rng::{substream, Stream};
use rayon::prelude::*;

use crate::config::{EnvKind, RunConfig};
use crate::envfile::read_mdp;
use crate::error::HarnessError;
use crate::metrics_io::{rows_for_run, write_manifest, write_metrics, Manifest, ManifestEntry, RunStatus, MANIFEST_FILE};

pub const RUNS_DIR: &str = "runs";

pub fn run_id(seed: u64, kind: AlgorithmKind) -> String {
    format!("s{seed}-{}", kind.name().to_ascii_lowercase())
}

enum SeedEnv {
    Abstract(AbstractMdp),
    Traffic,
}

fn train_one(config: &RunConfig, env: &SeedEnv, kind: AlgorithmKind, seed: u64) -> Result<RunMetrics, HarnessError> {
    let tc = config.train_config(kind)?;
    let metrics = match env {
        SeedEnv::Abstract(mdp) => train(&mut AbstractEnv::new(mdp), &tc, seed)?,
        SeedEnv::Traffic => train(&mut TrafficEnv::new(config.traffic.clone())?, &tc, seed)?,
    };
    Ok(metrics)
}

fn finish(
    config: &RunConfig,
    seed: u64,
    kind: AlgorithmKind,
    result: Result<RunMetrics, HarnessError>,
    reference: Option<&RunMetrics>,
) -> Result<ManifestEntry, HarnessError> {
    let id = run_id(seed, kind);
    let mut entry = ManifestEntry {
        run_id: id.clone(),
        seed,
        algo: kind.name().to_string(),
        status: RunStatus::Completed,
        file: None,
        steps: 0,
        global_average_reward: 0.0,
        fisher_skipped: 0,
    };
    let metrics = match result {
        Ok(m) => m,
        Err(HarnessError::Core(e)) => {
            log::warn!("run {id} aborted: {e}");
            entry.status = RunStatus::Aborted(e.to_string());
            return Ok(entry);
        }
        Err(e) => return Err(e),
    };
    let distances = match reference {
        Some(r) if kind != AlgorithmKind::Maac => Some(metrics.theta_distance(r)),
        _ => None,
    };
    let rel = format!("{RUNS_DIR}/{id}.csv");
    write_metrics(
        &config.out_dir.join(&rel),
        &rows_for_run(&id, &metrics, distances.as_deref()),
    )?;
    log::info!(
        "run {id}: {} steps, average reward {:.4}",
        metrics.steps,
        metrics.global_average_reward
    );
    entry.file = Some(rel);
    entry.steps = metrics.steps;
    entry.global_average_reward = metrics.global_average_reward;
    entry.fisher_skipped = metrics.fisher_skipped;
    Ok(entry)
}

fn run_seed(config: &RunConfig, env: &SeedEnv, seed: u64) -> Result<Vec<ManifestEntry>, HarnessError> {
    let has_maac = config.algorithms.contains(&AlgorithmKind::Maac);
    let mut reference = None;
    let mut entries = Vec::new();
    if has_maac {
        let result = train_one(config, env, AlgorithmKind::Maac, seed);
        reference = result.as_ref().ok().cloned();
        entries.push(finish(config, seed, AlgorithmKind::Maac, result, None)?);
    }
    let others: Vec<AlgorithmKind> = config
        .algorithms
        .iter()
        .copied()
        .filter(|&k| k != AlgorithmKind::Maac)
        .collect();
    let rest = others
        .par_iter()
        .map(|&kind| {
            let result = train_one(config, env, kind, seed);
            finish(config, seed, kind, result, reference.as_ref())
        })
        .collect::<Result<Vec<_>, _>>()?;
    entries.extend(rest);
    Ok(entries)
}

fn seed_env(config: &RunConfig, shared: Option<&AbstractMdp>, seed: u64) -> Result<SeedEnv, HarnessError> {
    Ok(match config.env {
        EnvKind::Traffic => SeedEnv::Traffic,
        EnvKind::Abstract => SeedEnv::Abstract(match shared {
            Some(mdp) => mdp.clone(),
            None => AbstractMdp::generate(&config.abstract_params, &mut substream(seed, Stream::EnvGeneration))?,
        }),
    })
}

/// Trains every (seed, algorithm) pair, writes one metrics file per completed
/// run under `out/runs/` and the manifest at `out/manifest.csv`. Aborted runs
/// are recorded in the manifest and do not stop the others.
pub fn run_experiment(config: &RunConfig) -> Result<Manifest, HarnessError> {
    config.validate()?;
    let runs_dir = config.out_dir.join(RUNS_DIR);
    std::fs::create_dir_all(&runs_dir).map_err(|e| HarnessError::io(&runs_dir, e))?;
    let shared = match (&config.env, &config.env_file) {
        (EnvKind::Abstract, Some(path)) => Some(read_mdp(path)?),
        _ => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| HarnessError::format(&config.out_dir, format!("cannot start worker pool: {e}")))?;
    let per_seed = pool.install(|| {
        config
            .seeds
            .par_iter()
            .map(|&seed| run_seed(config, &seed_env(config, shared.as_ref(), seed)?, seed))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut entries: Vec<ManifestEntry> = per_seed.into_iter().flatten().collect();
    let order = |algo: &str| AlgorithmKind::ALL.iter().position(|k| k.name() == algo);
    let seed_pos = |seed: u64| config.seeds.iter().position(|&s| s == seed);
    entries.sort_by_key(|e| (seed_pos(e.seed), order(&e.algo)));
    let manifest = Manifest {
        env: config.env.name().to_string(),
        entries,
    };
    write_manifest(&config.out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Metrics files of the completed runs listed in `dir/manifest.csv`.
pub fn completed_runs(dir: &Path) -> Result<Vec<std::path::PathBuf>, HarnessError> {
    let manifest = crate::metrics_io::read_manifest(&dir.join(MANIFEST_FILE))?;
    Ok(manifest.metric_files(dir))
}
