use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use man_core::algorithms::Rate;
use man_core::env::AbstractMdp;
use man_core::rng::{substream, Stream};
use man_harness::checks::{
    deterministic_suite, fisher_suite, kl_suite, proportionality_suite, render_deterministic, render_fisher, render_kl,
    sigma_sweep, write_text,
};
use man_harness::envfile::write_mdp;
use man_harness::experiment::{completed_runs, run_experiment};
use man_harness::plot::{emit_plot_data, PlotKind};
use man_harness::summary::{render_table, summarize, write_summary, SUMMARY_FILE};
use man_harness::{load_config, HarnessError, RunConfig};

/// Decentralized multi-agent actor-critic experiments.
#[derive(Debug, Parser)]
#[command(name = "man", version)]
struct Cli {
    /// Run configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use this single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// CI profile: 300 epochs and the first three seeds.
    #[arg(long, global = true)]
    fast: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw an abstract MDP from the seed and write it as text.
    GenEnv {
        /// Target file; defaults to `<out>/env.txt`.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Train every configured (seed, algorithm) pair.
    Train,
    /// Per-algorithm mean, population sd and 95% interval (CF = 1.96·sd/√runs)
    /// over the final-window means of the runs in `<out>/manifest.csv`.
    Summarize {
        /// Final window in epochs; 0 uses the whole run.
        #[arg(long)]
        window: Option<usize>,
    },
    /// Write a columnar plot series for the runs in `<out>/manifest.csv`.
    PlotData {
        /// congestion_curve, param_distance or log_param_distance.
        #[arg(long)]
        kind: PlotKind,
        /// Plot one agent instead of the network figure.
        #[arg(long)]
        agent: Option<usize>,
        /// Target file; defaults to `<out>/<kind>.txt`.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// KL divergence checks and the KL/policy-gradient proportionality fit.
    AnalyzeKl {
        #[arg(long, default_value_t = 5)]
        instances: usize,
        /// Monte-Carlo samples per gradient estimate.
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
    },
    /// Deterministic MAAC against deterministic FI-MAN with exact gradients.
    CompareDeterministic {
        #[arg(long, default_value_t = 10)]
        instances: usize,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        /// Constant actor step size.
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
    },
    /// Fisher recursions against the exact Fisher matrix, and the σ_min bound.
    CheckFisher {
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 1000)]
        cases: usize,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig, HarnessError> {
    let mut config = match &cli.config {
        Some(path) => load_config(path)?,
        None => man_harness::parse_config("")?,
    };
    if cli.fast {
        config.apply_fast();
    }
    if let Some(seed) = cli.seed {
        config.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn ensure_dir(dir: &std::path::Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| man_harness::error::HarnessError::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let config = resolve(&cli)?;
    let seed = config.seeds[0];
    let out = &config.out_dir;
    match cli.command {
        Command::GenEnv { file } => {
            ensure_dir(out)?;
            let mdp = AbstractMdp::generate(&config.abstract_params, &mut substream(seed, Stream::EnvGeneration))?;
            let path = file.unwrap_or_else(|| out.join("env.txt"));
            write_mdp(&path, &mdp)?;
            println!("wrote {}", path.display());
        }
        Command::Train => {
            let manifest = run_experiment(&config)?;
            let failed = manifest.aborted();
            println!(
                "{} runs, {} completed; manifest in {}",
                manifest.entries.len(),
                manifest.entries.len() - failed,
                out.display()
            );
            if failed > 0 {
                for e in &manifest.entries {
                    if let man_harness::metrics_io::RunStatus::Aborted(msg) = &e.status {
                        eprintln!("{}: {msg}", e.run_id);
                    }
                }
                return Err(HarnessError::RunsAborted {
                    failed,
                    total: manifest.entries.len(),
                });
            }
        }
        Command::Summarize { window } => {
            let table = summarize(&completed_runs(out)?, window.unwrap_or(config.window))?;
            print!("{}", render_table(&table));
            write_summary(&out.join(SUMMARY_FILE), &table)?;
        }
        Command::PlotData { kind, agent, file } => {
            let path = file.unwrap_or_else(|| out.join(format!("{}.txt", kind.name())));
            emit_plot_data(&completed_runs(out)?, kind, agent, &path)?;
            println!("wrote {}", path.display());
        }
        Command::AnalyzeKl { instances, samples } => {
            let rows = kl_suite(seed, instances, &[1e-3, 1e-2, 1.0], samples)?;
            let prop = proportionality_suite(seed, instances, &[1e-3, 1e-2])?;
            let text = render_kl(&rows, &prop);
            print!("{text}");
            ensure_dir(out)?;
            write_text(&out.join("kl_report.txt"), &text)?;
        }
        Command::CompareDeterministic { instances, steps, beta } => {
            let rows = deterministic_suite(seed, instances, steps, Rate::Constant(beta))?;
            let text = render_deterministic(&rows);
            print!("{text}");
            ensure_dir(out)?;
            write_text(&out.join("deterministic.txt"), &text)?;
        }
        Command::CheckFisher { samples, cases } => {
            let text = render_fisher(&fisher_suite(seed, samples)?, &sigma_sweep(seed, cases)?);
            print!("{text}");
            ensure_dir(out)?;
            write_text(&out.join("fisher.txt"), &text)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
