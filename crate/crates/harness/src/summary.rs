//! Per-algorithm statistics over the final-window means of completed runs.
//!
//! The standard deviation is the population one (divisor = number of runs)
//! and the correction factor is `CF = 1.96·sd/√runs`; the 95% interval is
//! `mean ± CF`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use man_core::algorithms::AlgorithmKind;

use crate::error::HarnessError;
use crate::metrics_io::{read_metrics, MetricsRow};

pub const SUMMARY_FILE: &str = "summary.csv";

/// Final-window averages of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_id: String,
    pub seed: u64,
    pub algo: String,
    pub network_total: f64,
    pub agent_rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub algo: String,
    pub runs: usize,
    pub mean: f64,
    pub sd: f64,
    pub cf: f64,
    pub lower: f64,
    pub upper: f64,
    /// Mean over runs of each agent's final-window reward.
    pub agent_rewards: Vec<f64>,
}

impl SummaryRow {
    pub fn overlaps(&self, other: &SummaryRow) -> bool {
        self.lower <= other.upper && other.lower <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn get(&self, kind: AlgorithmKind) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.algo == kind.name())
    }
}

/// Mean and population standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Collapses one run's rows to its final-window averages. `window` counts
/// epochs; 0 uses every epoch.
pub fn run_summary(rows: &[MetricsRow], window: usize) -> Option<RunSummary> {
    let first = rows.first()?;
    let mut epochs: BTreeMap<usize, (f64, Vec<(usize, f64)>)> = BTreeMap::new();
    for r in rows {
        let slot = epochs.entry(r.epoch).or_insert((r.network_total, Vec::new()));
        slot.1.push((r.agent, r.reward));
    }
    let skip = if window == 0 { 0 } else { epochs.len().saturating_sub(window) };
    let tail: Vec<_> = epochs.values().skip(skip).collect();
    let k = tail.len() as f64;
    let agents = tail.iter().flat_map(|(_, a)| a.iter().map(|(i, _)| i + 1)).max().unwrap_or(0);
    let mut agent_rewards = vec![0.0; agents];
    for (_, per_agent) in &tail {
        for &(i, r) in per_agent {
            agent_rewards[i] += r / k;
        }
    }
    Some(RunSummary {
        run_id: first.run_id.clone(),
        seed: first.seed,
        algo: first.algo.clone(),
        network_total: tail.iter().map(|(t, _)| t).sum::<f64>() / k,
        agent_rewards,
    })
}

/// Groups runs by algorithm; rows follow the fixed algorithm order, and
/// unknown algorithm names sort last alphabetically.
pub fn summarize_runs(runs: &[RunSummary]) -> SummaryTable {
    let mut groups: BTreeMap<(usize, String), Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        let pos = AlgorithmKind::ALL
            .iter()
            .position(|k| k.name() == r.algo)
            .unwrap_or(usize::MAX);
        groups.entry((pos, r.algo.clone())).or_default().push(r);
    }
    let rows = groups
        .into_iter()
        .map(|((_, algo), members)| {
            let totals: Vec<f64> = members.iter().map(|r| r.network_total).collect();
            let (mean, sd) = mean_sd(&totals);
            let cf = 1.96 * sd / (members.len() as f64).sqrt();
            let agents = members.iter().map(|r| r.agent_rewards.len()).max().unwrap_or(0);
            let agent_rewards = (0..agents)
                .map(|i| {
                    let vals: Vec<f64> = members.iter().filter_map(|r| r.agent_rewards.get(i).copied()).collect();
                    mean_sd(&vals).0
                })
                .collect();
            SummaryRow {
                algo,
                runs: members.len(),
                mean,
                sd,
                cf,
                lower: mean - cf,
                upper: mean + cf,
                agent_rewards,
            }
        })
        .collect();
    SummaryTable { rows }
}

/// Reads metrics files and summarises them. Rows of several runs may share
/// one file.
pub fn summarize(files: &[PathBuf], window: usize) -> Result<SummaryTable, HarnessError> {
    let mut runs = Vec::new();
    for path in files {
        let rows = read_metrics(path)?;
        let mut by_run: BTreeMap<&str, Vec<MetricsRow>> = BTreeMap::new();
        for r in &rows {
            by_run.entry(r.run_id.as_str()).or_default().push(r.clone());
        }
        runs.extend(by_run.values().filter_map(|r| run_summary(r, window)));
    }
    runs.sort_by(|a, b| (a.seed, &a.run_id).cmp(&(b.seed, &b.run_id)));
    Ok(summarize_runs(&runs))
}

pub fn write_summary(path: &Path, table: &SummaryTable) -> Result<(), HarnessError> {
    let agents = table.rows.iter().map(|r| r.agent_rewards.len()).max().unwrap_or(0);
    let mut header = vec!["algo", "runs", "mean", "sd", "cf", "lower", "upper"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    header.extend((1..=agents).map(|i| format!("agent_{i}")));
    let csv_err = |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(&header).map_err(csv_err)?;
    for r in &table.rows {
        let mut rec = vec![
            r.algo.clone(),
            r.runs.to_string(),
            r.mean.to_string(),
            r.sd.to_string(),
            r.cf.to_string(),
            r.lower.to_string(),
            r.upper.to_string(),
        ];
        rec.extend((0..agents).map(|i| r.agent_rewards.get(i).map(|x| x.to_string()).unwrap_or_default()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Fixed-width text rendering for the terminal.
pub fn render_table(table: &SummaryTable) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>4} {:>12} {:>12} {:>12} {:>25}",
        "algorithm", "runs", "mean", "sd", "CF", "95% interval"
    );
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{:<10} {:>4} {:>12.5} {:>12.5} {:>12.5}   [{:.5}, {:.5}]",
            r.algo, r.runs, r.mean, r.sd, r.cf, r.lower, r.upper
        );
    }
    out
}
