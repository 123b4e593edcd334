//! CSV persistence of per-run metrics and of the run manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use man_core::metrics::RunMetrics;

use crate::error::HarnessError;

pub const METRICS_VERSION_LINE: &str = "# man-metrics v1";
pub const METRICS_HEADER: [&str; 9] = [
    "run_id",
    "seed",
    "algo",
    "epoch",
    "agent",
    "reward",
    "network_total",
    "disagreement",
    "theta_dist",
];
pub const MANIFEST_VERSION_LINE: &str = "# man-manifest v1";
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub seed: u64,
    pub algo: String,
    pub epoch: usize,
    pub agent: usize,
    pub reward: f64,
    pub network_total: f64,
    pub disagreement: f64,
    pub theta_dist: Option<f64>,
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path, version_line: &str) -> Result<csv::Writer<BufWriter<File>>, HarnessError> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{version_line}").map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::Writer::from_writer(out))
}

fn open(path: &Path, version_line: &str) -> Result<csv::Reader<File>, HarnessError> {
    let text_start = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    let first = text_start.split(|&b| b == b'\n').next().unwrap_or(&[]);
    if first != version_line.as_bytes() {
        return Err(HarnessError::format(path, format!("expected `{version_line}` on the first line")));
    }
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file))
}

/// One row per record and agent, ordered by epoch then agent.
pub fn rows_for_run(run_id: &str, metrics: &RunMetrics, theta_dist: Option<&[Vec<f64>]>) -> Vec<MetricsRow> {
    let mut rows = Vec::with_capacity(metrics.records.len() * metrics.num_agents);
    for (k, rec) in metrics.records.iter().enumerate() {
        for (agent, &reward) in rec.rewards.iter().enumerate() {
            rows.push(MetricsRow {
                run_id: run_id.to_string(),
                seed: metrics.seed,
                algo: metrics.kind.name().to_string(),
                epoch: rec.epoch,
                agent,
                reward,
                network_total: rec.network_total,
                disagreement: rec.disagreement,
                theta_dist: theta_dist.and_then(|d| d.get(k)).and_then(|d| d.get(agent)).copied(),
            });
        }
    }
    rows
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<(), HarnessError> {
    let mut w = create(path, METRICS_VERSION_LINE)?;
    w.write_record(METRICS_HEADER).map_err(csv_err(path))?;
    for r in rows {
        let dist = r.theta_dist.map(|d| d.to_string()).unwrap_or_default();
        w.write_record([
            r.run_id.as_str(),
            &r.seed.to_string(),
            &r.algo,
            &r.epoch.to_string(),
            &r.agent.to_string(),
            &r.reward.to_string(),
            &r.network_total.to_string(),
            &r.disagreement.to_string(),
            &dist,
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, idx: usize, line: u64) -> Result<T, HarnessError> {
    let raw = rec.get(idx).unwrap_or("");
    raw.parse()
        .map_err(|_| HarnessError::format(path, format!("row {line}: bad `{}` value `{raw}`", METRICS_HEADER[idx])))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    let mut r = open(path, METRICS_VERSION_LINE)?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(METRICS_HEADER.iter().copied()) {
        return Err(HarnessError::format(path, "unexpected metrics header"));
    }
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let line = k as u64 + 1;
        let dist = rec.get(8).unwrap_or("");
        rows.push(MetricsRow {
            run_id: rec.get(0).unwrap_or("").to_string(),
            seed: field(path, &rec, 1, line)?,
            algo: rec.get(2).unwrap_or("").to_string(),
            epoch: field(path, &rec, 3, line)?,
            agent: field(path, &rec, 4, line)?,
            reward: field(path, &rec, 5, line)?,
            network_total: field(path, &rec, 6, line)?,
            disagreement: field(path, &rec, 7, line)?,
            theta_dist: if dist.is_empty() { None } else { Some(field(path, &rec, 8, line)?) },
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    Aborted(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub run_id: String,
    pub seed: u64,
    pub algo: String,
    pub status: RunStatus,
    /// Metrics file relative to the manifest's directory.
    pub file: Option<String>,
    pub steps: usize,
    pub global_average_reward: f64,
    pub fisher_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub env: String,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn aborted(&self) -> usize {
        self.entries.iter().filter(|e| e.status != RunStatus::Completed).count()
    }

    /// Paths of every completed run's metrics file.
    pub fn metric_files(&self, dir: &Path) -> Vec<PathBuf> {
        self.entries.iter().filter_map(|e| e.file.as_ref().map(|f| dir.join(f))).collect()
    }
}

const MANIFEST_HEADER: [&str; 10] = [
    "run_id",
    "seed",
    "algo",
    "env",
    "status",
    "file",
    "steps",
    "global_average_reward",
    "fisher_skipped",
    "message",
];

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<(), HarnessError> {
    let mut w = create(path, MANIFEST_VERSION_LINE)?;
    w.write_record(MANIFEST_HEADER).map_err(csv_err(path))?;
    for e in &manifest.entries {
        let (status, message) = match &e.status {
            RunStatus::Completed => ("completed", ""),
            RunStatus::Aborted(m) => ("aborted", m.as_str()),
        };
        w.write_record([
            e.run_id.as_str(),
            &e.seed.to_string(),
            &e.algo,
            &manifest.env,
            status,
            e.file.as_deref().unwrap_or(""),
            &e.steps.to_string(),
            &e.global_average_reward.to_string(),
            &e.fisher_skipped.to_string(),
            message,
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest, HarnessError> {
    let mut r = open(path, MANIFEST_VERSION_LINE)?;
    let mut manifest = Manifest::default();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let bad = |what: &str| HarnessError::format(path, format!("manifest row {}: bad {what}", k + 1));
        let get = |i: usize| rec.get(i).unwrap_or("");
        manifest.env = get(3).to_string();
        manifest.entries.push(ManifestEntry {
            run_id: get(0).to_string(),
            seed: get(1).parse().map_err(|_| bad("seed"))?,
            algo: get(2).to_string(),
            status: match get(4) {
                "completed" => RunStatus::Completed,
                "aborted" => RunStatus::Aborted(get(9).to_string()),
                _ => return Err(bad("status")),
            },
            file: Some(get(5).to_string()).filter(|f| !f.is_empty()),
            steps: get(6).parse().map_err(|_| bad("steps"))?,
            global_average_reward: get(7).parse().map_err(|_| bad("reward"))?,
            fisher_skipped: get(8).parse().map_err(|_| bad("skip count"))?,
        });
    }
    Ok(manifest)
}
