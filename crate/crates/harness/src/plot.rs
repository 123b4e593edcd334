//! Columnar plot series: one row per epoch, one column per algorithm.
//!
//! Each cell is the mean over the algorithm's runs at that epoch; epochs an
//! algorithm did not reach are written as `nan`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use man_core::algorithms::AlgorithmKind;

use crate::error::HarnessError;
use crate::metrics_io::{read_metrics, MetricsRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    CongestionCurve,
    ParamDistance,
    LogParamDistance,
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [PlotKind::CongestionCurve, PlotKind::ParamDistance, PlotKind::LogParamDistance];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::CongestionCurve => "congestion_curve",
            PlotKind::ParamDistance => "param_distance",
            PlotKind::LogParamDistance => "log_param_distance",
        }
    }
}

impl FromStr for PlotKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown plot kind `{s}`"))
    }
}

/// The plotted value of one run at one epoch, from that epoch's rows.
fn epoch_value(kind: PlotKind, rows: &[&MetricsRow], agent: Option<usize>) -> Option<f64> {
    match kind {
        PlotKind::CongestionCurve => match agent {
            None => rows.first().map(|r| r.network_total),
            Some(i) => rows.iter().find(|r| r.agent == i).map(|r| r.reward),
        },
        PlotKind::ParamDistance | PlotKind::LogParamDistance => {
            let d = match agent {
                None => {
                    let parts: Option<Vec<f64>> = rows.iter().map(|r| r.theta_dist).collect();
                    parts.filter(|p| !p.is_empty())?.iter().map(|x| x * x).sum::<f64>().sqrt()
                }
                Some(i) => rows.iter().find(|r| r.agent == i)?.theta_dist?,
            };
            Some(if kind == PlotKind::LogParamDistance { d.log10() } else { d })
        }
    }
}

/// Builds the series from metrics rows. With `agent = None` congestion curves
/// use the network total and distances combine every agent's distance into
/// one norm.
pub fn plot_series(rows: &[MetricsRow], kind: PlotKind, agent: Option<usize>) -> (Vec<String>, Vec<(usize, Vec<f64>)>) {
    let mut runs: BTreeMap<(&str, &str), BTreeMap<usize, Vec<&MetricsRow>>> = BTreeMap::new();
    for r in rows {
        runs.entry((&r.algo, &r.run_id))
            .or_default()
            .entry(r.epoch)
            .or_default()
            .push(r);
    }
    // algo -> epoch -> values over runs
    let mut acc: BTreeMap<&str, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for ((algo, _), epochs) in &runs {
        for (&epoch, rs) in epochs {
            if let Some(v) = epoch_value(kind, rs, agent) {
                acc.entry(algo).or_default().entry(epoch).or_default().push(v);
            }
        }
    }
    let mut algos: Vec<&str> = acc.keys().copied().collect();
    algos.sort_by_key(|a| {
        (
            AlgorithmKind::ALL.iter().position(|k| k.name() == *a).unwrap_or(usize::MAX),
            a.to_string(),
        )
    });
    let epochs: std::collections::BTreeSet<usize> = acc.values().flat_map(|m| m.keys().copied()).collect();
    let table = epochs
        .into_iter()
        .map(|e| {
            let cells = algos
                .iter()
                .map(|a| match acc[a].get(&e) {
                    Some(v) => v.iter().sum::<f64>() / v.len() as f64,
                    None => f64::NAN,
                })
                .collect();
            (e, cells)
        })
        .collect();
    (algos.into_iter().map(String::from).collect(), table)
}

pub fn render_series(kind: PlotKind, columns: &[String], table: &[(usize, Vec<f64>)]) -> String {
    let mut out = format!("# {}\nepoch", kind.name());
    for c in columns {
        out.push(' ');
        out.push_str(c);
    }
    out.push('\n');
    for (epoch, cells) in table {
        let _ = write!(out, "{epoch}");
        for v in cells {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out
}

/// Writes the series of `kind` for the given metrics files to `out`.
pub fn emit_plot_data(files: &[PathBuf], kind: PlotKind, agent: Option<usize>, out: &Path) -> Result<(), HarnessError> {
    let mut rows = Vec::new();
    for f in files {
        rows.extend(read_metrics(f)?);
    }
    let (columns, table) = plot_series(&rows, kind, agent);
    std::fs::write(out, render_series(kind, &columns, &table)).map_err(|e| HarnessError::io(out, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(algo: &str, seed: u64, epoch: usize, agent: usize, total: f64, dist: Option<f64>) -> MetricsRow {
        MetricsRow {
            run_id: format!("s{seed}-{algo}"),
            seed,
            algo: algo.into(),
            epoch,
            agent,
            reward: -total - agent as f64,
            network_total: total,
            disagreement: 0.0,
            theta_dist: dist,
        }
    }

    #[test]
    fn empty_input_gives_a_header_only_file() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("p.txt");
        emit_plot_data(&[], PlotKind::CongestionCurve, None, &out).unwrap();
        assert_eq!(std::fs::read_to_string(&out).unwrap(), "# congestion_curve\nepoch\n");
    }

    #[test]
    fn congestion_columns_and_passthrough() {
        let rows = vec![
            row("FI-MAN", 1, 1, 0, 5.0, Some(0.0)),
            row("MAAC", 1, 1, 0, 4.0, None),
            row("MAAC", 1, 2, 0, 3.0, None),
            row("MAAC", 2, 1, 0, 6.0, None),
        ];
        let (cols, table) = plot_series(&rows, PlotKind::CongestionCurve, None);
        assert_eq!(cols, ["MAAC", "FI-MAN"]);
        assert_eq!(table[0], (1, vec![5.0, 5.0]));
        assert_eq!(table[1].1[0], 3.0);
        assert!(table[1].1[1].is_nan());
        let text = render_series(PlotKind::CongestionCurve, &cols, &table);
        assert_eq!(text.lines().nth(1).unwrap().split(' ').count(), 1 + cols.len());
        let (_, per_agent) = plot_series(&rows, PlotKind::CongestionCurve, Some(0));
        assert_eq!(per_agent[1].1[0], -3.0);
    }

    #[test]
    fn distances_combine_agents_and_take_logs() {
        let rows = vec![
            row("MAAC", 1, 1, 0, 1.0, None),
            row("FI-MAN", 1, 1, 0, 1.0, Some(30.0)),
            row("FI-MAN", 1, 1, 1, 1.0, Some(40.0)),
        ];
        let (cols, table) = plot_series(&rows, PlotKind::ParamDistance, None);
        assert_eq!(cols, ["FI-MAN"]);
        assert_eq!(table, vec![(1, vec![50.0])]);
        let (_, logs) = plot_series(&rows, PlotKind::LogParamDistance, Some(1));
        assert!((logs[0].1[0] - 40f64.log10()).abs() < 1e-15);
    }

    #[test]
    fn kinds_parse_by_name() {
        for k in PlotKind::ALL {
            assert_eq!(k.name().parse::<PlotKind>(), Ok(k));
        }
        assert!("histogram".parse::<PlotKind>().is_err());
    }
}
