//! Plain-text persistence of abstract MDP instances.
//!
//! ```text
//! # man-abstract-mdp v1
//! actions 2 2
//! states 3
//! reward_half_width 5e-1
//! transitions <rows> <cols>
//! ...one row per line...
//! ```
//!
//! Tables follow in the order transitions, rewards, state_features,
//! reward_features, then one `policy_features` table per agent. Row-major
//! tables keep the core crate's flat layouts: one row per (state, joint
//! action) pair. Floats are written in shortest round-trip form, so a reload
//! reproduces the instance bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use man_core::env::AbstractMdp;
use man_core::DMatrix;

use crate::error::HarnessError;

pub const ENV_VERSION_LINE: &str = "# man-abstract-mdp v1";

fn push_table(out: &mut String, name: &str, data: &[f64], cols: usize) {
    let rows = if cols == 0 { 0 } else { data.len() / cols };
    let _ = writeln!(out, "{name} {rows} {cols}");
    for row in data.chunks(cols.max(1)) {
        let line: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

pub fn render_mdp(mdp: &AbstractMdp) -> String {
    let mut out = String::new();
    out.push_str(ENV_VERSION_LINE);
    out.push('\n');
    let actions: Vec<String> = mdp.actions().iter().map(|a| a.to_string()).collect();
    let _ = writeln!(out, "actions {}", actions.join(" "));
    let _ = writeln!(out, "states {}", mdp.num_states());
    let _ = writeln!(out, "reward_half_width {:e}", mdp.reward_half_width());
    push_table(&mut out, "transitions", mdp.transitions(), mdp.num_states());
    push_table(&mut out, "rewards", mdp.rewards(), mdp.num_agents());
    let phi = mdp.state_feature_table();
    push_table(&mut out, "state_features", &row_major(phi), phi.ncols());
    push_table(&mut out, "reward_features", mdp.reward_feature_table(), mdp.reward_dim());
    for per_state in mdp.policy_feature_table() {
        let cols = per_state[0].ncols();
        let flat: Vec<f64> = per_state.iter().flat_map(row_major).collect();
        push_table(&mut out, "policy_features", &flat, cols);
    }
    out
}

pub fn write_mdp(path: &Path, mdp: &AbstractMdp) -> Result<(), HarnessError> {
    std::fs::write(path, render_mdp(mdp)).map_err(|e| HarnessError::io(path, e))
}

struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Lines<'a> {
    fn err(&self, line: usize, msg: impl std::fmt::Display) -> HarnessError {
        HarnessError::format(self.path, format!("line {line}: {msg}"))
    }

    fn next(&mut self) -> Result<(usize, &'a str), HarnessError> {
        for (idx, raw) in self.inner.by_ref() {
            let t = raw.trim();
            if !t.is_empty() && !t.starts_with('#') {
                return Ok((idx + 1, t));
            }
        }
        Err(HarnessError::format(self.path, "unexpected end of file"))
    }

    fn keyword(&mut self, key: &str) -> Result<(usize, Vec<&'a str>), HarnessError> {
        let (line, text) = self.next()?;
        let mut words = text.split_whitespace();
        if words.next() != Some(key) {
            return Err(self.err(line, format!("expected `{key}`")));
        }
        Ok((line, words.collect()))
    }

    fn numbers<T: std::str::FromStr>(&self, line: usize, words: &[&str]) -> Result<Vec<T>, HarnessError> {
        words
            .iter()
            .map(|w| w.parse().map_err(|_| self.err(line, format!("bad number `{w}`"))))
            .collect()
    }

    /// Reads a `name rows cols` header and its rows; returns the flat data and
    /// the column count.
    fn table(&mut self, name: &str) -> Result<(Vec<f64>, usize), HarnessError> {
        let (line, words) = self.keyword(name)?;
        let dims: Vec<usize> = self.numbers(line, &words)?;
        let [rows, cols] = dims[..] else {
            return Err(self.err(line, "expected row and column counts"));
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (line, text) = self.next()?;
            let words: Vec<&str> = text.split_whitespace().collect();
            if words.len() != cols {
                return Err(self.err(line, format!("expected {cols} values, found {}", words.len())));
            }
            data.extend(self.numbers::<f64>(line, &words)?);
        }
        Ok((data, cols))
    }
}

pub fn parse_mdp(path: &Path, text: &str) -> Result<AbstractMdp, HarnessError> {
    if text.lines().next() != Some(ENV_VERSION_LINE) {
        return Err(HarnessError::format(path, format!("expected `{ENV_VERSION_LINE}` on the first line")));
    }
    let mut lines = Lines {
        path,
        inner: text.lines().enumerate().peekable(),
    };
    let (line, words) = lines.keyword("actions")?;
    let actions: Vec<usize> = lines.numbers(line, &words)?;
    let (line, words) = lines.keyword("states")?;
    let states = match lines.numbers::<usize>(line, &words)?[..] {
        [s] => s,
        _ => return Err(lines.err(line, "expected one state count")),
    };
    let (line, words) = lines.keyword("reward_half_width")?;
    let half_width = match lines.numbers::<f64>(line, &words)?[..] {
        [w] => w,
        _ => return Err(lines.err(line, "expected one value")),
    };
    let (transitions, _) = lines.table("transitions")?;
    let (rewards, _) = lines.table("rewards")?;
    let (phi, value_dim) = lines.table("state_features")?;
    let (reward_features, _) = lines.table("reward_features")?;
    let mut policy_features = Vec::with_capacity(actions.len());
    for &count in &actions {
        let (flat, m) = lines.table("policy_features")?;
        let block = count * m;
        if block == 0 || flat.len() != states * block {
            return Err(HarnessError::format(path, "policy feature table has the wrong size"));
        }
        policy_features.push(
            flat.chunks(block)
                .map(|c| DMatrix::from_row_slice(count, m, c))
                .collect(),
        );
    }
    if value_dim == 0 || phi.len() != states * value_dim {
        return Err(HarnessError::format(path, "state feature table has the wrong size"));
    }
    let phi = DMatrix::from_row_slice(states, value_dim, &phi);
    Ok(AbstractMdp::from_tables(
        actions,
        states,
        transitions,
        rewards,
        phi,
        reward_features,
        policy_features,
        half_width,
    )?)
}

pub fn read_mdp(path: &Path) -> Result<AbstractMdp, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_mdp(path, &text)
}
