//! Per-run time series produced by training.

use alloc::vec::Vec;

use nalgebra::DVector;

use crate::algorithms::AlgorithmKind;

/// Averages over one recording block.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based record index.
    pub epoch: usize,
    /// Iterations completed when the record was taken.
    pub step: usize,
    pub rewards: Vec<f64>,
    pub network_total: f64,
    pub disagreement: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub kind: AlgorithmKind,
    pub seed: u64,
    pub num_agents: usize,
    pub records: Vec<EpochRecord>,
    /// Every agent's actor parameter at each record, when requested.
    pub theta_trace: Vec<Vec<DVector<f64>>>,
    pub steps: usize,
    /// Time average of the globally averaged reward over the whole run.
    pub global_average_reward: f64,
    pub fisher_skipped: usize,
    pub final_theta: Vec<DVector<f64>>,
    pub final_mu: Vec<f64>,
    pub final_v: Vec<DVector<f64>>,
}

impl RunMetrics {
    pub fn new(kind: AlgorithmKind, seed: u64, num_agents: usize) -> Self {
        RunMetrics {
            kind,
            seed,
            num_agents,
            records: Vec::new(),
            theta_trace: Vec::new(),
            steps: 0,
            global_average_reward: 0.0,
            fisher_skipped: 0,
            final_theta: Vec::new(),
            final_mu: Vec::new(),
            final_v: Vec::new(),
        }
    }

    /// `‖θ^i_self − θ^i_other‖` per record and agent, over the common prefix
    /// of the two traces.
    pub fn theta_distance(&self, other: &RunMetrics) -> Vec<Vec<f64>> {
        self.theta_trace
            .iter()
            .zip(&other.theta_trace)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).norm()).collect())
            .collect()
    }

    /// Mean of `network_total` over the last `window` records.
    pub fn final_window_mean(&self, window: usize) -> Option<f64> {
        let k = window.min(self.records.len());
        if k == 0 {
            return None;
        }
        let tail = &self.records[self.records.len() - k..];
        Some(tail.iter().map(|r| r.network_total).sum::<f64>() / k as f64)
    }

    /// Per-agent mean reward over the last `window` records.
    pub fn final_window_rewards(&self, window: usize) -> Option<Vec<f64>> {
        let k = window.min(self.records.len());
        if k == 0 {
            return None;
        }
        let tail = &self.records[self.records.len() - k..];
        let mut out = alloc::vec![0.0; self.num_agents];
        for r in tail {
            for (acc, x) in out.iter_mut().zip(&r.rewards) {
                *acc += x / k as f64;
            }
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn record(epoch: usize, total: f64) -> EpochRecord {
        EpochRecord {
            epoch,
            step: epoch,
            rewards: vec![-total / 2.0, -total / 2.0],
            network_total: total,
            disagreement: 0.0,
        }
    }

    #[test]
    fn window_means() {
        let mut m = RunMetrics::new(AlgorithmKind::Maac, 0, 2);
        assert_eq!(m.final_window_mean(3), None);
        m.records = (1..=4).map(|e| record(e, e as f64)).collect();
        assert_eq!(m.final_window_mean(2), Some(3.5));
        assert_eq!(m.final_window_mean(10), Some(2.5));
        assert_eq!(m.final_window_rewards(2), Some(vec![-1.75, -1.75]));
    }

    #[test]
    fn distances_cover_common_prefix() {
        let mut a = RunMetrics::new(AlgorithmKind::Maac, 0, 1);
        let mut b = RunMetrics::new(AlgorithmKind::FiMan, 0, 1);
        a.theta_trace = vec![vec![DVector::from_vec(vec![0.0, 0.0])]; 3];
        b.theta_trace = vec![vec![DVector::from_vec(vec![3.0, 4.0])]; 2];
        assert_eq!(a.theta_distance(&b), vec![vec![5.0], vec![5.0]]);
    }
}
