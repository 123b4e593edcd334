//! Boltzmann policies, their compatible features, and the Fisher
//! information estimates used by the natural-gradient engines.
//!
//! Action features for one state are held as a matrix with one row per
//! action, so `logits = Q θ` and `ψ(s, a) = q_a − Qᵀ π`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::check_dim;
use crate::linalg;
use crate::{Error, Result};

/// Per-state action features: row `a` is `q_{s,a}`.
pub type ActionFeatures = DMatrix<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct BoltzmannPolicy {
    theta: DVector<f64>,
}

impl BoltzmannPolicy {
    pub fn new(theta: DVector<f64>) -> Self {
        BoltzmannPolicy { theta }
    }

    pub fn zeros(dim: usize) -> Self {
        BoltzmannPolicy {
            theta: DVector::zeros(dim),
        }
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut DVector<f64> {
        &mut self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Softmax of `Q θ` with the largest logit subtracted first.
    pub fn action_probabilities(&self, features: &ActionFeatures) -> Result<DVector<f64>> {
        check_dim(self.theta.len(), features.ncols())?;
        if features.nrows() == 0 {
            return Err(Error::EmptyInput);
        }
        if !linalg::all_finite(&self.theta) {
            return Err(Error::NonFinite("policy parameter"));
        }
        let logits = features * &self.theta;
        Ok(softmax(&logits))
    }

    /// Score function `∇_θ log π(s, a) = q_a − Σ_b π(b) q_b`.
    pub fn compatible_features(&self, features: &ActionFeatures, action: usize) -> Result<DVector<f64>> {
        let probs = self.action_probabilities(features)?;
        compatible_from_probs(features, &probs, action)
    }
}

pub(crate) fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = logits.map(|l| linalg::exp(l - max));
    let z: f64 = p.iter().sum();
    p /= z;
    p
}

/// `ψ = q_a − Qᵀ π` for already evaluated probabilities.
pub fn compatible_from_probs(features: &ActionFeatures, probs: &DVector<f64>, action: usize) -> Result<DVector<f64>> {
    check_dim(features.nrows(), probs.len())?;
    if action >= features.nrows() {
        return Err(Error::OutOfRange {
            index: action,
            len: features.nrows(),
        });
    }
    let mut psi: DVector<f64> = features.row(action).transpose();
    psi.gemv_tr(-1.0, features, probs, 1.0);
    Ok(psi)
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize> {
    if probs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::NotSimplex { sum });
    }
    let u: f64 = rng.random::<f64>() * sum;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (a, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = a;
            acc += p;
            if u < acc {
                return Ok(a);
            }
        }
    }
    Ok(last_positive)
}

/// Outcome of a Sherman–Morrison step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankOneStep {
    pub denominator: f64,
}

/// Running estimates of `G(θ)` and its inverse for one agent.
///
/// Tracking `G` itself is optional: the training engines only need the
/// inverse, and for the 1009-dimensional traffic policies the extra matrix
/// doubles memory traffic.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherState {
    g: Option<DMatrix<f64>>,
    g_inv: DMatrix<f64>,
}

impl FisherState {
    /// `G₀ = I / scale` (when tracked) and `G₀⁻¹ = scale · I`.
    pub fn scaled_identity(dim: usize, inverse_scale: f64, track_g: bool) -> Self {
        FisherState {
            g: track_g.then(|| DMatrix::identity(dim, dim) / inverse_scale),
            g_inv: DMatrix::identity(dim, dim) * inverse_scale,
        }
    }

    pub fn from_parts(g: Option<DMatrix<f64>>, g_inv: DMatrix<f64>) -> Result<Self> {
        if g_inv.nrows() != g_inv.ncols() {
            return Err(Error::DimensionMismatch {
                expected: g_inv.nrows(),
                found: g_inv.ncols(),
            });
        }
        if let Some(g) = &g {
            check_dim(g_inv.nrows(), g.nrows())?;
            check_dim(g_inv.ncols(), g.ncols())?;
        }
        Ok(FisherState { g, g_inv })
    }

    pub fn dim(&self) -> usize {
        self.g_inv.nrows()
    }

    pub fn g(&self) -> Option<&DMatrix<f64>> {
        self.g.as_ref()
    }

    pub fn g_inv(&self) -> &DMatrix<f64> {
        &self.g_inv
    }

    /// `G ← (1 − β) G + β ψψᵀ`. A no-op on the inverse; does nothing when `G`
    /// is not tracked.
    pub fn fisher_update(&mut self, psi: &DVector<f64>, beta: f64) -> Result<()> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::invalid("Fisher step size must lie in (0, 1]"));
        }
        check_dim(self.dim(), psi.len())?;
        if let Some(g) = self.g.as_mut() {
            g.scale_mut(1.0 - beta);
            g.ger(beta, psi, psi, 1.0);
        }
        Ok(())
    }

    /// Rank-one recursion for the inverse:
    ///
    /// `G⁻¹ ← [G⁻¹ − β (G⁻¹ψ)(G⁻¹ψ)ᵀ / (1 − β + β ψᵀG⁻¹ψ)] / (1 − β)`
    ///
    /// The result is written from its upper triangle so it stays exactly
    /// symmetric. On a singular denominator the state is left untouched.
    pub fn sherman_morrison_update(&mut self, psi: &DVector<f64>, beta: f64) -> Result<RankOneStep> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::invalid("Sherman-Morrison step size must lie in (0, 1)"));
        }
        check_dim(self.dim(), psi.len())?;
        let u = &self.g_inv * psi;
        let quad = psi.dot(&u);
        let denominator = 1.0 - beta + beta * quad;
        if !(denominator.abs() >= 1e-12) || !denominator.is_finite() {
            return Err(Error::SingularUpdate { denominator });
        }
        let coeff = beta / denominator;
        let scale = 1.0 / (1.0 - beta);
        // Each entry uses the same arithmetic as its mirror (u_i·u_j = u_j·u_i
        // exactly), so a symmetric matrix stays bitwise symmetric.
        for (j, mut col) in self.g_inv.column_iter_mut().enumerate() {
            let uj = u[j];
            for (g, &ui) in col.iter_mut().zip(u.iter()) {
                *g = (*g - coeff * (ui * uj)) * scale;
            }
        }
        Ok(RankOneStep { denominator })
    }

    /// Runs [`Self::fisher_update`] and [`Self::sherman_morrison_update`] with
    /// the same arguments.
    pub fn update_both(&mut self, psi: &DVector<f64>, beta: f64) -> Result<RankOneStep> {
        let step = self.sherman_morrison_update(psi, beta)?;
        self.fisher_update(psi, beta)?;
        Ok(step)
    }
}

/// Exact Fisher information `Σ_s d(s) Σ_a π(s,a) ψ(s,a)ψ(s,a)ᵀ` of a single
/// Boltzmann policy over an enumerable state set.
pub fn exact_fisher(
    policy: &BoltzmannPolicy,
    features: &[ActionFeatures],
    state_weights: &[f64],
    max_states: usize,
) -> Result<DMatrix<f64>> {
    check_dim(features.len(), state_weights.len())?;
    if features.len() > max_states {
        return Err(Error::OracleTooLarge {
            pairs: features.len(),
            cap: max_states,
        });
    }
    let m = policy.dim();
    let mut g = DMatrix::zeros(m, m);
    for (q, &w) in features.iter().zip(state_weights) {
        if w == 0.0 {
            continue;
        }
        let probs = policy.action_probabilities(q)?;
        for a in 0..q.nrows() {
            let psi = compatible_from_probs(q, &probs, a)?;
            g.ger(w * probs[a], &psi, &psi, 1.0);
        }
    }
    Ok(g)
}

/// Compatible features for every action of one state.
pub fn all_compatible(policy: &BoltzmannPolicy, features: &ActionFeatures) -> Result<Vec<DVector<f64>>> {
    let probs = policy.action_probabilities(features)?;
    (0..features.nrows())
        .map(|a| compatible_from_probs(features, &probs, a))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng;

    fn e(dim: usize, k: usize) -> DVector<f64> {
        let mut v = DVector::zeros(dim);
        v[k] = 1.0;
        v
    }

    fn random_features<R: Rng>(actions: usize, m: usize, rng: &mut R) -> ActionFeatures {
        DMatrix::from_fn(actions, m, |_, _| rng.random::<f64>())
    }

    #[test]
    fn zero_parameter_is_uniform() {
        let q = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 3.0]);
        let p = BoltzmannPolicy::zeros(2).action_probabilities(&q).unwrap();
        for &x in p.iter() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn two_action_softmax() {
        let q = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let p = BoltzmannPolicy::new(DVector::from_element(1, 1.0))
            .action_probabilities(&q)
            .unwrap();
        let ee = core::f64::consts::E;
        assert!((p[0] - ee / (ee + 1.0)).abs() < 1e-15);
        assert!((p[1] - 1.0 / (ee + 1.0)).abs() < 1e-15);
        assert!((p[0] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let mut rng = substream(5, Stream::Analysis);
        let q = random_features(2, 4, &mut rng);
        let shift = DVector::from_fn(4, |_, _| rng.random::<f64>() * 3.0);
        let mut shifted = q.clone();
        for mut row in shifted.row_iter_mut() {
            row += shift.transpose();
        }
        let pol = BoltzmannPolicy::new(DVector::from_vec(vec![0.3, -1.2, 2.0, 0.7]));
        let a = pol.action_probabilities(&q).unwrap();
        let b = pol.action_probabilities(&shifted).unwrap();
        assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn huge_logits_do_not_overflow() {
        let q = DMatrix::from_row_slice(2, 1, &[1000.0, 999.0]);
        let p = BoltzmannPolicy::new(DVector::from_element(1, 10.0))
            .action_probabilities(&q)
            .unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert!((p.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_theta_rejected() {
        let q = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let pol = BoltzmannPolicy::new(DVector::from_element(1, f64::NAN));
        assert_eq!(pol.action_probabilities(&q), Err(Error::NonFinite("policy parameter")));
    }

    #[test]
    fn sampling_degenerate_and_errors() {
        let mut rng = substream(1, Stream::Policy);
        for _ in 0..100 {
            assert_eq!(sample_action(&[1.0, 0.0], &mut rng).unwrap(), 0);
            assert_eq!(sample_action(&[0.0, 1.0], &mut rng).unwrap(), 1);
        }
        assert!(sample_action(&[0.5, 0.6], &mut rng).is_err());
        assert!(sample_action(&[], &mut rng).is_err());
        assert!(sample_action(&[1.5, -0.5], &mut rng).is_err());
    }

    #[test]
    fn sampling_frequency_and_determinism() {
        let mut rng = substream(9, Stream::Policy);
        let draws: Vec<usize> = (0..100_000).map(|_| sample_action(&[0.5, 0.5], &mut rng).unwrap()).collect();
        let freq = draws.iter().filter(|&&a| a == 0).count() as f64 / draws.len() as f64;
        assert!((freq - 0.5).abs() < 0.01, "freq {freq}");
        let mut again = substream(9, Stream::Policy);
        let replay: Vec<usize> = (0..100_000).map(|_| sample_action(&[0.5, 0.5], &mut again).unwrap()).collect();
        assert_eq!(draws, replay);
    }

    #[test]
    fn compatible_features_uniform_two_actions() {
        let q = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, 1.0, -1.0]);
        let psi = BoltzmannPolicy::zeros(3).compatible_features(&q, 0).unwrap();
        let expected = (q.row(0) - q.row(1)).transpose() / 2.0;
        assert!((psi - expected).amax() < 1e-15);
    }

    #[test]
    fn single_action_has_zero_score() {
        let q = DMatrix::from_row_slice(1, 2, &[0.4, 0.9]);
        let psi = BoltzmannPolicy::new(DVector::from_vec(vec![1.0, 2.0]))
            .compatible_features(&q, 0)
            .unwrap();
        assert!(psi.amax() < 1e-15);
    }

    #[test]
    fn fisher_update_examples() {
        let mut fs = FisherState::from_parts(Some(DMatrix::zeros(2, 2)), DMatrix::identity(2, 2)).unwrap();
        fs.fisher_update(&e(2, 0), 1.0).unwrap();
        assert_eq!(fs.g().unwrap(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));

        let mut fs = FisherState::scaled_identity(2, 1.0, true);
        fs.fisher_update(&e(2, 0), 0.5).unwrap();
        assert_eq!(fs.g().unwrap(), &DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5])));

        assert!(fs.fisher_update(&e(2, 0), 0.0).is_err());
        assert!(fs.fisher_update(&e(3, 0), 0.5).is_err());
    }

    #[test]
    fn sherman_morrison_examples() {
        // Oracle: (0.5 I + 0.5 e1e1ᵀ) = diag(1, 0.5), inverse diag(1, 2).
        let mut fs = FisherState::scaled_identity(2, 1.0, false);
        fs.sherman_morrison_update(&e(2, 0), 0.5).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        assert!((fs.g_inv() - expected).amax() < 1e-15);

        let mut fs = FisherState::from_parts(None, DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let before = fs.g_inv().clone();
        fs.sherman_morrison_update(&DVector::zeros(2), 0.25).unwrap();
        assert!((fs.g_inv() - before / 0.75).amax() < 1e-15);

        assert!(fs.sherman_morrison_update(&e(2, 0), 1.0).is_err());
        assert!(fs.sherman_morrison_update(&e(2, 0), 0.0).is_err());
    }

    #[test]
    fn sherman_morrison_reports_singular_denominator() {
        // 1 − β + β ψᵀG⁻¹ψ = 0.5 + 0.5·(−1) = 0.
        let mut fs = FisherState::from_parts(None, DMatrix::from_row_slice(1, 1, &[-1.0])).unwrap();
        let before = fs.clone();
        let err = fs.sherman_morrison_update(&DVector::from_element(1, 1.0), 0.5).unwrap_err();
        assert!(matches!(err, Error::SingularUpdate { .. }));
        assert_eq!(fs, before);
    }

    #[test]
    fn exact_fisher_two_actions() {
        // ψ(s,0) = −ψ(s,1) = u under the uniform policy.
        let q = DMatrix::from_row_slice(2, 2, &[0.6, 0.2, 0.0, -0.4]);
        let u = (q.row(0) - q.row(1)).transpose() / 2.0;
        let g = exact_fisher(&BoltzmannPolicy::zeros(2), &[q], &[1.0], 10).unwrap();
        assert!((g - &u * u.transpose()).amax() < 1e-15);
    }

    #[test]
    fn exact_fisher_refuses_large_instances() {
        let qs = vec![DMatrix::zeros(2, 1); 3];
        let err = exact_fisher(&BoltzmannPolicy::zeros(1), &qs, &[0.2, 0.3, 0.5], 2).unwrap_err();
        assert!(matches!(err, Error::OracleTooLarge { .. }));
    }

    #[test]
    fn lockstep_recursions_stay_inverse() {
        let mut rng = substream(11, Stream::Analysis);
        let m = 4;
        let mut fs = FisherState::scaled_identity(m, 1.0, true);
        for t in 0..5000 {
            let psi = DVector::from_fn(m, |_, _| rng.random::<f64>() - 0.5);
            let beta = 1.0 / ((t + 2) as f64);
            fs.update_both(&psi, beta).unwrap();
            let prod = fs.g().unwrap() * fs.g_inv();
            assert!((prod - DMatrix::identity(m, m)).norm() < 1e-6);
            assert_eq!(linalg::asymmetry(fs.g_inv()), 0.0);
        }
    }

    fn log_prob(theta: &DVector<f64>, q: &ActionFeatures, a: usize) -> f64 {
        let p = BoltzmannPolicy::new(theta.clone()).action_probabilities(q).unwrap();
        linalg::ln(p[a])
    }

    proptest! {
        #[test]
        fn score_has_zero_mean(seed in any::<u64>(), actions in 1usize..5, m in 1usize..6) {
            let mut rng = substream(seed, Stream::Analysis);
            let q = random_features(actions, m, &mut rng);
            let theta = DVector::from_fn(m, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            let pol = BoltzmannPolicy::new(theta);
            let p = pol.action_probabilities(&q).unwrap();
            prop_assert!((p.sum() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x > 0.0));
            let mut mean = DVector::zeros(m);
            for a in 0..actions {
                mean += pol.compatible_features(&q, a).unwrap() * p[a];
            }
            prop_assert!(mean.amax() < 1e-12);
        }

        #[test]
        fn score_matches_finite_differences(seed in any::<u64>()) {
            let mut rng = substream(seed, Stream::Analysis);
            let (actions, m) = (3, 4);
            let q = random_features(actions, m, &mut rng);
            let theta = DVector::from_fn(m, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let a = rng.random_range(0..actions);
            let psi = BoltzmannPolicy::new(theta.clone()).compatible_features(&q, a).unwrap();
            let h = 1e-6;
            let mut fd = DVector::zeros(m);
            for k in 0..m {
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[k] += h;
                dn[k] -= h;
                fd[k] = (log_prob(&up, &q, a) - log_prob(&dn, &q, a)) / (2.0 * h);
            }
            let rel = (&fd - &psi).norm() / psi.norm().max(1e-12);
            prop_assert!(rel < 1e-5, "relative error {}", rel);
        }

        #[test]
        fn fisher_trace_recursion(seed in any::<u64>(), beta in 0.01f64..1.0) {
            let mut rng = substream(seed, Stream::Analysis);
            let m = 3;
            let mut fs = FisherState::scaled_identity(m, 1.0, true);
            let psi0 = DVector::from_fn(m, |_, _| rng.random::<f64>());
            fs.fisher_update(&psi0, 0.3).unwrap();
            let before = fs.g().unwrap().trace();
            let psi = DVector::from_fn(m, |_, _| rng.random::<f64>() - 0.5);
            fs.fisher_update(&psi, beta).unwrap();
            let after = fs.g().unwrap().trace();
            prop_assert!((after - ((1.0 - beta) * before + beta * psi.norm_squared())).abs() < 1e-12);
        }

        #[test]
        fn exact_fisher_is_symmetric_psd(seed in any::<u64>()) {
            let mut rng = substream(seed, Stream::Analysis);
            let m = 3;
            let states = 4;
            let qs: Vec<ActionFeatures> = (0..states).map(|_| random_features(3, m, &mut rng)).collect();
            let mut w: Vec<f64> = (0..states).map(|_| rng.random::<f64>()).collect();
            let z: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= z);
            let theta = DVector::from_fn(m, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let g = exact_fisher(&BoltzmannPolicy::new(theta), &qs, &w, 100).unwrap();
            prop_assert!(linalg::asymmetry(&g) < 1e-15);
            prop_assert!(linalg::symmetric_eigenvalues(&g)[0] >= -1e-9);
        }
    }

    #[test]
    fn scalar_fisher_bounded_by_one() {
        let mut rng = substream(2, Stream::Analysis);
        for _ in 0..200 {
            let q = DMatrix::from_fn(3, 1, |_, _| rng.random::<f64>() - 0.5);
            let theta = DVector::from_element(1, rng.random::<f64>() * 4.0 - 2.0);
            let g = exact_fisher(&BoltzmannPolicy::new(theta), &[q], &[1.0], 1).unwrap();
            assert!(g[(0, 0)] <= 1.0);
        }
    }
}
