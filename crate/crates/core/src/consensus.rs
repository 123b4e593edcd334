//! Communication graphs and the weight matrices that mix neighbors'
//! critic-side parameters.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::check_dim;
use crate::linalg;
use crate::{Error, Result};

/// Undirected simple graph over agents `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    pub fn empty(n: usize) -> Self {
        Graph {
            n,
            edges: BTreeSet::new(),
        }
    }

    pub fn complete(n: usize) -> Self {
        let mut g = Graph::empty(n);
        for i in 0..n {
            for j in (i + 1)..n {
                g.edges.insert((i, j));
            }
        }
        g
    }

    pub fn path(n: usize) -> Self {
        let mut g = Graph::empty(n);
        for i in 1..n {
            g.edges.insert((i - 1, i));
        }
        g
    }

    pub fn add_edge(&mut self, a: usize, b: usize) -> Result<()> {
        if a >= self.n {
            return Err(Error::OutOfRange { index: a, len: self.n });
        }
        if b >= self.n {
            return Err(Error::OutOfRange { index: b, len: self.n });
        }
        if a == b {
            return Err(Error::invalid("self-loops are not allowed"));
        }
        self.edges.insert((a.min(b), a.max(b)));
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = alloc::vec![0usize; self.n];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    pub fn is_connected(&self) -> bool {
        if self.n <= 1 {
            return true;
        }
        let mut adj = alloc::vec![Vec::new(); self.n];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = alloc::vec![false; self.n];
        let mut stack = alloc::vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.iter().all(|&s| s)
    }
}

/// Erdős–Rényi graph: each unordered pair is linked independently with
/// probability `connectivity_ratio`.
pub fn random_graph<R: Rng + ?Sized>(n: usize, connectivity_ratio: f64, rng: &mut R) -> Result<Graph> {
    if n < 2 {
        return Err(Error::invalid("random graph needs at least two vertices"));
    }
    if !(connectivity_ratio > 0.0 && connectivity_ratio <= 1.0) {
        return Err(Error::invalid("connectivity ratio must lie in (0, 1]"));
    }
    let mut g = Graph::empty(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let u: f64 = rng.random();
            if u < connectivity_ratio {
                g.edges.insert((i, j));
            }
        }
    }
    Ok(g)
}

/// Row-stochastic, nonnegative weight matrix with its smallest positive entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMatrix {
    weights: DMatrix<f64>,
    gamma_floor: f64,
}

impl ConsensusMatrix {
    /// Validates nonnegativity and unit row sums (tolerance 1e-12).
    pub fn new(weights: DMatrix<f64>) -> Result<Self> {
        if weights.nrows() != weights.ncols() {
            return Err(Error::DimensionMismatch {
                expected: weights.nrows(),
                found: weights.ncols(),
            });
        }
        let mut floor = f64::INFINITY;
        for &w in weights.iter() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::invalid("consensus weights must be finite and nonnegative"));
            }
            if w > 0.0 {
                floor = floor.min(w);
            }
        }
        for row in weights.row_iter() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::invalid("consensus matrix rows must sum to one"));
            }
        }
        Ok(ConsensusMatrix {
            weights,
            gamma_floor: floor,
        })
    }

    pub fn identity(n: usize) -> Self {
        ConsensusMatrix {
            weights: DMatrix::identity(n, n),
            gamma_floor: 1.0,
        }
    }

    /// Constant `1/n` weights (complete graph averaging).
    pub fn uniform(n: usize) -> Self {
        ConsensusMatrix {
            weights: DMatrix::from_element(n, n, 1.0 / n as f64),
            gamma_floor: 1.0 / n as f64,
        }
    }

    pub fn size(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn gamma_floor(&self) -> f64 {
        self.gamma_floor
    }

    /// Whether every column also sums to one within `tol`.
    pub fn is_doubly_stochastic(&self, tol: f64) -> bool {
        self.weights
            .column_iter()
            .all(|c| (c.iter().sum::<f64>() - 1.0).abs() <= tol)
    }

    /// Whether zero weights are placed on every non-edge of `graph`.
    pub fn respects(&self, graph: &Graph) -> bool {
        let n = self.size();
        (0..n).all(|i| (0..n).all(|j| i == j || graph.contains(i, j) || self.weights[(i, j)] == 0.0))
    }
}

/// Metropolis weights: `1 / (1 + max(d_i, d_j))` on edges, the remainder on
/// the diagonal.
pub fn metropolis_weights(graph: &Graph) -> ConsensusMatrix {
    let n = graph.vertex_count();
    let deg = graph.degrees();
    let mut w = DMatrix::zeros(n, n);
    for (a, b) in graph.edges() {
        let c = 1.0 / (1.0 + deg[a].max(deg[b]) as f64);
        w[(a, b)] = c;
        w[(b, a)] = c;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    let floor = w.iter().copied().filter(|&x| x > 0.0).fold(f64::INFINITY, f64::min);
    ConsensusMatrix {
        weights: w,
        gamma_floor: floor,
    }
}

/// `output_i = Σ_j weight(i, j) · locals_j`.
pub fn mix(matrix: &ConsensusMatrix, locals: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    check_dim(matrix.size(), locals.len())?;
    let dim = locals.first().map(|v| v.len()).unwrap_or(0);
    for v in locals {
        check_dim(dim, v.len())?;
    }
    let n = locals.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = DVector::zeros(dim);
        for (j, local) in locals.iter().enumerate() {
            let c = matrix.weights[(i, j)];
            if c != 0.0 {
                acc.axpy(c, local, 1.0);
            }
        }
        out.push(acc);
    }
    Ok(out)
}

/// Scalar version of [`mix`].
pub fn mix_scalars(matrix: &ConsensusMatrix, locals: &[f64]) -> Result<Vec<f64>> {
    check_dim(matrix.size(), locals.len())?;
    let n = locals.len();
    Ok((0..n)
        .map(|i| (0..n).map(|j| matrix.weights[(i, j)] * locals[j]).sum())
        .collect())
}

/// Euclidean norm of the stacked deviations from the across-agent mean.
pub fn disagreement(locals: &[DVector<f64>]) -> Result<f64> {
    let first = locals.first().ok_or(Error::EmptyInput)?;
    let dim = first.len();
    for v in locals {
        check_dim(dim, v.len())?;
    }
    let mut mean = DVector::zeros(dim);
    for v in locals {
        mean += v;
    }
    mean /= locals.len() as f64;
    let sq: f64 = locals.iter().map(|v| (v - &mean).norm_squared()).sum();
    Ok(linalg::sqrt(sq))
}

/// How the communication graph evolves over a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Topology {
    /// Complete graph at every step; Metropolis weights reduce to `1/n`.
    Complete,
    /// A fresh random graph with the given connectivity ratio every step.
    Random { connectivity_ratio: f64 },
}

impl Topology {
    pub fn matrix_at<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<ConsensusMatrix> {
        match *self {
            Topology::Complete => Ok(ConsensusMatrix::uniform(n)),
            Topology::Random { connectivity_ratio } => {
                if n < 2 {
                    return Ok(ConsensusMatrix::identity(n));
                }
                Ok(metropolis_weights(&random_graph(n, connectivity_ratio, rng)?))
            }
        }
    }
}

/// Monte-Carlo estimate of the spectral norm of `E[Cᵀ (I − 𝟙𝟙ᵀ/n) C]` for
/// the random-graph Metropolis weights. Values below one indicate that mixing
/// contracts disagreement on average.
pub fn spectral_contraction_estimate<R: Rng + ?Sized>(
    n: usize,
    connectivity_ratio: f64,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::EmptyInput);
    }
    let projector = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let mut acc = DMatrix::zeros(n, n);
    for _ in 0..samples {
        let c = metropolis_weights(&random_graph(n, connectivity_ratio, rng)?);
        let w = c.weights();
        acc += w.transpose() * &projector * w;
    }
    acc /= samples as f64;
    let eig = linalg::symmetric_eigenvalues(&acc);
    Ok(eig.iter().fold(0.0f64, |m, x| m.max(x.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng;

    fn scalars(xs: &[f64]) -> Vec<DVector<f64>> {
        xs.iter().map(|&x| DVector::from_element(1, x)).collect()
    }

    #[test]
    fn metropolis_on_path() {
        let c = metropolis_weights(&Graph::path(3));
        let third = 1.0 / 3.0;
        assert!((c.weight(0, 1) - third).abs() < 1e-15);
        assert!((c.weight(1, 0) - third).abs() < 1e-15);
        assert!((c.weight(1, 2) - third).abs() < 1e-15);
        assert!((c.weight(2, 1) - third).abs() < 1e-15);
        assert!((c.weight(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.weight(2, 2) - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.weight(1, 1) - third).abs() < 1e-15);
        assert_eq!(c.weight(0, 2), 0.0);
    }

    #[test]
    fn metropolis_on_complete_four() {
        let c = metropolis_weights(&Graph::complete(4));
        for &w in c.weights().iter() {
            assert!((w - 0.25).abs() < 1e-15);
        }
        assert_eq!(c, ConsensusMatrix::uniform(4));
    }

    #[test]
    fn metropolis_single_vertex() {
        let c = metropolis_weights(&Graph::empty(1));
        assert_eq!(c.weights(), &DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn isolated_vertices_keep_their_value() {
        let mut g = Graph::empty(3);
        g.add_edge(0, 1).unwrap();
        let c = metropolis_weights(&g);
        assert_eq!(c.weight(2, 2), 1.0);
    }

    #[test]
    fn graph_rejects_self_loops_and_bad_ids() {
        let mut g = Graph::empty(3);
        assert!(g.add_edge(1, 1).is_err());
        assert!(g.add_edge(0, 3).is_err());
    }

    #[test]
    fn random_graph_full_ratio_is_complete() {
        let mut rng = substream(1, Stream::Consensus);
        let g = random_graph(4, 1.0, &mut rng).unwrap();
        assert_eq!(g.edge_count(), 6);
    }

    #[test]
    fn random_graph_is_seeded() {
        let ratio = 4.0 / 15.0;
        let a = random_graph(15, ratio, &mut substream(42, Stream::Consensus)).unwrap();
        let b = random_graph(15, ratio, &mut substream(42, Stream::Consensus)).unwrap();
        assert_eq!(a, b);
        assert!(a.edge_count() <= 105);
    }

    #[test]
    fn random_graph_rejects_bad_ratio() {
        let mut rng = substream(1, Stream::Consensus);
        assert!(random_graph(2, 0.0, &mut rng).is_err());
        assert!(random_graph(2, 1.5, &mut rng).is_err());
        assert!(random_graph(1, 0.5, &mut rng).is_err());
    }

    #[test]
    fn identity_mixing_is_noop() {
        let locals = scalars(&[1.0, -2.0, 5.0]);
        let out = mix(&ConsensusMatrix::identity(3), &locals).unwrap();
        assert_eq!(out, locals);
    }

    #[test]
    fn uniform_mixing_averages_in_one_step() {
        let out = mix(&ConsensusMatrix::uniform(4), &scalars(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        for v in out {
            assert!((v[0] - 2.5).abs() < 1e-15);
        }
    }

    #[test]
    fn mix_rejects_ragged_input() {
        let locals = vec![DVector::zeros(2), DVector::zeros(3)];
        assert!(mix(&ConsensusMatrix::uniform(2), &locals).is_err());
    }

    #[test]
    fn disagreement_examples() {
        assert_eq!(disagreement(&scalars(&[3.0, 3.0, 3.0])).unwrap(), 0.0);
        let d = disagreement(&scalars(&[0.0, 2.0])).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(disagreement(&[]), Err(Error::EmptyInput));
    }

    #[test]
    fn repeated_mixing_reaches_consensus_on_connected_graph() {
        let c = metropolis_weights(&Graph::path(6));
        let mut locals = scalars(&[1.0, 7.0, -3.0, 2.0, 0.5, 10.0]);
        let mut prev = disagreement(&locals).unwrap();
        let mut iters = 0;
        while prev > 1e-8 {
            locals = mix(&c, &locals).unwrap();
            let d = disagreement(&locals).unwrap();
            assert!(d <= prev + 1e-15);
            prev = d;
            iters += 1;
            assert!(iters < 2000);
        }
    }

    #[test]
    fn random_metropolis_contracts_in_expectation() {
        let mut rng = substream(3, Stream::Consensus);
        let rho = spectral_contraction_estimate(15, 4.0 / 15.0, 200, &mut rng).unwrap();
        assert!(rho < 1.0, "rho = {rho}");
    }

    fn arb_graph() -> impl Strategy<Value = Graph> {
        (1usize..9).prop_flat_map(|n| {
            proptest::collection::vec(any::<bool>(), n * (n - 1) / 2).prop_map(move |bits| {
                let mut g = Graph::empty(n);
                let mut k = 0;
                for i in 0..n {
                    for j in (i + 1)..n {
                        if bits[k] {
                            g.add_edge(i, j).unwrap();
                        }
                        k += 1;
                    }
                }
                g
            })
        })
    }

    proptest! {
        #[test]
        fn metropolis_is_symmetric_doubly_stochastic(g in arb_graph()) {
            let c = metropolis_weights(&g);
            let w = c.weights();
            prop_assert_eq!(w, &w.transpose());
            for row in w.row_iter() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
            prop_assert!(c.is_doubly_stochastic(1e-12));
            prop_assert!(c.respects(&g));
            for &x in w.iter() {
                prop_assert!(x >= 0.0);
                if x > 0.0 {
                    prop_assert!(x >= c.gamma_floor());
                }
            }
            prop_assert!(ConsensusMatrix::new(w.clone()).is_ok());
        }

        #[test]
        fn doubly_stochastic_mixing_preserves_mean(
            g in arb_graph(),
            seed in any::<u64>(),
        ) {
            let n = g.vertex_count();
            let mut rng = substream(seed, Stream::Analysis);
            let locals: Vec<DVector<f64>> =
                (0..n).map(|_| DVector::from_fn(3, |_, _| rng.random::<f64>() * 10.0 - 5.0)).collect();
            let out = mix(&metropolis_weights(&g), &locals).unwrap();
            let before: DVector<f64> = locals.iter().fold(DVector::zeros(3), |a, v| a + v) / n as f64;
            let after: DVector<f64> = out.iter().fold(DVector::zeros(3), |a, v| a + v) / n as f64;
            prop_assert!((before - after).amax() <= 1e-12);
            prop_assert!(disagreement(&out).unwrap() <= disagreement(&locals).unwrap() + 1e-12);
        }
    }
}
