//! Surrogate bi-lane 2×2 traffic grid with four signalised junctions.
//!
//! Layout (row, column):
//!
//! ```text
//!            N1        N2
//!            |         |
//!   W1 ---- T1 ------ T2 ---- E1
//!            |         |
//!   W2 ---- T3 ------ T4 ---- E2
//!            |         |
//!            S1        S2
//! ```
//!
//! Every light has four inbound lanes, one per approach. Lane ids are
//! `4·light + approach` with lights ordered T1..T4 and approaches ordered
//! N, S, E, W. Vehicles queue in inbound lanes and a lane discharges at
//! `service_rate` vehicles per green second. North-south lanes are green for
//! the first part of each cycle, east-west lanes for the rest. A vehicle
//! released towards another light travels for `link_travel_seconds` before it
//! joins that light's queue.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use super::Environment;
use crate::policy::ActionFeatures;
use crate::{Error, Result};

pub const NUM_LIGHTS: usize = 4;
pub const NUM_LANES: usize = 16;
pub const NUM_PLANS: usize = 3;
pub const NUM_SOURCES: usize = 8;
/// `16 + 4·(4² + 4³)`.
pub const XI_DIM: usize = NUM_LANES + NUM_LIGHTS * (16 + 64);
pub const PHI_DIM: usize = 1 + XI_DIM;
pub const Q_DIM: usize = 1 + NUM_PLANS * XI_DIM;
pub const F_DIM: usize = 1 + NUM_LIGHTS * NUM_PLANS * XI_DIM;
pub const LINK_TRAVEL_SECONDS: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Approach {
    North = 0,
    South = 1,
    East = 2,
    West = 3,
}

impl Approach {
    fn is_north_south(self) -> bool {
        matches!(self, Approach::North | Approach::South)
    }
}

/// Boundary nodes, in the order arrivals are drawn each second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Source {
    W1 = 0,
    W2 = 1,
    N1 = 2,
    N2 = 3,
    E1 = 4,
    E2 = 5,
    S1 = 6,
    S2 = 7,
}

impl Source {
    pub const ALL: [Source; NUM_SOURCES] = [
        Source::W1,
        Source::W2,
        Source::N1,
        Source::N2,
        Source::E1,
        Source::E2,
        Source::S1,
        Source::S2,
    ];

    /// The light the node attaches to and the approach it enters by.
    pub fn attachment(self) -> (usize, Approach) {
        match self {
            Source::W1 => (0, Approach::West),
            Source::N1 => (0, Approach::North),
            Source::N2 => (1, Approach::North),
            Source::E1 => (1, Approach::East),
            Source::W2 => (2, Approach::West),
            Source::S1 => (2, Approach::South),
            Source::S2 => (3, Approach::South),
            Source::E2 => (3, Approach::East),
        }
    }

    pub fn entry_lane(self) -> usize {
        let (light, approach) = self.attachment();
        lane_id(light, approach)
    }
}

pub fn lane_id(light: usize, approach: Approach) -> usize {
    light * 4 + approach as usize
}

fn lane_approach(lane: usize) -> Approach {
    match lane % 4 {
        0 => Approach::North,
        1 => Approach::South,
        2 => Approach::East,
        _ => Approach::West,
    }
}

fn grid_position(light: usize) -> (usize, usize) {
    (light / 2, light % 2)
}

/// Approach by which a vehicle travelling from `from` enters the adjacent
/// light `to`.
fn entry_approach(from: usize, to: usize) -> Approach {
    let (r0, c0) = grid_position(from);
    let (r1, c1) = grid_position(to);
    match (r1 as isize - r0 as isize, c1 as isize - c0 as isize) {
        (0, 1) => Approach::West,
        (0, -1) => Approach::East,
        (1, 0) => Approach::North,
        _ => Approach::South,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrivalPattern {
    One,
    Two,
}

impl ArrivalPattern {
    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(ArrivalPattern::One),
            2 => Ok(ArrivalPattern::Two),
            _ => Err(Error::invalid("arrival pattern must be 1 or 2")),
        }
    }

    pub fn id(self) -> u8 {
        match self {
            ArrivalPattern::One => 1,
            ArrivalPattern::Two => 2,
        }
    }

    /// Source probabilities in [`Source::ALL`] order.
    pub fn probabilities(self) -> [f64; NUM_SOURCES] {
        match self {
            ArrivalPattern::One => {
                let (hi, lo) = (3.0 / 16.0, 1.0 / 16.0);
                [hi, lo, lo, hi, hi, lo, lo, hi]
            }
            ArrivalPattern::Two => {
                let (hi, lo) = (3.0 / 14.0, 1.0 / 28.0);
                [lo, lo, hi, hi, lo, lo, hi, hi]
            }
        }
    }

    pub fn probability(self, source: Source) -> f64 {
        self.probabilities()[source as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalPlan {
    Equal = 0,
    NorthSouth = 1,
    EastWest = 2,
}

impl SignalPlan {
    pub const ALL: [SignalPlan; NUM_PLANS] = [SignalPlan::Equal, SignalPlan::NorthSouth, SignalPlan::EastWest];

    pub fn from_index(idx: usize) -> Result<Self> {
        Self::ALL.get(idx).copied().ok_or(Error::OutOfRange {
            index: idx,
            len: NUM_PLANS,
        })
    }

    /// `(north-south, east-west)` shares of the cycle.
    pub fn green_split(self) -> (f64, f64) {
        match self {
            SignalPlan::Equal => (0.5, 0.5),
            SignalPlan::NorthSouth => (0.75, 0.25),
            SignalPlan::EastWest => (0.25, 0.75),
        }
    }

    pub fn north_south_seconds(self, cycle: u32) -> u32 {
        libm::round(self.green_split().0 * cycle as f64) as u32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficParams {
    pub pattern: ArrivalPattern,
    pub n_vehicles: u64,
    pub horizon_seconds: u64,
    pub epoch_seconds: u32,
    pub capacity: usize,
    pub service_rate: f64,
    /// Seconds a vehicle released by one light travels before joining the
    /// next light's queue.
    pub link_travel_seconds: u32,
    /// Cycles simulated under the equal plan by `reset` before the first
    /// decision.
    pub warmup_epochs: u32,
}

impl Default for TrafficParams {
    fn default() -> Self {
        TrafficParams {
            pattern: ArrivalPattern::One,
            n_vehicles: 50_000,
            horizon_seconds: 180_000,
            epoch_seconds: 120,
            capacity: 50,
            service_rate: 0.5,
            link_travel_seconds: LINK_TRAVEL_SECONDS,
            warmup_epochs: 1,
        }
    }
}

impl TrafficParams {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_seconds == 0 || self.epoch_seconds == 0 {
            return Err(Error::invalid("horizon and epoch length must be positive"));
        }
        if self.capacity == 0 {
            return Err(Error::invalid("lane capacity must be positive"));
        }
        if !(self.service_rate > 0.0 && self.service_rate.is_finite()) {
            return Err(Error::invalid("service rate must be positive"));
        }
        Ok(())
    }
}

/// Per-second source arrival counts, `Binomial(N_v, p_s / T)` for each source.
#[derive(Debug, Clone)]
pub struct ArrivalSampler {
    dists: Vec<Binomial>,
}

impl ArrivalSampler {
    pub fn new(pattern: ArrivalPattern, n_vehicles: u64, horizon: u64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("horizon must be positive"));
        }
        let dists = pattern
            .probabilities()
            .iter()
            .map(|p| Binomial::new(n_vehicles, p / horizon as f64).map_err(|_| Error::invalid("binomial parameters")))
            .collect::<Result<Vec<_>>>()?;
        Ok(ArrivalSampler { dists })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [u64; NUM_SOURCES] {
        let mut out = [0; NUM_SOURCES];
        for (slot, d) in out.iter_mut().zip(&self.dists) {
            *slot = d.sample(rng);
        }
        out
    }
}

/// One draw of per-source arrivals at second `t` of the horizon.
pub fn sample_arrivals<R: Rng + ?Sized>(
    pattern: ArrivalPattern,
    n_vehicles: u64,
    horizon: u64,
    t: u64,
    rng: &mut R,
) -> Result<[u64; NUM_SOURCES]> {
    if t >= horizon {
        return Err(Error::OutOfRange {
            index: t as usize,
            len: horizon as usize,
        });
    }
    Ok(ArrivalSampler::new(pattern, n_vehicles, horizon)?.sample(rng))
}

/// Shortest route as the ordered list of inbound lanes a vehicle queues in.
/// Ties between the two routes across the grid are broken uniformly.
pub fn route<R: Rng + ?Sized>(source: Source, destination: Source, rng: &mut R) -> Result<Vec<usize>> {
    if source == destination {
        return Err(Error::invalid("source and destination coincide"));
    }
    let (a, approach) = source.attachment();
    let (b, _) = destination.attachment();
    let lights: Vec<usize> = if a == b {
        alloc::vec![a]
    } else if a ^ b == 3 {
        // Diagonal: via the same-row or the same-column neighbour.
        let via = if rng.random::<bool>() { a ^ 1 } else { a ^ 2 };
        alloc::vec![a, via, b]
    } else {
        alloc::vec![a, b]
    };
    let mut lanes = Vec::with_capacity(lights.len());
    lanes.push(lane_id(a, approach));
    for hop in lights.windows(2) {
        lanes.push(lane_id(hop[1], entry_approach(hop[0], hop[1])));
    }
    Ok(lanes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Vehicle {
    lanes: [u8; 3],
    len: u8,
    pos: u8,
}

impl Vehicle {
    fn new(path: &[usize]) -> Self {
        let mut lanes = [0u8; 3];
        for (slot, &l) in lanes.iter_mut().zip(path) {
            *slot = l as u8;
        }
        Vehicle {
            lanes,
            len: path.len() as u8,
            pos: 0,
        }
    }

    fn next_lane(&self) -> Option<usize> {
        let next = self.pos + 1;
        (next < self.len).then(|| self.lanes[next as usize] as usize)
    }
}

/// Flow accounting for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochStats {
    pub generated: u64,
    pub dropped: u64,
    pub exited: u64,
    pub blocked: u64,
    /// Vehicles queued or travelling between lights.
    pub queued_start: u64,
    pub queued_end: u64,
    pub congestion: [f64; NUM_LIGHTS],
}

impl EpochStats {
    /// `generated = exited + Δqueue + dropped`.
    pub fn is_conserved(&self) -> bool {
        self.generated + self.queued_start == self.exited + self.queued_end + self.dropped
    }

    pub fn network_congestion(&self) -> f64 {
        self.congestion.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct TrafficEnv {
    params: TrafficParams,
    sampler: ArrivalSampler,
    lanes: Vec<VecDeque<Vehicle>>,
    transit: VecDeque<(u64, usize, Vehicle)>,
    inbound: [usize; NUM_LANES],
    clock: u64,
    last: EpochStats,
}

impl TrafficEnv {
    pub fn new(params: TrafficParams) -> Result<Self> {
        params.validate()?;
        let sampler = ArrivalSampler::new(params.pattern, params.n_vehicles, params.horizon_seconds)?;
        Ok(TrafficEnv {
            params,
            sampler,
            lanes: (0..NUM_LANES).map(|_| VecDeque::new()).collect(),
            transit: VecDeque::new(),
            inbound: [0; NUM_LANES],
            clock: 0,
            last: EpochStats::default(),
        })
    }

    pub fn params(&self) -> &TrafficParams {
        &self.params
    }

    pub fn queue(&self, lane: usize) -> usize {
        self.lanes[lane].len()
    }

    pub fn queues(&self) -> [usize; NUM_LANES] {
        let mut q = [0; NUM_LANES];
        for (slot, lane) in q.iter_mut().zip(&self.lanes) {
            *slot = lane.len();
        }
        q
    }

    pub fn total_queued(&self) -> u64 {
        self.lanes.iter().map(|l| l.len() as u64).sum()
    }

    pub fn in_transit(&self) -> u64 {
        self.transit.len() as u64
    }

    pub fn last_stats(&self) -> &EpochStats {
        &self.last
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    /// Routes `count` vehicles from `source` to `destination` and places them
    /// at the source's entry lane. Returns how many fit.
    pub fn place_vehicles<R: Rng + ?Sized>(
        &mut self,
        source: Source,
        destination: Source,
        count: usize,
        rng: &mut R,
    ) -> Result<usize> {
        let mut placed = 0;
        for _ in 0..count {
            let path = route(source, destination, rng)?;
            if self.lanes[path[0]].len() + self.inbound[path[0]] < self.params.capacity {
                self.lanes[path[0]].push_back(Vehicle::new(&path));
                placed += 1;
            }
        }
        Ok(placed)
    }

    fn enqueue_arrivals<R: Rng + ?Sized>(&mut self, rng: &mut R, stats: &mut EpochStats) {
        let counts = self.sampler.sample(rng);
        for (&source, &count) in Source::ALL.iter().zip(counts.iter()) {
            for _ in 0..count {
                stats.generated += 1;
                let mut d = rng.random_range(0..NUM_SOURCES - 1);
                if d >= source as usize {
                    d += 1;
                }
                let path = route(source, Source::ALL[d], rng).expect("distinct endpoints");
                if self.lanes[path[0]].len() + self.inbound[path[0]] < self.params.capacity {
                    self.lanes[path[0]].push_back(Vehicle::new(&path));
                } else {
                    stats.dropped += 1;
                }
            }
        }
    }

    /// Simulates one epoch where light `i` shows north-south green for the
    /// first `ns_green[i]` seconds and east-west green afterwards. Returns the
    /// per-light rewards.
    pub fn step_with_green<R: Rng + ?Sized>(&mut self, ns_green: [u32; NUM_LIGHTS], rng: &mut R) -> [f64; NUM_LIGHTS] {
        let cycle = self.params.epoch_seconds;
        let rate = self.params.service_rate;
        let cap = self.params.capacity;
        let mut stats = EpochStats {
            queued_start: self.total_queued() + self.in_transit(),
            ..EpochStats::default()
        };
        let mut queue_sums = [0u64; NUM_LIGHTS];
        let travel = u64::from(self.params.link_travel_seconds);

        for sec in 0..cycle {
            self.enqueue_arrivals(rng, &mut stats);
            for lane in 0..NUM_LANES {
                let light = lane / 4;
                let split = ns_green[light].min(cycle);
                let ns = lane_approach(lane).is_north_south();
                let (green, k) = match (ns, sec < split) {
                    (true, true) => (true, sec),
                    (false, false) => (true, sec - split),
                    _ => (false, 0),
                };
                if !green {
                    continue;
                }
                let credit = libm::floor(rate * (k + 1) as f64) - libm::floor(rate * k as f64);
                for _ in 0..credit as usize {
                    let Some(vehicle) = self.lanes[lane].front().copied() else {
                        break;
                    };
                    match vehicle.next_lane() {
                        None => {
                            self.lanes[lane].pop_front();
                            stats.exited += 1;
                        }
                        Some(next) => {
                            if self.lanes[next].len() + self.inbound[next] >= cap {
                                stats.blocked += 1;
                                break;
                            }
                            self.lanes[lane].pop_front();
                            self.inbound[next] += 1;
                            self.transit.push_back((
                                self.clock + travel,
                                next,
                                Vehicle {
                                    pos: vehicle.pos + 1,
                                    ..vehicle
                                },
                            ));
                        }
                    }
                }
            }
            while let Some(&(due, next, v)) = self.transit.front() {
                if due > self.clock {
                    break;
                }
                self.transit.pop_front();
                self.inbound[next] -= 1;
                self.lanes[next].push_back(v);
            }
            for (lane, q) in self.lanes.iter().enumerate() {
                queue_sums[lane / 4] += q.len() as u64;
            }
            self.clock += 1;
        }

        stats.queued_end = self.total_queued() + self.in_transit();
        let mut rewards = [0.0; NUM_LIGHTS];
        for light in 0..NUM_LIGHTS {
            let mean = queue_sums[light] as f64 / cycle as f64;
            stats.congestion[light] = mean;
            rewards[light] = -mean;
        }
        self.last = stats;
        rewards
    }

    pub fn epoch_step<R: Rng + ?Sized>(&mut self, plans: [SignalPlan; NUM_LIGHTS], rng: &mut R) -> [f64; NUM_LIGHTS] {
        let cycle = self.params.epoch_seconds;
        let mut ns = [0; NUM_LIGHTS];
        for (slot, plan) in ns.iter_mut().zip(plans) {
            *slot = plan.north_south_seconds(cycle);
        }
        self.step_with_green(ns, rng)
    }

    /// `ξ(s)`: the 16 normalised queues, then for each light its 16 ordered
    /// pairwise products and 64 ordered triple products.
    pub fn xi(&self) -> DVector<f64> {
        xi_from_queues(&self.queues(), self.params.capacity)
    }
}

/// `ξ` for explicit queue lengths.
pub fn xi_from_queues(queues: &[usize; NUM_LANES], capacity: usize) -> DVector<f64> {
    let z: Vec<f64> = queues.iter().map(|&x| x as f64 / capacity as f64).collect();
    let mut xi = DVector::zeros(XI_DIM);
    xi.rows_mut(0, NUM_LANES).copy_from_slice(&z);
    let mut k = NUM_LANES;
    for light in 0..NUM_LIGHTS {
        let zl = &z[light * 4..light * 4 + 4];
        for &a in zl {
            for &b in zl {
                xi[k] = a * b;
                k += 1;
            }
        }
        for &a in zl {
            for &b in zl {
                for &c in zl {
                    xi[k] = a * b * c;
                    k += 1;
                }
            }
        }
    }
    debug_assert_eq!(k, XI_DIM);
    xi
}

/// `φ(s) = (1, ξ)`.
pub fn phi_from_xi(xi: &DVector<f64>) -> DVector<f64> {
    let mut phi = DVector::zeros(PHI_DIM);
    phi[0] = 1.0;
    phi.rows_mut(1, XI_DIM).copy_from(xi);
    phi
}

/// Rows `q_{s,b} = (1, [b=1]ξ, [b=2]ξ, [b=3]ξ)` for the three plans.
pub fn policy_features_from_xi(xi: &DVector<f64>) -> ActionFeatures {
    let mut q = DMatrix::zeros(NUM_PLANS, Q_DIM);
    for b in 0..NUM_PLANS {
        q[(b, 0)] = 1.0;
        let start = 1 + b * XI_DIM;
        for k in 0..XI_DIM {
            q[(b, start + k)] = xi[k];
        }
    }
    q
}

/// `f(s,a) = (1, per light: [a^i=1]ξ, [a^i=2]ξ, [a^i=3]ξ)`.
pub fn reward_features_from_xi(xi: &DVector<f64>, joint: &[usize]) -> Result<DVector<f64>> {
    if joint.len() != NUM_LIGHTS {
        return Err(Error::DimensionMismatch {
            expected: NUM_LIGHTS,
            found: joint.len(),
        });
    }
    let mut f = DVector::zeros(F_DIM);
    f[0] = 1.0;
    for (light, &plan) in joint.iter().enumerate() {
        if plan >= NUM_PLANS {
            return Err(Error::OutOfRange {
                index: plan,
                len: NUM_PLANS,
            });
        }
        let start = 1 + (light * NUM_PLANS + plan) * XI_DIM;
        f.rows_mut(start, XI_DIM).copy_from(xi);
    }
    Ok(f)
}

impl Environment for TrafficEnv {
    fn num_agents(&self) -> usize {
        NUM_LIGHTS
    }

    fn num_actions(&self, _agent: usize) -> usize {
        NUM_PLANS
    }

    fn policy_dim(&self, _agent: usize) -> usize {
        Q_DIM
    }

    fn value_dim(&self) -> usize {
        PHI_DIM
    }

    fn reward_dim(&self) -> usize {
        F_DIM
    }

    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.lanes.iter_mut().for_each(VecDeque::clear);
        self.transit.clear();
        self.inbound = [0; NUM_LANES];
        self.clock = 0;
        self.last = EpochStats::default();
        for _ in 0..self.params.warmup_epochs {
            self.epoch_step([SignalPlan::Equal; NUM_LIGHTS], rng);
        }
    }

    fn policy_features(&self, _agent: usize) -> ActionFeatures {
        policy_features_from_xi(&self.xi())
    }

    fn state_features(&self) -> DVector<f64> {
        phi_from_xi(&self.xi())
    }

    fn reward_features(&self, joint: &[usize]) -> Result<DVector<f64>> {
        reward_features_from_xi(&self.xi(), joint)
    }

    fn step<R: Rng + ?Sized>(&mut self, joint: &[usize], rng: &mut R) -> Result<Vec<f64>> {
        if joint.len() != NUM_LIGHTS {
            return Err(Error::DimensionMismatch {
                expected: NUM_LIGHTS,
                found: joint.len(),
            });
        }
        let mut plans = [SignalPlan::Equal; NUM_LIGHTS];
        for (slot, &a) in plans.iter_mut().zip(joint) {
            *slot = SignalPlan::from_index(a)?;
        }
        Ok(self.epoch_step(plans, rng).to_vec())
    }

    /// Network congestion: the sum of the lights' time-averaged queues.
    fn network_total(&self, rewards: &[f64]) -> f64 {
        -rewards.iter().sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};

    #[test]
    fn dimensions() {
        assert_eq!((XI_DIM, PHI_DIM, Q_DIM, F_DIM), (336, 337, 1009, 4033));
    }

    #[test]
    fn pattern_probabilities() {
        assert_eq!(ArrivalPattern::One.probability(Source::W1), 3.0 / 16.0);
        assert_eq!(ArrivalPattern::Two.probability(Source::W1), 1.0 / 28.0);
        for p in [ArrivalPattern::One, ArrivalPattern::Two] {
            assert!((p.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(ArrivalPattern::from_id(3).is_err());
    }

    #[test]
    fn plans_split_the_cycle() {
        let secs: Vec<u32> = SignalPlan::ALL.iter().map(|p| p.north_south_seconds(120)).collect();
        assert_eq!(secs, [60, 90, 30]);
        for p in SignalPlan::ALL {
            let (a, b) = p.green_split();
            assert_eq!(a + b, 1.0);
        }
    }

    #[test]
    fn no_vehicles_no_arrivals() {
        let mut rng = substream(0, Stream::EnvDynamics);
        for t in 0..100 {
            assert_eq!(sample_arrivals(ArrivalPattern::One, 0, 180_000, t, &mut rng).unwrap(), [0; 8]);
        }
        assert!(sample_arrivals(ArrivalPattern::One, 10, 100, 100, &mut rng).is_err());
    }

    #[test]
    fn arrival_mean_matches_binomial() {
        let mut rng = substream(2, Stream::EnvDynamics);
        let sampler = ArrivalSampler::new(ArrivalPattern::Two, 50_000, 180_000).unwrap();
        let draws = 10_000;
        let total: u64 = (0..draws).map(|_| sampler.sample(&mut rng)[Source::N2 as usize]).sum();
        let p = (3.0 / 14.0) / 180_000.0;
        let mean = 50_000.0 * p;
        let sd = libm::sqrt(50_000.0 * p * (1.0 - p) / draws as f64);
        assert!((mean - 0.0595).abs() < 1e-4);
        assert!((total as f64 / draws as f64 - mean).abs() < 3.0 * sd);
    }

    #[test]
    fn routes_are_shortest() {
        let mut rng = substream(1, Stream::EnvDynamics);
        assert_eq!(route(Source::N1, Source::W1, &mut rng).unwrap(), [lane_id(0, Approach::North)]);
        assert_eq!(
            route(Source::W1, Source::E1, &mut rng).unwrap(),
            [lane_id(0, Approach::West), lane_id(1, Approach::West)]
        );
        assert_eq!(
            route(Source::N2, Source::S2, &mut rng).unwrap(),
            [lane_id(1, Approach::North), lane_id(3, Approach::North)]
        );
        assert!(route(Source::E2, Source::E2, &mut rng).is_err());
    }

    #[test]
    fn diagonal_ties_are_uniform() {
        let mut rng = substream(3, Stream::EnvDynamics);
        let via_t2 = [lane_id(0, Approach::West), lane_id(1, Approach::West), lane_id(3, Approach::North)];
        let via_t3 = [lane_id(0, Approach::West), lane_id(2, Approach::North), lane_id(3, Approach::West)];
        let draws = 10_000;
        let mut hits = 0;
        for _ in 0..draws {
            let r = route(Source::W1, Source::S2, &mut rng).unwrap();
            if r == via_t2 {
                hits += 1;
            } else {
                assert_eq!(r, via_t3);
            }
        }
        assert!((hits as f64 / draws as f64 - 0.5).abs() < 0.02);
    }

    fn quiet() -> TrafficEnv {
        TrafficEnv::new(TrafficParams {
            n_vehicles: 0,
            ..TrafficParams::default()
        })
        .unwrap()
    }

    #[test]
    fn empty_network_has_zero_reward() {
        let mut env = quiet();
        let r = env.epoch_step([SignalPlan::Equal; 4], &mut substream(0, Stream::EnvDynamics));
        assert_eq!(r, [0.0; 4]);
    }

    #[test]
    fn single_lane_drains() {
        let mut env = quiet();
        let mut rng = substream(0, Stream::EnvDynamics);
        assert_eq!(env.place_vehicles(Source::N1, Source::W1, 10, &mut rng).unwrap(), 10);
        let r = env.step_with_green([120, 0, 0, 0], &mut rng);
        assert_eq!(env.total_queued(), 0);
        // Oracle: one departure every two green seconds.
        let expected: f64 = (1..=120u32).map(|k| 10u32.saturating_sub(k / 2) as f64).sum::<f64>() / 120.0;
        assert!((-r[0] - expected).abs() < 1e-12);
        assert!(-r[0] > 0.0 && -r[0] < 10.0);
        assert_eq!(&r[1..], &[0.0; 3]);
        assert!(env.last_stats().is_conserved());
    }

    #[test]
    fn full_lanes_block_and_drop() {
        let mut env = quiet();
        let mut rng = substream(0, Stream::EnvDynamics);
        assert_eq!(env.place_vehicles(Source::W1, Source::E1, 60, &mut rng).unwrap(), 50);
        assert_eq!(env.place_vehicles(Source::W2, Source::N1, 50, &mut rng).unwrap(), 50);
        env.step_with_green([0, 0, 120, 0], &mut rng);
        assert!(env.queue(lane_id(2, Approach::North)) <= 50);
    }

    #[test]
    fn flow_is_conserved_under_load() {
        let mut env = TrafficEnv::new(TrafficParams {
            n_vehicles: 500_000,
            ..TrafficParams::default()
        })
        .unwrap();
        let mut rng = substream(5, Stream::EnvDynamics);
        for e in 0..30 {
            env.epoch_step([SignalPlan::from_index(e % 3).unwrap(); 4], &mut rng);
            let st = env.last_stats();
            assert!(st.is_conserved(), "{st:?}");
            assert!(env.queues().iter().all(|&q| q <= 50));
        }
    }

    #[test]
    fn transfers_spend_the_link_travel_time() {
        for (travel, queued_downstream) in [(30u32, 89.0), (0, 119.0)] {
            let mut env = TrafficEnv::new(TrafficParams {
                n_vehicles: 0,
                link_travel_seconds: travel,
                ..TrafficParams::default()
            })
            .unwrap();
            let mut rng = substream(0, Stream::EnvDynamics);
            env.place_vehicles(Source::N1, Source::S1, 1, &mut rng).unwrap();
            let r = env.step_with_green([120, 120, 0, 120], &mut rng);
            assert!((-r[0] - 1.0 / 120.0).abs() < 1e-15);
            assert!((-r[2] - queued_downstream / 120.0).abs() < 1e-15, "{r:?}");
            assert_eq!(env.queue(lane_id(2, Approach::North)), 1);
            assert!(env.last_stats().is_conserved());
        }
    }

    #[test]
    fn vehicles_in_transit_are_conserved() {
        let mut env = quiet();
        let mut rng = substream(0, Stream::EnvDynamics);
        env.place_vehicles(Source::N1, Source::S1, 5, &mut rng).unwrap();
        env.step_with_green([120, 0, 0, 0], &mut rng);
        env.step_with_green([0; 4], &mut rng);
        assert_eq!(env.total_queued() + env.in_transit(), 5);
        assert!(env.last_stats().is_conserved());
    }

    #[test]
    fn reset_runs_the_warmup() {
        let mut env = TrafficEnv::new(TrafficParams::default()).unwrap();
        env.reset(&mut substream(4, Stream::EnvDynamics));
        assert_eq!(env.clock(), 120);
        assert!(env.total_queued() > 0);
        let mut cold = TrafficEnv::new(TrafficParams {
            warmup_epochs: 0,
            ..TrafficParams::default()
        })
        .unwrap();
        cold.epoch_step([SignalPlan::Equal; 4], &mut substream(4, Stream::EnvDynamics));
        cold.reset(&mut substream(4, Stream::EnvDynamics));
        assert_eq!((cold.clock(), cold.total_queued(), cold.in_transit()), (0, 0, 0));
    }

    #[test]
    fn epoch_step_is_deterministic() {
        let run = || {
            let mut env = TrafficEnv::new(TrafficParams::default()).unwrap();
            let mut rng = substream(9, Stream::EnvDynamics);
            (0..20)
                .map(|_| env.epoch_step([SignalPlan::NorthSouth; 4], &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn features_of_extreme_states() {
        let zero = xi_from_queues(&[0; 16], 50);
        assert_eq!(zero, DVector::zeros(XI_DIM));
        let phi = phi_from_xi(&zero);
        assert_eq!(phi[0], 1.0);
        assert_eq!(phi.rows(1, XI_DIM).amax(), 0.0);
        let full = xi_from_queues(&[50; 16], 50);
        assert!(full.iter().all(|&x| x == 1.0));
        let q = policy_features_from_xi(&zero);
        assert_eq!(q.row(0)[0], 1.0);
        assert_eq!(q.row(0).columns(1, Q_DIM - 1).amax(), 0.0);
    }

    #[test]
    fn xi_layout() {
        let mut queues = [0; 16];
        queues[4] = 10; // T2 north
        queues[5] = 25; // T2 south
        let xi = xi_from_queues(&queues, 50);
        assert_eq!(xi[4], 0.2);
        assert_eq!(xi[5], 0.5);
        let pairs_t2 = NUM_LANES + 80;
        assert!((xi[pairs_t2] - 0.04).abs() < 1e-15);
        assert!((xi[pairs_t2 + 1] - 0.1).abs() < 1e-15);
        assert!((xi[pairs_t2 + 16 + 1] - 0.2 * 0.2 * 0.5).abs() < 1e-15);
        assert_eq!(xi.rows(NUM_LANES, 80).amax(), 0.0);
    }

    #[test]
    fn one_hot_blocks() {
        let xi = xi_from_queues(&[7; 16], 50);
        let q = policy_features_from_xi(&xi);
        assert_eq!(q.row(0).columns(1 + XI_DIM, 2 * XI_DIM).amax(), 0.0);
        assert_eq!(q.row(0).columns(1, XI_DIM).transpose(), xi);
        let f = reward_features_from_xi(&xi, &[0, 2, 1, 0]).unwrap();
        assert_eq!(f.len(), F_DIM);
        let nonzero_blocks: Vec<usize> = (0..12)
            .filter(|b| f.rows(1 + b * XI_DIM, XI_DIM).amax() > 0.0)
            .collect();
        assert_eq!(nonzero_blocks, [0, 5, 7, 9]);
        assert!(reward_features_from_xi(&xi, &[0, 3, 0, 0]).is_err());
    }
}
