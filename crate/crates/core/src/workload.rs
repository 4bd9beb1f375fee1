//! Request workloads and the electronic trial-and-failure baseline.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::protocol::RequestId;
use crate::time::SimTime;
use crate::topology::{NetworkGraph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Arrival {
    AllAtZero,
    /// Poisson process, `rate` requests per μs.
    Poisson { rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoints {
    /// Every request goes between the two lowest-id neighbours of the
    /// lowest-id node with at least two neighbours.
    SingleSwitchPair,
    /// Source and destination drawn uniformly, distinct.
    UniformRandom,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkloadSpec {
    pub request_count: u32,
    pub flits_per_request: u32,
    pub arrival: Arrival,
    pub endpoints: Endpoints,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            request_count: 100,
            flits_per_request: 100,
            arrival: Arrival::AllAtZero,
            endpoints: Endpoints::SingleSwitchPair,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequestSpec {
    pub id: RequestId,
    pub src: NodeId,
    pub dst: NodeId,
    pub flits: u32,
    pub arrival: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadError(pub String);

impl fmt::Display for WorkloadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "bad workload: {}", self.0)
    }
}

impl core::error::Error for WorkloadError {}

fn bad(msg: &str) -> WorkloadError {
    WorkloadError(String::from(msg))
}

/// Picks the benchmark pair: the two lowest-id neighbours of the first node
/// that has two.
pub fn single_switch_pair(graph: &NetworkGraph) -> Option<(NodeId, NodeId)> {
    graph.nodes().find_map(|n| {
        let mut nbrs: Vec<NodeId> = graph.outgoing_links(n).ok()?.iter().map(|l| l.to).collect();
        nbrs.sort_unstable();
        (nbrs.len() >= 2).then(|| (nbrs[0], nbrs[1]))
    })
}

/// Deterministic for a fixed `spec.seed`. Request ids are `0..request_count`
/// in arrival order.
pub fn generate(spec: &WorkloadSpec, graph: &NetworkGraph) -> Result<Vec<RequestSpec>, WorkloadError> {
    if spec.request_count == 0 || spec.flits_per_request == 0 {
        return Err(bad("request and flit counts must be at least 1"));
    }
    if let Arrival::Poisson { rate } = spec.arrival {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(bad("poisson rate must be positive"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pair = match spec.endpoints {
        Endpoints::SingleSwitchPair => {
            Some(single_switch_pair(graph).ok_or_else(|| bad("no node with two neighbours"))?)
        }
        Endpoints::UniformRandom => {
            if graph.node_count() < 2 {
                return Err(bad("need at least two nodes"));
            }
            None
        }
    };
    let n = graph.node_count() as u32;
    let mut clock = 0.0f64;
    let mut out = Vec::with_capacity(spec.request_count as usize);
    for i in 0..spec.request_count {
        let arrival = match spec.arrival {
            Arrival::AllAtZero => SimTime::ZERO,
            Arrival::Poisson { rate } => {
                let u: f64 = rng.random();
                clock += -libm::log(1.0 - u) / rate;
                SimTime::from_micros_f64(clock).ok_or_else(|| bad("arrival time overflow"))?
            }
        };
        let (src, dst) = match pair {
            Some(p) => p,
            None => {
                let s = rng.random_range(0..n);
                let mut d = rng.random_range(0..n - 1);
                if d >= s {
                    d += 1;
                }
                (NodeId(s), NodeId(d))
            }
        };
        out.push(RequestSpec { id: RequestId(i), src, dst, flits: spec.flits_per_request, arrival });
    }
    Ok(out)
}

/// Constants of the electronic store-and-forward baseline. Each trial costs
/// one O/E conversion, the routing decision and one E/O conversion; a failed
/// trial waits `retry_backoff` and tries again.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    pub per_flit_processing: SimTime,
    /// Cost of one conversion; paid twice per trial (in and out).
    pub per_flit_conversion: SimTime,
    /// Blocking probability is `min(0.95, alpha / W)`.
    pub alpha: f64,
    pub retry_backoff: SimTime,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            per_flit_processing: SimTime::from_micros(2),
            per_flit_conversion: SimTime::from_micros(1),
            alpha: 3.6,
            retry_backoff: SimTime::from_micros(1),
        }
    }
}

impl BaselineConfig {
    pub fn blocking_probability(&self, wavelengths: usize) -> f64 {
        if wavelengths == 0 {
            return 0.95;
        }
        (self.alpha / wavelengths as f64).clamp(0.0, 0.95)
    }

    pub fn trial_cost(&self) -> SimTime {
        self.per_flit_processing + self.per_flit_conversion * 2
    }

    /// Mean service time per flit, from the geometric trial count.
    pub fn expected_service_micros(&self, q: f64) -> f64 {
        let trials = 1.0 / (1.0 - q);
        trials * self.trial_cost().as_micros_f64() + (trials - 1.0) * self.retry_backoff.as_micros_f64()
    }
}

/// Service of one flit at one electronic switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlitService {
    pub trials: u32,
    pub time: SimTime,
}

/// Per-run baseline state: blocking probability and its random stream.
#[derive(Debug, Clone)]
pub struct BaselineState {
    config: BaselineConfig,
    q: f64,
    rng: ChaCha8Rng,
}

impl BaselineState {
    pub fn new(config: BaselineConfig, wavelengths: usize, seed: u64) -> Self {
        Self::with_probability(config, config.blocking_probability(wavelengths), seed)
    }

    pub fn with_probability(config: BaselineConfig, q: f64, seed: u64) -> Self {
        BaselineState { config, q: q.clamp(0.0, 0.95), rng: ChaCha8Rng::seed_from_u64(seed ^ 0xba5e_11fe) }
    }

    pub fn blocking_probability(&self) -> f64 {
        self.q
    }

    /// Draws the trial count for one flit and returns its service time.
    pub fn baseline_step(&mut self) -> FlitService {
        let mut trials = 1u32;
        while self.rng.random_bool(self.q) {
            trials += 1;
        }
        let time = self.config.trial_cost() * trials as u64 + self.config.retry_backoff * (trials - 1) as u64;
        FlitService { trials, time }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{ring5, single_switch};

    #[test]
    fn defaults_give_ten_thousand_flits() {
        let g = single_switch();
        let w = generate(&WorkloadSpec::default(), &g).unwrap();
        assert_eq!(w.len(), 100);
        assert_eq!(w.iter().map(|r| r.flits as u64).sum::<u64>(), 10_000);
        let (s, d) = (g.node_by_label("S").unwrap(), g.node_by_label("D").unwrap());
        assert!(w.iter().all(|r| r.src == s && r.dst == d && r.arrival == SimTime::ZERO));
    }

    #[test]
    fn single_flit_workload() {
        let spec = WorkloadSpec { request_count: 1, flits_per_request: 1, ..Default::default() };
        let w = generate(&spec, &single_switch()).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].flits, 1);
    }

    #[test]
    fn seeded_workloads_repeat() {
        let spec = WorkloadSpec {
            request_count: 50,
            arrival: Arrival::Poisson { rate: 0.1 },
            endpoints: Endpoints::UniformRandom,
            seed: 42,
            ..Default::default()
        };
        let g = ring5();
        let a = generate(&spec, &g).unwrap();
        assert_eq!(a, generate(&spec, &g).unwrap());
        assert!(a.iter().all(|r| r.src != r.dst));
        assert!(a.windows(2).all(|p| p[0].arrival <= p[1].arrival));
        let other = generate(&WorkloadSpec { seed: 43, ..spec }, &g).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn bad_specs() {
        let g = single_switch();
        assert!(generate(&WorkloadSpec { request_count: 0, ..Default::default() }, &g).is_err());
        assert!(generate(&WorkloadSpec { flits_per_request: 0, ..Default::default() }, &g).is_err());
        let p = WorkloadSpec { arrival: Arrival::Poisson { rate: 0.0 }, ..Default::default() };
        assert!(generate(&p, &g).is_err());
    }

    #[test]
    fn no_retry_service() {
        let mut b = BaselineState::with_probability(BaselineConfig::default(), 0.0, 1);
        let s = b.baseline_step();
        assert_eq!(s.trials, 1);
        // O/E + routing + E/O
        assert_eq!(s.time, SimTime::from_micros(4));
    }

    #[test]
    fn blocking_shape() {
        let c = BaselineConfig::default();
        assert_eq!(c.blocking_probability(4), 0.9);
        assert!((c.blocking_probability(64) - 0.05625).abs() < 1e-12);
        assert_eq!(BaselineConfig { alpha: 100.0, ..c }.blocking_probability(4), 0.95);
    }

    /// Monte-Carlo against the geometric mean 1/(1-q).
    #[test]
    fn geometric_trials_match_analytic_mean() {
        let c = BaselineConfig::default();
        let mut b = BaselineState::with_probability(c, 0.5, 7);
        let n = 200_000u64;
        let (mut trials, mut time) = (0u64, 0u64);
        for _ in 0..n {
            let s = b.baseline_step();
            trials += s.trials as u64;
            time += s.time.ticks();
        }
        let mean_trials = trials as f64 / n as f64;
        let mean_time = time as f64 / n as f64 / 100.0;
        assert!((mean_trials - 2.0).abs() / 2.0 < 0.02, "{mean_trials}");
        let expect = c.expected_service_micros(0.5);
        assert!((mean_time - expect).abs() / expect < 0.02, "{mean_time} vs {expect}");
        // roughly double the retry-free cost
        assert!(mean_time / 4.0 > 1.9);
    }

    #[test]
    fn service_non_increasing_in_wavelengths() {
        let c = BaselineConfig::default();
        let mut means = Vec::new();
        for w in [4usize, 16, 64] {
            let mut b = BaselineState::new(c, w, 3);
            let n = 100_000u64;
            let total: u64 = (0..n).map(|_| b.baseline_step().time.ticks()).sum();
            means.push(total as f64 / n as f64);
        }
        assert!(means[0] >= means[1] && means[1] >= means[2], "{means:?}");
    }
}
