//! Run statistics.

use alloc::vec::Vec;

use crate::time::SimTime;

/// Single counted event during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    Injected { flits: u64 },
    Delivered,
    DiscardedRequest { flits: u64 },
    DroppedDatagram,
    OeConversion,
    WavelengthConversion,
}

/// Statistics of one simulation run.
///
/// Conservation: `delivered_flits + discarded_flits + dropped_datagrams`
/// never exceeds `injected_flits`, and equals it once the run is quiescent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metrics {
    /// Last delivery minus first injection.
    pub makespan: SimTime,
    /// Per completed request: final-flit delivery minus injection, by request id.
    pub per_request_latency: Vec<(u32, SimTime)>,
    pub injected_flits: u64,
    pub delivered_flits: u64,
    pub discarded_requests: u64,
    pub discarded_flits: u64,
    pub dropped_datagrams: u64,
    pub oe_conversions: u64,
    pub wavelength_conversions: u64,
    /// Mean fraction of each link's wavelengths held by data reservations,
    /// indexed by link id.
    pub wavelength_utilization: Vec<f64>,
    /// Largest and final control-set size, indexed by link id.
    pub control_set_peak: Vec<usize>,
    pub control_set_final: Vec<usize>,
    /// Data reservations still held when the run ended.
    pub reserved_at_end: usize,
    pub events: u64,
    /// Hash over the dequeued event sequence.
    pub trace_digest: u64,
    pub seed: u64,
}

impl Metrics {
    pub fn record(&mut self, obs: Observation) {
        match obs {
            Observation::Injected { flits } => self.injected_flits += flits,
            Observation::Delivered => self.delivered_flits += 1,
            Observation::DiscardedRequest { flits } => {
                self.discarded_requests += 1;
                self.discarded_flits += flits;
            }
            Observation::DroppedDatagram => self.dropped_datagrams += 1,
            Observation::OeConversion => self.oe_conversions += 1,
            Observation::WavelengthConversion => self.wavelength_conversions += 1,
        }
    }

    /// Flits neither delivered nor written off yet.
    pub fn in_flight(&self) -> Option<u64> {
        self.injected_flits
            .checked_sub(self.delivered_flits)?
            .checked_sub(self.discarded_flits)?
            .checked_sub(self.dropped_datagrams)
    }

    /// True when every injected flit is accounted for given `in_flight`.
    pub fn conserves(&self, in_flight: u64) -> bool {
        self.delivered_flits + self.discarded_flits + self.dropped_datagrams + in_flight == self.injected_flits
    }
}

/// Mean/min/max of a makespan over several runs. Merging is associative and
/// commutative, so results from concurrent workers combine in any order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Summary {
    pub runs: u64,
    pub total_ticks: u128,
    pub min: SimTime,
    pub max: SimTime,
    pub discards: u64,
}

impl Summary {
    pub fn of(m: &Metrics) -> Self {
        Summary {
            runs: 1,
            total_ticks: m.makespan.ticks() as u128,
            min: m.makespan,
            max: m.makespan,
            discards: m.discarded_requests,
        }
    }

    pub fn merge(self, other: Summary) -> Summary {
        Summary {
            runs: self.runs + other.runs,
            total_ticks: self.total_ticks + other.total_ticks,
            min: self.min.min(other.min),
            max: self.max.max(other.max),
            discards: self.discards + other.discards,
        }
    }

    pub fn mean_micros(&self) -> f64 {
        if self.runs == 0 {
            return 0.0;
        }
        self.total_ticks as f64 / self.runs as f64 / crate::time::TICKS_PER_MICRO as f64
    }
}
