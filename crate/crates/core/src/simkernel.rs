//! Deterministic discrete-event engine and timing model.
//!
//! Timing:
//! * every link traversal costs `propagation_delay`;
//! * a routing node spends `switch_processing + oe_conversion` on each
//!   control message (or datagram) it converts, with `parallelism` messages
//!   in service at once;
//! * a data flit occupies its channel for `flit_cycle`; optical pass-through
//!   adds no delay beyond propagation;
//! * control packets are treated as having negligible length: they add no
//!   serialization delay but hold their channel for one tick, so no two
//!   messages start on the same (link, wavelength) at the same instant.
//!
//! Degree of parallelism `p` bounds both the number of lightpaths a source
//! keeps open (further capped by free data wavelengths on its first hop, see
//! [`channel_lanes`]) and the number of messages a node's electronics serve
//! concurrently.

use alloc::collections::{BinaryHeap, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};
use core::fmt;

use crate::metrics::{Metrics, Observation};
use crate::protocol::{
    adjust_control_set, datagram_send, ControlChange, ControlPolicy, DestinationState, Message, MessageKind,
    NodeContext, ProtocolError, Reception, RequestId, RoutingNodeState, SourcePhase, SourceState,
};
use crate::rwa::{LinkState, Occupant, RoutingTable, WavelengthId};
use crate::time::SimTime;
use crate::topology::{validate, LinkId, NetworkGraph, NodeId};
use crate::workload::{BaselineConfig, BaselineState, RequestSpec};

// ---------------------------------------------------------------------------
// Event queue
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeTravel {
    pub now: SimTime,
    pub requested: SimTime,
}

impl fmt::Display for TimeTravel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "event at {} scheduled while clock is at {}", self.requested, self.now)
    }
}

impl core::error::Error for TimeTravel {}

struct Entry<P> {
    time: SimTime,
    seq: u64,
    payload: P,
}

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl<P> Eq for Entry<P> {}

impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Entry<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

/// Min-heap on `(time, insertion sequence)`: equal-time events come out in
/// the order they were scheduled.
pub struct EventQueue<P> {
    heap: BinaryHeap<Reverse<Entry<P>>>,
    seq: u64,
    now: SimTime,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        EventQueue { heap: BinaryHeap::new(), seq: 0, now: SimTime::ZERO }
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, time: SimTime, payload: P) -> Result<(), TimeTravel> {
        if time < self.now {
            return Err(TimeTravel { now: self.now, requested: time });
        }
        self.heap.push(Reverse(Entry { time, seq: self.seq, payload }));
        self.seq += 1;
        Ok(())
    }

    /// Removes the earliest event and advances the clock to it.
    pub fn pop(&mut self) -> Option<(SimTime, P)> {
        let Reverse(e) = self.heap.pop()?;
        self.now = e.time;
        Some((e.time, e.payload))
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    ProposedConnection,
    ProposedDatagram,
    Baseline,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::ProposedConnection => "proposed-connection",
            Mode::ProposedDatagram => "proposed-datagram",
            Mode::Baseline => "baseline",
        }
    }
}

/// How a source decides to start streaming after its request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartMode {
    /// Wait for the `Reply`.
    Reply,
    /// Start a fixed time after the request; replies are ignored. A delay
    /// shorter than the setup time makes flits reach nodes that have no
    /// binding yet, which aborts the run.
    FixedDelay(SimTime),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimingConfig {
    pub propagation_delay: SimTime,
    pub switch_processing: SimTime,
    pub flit_cycle: SimTime,
    pub oe_conversion: SimTime,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            propagation_delay: SimTime::from_micros(1),
            switch_processing: SimTime::from_micros(2),
            flit_cycle: SimTime::from_micros(1),
            oe_conversion: SimTime::ZERO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub wavelengths: usize,
    /// Initial control-set size per link.
    pub control: usize,
    pub parallelism: usize,
    pub mode: Mode,
    pub timing: TimingConfig,
    pub baseline: BaselineConfig,
    pub dynamic_control: Option<ControlPolicy>,
    pub start: StartMode,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            wavelengths: 4,
            control: 1,
            parallelism: 1,
            mode: Mode::ProposedConnection,
            timing: TimingConfig::default(),
            baseline: BaselineConfig::default(),
            dynamic_control: None,
            start: StartMode::Reply,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigError {
    NoWavelengths,
    ZeroParallelism,
    NoControlWavelength,
    NoDataWavelength { wavelengths: usize, control: usize },
    ControlExceedsWavelengths { wavelengths: usize, control: usize },
    ZeroFlitCycle,
    BadAlpha,
    DynamicControlNeedsConnectionMode,
    InvalidGraph(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::NoWavelengths => f.write_str("wavelengths must be at least 1"),
            ConfigError::ZeroParallelism => f.write_str("parallelism must be at least 1"),
            ConfigError::NoControlWavelength => f.write_str("control wavelengths must be at least 1"),
            ConfigError::NoDataWavelength { wavelengths, control } => write!(
                f,
                "connection mode needs control <= wavelengths - 1 (got control {control}, wavelengths {wavelengths})"
            ),
            ConfigError::ControlExceedsWavelengths { wavelengths, control } => {
                write!(f, "control {control} exceeds wavelengths {wavelengths}")
            }
            ConfigError::ZeroFlitCycle => f.write_str("flit cycle must be positive"),
            ConfigError::BadAlpha => f.write_str("baseline alpha must be finite and non-negative"),
            ConfigError::DynamicControlNeedsConnectionMode => {
                f.write_str("dynamic control sets require proposed-connection mode")
            }
            ConfigError::InvalidGraph(why) => write!(f, "invalid topology: {why}"),
        }
    }
}

impl core::error::Error for ConfigError {}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.wavelengths == 0 || self.wavelengths > u16::MAX as usize {
            return Err(ConfigError::NoWavelengths);
        }
        if self.parallelism == 0 {
            return Err(ConfigError::ZeroParallelism);
        }
        if self.timing.flit_cycle == SimTime::ZERO {
            return Err(ConfigError::ZeroFlitCycle);
        }
        if !(self.baseline.alpha.is_finite() && self.baseline.alpha >= 0.0) {
            return Err(ConfigError::BadAlpha);
        }
        let (w, c) = (self.wavelengths, self.control);
        match self.mode {
            Mode::ProposedConnection => {
                if c == 0 {
                    return Err(ConfigError::NoControlWavelength);
                }
                if c >= w {
                    return Err(ConfigError::NoDataWavelength { wavelengths: w, control: c });
                }
            }
            Mode::ProposedDatagram => {
                if c == 0 {
                    return Err(ConfigError::NoControlWavelength);
                }
                if c > w {
                    return Err(ConfigError::ControlExceedsWavelengths { wavelengths: w, control: c });
                }
            }
            Mode::Baseline => {}
        }
        if self.dynamic_control.is_some() && self.mode != Mode::ProposedConnection {
            return Err(ConfigError::DynamicControlNeedsConnectionMode);
        }
        Ok(())
    }
}

/// Concurrently serviceable flit lanes: `min(p, free data wavelengths)` for
/// the proposed protocol, `min(p, W)` electronic lanes for the baseline.
pub fn channel_lanes(link: &LinkState, parallelism: usize, mode: Mode) -> usize {
    match mode {
        Mode::Baseline => parallelism.min(link.wavelengths()),
        _ => parallelism.min(link.free_data_count()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Re-check every link and connection table after each event.
    pub audit_every_event: bool,
    /// Keep a log of every channel transmission.
    pub record_transmissions: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimError {
    Config(ConfigError),
    InvariantViolation(String),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::Config(e) => write!(f, "configuration error: {e}"),
            SimError::InvariantViolation(why) => write!(f, "invariant violation: {why}"),
        }
    }
}

impl core::error::Error for SimError {}

impl From<ConfigError> for SimError {
    fn from(e: ConfigError) -> Self {
        SimError::Config(e)
    }
}

impl From<ProtocolError> for SimError {
    fn from(e: ProtocolError) -> Self {
        SimError::InvariantViolation(format!("{e}"))
    }
}

impl From<TimeTravel> for SimError {
    fn from(e: TimeTravel) -> Self {
        SimError::InvariantViolation(format!("{e}"))
    }
}

fn violation(why: String) -> SimError {
    SimError::InvariantViolation(why)
}

/// One message starting on one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    /// When the first bit enters the link.
    pub time: SimTime,
    /// How long the channel is held.
    pub duration: SimTime,
    pub link: LinkId,
    pub wavelength: WavelengthId,
    pub kind: MessageKind,
    pub request: RequestId,
    /// Whether the wavelength was in the link's control set at that moment.
    pub on_control: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub metrics: Metrics,
    pub transmissions: Vec<Transmission>,
    /// `(time, link, new size)` whenever a control set changes size.
    pub control_changes: Vec<(SimTime, LinkId, usize)>,
}

// ---------------------------------------------------------------------------
// Simulator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
enum Slot {
    /// A packet channel on this link may have become idle.
    Link(LinkId),
    /// Next flit of a lightpath stream.
    Flit(RequestId),
    /// Fixed-delay start of a stream.
    Unconfirmed(RequestId),
}

#[derive(Debug, Clone)]
enum Event {
    WorkloadInjection(usize),
    MessageArrival { link: LinkId, msg: Message },
    ProcessingDone { node: NodeId, msg: Message, arrival: LinkId },
    TransmissionSlotFree(Slot),
}

#[derive(Debug, Clone, Copy, Default)]
struct Channel {
    /// The channel may start a new transmission at this time.
    busy_until: SimTime,
    /// Last arrival of anything sent on the channel.
    in_flight_until: SimTime,
}

#[derive(Debug, Default)]
struct LinkRt {
    channels: Vec<Channel>,
    pending: VecDeque<Message>,
    wake_at: Option<SimTime>,
    reserved_area: u128,
    last_change: SimTime,
    last_reserved: usize,
    control_peak: usize,
}

struct NodeRt {
    router: RoutingNodeState,
    source: SourceState,
    dest: DestinationState,
    busy: usize,
    electronic_queue: VecDeque<(Message, LinkId)>,
}

struct Stream {
    link: LinkId,
    wavelength: WavelengthId,
    flits: VecDeque<Message>,
}

struct RequestRt {
    spec: RequestSpec,
    delivered: u32,
}

struct Sim<'g> {
    graph: &'g NetworkGraph,
    routes: RoutingTable,
    cfg: SimConfig,
    opts: RunOptions,
    queue: EventQueue<Event>,
    links: Vec<LinkState>,
    link_rt: Vec<LinkRt>,
    nodes: Vec<NodeRt>,
    requests: Vec<RequestRt>,
    streams: alloc::collections::BTreeMap<RequestId, Stream>,
    baseline: BaselineState,
    metrics: Metrics,
    first_injection: Option<SimTime>,
    last_delivery: Option<SimTime>,
    digest: u64,
    transmissions: Vec<Transmission>,
    control_changes: Vec<(SimTime, LinkId, usize)>,
}

/// Runs a workload to quiescence and returns its metrics.
pub fn run(config: &SimConfig, graph: &NetworkGraph, workload: &[RequestSpec]) -> Result<Metrics, SimError> {
    run_with(config, graph, workload, RunOptions::default()).map(|r| r.metrics)
}

/// [`run`] with auditing and transmission logging options.
pub fn run_with(
    config: &SimConfig,
    graph: &NetworkGraph,
    workload: &[RequestSpec],
    opts: RunOptions,
) -> Result<RunReport, SimError> {
    config.validate()?;
    let problems = validate(graph);
    if let Some(p) = problems.first() {
        return Err(ConfigError::InvalidGraph(format!("{p:?}")).into());
    }
    for (i, r) in workload.iter().enumerate() {
        if r.id.0 as usize != i {
            return Err(violation(format!("workload request {i} has id {}", r.id.0)));
        }
        if !graph.contains(r.src) || !graph.contains(r.dst) || r.src == r.dst || r.flits == 0 {
            return Err(violation(format!("workload request {i} is malformed")));
        }
    }
    let mut sim = Sim::new(config, graph, workload, opts)?;
    sim.execute()?;
    sim.finish()
}

const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl<'g> Sim<'g> {
    fn new(cfg: &SimConfig, graph: &'g NetworkGraph, workload: &[RequestSpec], opts: RunOptions) -> Result<Self, SimError> {
        let control = cfg.control.clamp(1, cfg.wavelengths);
        let links = graph
            .links()
            .iter()
            .map(|l| LinkState::new(*l, cfg.wavelengths, control))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| violation(format!("{e}")))?;
        let link_rt = links
            .iter()
            .map(|s| LinkRt {
                channels: vec![Channel::default(); cfg.wavelengths],
                control_peak: s.control_count(),
                ..LinkRt::default()
            })
            .collect();
        let nodes = graph
            .nodes()
            .map(|n| NodeRt {
                router: RoutingNodeState::new(n),
                source: SourceState::new(n),
                dest: DestinationState::new(n),
                busy: 0,
                electronic_queue: VecDeque::new(),
            })
            .collect();
        let mut queue = EventQueue::new();
        for (i, r) in workload.iter().enumerate() {
            queue.schedule(r.arrival, Event::WorkloadInjection(i))?;
        }
        Ok(Sim {
            graph,
            routes: RoutingTable::new(graph),
            cfg: *cfg,
            opts,
            queue,
            links,
            link_rt,
            nodes,
            requests: workload.iter().map(|&spec| RequestRt { spec, delivered: 0 }).collect(),
            streams: Default::default(),
            baseline: BaselineState::new(cfg.baseline, cfg.wavelengths, cfg.seed),
            metrics: Metrics { seed: cfg.seed, ..Metrics::default() },
            first_injection: workload.iter().map(|r| r.arrival).min(),
            last_delivery: None,
            digest: 0xcbf2_9ce4_8422_2325,
            transmissions: Vec::new(),
            control_changes: Vec::new(),
        })
    }

    fn now(&self) -> SimTime {
        self.queue.now()
    }

    fn mix(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.digest ^= b as u64;
            self.digest = self.digest.wrapping_mul(FNV_PRIME);
        }
    }

    fn fold_event(&mut self, time: SimTime, ev: &Event) {
        self.mix(time.ticks());
        match ev {
            Event::WorkloadInjection(i) => {
                self.mix(1);
                self.mix(*i as u64);
            }
            Event::MessageArrival { link, msg } => {
                self.mix(2);
                self.mix(link.0 as u64);
                self.mix(msg.kind as u64);
                self.mix(msg.request.0 as u64);
                self.mix(msg.carrying.0 as u64);
                self.mix(msg.flit.map_or(u64::MAX, |f| f.index as u64));
            }
            Event::ProcessingDone { node, msg, .. } => {
                self.mix(3);
                self.mix(node.0 as u64);
                self.mix(msg.kind as u64);
                self.mix(msg.request.0 as u64);
            }
            Event::TransmissionSlotFree(slot) => {
                self.mix(4);
                match slot {
                    Slot::Link(l) => self.mix(l.0 as u64),
                    Slot::Flit(r) => self.mix(1 << 32 | r.0 as u64),
                    Slot::Unconfirmed(r) => self.mix(2 << 32 | r.0 as u64),
                }
            }
        }
    }

    fn execute(&mut self) -> Result<(), SimError> {
        while let Some((time, ev)) = self.queue.pop() {
            self.metrics.events += 1;
            self.fold_event(time, &ev);
            match ev {
                Event::WorkloadInjection(i) => self.on_injection(i)?,
                Event::MessageArrival { link, msg } => self.on_arrival(link, msg)?,
                Event::ProcessingDone { node, msg, arrival } => self.on_processed(node, msg, arrival)?,
                Event::TransmissionSlotFree(Slot::Link(l)) => {
                    if self.link_rt[l.index()].wake_at == Some(time) {
                        self.link_rt[l.index()].wake_at = None;
                    }
                    self.drain(l)?;
                }
                Event::TransmissionSlotFree(Slot::Flit(r)) => self.on_flit_slot(r)?,
                Event::TransmissionSlotFree(Slot::Unconfirmed(r)) => self.on_unconfirmed(r)?,
            }
            if self.opts.audit_every_event {
                self.audit()?;
            }
        }
        Ok(())
    }

    // -- bookkeeping -------------------------------------------------------

    fn refresh_util(&mut self, link: LinkId) {
        let now = self.now();
        let rt = &mut self.link_rt[link.index()];
        rt.reserved_area += rt.last_reserved as u128 * (now - rt.last_change).ticks() as u128;
        rt.last_change = now;
        rt.last_reserved = self.links[link.index()].reserved_count();
    }

    fn refresh_node_links(&mut self, node: NodeId) {
        for i in 0..self.graph.outgoing_ids(node).len() {
            let l = self.graph.outgoing_ids(node)[i];
            self.refresh_util(l);
        }
    }

    fn delivered(&mut self, request: RequestId) {
        let now = self.now();
        self.metrics.record(Observation::Delivered);
        self.last_delivery = Some(now);
        let r = &mut self.requests[request.0 as usize];
        r.delivered += 1;
        if r.delivered == r.spec.flits {
            let latency = now - r.spec.arrival;
            self.metrics.per_request_latency.push((request.0, latency));
        }
    }

    // -- transmission ------------------------------------------------------

    fn packet_pool(&self, link: LinkId) -> Vec<WavelengthId> {
        match self.cfg.mode {
            Mode::Baseline => {
                let lanes = channel_lanes(&self.links[link.index()], self.cfg.parallelism, Mode::Baseline);
                (0..lanes as u16).map(WavelengthId).collect()
            }
            _ => self.links[link.index()].control_set().collect(),
        }
    }

    fn serialization(&self, msg: &Message) -> SimTime {
        match msg.kind {
            MessageKind::DataFlit | MessageKind::Datagram => self.cfg.timing.flit_cycle,
            _ => SimTime::ZERO,
        }
    }

    fn record_tx(&mut self, link: LinkId, msg: &Message, start: SimTime, duration: SimTime) -> Result<(), SimError> {
        let on_control = self.links[link.index()].is_control(msg.carrying);
        if self.cfg.mode != Mode::Baseline && on_control != msg.kind.rides_control() {
            return Err(violation(format!(
                "{:?} for request {} sent on wavelength {} of link {} (control: {on_control})",
                msg.kind, msg.request.0, msg.carrying.0, link.0
            )));
        }
        if self.opts.record_transmissions {
            self.transmissions.push(Transmission {
                time: start,
                duration,
                link,
                wavelength: msg.carrying,
                kind: msg.kind,
                request: msg.request,
                on_control,
            });
        }
        Ok(())
    }

    /// Queues a packet-switched message on the link's packet channels.
    fn send_packet(&mut self, link: LinkId, msg: Message) -> Result<(), SimError> {
        self.link_rt[link.index()].pending.push_back(msg);
        self.drain(link)
    }

    fn drain(&mut self, link: LinkId) -> Result<(), SimError> {
        let now = self.now();
        while !self.link_rt[link.index()].pending.is_empty() {
            let pool = self.packet_pool(link);
            let rt = &self.link_rt[link.index()];
            let idle = pool.iter().copied().find(|w| rt.channels[w.index()].busy_until <= now);
            let Some(w) = idle else {
                let next = pool.iter().map(|w| rt.channels[w.index()].busy_until).min();
                if let Some(t) = next {
                    if rt.wake_at.is_none_or(|at| at > t || at < now) {
                        self.link_rt[link.index()].wake_at = Some(t);
                        self.queue.schedule(t, Event::TransmissionSlotFree(Slot::Link(link)))?;
                    }
                }
                return Ok(());
            };
            let mut msg = self.link_rt[link.index()].pending.pop_front().expect("non-empty");
            msg.carrying = w;
            let ser = self.serialization(&msg);
            self.record_tx(link, &msg, now, ser.max(SimTime::TICK))?;
            let arrive = now + ser + self.cfg.timing.propagation_delay;
            let ch = &mut self.link_rt[link.index()].channels[w.index()];
            ch.busy_until = now + ser.max(SimTime::TICK);
            ch.in_flight_until = ch.in_flight_until.max(arrive);
            self.queue.schedule(arrive, Event::MessageArrival { link, msg })?;
        }
        Ok(())
    }

    /// Puts a data flit on a reserved lightpath channel. `start` is when its
    /// first bit enters the link.
    fn send_data(&mut self, link: LinkId, msg: Message, start: SimTime) -> Result<(), SimError> {
        let w = msg.carrying;
        let state = &self.links[link.index()];
        if state.occupant(w) != Some(Occupant::Data(msg.request)) {
            return Err(violation(format!(
                "flit of request {} on link {} wavelength {} without reservation (occupant {:?})",
                msg.request.0,
                link.0,
                w.0,
                state.occupant(w)
            )));
        }
        let cycle = self.cfg.timing.flit_cycle;
        let ch = &mut self.link_rt[link.index()].channels[w.index()];
        if ch.busy_until > start {
            return Err(violation(format!(
                "contention on link {} wavelength {}: busy until {}, flit starts {}",
                link.0, w.0, ch.busy_until, start
            )));
        }
        let arrive = start + cycle + self.cfg.timing.propagation_delay;
        ch.busy_until = start + cycle;
        ch.in_flight_until = ch.in_flight_until.max(arrive);
        self.record_tx(link, &msg, start, cycle)?;
        self.queue.schedule(arrive, Event::MessageArrival { link, msg })?;
        Ok(())
    }

    // -- handlers ----------------------------------------------------------

    fn on_injection(&mut self, i: usize) -> Result<(), SimError> {
        let r = self.requests[i].spec;
        self.metrics.record(Observation::Injected { flits: r.flits as u64 });
        match self.cfg.mode {
            Mode::ProposedConnection => {
                self.nodes[r.src.index()].source.enqueue(r.id, r.dst, r.flits);
                self.try_start(r.src)
            }
            Mode::ProposedDatagram | Mode::Baseline => {
                let Some(first) = self.routes.next_hop(r.src, r.dst) else {
                    if self.cfg.mode == Mode::ProposedDatagram {
                        for _ in 0..r.flits {
                            self.metrics.record(Observation::DroppedDatagram);
                        }
                    } else {
                        self.metrics.record(Observation::DiscardedRequest { flits: r.flits as u64 });
                    }
                    return Ok(());
                };
                for mut m in datagram_send(r.id, r.src, r.dst, r.flits) {
                    if self.cfg.mode == Mode::Baseline {
                        m.kind = MessageKind::DataFlit;
                    }
                    self.send_packet(first, m)?;
                }
                Ok(())
            }
        }
    }

    /// Opens lightpaths for queued requests while the source has lanes.
    fn try_start(&mut self, node: NodeId) -> Result<(), SimError> {
        let p = self.cfg.parallelism;
        loop {
            let src = &self.nodes[node.index()].source;
            let outstanding = src.outstanding();
            if outstanding >= p {
                return Ok(());
            }
            let Some(head) = src.next_queued() else { return Ok(()) };
            let (id, dst, flits) = (head.id, head.dst, head.flits);
            let Some(first) = self.routes.next_hop(node, dst) else {
                self.nodes[node.index()].source.discard_queued(id)?;
                self.metrics.record(Observation::DiscardedRequest { flits: flits as u64 });
                continue;
            };
            if channel_lanes(&self.links[first.index()], p - outstanding, self.cfg.mode) == 0 {
                return Ok(());
            }
            let msg = self.nodes[node.index()].source.source_start(id, &mut self.links[first.index()])?;
            self.refresh_util(first);
            self.send_packet(first, msg)?;
            if let StartMode::FixedDelay(d) = self.cfg.start {
                let at = self.now() + d;
                self.queue.schedule(at, Event::TransmissionSlotFree(Slot::Unconfirmed(id)))?;
            }
        }
    }

    fn on_arrival(&mut self, link: LinkId, msg: Message) -> Result<(), SimError> {
        let to = self.graph.link(link).to;
        if self.cfg.mode == Mode::Baseline {
            if msg.dst == to {
                self.nodes[to.index()].dest.destination_on_datagram(&msg)?;
                self.delivered(msg.request);
            } else {
                self.metrics.record(Observation::OeConversion);
                self.nodes[to.index()].electronic_queue.push_back((msg, link));
                self.try_serve(to)?;
            }
            return Ok(());
        }
        let rec = self.nodes[to.index()].router.node_on_receive(msg, &self.links[link.index()])?;
        match rec {
            Reception::Queued => {
                self.metrics.record(Observation::OeConversion);
                self.try_serve(to)
            }
            Reception::ToHost(m) => {
                self.metrics.record(Observation::OeConversion);
                self.on_host(to, m)
            }
            Reception::Forward { link: out, wavelength, converted } => {
                if converted {
                    self.metrics.record(Observation::WavelengthConversion);
                }
                let mut fwd = msg;
                fwd.carrying = wavelength;
                let start = self.now().saturating_sub(self.cfg.timing.flit_cycle);
                self.send_data(out, fwd, start)
            }
            Reception::Deliver(m) => {
                let ack = self.nodes[to.index()].dest.destination_on_flit(&m, link, self.graph)?;
                self.delivered(m.request);
                if let Some(ack) = ack {
                    self.nodes[to.index()].router.unbind(m.request);
                    self.send_packet(ack.link, ack.msg)?;
                }
                Ok(())
            }
        }
    }

    /// Control traffic or datagrams addressed to this node's host.
    fn on_host(&mut self, node: NodeId, msg: Message) -> Result<(), SimError> {
        let n = node.index();
        match msg.kind {
            MessageKind::Reply => {
                if let StartMode::FixedDelay(_) = self.cfg.start {
                    return Ok(());
                }
                let flits = self.nodes[n].source.source_on_reply(&msg)?;
                self.open_stream(node, msg.request, flits)
            }
            MessageKind::Ack | MessageKind::Teardown => {
                let first = self.nodes[n]
                    .source
                    .get(msg.request)
                    .and_then(|p| p.first_hop)
                    .map(|(l, _)| l)
                    .ok_or(ProtocolError::UnexpectedAck(msg.request))?;
                let state = &mut self.links[first.index()];
                if msg.kind == MessageKind::Ack {
                    self.nodes[n].source.source_on_ack(&msg, state)?;
                } else {
                    let p = self.nodes[n].source.source_on_teardown(&msg, state)?;
                    self.metrics.record(Observation::DiscardedRequest { flits: p.flits as u64 });
                }
                self.refresh_util(first);
                self.try_start(node)
            }
            MessageKind::Datagram => {
                self.nodes[n].dest.destination_on_datagram(&msg)?;
                self.delivered(msg.request);
                Ok(())
            }
            _ => Err(violation(format!("{:?} handed to host {}", msg.kind, node.0))),
        }
    }

    fn open_stream(&mut self, node: NodeId, request: RequestId, flits: Vec<Message>) -> Result<(), SimError> {
        let (link, wavelength) = self.nodes[node.index()]
            .source
            .get(request)
            .and_then(|p| p.first_hop)
            .ok_or(ProtocolError::UnknownRequest(request))?;
        self.streams.insert(request, Stream { link, wavelength, flits: flits.into() });
        self.on_flit_slot(request)
    }

    fn on_flit_slot(&mut self, request: RequestId) -> Result<(), SimError> {
        let Some(stream) = self.streams.get_mut(&request) else { return Ok(()) };
        let Some(mut flit) = stream.flits.pop_front() else {
            self.streams.remove(&request);
            return Ok(());
        };
        let link = stream.link;
        flit.carrying = stream.wavelength;
        let more = !stream.flits.is_empty();
        if !more {
            self.streams.remove(&request);
        }
        let now = self.now();
        self.send_data(link, flit, now)?;
        if more {
            let next = now + self.cfg.timing.flit_cycle;
            self.queue.schedule(next, Event::TransmissionSlotFree(Slot::Flit(request)))?;
        }
        Ok(())
    }

    fn on_unconfirmed(&mut self, request: RequestId) -> Result<(), SimError> {
        let src = self.requests[request.0 as usize].spec.src;
        let waiting = self.nodes[src.index()]
            .source
            .get(request)
            .is_some_and(|p| p.phase == SourcePhase::WaitingReply);
        if !waiting {
            return Ok(());
        }
        let flits = self.nodes[src.index()].source.source_send_unconfirmed(request)?;
        self.open_stream(src, request, flits)
    }

    /// Starts service on queued messages while electronic lanes are free.
    fn try_serve(&mut self, node: NodeId) -> Result<(), SimError> {
        let servers = match self.cfg.mode {
            Mode::Baseline => self.cfg.parallelism.min(self.cfg.wavelengths),
            _ => self.cfg.parallelism,
        };
        let now = self.now();
        loop {
            let nr = &mut self.nodes[node.index()];
            if nr.busy >= servers {
                return Ok(());
            }
            let next = match self.cfg.mode {
                Mode::Baseline => nr.electronic_queue.pop_front(),
                _ => nr.router.dequeue(),
            };
            let Some((msg, arrival)) = next else { return Ok(()) };
            nr.busy += 1;
            let service = match self.cfg.mode {
                Mode::Baseline => self.baseline.baseline_step().time,
                _ => self.cfg.timing.switch_processing + self.cfg.timing.oe_conversion,
            };
            self.queue.schedule(now + service, Event::ProcessingDone { node, msg, arrival })?;
        }
    }

    fn on_processed(&mut self, node: NodeId, msg: Message, arrival: LinkId) -> Result<(), SimError> {
        self.nodes[node.index()].busy -= 1;
        if self.cfg.mode == Mode::Baseline {
            match self.routes.next_hop(node, msg.dst) {
                Some(l) => self.send_packet(l, msg)?,
                None => return Err(violation(format!("baseline flit stranded at node {}", node.0))),
            }
            return self.try_serve(node);
        }

        let nr = &mut self.nodes[node.index()];
        let mut ctx = NodeContext {
            graph: self.graph,
            routes: &self.routes,
            links: &mut self.links,
            completed_here: nr.dest.completed(),
        };
        let out = nr.router.node_process_request(msg, arrival, &mut ctx)?;
        if out.dropped.is_some() {
            self.metrics.record(Observation::DroppedDatagram);
        }
        self.refresh_node_links(node);
        for o in out.send {
            self.send_packet(o.link, o.msg)?;
        }
        if !out.released.is_empty() {
            self.try_start(node)?;
        }
        if let Some(policy) = self.cfg.dynamic_control {
            self.resize_control(node, policy)?;
        }
        self.try_serve(node)
    }

    fn resize_control(&mut self, node: NodeId, policy: ControlPolicy) -> Result<(), SimError> {
        let now = self.now();
        let queue_len = self.nodes[node.index()].router.queue_len();
        for i in 0..self.graph.outgoing_ids(node).len() {
            let l = self.graph.outgoing_ids(node)[i];
            let rt = &self.link_rt[l.index()];
            let idle = |w: WavelengthId| {
                let ch = rt.channels[w.index()];
                ch.busy_until <= now && ch.in_flight_until <= now
            };
            let change = adjust_control_set(&mut self.links[l.index()], queue_len, policy, idle);
            if change != ControlChange::Unchanged {
                let size = self.links[l.index()].control_count();
                let rt = &mut self.link_rt[l.index()];
                rt.control_peak = rt.control_peak.max(size);
                self.control_changes.push((now, l, size));
                if let ControlChange::Grew(_) = change {
                    self.drain(l)?;
                }
            }
        }
        Ok(())
    }

    // -- checks ------------------------------------------------------------

    fn audit(&self) -> Result<(), SimError> {
        let connection = self.cfg.mode == Mode::ProposedConnection;
        for (i, s) in self.links.iter().enumerate() {
            if s.control_count() == 0 {
                return Err(violation(format!("link {i} lost its control set")));
            }
            if connection && s.data_count() == 0 {
                return Err(violation(format!("link {i} has no data wavelength")));
            }
            for w in 0..s.wavelengths() {
                if let Some(Occupant::Data(r)) = s.occupant(WavelengthId(w as u16)) {
                    let src = self.requests.get(r.0 as usize).map(|q| q.spec.src);
                    let live = src.is_some_and(|n| {
                        self.nodes[n.index()].source.get(r).is_some_and(|p| p.phase != SourcePhase::Queued)
                    });
                    if !live {
                        return Err(violation(format!("link {i} wavelength {w} held by finished request {}", r.0)));
                    }
                }
            }
        }
        for nr in &self.nodes {
            for r in 0..self.requests.len() as u32 {
                if let Some(e) = nr.router.entry(RequestId(r)) {
                    if let Some((l, w)) = e.out {
                        if self.links[l.index()].occupant(w) != Some(Occupant::Data(RequestId(r))) {
                            return Err(violation(format!(
                                "node {} binds request {r} to link {} wavelength {} it does not hold",
                                nr.router.node().0,
                                l.0,
                                w.0
                            )));
                        }
                    }
                }
            }
        }
        if self.metrics.in_flight().is_none() {
            return Err(violation(String::from("more flits accounted for than injected")));
        }
        Ok(())
    }

    fn finish(mut self) -> Result<RunReport, SimError> {
        for i in 0..self.links.len() {
            self.refresh_util(LinkId(i as u32));
        }
        let end = self.now();
        if let Some(n) = self.nodes.iter().find(|n| !n.source.is_empty()) {
            return Err(violation(format!("requests stranded at node {}", n.source.node().0)));
        }
        let reserved: usize = self.links.iter().map(LinkState::reserved_count).sum();
        if reserved != 0 {
            return Err(violation(format!("{reserved} wavelengths still reserved after quiescence")));
        }
        if self.metrics.in_flight() != Some(0) {
            return Err(violation(format!("flit conservation broken: {:?}", self.metrics)));
        }
        let m = &mut self.metrics;
        m.makespan = match (self.first_injection, self.last_delivery) {
            (Some(a), Some(b)) => b - a,
            _ => SimTime::ZERO,
        };
        m.per_request_latency.sort_unstable();
        m.wavelength_utilization = self
            .link_rt
            .iter()
            .map(|rt| {
                if end == SimTime::ZERO {
                    0.0
                } else {
                    rt.reserved_area as f64 / (self.cfg.wavelengths as f64 * end.ticks() as f64)
                }
            })
            .collect();
        m.control_set_peak = self.link_rt.iter().map(|rt| rt.control_peak).collect();
        m.control_set_final = self.links.iter().map(LinkState::control_count).collect();
        m.reserved_at_end = reserved;
        m.trace_digest = self.digest;
        Ok(RunReport {
            metrics: self.metrics,
            transmissions: self.transmissions,
            control_changes: self.control_changes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{ring5, single_switch};
    use crate::workload::{generate, WorkloadSpec};

    #[test]
    fn queue_orders_by_time() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_micros(5), 'a').unwrap();
        q.schedule(SimTime::from_micros(3), 'b').unwrap();
        assert_eq!(q.pop(), Some((SimTime::from_micros(3), 'b')));
        assert_eq!(q.pop(), Some((SimTime::from_micros(5), 'a')));
        assert_eq!(q.pop(), None);
    }

    #[test]
    fn queue_ties_are_fifo() {
        let mut q = EventQueue::new();
        for c in ['x', 'y', 'z'] {
            q.schedule(SimTime::from_micros(7), c).unwrap();
        }
        let order: Vec<char> = core::iter::from_fn(|| q.pop().map(|(_, c)| c)).collect();
        assert_eq!(order, ['x', 'y', 'z']);
    }

    #[test]
    fn queue_rejects_the_past() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_micros(4), ()).unwrap();
        q.pop();
        assert_eq!(
            q.schedule(SimTime::from_micros(3), ()),
            Err(TimeTravel { now: SimTime::from_micros(4), requested: SimTime::from_micros(3) })
        );
    }

    fn one(flits: u32) -> Vec<RequestSpec> {
        let spec = WorkloadSpec { request_count: 1, flits_per_request: flits, ..Default::default() };
        generate(&spec, &single_switch()).unwrap()
    }

    /// Hand trace, single request, single flit, S -> X -> D:
    /// request S->X arrives 1, X processes until 3, reply reaches S at 4,
    /// flit serialized 4..5, reaches X at 6 and D at 7.
    #[test]
    fn single_flit_hand_trace() {
        let m = run(&SimConfig::default(), &single_switch(), &one(1)).unwrap();
        assert_eq!(m.makespan, SimTime::from_micros(7));
        assert_eq!(m.delivered_flits, 1);
        // request at X, request at D, reply at S, ack at X, ack at S
        assert_eq!(m.oe_conversions, 5);
    }

    #[test]
    fn empty_workload() {
        let m = run(&SimConfig::default(), &single_switch(), &[]).unwrap();
        assert_eq!(m.makespan, SimTime::ZERO);
        assert_eq!(m.events, 0);
    }

    #[test]
    fn deterministic_metrics() {
        let g = ring5();
        let spec = WorkloadSpec {
            request_count: 30,
            flits_per_request: 10,
            arrival: crate::workload::Arrival::Poisson { rate: 0.05 },
            endpoints: crate::workload::Endpoints::UniformRandom,
            seed: 11,
        };
        let w = generate(&spec, &g).unwrap();
        let cfg = SimConfig { parallelism: 2, ..Default::default() };
        assert_eq!(run(&cfg, &g, &w).unwrap(), run(&cfg, &g, &w).unwrap());
    }

    #[test]
    fn lanes() {
        let g = single_switch();
        let s = LinkState::new(g.link(LinkId(0)), 4, 1).unwrap();
        assert_eq!(channel_lanes(&s, 16, Mode::ProposedConnection), 3);
        assert_eq!(channel_lanes(&s, 1, Mode::ProposedConnection), 1);
        let big = LinkState::new(g.link(LinkId(0)), 64, 16).unwrap();
        assert_eq!(channel_lanes(&big, 16, Mode::ProposedConnection), 16);
        assert_eq!(channel_lanes(&big, 1, Mode::Baseline), 1);
        assert_eq!(channel_lanes(&s, 16, Mode::Baseline), 4);
    }

    #[test]
    fn config_validation() {
        let ok = SimConfig::default();
        assert!(ok.validate().is_ok());
        let c = SimConfig { control: 4, wavelengths: 4, ..ok };
        assert_eq!(c.validate(), Err(ConfigError::NoDataWavelength { wavelengths: 4, control: 4 }));
        assert!(SimConfig { mode: Mode::ProposedDatagram, ..c }.validate().is_ok());
        assert_eq!(SimConfig { parallelism: 0, ..ok }.validate(), Err(ConfigError::ZeroParallelism));
        assert_eq!(SimConfig { control: 0, ..ok }.validate(), Err(ConfigError::NoControlWavelength));
        let dynamic = SimConfig { mode: Mode::Baseline, dynamic_control: Some(ControlPolicy::default()), ..ok };
        assert_eq!(dynamic.validate(), Err(ConfigError::DynamicControlNeedsConnectionMode));
    }

    #[test]
    fn datagram_two_hops() {
        let cfg = SimConfig { mode: Mode::ProposedDatagram, ..Default::default() };
        let m = run(&cfg, &single_switch(), &one(1)).unwrap();
        assert_eq!(m.delivered_flits, 1);
        assert_eq!(m.oe_conversions, 2);
        // 1 serialization + 1 propagation, 2 processing, 1 + 1 again
        assert_eq!(m.makespan, SimTime::from_micros(6));
    }

    #[test]
    fn baseline_single_flit() {
        let cfg = SimConfig {
            mode: Mode::Baseline,
            baseline: BaselineConfig { alpha: 0.0, ..Default::default() },
            ..Default::default()
        };
        let m = run(&cfg, &single_switch(), &one(1)).unwrap();
        // 1 + 1 to X, 4 service, 1 + 1 to D
        assert_eq!(m.makespan, SimTime::from_micros(8));
    }

    #[test]
    fn fixed_delay_too_short_aborts() {
        let g = ring5();
        let a = g.node_by_label("A").unwrap();
        let c = g.node_by_label("C").unwrap();
        let w = [RequestSpec { id: RequestId(0), src: a, dst: c, flits: 3, arrival: SimTime::ZERO }];
        let cfg = SimConfig { start: StartMode::FixedDelay(SimTime::ZERO), ..Default::default() };
        assert!(matches!(run(&cfg, &g, &w), Err(SimError::InvariantViolation(_))));
        let cfg = SimConfig { start: StartMode::FixedDelay(SimTime::from_micros(10)), ..Default::default() };
        let m = run(&cfg, &g, &w).unwrap();
        assert_eq!(m.delivered_flits, 3);
    }
}
