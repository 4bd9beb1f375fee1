//! Routing and wavelength assignment.
//!
//! Every node has full wavelength conversion, so a lightpath only needs *some*
//! free data wavelength on each hop; hops are assigned independently.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::topology::{DirectedLink, LinkId, NetworkGraph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WavelengthId(pub u16);

impl WavelengthId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Identifies a connection; connections are keyed by the request that opened them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConnectionId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Occupant {
    Free,
    /// Member of the link's control set.
    Control,
    Data(ConnectionId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RwaError {
    NoPath,
    UnknownNode(NodeId),
    NoWavelength,
    Infeasible { hop: usize },
    AlreadyOccupied { link: LinkId, wavelength: WavelengthId },
    ControlWavelengthMisuse { link: LinkId, wavelength: WavelengthId },
    OutOfRange { link: LinkId, wavelength: WavelengthId },
    MissingLinkState(LinkId),
    BadControlCount { wavelengths: usize, control: usize },
    BadPath,
}

impl fmt::Display for RwaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RwaError::NoPath => f.write_str("destination unreachable"),
            RwaError::UnknownNode(n) => write!(f, "unknown node id {}", n.0),
            RwaError::NoWavelength => f.write_str("no free data wavelength"),
            RwaError::Infeasible { hop } => write!(f, "hop {hop} has no free data wavelength"),
            RwaError::AlreadyOccupied { link, wavelength } => {
                write!(f, "wavelength {} on link {} already occupied", wavelength.0, link.0)
            }
            RwaError::ControlWavelengthMisuse { link, wavelength } => {
                write!(f, "wavelength {} on link {} is a control wavelength", wavelength.0, link.0)
            }
            RwaError::OutOfRange { link, wavelength } => {
                write!(f, "wavelength {} out of range on link {}", wavelength.0, link.0)
            }
            RwaError::MissingLinkState(l) => write!(f, "no state for link {}", l.0),
            RwaError::BadControlCount { wavelengths, control } => {
                write!(f, "{control} control wavelengths do not fit in {wavelengths}")
            }
            RwaError::BadPath => f.write_str("hops do not form a simple path"),
        }
    }
}

impl core::error::Error for RwaError {}

/// Wavelength occupancy of one directed link. Control membership is stored
/// in the occupancy table itself, so a data occupant can never sit on a
/// control wavelength.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkState {
    link: DirectedLink,
    occupancy: Vec<Occupant>,
}

impl LinkState {
    /// `W = wavelengths`; the control set starts as the lowest `control` indices.
    pub fn new(link: DirectedLink, wavelengths: usize, control: usize) -> Result<Self, RwaError> {
        if control == 0 || control > wavelengths || wavelengths > u16::MAX as usize {
            return Err(RwaError::BadControlCount { wavelengths, control });
        }
        let occupancy = (0..wavelengths)
            .map(|i| if i < control { Occupant::Control } else { Occupant::Free })
            .collect();
        Ok(LinkState { link, occupancy })
    }

    /// A link with an explicit control set. Unlike [`LinkState::new`] this
    /// accepts an empty set, which models a misconfigured link.
    pub fn with_control_set(
        link: DirectedLink,
        wavelengths: usize,
        control: &[WavelengthId],
    ) -> Result<Self, RwaError> {
        let mut s = LinkState { link, occupancy: vec![Occupant::Free; wavelengths] };
        for &w in control {
            s.check_range(w)?;
            s.occupancy[w.index()] = Occupant::Control;
        }
        Ok(s)
    }

    pub fn link(&self) -> DirectedLink {
        self.link
    }

    pub fn wavelengths(&self) -> usize {
        self.occupancy.len()
    }

    pub fn occupant(&self, w: WavelengthId) -> Option<Occupant> {
        self.occupancy.get(w.index()).copied()
    }

    pub fn is_control(&self, w: WavelengthId) -> bool {
        self.occupant(w) == Some(Occupant::Control)
    }

    /// Control set in ascending index order.
    pub fn control_set(&self) -> impl Iterator<Item = WavelengthId> + '_ {
        self.indexed().filter(|(_, o)| *o == Occupant::Control).map(|(w, _)| w)
    }

    pub fn control_count(&self) -> usize {
        self.control_set().count()
    }

    pub fn free_data_count(&self) -> usize {
        self.occupancy.iter().filter(|o| **o == Occupant::Free).count()
    }

    pub fn data_count(&self) -> usize {
        self.wavelengths() - self.control_count()
    }

    pub fn reserved_count(&self) -> usize {
        self.occupancy.iter().filter(|o| matches!(o, Occupant::Data(_))).count()
    }

    pub fn reserved_by(&self, conn: ConnectionId) -> impl Iterator<Item = WavelengthId> + '_ {
        self.indexed().filter(move |(_, o)| *o == Occupant::Data(conn)).map(|(w, _)| w)
    }

    fn indexed(&self) -> impl Iterator<Item = (WavelengthId, Occupant)> + '_ {
        self.occupancy.iter().enumerate().map(|(i, o)| (WavelengthId(i as u16), *o))
    }

    fn check_range(&self, w: WavelengthId) -> Result<(), RwaError> {
        if w.index() < self.occupancy.len() {
            Ok(())
        } else {
            Err(RwaError::OutOfRange { link: self.link.id, wavelength: w })
        }
    }

    /// First-fit: lowest-index free wavelength outside the control set.
    pub fn assign_data_wavelength(&self) -> Result<WavelengthId, RwaError> {
        self.indexed()
            .find(|(_, o)| *o == Occupant::Free)
            .map(|(w, _)| w)
            .ok_or(RwaError::NoWavelength)
    }

    pub fn reserve(&mut self, w: WavelengthId, conn: ConnectionId) -> Result<(), RwaError> {
        self.check_range(w)?;
        match self.occupancy[w.index()] {
            Occupant::Free => {
                self.occupancy[w.index()] = Occupant::Data(conn);
                Ok(())
            }
            Occupant::Control => {
                Err(RwaError::ControlWavelengthMisuse { link: self.link.id, wavelength: w })
            }
            Occupant::Data(_) => Err(RwaError::AlreadyOccupied { link: self.link.id, wavelength: w }),
        }
    }

    /// Frees every wavelength held by `conn`; returns how many were freed.
    pub fn release(&mut self, conn: ConnectionId) -> usize {
        let mut n = 0;
        for o in &mut self.occupancy {
            if *o == Occupant::Data(conn) {
                *o = Occupant::Free;
                n += 1;
            }
        }
        n
    }

    /// Moves a free data wavelength into the control set. Refuses when it
    /// would leave no data wavelength at all.
    pub fn promote_to_control(&mut self, w: WavelengthId) -> bool {
        if self.occupant(w) != Some(Occupant::Free) || self.data_count() <= 1 {
            return false;
        }
        self.occupancy[w.index()] = Occupant::Control;
        true
    }

    /// Returns a control wavelength to the data pool, keeping at least one.
    pub fn demote_control(&mut self, w: WavelengthId) -> bool {
        if !self.is_control(w) || self.control_count() <= 1 {
            return false;
        }
        self.occupancy[w.index()] = Occupant::Free;
        true
    }
}

/// A simple directed path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Path {
    pub src: NodeId,
    pub dst: NodeId,
    pub hops: Vec<DirectedLink>,
}

impl Path {
    pub fn new(src: NodeId, dst: NodeId, hops: Vec<DirectedLink>) -> Result<Self, RwaError> {
        let first_ok = hops.first().is_some_and(|h| h.from == src);
        let last_ok = hops.last().is_some_and(|h| h.to == dst);
        let chained = hops.windows(2).all(|w| w[0].to == w[1].from);
        let mut ids: Vec<LinkId> = hops.iter().map(|h| h.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if !(first_ok && last_ok && chained && ids.len() == hops.len()) {
            return Err(RwaError::BadPath);
        }
        Ok(Path { src, dst, hops })
    }

    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }
}

/// Breadth-first search from `src`. Returns the predecessor link of each
/// reached node; exploring links in ascending id order makes the recovered
/// minimum-hop paths lexicographically smallest by link id.
fn bfs_tree(graph: &NetworkGraph, src: NodeId) -> Vec<Option<LinkId>> {
    let n = graph.node_count();
    let mut pred = vec![None; n];
    let mut seen = vec![false; n];
    let mut queue = VecDeque::new();
    seen[src.index()] = true;
    queue.push_back(src);
    while let Some(u) = queue.pop_front() {
        for &id in graph.outgoing_ids(u) {
            let v = graph.link(id).to;
            if !seen[v.index()] {
                seen[v.index()] = true;
                pred[v.index()] = Some(id);
                queue.push_back(v);
            }
        }
    }
    pred
}

/// Minimum-hop path; ties go to the smallest next-link id.
pub fn shortest_path(graph: &NetworkGraph, src: NodeId, dst: NodeId) -> Result<Path, RwaError> {
    for n in [src, dst] {
        if !graph.contains(n) {
            return Err(RwaError::UnknownNode(n));
        }
    }
    if src == dst {
        return Err(RwaError::NoPath);
    }
    let pred = bfs_tree(graph, src);
    let mut hops = Vec::new();
    let mut at = dst;
    while at != src {
        let id = pred[at.index()].ok_or(RwaError::NoPath)?;
        let l = graph.link(id);
        hops.push(l);
        at = l.from;
    }
    hops.reverse();
    Path::new(src, dst, hops)
}

/// Next-hop table for hop-by-hop forwarding: `next_hop(u, d)` is the first
/// link of `shortest_path(u, d)`.
#[derive(Debug, Clone)]
pub struct RoutingTable {
    n: usize,
    next: Vec<Option<LinkId>>,
}

impl RoutingTable {
    pub fn new(graph: &NetworkGraph) -> Self {
        let n = graph.node_count();
        let mut next = vec![None; n * n];
        for src in graph.nodes() {
            let pred = bfs_tree(graph, src);
            for dst in graph.nodes() {
                if dst == src || pred[dst.index()].is_none() {
                    continue;
                }
                let mut at = dst;
                let mut first = None;
                while at != src {
                    let id = pred[at.index()].expect("reached nodes have predecessors");
                    first = Some(id);
                    at = graph.link(id).from;
                }
                next[src.index() * n + dst.index()] = first;
            }
        }
        RoutingTable { n, next }
    }

    pub fn next_hop(&self, at: NodeId, dst: NodeId) -> Option<LinkId> {
        if at.index() >= self.n || dst.index() >= self.n {
            return None;
        }
        self.next[at.index() * self.n + dst.index()]
    }
}

/// First-fit assignment on every hop without touching the states.
/// `states` is indexed by link id.
pub fn feasible(path: &Path, states: &[LinkState]) -> Result<Vec<WavelengthId>, RwaError> {
    path.hops
        .iter()
        .enumerate()
        .map(|(hop, l)| {
            let s = states.get(l.id.index()).ok_or(RwaError::MissingLinkState(l.id))?;
            s.assign_data_wavelength().map_err(|_| RwaError::Infeasible { hop })
        })
        .collect()
}

/// Lifecycle of a lightpath.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectionState {
    SettingUp,
    Established,
    TornDown,
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connection {
    pub id: ConnectionId,
    pub path: Path,
    pub assigned: Vec<WavelengthId>,
    pub state: ConnectionState,
}
