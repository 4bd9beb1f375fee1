//! Source, routing-node and destination state machines.
//!
//! Connection-oriented mode: the source reserves a data wavelength on its
//! first hop and sends a `Request` on a control wavelength. Each routing node
//! converts control traffic to the electrical domain, queues it, and on
//! processing a request reserves a data wavelength on the next hop and binds
//! it to the announced incoming one. The node whose next hop reaches the
//! destination answers with a `Reply`, which walks back to the source; the
//! source then streams its flits optically. The destination acknowledges
//! the final flit, and the `Ack` releases every reservation on its way back.
//! A node that cannot find a wavelength sends a `Teardown` upstream instead.
//!
//! Datagram mode: every message rides control wavelengths and is
//! store-and-forward routed at each node.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec::Vec;
use core::fmt;

use crate::rwa::{LinkState, RoutingTable, RwaError, WavelengthId};
use crate::topology::{LinkId, NetworkGraph, NodeId};

pub use crate::rwa::ConnectionId as RequestId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    Request,
    Reply,
    DataFlit,
    Ack,
    Teardown,
    Datagram,
}

impl MessageKind {
    /// Everything except data flits travels on control wavelengths.
    pub fn rides_control(self) -> bool {
        self != MessageKind::DataFlit
    }

    /// Kinds that travel from the destination side back toward the source.
    pub fn upstream(self) -> bool {
        matches!(self, MessageKind::Reply | MessageKind::Ack | MessageKind::Teardown)
    }
}

/// Position of a flit within its request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FlitTag {
    pub index: u32,
    pub count: u32,
}

/// `src`/`dst` always name the endpoints of the originating request, whatever
/// direction the message itself travels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Message {
    pub kind: MessageKind,
    pub request: RequestId,
    pub src: NodeId,
    pub dst: NodeId,
    pub flit: Option<FlitTag>,
    pub carrying: WavelengthId,
    /// Data wavelength on the upstream hop (Request and Reply only).
    pub announced: Option<WavelengthId>,
}

impl Message {
    pub fn control(kind: MessageKind, request: RequestId, src: NodeId, dst: NodeId) -> Self {
        Message { kind, request, src, dst, flit: None, carrying: WavelengthId(0), announced: None }
    }

    fn with_announced(mut self, w: WavelengthId) -> Self {
        self.announced = Some(w);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    NoControlWavelength(LinkId),
    NoWavelength(LinkId),
    UnknownRequest(RequestId),
    UnexpectedReply(RequestId),
    UnexpectedAck(RequestId),
    UnknownConnection { request: RequestId, link: LinkId },
    DuplicateFlit { request: RequestId, index: u32 },
    /// A message arrived on a wavelength the link does not have.
    WavelengthOutOfRange { link: LinkId, wavelength: WavelengthId },
    /// Control traffic on a data wavelength or a data flit on a control one.
    PlaneMismatch { kind: MessageKind, link: LinkId, wavelength: WavelengthId },
    MissingReverse(LinkId),
    Rwa(RwaError),
}

impl fmt::Display for ProtocolError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtocolError::NoControlWavelength(l) => write!(f, "link {} has no control wavelength", l.0),
            ProtocolError::NoWavelength(l) => write!(f, "link {} has no free data wavelength", l.0),
            ProtocolError::UnknownRequest(r) => write!(f, "unknown request {}", r.0),
            ProtocolError::UnexpectedReply(r) => write!(f, "unexpected reply for request {}", r.0),
            ProtocolError::UnexpectedAck(r) => write!(f, "unexpected ack for request {}", r.0),
            ProtocolError::UnknownConnection { request, link } => {
                write!(f, "data for request {} on link {} matches no connection", request.0, link.0)
            }
            ProtocolError::DuplicateFlit { request, index } => {
                write!(f, "flit {index} of request {} delivered twice", request.0)
            }
            ProtocolError::WavelengthOutOfRange { link, wavelength } => {
                write!(f, "wavelength {} does not exist on link {}", wavelength.0, link.0)
            }
            ProtocolError::PlaneMismatch { kind, link, wavelength } => {
                write!(f, "{kind:?} on wavelength {} of link {} is in the wrong plane", wavelength.0, link.0)
            }
            ProtocolError::MissingReverse(l) => write!(f, "link {} has no reverse link", l.0),
            ProtocolError::Rwa(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for ProtocolError {}

impl From<RwaError> for ProtocolError {
    fn from(e: RwaError) -> Self {
        ProtocolError::Rwa(e)
    }
}

/// Something a state machine wants put on a link. Control messages get their
/// carrying wavelength chosen by the transmitter at send time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outbound {
    pub link: LinkId,
    pub msg: Message,
}

// ---------------------------------------------------------------------------
// Source
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourcePhase {
    Queued,
    WaitingReply,
    WaitingAck,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingRequest {
    pub id: RequestId,
    pub dst: NodeId,
    pub flits: u32,
    pub phase: SourcePhase,
    pub first_hop: Option<(LinkId, WavelengthId)>,
}

/// Injection buffer of one node. A request stays here until its final `Ack`
/// or a discard notice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceState {
    node: NodeId,
    buffer: BTreeMap<RequestId, PendingRequest>,
    queued: VecDeque<RequestId>,
}

impl SourceState {
    pub fn new(node: NodeId) -> Self {
        SourceState { node, buffer: BTreeMap::new(), queued: VecDeque::new() }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn enqueue(&mut self, id: RequestId, dst: NodeId, flits: u32) {
        self.buffer.insert(
            id,
            PendingRequest { id, dst, flits, phase: SourcePhase::Queued, first_hop: None },
        );
        self.queued.push_back(id);
    }

    /// Oldest request not started yet.
    pub fn next_queued(&self) -> Option<&PendingRequest> {
        self.queued.front().and_then(|id| self.buffer.get(id))
    }

    /// Requests started but not finished.
    pub fn outstanding(&self) -> usize {
        self.buffer.len() - self.queued.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn get(&self, id: RequestId) -> Option<&PendingRequest> {
        self.buffer.get(&id)
    }

    /// Drops a queued request that can never be routed.
    pub fn discard_queued(&mut self, id: RequestId) -> Result<PendingRequest, ProtocolError> {
        let pos = self.queued.iter().position(|&q| q == id).ok_or(ProtocolError::UnknownRequest(id))?;
        self.queued.remove(pos);
        Ok(self.buffer.remove(&id).expect("queued ids are buffered"))
    }

    /// Reserves a first-hop data wavelength and emits the `Request` on the
    /// lowest-index control wavelength of that link.
    pub fn source_start(&mut self, id: RequestId, first_hop: &mut LinkState) -> Result<Message, ProtocolError> {
        let link = first_hop.link().id;
        let pending = self.buffer.get(&id).ok_or(ProtocolError::UnknownRequest(id))?;
        if pending.phase != SourcePhase::Queued {
            return Err(ProtocolError::UnknownRequest(id));
        }
        let control = first_hop.control_set().next().ok_or(ProtocolError::NoControlWavelength(link))?;
        let data = first_hop.assign_data_wavelength().map_err(|_| ProtocolError::NoWavelength(link))?;
        first_hop.reserve(data, id)?;

        let dst = pending.dst;
        let pending = self.buffer.get_mut(&id).expect("checked above");
        pending.phase = SourcePhase::WaitingReply;
        pending.first_hop = Some((link, data));
        self.queued.retain(|&q| q != id);

        let mut msg = Message::control(MessageKind::Request, id, self.node, dst).with_announced(data);
        msg.carrying = control;
        Ok(msg)
    }

    /// Emits every flit of the request on the announced wavelength.
    pub fn source_on_reply(&mut self, reply: &Message) -> Result<Vec<Message>, ProtocolError> {
        let pending = match self.buffer.get_mut(&reply.request) {
            Some(p) if p.phase == SourcePhase::WaitingReply => p,
            _ => return Err(ProtocolError::UnexpectedReply(reply.request)),
        };
        let (_, first) = pending.first_hop.expect("started requests have a first hop");
        let wavelength = reply.announced.unwrap_or(first);
        pending.phase = SourcePhase::WaitingAck;
        Ok(flits_for(reply.request, self.node, pending.dst, pending.flits, wavelength))
    }

    /// Fixed-delay start: stream the flits without waiting for the reply.
    pub fn source_send_unconfirmed(&mut self, id: RequestId) -> Result<Vec<Message>, ProtocolError> {
        let pending = match self.buffer.get_mut(&id) {
            Some(p) if p.phase == SourcePhase::WaitingReply => p,
            _ => return Err(ProtocolError::UnknownRequest(id)),
        };
        let (_, wavelength) = pending.first_hop.expect("started requests have a first hop");
        pending.phase = SourcePhase::WaitingAck;
        Ok(flits_for(id, self.node, pending.dst, pending.flits, wavelength))
    }

    /// Final acknowledgement: release the first hop and drop the request.
    pub fn source_on_ack(&mut self, ack: &Message, first_hop: &mut LinkState) -> Result<PendingRequest, ProtocolError> {
        match self.buffer.get(&ack.request) {
            Some(p) if p.phase == SourcePhase::WaitingAck => {}
            _ => return Err(ProtocolError::UnexpectedAck(ack.request)),
        }
        let pending = self.buffer.remove(&ack.request).expect("checked above");
        first_hop.release(ack.request);
        Ok(pending)
    }

    /// Discard notice from downstream: release the first hop and drop the request.
    pub fn source_on_teardown(&mut self, td: &Message, first_hop: &mut LinkState) -> Result<PendingRequest, ProtocolError> {
        match self.buffer.get(&td.request) {
            Some(p) if p.phase == SourcePhase::WaitingReply => {}
            _ => return Err(ProtocolError::UnknownRequest(td.request)),
        }
        let pending = self.buffer.remove(&td.request).expect("checked above");
        first_hop.release(td.request);
        Ok(pending)
    }
}

fn flits_for(request: RequestId, src: NodeId, dst: NodeId, count: u32, wavelength: WavelengthId) -> Vec<Message> {
    (0..count)
        .map(|index| Message {
            kind: MessageKind::DataFlit,
            request,
            src,
            dst,
            flit: Some(FlitTag { index, count }),
            carrying: wavelength,
            announced: None,
        })
        .collect()
}

/// Datagram mode: every flit becomes a self-routed datagram and leaves the
/// injection buffer immediately.
pub fn datagram_send(request: RequestId, src: NodeId, dst: NodeId, count: u32) -> Vec<Message> {
    (0..count)
        .map(|index| Message {
            kind: MessageKind::Datagram,
            request,
            src,
            dst,
            flit: Some(FlitTag { index, count }),
            carrying: WavelengthId(0),
            announced: None,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Routing node
// ---------------------------------------------------------------------------

/// Binding recorded when a request is processed. `out` is `None` at the
/// destination, where only the receiver is bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableEntry {
    pub in_link: LinkId,
    pub in_wavelength: WavelengthId,
    pub out: Option<(LinkId, WavelengthId)>,
}

/// What happened to an arriving message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reception {
    /// Converted and put on the request queue.
    Queued,
    /// Converted and handed to the local host (its own reply, ack, discard
    /// notice or datagram).
    ToHost(Message),
    /// Passed through optically.
    Forward { link: LinkId, wavelength: WavelengthId, converted: bool },
    /// Data flit reached its destination's delivery buffer.
    Deliver(Message),
}

/// Side effects of processing one queued control message.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Processed {
    pub send: Vec<Outbound>,
    pub released: Vec<LinkId>,
    /// Set when this node gave up on a request.
    pub discarded: Option<RequestId>,
    /// Set when a datagram could not be routed.
    pub dropped: Option<Message>,
}

/// Everything a routing node reads or mutates beyond its own state.
pub struct NodeContext<'a> {
    pub graph: &'a NetworkGraph,
    pub routes: &'a RoutingTable,
    /// Indexed by link id.
    pub links: &'a mut [LinkState],
    /// Requests whose final flit already reached this node.
    pub completed_here: &'a BTreeSet<RequestId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingNodeState {
    node: NodeId,
    request_queue: VecDeque<(Message, LinkId)>,
    table: BTreeMap<RequestId, TableEntry>,
    oe_conversions: u64,
    wavelength_conversions: u64,
}

impl RoutingNodeState {
    pub fn new(node: NodeId) -> Self {
        RoutingNodeState {
            node,
            request_queue: VecDeque::new(),
            table: BTreeMap::new(),
            oe_conversions: 0,
            wavelength_conversions: 0,
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn queue_len(&self) -> usize {
        self.request_queue.len()
    }

    pub fn dequeue(&mut self) -> Option<(Message, LinkId)> {
        self.request_queue.pop_front()
    }

    pub fn entry(&self, request: RequestId) -> Option<&TableEntry> {
        self.table.get(&request)
    }

    pub fn table_len(&self) -> usize {
        self.table.len()
    }

    pub fn oe_conversions(&self) -> u64 {
        self.oe_conversions
    }

    pub fn wavelength_conversions(&self) -> u64 {
        self.wavelength_conversions
    }

    /// Drops the receiver binding once the destination has acknowledged.
    pub fn unbind(&mut self, request: RequestId) {
        if self.table.get(&request).is_some_and(|e| e.out.is_none()) {
            self.table.remove(&request);
        }
    }

    /// Control-wavelength traffic is converted and queued (or handed to the
    /// local host when it terminates here); anything else passes through on
    /// the connection table's outgoing wavelength.
    pub fn node_on_receive(&mut self, msg: Message, arrival: &LinkState) -> Result<Reception, ProtocolError> {
        let link = arrival.link().id;
        if msg.carrying.index() >= arrival.wavelengths() {
            return Err(ProtocolError::WavelengthOutOfRange { link, wavelength: msg.carrying });
        }
        let on_control = arrival.is_control(msg.carrying);
        if on_control != msg.kind.rides_control() {
            return Err(ProtocolError::PlaneMismatch { kind: msg.kind, link, wavelength: msg.carrying });
        }
        if on_control {
            self.oe_conversions += 1;
            let for_host = match msg.kind {
                MessageKind::Reply | MessageKind::Ack | MessageKind::Teardown => msg.src == self.node,
                MessageKind::Datagram => msg.dst == self.node,
                _ => false,
            };
            if for_host {
                return Ok(Reception::ToHost(msg));
            }
            self.request_queue.push_back((msg, link));
            return Ok(Reception::Queued);
        }
        if msg.dst == self.node {
            return Ok(Reception::Deliver(msg));
        }
        let unknown = ProtocolError::UnknownConnection { request: msg.request, link };
        let entry = self.table.get(&msg.request).ok_or(unknown.clone())?;
        if entry.in_link != link || entry.in_wavelength != msg.carrying {
            return Err(unknown);
        }
        let (out_link, out_w) = entry.out.ok_or(unknown)?;
        let converted = out_w != msg.carrying;
        if converted {
            self.wavelength_conversions += 1;
        }
        Ok(Reception::Forward { link: out_link, wavelength: out_w, converted })
    }

    /// Handles one message taken off the request queue.
    pub fn node_process_request(
        &mut self,
        msg: Message,
        arrival: LinkId,
        ctx: &mut NodeContext<'_>,
    ) -> Result<Processed, ProtocolError> {
        let upstream = |l: LinkId| ctx.graph.reverse(l).ok_or(ProtocolError::MissingReverse(l));
        let mut out = Processed::default();
        match msg.kind {
            MessageKind::Request => {
                let in_w = msg.announced.ok_or(ProtocolError::UnknownRequest(msg.request))?;
                let back = upstream(arrival)?;
                if msg.dst == self.node {
                    // Readjust the receiver; answer directly when the request
                    // crossed no intermediate router.
                    if !ctx.completed_here.contains(&msg.request) {
                        self.table.insert(
                            msg.request,
                            TableEntry { in_link: arrival, in_wavelength: in_w, out: None },
                        );
                    }
                    if ctx.graph.link(arrival).from == msg.src {
                        out.send.push(Outbound { link: back, msg: reply(&msg, in_w) });
                    }
                    return Ok(out);
                }
                let assigned = ctx
                    .routes
                    .next_hop(self.node, msg.dst)
                    .and_then(|l| ctx.links[l.index()].assign_data_wavelength().ok().map(|w| (l, w)));
                let Some((next, w)) = assigned else {
                    let td = Message::control(MessageKind::Teardown, msg.request, msg.src, msg.dst);
                    out.send.push(Outbound { link: back, msg: td });
                    out.discarded = Some(msg.request);
                    return Ok(out);
                };
                ctx.links[next.index()].reserve(w, msg.request)?;
                self.table.insert(
                    msg.request,
                    TableEntry { in_link: arrival, in_wavelength: in_w, out: Some((next, w)) },
                );
                let mut fwd = msg.with_announced(w);
                fwd.carrying = WavelengthId(0);
                out.send.push(Outbound { link: next, msg: fwd });
                if ctx.graph.link(next).to == msg.dst {
                    out.send.push(Outbound { link: back, msg: reply(&msg, in_w) });
                }
            }
            MessageKind::Reply => {
                let entry = self
                    .table
                    .get(&msg.request)
                    .ok_or(ProtocolError::UnexpectedReply(msg.request))?;
                out.send.push(Outbound {
                    link: upstream(entry.in_link)?,
                    msg: reply(&msg, entry.in_wavelength),
                });
            }
            MessageKind::Ack | MessageKind::Teardown => {
                let entry = self
                    .table
                    .remove(&msg.request)
                    .ok_or(ProtocolError::UnknownConnection { request: msg.request, link: arrival })?;
                if let Some((l, _)) = entry.out {
                    ctx.links[l.index()].release(msg.request);
                    out.released.push(l);
                }
                let mut up = msg;
                up.carrying = WavelengthId(0);
                out.send.push(Outbound { link: upstream(entry.in_link)?, msg: up });
            }
            MessageKind::Datagram => match ctx.routes.next_hop(self.node, msg.dst) {
                Some(l) => out.send.push(Outbound { link: l, msg }),
                None => out.dropped = Some(msg),
            },
            MessageKind::DataFlit => {
                return Err(ProtocolError::PlaneMismatch { kind: msg.kind, link: arrival, wavelength: msg.carrying })
            }
        }
        Ok(out)
    }
}

fn reply(req: &Message, announced: WavelengthId) -> Message {
    Message::control(MessageKind::Reply, req.request, req.src, req.dst).with_announced(announced)
}

// ---------------------------------------------------------------------------
// Destination
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DestinationState {
    node: NodeId,
    delivery_buffer: BTreeMap<RequestId, BTreeSet<u32>>,
    completed: BTreeSet<RequestId>,
}

impl DestinationState {
    pub fn new(node: NodeId) -> Self {
        DestinationState { node, delivery_buffer: BTreeMap::new(), completed: BTreeSet::new() }
    }

    pub fn completed(&self) -> &BTreeSet<RequestId> {
        &self.completed
    }

    pub fn delivered(&self, request: RequestId) -> usize {
        self.delivery_buffer.get(&request).map_or(0, BTreeSet::len)
    }

    fn store(&mut self, msg: &Message) -> Result<bool, ProtocolError> {
        let tag = msg.flit.ok_or(ProtocolError::UnknownRequest(msg.request))?;
        let got = self.delivery_buffer.entry(msg.request).or_default();
        if !got.insert(tag.index) {
            return Err(ProtocolError::DuplicateFlit { request: msg.request, index: tag.index });
        }
        let done = got.len() as u32 == tag.count;
        if done {
            self.completed.insert(msg.request);
        }
        Ok(done)
    }

    /// Stores a data flit; the final one triggers an `Ack` sent back on the
    /// reverse of the link it came in on.
    pub fn destination_on_flit(
        &mut self,
        flit: &Message,
        arrival: LinkId,
        graph: &NetworkGraph,
    ) -> Result<Option<Outbound>, ProtocolError> {
        if !self.store(flit)? {
            return Ok(None);
        }
        let back = graph.reverse(arrival).ok_or(ProtocolError::MissingReverse(arrival))?;
        let ack = Message::control(MessageKind::Ack, flit.request, flit.src, self.node);
        Ok(Some(Outbound { link: back, msg: ack }))
    }

    /// Stores a datagram; returns true when its request is complete.
    pub fn destination_on_datagram(&mut self, msg: &Message) -> Result<bool, ProtocolError> {
        self.store(msg)
    }
}

// ---------------------------------------------------------------------------
// Control-set resizing
// ---------------------------------------------------------------------------

/// Hysteresis thresholds on a node's request-queue length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControlPolicy {
    pub grow_above: usize,
    pub shrink_below: usize,
}

impl Default for ControlPolicy {
    fn default() -> Self {
        ControlPolicy { grow_above: 4, shrink_below: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlChange {
    Grew(WavelengthId),
    Shrank(WavelengthId),
    Unchanged,
}

/// Grows the control set by the lowest free data wavelength when the queue
/// is long, or shrinks it by its highest member when the queue is short.
/// `idle` says whether a wavelength currently carries nothing in flight.
pub fn adjust_control_set(
    link: &mut LinkState,
    queue_len: usize,
    policy: ControlPolicy,
    idle: impl Fn(WavelengthId) -> bool,
) -> ControlChange {
    if queue_len > policy.grow_above {
        let candidate = (0..link.wavelengths())
            .map(|i| WavelengthId(i as u16))
            .find(|&w| link.occupant(w) == Some(crate::rwa::Occupant::Free) && idle(w));
        if let Some(w) = candidate {
            if link.promote_to_control(w) {
                return ControlChange::Grew(w);
            }
        }
    } else if queue_len < policy.shrink_below {
        if let Some(w) = link.control_set().last() {
            if idle(w) && link.demote_control(w) {
                return ControlChange::Shrank(w);
            }
        }
    }
    ControlChange::Unchanged
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rwa::Occupant;
    use crate::topology::single_switch;
    use alloc::vec;

    fn w(i: u16) -> WavelengthId {
        WavelengthId(i)
    }

    struct Net {
        graph: NetworkGraph,
        routes: RoutingTable,
        links: Vec<LinkState>,
    }

    fn net(graph: NetworkGraph, wavelengths: usize, control: usize) -> Net {
        let routes = RoutingTable::new(&graph);
        let links = graph.links().iter().map(|l| LinkState::new(*l, wavelengths, control).unwrap()).collect();
        Net { graph, routes, links }
    }

    fn ids(g: &NetworkGraph, from: &str, to: &str) -> LinkId {
        let (u, v) = (g.node_by_label(from).unwrap(), g.node_by_label(to).unwrap());
        g.links().iter().find(|l| l.from == u && l.to == v).unwrap().id
    }

    #[test]
    fn start_uses_lowest_control_wavelength() {
        let n = net(single_switch(), 4, 1);
        let mut src = SourceState::new(NodeId(0));
        src.enqueue(RequestId(1), NodeId(2), 100);
        let mut first = n.links[0].clone();
        let req = src.source_start(RequestId(1), &mut first).unwrap();
        assert_eq!(req.kind, MessageKind::Request);
        assert_eq!(req.carrying, w(0));
        assert_eq!(req.announced, Some(w(1)));
        assert_eq!(src.get(RequestId(1)).unwrap().phase, SourcePhase::WaitingReply);
        assert_eq!(first.occupant(w(1)), Some(Occupant::Data(RequestId(1))));

        let mut two = LinkState::new(n.graph.link(LinkId(0)), 4, 2).unwrap();
        src.enqueue(RequestId(2), NodeId(2), 1);
        assert_eq!(src.source_start(RequestId(2), &mut two).unwrap().carrying, w(0));
    }

    #[test]
    fn start_without_control_set() {
        let g = single_switch();
        let mut bare = LinkState::with_control_set(g.link(LinkId(0)), 4, &[]).unwrap();
        let mut src = SourceState::new(NodeId(0));
        src.enqueue(RequestId(1), NodeId(2), 1);
        assert_eq!(
            src.source_start(RequestId(1), &mut bare),
            Err(ProtocolError::NoControlWavelength(LinkId(0)))
        );
        assert_eq!(src.get(RequestId(1)).unwrap().phase, SourcePhase::Queued);
    }

    #[test]
    fn receive_control_queues_and_counts() {
        let n = net(single_switch(), 4, 1);
        let mut x = RoutingNodeState::new(NodeId(1));
        let mut req = Message::control(MessageKind::Request, RequestId(1), NodeId(0), NodeId(2));
        req.announced = Some(w(1));
        assert_eq!(x.node_on_receive(req, &n.links[0]).unwrap(), Reception::Queued);
        assert_eq!(x.queue_len(), 1);
        assert_eq!(x.oe_conversions(), 1);
    }

    #[test]
    fn receive_flit_forwards_with_conversion() {
        let n = net(single_switch(), 4, 1);
        let sx = ids(&n.graph, "S", "X");
        let xd = ids(&n.graph, "X", "D");
        let mut x = RoutingNodeState::new(NodeId(1));
        x.table.insert(
            RequestId(4),
            TableEntry { in_link: sx, in_wavelength: w(2), out: Some((xd, w(1))) },
        );
        let flit = flits_for(RequestId(4), NodeId(0), NodeId(2), 1, w(2))[0];
        let got = x.node_on_receive(flit, &n.links[sx.index()]).unwrap();
        assert_eq!(got, Reception::Forward { link: xd, wavelength: w(1), converted: true });
        assert_eq!(x.wavelength_conversions(), 1);
        assert_eq!(x.oe_conversions(), 0);
    }

    #[test]
    fn receive_flit_without_entry() {
        let n = net(single_switch(), 4, 1);
        let mut x = RoutingNodeState::new(NodeId(1));
        let flit = flits_for(RequestId(4), NodeId(0), NodeId(2), 1, w(2))[0];
        assert_eq!(
            x.node_on_receive(flit, &n.links[0]),
            Err(ProtocolError::UnknownConnection { request: RequestId(4), link: LinkId(0) })
        );
    }

    #[test]
    fn plane_mismatch_is_rejected() {
        let n = net(single_switch(), 4, 1);
        let mut x = RoutingNodeState::new(NodeId(1));
        let flit = flits_for(RequestId(4), NodeId(0), NodeId(2), 1, w(0))[0];
        assert!(matches!(x.node_on_receive(flit, &n.links[0]), Err(ProtocolError::PlaneMismatch { .. })));
        let mut req = Message::control(MessageKind::Request, RequestId(1), NodeId(0), NodeId(2));
        req.carrying = w(3);
        assert!(matches!(x.node_on_receive(req, &n.links[0]), Err(ProtocolError::PlaneMismatch { .. })));
        req.carrying = w(7);
        assert!(matches!(x.node_on_receive(req, &n.links[0]), Err(ProtocolError::WavelengthOutOfRange { .. })));
    }

    fn process(x: &mut RoutingNodeState, n: &mut Net, msg: Message, arrival: LinkId) -> Processed {
        let done = BTreeSet::new();
        let mut ctx = NodeContext { graph: &n.graph, routes: &n.routes, links: &mut n.links, completed_here: &done };
        x.node_process_request(msg, arrival, &mut ctx).unwrap()
    }

    #[test]
    fn switch_assigns_and_replies() {
        let mut n = net(single_switch(), 4, 1);
        let (sx, xs, xd) = (ids(&n.graph, "S", "X"), ids(&n.graph, "X", "S"), ids(&n.graph, "X", "D"));
        let mut x = RoutingNodeState::new(NodeId(1));
        let mut req = Message::control(MessageKind::Request, RequestId(1), NodeId(0), NodeId(2));
        req.announced = Some(w(1));
        let out = process(&mut x, &mut n, req, sx);
        assert_eq!(n.links[xd.index()].occupant(w(1)), Some(Occupant::Data(RequestId(1))));
        assert_eq!(out.send.len(), 2);
        assert_eq!((out.send[0].link, out.send[0].msg.kind, out.send[0].msg.announced), (xd, MessageKind::Request, Some(w(1))));
        assert_eq!((out.send[1].link, out.send[1].msg.kind, out.send[1].msg.announced), (xs, MessageKind::Reply, Some(w(1))));
        assert_eq!(
            x.entry(RequestId(1)),
            Some(&TableEntry { in_link: sx, in_wavelength: w(1), out: Some((xd, w(1))) })
        );
    }

    #[test]
    fn switch_discards_when_outgoing_full() {
        let mut n = net(single_switch(), 4, 1);
        let (sx, xs, xd) = (ids(&n.graph, "S", "X"), ids(&n.graph, "X", "S"), ids(&n.graph, "X", "D"));
        for i in 1..4 {
            n.links[xd.index()].reserve(w(i), RequestId(100 + i as u32)).unwrap();
        }
        let before = n.links.clone();
        let mut x = RoutingNodeState::new(NodeId(1));
        let mut req = Message::control(MessageKind::Request, RequestId(1), NodeId(0), NodeId(2));
        req.announced = Some(w(1));
        let out = process(&mut x, &mut n, req, sx);
        assert_eq!(out.discarded, Some(RequestId(1)));
        assert_eq!(out.send.len(), 1);
        assert_eq!((out.send[0].link, out.send[0].msg.kind), (xs, MessageKind::Teardown));
        assert_eq!(n.links, before);
        assert_eq!(x.table_len(), 0);
    }

    #[test]
    fn reply_for_unknown_request() {
        let mut src = SourceState::new(NodeId(0));
        let r = Message::control(MessageKind::Reply, RequestId(9), NodeId(0), NodeId(2));
        assert_eq!(src.source_on_reply(&r), Err(ProtocolError::UnexpectedReply(RequestId(9))));
    }

    #[test]
    fn reply_releases_all_flits() {
        let n = net(single_switch(), 4, 1);
        for count in [100u32, 1] {
            let mut src = SourceState::new(NodeId(0));
            src.enqueue(RequestId(1), NodeId(2), count);
            let mut first = n.links[0].clone();
            src.source_start(RequestId(1), &mut first).unwrap();
            let mut r = Message::control(MessageKind::Reply, RequestId(1), NodeId(0), NodeId(2));
            r.announced = Some(w(1));
            let flits = src.source_on_reply(&r).unwrap();
            assert_eq!(flits.len(), count as usize);
            assert!(flits.iter().all(|f| f.kind == MessageKind::DataFlit && f.carrying == w(1)));
            assert_eq!(src.get(RequestId(1)).unwrap().phase, SourcePhase::WaitingAck);
        }
    }

    #[test]
    fn destination_acks_final_flit_only() {
        let g = single_switch();
        let xd = ids(&g, "X", "D");
        let mut d = DestinationState::new(NodeId(2));
        let flits = flits_for(RequestId(1), NodeId(0), NodeId(2), 2, w(1));
        assert_eq!(d.destination_on_flit(&flits[0], xd, &g).unwrap(), None);
        assert_eq!(
            d.destination_on_flit(&flits[0], xd, &g),
            Err(ProtocolError::DuplicateFlit { request: RequestId(1), index: 0 })
        );
        let ack = d.destination_on_flit(&flits[1], xd, &g).unwrap().unwrap();
        assert_eq!(ack.msg.kind, MessageKind::Ack);
        assert_eq!(ack.link, ids(&g, "D", "X"));
        assert!(d.completed().contains(&RequestId(1)));
    }

    #[test]
    fn full_exchange_leaves_no_reservations() {
        let mut n = net(single_switch(), 4, 1);
        let (sx, xd, dx) = (ids(&n.graph, "S", "X"), ids(&n.graph, "X", "D"), ids(&n.graph, "D", "X"));
        let pristine = n.links.clone();
        let mut src = SourceState::new(NodeId(0));
        let mut x = RoutingNodeState::new(NodeId(1));
        src.enqueue(RequestId(1), NodeId(2), 3);
        let req = src.source_start(RequestId(1), &mut n.links[sx.index()]).unwrap();
        let out = process(&mut x, &mut n, req, sx);
        let reply = out.send[1].msg;
        src.source_on_reply(&reply).unwrap();
        let ack = Message::control(MessageKind::Ack, RequestId(1), NodeId(0), NodeId(2));
        let out = process(&mut x, &mut n, ack, dx);
        assert_eq!(out.released, vec![xd]);
        src.source_on_ack(&ack, &mut n.links[sx.index()]).unwrap();
        assert_eq!(n.links, pristine);
        assert!(src.is_empty());
        assert_eq!(
            src.source_on_ack(&ack, &mut n.links[sx.index()]),
            Err(ProtocolError::UnexpectedAck(RequestId(1)))
        );
    }

    #[test]
    fn unknown_ack_rejected() {
        let n = net(single_switch(), 4, 1);
        let mut src = SourceState::new(NodeId(0));
        let ack = Message::control(MessageKind::Ack, RequestId(5), NodeId(0), NodeId(2));
        let mut first = n.links[0].clone();
        assert_eq!(src.source_on_ack(&ack, &mut first), Err(ProtocolError::UnexpectedAck(RequestId(5))));
    }

    #[test]
    fn datagram_routing() {
        let mut n = net(single_switch(), 4, 1);
        let (sx, xd) = (ids(&n.graph, "S", "X"), ids(&n.graph, "X", "D"));
        let mut x = RoutingNodeState::new(NodeId(1));
        let dg = datagram_send(RequestId(1), NodeId(0), NodeId(2), 1)[0];
        assert_eq!(x.node_on_receive(dg, &n.links[sx.index()]).unwrap(), Reception::Queued);
        let (m, l) = x.dequeue().unwrap();
        let out = process(&mut x, &mut n, m, l);
        assert_eq!(out.send[0].link, xd);

        let mut d = RoutingNodeState::new(NodeId(2));
        assert!(matches!(d.node_on_receive(dg, &n.links[xd.index()]).unwrap(), Reception::ToHost(_)));
    }

    #[test]
    fn datagram_to_unreachable_is_dropped() {
        let g = crate::topology::build_graph(&crate::topology::TopologySpec::new(
            ["A", "B", "C"],
            [("A", "B")],
        ))
        .unwrap();
        let mut n = net(g, 4, 1);
        let mut b = RoutingNodeState::new(NodeId(1));
        let dg = datagram_send(RequestId(1), NodeId(0), NodeId(2), 1)[0];
        let out = process(&mut b, &mut n, dg, LinkId(0));
        assert_eq!(out.dropped, Some(dg));
    }

    #[test]
    fn control_growth_trace() {
        let g = single_switch();
        let mut s = LinkState::new(g.link(LinkId(0)), 4, 1).unwrap();
        s.reserve(w(1), RequestId(1)).unwrap();
        s.reserve(w(2), RequestId(2)).unwrap();
        let p = ControlPolicy::default();
        assert_eq!(adjust_control_set(&mut s, 10, p, |_| true), ControlChange::Grew(w(3)));
        assert_eq!(s.control_set().collect::<Vec<_>>(), vec![w(0), w(3)]);
        assert_eq!(adjust_control_set(&mut s, 3, p, |_| true), ControlChange::Unchanged);
        assert_eq!(adjust_control_set(&mut s, 0, p, |w| w.0 != 3), ControlChange::Unchanged);
        assert_eq!(adjust_control_set(&mut s, 0, p, |_| true), ControlChange::Shrank(w(3)));
        assert_eq!(adjust_control_set(&mut s, 0, p, |_| true), ControlChange::Unchanged, "floor");
    }

    #[test]
    fn control_growth_blocked_when_data_busy() {
        let g = single_switch();
        let mut s = LinkState::new(g.link(LinkId(0)), 4, 1).unwrap();
        for i in 1..4 {
            s.reserve(w(i), RequestId(i as u32)).unwrap();
        }
        assert_eq!(adjust_control_set(&mut s, 10, ControlPolicy::default(), |_| true), ControlChange::Unchanged);
        assert_eq!(s.control_count(), 1);
    }
}
