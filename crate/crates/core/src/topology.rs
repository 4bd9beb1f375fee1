//! Network graph: routers joined by pairs of opposite directed fiber links.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId(pub u32);

impl LinkId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// One fiber, one direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DirectedLink {
    pub id: LinkId,
    pub from: NodeId,
    pub to: NodeId,
}

/// Ingestion form of a topology: node labels plus undirected edges by label.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TopologySpec {
    pub nodes: Vec<String>,
    pub edges: Vec<(String, String)>,
    /// Optional per-node port bound `M` (max in/out links per node).
    pub port_bound: Option<usize>,
}

impl TopologySpec {
    pub fn new<N, E, S>(nodes: N, edges: E) -> Self
    where
        N: IntoIterator<Item = S>,
        E: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        TopologySpec {
            nodes: nodes.into_iter().map(Into::into).collect(),
            edges: edges.into_iter().map(|(a, b)| (a.into(), b.into())).collect(),
            port_bound: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopologyError {
    UnknownEndpoint(String),
    DuplicateEdge(String, String),
    SelfLoop(String),
    DuplicateNode(String),
    UnknownNode(NodeId),
    PortBoundExceeded { node: String, degree: usize, bound: usize },
}

impl fmt::Display for TopologyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyError::UnknownEndpoint(l) => write!(f, "edge names unknown node `{l}`"),
            TopologyError::DuplicateEdge(a, b) => write!(f, "duplicate edge {a}-{b}"),
            TopologyError::SelfLoop(l) => write!(f, "self-loop on node `{l}`"),
            TopologyError::DuplicateNode(l) => write!(f, "node `{l}` listed twice"),
            TopologyError::UnknownNode(n) => write!(f, "unknown node id {}", n.0),
            TopologyError::PortBoundExceeded { node, degree, bound } => {
                write!(f, "node `{node}` has degree {degree}, above port bound {bound}")
            }
        }
    }
}

impl core::error::Error for TopologyError {}

/// A broken [`NetworkGraph`] invariant, naming the offending element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    SelfLoop(DirectedLink),
    MissingReverse(DirectedLink),
    DuplicateLink(DirectedLink),
    DanglingEndpoint(DirectedLink),
    AdjacencyMismatch(NodeId),
    DegreeExceeded { node: NodeId, degree: usize, bound: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkGraph {
    labels: Vec<String>,
    links: Vec<DirectedLink>,
    adjacency: Vec<Vec<LinkId>>,
    reverse: Vec<Option<LinkId>>,
    port_bound: Option<usize>,
}

/// Builds a graph with two directed links per undirected edge.
///
/// Nodes are numbered in listing order. Edges are sorted by
/// `(min endpoint, max endpoint)` and each contributes the `min -> max` link
/// followed by the `max -> min` link, so ids are deterministic and the
/// reverse of link `2k` is `2k + 1`.
pub fn build_graph(spec: &TopologySpec) -> Result<NetworkGraph, TopologyError> {
    let mut index: BTreeMap<&str, NodeId> = BTreeMap::new();
    for (i, label) in spec.nodes.iter().enumerate() {
        if index.insert(label.as_str(), NodeId(i as u32)).is_some() {
            return Err(TopologyError::DuplicateNode(label.clone()));
        }
    }
    let lookup = |l: &String| {
        index
            .get(l.as_str())
            .copied()
            .ok_or_else(|| TopologyError::UnknownEndpoint(l.clone()))
    };

    let mut pairs: Vec<(NodeId, NodeId)> = Vec::with_capacity(spec.edges.len());
    for (a, b) in &spec.edges {
        let (u, v) = (lookup(a)?, lookup(b)?);
        if u == v {
            return Err(TopologyError::SelfLoop(a.clone()));
        }
        pairs.push(if u < v { (u, v) } else { (v, u) });
    }
    pairs.sort_unstable();
    for w in pairs.windows(2) {
        if w[0] == w[1] {
            let (u, v) = w[0];
            return Err(TopologyError::DuplicateEdge(
                spec.nodes[u.index()].clone(),
                spec.nodes[v.index()].clone(),
            ));
        }
    }

    let mut links = Vec::with_capacity(pairs.len() * 2);
    for (u, v) in pairs {
        let id = links.len() as u32;
        links.push(DirectedLink { id: LinkId(id), from: u, to: v });
        links.push(DirectedLink { id: LinkId(id + 1), from: v, to: u });
    }
    let graph = NetworkGraph::from_parts(spec.nodes.clone(), links, spec.port_bound);
    if let Some(bound) = spec.port_bound {
        for (i, adj) in graph.adjacency.iter().enumerate() {
            if adj.len() > bound {
                return Err(TopologyError::PortBoundExceeded {
                    node: spec.nodes[i].clone(),
                    degree: adj.len(),
                    bound,
                });
            }
        }
    }
    Ok(graph)
}

impl NetworkGraph {
    /// Assembles a graph from raw parts without checking invariants; run
    /// [`validate`] on the result. Link ids must equal their position.
    pub fn from_parts(labels: Vec<String>, links: Vec<DirectedLink>, port_bound: Option<usize>) -> Self {
        let mut adjacency = alloc::vec![Vec::new(); labels.len()];
        for l in &links {
            if let Some(adj) = adjacency.get_mut(l.from.index()) {
                adj.push(l.id);
            }
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        let mut by_ends: BTreeMap<(NodeId, NodeId), LinkId> = BTreeMap::new();
        for l in &links {
            by_ends.entry((l.from, l.to)).or_insert(l.id);
        }
        let reverse = links.iter().map(|l| by_ends.get(&(l.to, l.from)).copied()).collect();
        NetworkGraph { labels, links, adjacency, reverse, port_bound }
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.labels.len() as u32).map(NodeId)
    }

    pub fn links(&self) -> &[DirectedLink] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> DirectedLink {
        self.links[id.index()]
    }

    pub fn label(&self, node: NodeId) -> &str {
        &self.labels[node.index()]
    }

    pub fn node_by_label(&self, label: &str) -> Option<NodeId> {
        self.labels.iter().position(|l| l == label).map(|i| NodeId(i as u32))
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node.index() < self.labels.len()
    }

    pub fn port_bound(&self) -> Option<usize> {
        self.port_bound
    }

    /// Outgoing links of `node` in ascending id order.
    pub fn outgoing_links(&self, node: NodeId) -> Result<Vec<DirectedLink>, TopologyError> {
        let adj = self.adjacency.get(node.index()).ok_or(TopologyError::UnknownNode(node))?;
        Ok(adj.iter().map(|&id| self.link(id)).collect())
    }

    pub(crate) fn outgoing_ids(&self, node: NodeId) -> &[LinkId] {
        &self.adjacency[node.index()]
    }

    /// The opposite-direction link of the same fiber pair.
    pub fn reverse(&self, id: LinkId) -> Option<LinkId> {
        self.reverse.get(id.index()).copied().flatten()
    }

    /// Re-expresses the graph as an ingestion spec, one edge per fiber pair.
    pub fn to_spec(&self) -> TopologySpec {
        let edges = self
            .links
            .iter()
            .filter(|l| l.from < l.to)
            .map(|l| (self.label(l.from).to_string(), self.label(l.to).to_string()))
            .collect();
        TopologySpec { nodes: self.labels.clone(), edges, port_bound: self.port_bound }
    }

    /// Number of connected components (links treated as undirected).
    pub fn component_count(&self) -> usize {
        let n = self.labels.len();
        let mut seen = alloc::vec![false; n];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(u) = stack.pop() {
                for &id in &self.adjacency[u] {
                    let v = self.link(id).to.index();
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        count
    }
}

/// Lists every broken invariant; empty means the graph is well formed.
pub fn validate(graph: &NetworkGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = graph.labels.len();
    let mut seen: BTreeMap<(NodeId, NodeId), LinkId> = BTreeMap::new();
    for l in &graph.links {
        if l.from.index() >= n || l.to.index() >= n {
            out.push(Violation::DanglingEndpoint(*l));
            continue;
        }
        if l.from == l.to {
            out.push(Violation::SelfLoop(*l));
            continue;
        }
        if seen.insert((l.from, l.to), l.id).is_some() {
            out.push(Violation::DuplicateLink(*l));
        }
    }
    for l in &graph.links {
        if l.from != l.to
            && l.from.index() < n
            && l.to.index() < n
            && !seen.contains_key(&(l.to, l.from))
        {
            out.push(Violation::MissingReverse(*l));
        }
    }
    for node in graph.nodes() {
        let mut expected: Vec<LinkId> =
            graph.links.iter().filter(|l| l.from == node).map(|l| l.id).collect();
        expected.sort_unstable();
        if graph.adjacency[node.index()] != expected {
            out.push(Violation::AdjacencyMismatch(node));
        }
        if let Some(bound) = graph.port_bound {
            let degree = expected.len();
            if degree > bound {
                out.push(Violation::DegreeExceeded { node, degree, bound });
            }
        }
    }
    out
}

/// The five-node ring A-B-C-D-E-A.
pub fn ring5() -> NetworkGraph {
    let spec = TopologySpec::new(
        ["A", "B", "C", "D", "E"],
        [("A", "B"), ("B", "C"), ("C", "D"), ("D", "E"), ("E", "A")],
    );
    build_graph(&spec).expect("ring5 is well formed")
}

/// Source `S` and sink `D` hanging off a single routing node `X`.
pub fn single_switch() -> NetworkGraph {
    let spec = TopologySpec::new(["S", "X", "D"], [("S", "X"), ("X", "D")]);
    build_graph(&spec).expect("single-switch is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn label_pairs(g: &NetworkGraph, links: &[DirectedLink]) -> Vec<(String, String)> {
        links
            .iter()
            .map(|l| (g.label(l.from).to_string(), g.label(l.to).to_string()))
            .collect()
    }

    #[test]
    fn two_nodes_one_edge() {
        let g = build_graph(&TopologySpec::new(["A", "B"], [("A", "B")])).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.link_count(), 2);
        let b = g.node_by_label("B").unwrap();
        let out = g.outgoing_links(b).unwrap();
        assert_eq!(label_pairs(&g, &out), vec![("B".into(), "A".into())]);
    }

    #[test]
    fn nodes_without_edges() {
        let g = build_graph(&TopologySpec::new(["A", "B", "C", "D", "E"], [])).unwrap();
        assert_eq!(g.node_count(), 5);
        assert_eq!(g.link_count(), 0);
        assert!(g.outgoing_links(NodeId(3)).unwrap().is_empty());
    }

    #[test]
    fn ring_counts_by_enumeration() {
        let g = ring5();
        assert_eq!(g.link_count(), 10);
        // Enumerate every ordered pair and count the ones joined by a link.
        let mut pairs = 0;
        for u in g.nodes() {
            for v in g.nodes() {
                if g.links().iter().any(|l| l.from == u && l.to == v) {
                    pairs += 1;
                }
            }
            assert_eq!(g.outgoing_links(u).unwrap().len(), 2);
        }
        assert_eq!(pairs, 10);
        assert!(validate(&g).is_empty());
    }

    #[test]
    fn ring_outgoing_from_a() {
        let g = ring5();
        let a = g.node_by_label("A").unwrap();
        let out = g.outgoing_links(a).unwrap();
        assert_eq!(
            label_pairs(&g, &out),
            vec![("A".into(), "B".into()), ("A".into(), "E".into())]
        );
        assert!(out[0].id < out[1].id);
    }

    #[test]
    fn link_id_order_is_forward_then_reverse() {
        let g = build_graph(&TopologySpec::new(["A", "B", "C"], [("C", "B"), ("B", "A")])).unwrap();
        assert_eq!(
            label_pairs(&g, g.links()),
            vec![
                ("A".into(), "B".into()),
                ("B".into(), "A".into()),
                ("B".into(), "C".into()),
                ("C".into(), "B".into()),
            ]
        );
        assert_eq!(g.reverse(LinkId(2)), Some(LinkId(3)));
    }

    #[test]
    fn build_errors() {
        let unknown = TopologySpec::new(["A"], [("A", "Z")]);
        assert_eq!(build_graph(&unknown), Err(TopologyError::UnknownEndpoint("Z".into())));
        let dup = TopologySpec::new(["A", "B"], [("A", "B"), ("B", "A")]);
        assert_eq!(build_graph(&dup), Err(TopologyError::DuplicateEdge("A".into(), "B".into())));
        let lp = TopologySpec::new(["A", "B"], [("B", "B")]);
        assert_eq!(build_graph(&lp), Err(TopologyError::SelfLoop("B".into())));
        let twice = TopologySpec::new(["A", "A"], []);
        assert_eq!(build_graph(&twice), Err(TopologyError::DuplicateNode("A".into())));
    }

    #[test]
    fn port_bound_enforced() {
        let mut spec = TopologySpec::new(["H", "A", "B", "C"], [("H", "A"), ("H", "B"), ("H", "C")]);
        spec.port_bound = Some(2);
        assert!(matches!(
            build_graph(&spec),
            Err(TopologyError::PortBoundExceeded { degree: 3, bound: 2, .. })
        ));
        spec.port_bound = Some(3);
        assert!(build_graph(&spec).is_ok());
    }

    #[test]
    fn unknown_node_query() {
        let g = ring5();
        assert_eq!(g.outgoing_links(NodeId(9)), Err(TopologyError::UnknownNode(NodeId(9))));
    }

    #[test]
    fn validate_flags_missing_reverse_and_self_loop() {
        let labels: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        let ab = DirectedLink { id: LinkId(0), from: NodeId(0), to: NodeId(1) };
        let g = NetworkGraph::from_parts(labels.clone(), vec![ab], None);
        assert_eq!(validate(&g), vec![Violation::MissingReverse(ab)]);

        let cc = DirectedLink { id: LinkId(0), from: NodeId(2), to: NodeId(2) };
        let g = NetworkGraph::from_parts(labels, vec![cc], None);
        assert_eq!(validate(&g), vec![Violation::SelfLoop(cc)]);
    }

    #[test]
    fn spec_round_trip() {
        let g = ring5();
        assert_eq!(build_graph(&g.to_spec()).unwrap(), g);
    }
}
