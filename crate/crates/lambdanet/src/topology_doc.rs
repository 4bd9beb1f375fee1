//! Topology documents in JSON or TOML.
//!
//! ```toml
//! nodes = ["S", "X", "D"]
//! edges = [["S", "X"], ["X", "D"]]
//! port_bound = 4          # optional
//! ```
//!
//! Edges are undirected; each becomes a pair of directed links. Unknown
//! fields are rejected.

use std::fs;
use std::path::Path;

use lambdanet_core::topology::{build_graph, single_switch, ring5, NetworkGraph, TopologyError, TopologySpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDocument {
    pub nodes: Vec<String>,
    pub edges: Vec<[String; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub port_bound: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum DocError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad JSON topology: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad TOML topology: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{0}")]
    Topology(#[from] TopologyError),
    #[error("unknown topology `{0}`: expected single-switch, ring5, or a .json/.toml file")]
    Unknown(String),
}

impl TopologyDocument {
    pub fn from_json(text: &str) -> Result<Self, DocError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, DocError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain data serializes")
    }

    pub fn spec(&self) -> TopologySpec {
        TopologySpec {
            nodes: self.nodes.clone(),
            edges: self.edges.iter().map(|[a, b]| (a.clone(), b.clone())).collect(),
            port_bound: self.port_bound,
        }
    }

    pub fn build(&self) -> Result<NetworkGraph, DocError> {
        Ok(build_graph(&self.spec())?)
    }

    pub fn from_graph(graph: &NetworkGraph) -> Self {
        let spec = graph.to_spec();
        TopologyDocument {
            nodes: spec.nodes,
            edges: spec.edges.into_iter().map(|(a, b)| [a, b]).collect(),
            port_bound: spec.port_bound,
        }
    }
}

/// Resolves a builtin name or loads a document, picking the format by file
/// extension (anything other than `.toml` is read as JSON).
pub fn load_topology(name_or_path: &str) -> Result<NetworkGraph, DocError> {
    match name_or_path {
        "single-switch" => return Ok(single_switch()),
        "ring5" => return Ok(ring5()),
        _ => {}
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        return Err(DocError::Unknown(name_or_path.to_owned()));
    }
    let text = fs::read_to_string(path).map_err(|source| DocError::Io { path: name_or_path.to_owned(), source })?;
    let doc = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => TopologyDocument::from_toml(&text)?,
        _ => TopologyDocument::from_json(&text)?,
    };
    doc.build()
}
