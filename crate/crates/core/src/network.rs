//! Network topology: links, nodes and network edges.
//!
//! Diagram parameters, initial densities and edge flows are given per lane;
//! a link's own diagram is the per-lane one scaled by its lane count.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::fundamental_diagram::{FdError, FundamentalDiagram, GreenshieldsFd, PiecewiseLinearFd, TriangularFd};
use crate::junction::{JunctionError, Movement, NodeSpec, SignalGroup};

/// Per-lane diagram as written in a network file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiagramSpec {
    Triangular { free_speed: f64, capacity: f64, jam_density: f64 },
    Greenshields { free_speed: f64, jam_density: f64 },
    PiecewiseLinear { points: Vec<[f64; 2]> },
}

impl DiagramSpec {
    pub fn build(&self) -> Result<FundamentalDiagram, FdError> {
        Ok(match self {
            Self::Triangular { free_speed, capacity, jam_density } => {
                TriangularFd::from_capacity(*free_speed, *jam_density, *capacity)?.into()
            }
            Self::Greenshields { free_speed, jam_density } => GreenshieldsFd::new(*free_speed, *jam_density)?.into(),
            Self::PiecewiseLinear { points } => PiecewiseLinearFd::new(points.iter().map(|p| (p[0], p[1])).collect())?.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub id: String,
    /// Metres.
    pub length: f64,
    pub lanes: u32,
    pub diagram: DiagramSpec,
    /// Upstream node; absent for a link fed by a source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<String>,
    /// Downstream node; absent for a link drained by a sink.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<String>,
}

impl LinkSpec {
    /// The link's whole-cross-section diagram.
    pub fn diagram(&self) -> Result<FundamentalDiagram, FdError> {
        Ok(self.diagram.build()?.scaled(self.lanes as f64))
    }
}

/// A network edge attached to one link, with a default per-lane flow
/// (source demand or sink supply) that scenarios may override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub link: String,
    pub flow: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub sources: Vec<EdgeSpec>,
    #[serde(default)]
    pub sinks: Vec<EdgeSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NetworkError {
    DuplicateId { kind: &'static str, id: String },
    UnknownLink { referrer: String, link: String },
    UnknownNode { link: String, node: String },
    BadLink { link: String, reason: String },
    Diagram { link: String, source: FdError },
    Junction(JunctionError),
    Attachment { link: String, end: &'static str, reason: String },
    BadEdgeFlow { link: String, value: f64 },
}

impl fmt::Display for NetworkError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DuplicateId { kind, id } => write!(f, "duplicate {kind} id {id:?}"),
            Self::UnknownLink { referrer, link } => write!(f, "{referrer} refers to unknown link {link:?}"),
            Self::UnknownNode { link, node } => write!(f, "link {link:?} refers to unknown node {node:?}"),
            Self::BadLink { link, reason } => write!(f, "link {link:?}: {reason}"),
            Self::Diagram { link, source } => write!(f, "link {link:?}: {source}"),
            Self::Junction(e) => write!(f, "{e}"),
            Self::Attachment { link, end, reason } => write!(f, "link {link:?} {end} end: {reason}"),
            Self::BadEdgeFlow { link, value } => write!(f, "edge flow {value} on link {link:?} must be finite and non-negative"),
        }
    }
}

impl std::error::Error for NetworkError {}

impl Network {
    pub fn link_index(&self) -> HashMap<&str, usize> {
        self.links.iter().enumerate().map(|(i, l)| (l.id.as_str(), i)).collect()
    }

    /// Every structural problem, or `Ok` for a well-formed graph.
    pub fn validate(&self) -> Result<(), Vec<NetworkError>> {
        let mut errors = Vec::new();
        let mut seen = HashSet::new();
        for l in &self.links {
            if !seen.insert(l.id.as_str()) {
                errors.push(NetworkError::DuplicateId { kind: "link", id: l.id.clone() });
            }
            if l.id.is_empty() || l.id.contains([',', '"', '\n', '\r', ':']) {
                errors.push(NetworkError::BadLink { link: l.id.clone(), reason: "ids must be non-empty without commas, colons, quotes or line breaks".into() });
            }
            if !(l.length.is_finite() && l.length > 0.0) {
                errors.push(NetworkError::BadLink { link: l.id.clone(), reason: format!("length {} must be positive", l.length) });
            }
            if l.lanes == 0 {
                errors.push(NetworkError::BadLink { link: l.id.clone(), reason: "needs at least one lane".into() });
            }
            if let Err(source) = l.diagram.build() {
                errors.push(NetworkError::Diagram { link: l.id.clone(), source });
            }
        }
        let mut node_ids = HashSet::new();
        for n in &self.nodes {
            if !node_ids.insert(n.id.as_str()) {
                errors.push(NetworkError::DuplicateId { kind: "node", id: n.id.clone() });
            }
            if let Err(e) = n.validate() {
                errors.push(NetworkError::Junction(e));
            }
        }
        let index = self.link_index();
        // Who claims each end of each link.
        let mut up_owner: Vec<Vec<String>> = vec![Vec::new(); self.links.len()];
        let mut down_owner: Vec<Vec<String>> = vec![Vec::new(); self.links.len()];
        for n in &self.nodes {
            for id in &n.incoming {
                match index.get(id.as_str()) {
                    Some(&i) => down_owner[i].push(format!("node {}", n.id)),
                    None => errors.push(NetworkError::UnknownLink { referrer: format!("node {}", n.id), link: id.clone() }),
                }
            }
            for id in &n.outgoing {
                match index.get(id.as_str()) {
                    Some(&i) => up_owner[i].push(format!("node {}", n.id)),
                    None => errors.push(NetworkError::UnknownLink { referrer: format!("node {}", n.id), link: id.clone() }),
                }
            }
        }
        for (edges, owners, what) in [(&self.sources, &mut up_owner, "source"), (&self.sinks, &mut down_owner, "sink")] {
            for e in edges {
                if !(e.flow.is_finite() && e.flow >= 0.0) {
                    errors.push(NetworkError::BadEdgeFlow { link: e.link.clone(), value: e.flow });
                }
                match index.get(e.link.as_str()) {
                    Some(&i) => owners[i].push(what.to_string()),
                    None => errors.push(NetworkError::UnknownLink { referrer: what.to_string(), link: e.link.clone() }),
                }
            }
        }
        for (i, l) in self.links.iter().enumerate() {
            for (end, declared, owners, edge) in [
                ("upstream", &l.from, &up_owner[i], "source"),
                ("downstream", &l.to, &down_owner[i], "sink"),
            ] {
                if let Some(node) = declared {
                    if !node_ids.contains(node.as_str()) {
                        errors.push(NetworkError::UnknownNode { link: l.id.clone(), node: node.clone() });
                        continue;
                    }
                }
                let expected = match declared {
                    Some(node) => format!("node {node}"),
                    None => edge.to_string(),
                };
                if owners.len() != 1 || owners[0] != expected {
                    let reason = if owners.is_empty() {
                        format!("expected {expected}, but nothing attaches here")
                    } else {
                        format!("expected {expected}, attached to {}", owners.join(", "))
                    };
                    errors.push(NetworkError::Attachment { link: l.id.clone(), end, reason });
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

fn austin_lane() -> DiagramSpec {
    DiagramSpec::Triangular { free_speed: 12.5, capacity: 0.4625, jam_density: 0.1295 }
}

/// Highway diagram used by the five-link example.
pub fn highway_lane() -> DiagramSpec {
    DiagramSpec::Triangular { free_speed: 30.0, capacity: 0.556, jam_density: 0.1297 }
}

/// Three-lane highway L1 → L2 → L3 with a two-lane off-ramp L4 leaving
/// between L1 and L2 and a two-lane on-ramp L5 joining between L2 and L3.
/// All links are 1000 m.
pub fn five_link_network() -> Network {
    let link = |id: &str, lanes, from: Option<&str>, to: Option<&str>| LinkSpec {
        id: id.into(),
        length: 1000.0,
        lanes,
        diagram: highway_lane(),
        from: from.map(Into::into),
        to: to.map(Into::into),
    };
    let ids = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    Network {
        links: vec![
            link("L1", 3, None, Some("N1")),
            link("L2", 3, Some("N1"), Some("N2")),
            link("L3", 3, Some("N2"), None),
            link("L4", 2, Some("N1"), None),
            link("L5", 2, None, Some("N2")),
        ],
        nodes: vec![
            NodeSpec {
                id: "N1".into(),
                incoming: ids(&["L1"]),
                outgoing: ids(&["L2", "L4"]),
                splits: vec![vec![0.75, 0.25]],
                priorities: vec![1.0],
                signals: Vec::new(),
            },
            NodeSpec {
                id: "N2".into(),
                incoming: ids(&["L2", "L5"]),
                outgoing: ids(&["L3"]),
                splits: vec![vec![1.0], vec![1.0]],
                priorities: vec![0.6, 0.4],
                signals: Vec::new(),
            },
        ],
        sources: vec![EdgeSpec { link: "L1".into(), flow: 0.3 }, EdgeSpec { link: "L5".into(), flow: 0.2 }],
        sinks: vec![EdgeSpec { link: "L3".into(), flow: 0.556 }, EdgeSpec { link: "L4".into(), flow: 0.556 }],
    }
}

const DIRS: [char; 4] = ['N', 'E', 'S', 'W'];

fn neighbour(rows: usize, cols: usize, r: usize, c: usize, d: usize) -> Option<(usize, usize)> {
    match d {
        0 if r > 0 => Some((r - 1, c)),
        1 if c + 1 < cols => Some((r, c + 1)),
        2 if r + 1 < rows => Some((r + 1, c)),
        3 if c > 0 => Some((r, c - 1)),
        _ => None,
    }
}

/// Manhattan grid of `rows × cols` signalised four-way intersections.
///
/// Adjacent intersections are joined by one link in each direction; every
/// open side of the grid gets an entry link (fed by a source) and an exit
/// link (drained by a sink). Turning shares are 0.2 left, 0.6 through and
/// 0.2 right; north-south approaches are green during the first half of
/// `period`, east-west during the second. Uses a triangular urban diagram
/// (12.5 m/s, 0.4625 veh/s, 0.1295 veh/m per lane).
pub fn grid_network(rows: usize, cols: usize, length: f64, lanes: u32, period: f64) -> Network {
    let node_id = |r: usize, c: usize| format!("n{r}_{c}");
    let mut links = Vec::new();
    let mut sources = Vec::new();
    let mut sinks = Vec::new();
    let link = |id: String, from: Option<String>, to: Option<String>| LinkSpec {
        id,
        length,
        lanes,
        diagram: austin_lane(),
        from,
        to,
    };
    // Outgoing link of (r, c) heading in direction d.
    let out_id = |r: usize, c: usize, d: usize| {
        if neighbour(rows, cols, r, c, d).is_some() {
            format!("l{r}_{c}{}", DIRS[d])
        } else {
            format!("x{r}_{c}{}", DIRS[d])
        }
    };
    // Incoming link of (r, c) arriving from side d.
    let in_id = |r: usize, c: usize, d: usize| match neighbour(rows, cols, r, c, d) {
        Some((nr, nc)) => format!("l{nr}_{nc}{}", DIRS[(d + 2) % 4]),
        None => format!("e{r}_{c}{}", DIRS[d]),
    };
    let mut nodes = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            for d in 0..4 {
                match neighbour(rows, cols, r, c, d) {
                    Some((nr, nc)) => links.push(link(out_id(r, c, d), Some(node_id(r, c)), Some(node_id(nr, nc)))),
                    None => {
                        let exit = out_id(r, c, d);
                        sinks.push(EdgeSpec { link: exit.clone(), flow: 0.4625 });
                        links.push(link(exit, Some(node_id(r, c)), None));
                        let entry = in_id(r, c, d);
                        sources.push(EdgeSpec { link: entry.clone(), flow: 0.1 });
                        links.push(link(entry, None, Some(node_id(r, c))));
                    }
                }
            }
            let incoming: Vec<String> = (0..4).map(|d| in_id(r, c, d)).collect();
            let outgoing: Vec<String> = (0..4).map(|d| out_id(r, c, d)).collect();
            // Arriving from side d means travelling towards d + 2.
            let splits = (0..4)
                .map(|d| {
                    let mut row = vec![0.0; 4];
                    row[(d + 2) % 4] = 0.6;
                    row[(d + 1) % 4] = 0.2;
                    row[(d + 3) % 4] = 0.2;
                    row
                })
                .collect();
            let group = |sides: [usize; 2], green: [f64; 2]| SignalGroup {
                movements: sides
                    .iter()
                    .flat_map(|&d| (0..4).filter(move |&o| o != d).map(move |o| (d, o)))
                    .map(|(d, o)| Movement { from: in_id(r, c, d), to: out_id(r, c, o) })
                    .collect(),
                period,
                green: vec![green],
            };
            nodes.push(NodeSpec {
                id: node_id(r, c),
                incoming,
                outgoing,
                splits,
                priorities: vec![0.25; 4],
                signals: vec![group([0, 2], [0.0, period / 2.0]), group([1, 3], [period / 2.0, period])],
            });
        }
    }
    Network { links, nodes, sources, sinks }
}
