//! Vertex/hyperedge connection sets for global decisions.
//!
//! A routing decision becomes one hyperedge per demand covering the links
//! of its path; placement-style decisions map requests onto the resources
//! assigned to them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub u: usize,
    pub v: usize,
    pub capacity_mbps: f64,
    /// Background traffic already on the link.
    #[serde(default)]
    pub load_mbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Demand {
    pub src: usize,
    pub dst: usize,
    pub mbps: f64,
}

/// Directed network with per-link capacity and a demand list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub nodes: Vec<String>,
    pub links: Vec<Link>,
    #[serde(default)]
    pub demands: Vec<Demand>,
}

const NSFNET_JSON: &str = include_str!("../data/nsfnet.json");

impl Topology {
    /// Expand undirected edges into a pair of opposite links each.
    pub fn undirected(n_nodes: usize, edges: &[(usize, usize)], capacity_mbps: f64) -> Result<Self> {
        let links = edges
            .iter()
            .flat_map(|&(a, b)| {
                [(a, b), (b, a)].map(|(u, v)| Link { u, v, capacity_mbps, load_mbps: 0.0 })
            })
            .collect();
        let t = Self { nodes: (0..n_nodes).map(|i| i.to_string()).collect(), links, demands: Vec::new() };
        t.validate()?;
        Ok(t)
    }

    /// The 14-node, 21-edge NSFNet backbone with 10 Mbps links.
    pub fn nsfnet() -> Self {
        Self::from_json(NSFNET_JSON).expect("bundled topology is valid")
    }

    /// Seven nodes `a..g` joined by eight links, with demands `a→e` and
    /// `a→g`; see [`example_routes`] for the routes that go with it.
    pub fn example() -> Self {
        let names = ["a", "b", "c", "d", "e", "f", "g"];
        let pairs = [(0, 1), (0, 2), (1, 3), (1, 2), (2, 3), (3, 4), (2, 5), (4, 6)];
        Self {
            nodes: names.iter().map(|s| s.to_string()).collect(),
            links: pairs.iter().map(|&(u, v)| Link { u, v, capacity_mbps: 10.0, load_mbps: 0.0 }).collect(),
            demands: vec![Demand { src: 0, dst: 4, mbps: 1.0 }, Demand { src: 0, dst: 6, mbps: 1.0 }],
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        let mut seen = std::collections::HashSet::new();
        for (i, l) in self.links.iter().enumerate() {
            if l.u >= n || l.v >= n {
                return Err(Error::Validation(format!("link {i} references a missing node")));
            }
            if l.u == l.v {
                return Err(Error::Validation(format!("link {i} is a self-loop")));
            }
            if !(l.capacity_mbps > 0.0 && l.capacity_mbps.is_finite()) {
                return Err(Error::Validation(format!("link {i} capacity must be positive")));
            }
            if !(l.load_mbps >= 0.0 && l.load_mbps.is_finite()) {
                return Err(Error::Validation(format!("link {i} load must be non-negative")));
            }
            if !seen.insert((l.u, l.v)) {
                return Err(Error::Validation(format!("link {i} duplicates {}→{}", l.u, l.v)));
            }
        }
        for (i, d) in self.demands.iter().enumerate() {
            if d.src >= n || d.dst >= n {
                return Err(Error::Validation(format!("demand {i} references a missing node")));
            }
            if d.src == d.dst {
                return Err(Error::Validation(format!("demand {i} has identical endpoints")));
            }
            if !(d.mbps >= 0.0 && d.mbps.is_finite()) {
                return Err(Error::Validation(format!("demand {i} volume must be non-negative")));
            }
        }
        Ok(())
    }

    /// Outgoing link ids per node, in link order.
    pub fn out_links(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for (i, l) in self.links.iter().enumerate() {
            out[l.u].push(i);
        }
        out
    }

    pub fn link_between(&self, u: usize, v: usize) -> Option<usize> {
        self.links.iter().position(|l| l.u == u && l.v == v)
    }

    /// Node sequence visited by a link path, or an explanation of why the
    /// links do not form a connected `src→dst` walk.
    pub fn path_nodes(&self, src: usize, dst: usize, links: &[usize]) -> std::result::Result<Vec<usize>, String> {
        if links.is_empty() {
            return Err("route is empty".into());
        }
        let mut nodes = vec![src];
        for &id in links {
            let l = self.links.get(id).ok_or_else(|| format!("link {id} does not exist"))?;
            if l.u != *nodes.last().expect("nonempty") {
                return Err(format!("link {id} does not continue from node {}", nodes.last().unwrap()));
            }
            nodes.push(l.v);
        }
        if *nodes.last().unwrap() != dst {
            return Err(format!("route ends at node {} instead of {dst}", nodes.last().unwrap()));
        }
        Ok(nodes)
    }
}

/// Links for the two demands of [`Topology::example`]: `a→c→d→e` and
/// `a→b→d→e→g`.
pub fn example_routes() -> Vec<Vec<usize>> {
    vec![vec![1, 4, 5], vec![0, 2, 5, 7]]
}

/// Vertices, hyperedges and the 0-1 incidence between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypergraph {
    pub vertex_features: Vec<Vec<f64>>,
    pub edge_features: Vec<Vec<f64>>,
    /// `|E| x |V|`.
    incidence: Matrix,
    #[serde(default)]
    pub vertex_labels: Vec<String>,
    #[serde(default)]
    pub edge_labels: Vec<String>,
}

impl Hypergraph {
    pub fn new(vertex_features: Vec<Vec<f64>>, edge_features: Vec<Vec<f64>>, incidence: Matrix) -> Result<Self> {
        let h = Self { vertex_features, edge_features, incidence, vertex_labels: Vec::new(), edge_labels: Vec::new() };
        h.validate()?;
        Ok(h)
    }

    pub fn with_labels(mut self, vertex_labels: Vec<String>, edge_labels: Vec<String>) -> Result<Self> {
        self.vertex_labels = vertex_labels;
        self.edge_labels = edge_labels;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let (e, v) = self.incidence.shape();
        if e != self.edge_features.len() || v != self.vertex_features.len() {
            return Err(Error::Validation(format!(
                "incidence is {e}x{v} but there are {} hyperedges and {} vertices",
                self.edge_features.len(),
                self.vertex_features.len()
            )));
        }
        if self.incidence.as_slice().iter().any(|&x| x != 0.0 && x != 1.0) {
            return Err(Error::Validation("incidence entries must be 0 or 1".into()));
        }
        for r in 0..e {
            if self.incidence.row(r).iter().all(|&x| x == 0.0) {
                return Err(Error::Validation(format!("hyperedge {r} covers no vertex")));
            }
        }
        let finite = |rows: &[Vec<f64>]| rows.iter().flatten().all(|x| x.is_finite());
        if !finite(&self.vertex_features) || !finite(&self.edge_features) {
            return Err(Error::Validation("features must be finite".into()));
        }
        if !self.vertex_labels.is_empty() && self.vertex_labels.len() != v {
            return Err(Error::Validation("one label per vertex expected".into()));
        }
        if !self.edge_labels.is_empty() && self.edge_labels.len() != e {
            return Err(Error::Validation("one label per hyperedge expected".into()));
        }
        Ok(())
    }

    pub fn incidence(&self) -> &Matrix {
        &self.incidence
    }

    pub fn n_vertices(&self) -> usize {
        self.vertex_features.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edge_features.len()
    }

    /// `(hyperedge, vertex)` pairs with `I = 1`, hyperedge-major.
    pub fn connections(&self) -> Vec<(usize, usize)> {
        let (e, v) = self.incidence.shape();
        (0..e).flat_map(|r| (0..v).map(move |c| (r, c))).filter(|&(r, c)| self.incidence.get(r, c) == 1.0).collect()
    }

    /// Swap the roles of vertices and hyperedges.
    pub fn dual(&self) -> Result<Self> {
        let h = Self {
            vertex_features: self.edge_features.clone(),
            edge_features: self.vertex_features.clone(),
            incidence: self.incidence.transpose(),
            vertex_labels: self.edge_labels.clone(),
            edge_labels: self.vertex_labels.clone(),
        };
        h.validate()?;
        Ok(h)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("hypergraph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let h: Self = serde_json::from_str(text)?;
        h.validate()?;
        Ok(h)
    }
}

/// One hyperedge per demand over the links of its route. Vertex features are
/// link capacities, hyperedge features demand volumes.
pub fn build_routing_hypergraph(topology: &Topology, routes: &[Vec<usize>]) -> Result<Hypergraph> {
    topology.validate()?;
    if routes.len() != topology.demands.len() {
        return Err(Error::Validation(format!(
            "{} routes for {} demands",
            routes.len(),
            topology.demands.len()
        )));
    }
    let mut incidence = Matrix::zeros(routes.len(), topology.links.len());
    for (e, (route, d)) in routes.iter().zip(&topology.demands).enumerate() {
        topology.path_nodes(d.src, d.dst, route).map_err(|why| {
            Error::Validation(format!(
                "demand {e} ({}→{}): {why}",
                topology.nodes[d.src], topology.nodes[d.dst]
            ))
        })?;
        for &v in route {
            incidence.set(e, v, 1.0);
        }
    }
    let vertex_labels = topology
        .links
        .iter()
        .map(|l| format!("{}→{}", topology.nodes[l.u], topology.nodes[l.v]))
        .collect();
    let edge_labels = topology
        .demands
        .iter()
        .map(|d| format!("{}→{}", topology.nodes[d.src], topology.nodes[d.dst]))
        .collect();
    Hypergraph::new(
        topology.links.iter().map(|l| vec![l.capacity_mbps]).collect(),
        topology.demands.iter().map(|d| vec![d.mbps]).collect(),
        incidence,
    )?
    .with_labels(vertex_labels, edge_labels)
}

/// Generic mapping between two variables: `I[e][v] = 1` iff `(e, v)` is in
/// `assignment`. Use [`Hypergraph::dual`] to flip the orientation.
pub fn build_bivariate(
    vertex_features: Vec<Vec<f64>>,
    edge_features: Vec<Vec<f64>>,
    assignment: &[(usize, usize)],
) -> Result<Hypergraph> {
    let (n_e, n_v) = (edge_features.len(), vertex_features.len());
    let mut incidence = Matrix::zeros(n_e, n_v);
    for &(e, v) in assignment {
        if e >= n_e || v >= n_v {
            return Err(Error::Validation(format!("assignment ({e}, {v}) references a missing element")));
        }
        incidence.set(e, v, 1.0);
    }
    Hypergraph::new(vertex_features, edge_features, incidence)
}
