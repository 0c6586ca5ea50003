//! Per-timestep construction of the typed communication graph.
//!
//! Every agent class is a node type. Directed edges are keyed by
//! (sender class -> receiver class), and two agents within communication
//! range get both directions so messages can flow either way. In training
//! mode a State Summary Node (SSN) is appended with one incoming edge per
//! agent and no outgoing edges, so removing it cannot change any agent's
//! output — that is what allows dropping it at execution time.

use std::rc::Rc;

use thiserror::Error;

use crate::env::{EnvSummary, TeamSpec};
use crate::mat::Mat;
use crate::tape::Mask;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Normalization constants for the SSN input feature.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SsnNorm {
    pub max_agents: f64,
    pub max_grid: f64,
}

impl Default for SsnNorm {
    fn default() -> Self {
        SsnNorm {
            max_agents: 16.0,
            max_grid: 32.0,
        }
    }
}

/// Node/edge structure of one timestep's graph. Node types `0..n_classes`
/// are the agent classes in team order; in training mode type `n_classes`
/// is the SSN.
#[derive(Clone, Debug)]
pub struct GraphTopology {
    pub n_classes: usize,
    pub class_counts: Vec<usize>,
    pub training: bool,
    /// (src_type, dst_type) per edge type, in a fixed enumeration order:
    /// all agent-agent pairs (src-major), then one (class -> SSN) per class.
    pub edge_types: Vec<(usize, usize)>,
    pub edge_names: Vec<String>,
    /// Per edge type: directed (src_local, dst_local) pairs.
    pub edges: Vec<Vec<(u32, u32)>>,
    /// Per edge type: (n_dst x n_src) adjacency mask for attention.
    masks: Vec<Mask>,
}

impl GraphTopology {
    pub fn n_node_types(&self) -> usize {
        self.n_classes + self.training as usize
    }

    pub fn ssn_type(&self) -> Option<usize> {
        self.training.then_some(self.n_classes)
    }

    pub fn nodes_of_type(&self, t: usize) -> usize {
        if t < self.n_classes {
            self.class_counts[t]
        } else {
            1
        }
    }

    pub fn mask(&self, edge_type: usize) -> Mask {
        Rc::clone(&self.masks[edge_type])
    }

    pub fn edge_type_index(&self, name: &str) -> Option<usize> {
        self.edge_names.iter().position(|n| n == name)
    }
}

fn chebyshev(a: (i64, i64), b: (i64, i64)) -> u64 {
    (a.0 - b.0).unsigned_abs().max((a.1 - b.1).unsigned_abs())
}

/// Fixed edge-type enumeration: all (src class, dst class) pairs src-major,
/// then one (class -> SSN) per class when `training`. Node type `n_classes`
/// is the SSN. Layers and topologies must share this table.
pub fn edge_type_table(n_classes: usize, training: bool) -> Vec<(usize, usize)> {
    let mut table = Vec::new();
    for src in 0..n_classes {
        for dst in 0..n_classes {
            table.push((src, dst));
        }
    }
    if training {
        for src in 0..n_classes {
            table.push((src, n_classes));
        }
    }
    table
}

/// Human-readable names ("PtoA", "PtoS", ...) matching [`edge_type_table`].
pub fn edge_type_names(team: &TeamSpec, training: bool) -> Vec<String> {
    edge_type_table(team.n_classes(), training)
        .into_iter()
        .map(|(src, dst)| {
            let d = if dst == team.n_classes() {
                'S'
            } else {
                team.classes[dst].short_code
            };
            format!("{}to{}", team.classes[src].short_code, d)
        })
        .collect()
}

/// Build the typed topology over agent positions. `range` is a Chebyshev
/// cell radius; `None` means unlimited (fully connected team).
pub fn build_topology(
    team: &TeamSpec,
    positions: &[(i64, i64)],
    range: Option<u64>,
    training: bool,
) -> GraphTopology {
    assert_eq!(positions.len(), team.n_agents(), "one position per agent");
    let pairs: Vec<(usize, usize)> = (0..team.n_agents())
        .flat_map(|j| ((j + 1)..team.n_agents()).map(move |k| (j, k)))
        .filter(|&(j, k)| match range {
            Some(r) => chebyshev(positions[j], positions[k]) <= r,
            None => true,
        })
        .collect();
    topology_from_pairs(team, &pairs, training)
}

/// Build a topology from explicit undirected agent pairs (both directed
/// edges are materialized, matching the in-range rule). Used directly by
/// exhaustive graph-pattern tests.
pub fn topology_from_pairs(
    team: &TeamSpec,
    pairs: &[(usize, usize)],
    training: bool,
) -> GraphTopology {
    let n_classes = team.n_classes();
    let edge_types = edge_type_table(n_classes, training);
    let edge_names = edge_type_names(team, training);

    let type_index = |src: usize, dst: usize| -> usize {
        if dst == n_classes {
            n_classes * n_classes + src
        } else {
            src * n_classes + dst
        }
    };

    let mut edges: Vec<Vec<(u32, u32)>> = vec![Vec::new(); edge_types.len()];
    let local = |agent: usize| -> u32 {
        let class = team.class_of(agent);
        (agent - team.members(class).start) as u32
    };
    for &(j, k) in pairs {
        assert!(j != k && j < team.n_agents() && k < team.n_agents());
        let (cj, ck) = (team.class_of(j), team.class_of(k));
        edges[type_index(cj, ck)].push((local(j), local(k)));
        edges[type_index(ck, cj)].push((local(k), local(j)));
    }
    if training {
        for agent in 0..team.n_agents() {
            let class = team.class_of(agent);
            edges[type_index(class, n_classes)].push((local(agent), 0));
        }
    }

    let class_counts = team.counts.clone();
    let masks = edge_types
        .iter()
        .zip(&edges)
        .map(|(&(src, dst), list)| {
            let n_src = if src < n_classes { class_counts[src] } else { 1 };
            let n_dst = if dst < n_classes { class_counts[dst] } else { 1 };
            let mut mask = vec![false; n_dst * n_src];
            for &(s, d) in list {
                mask[d as usize * n_src + s as usize] = true;
            }
            Rc::new(mask)
        })
        .collect();

    GraphTopology {
        n_classes,
        class_counts,
        training,
        edge_types,
        edge_names,
        edges,
        masks,
    }
}

/// SSN input feature: total agent count, per-class counts, grid size and
/// normalized timestep, all scaled into [0, 1] for a bounded critic input.
pub fn ssn_feature(summary: &EnvSummary, norm: &SsnNorm) -> Vec<f64> {
    let total: usize = summary.class_counts.iter().sum();
    let mut v = Vec::with_capacity(4 + summary.class_counts.len());
    v.push(total as f64 / norm.max_agents);
    for &c in &summary.class_counts {
        v.push(c as f64 / norm.max_agents);
    }
    v.push(summary.grid_height as f64 / norm.max_grid);
    v.push(summary.grid_width as f64 / norm.max_grid);
    v.push(summary.timestep as f64 / summary.episode_limit as f64);
    v
}

/// A topology together with per-node-type feature matrices (SSN last when
/// training). This is the plain-value form used by tests and by direct
/// layer evaluation; the training path feeds features through the tape.
#[derive(Clone, Debug)]
pub struct HetGraph {
    pub topo: GraphTopology,
    pub features: Vec<Mat>,
}

/// Assemble a graph from per-agent feature vectors (global agent order).
/// All agents of a class must supply vectors of equal width.
pub fn build_graph(
    team: &TeamSpec,
    positions: &[(i64, i64)],
    agent_features: &[Vec<f64>],
    range: Option<u64>,
    training: bool,
    summary: &EnvSummary,
    norm: &SsnNorm,
) -> Result<HetGraph, GraphError> {
    if agent_features.len() != team.n_agents() {
        return Err(GraphError::Contract(format!(
            "{} feature vectors for {} agents",
            agent_features.len(),
            team.n_agents()
        )));
    }
    let topo = build_topology(team, positions, range, training);
    let mut features = Vec::with_capacity(topo.n_node_types());
    for class in 0..team.n_classes() {
        let members = team.members(class);
        let width = agent_features[members.start].len();
        let mut mat = Mat::zeros(team.counts[class], width);
        for (row, agent) in members.enumerate() {
            if agent_features[agent].len() != width {
                return Err(GraphError::Contract(format!(
                    "agent {agent} feature width {} != {width} for class {}",
                    agent_features[agent].len(),
                    team.classes[class].class_id
                )));
            }
            mat.row_mut(row).copy_from_slice(&agent_features[agent]);
        }
        features.push(mat);
    }
    if training {
        let ssn = ssn_feature(summary, norm);
        features.push(Mat::from_vec(1, ssn.len(), ssn));
    }
    Ok(HetGraph { topo, features })
}
