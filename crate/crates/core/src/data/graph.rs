use serde::{Deserialize, Serialize};

use super::raw::BALL_TEAM_ID;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Width of the team one-hot: ball, lower team id, higher team id.
pub const TEAM_ENCODING_WIDTH: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum EdgeRule {
    FullyConnected,
    /// Each node gets edges to its `k` nearest other nodes.
    Knn { k: usize },
}

impl Default for EdgeRule {
    fn default() -> Self {
        EdgeRule::FullyConnected
    }
}

/// Directed edges `(i, j)` put `j` in the neighbourhood of `i`: node `i`
/// attends to, and aggregates from, node `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    /// `[N × (4 + TEAM_ENCODING_WIDTH)]`: pos_x, pos_y, v_x, v_y, team one-hot.
    pub node_features: Tensor,
    pub edges: Vec<(usize, usize)>,
    /// Euclidean distance per edge, meters.
    pub edge_distance: Vec<f64>,
}

impl SceneGraph {
    pub fn nodes(&self) -> usize {
        self.node_features.shape()[0]
    }

    /// Neighbourhood size per node.
    pub fn degree(&self) -> Vec<usize> {
        let mut d = vec![0; self.nodes()];
        for &(i, _) in &self.edges {
            d[i] += 1;
        }
        d
    }

    /// Breadth-first reachability over edges in both directions.
    pub fn is_connected(&self) -> bool {
        let n = self.nodes();
        if n == 0 {
            return true;
        }
        let mut adj = vec![vec![]; n];
        for &(s, t) in &self.edges {
            adj[s].push(t);
            adj[t].push(s);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// One-hot slot per object: 0 for the ball, then teams by ascending id.
pub fn team_slots(team_ids: &[i64]) -> Vec<usize> {
    let mut teams: Vec<i64> = team_ids.iter().copied().filter(|&t| t != BALL_TEAM_ID).collect();
    teams.sort_unstable();
    teams.dedup();
    team_ids
        .iter()
        .map(|&t| {
            if t == BALL_TEAM_ID {
                0
            } else {
                1 + teams.iter().position(|&x| x == t).unwrap_or(0).min(1)
            }
        })
        .collect()
}

/// Edge list for `n` nodes at the given positions.
pub fn edges_for(positions: &[[f64; 2]], rule: EdgeRule) -> Result<Vec<(usize, usize)>> {
    let n = positions.len();
    if n < 2 {
        return Err(Error::Configuration(format!("a scene graph needs >= 2 nodes, got {n}")));
    }
    match rule {
        EdgeRule::FullyConnected => Ok((0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect()),
        EdgeRule::Knn { k } => {
            if k == 0 || k >= n {
                return Err(Error::Parameter(format!("knn needs 0 < k < N, got k={k}, N={n}")));
            }
            let mut edges = Vec::with_capacity(n * k);
            for i in 0..n {
                let mut others: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let d = (positions[j][0] - positions[i][0])
                            .hypot(positions[j][1] - positions[i][1]);
                        (d, j)
                    })
                    .collect();
                others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                edges.extend(others.iter().take(k).map(|&(_, j)| (i, j)));
            }
            Ok(edges)
        }
    }
}

/// Build a graph from one frame `[N × F]` (F ≥ 4: pos_x, pos_y, v_x, v_y).
pub fn build_graph(frame: &Tensor, team_ids: &[i64], rule: EdgeRule) -> Result<SceneGraph> {
    let (n, f) = match *frame.shape() {
        [n, f] if f >= 4 => (n, f),
        _ => {
            return Err(Error::dim(
                "build_graph",
                format!("expected [N × F>=4], got {:?}", frame.shape()),
            ))
        }
    };
    if team_ids.len() != n {
        return Err(Error::dim("build_graph", format!("{} team ids for {n} nodes", team_ids.len())));
    }
    let positions: Vec<[f64; 2]> = (0..n).map(|i| [frame.get(&[i, 0]), frame.get(&[i, 1])]).collect();
    let edges = edges_for(&positions, rule)?;
    let slots = team_slots(team_ids);
    let width = 4 + TEAM_ENCODING_WIDTH;
    let mut data = vec![0.0; n * width];
    for i in 0..n {
        data[i * width..i * width + 4].copy_from_slice(&frame.data()[i * f..i * f + 4]);
        data[i * width + 4 + slots[i]] = 1.0;
    }
    let edge_distance = edges
        .iter()
        .map(|&(s, t)| (positions[s][0] - positions[t][0]).hypot(positions[s][1] - positions[t][1]))
        .collect();
    Ok(SceneGraph {
        node_features: Tensor::from_vec(&[n, width], data),
        edges,
        edge_distance,
    })
}
