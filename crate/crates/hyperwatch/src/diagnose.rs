//! Root-cause localization: start at the worst-scoring sensor and walk
//! hyperedge co-occurrence outward a bounded number of hops.
//!
//! Two sensors are adjacent when some hyperedge contains both, so a hop
//! implicates every sensor that shares a neighborhood with the frontier.
//! Expansion is breadth-first and fully ordered (hop, then edge id, then
//! node id), so the same inputs always implicate the same sensors in the
//! same order.

use thiserror::Error;

use crate::detect::argmax;
use crate::hypergraph::Hypergraph;

#[derive(Debug, Error)]
pub enum DiagnoseError {
    #[error("scores cover {got} sensors, hypergraph has {want}")]
    ScoreMismatch { want: usize, got: usize },
    #[error("no sensors to diagnose")]
    Empty,
}

/// One implicated sensor.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Implicated {
    pub sensor: usize,
    /// Co-occurrence distance from the root.
    pub hop: usize,
    /// Hyperedge through which the sensor was first reached (None at the
    /// root).
    pub via_edge: Option<usize>,
    /// Sensor whose expansion reached this one (None at the root).
    pub parent: Option<usize>,
    /// The sensor's anomaly score at the flagged instant.
    pub score: f64,
}

/// Result of a diagnosis pass, nodes in discovery order (root first).
#[derive(Debug, Clone, serde::Serialize)]
pub struct Diagnosis {
    pub root: usize,
    pub k_hops: usize,
    pub nodes: Vec<Implicated>,
}

/// Highest-scoring sensor, ties toward the lower index.
pub fn root_sensor(scores: &[f64]) -> Result<usize, DiagnoseError> {
    if scores.is_empty() {
        return Err(DiagnoseError::Empty);
    }
    Ok(argmax(scores))
}

/// Breadth-first co-occurrence expansion from the worst sensor. A sensor's
/// hop count is the depth at which it is first reached; `k_hops` of zero
/// returns the root alone.
pub fn diagnose(
    graph: &Hypergraph,
    scores: &[f64],
    k_hops: usize,
) -> Result<Diagnosis, DiagnoseError> {
    if scores.len() != graph.n() {
        return Err(DiagnoseError::ScoreMismatch {
            want: graph.n(),
            got: scores.len(),
        });
    }
    let root = root_sensor(scores)?;
    let mut visited = vec![false; graph.n()];
    visited[root] = true;
    let mut nodes = vec![Implicated {
        sensor: root,
        hop: 0,
        via_edge: None,
        parent: None,
        score: scores[root],
    }];
    let mut frontier = vec![root];
    for hop in 1..=k_hops {
        let mut next = Vec::new();
        for &u in &frontier {
            for &e in graph.node_edges(u) {
                for &v in graph.edge_members(e) {
                    if !visited[v] {
                        visited[v] = true;
                        nodes.push(Implicated {
                            sensor: v,
                            hop,
                            via_edge: Some(e),
                            parent: Some(u),
                            score: scores[v],
                        });
                        next.push(v);
                    }
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(Diagnosis {
        root,
        k_hops,
        nodes,
    })
}

impl Diagnosis {
    pub fn sensors(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.sensor).collect()
    }

    /// Indented tree, children grouped under the sensor that reached them.
    pub fn render_text(&self, names: &[String]) -> String {
        let mut out = String::new();
        let name = |i: usize| {
            names
                .get(i)
                .map(|s| s.as_str())
                .unwrap_or("?")
        };
        out.push_str(&format!(
            "root: sensor {} ({}) score {:.4}\n",
            self.root,
            name(self.root),
            self.nodes[0].score
        ));
        self.render_children(self.root, 1, names, &mut out);
        out
    }

    fn render_children(&self, parent: usize, depth: usize, names: &[String], out: &mut String) {
        for node in &self.nodes {
            if node.parent == Some(parent) {
                let label = names
                    .get(node.sensor)
                    .map(|s| s.as_str())
                    .unwrap_or("?");
                out.push_str(&format!(
                    "{}hop {} via edge {}: sensor {} ({}) score {:.4}\n",
                    "  ".repeat(depth),
                    node.hop,
                    node.via_edge.expect("non-root has an edge"),
                    node.sensor,
                    label,
                    node.score
                ));
                self.render_children(node.sensor, depth + 1, names, out);
            }
        }
    }

    /// Co-occurrence adjacency restricted to the implicated sensors: one
    /// line per sensor listing the implicated sensors it shares a
    /// hyperedge with.
    pub fn render_adjacency(&self, graph: &Hypergraph, names: &[String]) -> String {
        let implicated: Vec<usize> = self.sensors();
        let mut member = vec![false; graph.n()];
        for &s in &implicated {
            member[s] = true;
        }
        let mut out = String::new();
        for &s in &implicated {
            let mut peers: Vec<usize> = Vec::new();
            for &e in graph.node_edges(s) {
                for &v in graph.edge_members(e) {
                    if v != s && member[v] && !peers.contains(&v) {
                        peers.push(v);
                    }
                }
            }
            peers.sort_unstable();
            let label = names.get(s).map(|x| x.as_str()).unwrap_or("?");
            let peer_names: Vec<String> = peers
                .iter()
                .map(|&p| {
                    format!(
                        "{} ({})",
                        p,
                        names.get(p).map(|x| x.as_str()).unwrap_or("?")
                    )
                })
                .collect();
            out.push_str(&format!(
                "sensor {} ({}): {}\n",
                s,
                label,
                if peer_names.is_empty() {
                    "-".to_string()
                } else {
                    peer_names.join(", ")
                }
            ));
        }
        out
    }

    /// Graphviz rendering of the discovery tree; the root is highlighted
    /// and each edge is labeled with the hyperedge that made the hop.
    pub fn render_dot(&self, names: &[String]) -> String {
        let mut out = String::from("digraph diagnosis {\n  rankdir=LR;\n");
        for node in &self.nodes {
            let label = names
                .get(node.sensor)
                .map(|s| s.as_str())
                .unwrap_or("?");
            let style = if node.sensor == self.root {
                ", style=filled, fillcolor=salmon"
            } else {
                ""
            };
            out.push_str(&format!(
                "  s{} [label=\"{}\\nscore {:.3}\"{}];\n",
                node.sensor, label, node.score, style
            ));
        }
        for node in &self.nodes {
            if let (Some(parent), Some(edge)) = (node.parent, node.via_edge) {
                out.push_str(&format!(
                    "  s{} -> s{} [label=\"edge {}\"];\n",
                    parent, node.sensor, edge
                ));
            }
        }
        out.push_str("}\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph() -> Hypergraph {
        // co-occurrence chain 0-1-2-3-4
        Hypergraph::from_edge_members(
            5,
            vec![vec![0, 1], vec![1, 2], vec![2, 3], vec![3, 4]],
        )
        .unwrap()
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn root_is_argmax_with_low_tie() {
        assert_eq!(root_sensor(&[0.5, 2.0, 2.0]).unwrap(), 1);
        assert!(root_sensor(&[]).is_err());
    }

    #[test]
    fn zero_hops_returns_root_alone() {
        let g = path_graph();
        let d = diagnose(&g, &[0.0, 0.0, 5.0, 0.0, 0.0], 0).unwrap();
        assert_eq!(d.root, 2);
        assert_eq!(d.sensors(), vec![2]);
    }

    #[test]
    fn hops_walk_the_chain() {
        let g = path_graph();
        let scores = [9.0, 0.1, 0.2, 0.3, 0.4];
        let d = diagnose(&g, &scores, 1).unwrap();
        assert_eq!(d.sensors(), vec![0, 1]);
        let d = diagnose(&g, &scores, 2).unwrap();
        assert_eq!(d.sensors(), vec![0, 1, 2]);
        assert_eq!(d.nodes[2].hop, 2);
        assert_eq!(d.nodes[2].via_edge, Some(1));
        assert_eq!(d.nodes[2].parent, Some(1));
        let d = diagnose(&g, &scores, 10).unwrap();
        assert_eq!(d.sensors(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn one_hop_equals_union_of_root_edges() {
        let g = Hypergraph::from_edge_members(
            6,
            vec![vec![0, 1, 2], vec![2, 3, 4], vec![4, 5], vec![0, 5]],
        )
        .unwrap();
        let scores = [0.0, 0.0, 7.0, 0.0, 0.0, 0.0];
        let d = diagnose(&g, &scores, 1).unwrap();
        let mut expect: Vec<usize> = g
            .node_edges(2)
            .iter()
            .flat_map(|&e| g.edge_members(e).iter().cloned())
            .collect();
        expect.sort_unstable();
        expect.dedup();
        let mut got = d.sensors();
        got.sort_unstable();
        assert_eq!(got, expect);
    }

    #[test]
    fn implicated_set_grows_monotonically_with_hops() {
        let g = Hypergraph::from_edge_members(
            7,
            vec![
                vec![0, 1, 2],
                vec![2, 3],
                vec![3, 4, 5],
                vec![5, 6],
                vec![0, 6],
            ],
        )
        .unwrap();
        let scores = [1.0, 0.3, 8.0, 0.1, 0.0, 0.2, 0.05];
        let mut prev: Vec<usize> = Vec::new();
        for k in 0..6 {
            let mut cur = diagnose(&g, &scores, k).unwrap().sensors();
            cur.sort_unstable();
            for s in &prev {
                assert!(cur.contains(s), "hop {k} dropped sensor {s}");
            }
            prev = cur;
        }
    }

    #[test]
    fn discovery_depth_is_first_visit() {
        // node 2 is reachable at hop 1 through edge 0 and at hop 2 through
        // the chain; it must be reported once, at hop 1
        let g =
            Hypergraph::from_edge_members(4, vec![vec![0, 1, 2], vec![1, 3], vec![3, 2]]).unwrap();
        let scores = [5.0, 0.0, 0.0, 0.0];
        let d = diagnose(&g, &scores, 3).unwrap();
        let two = d.nodes.iter().find(|n| n.sensor == 2).unwrap();
        assert_eq!(two.hop, 1);
        assert_eq!(d.nodes.iter().filter(|n| n.sensor == 2).count(), 1);
    }

    #[test]
    fn expansion_is_deterministic() {
        let g = Hypergraph::from_edge_members(
            6,
            vec![vec![0, 1, 2], vec![1, 3, 4], vec![2, 4, 5], vec![0, 5]],
        )
        .unwrap();
        let scores = [0.2, 0.9, 0.4, 0.0, 0.1, 0.3];
        let a = diagnose(&g, &scores, 2).unwrap();
        let b = diagnose(&g, &scores, 2).unwrap();
        assert_eq!(a.nodes, b.nodes);
    }

    #[test]
    fn mismatched_scores_are_rejected() {
        let g = path_graph();
        assert!(matches!(
            diagnose(&g, &[1.0, 2.0], 1),
            Err(DiagnoseError::ScoreMismatch { want: 5, got: 2 })
        ));
    }

    #[test]
    fn renderings_name_the_sensors() {
        let g = path_graph();
        let d = diagnose(&g, &[9.0, 0.1, 0.2, 0.3, 0.4], 2).unwrap();
        let nm = names(5);
        let text = d.render_text(&nm);
        assert!(text.contains("root: sensor 0 (s0)"));
        assert!(text.contains("hop 1 via edge 0: sensor 1 (s1)"));
        assert!(text.contains("hop 2 via edge 1: sensor 2 (s2)"));

        let adj = d.render_adjacency(&g, &nm);
        assert!(adj.contains("sensor 0 (s0): 1 (s1)"));
        assert!(adj.contains("sensor 1 (s1): 0 (s0), 2 (s2)"));

        let dot = d.render_dot(&nm);
        assert!(dot.starts_with("digraph"));
        assert_eq!(dot.matches(" -> ").count(), d.nodes.len() - 1);
        assert!(dot.contains("fillcolor=salmon"));
    }
}
