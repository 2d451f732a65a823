//! The numerically-aware comparison graph over number occurrences.
//!
//! Every number occurrence in the question and passage becomes a node (one
//! node per occurrence, even for repeated values). Two directed edge
//! families encode pairwise order, both pointing from the larger value to
//! the smaller:
//!
//! * a Greater edge a -> b exists iff n(a) > n(b);
//! * a LowerOrEqual edge a -> b exists iff n(b) <= n(a).
//!
//! At strict inequality the pair carries both a Greater and a LowerOrEqual
//! edge in parallel; at equality only the two LowerOrEqual edges (one each
//! way) exist. For n nodes with d duplicate-value unordered pairs this
//! gives C(n,2) - d Greater edges and C(n,2) + d LowerOrEqual edges.
//!
//! Each edge also records the provenance pairing of its endpoints
//! (question/passage in either order), yielding 8 distinct relation types.

use crate::answer::format_number;
use crate::textnum::{NumberOccurrence, Source};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("node index {index} out of bounds (graph has {len} nodes)")]
    NodeOutOfBounds { index: usize, len: usize },
}

/// Dense 0-based node index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Comparison {
    Greater,
    LowerOrEqual,
}

/// Provenance pairing of an edge's (from, to) endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pairing {
    QQ,
    PP,
    QP,
    PQ,
}

/// One of the 8 edge relation types: comparison kind crossed with the
/// provenance pairing of the endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub comparison: Comparison,
    pub pairing: Pairing,
}

impl Relation {
    /// All 8 relation values in a fixed order.
    pub const ALL: [Relation; 8] = {
        let mut out = [Relation {
            comparison: Comparison::Greater,
            pairing: Pairing::QQ,
        }; 8];
        let comparisons = [Comparison::Greater, Comparison::LowerOrEqual];
        let pairings = [Pairing::QQ, Pairing::PP, Pairing::QP, Pairing::PQ];
        let mut i = 0;
        while i < 2 {
            let mut j = 0;
            while j < 4 {
                out[i * 4 + j] = Relation {
                    comparison: comparisons[i],
                    pairing: pairings[j],
                };
                j += 1;
            }
            i += 1;
        }
        out
    };

    /// Index of this relation in [`Relation::ALL`].
    pub fn index(&self) -> usize {
        let c = match self.comparison {
            Comparison::Greater => 0,
            Comparison::LowerOrEqual => 1,
        };
        let p = match self.pairing {
            Pairing::QQ => 0,
            Pairing::PP => 1,
            Pairing::QP => 2,
            Pairing::PQ => 3,
        };
        c * 4 + p
    }

    /// Short stable name, e.g. "gt-pp" or "le-qp".
    pub fn name(&self) -> String {
        let c = match self.comparison {
            Comparison::Greater => "gt",
            Comparison::LowerOrEqual => "le",
        };
        let p = match self.pairing {
            Pairing::QQ => "qq",
            Pairing::PP => "pp",
            Pairing::QP => "qp",
            Pairing::PQ => "pq",
        };
        format!("{c}-{p}")
    }
}

fn pairing_of(from: Source, to: Source) -> Pairing {
    match (from, to) {
        (Source::Question, Source::Question) => Pairing::QQ,
        (Source::Passage, Source::Passage) => Pairing::PP,
        (Source::Question, Source::Passage) => Pairing::QP,
        (Source::Passage, Source::Question) => Pairing::PQ,
    }
}

/// Ablation switches for graph construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub include_question_numbers: bool,
    pub enable_greater_edges: bool,
    pub enable_lower_equal_edges: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            include_question_numbers: true,
            enable_greater_edges: true,
            enable_lower_equal_edges: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub rel: Relation,
}

/// The comparison graph: nodes in question-then-passage token order, typed
/// directed edges, and the node id partition by provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumGraph {
    pub nodes: Vec<(NodeId, NumberOccurrence)>,
    pub edges: Vec<Edge>,
    pub question_node_ids: Vec<NodeId>,
    pub passage_node_ids: Vec<NodeId>,
    pub config: GraphConfig,
}

impl NumGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].1.value
    }

    pub fn source(&self, id: NodeId) -> Source {
        self.nodes[id.0].1.source
    }

    /// Assemble a graph from explicit parts, recomputing the provenance
    /// partition. Intended for tests and custom topologies; `build_graph`
    /// is the production constructor.
    pub fn from_parts(nodes: Vec<NumberOccurrence>, edges: Vec<Edge>, config: GraphConfig) -> Self {
        let nodes: Vec<(NodeId, NumberOccurrence)> = nodes
            .into_iter()
            .enumerate()
            .map(|(i, n)| (NodeId(i), n))
            .collect();
        let question_node_ids = nodes
            .iter()
            .filter(|(_, n)| n.source == Source::Question)
            .map(|(id, _)| *id)
            .collect();
        let passage_node_ids = nodes
            .iter()
            .filter(|(_, n)| n.source == Source::Passage)
            .map(|(id, _)| *id)
            .collect();
        NumGraph {
            nodes,
            edges,
            question_node_ids,
            passage_node_ids,
            config,
        }
    }

    /// All `(from, relation)` pairs with an edge into `node`, sorted by
    /// source id then relation.
    pub fn neighbors_in(&self, node: NodeId) -> Result<Vec<(NodeId, Relation)>, GraphError> {
        if node.0 >= self.nodes.len() {
            return Err(GraphError::NodeOutOfBounds {
                index: node.0,
                len: self.nodes.len(),
            });
        }
        let mut out: Vec<(NodeId, Relation)> = self
            .edges
            .iter()
            .filter(|e| e.to == node)
            .map(|e| (e.from, e.rel))
            .collect();
        out.sort();
        Ok(out)
    }
}

/// Build the comparison graph over the given number occurrences. Node order
/// is question occurrences in token order (when enabled), then passage
/// occurrences in token order. Self-edges are never added.
pub fn build_graph(
    q_nums: &[NumberOccurrence],
    p_nums: &[NumberOccurrence],
    config: GraphConfig,
) -> NumGraph {
    assert!(
        config.enable_greater_edges || config.enable_lower_equal_edges,
        "at least one edge family must be enabled"
    );
    let mut nodes: Vec<(NodeId, NumberOccurrence)> = Vec::new();
    let mut question_node_ids = Vec::new();
    let mut passage_node_ids = Vec::new();
    if config.include_question_numbers {
        for n in q_nums {
            debug_assert!(n.value.is_finite());
            let id = NodeId(nodes.len());
            question_node_ids.push(id);
            nodes.push((id, n.clone()));
        }
    }
    for n in p_nums {
        debug_assert!(n.value.is_finite());
        let id = NodeId(nodes.len());
        passage_node_ids.push(id);
        nodes.push((id, n.clone()));
    }

    let mut edges = Vec::new();
    for (a, na) in &nodes {
        for (b, nb) in &nodes {
            if a == b {
                continue;
            }
            let pairing = pairing_of(na.source, nb.source);
            if config.enable_greater_edges && na.value > nb.value {
                edges.push(Edge {
                    from: *a,
                    to: *b,
                    rel: Relation {
                        comparison: Comparison::Greater,
                        pairing,
                    },
                });
            }
            if config.enable_lower_equal_edges && nb.value <= na.value {
                edges.push(Edge {
                    from: *a,
                    to: *b,
                    rel: Relation {
                        comparison: Comparison::LowerOrEqual,
                        pairing,
                    },
                });
            }
        }
    }
    NumGraph {
        nodes,
        edges,
        question_node_ids,
        passage_node_ids,
        config,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpFormat {
    Dot,
    Json,
}

/// Render the graph as Graphviz Dot (Greater edges solid, LowerOrEqual
/// dashed) or as a JSON document. Output is deterministic.
pub fn dump_graph(graph: &NumGraph, format: DumpFormat) -> Vec<u8> {
    match format {
        DumpFormat::Dot => dump_dot(graph).into_bytes(),
        DumpFormat::Json => dump_json(graph),
    }
}

fn dump_dot(graph: &NumGraph) -> String {
    let mut out = String::new();
    out.push_str("digraph numbers {\n");
    out.push_str("  label=\"greater: solid, lower-or-equal: dashed\";\n");
    for (id, n) in &graph.nodes {
        let src = match n.source {
            Source::Question => "Q",
            Source::Passage => "P",
        };
        out.push_str(&format!(
            "  n{} [label=\"v{}:{}:{}\"];\n",
            id.0,
            id.0,
            format_number(n.value),
            src
        ));
    }
    for e in &graph.edges {
        let style = match e.rel.comparison {
            Comparison::Greater => "solid",
            Comparison::LowerOrEqual => "dashed",
        };
        out.push_str(&format!(
            "  n{} -> n{} [style={style}];\n",
            e.from.0, e.to.0
        ));
    }
    out.push_str("}\n");
    out
}

fn dump_json(graph: &NumGraph) -> Vec<u8> {
    let nodes: Vec<_> = graph
        .nodes
        .iter()
        .map(|(id, n)| {
            json!({
                "id": id.0,
                "value": n.value,
                "source": match n.source { Source::Question => "question", Source::Passage => "passage" },
            })
        })
        .collect();
    let edges: Vec<_> = graph
        .edges
        .iter()
        .map(|e| {
            json!({
                "from": e.from.0,
                "to": e.to.0,
                "cmp": match e.rel.comparison { Comparison::Greater => "gt", Comparison::LowerOrEqual => "le" },
                "pair": match e.rel.pairing {
                    Pairing::QQ => "qq",
                    Pairing::PP => "pp",
                    Pairing::QP => "qp",
                    Pairing::PQ => "pq",
                },
            })
        })
        .collect();
    let mut bytes =
        serde_json::to_vec_pretty(&json!({ "nodes": nodes, "edges": edges })).expect("graph json");
    bytes.push(b'\n');
    bytes
}
