//! Relation-typed message passing over the number graph.
//!
//! One step: a sigmoid gate scores each node's relatedness, messages flow
//! along incoming edges through one transform matrix per relation type
//! weighted by the sender's gate, the per-node mean over incoming edges is
//! added to a self transform, and ReLU updates the state. K steps extend
//! the reach to K-hop neighborhoods.

use super::encoder::EncodedPairVars;
use super::{BoundParams, ModelError};
use crate::diffcore::{Real, Tape, Tensor, Var};
use crate::graph::{NumGraph, Relation};

/// Constant per-graph matrices driving one reasoning step: for each
/// relation type an N x N selection with [from, to] = 1, plus the inverse
/// incoming-edge counts (0 for isolated nodes, so their message is the
/// zero vector).
pub struct GraphMatrices {
    pub selections: Vec<(Relation, Vec<f64>)>,
    pub inv_degree: Vec<f64>,
    pub n: usize,
}

impl GraphMatrices {
    pub fn build(graph: &NumGraph) -> Self {
        let n = graph.node_count();
        let mut by_rel: Vec<Option<Vec<f64>>> = vec![None; Relation::ALL.len()];
        let mut degree = vec![0usize; n];
        for e in &graph.edges {
            let slot = by_rel[e.rel.index()].get_or_insert_with(|| vec![0.0; n * n]);
            slot[e.from.0 * n + e.to.0] = 1.0;
            degree[e.to.0] += 1;
        }
        let selections = Relation::ALL
            .iter()
            .zip(by_rel)
            .filter_map(|(rel, sel)| sel.map(|s| (*rel, s)))
            .collect();
        let inv_degree = degree
            .iter()
            .map(|&d| if d == 0 { 0.0 } else { 1.0 / d as f64 })
            .collect();
        GraphMatrices {
            selections,
            inv_degree,
            n,
        }
    }
}

/// Initial node states: for each node, the reasoning-space column of its
/// token (question nodes from MQ, passage nodes from MP), in graph node
/// order.
pub fn init_nodes<S: Real>(
    tape: &mut Tape<S>,
    graph: &NumGraph,
    enc: &EncodedPairVars,
) -> Result<Var, ModelError> {
    let q_cols = tape.value(enc.mq).cols();
    let p_cols = tape.value(enc.mp).cols();
    let q_idx: Vec<usize> = graph
        .question_node_ids
        .iter()
        .map(|id| graph.nodes[id.0].1.token_index)
        .collect();
    let p_idx: Vec<usize> = graph
        .passage_node_ids
        .iter()
        .map(|id| graph.nodes[id.0].1.token_index)
        .collect();
    if q_idx.iter().any(|&i| i >= q_cols) || p_idx.iter().any(|&i| i >= p_cols) {
        return Err(ModelError::Contract(
            "graph node token index outside encoded length (trim/graph mismatch)".into(),
        ));
    }
    let q_part = tape.gather_cols(enc.mq, q_idx)?;
    let p_part = tape.gather_cols(enc.mp, p_idx)?;
    Ok(tape.concat_cols(q_part, p_part)?)
}

/// One reasoning step over the node states `v` (d x N).
pub fn reasoning_step<S: Real>(
    tape: &mut Tape<S>,
    params: &BoundParams,
    mats: &GraphMatrices,
    v: Var,
) -> Result<Var, ModelError> {
    let n = mats.n;
    debug_assert_eq!(tape.value(v).cols(), n);

    // Node relatedness gate, 1 x N.
    let gate_logits = tape.matmul(params.get("gnn.gate_w"), v)?;
    let gate_logits = tape.add_bias(gate_logits, params.get("gnn.gate_bias"))?;
    let alpha = tape.sigmoid(gate_logits);

    // Sender-weighted states.
    let weighted = tape.mul_row(v, alpha)?;

    // Sum of relation-transformed messages along each relation's edges.
    let mut message: Option<Var> = None;
    for (rel, sel) in &mats.selections {
        let transformed = tape.matmul(params.get(&format!("gnn.rel.{}", rel.name())), weighted)?;
        let sel_t = tape.constant(Tensor::from_fn(n, n, |i, j| S::of(sel[i * n + j])));
        let routed = tape.matmul(transformed, sel_t)?;
        message = Some(match message {
            Some(m) => tape.add(m, routed)?,
            None => routed,
        });
    }

    let self_part = tape.matmul(params.get("gnn.self_w"), v)?;
    let combined = match message {
        Some(m) => {
            // Mean over incoming edges; isolated nodes keep a zero message.
            let inv = tape.constant(Tensor::from_fn(1, n, |_, j| S::of(mats.inv_degree[j])));
            let normalized = tape.mul_row(m, inv)?;
            tape.add(self_part, normalized)?
        }
        None => self_part,
    };
    let combined = tape.add_bias(combined, params.get("gnn.self_bias"))?;
    Ok(tape.relu(combined))
}

/// K reasoning steps; the final states are the node representations handed
/// to fusion.
pub fn reason_k<S: Real>(
    tape: &mut Tape<S>,
    params: &BoundParams,
    mats: &GraphMatrices,
    v0: Var,
    k: usize,
) -> Result<Var, ModelError> {
    assert!(k >= 1, "reasoning needs at least one step");
    let mut v = v0;
    for _ in 0..k {
        v = reasoning_step(tape, params, mats, v)?;
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, Comparison, Edge, GraphConfig, NodeId, Pairing};
    use crate::model::{BoundParams, ModelConfig, NumNet};
    use crate::textnum::{NumberOccurrence, Source};

    fn passage_nums(values: &[f64]) -> Vec<NumberOccurrence> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| NumberOccurrence {
                value: v,
                token_index: i,
                source: Source::Passage,
            })
            .collect()
    }

    fn toy_model(d: usize) -> NumNet<f64> {
        NumNet::new(
            ModelConfig {
                hidden_dim: d,
                embed_dim: d,
                head_hidden: d,
                vocab_size: 50,
                ..ModelConfig::default()
            },
            42,
        )
    }

    /// Drive one reasoning step on explicit states without the encoder.
    fn step_states(
        model: &NumNet<f64>,
        graph: &NumGraph,
        states: &Tensor<f64>,
        steps: usize,
    ) -> Tensor<f64> {
        let mut tape: Tape<f64> = Tape::new();
        let bound = BoundParams::bind_all(&mut tape, &model.params);
        let v0 = tape.constant(states.clone());
        let mats = GraphMatrices::build(graph);
        let u = reason_k(&mut tape, &bound, &mats, v0, steps).unwrap();
        tape.value(u).clone()
    }

    #[test]
    fn isolated_node_gets_zero_message() {
        let d = 4;
        let model = toy_model(d);
        let graph = build_graph(&[], &passage_nums(&[5.0]), GraphConfig::default());
        let states = Tensor::from_fn(d, 1, |i, _| 0.3 * (i as f64 + 1.0));
        let out = step_states(&model, &graph, &states, 1);

        // Expected: relu(W_f v + b_f), no message term.
        let wf = model.params.get("gnn.self_w");
        let bf = model.params.get("gnn.self_bias");
        for i in 0..d {
            let mut acc = bf.get(i, 0);
            for j in 0..d {
                acc += wf.get(i, j) * states.get(j, 0);
            }
            let expected = acc.max(0.0);
            assert!((out.get(i, 0) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn two_node_message_hand_computed() {
        // Values {6, 5}: node 1 receives node 0's state through both the
        // Greater-PP and LowerOrEqual-PP matrices, averaged over its two
        // incoming edges. Node 0 receives nothing.
        let d = 2;
        let model = toy_model(d);
        let graph = build_graph(&[], &passage_nums(&[6.0, 5.0]), GraphConfig::default());
        let states = Tensor::from_vec(d, 2, vec![0.7, -0.2, 0.1, 0.4]).unwrap();
        let out = step_states(&model, &graph, &states, 1);

        let get_col = |t: &Tensor<f64>, j: usize| (0..d).map(|i| t.get(i, j)).collect::<Vec<f64>>();
        let v0 = get_col(&states, 0);
        let v1 = get_col(&states, 1);
        let wv = model.params.get("gnn.gate_w");
        let bv = model.params.get("gnn.gate_bias").get(0, 0);
        let alpha0 = {
            let z: f64 = (0..d).map(|j| wv.get(0, j) * v0[j]).sum::<f64>() + bv;
            1.0 / (1.0 + (-z).exp())
        };
        let wgt = model.params.get("gnn.rel.gt-pp");
        let wle = model.params.get("gnn.rel.le-pp");
        let wf = model.params.get("gnn.self_w");
        let bf = model.params.get("gnn.self_bias");
        let matvec = |w: &Tensor<f64>, x: &[f64]| {
            (0..d)
                .map(|i| (0..d).map(|j| w.get(i, j) * x[j]).sum::<f64>())
                .collect::<Vec<f64>>()
        };
        let m_gt = matvec(wgt, &v0);
        let m_le = matvec(wle, &v0);
        let self1 = matvec(wf, &v1);
        for i in 0..d {
            let msg = (alpha0 * m_gt[i] + alpha0 * m_le[i]) / 2.0;
            let expected = (self1[i] + msg + bf.get(i, 0)).max(0.0);
            assert!(
                (out.get(i, 1) - expected).abs() < 1e-12,
                "row {i}: {} vs {expected}",
                out.get(i, 1)
            );
        }
        // Node 0 has no incoming edges.
        let self0 = matvec(wf, &v0);
        for i in 0..d {
            let expected = (self0[i] + bf.get(i, 0)).max(0.0);
            assert!((out.get(i, 0) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_states_zero_biases_give_zero() {
        let d = 3;
        let mut model = toy_model(d);
        // Zero the gate bias and self bias so sigmoid(0)=0.5 and the
        // entire update collapses to relu(0)=0.
        for name in ["gnn.gate_bias", "gnn.self_bias"] {
            let t = model.params.get_mut(name);
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let graph = build_graph(&[], &passage_nums(&[2.0, 9.0]), GraphConfig::default());
        let states = Tensor::zeros(d, 2);
        let out = step_states(&model, &graph, &states, 1);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn k_one_equals_single_step() {
        let d = 4;
        let model = toy_model(d);
        let graph = build_graph(&[], &passage_nums(&[1.0, 2.0, 3.0]), GraphConfig::default());
        let states = Tensor::from_fn(d, 3, |i, j| 0.1 * (i as f64) - 0.2 * (j as f64));
        assert_eq!(
            step_states(&model, &graph, &states, 1),
            step_states(&model, &graph, &states, 1)
        );
    }

    #[test]
    fn k_two_composes_two_steps() {
        let d = 4;
        let model = toy_model(d);
        let graph = build_graph(&[], &passage_nums(&[1.0, 5.0, 3.0]), GraphConfig::default());
        let states = Tensor::from_fn(d, 3, |i, j| 0.3 * (i as f64) - 0.1 * (j as f64));
        let once = step_states(&model, &graph, &states, 1);
        let twice_manual = step_states(&model, &graph, &once, 1);
        let twice = step_states(&model, &graph, &states, 2);
        assert_eq!(twice, twice_manual);
    }

    #[test]
    fn permuting_nodes_permutes_outputs() {
        // Relabel node identities with a consistent permutation of states
        // and edges; the output columns permute identically.
        let d = 3;
        let model = toy_model(d);
        let values = [4.0, 9.0, 1.0];
        let graph = build_graph(&[], &passage_nums(&values), GraphConfig::default());
        let states = Tensor::from_fn(d, 3, |i, j| 0.2 * (i as f64 + 1.0) * (j as f64 - 1.0));
        let base = step_states(&model, &graph, &states, 2);

        let perm = [2usize, 0, 1]; // new position of old node i
        let mut perm_nodes = vec![
            NumberOccurrence { value: 0.0, token_index: 0, source: Source::Passage };
            3
        ];
        for (old, &new) in perm.iter().enumerate() {
            perm_nodes[new] = NumberOccurrence {
                value: values[old],
                token_index: old,
                source: Source::Passage,
            };
        }
        let perm_edges: Vec<Edge> = graph
            .edges
            .iter()
            .map(|e| Edge {
                from: NodeId(perm[e.from.0]),
                to: NodeId(perm[e.to.0]),
                rel: e.rel,
            })
            .collect();
        let perm_graph = NumGraph::from_parts(perm_nodes, perm_edges, GraphConfig::default());
        let perm_states = Tensor::from_fn(d, 3, |i, j| {
            let old = perm.iter().position(|&p| p == j).unwrap();
            states.get(i, old)
        });
        let permuted = step_states(&model, &perm_graph, &perm_states, 2);
        for j in 0..3 {
            for i in 0..d {
                assert!((base.get(i, j) - permuted.get(i, perm[j])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reach_is_bounded_by_k() {
        // Path graph 0 -> 1 -> 2 -> 3: zeroing a node more than K hops
        // upstream of the target leaves the target's column bitwise
        // unchanged; within K hops it changes.
        let d = 4;
        let model = toy_model(d);
        let nodes = passage_nums(&[1.0, 2.0, 3.0, 4.0]);
        let edges: Vec<Edge> = (0..3)
            .map(|i| Edge {
                from: NodeId(i),
                to: NodeId(i + 1),
                rel: crate::graph::Relation {
                    comparison: Comparison::Greater,
                    pairing: Pairing::PP,
                },
            })
            .collect();
        let graph = NumGraph::from_parts(nodes, edges, GraphConfig::default());
        let states = Tensor::from_fn(d, 4, |i, j| 0.4 * (i as f64 + 1.0) + 0.3 * (j as f64 + 1.0));
        let target = 3usize;
        for k in 1..=3usize {
            let base = step_states(&model, &graph, &states, k);
            for upstream in 0..3usize {
                let hops = target - upstream;
                let mut zeroed = states.clone();
                for i in 0..d {
                    zeroed.set(i, upstream, 0.0);
                }
                let out = step_states(&model, &graph, &zeroed, k);
                let diff: f64 = (0..d)
                    .map(|i| (out.get(i, target) - base.get(i, target)).abs())
                    .sum();
                if hops > k {
                    assert_eq!(diff, 0.0, "k={k} hops={hops}");
                } else {
                    assert!(diff > 0.0, "k={k} hops={hops}");
                }
            }
        }
    }
}
