//! Numerically-aware fusion and the four answer heads.
//!
//! Fusion writes the final node states back into the passage at number
//! positions (zeros elsewhere), projects the doubled channel down, and
//! re-encodes. The heads read the fused passage representation M0 and the
//! question representation Q: answer-type classifier, passage/question
//! span pointers, count classifier over 0..=9, and one {zero, plus, minus}
//! sign row per passage number plus the optional appended 100.

use super::encoder::encoder_block;
use super::{BoundParams, ModelConfig, ModelError};
use crate::diffcore::{Real, Tape, Tensor, Var};
use crate::graph::NumGraph;
use crate::textnum::DropExample;

/// Loss-side handles: log-space distributions on the tape.
pub struct HeadVars {
    pub type_log: Var,
    pub p_start_log: Var,
    pub p_end_log: Var,
    pub q_start_log: Var,
    pub q_end_log: Var,
    pub count_log: Var,
    /// R x 3 log distribution; R = passage numbers + appended 100 row.
    pub sign_log: Var,
}

/// Concrete head distributions for decoding and inspection.
#[derive(Debug, Clone)]
pub struct HeadOutputs<S: Real> {
    /// 1 x 4 over {passage span, question span, count, arithmetic};
    /// infeasible types hold probability 0.
    pub type_probs: Tensor<S>,
    pub p_start: Tensor<S>,
    pub p_end: Tensor<S>,
    pub q_start: Tensor<S>,
    pub q_end: Tensor<S>,
    /// 1 x 10 over the count classes 0..=9.
    pub count_probs: Tensor<S>,
    /// R x 3 over {zero, plus, minus} per arithmetic row.
    pub sign_probs: Tensor<S>,
    /// Structural feasibility per answer type.
    pub feasible: [bool; 4],
}

/// The fusion stage: scatter the passage-node states to their token
/// columns, concatenate with MP, project, re-encode.
pub fn fuse<S: Real>(
    tape: &mut Tape<S>,
    params: &BoundParams,
    graph: &NumGraph,
    mp: Var,
    u: Var,
) -> Result<Var, ModelError> {
    let d = tape.value(mp).rows();
    let p_cols = tape.value(mp).cols();
    let n_q = graph.question_node_ids.len();
    let n_total = graph.node_count();
    // Passage nodes occupy the trailing columns of U (graph node order is
    // question-then-passage).
    let p_node_cols: Vec<usize> = (n_q..n_total).collect();
    let token_cols: Vec<usize> = graph
        .passage_node_ids
        .iter()
        .map(|id| graph.nodes[id.0].1.token_index)
        .collect();
    {
        let mut seen = vec![false; p_cols];
        for &c in &token_cols {
            if c >= p_cols {
                return Err(ModelError::Contract(
                    "fusion: node token index outside passage length".into(),
                ));
            }
            if seen[c] {
                return Err(ModelError::Contract(format!(
                    "fusion: duplicate passage token index {c} across nodes"
                )));
            }
            seen[c] = true;
        }
    }
    let u_passage = tape.gather_cols(u, p_node_cols)?;
    let m_num = tape.scatter_cols(u_passage, token_cols, p_cols)?;
    let stacked = tape.concat_rows(mp, m_num)?;
    let projected = tape.matmul(params.get("fuse.w"), stacked)?;
    let projected = tape.add_bias(projected, params.get("fuse.bias"))?;
    encoder_block(tape, params, "modblock", projected, d)
}

/// A two-layer feed-forward head: relu(W1 x + b1) then W2 . + b2.
fn ff_head<S: Real>(
    tape: &mut Tape<S>,
    params: &BoundParams,
    prefix: &str,
    x: Var,
) -> Result<Var, ModelError> {
    let h = tape.matmul(params.get(&format!("{prefix}.w1")), x)?;
    let h = tape.add_bias(h, params.get(&format!("{prefix}.b1")))?;
    let h = tape.relu(h);
    let out = tape.matmul(params.get(&format!("{prefix}.w2")), h)?;
    Ok(tape.add_bias(out, params.get(&format!("{prefix}.b2")))?)
}

/// Stack each column with its zero-padded left and right neighbors,
/// 3d x n. Span pointers read this local window so a position sees the
/// fused states of adjacent tokens (a number's label, a span's boundary).
fn local_window<S: Real>(tape: &mut Tape<S>, x: Var) -> Result<Var, ModelError> {
    let n = tape.value(x).cols();
    let left = if n > 1 {
        let body = tape.gather_cols(x, (0..n - 1).collect())?;
        tape.scatter_cols(body, (1..n).collect(), n)?
    } else {
        let d = tape.value(x).rows();
        tape.constant(Tensor::zeros(d, n))
    };
    let right = if n > 1 {
        let body = tape.gather_cols(x, (1..n).collect())?;
        tape.scatter_cols(body, (0..n - 1).collect(), n)?
    } else {
        let d = tape.value(x).rows();
        tape.constant(Tensor::zeros(d, n))
    };
    let stacked = tape.concat_rows(left, x)?;
    Ok(tape.concat_rows(stacked, right)?)
}

/// Question-span pointer conditioned on the pooled passage representation.
fn q_pointer<S: Real>(
    tape: &mut Tape<S>,
    params: &BoundParams,
    prefix: &str,
    q_window: Var,
    pooled_m0: Var,
) -> Result<Var, ModelError> {
    let base = tape.matmul(params.get(&format!("{prefix}.wq")), q_window)?;
    let cond = tape.matmul(params.get(&format!("{prefix}.wm")), pooled_m0)?;
    let h = tape.add_bias(base, cond)?;
    let h = tape.add_bias(h, params.get(&format!("{prefix}.b1")))?;
    let h = tape.relu(h);
    let out = tape.matmul(params.get(&format!("{prefix}.w2")), h)?;
    Ok(tape.add_bias(out, params.get(&format!("{prefix}.b2")))?)
}

/// Run all answer heads over the fused passage representation and the
/// question encoding.
pub fn heads<S: Real>(
    tape: &mut Tape<S>,
    params: &BoundParams,
    config: &ModelConfig,
    example: &DropExample,
    m0: Var,
    q: Var,
) -> Result<(HeadVars, HeadOutputs<S>), ModelError> {
    let p_len = tape.value(m0).cols();
    let q_len = tape.value(q).cols();
    let sign_rows = example.passage_numbers.len() + usize::from(config.append_hundred);
    let feasible = [true, true, true, sign_rows > 0];
    let type_mask: Vec<bool> = feasible.to_vec();

    let pooled_m0 = tape.mean_cols(m0, (0..p_len).collect())?;
    let pooled_q = tape.mean_cols(q, (0..q_len).collect())?;

    // Answer-type classifier over both pooled representations.
    let type_in = tape.concat_rows(pooled_m0, pooled_q)?;
    let type_logits = ff_head(tape, params, "head.type", type_in)?;
    let type_logits_row = tape.transpose(type_logits);
    let type_probs = tape.row_softmax(type_logits_row, Some(type_mask.clone()))?;
    let type_log = tape.row_log_softmax(type_logits_row, Some(type_mask))?;

    // Passage span pointers over the local window of M0.
    let m0_window = local_window(tape, m0)?;
    let ps_logits = ff_head(tape, params, "head.pstart", m0_window)?;
    let pe_logits = ff_head(tape, params, "head.pend", m0_window)?;
    let p_start = tape.row_softmax(ps_logits, None)?;
    let p_end = tape.row_softmax(pe_logits, None)?;
    let p_start_log = tape.row_log_softmax(ps_logits, None)?;
    let p_end_log = tape.row_log_softmax(pe_logits, None)?;

    // Question span pointers, conditioned on the pooled passage.
    let q_window = local_window(tape, q)?;
    let qs_logits = q_pointer(tape, params, "head.qstart", q_window, pooled_m0)?;
    let qe_logits = q_pointer(tape, params, "head.qend", q_window, pooled_m0)?;
    let q_start = tape.row_softmax(qs_logits, None)?;
    let q_end = tape.row_softmax(qe_logits, None)?;
    let q_start_log = tape.row_log_softmax(qs_logits, None)?;
    let q_end_log = tape.row_log_softmax(qe_logits, None)?;

    // Count classifier over the pooled passage.
    let count_logits = ff_head(tape, params, "head.count", pooled_m0)?;
    let count_row = tape.transpose(count_logits);
    let count_probs = tape.row_softmax(count_row, None)?;
    let count_log = tape.row_log_softmax(count_row, None)?;

    // Sign rows: one per passage number from its fused column, plus the
    // dedicated learned vector for the appended 100.
    let number_cols: Vec<usize> = example
        .passage_numbers
        .iter()
        .map(|n| n.token_index)
        .collect();
    if number_cols.iter().any(|&c| c >= p_len) {
        return Err(ModelError::Contract(
            "sign head: number token index outside passage length".into(),
        ));
    }
    let mut sign_in = tape.gather_cols(m0, number_cols)?;
    if config.append_hundred {
        sign_in = tape.concat_cols(sign_in, params.get("head.sign.hundred"))?;
    }
    let sign_logits = ff_head(tape, params, "head.sign", sign_in)?; // 3 x R
    let sign_rows_var = tape.transpose(sign_logits); // R x 3
    let sign_probs = tape.row_softmax(sign_rows_var, None)?;
    let sign_log = tape.row_log_softmax(sign_rows_var, None)?;

    let outputs = HeadOutputs {
        type_probs: tape.value(type_probs).clone(),
        p_start: tape.value(p_start).clone(),
        p_end: tape.value(p_end).clone(),
        q_start: tape.value(q_start).clone(),
        q_end: tape.value(q_end).clone(),
        count_probs: tape.value(count_probs).clone(),
        sign_probs: tape.value(sign_probs).clone(),
        feasible,
    };
    let vars = HeadVars {
        type_log,
        p_start_log,
        p_end_log,
        q_start_log,
        q_end_log,
        count_log,
        sign_log,
    };
    Ok((vars, outputs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, GraphConfig};
    use crate::model::{ModelConfig, NumNet};
    use crate::textnum::make_example;

    fn toy_config() -> ModelConfig {
        ModelConfig {
            hidden_dim: 12,
            embed_dim: 12,
            head_hidden: 8,
            vocab_size: 50,
            reasoning_steps: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn head_shapes_and_normalization() {
        let model: NumNet<f64> = NumNet::new(toy_config(), 42);
        let ex = make_example(
            "p",
            "q",
            "he made a 26 yard goal and a 22 yard goal",
            "how many more than 3?",
            vec![],
        );
        let graph = build_graph(&ex.question_numbers, &ex.passage_numbers, GraphConfig::default());
        let fwd = model.forward(&ex, &graph).unwrap();
        let out = &fwd.outputs;
        assert_eq!(out.type_probs.shape(), (1, 4));
        assert_eq!(out.p_start.shape(), (1, ex.passage_tokens.len()));
        assert_eq!(out.q_start.shape(), (1, ex.question_tokens.len()));
        assert_eq!(out.count_probs.shape(), (1, 10));
        // Two passage numbers plus the appended 100.
        assert_eq!(out.sign_probs.shape(), (3, 3));
        assert!(out.feasible.iter().all(|&f| f));

        let sum = |t: &Tensor<f64>, row: usize| -> f64 {
            (0..t.cols()).map(|j| t.get(row, j)).sum()
        };
        assert!((sum(&out.type_probs, 0) - 1.0).abs() < 1e-6);
        assert!((sum(&out.p_start, 0) - 1.0).abs() < 1e-6);
        assert!((sum(&out.count_probs, 0) - 1.0).abs() < 1e-6);
        for r in 0..3 {
            assert!((sum(&out.sign_probs, r) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn no_numbers_masks_arithmetic() {
        let mut cfg = toy_config();
        cfg.append_hundred = false;
        let model: NumNet<f64> = NumNet::new(cfg, 42);
        let ex = make_example("p", "q", "the red house is old", "what color?", vec![]);
        let graph = build_graph(&ex.question_numbers, &ex.passage_numbers, GraphConfig::default());
        let fwd = model.forward(&ex, &graph).unwrap();
        assert_eq!(fwd.outputs.sign_probs.rows(), 0);
        assert!(!fwd.outputs.feasible[3]);
        assert_eq!(fwd.outputs.type_probs.get(0, 3), 0.0);
        let s: f64 = (0..4).map(|j| fwd.outputs.type_probs.get(0, j)).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn no_numbers_with_hundred_keeps_one_sign_row() {
        let model: NumNet<f64> = NumNet::new(toy_config(), 42);
        let ex = make_example("p", "q", "the red house is old", "what color?", vec![]);
        let graph = build_graph(&ex.question_numbers, &ex.passage_numbers, GraphConfig::default());
        let fwd = model.forward(&ex, &graph).unwrap();
        assert_eq!(fwd.outputs.sign_probs.rows(), 1);
        assert!(fwd.outputs.feasible[3]);
    }

    #[test]
    fn bypass_matches_manual_baseline_composition() {
        // With use_gnn=false the pipeline must equal encode + heads on MP,
        // bit for bit.
        let mut cfg = toy_config();
        cfg.use_gnn = false;
        let model: NumNet<f64> = NumNet::new(cfg.clone(), 42);
        let ex = make_example(
            "p",
            "q",
            "he made a 26 yard goal and a 22 yard goal",
            "how many more than 3?",
            vec![],
        );
        let graph = build_graph(&ex.question_numbers, &ex.passage_numbers, cfg.graph);
        let fwd = model.forward(&ex, &graph).unwrap();

        let mut tape: Tape<f64> = Tape::new();
        let bound = crate::model::BoundParams::bind_all(&mut tape, &model.params);
        let enc = crate::model::encode(&mut tape, &bound, &model.config, &ex).unwrap();
        let (_, manual) = heads(&mut tape, &bound, &model.config, &ex, enc.mp, enc.q).unwrap();

        assert_eq!(fwd.outputs.type_probs, manual.type_probs);
        assert_eq!(fwd.outputs.p_start, manual.p_start);
        assert_eq!(fwd.outputs.q_end, manual.q_end);
        assert_eq!(fwd.outputs.sign_probs, manual.sign_probs);
    }

    #[test]
    fn gnn_relation_sensitivity() {
        // Perturbing the Greater-PP matrix changes outputs on a graph with
        // a Greater-PP edge and leaves a graph without one untouched.
        let cfg = toy_config();
        let ex_with = make_example("p", "q", "values 6 and 5 here", "which is larger?", vec![]);
        let ex_without = make_example("p", "q", "value 6 only here", "which is larger?", vec![]);
        let mut model: NumNet<f64> = NumNet::new(cfg.clone(), 42);

        let run = |model: &NumNet<f64>, ex: &crate::textnum::DropExample| {
            let graph = build_graph(&ex.question_numbers, &ex.passage_numbers, cfg.graph);
            model.forward(ex, &graph).unwrap().outputs.p_start
        };
        let with_before = run(&model, &ex_with);
        let without_before = run(&model, &ex_without);
        model.params.get_mut("gnn.rel.gt-pp").data_mut()[0] += 0.37;
        let with_after = run(&model, &ex_with);
        let without_after = run(&model, &ex_without);
        assert!(with_before.max_abs_diff(&with_after) > 0.0);
        assert_eq!(without_before, without_after);
    }
}
