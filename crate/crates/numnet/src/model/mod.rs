//! The end-to-end differentiable network: simplified encoder, projection to
//! the reasoning space, relation-typed graph reasoning over number nodes,
//! numerically-aware fusion back into the passage representation, and the
//! four answer heads with their weakly supervised marginal objective.

mod encoder;
mod gnn;
mod heads;
mod loss;

pub use encoder::{encode, EncodedPairVars};
pub use gnn::{init_nodes, reason_k, reasoning_step, GraphMatrices};
pub use heads::{fuse, heads, HeadOutputs, HeadVars};
pub use loss::marginal_loss;

use crate::answer::AnswerError;
use crate::diffcore::{DiffError, ParamStore, Real, Tape, Tensor, Var};
use crate::graph::{GraphConfig, NumGraph, Relation};
use crate::rng::{hash64, RngStream};
use crate::textnum::DropExample;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Answer(#[from] AnswerError),
    #[error("contract error: {0}")]
    Contract(String),
}

/// Hyperparameters and ablation switches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Representation width shared by every component.
    pub hidden_dim: usize,
    /// Number of graph reasoning steps K.
    pub reasoning_steps: usize,
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Hidden width of the answer heads.
    pub head_hidden: usize,
    pub graph: GraphConfig,
    /// false switches to the bypass path where the passage representation
    /// feeds the heads directly (no graph reasoning, no fusion).
    pub use_gnn: bool,
    /// Drop question-span candidates from the training marginal when
    /// passage-span candidates exist.
    pub passage_preferred: bool,
    /// Append a virtual 100 to the arithmetic number list.
    pub append_hundred: bool,
    pub max_span_len: usize,
    pub max_nonzero_signs: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 128,
            reasoning_steps: 3,
            vocab_size: 8192,
            embed_dim: 128,
            head_hidden: 128,
            graph: GraphConfig::default(),
            use_gnn: true,
            passage_preferred: true,
            append_hundred: true,
            max_span_len: 8,
            max_nonzero_signs: 3,
        }
    }
}

impl ModelConfig {
    pub fn supervision_config(&self) -> crate::answer::SupervisionConfig {
        crate::answer::SupervisionConfig {
            max_nonzero_signs: self.max_nonzero_signs,
            append_hundred: self.append_hundred,
            max_span_len: self.max_span_len,
            sum_tolerance: 1e-5,
        }
    }

    pub fn decode_config(&self) -> crate::answer::DecodeConfig {
        crate::answer::DecodeConfig {
            max_span_len: self.max_span_len,
            append_hundred: self.append_hundred,
        }
    }

    /// Stable fingerprint of the configuration.
    pub fn hash(&self) -> u64 {
        hash64(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// Map a token to its embedding column via a stable hash of its lowercased
/// surface. Hashing removes the need to persist a vocabulary next to the
/// checkpoint; collisions simply share an embedding slot.
pub fn vocab_id(text: &str, vocab_size: usize) -> usize {
    (hash64(text.to_lowercase().as_bytes()) % vocab_size as u64) as usize
}

/// The model: configuration plus named parameters.
pub struct NumNet<S: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<S>,
}

/// One complete forward pass: the tape it was recorded on, the loss-side
/// variables, and the concrete head distributions.
pub struct Forward<S: Real> {
    pub tape: Tape<S>,
    pub head_vars: HeadVars,
    pub outputs: HeadOutputs<S>,
    /// Row softmax of the passage-to-question attention (for inspection).
    pub p2q_attention: Tensor<S>,
}

/// Parameter leaves bound onto a tape, one per name.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn bind_all<S: Real>(tape: &mut Tape<S>, params: &ParamStore<S>) -> Self {
        let mut vars = BTreeMap::new();
        for (name, entry) in params.iter() {
            vars.insert(name.clone(), tape.param(name, entry.value.clone()));
        }
        BoundParams { vars }
    }

    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter '{name}'"))
    }
}

/// Record one full forward pass for an example and its graph.
pub fn run_forward<S: Real>(
    config: &ModelConfig,
    params: &ParamStore<S>,
    example: &DropExample,
    graph: &NumGraph,
) -> Result<Forward<S>, ModelError> {
    if example.passage_tokens.is_empty() || example.question_tokens.is_empty() {
        return Err(ModelError::Contract(
            "empty passage or question (must be rejected at ingestion)".into(),
        ));
    }
    let mut tape: Tape<S> = Tape::new();
    let bound = BoundParams::bind_all(&mut tape, params);
    let enc = encode(&mut tape, &bound, config, example)?;

    let m0 = if config.use_gnn {
        let v0 = init_nodes(&mut tape, graph, &enc)?;
        let mats = GraphMatrices::build(graph);
        let u = reason_k(&mut tape, &bound, &mats, v0, config.reasoning_steps)?;
        fuse(&mut tape, &bound, graph, enc.mp, u)?
    } else {
        // Bypass: the heads read the passage representation directly.
        enc.mp
    };

    let (head_vars, outputs) = heads(&mut tape, &bound, config, example, m0, enc.q)?;
    let p2q_attention = tape.value(enc.p2q_attn).clone();
    Ok(Forward {
        tape,
        head_vars,
        outputs,
        p2q_attention,
    })
}

impl<S: Real> NumNet<S> {
    /// Initialize parameters from the labeled "init" stream of `seed`:
    /// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for matrices, zeros for
    /// biases.
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = RngStream::new(seed, "init", 0);
        let mut params = ParamStore::new();
        let d = config.hidden_dim;
        let de = config.embed_dim;
        let h = config.head_hidden;

        let mut mat = |params: &mut ParamStore<S>, name: &str, r: usize, c: usize| {
            let bound = 1.0 / (c as f64).sqrt();
            let t = Tensor::from_fn(r, c, |_, _| S::of(rng.uniform(-bound, bound)));
            params.insert(name, t);
        };
        let bias = |params: &mut ParamStore<S>, name: &str, r: usize| {
            params.insert(name, Tensor::zeros(r, 1));
        };

        mat(&mut params, "embed.table", de, config.vocab_size);
        mat(&mut params, "embed.proj", d, de);
        for block in ["encblock", "modblock"] {
            mat(&mut params, &format!("{block}.attn_q"), d, d);
            mat(&mut params, &format!("{block}.attn_k"), d, d);
            mat(&mut params, &format!("{block}.attn_v"), d, d);
            mat(&mut params, &format!("{block}.ff1"), d, d);
            bias(&mut params, &format!("{block}.ff1_bias"), d);
            mat(&mut params, &format!("{block}.ff2"), d, d);
            bias(&mut params, &format!("{block}.ff2_bias"), d);
        }
        mat(&mut params, "attn.w_passage", 1, d);
        mat(&mut params, "attn.w_question", 1, d);
        mat(&mut params, "attn.w_product", d, 1);
        mat(&mut params, "proj.shared", d, d);

        mat(&mut params, "gnn.gate_w", 1, d);
        bias(&mut params, "gnn.gate_bias", 1);
        for rel in Relation::ALL {
            mat(&mut params, &format!("gnn.rel.{}", rel.name()), d, d);
        }
        mat(&mut params, "gnn.self_w", d, d);
        bias(&mut params, "gnn.self_bias", d);

        mat(&mut params, "fuse.w", d, 2 * d);
        bias(&mut params, "fuse.bias", d);

        mat(&mut params, "head.type.w1", h, 2 * d);
        bias(&mut params, "head.type.b1", h);
        mat(&mut params, "head.type.w2", 4, h);
        bias(&mut params, "head.type.b2", 4);
        // Span pointers read a 3-column local window, hence 3d inputs.
        for side in ["pstart", "pend"] {
            mat(&mut params, &format!("head.{side}.w1"), h, 3 * d);
            bias(&mut params, &format!("head.{side}.b1"), h);
            mat(&mut params, &format!("head.{side}.w2"), 1, h);
            bias(&mut params, &format!("head.{side}.b2"), 1);
        }
        for side in ["qstart", "qend"] {
            mat(&mut params, &format!("head.{side}.wq"), h, 3 * d);
            mat(&mut params, &format!("head.{side}.wm"), h, d);
            bias(&mut params, &format!("head.{side}.b1"), h);
            mat(&mut params, &format!("head.{side}.w2"), 1, h);
            bias(&mut params, &format!("head.{side}.b2"), 1);
        }
        mat(&mut params, "head.count.w1", h, d);
        bias(&mut params, "head.count.b1", h);
        mat(&mut params, "head.count.w2", 10, h);
        bias(&mut params, "head.count.b2", 10);
        mat(&mut params, "head.sign.w1", h, d);
        bias(&mut params, "head.sign.b1", h);
        mat(&mut params, "head.sign.w2", 3, h);
        bias(&mut params, "head.sign.b2", 3);
        params.insert(
            "head.sign.hundred",
            Tensor::from_fn(d, 1, |_, _| {
                S::of(rng.uniform(-1.0 / (d as f64).sqrt(), 1.0 / (d as f64).sqrt()))
            }),
        );

        NumNet { config, params }
    }

    /// Record one full forward pass for an example and its graph.
    pub fn forward(
        &self,
        example: &DropExample,
        graph: &NumGraph,
    ) -> Result<Forward<S>, ModelError> {
        run_forward(&self.config, &self.params, example, graph)
    }
}
