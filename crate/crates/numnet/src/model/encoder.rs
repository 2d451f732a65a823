//! Simplified encoder honoring the contract of the full pipeline's front
//! end: trainable hashed embeddings plus a sinusoidal position signal and
//! one self-attention / feed-forward block produce Q and P; a trilinear
//! context-query attention produces the question-aware passage and
//! passage-aware question; a shared projection and a second (shared) block
//! produce the reasoning-space representations MQ and MP.

use super::{BoundParams, ModelConfig, ModelError};
use crate::diffcore::{Real, Tape, Tensor, Var};
use crate::model::vocab_id;
use crate::textnum::{DropExample, Token};

/// Tape handles for the encoded pair.
pub struct EncodedPairVars {
    pub q: Var,
    pub p: Var,
    pub qbar: Var,
    pub pbar: Var,
    pub mq: Var,
    pub mp: Var,
    /// Row-softmaxed passage-to-question attention (|p| x |q|).
    pub p2q_attn: Var,
}

fn token_ids(tokens: &[Token], vocab_size: usize) -> Vec<usize> {
    tokens.iter().map(|t| vocab_id(&t.text, vocab_size)).collect()
}

/// Sinusoidal position signal, d x n.
fn position_signal<S: Real>(d: usize, n: usize) -> Tensor<S> {
    Tensor::from_fn(d, n, |i, j| {
        let pair = (i / 2) as f64;
        let angle = j as f64 / 10000f64.powf(2.0 * pair / d as f64);
        if i % 2 == 0 {
            S::of(angle.sin())
        } else {
            S::of(angle.cos())
        }
    })
}

/// Embed one token sequence and run it through the shared embedding
/// encoder block.
fn embed_side<S: Real>(
    tape: &mut Tape<S>,
    params: &BoundParams,
    config: &ModelConfig,
    tokens: &[Token],
) -> Result<Var, ModelError> {
    let ids = token_ids(tokens, config.vocab_size);
    let raw = tape.embedding_lookup(params.get("embed.table"), ids)?;
    let projected = tape.matmul(params.get("embed.proj"), raw)?;
    let pos = tape.constant(position_signal(config.hidden_dim, tokens.len()));
    let x = tape.add(projected, pos)?;
    encoder_block(tape, params, "encblock", x, config.hidden_dim)
}

/// One self-attention + feed-forward block with residual connections.
pub(super) fn encoder_block<S: Real>(
    tape: &mut Tape<S>,
    params: &BoundParams,
    prefix: &str,
    x: Var,
    d: usize,
) -> Result<Var, ModelError> {
    let q = tape.matmul(params.get(&format!("{prefix}.attn_q")), x)?;
    let k = tape.matmul(params.get(&format!("{prefix}.attn_k")), x)?;
    let v = tape.matmul(params.get(&format!("{prefix}.attn_v")), x)?;
    let qt = tape.transpose(q);
    let scores = tape.matmul(qt, k)?;
    let scaled = tape.scale(scores, S::of(1.0 / (d as f64).sqrt()));
    let attn = tape.row_softmax(scaled, None)?;
    let attn_t = tape.transpose(attn);
    let mixed = tape.matmul(v, attn_t)?;
    let h = tape.add(x, mixed)?;
    let f1 = tape.matmul(params.get(&format!("{prefix}.ff1")), h)?;
    let f1 = tape.add_bias(f1, params.get(&format!("{prefix}.ff1_bias")))?;
    let f1 = tape.relu(f1);
    let f2 = tape.matmul(params.get(&format!("{prefix}.ff2")), f1)?;
    let f2 = tape.add_bias(f2, params.get(&format!("{prefix}.ff2_bias")))?;
    Ok(tape.add(h, f2)?)
}

/// Full encoding pass for one example.
pub fn encode<S: Real>(
    tape: &mut Tape<S>,
    params: &BoundParams,
    config: &ModelConfig,
    example: &DropExample,
) -> Result<EncodedPairVars, ModelError> {
    let q = embed_side(tape, params, config, &example.question_tokens)?;
    let p = embed_side(tape, params, config, &example.passage_tokens)?;

    // Trilinear similarity s_ij = w_p.p_i + w_q.q_j + w_x.(p_i * q_j),
    // assembled as rank-one row/column broadcasts plus a weighted product.
    let sp = tape.matmul(params.get("attn.w_passage"), p)?; // 1 x |p|
    let sq = tape.matmul(params.get("attn.w_question"), q)?; // 1 x |q|
    let pw = tape.mul_col(p, params.get("attn.w_product"))?;
    let pwt = tape.transpose(pw);
    let s3 = tape.matmul(pwt, q)?; // |p| x |q|
    let sp_t = tape.transpose(sp);
    let s = tape.add_bias(s3, sp_t)?;
    let s = tape.add_row(s, sq)?;

    // Question-aware passage: each passage position keeps its own content
    // and folds in the attended question summary additively and
    // multiplicatively (the product term lights up where the question
    // mentions the token).
    let p2q = tape.row_softmax(s, None)?;
    let p2q_t = tape.transpose(p2q);
    let attended_q = tape.matmul(q, p2q_t)?; // d x |p|
    let p_gate = tape.mul(p, attended_q)?;
    let pbar = tape.add(p, attended_q)?;
    let pbar = tape.add(pbar, p_gate)?;

    // Passage-aware question, symmetrically.
    let st = tape.transpose(s);
    let q2p = tape.row_softmax(st, None)?;
    let q2p_t = tape.transpose(q2p);
    let attended_p = tape.matmul(p, q2p_t)?; // d x |q|
    let q_gate = tape.mul(q, attended_p)?;
    let qbar = tape.add(q, attended_p)?;
    let qbar = tape.add(qbar, q_gate)?;

    // Shared projection into the reasoning space, then the shared model
    // encoder block.
    let wm = params.get("proj.shared");
    let mq_in = tape.matmul(wm, qbar)?;
    let mp_in = tape.matmul(wm, pbar)?;
    let mq = encoder_block(tape, params, "modblock", mq_in, config.hidden_dim)?;
    let mp = encoder_block(tape, params, "modblock", mp_in, config.hidden_dim)?;

    Ok(EncodedPairVars {
        q,
        p,
        qbar,
        pbar,
        mq,
        mp,
        p2q_attn: p2q,
    })
}
