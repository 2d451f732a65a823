//! Batch training and prediction drivers.
//!
//! Per epoch: seeded shuffle (one labeled sub-stream per epoch, so a
//! resumed run replays the exact stream), mini-batches with averaged
//! gradients, global-norm clipping at 5, an Adam step, and an EMA update.
//! Evaluation may run with the EMA shadows swapped in. Examples with no
//! derivable supervision are skipped up front with a logged count.

use crate::answer::{decode, enumerate_supervision, SupervisionSet};
use crate::diffcore::{
    adam_step, clip_gradients, AdamConfig, DiffError, Gradients, Real,
};
use crate::graph::{build_graph, NumGraph};
use crate::metrics::{evaluate, MetricError, MetricReport, PredictionRecord};
use crate::model::{marginal_loss, ModelError, NumNet};
use crate::rng::RngStream;
use crate::textnum::{trim, Corpus, DropExample};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("no trainable example (every example lacks derivable supervision)")]
    NoTrainableExamples,
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NanLoss { epoch: u64, batch: usize },
}

/// Optimization settings; defaults follow the training protocol the model
/// ships with.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub ema_decay: f64,
    pub batch_size: usize,
    pub epochs: u64,
    pub train_passage_limit: usize,
    pub train_question_limit: usize,
    pub predict_passage_limit: usize,
    pub predict_question_limit: usize,
    pub seed: u64,
    pub eval_with_ema: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            beta1: 0.8,
            beta2: 0.999,
            eps: 1e-7,
            weight_decay: 1e-7,
            clip_norm: 5.0,
            ema_decay: 0.9999,
            batch_size: 16,
            epochs: 40,
            train_passage_limit: 400,
            train_question_limit: 50,
            predict_passage_limit: 1000,
            predict_question_limit: 100,
            seed: 42,
            eval_with_ema: true,
        }
    }
}

impl TrainConfig {
    fn adam<S: Real>(&self) -> AdamConfig<S> {
        AdamConfig {
            lr: S::of(self.lr),
            beta1: S::of(self.beta1),
            beta2: S::of(self.beta2),
            eps: S::of(self.eps),
            weight_decay: S::of(self.weight_decay),
        }
    }
}

/// A trimmed example with its graph and (for training) supervision.
pub struct PreparedExample {
    pub example: DropExample,
    pub graph: NumGraph,
    pub supervision: SupervisionSet,
}

/// Trim, build graphs, and enumerate supervision for a training corpus.
/// Returns the trainable examples and the skipped (no-supervision) count.
pub fn prepare_training<S: Real>(
    model: &NumNet<S>,
    corpus: &Corpus,
    cfg: &TrainConfig,
) -> (Vec<PreparedExample>, usize) {
    let sup_cfg = model.config.supervision_config();
    let mut prepared = Vec::with_capacity(corpus.len());
    let mut skipped = 0usize;
    for ex in &corpus.examples {
        let trimmed = trim(ex, cfg.train_passage_limit, cfg.train_question_limit);
        let supervision = enumerate_supervision(&trimmed, &sup_cfg);
        if supervision.is_empty() {
            skipped += 1;
            continue;
        }
        let graph = build_graph(
            &trimmed.question_numbers,
            &trimmed.passage_numbers,
            model.config.graph,
        );
        prepared.push(PreparedExample {
            example: trimmed,
            graph,
            supervision,
        });
    }
    (prepared, skipped)
}

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: u64,
    pub mean_loss: f64,
    pub dev: Option<MetricReport>,
}

/// Train in place for epochs `start_epoch+1 ..= cfg.epochs`, invoking
/// `on_epoch` after each epoch (checkpointing lives in the caller).
pub fn train<S: Real>(
    model: &mut NumNet<S>,
    prepared: &[PreparedExample],
    dev: Option<&Corpus>,
    cfg: &TrainConfig,
    start_epoch: u64,
    mut on_epoch: impl FnMut(&EpochLog, &mut NumNet<S>) -> Result<bool, TrainError>,
) -> Result<Vec<EpochLog>, TrainError> {
    if prepared.is_empty() {
        return Err(TrainError::NoTrainableExamples);
    }
    let mut logs = Vec::new();
    for epoch in start_epoch + 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        RngStream::new(cfg.seed, "shuffle", epoch).shuffle(&mut order);

        let mut loss_sum = 0.0;
        for (batch_index, batch) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let mut accum: Option<Gradients<S>> = None;
            for &idx in batch {
                let item = &prepared[idx];
                let mut fwd = model.forward(&item.example, &item.graph)?;
                let loss_var = marginal_loss(
                    &mut fwd.tape,
                    &fwd.head_vars,
                    &item.supervision,
                    model.config.passage_preferred,
                )?;
                let loss = fwd.tape.value(loss_var).item().as_f64();
                if !loss.is_finite() {
                    return Err(TrainError::NanLoss { epoch, batch: batch_index });
                }
                loss_sum += loss;
                let grads = fwd.tape.backward(loss_var)?;
                match &mut accum {
                    None => accum = Some(grads),
                    Some(acc) => {
                        for (name, g) in grads {
                            acc.get_mut(&name)
                                .expect("gradient names are stable")
                                .add_assign_scaled(&g, S::one());
                        }
                    }
                }
            }
            let mut grads = accum.expect("non-empty batch");
            let inv = S::of(1.0 / batch.len() as f64);
            for g in grads.values_mut() {
                for v in g.data_mut() {
                    *v *= inv;
                }
            }
            clip_gradients(&mut grads, cfg.clip_norm);
            adam_step(&mut model.params, &grads, &cfg.adam())?;
            model.params.ema_update(S::of(cfg.ema_decay));
        }

        let dev_report = match dev {
            Some(corpus) => Some(evaluate_model(model, corpus, cfg)?),
            None => None,
        };
        let log = EpochLog {
            epoch,
            mean_loss: loss_sum / prepared.len() as f64,
            dev: dev_report,
        };
        let stop = !on_epoch(&log, model)?;
        logs.push(log);
        if stop {
            break;
        }
    }
    Ok(logs)
}

/// Decode predictions for a corpus with prediction-time trimming, using
/// EMA weights when configured.
pub fn predict<S: Real>(
    model: &mut NumNet<S>,
    corpus: &Corpus,
    cfg: &TrainConfig,
) -> Result<Vec<PredictionRecord>, TrainError> {
    let use_ema = cfg.eval_with_ema;
    if use_ema {
        model.params.ema_swap_in()?;
    }
    let result = predict_inner(model, corpus, cfg);
    if use_ema {
        model.params.ema_swap_out()?;
    }
    result
}

fn predict_inner<S: Real>(
    model: &NumNet<S>,
    corpus: &Corpus,
    cfg: &TrainConfig,
) -> Result<Vec<PredictionRecord>, TrainError> {
    let decode_cfg = model.config.decode_config();
    let mut records = Vec::with_capacity(corpus.len());
    for ex in &corpus.examples {
        let trimmed = trim(ex, cfg.predict_passage_limit, cfg.predict_question_limit);
        let graph = build_graph(
            &trimmed.question_numbers,
            &trimmed.passage_numbers,
            model.config.graph,
        );
        let fwd = model.forward(&trimmed, &graph)?;
        let prediction = decode(&fwd.outputs, &trimmed, &graph, &decode_cfg);
        records.push(PredictionRecord {
            query_id: trimmed.query_id.clone(),
            answer_type: prediction.answer_type.name().to_string(),
            text: prediction.text.clone(),
            payload: serde_json::to_value(&prediction.payload).expect("payload serializes"),
        });
    }
    Ok(records)
}

/// Predict and score a corpus.
pub fn evaluate_model<S: Real>(
    model: &mut NumNet<S>,
    corpus: &Corpus,
    cfg: &TrainConfig,
) -> Result<MetricReport, TrainError> {
    let records = predict(model, corpus, cfg)?;
    Ok(evaluate(&records, corpus)?)
}

/// The toy example set for whole-model gradient checking: one example per
/// answer type, arranged so every relation type occurs (the count example
/// carries two question numbers straddling the passage numbers) and every
/// head receives candidates.
pub fn gradcheck_examples() -> Vec<(DropExample, &'static str)> {
    use crate::textnum::{make_example, GoldAnswer};
    let span = |s: &str| GoldAnswer {
        number: None,
        spans: vec![s.to_string()],
        unsupported_date: false,
    };
    let number = |n: &str| GoldAnswer {
        number: Some(n.to_string()),
        spans: vec![],
        unsupported_date: false,
    };
    vec![
        (
            make_example(
                "toy-comparison",
                "toy-pspan",
                "The town counted 12 red items and 7 blue items .",
                "Which group is larger : red or blue ?",
                vec![span("red")],
            ),
            "passage span",
        ),
        (
            make_example(
                "toy-qspan",
                "toy-qspan",
                "The marchers walked through town .",
                "Did they walk through town or around it ?",
                vec![span("around it")],
            ),
            "question span",
        ),
        (
            make_example(
                "toy-count",
                "toy-count",
                "Of the group , 5 % were children and 20 % were seniors .",
                "How many groups made up more than 8 % but less than 90 % ?",
                vec![number("1")],
            ),
            "count",
        ),
        (
            make_example(
                "toy-arithmetic",
                "toy-arith",
                "He kicked a 26 yard goal and a 22 yard goal .",
                "How many more yards was the longer goal over the shorter one ?",
                vec![number("4")],
            ),
            "arithmetic",
        ),
    ]
}

/// Finite-difference check of the whole model's gradients on a toy
/// configuration, over every parameter including all 8 relation matrices.
/// Runs in f64; passage-preferred is off so the question pointer trains.
pub fn full_model_gradcheck(
    hidden_dim: usize,
    reasoning_steps: usize,
    seed: u64,
    sample_cap: usize,
) -> Result<crate::diffcore::GradCheckReport, TrainError> {
    use crate::model::ModelConfig;

    let config = ModelConfig {
        hidden_dim,
        embed_dim: hidden_dim,
        head_hidden: hidden_dim,
        vocab_size: 50,
        reasoning_steps,
        passage_preferred: false,
        ..ModelConfig::default()
    };
    let model: NumNet<f64> = NumNet::new(config.clone(), seed);
    let sup_cfg = config.supervision_config();
    let items: Vec<PreparedExample> = gradcheck_examples()
        .into_iter()
        .map(|(example, role)| {
            let supervision = enumerate_supervision(&example, &sup_cfg);
            assert!(!supervision.is_empty(), "toy {role} example lacks supervision");
            let graph = build_graph(
                &example.question_numbers,
                &example.passage_numbers,
                config.graph,
            );
            PreparedExample {
                example,
                graph,
                supervision,
            }
        })
        .collect();
    {
        // The check is only meaningful if every relation type is present.
        let mut seen = [false; 8];
        for item in &items {
            for e in &item.graph.edges {
                seen[e.rel.index()] = true;
            }
        }
        assert!(seen.iter().all(|&s| s), "toy set must cover all 8 relations");
    }

    let mean_loss = |p: &crate::diffcore::ParamStore<f64>| -> Result<f64, DiffError> {
        let mut total = 0.0;
        for item in &items {
            let mut fwd = crate::model::run_forward(&config, p, &item.example, &item.graph)
                .map_err(|e| DiffError::Contract(e.to_string()))?;
            let loss = marginal_loss(&mut fwd.tape, &fwd.head_vars, &item.supervision, false)
                .map_err(|e| DiffError::Contract(e.to_string()))?;
            total += fwd.tape.value(loss).item();
        }
        Ok(total / items.len() as f64)
    };
    let mean_grads = |p: &crate::diffcore::ParamStore<f64>| -> Result<Gradients<f64>, DiffError> {
        let mut acc: Option<Gradients<f64>> = None;
        for item in &items {
            let mut fwd = crate::model::run_forward(&config, p, &item.example, &item.graph)
                .map_err(|e| DiffError::Contract(e.to_string()))?;
            let loss = marginal_loss(&mut fwd.tape, &fwd.head_vars, &item.supervision, false)
                .map_err(|e| DiffError::Contract(e.to_string()))?;
            let grads = fwd.tape.backward(loss)?;
            match &mut acc {
                None => acc = Some(grads),
                Some(a) => {
                    for (name, g) in grads {
                        a.get_mut(&name).unwrap().add_assign_scaled(&g, 1.0);
                    }
                }
            }
        }
        let mut grads = acc.unwrap();
        let inv = 1.0 / items.len() as f64;
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= inv;
            }
        }
        Ok(grads)
    };

    let mut params = model.params.clone();
    let report = crate::diffcore::grad_check(
        &mut params,
        &mut { mean_loss },
        &mut { mean_grads },
        1e-4,
        1e-3,
        sample_cap,
        seed,
    )?;
    Ok(report)
}
