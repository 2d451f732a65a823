use numnet::model::{ModelConfig, NumNet};
use numnet::synth::{gen_synthetic, Family, SyntheticSpec};
use numnet::train::{evaluate_model, prepare_training, train, TrainConfig};

fn main() {
    let t0 = std::time::Instant::now();
    let corpus = gen_synthetic(&SyntheticSpec {
        family: Family::Mixed,
        size: 32,
        seed: 11,
        ..SyntheticSpec::default()
    });
    let config = ModelConfig {
        hidden_dim: 64,
        embed_dim: 64,
        head_hidden: 64,
        vocab_size: 2048,
        reasoning_steps: 3,
        ..ModelConfig::default()
    };
    let mut model: NumNet<f32> = NumNet::new(config, 42);
    let cfg = TrainConfig {
        epochs: 300,
        batch_size: 16,
        lr: 1e-3,
        eval_with_ema: false,
        ..TrainConfig::default()
    };
    let (prepared, skipped) = prepare_training(&model, &corpus, &cfg);
    println!("prepared {} skipped {}", prepared.len(), skipped);
    let mut last_em = 0.0;
    let logs = train(&mut model, &prepared, None, &cfg, 0, |log, m| {
        if log.epoch % 10 == 0 {
            let report = evaluate_model(m, &corpus, &cfg).unwrap();
            last_em = report.em();
            println!(
                "epoch {:3} loss {:.4} train-EM {:.3} ({:?})",
                log.epoch, log.mean_loss, last_em, t0.elapsed()
            );
            return Ok(last_em < 0.90);
        }
        Ok(true)
    })
    .unwrap();
    println!(
        "done: epochs {} final EM {:.3} elapsed {:?}",
        logs.len(),
        last_em,
        t0.elapsed()
    );
}
