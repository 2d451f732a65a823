use numnet::model::{ModelConfig, NumNet};
use numnet::synth::{gen_synthetic, Family, SyntheticSpec};
use numnet::train::{evaluate_model, prepare_training, train, TrainConfig};

fn main() {
    let t0 = std::time::Instant::now();
    let train_corpus = gen_synthetic(&SyntheticSpec {
        family: Family::Mixed, size: 2000, seed: 100, ..SyntheticSpec::default()
    });
    let dev_corpus = gen_synthetic(&SyntheticSpec {
        family: Family::Mixed, size: 200, seed: 999, ..SyntheticSpec::default()
    });
    for use_gnn in [true, false] {
        let config = ModelConfig {
            hidden_dim: 64, embed_dim: 64, head_hidden: 64, vocab_size: 2048,
            reasoning_steps: 3, use_gnn, ..ModelConfig::default()
        };
        let mut model: NumNet<f32> = NumNet::new(config, 42);
        let cfg = TrainConfig {
            epochs: 10, batch_size: 16, lr: 1e-3, eval_with_ema: false,
            ..TrainConfig::default()
        };
        let (prepared, skipped) = prepare_training(&model, &train_corpus, &cfg);
        println!("gnn={use_gnn} prepared {} skipped {}", prepared.len(), skipped);
        train(&mut model, &prepared, None, &cfg, 0, |log, m| {
            let report = evaluate_model(m, &dev_corpus, &cfg).unwrap();
            let comp = report.slice("Comparison").unwrap();
            println!(
                "gnn={use_gnn} epoch {} loss {:.4} dev-EM {:.3} comp-EM {:.3} ({:?})",
                log.epoch, log.mean_loss, report.em(), comp.em, t0.elapsed()
            );
            Ok(true)
        })
        .unwrap();
    }
}
