use numnet::metrics::gold_strings;
use numnet::model::{ModelConfig, NumNet};
use numnet::synth::{gen_synthetic, Family, SyntheticSpec};
use numnet::train::{predict, prepare_training, train, TrainConfig};

fn main() {
    let train_corpus = gen_synthetic(&SyntheticSpec {
        family: Family::Comparison, size: 1200, seed: 100, ..SyntheticSpec::default()
    });
    let dev_corpus = gen_synthetic(&SyntheticSpec {
        family: Family::Comparison, size: 60, seed: 999, ..SyntheticSpec::default()
    });
    let config = ModelConfig {
        hidden_dim: 64, embed_dim: 64, head_hidden: 64, vocab_size: 2048,
        reasoning_steps: 3, ..ModelConfig::default()
    };
    let mut model: NumNet<f32> = NumNet::new(config, 42);
    let cfg = TrainConfig { epochs: 16, batch_size: 16, lr: 1e-3, eval_with_ema: false, ..TrainConfig::default() };
    let (prepared, _) = prepare_training(&model, &train_corpus, &cfg);
    train(&mut model, &prepared, None, &cfg, 0, |log, m| {
        let records = predict(m, &dev_corpus, &cfg).unwrap();
        let mut right = 0;
        for (r, ex) in records.iter().zip(dev_corpus.examples.iter()) {
            if numnet::metrics::exact_match(&r.text, &gold_strings(ex)) == 1 { right += 1; }
        }
        println!("epoch {} loss {:.4} comp dev EM {}/{}", log.epoch, log.mean_loss, right, records.len());
        if log.epoch == cfg.epochs {
            for (r, ex) in records.iter().zip(dev_corpus.examples.iter()).take(10) {
                println!("  q: {} | gold {:?} | pred ({}) {:?}", ex.question_text, gold_strings(ex), r.answer_type, r.text);
            }
        }
        Ok(true)
    }).unwrap();
}
