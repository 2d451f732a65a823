// Isolate the comparison bottleneck: two labeled groups, no distractor.
use numnet::metrics::gold_strings;
use numnet::model::{ModelConfig, NumNet};
use numnet::textnum::{make_example, Corpus, DropExample, GoldAnswer, Split};
use numnet::train::{predict, prepare_training, train, TrainConfig};
use numnet::rng::RngStream;

const LABELS: [&str; 10] = ["red","blue","green","amber","violet","coral","ivory","maroon","olive","teal"];

fn example(seed: u64, i: usize) -> DropExample {
    let mut rng = RngStream::new(seed, "synth2", i as u64);
    let v0 = rng.range(10, 99);
    let mut v1 = rng.range(10, 99);
    while v1 == v0 { v1 = rng.range(10, 99); }
    let l0 = LABELS[rng.below(10)];
    let mut l1 = LABELS[rng.below(10)];
    while l1 == l0 { l1 = LABELS[rng.below(10)]; }
    let passage = format!("The survey counted {v0} {l0} items and {v1} {l1} items in the final report .");
    let larger = rng.below(2) == 0;
    let (a, b) = if rng.below(2) == 0 { (l0, l1) } else { (l1, l0) };
    let question = format!("Which group is {} : {} or {} ?", if larger {"larger"} else {"smaller"}, a, b);
    let winner = if (v0 > v1) == larger { l0 } else { l1 };
    make_example(&format!("p{i}"), &format!("q{i}"), &passage, &question,
        vec![GoldAnswer { number: None, spans: vec![winner.to_string()], unsupported_date: false }])
}

fn corpus(seed: u64, n: usize) -> Corpus {
    Corpus { examples: (0..n).map(|i| example(seed, i)).collect(), split: Split::Train }
}

fn main() {
    let train_corpus = corpus(100, 1200);
    let dev_corpus = corpus(999, 60);
    let config = ModelConfig {
        hidden_dim: 64, embed_dim: 64, head_hidden: 64, vocab_size: 2048,
        reasoning_steps: 3, ..ModelConfig::default()
    };
    let mut model: NumNet<f32> = NumNet::new(config, 42);
    let cfg = TrainConfig { epochs: 10, batch_size: 16, lr: 1e-3, eval_with_ema: false, ..TrainConfig::default() };
    let (prepared, _) = prepare_training(&model, &train_corpus, &cfg);
    train(&mut model, &prepared, None, &cfg, 0, |log, m| {
        let records = predict(m, &dev_corpus, &cfg).unwrap();
        let right = records.iter().zip(dev_corpus.examples.iter())
            .filter(|(r, ex)| numnet::metrics::exact_match(&r.text, &gold_strings(ex)) == 1)
            .count();
        println!("epoch {} loss {:.4} 2-group dev EM {}/{}", log.epoch, log.mean_loss, right, records.len());
        Ok(true)
    }).unwrap();
}
