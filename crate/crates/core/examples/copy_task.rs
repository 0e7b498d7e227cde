//! Trains the attention model to copy random symbol strings, then checks
//! teacher-forced accuracy and greedy BLEU on the training pairs.

use std::time::Instant;

use arnmt::decoding::Ensemble;
use arnmt::eval::corpus_bleu_lines;
use arnmt::model::ModelParams;
use arnmt::synth::{copy_task, vocab_size};
use arnmt::training::{evaluate, model_dims, train, EncodedCorpus, TrainConfig};

fn main() -> arnmt::Result<()> {
    env_logger::init();
    let pairs = copy_task(2000, 20, 2, 15, 7);
    let corpus = EncodedCorpus::from_ids(pairs.clone(), "copy");
    let config = TrainConfig {
        batch_size: 32,
        max_epochs: 12,
        learning_rate: 3e-3,
        embed_dim: 32,
        hidden_dim: 64,
        valid_interval: 200,
        patience: 100,
        valid_fraction: 0.0,
        ..Default::default()
    };
    let start = Instant::now();
    let init = ModelParams::init(model_dims(vocab_size(20), &config), config.seed);
    let outcome = train(&corpus, Some(&corpus), &config, init)?;
    for r in &outcome.log {
        println!("{r} acc {:.4} ({:.0}s)", r.val_accuracy, start.elapsed().as_secs_f64());
    }
    let stats = evaluate(&corpus, &outcome.params)?;
    let ens = Ensemble::single(&outcome.params);
    let show = |ids: &[u32]| ids.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for (src, _) in pairs.iter().take(500) {
        let t = ens.greedy(src, 3 * src.len() + 5)?;
        hyps.push(show(t.tokens()));
        refs.push(show(src));
    }
    let bleu = corpus_bleu_lines(&hyps, &[refs])?;
    println!(
        "accuracy {:.4} bleu {:.4} in {:.0}s",
        stats.accuracy(),
        bleu.score,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
