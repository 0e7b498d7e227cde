//! Trains five models with different seeds on a noisy copy task and compares
//! held-out loss of each member with their log-average ensemble.

use arnmt::decoding::{Combine, DecodeConfig, Ensemble};
use arnmt::model::ModelParams;
use arnmt::synth::{noisy_copy_task, vocab_size};
use arnmt::training::{model_dims, train, EncodedCorpus, TrainConfig};

fn main() -> arnmt::Result<()> {
    let symbols = 12;
    let data = EncodedCorpus::from_ids(noisy_copy_task(600, symbols, 2, 8, 0.15, 11), "noisy");
    let held_out = EncodedCorpus::from_ids(noisy_copy_task(200, symbols, 2, 8, 0.15, 12), "noisy");
    let mut members = Vec::new();
    for seed in 1..=5u64 {
        let config = TrainConfig {
            seed,
            batch_size: 16,
            max_epochs: 20,
            learning_rate: 3e-3,
            embed_dim: 16,
            hidden_dim: 32,
            valid_interval: 50,
            patience: 5,
            valid_fraction: 0.0,
            ..Default::default()
        };
        let init = ModelParams::init(model_dims(vocab_size(symbols), &config), seed);
        let outcome = train(&data, Some(&held_out), &config, init)?;
        let best = outcome.best().clone();
        println!("member {seed}: held-out loss {:.4}", best.meta.val_loss);
        members.push(best);
    }
    let ensemble = Ensemble::from_checkpoints(&members, Combine::LogAverage)?;
    let stats = ensemble.evaluate(&held_out.pairs)?;
    let best_single = members.iter().map(|c| c.meta.val_loss).fold(f64::INFINITY, f64::min);
    println!("ensemble of {}: held-out loss {:.4} (best member {:.4})", ensemble.len(), stats.mean_nll(), best_single);

    let src = &held_out.pairs[0].0;
    let out = ensemble.translate_ids(src, &DecodeConfig::default())?;
    println!("source {:?} -> {:?}", src, out.tokens());
    Ok(())
}
