//! Trains on a large general-domain set plus a little special-domain data,
//! then fine-tunes on the special domain alone and compares validation loss.

use arnmt::model::ModelParams;
use arnmt::synth::{domain_task, vocab_size, Domain};
use arnmt::training::{evaluate, finetune, model_dims, train, EncodedCorpus, TrainConfig};

fn main() -> arnmt::Result<()> {
    let symbols = 10;
    let general = domain_task(Domain::General, 800, symbols, 2, 6, 1);
    let special = domain_task(Domain::Special, 80, symbols, 2, 6, 2);
    let special_valid = EncodedCorpus::from_ids(domain_task(Domain::Special, 100, symbols, 2, 6, 3), "dom");
    let general_valid = EncodedCorpus::from_ids(domain_task(Domain::General, 100, symbols, 2, 6, 4), "dom");

    let mut mixed = general;
    mixed.extend(special.iter().cloned());
    let mixed = EncodedCorpus::from_ids(mixed, "dom");
    let config = TrainConfig {
        batch_size: 16,
        max_epochs: 5,
        learning_rate: 3e-3,
        embed_dim: 16,
        hidden_dim: 32,
        valid_interval: 50,
        valid_fraction: 0.0,
        ..Default::default()
    };
    let init = ModelParams::init(model_dims(vocab_size(symbols), &config), 1);
    let base = train(&mixed, Some(&general_valid), &config, init)?.best().clone();

    let tune_config = TrainConfig {
        learning_rate: 1e-3,
        max_epochs: 10,
        valid_interval: 5,
        ..config
    };
    let in_domain = EncodedCorpus::from_ids(special, "dom");
    let tuned = finetune(&base, &in_domain, Some(&special_valid), &tune_config)?.best().clone();

    let before = evaluate(&special_valid, &base.params)?.mean_nll();
    let after = evaluate(&special_valid, &tuned.params)?.mean_nll();
    let general_before = evaluate(&general_valid, &base.params)?.mean_nll();
    let general_after = evaluate(&general_valid, &tuned.params)?.mean_nll();
    println!("special-domain loss: base {before:.4} -> tuned {after:.4}");
    println!("general-domain loss: base {general_before:.4} -> tuned {general_after:.4}");
    Ok(())
}
