//! Table of sentence and word counts for each toy dataset set.

use std::path::Path;

use arnmt::corpus::{compose, stats, DatasetSpec};

fn main() -> arnmt::Result<()> {
    let spec = DatasetSpec::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy/datasets.cfg"))?;
    for set in spec.set_names() {
        println!("set {set}: {}", spec.members(set)?.join(", "));
    }
    println!();
    print!("{}", stats(&compose(&spec, "D")?).to_text());
    Ok(())
}
