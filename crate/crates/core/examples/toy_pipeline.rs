//! Runs the whole ladder (baseline, + ar preprocessing, + tuning,
//! + ensemble) on the shipped toy corpora and prints the report.
//!
//! ```text
//! cargo run --release --example toy_pipeline [config.toml] [run-dir]
//! ```

use std::path::PathBuf;

use arnmt::pipeline::{run_pipeline, validate_manifest, PipelineConfig};

fn main() -> arnmt::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let config_path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/toy/pipeline.toml"));
    let run_dir = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("arnmt-toy-run"));
    let config = PipelineConfig::load(&config_path)?;
    let report = run_pipeline(&config, &run_dir)?;
    print!("{}", report.to_text());
    println!("artifacts in {}", run_dir.display());
    let tampered = validate_manifest(&run_dir)?;
    println!("inputs changed since the run: {}", tampered.len());
    Ok(())
}
