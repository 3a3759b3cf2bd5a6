//! Runs a small bath ensemble and writes the CSV and JSON summary.
//!
//! Usage: `cargo run --release --example ensemble -- [out_dir]`

use qtherm::experiments::{run_and_emit, ExperimentConfig, ExperimentKind};

fn main() -> qtherm::error::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/qtherm-ensemble".into());
    let cfg = ExperimentConfig {
        n: 1,
        k: 3,
        beta: vec![1.0],
        samples: 20,
        time_points: 8,
        ..ExperimentConfig::for_kind(ExperimentKind::BathEnsemble)
    };
    let files = run_and_emit(&cfg, std::path::Path::new(&out))?;
    println!("{}\n{}", files.csv.display(), files.summary.display());
    Ok(())
}
