//! Mean trace distance between independent random density matrices.

use qtherm::experiments::{run_random_dm_distance, ExperimentConfig, ExperimentKind};

fn main() -> qtherm::error::Result<()> {
    let cfg = ExperimentConfig {
        dims: vec![2, 4, 8, 16],
        samples: 2000,
        ..ExperimentConfig::for_kind(ExperimentKind::RandomDmDistance)
    };
    for row in run_random_dm_distance(&cfg)?.rows {
        println!(
            "N = {:>2}: mean {:.5} +- {:.5}",
            row.dim, row.mean, row.stderr
        );
    }
    Ok(())
}
