//! Eigenvalue density of sampled system and bath Hamiltonians.

use qtherm::experiments::{run_dos_histogram, ExperimentConfig, ExperimentKind};

fn main() -> qtherm::error::Result<()> {
    let cfg = ExperimentConfig {
        n: 4,
        k: 4,
        samples: 200,
        ..ExperimentConfig::for_kind(ExperimentKind::DosHistogram)
    };
    let r = run_dos_histogram(&cfg)?;
    println!("variance ratio {:?}", r.variance_ratio);
    for row in r.rows() {
        println!(
            "[{:+.2}, {:+.2}) {:>5} {:>5}",
            row.bin_lo, row.bin_hi, row.system_count, row.bath_count
        );
    }
    Ok(())
}
