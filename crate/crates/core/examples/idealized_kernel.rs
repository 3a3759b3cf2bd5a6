//! Long-time, weak-coupling limit with a smooth KMS bath density.

use qtherm::hamiltonians::{assemble, gibbs_weights, sample_system_draw, substream};
use qtherm::markov2::stationary_distribution;
use qtherm::perturbation::{idealized_limit, GaussianKms, SystemSpectrum};

fn main() -> qtherm::error::Result<()> {
    let beta = 1.2;
    let draw = sample_system_draw(2, &mut substream(5, 0))?;
    let spectrum = SystemSpectrum::new(&assemble(&draw.h_s)?)?;
    let density = GaussianKms {
        beta,
        scale: 1.0,
        sigma: 4.0,
    };
    let k = idealized_limit(
        &spectrum.energies,
        &spectrum.matrix_elements(&assemble(&draw.s_op)?),
        &density,
        beta,
        0.5,
    )?;
    println!("detailed balance error {:.2e}", k.detailed_balance_error);
    println!("stationary {:.5?}", stationary_distribution(&k.p_matrix)?);
    println!("Gibbs      {:.5?}", gibbs_weights(&spectrum.energies, beta));
    Ok(())
}
