//! First-order product formula error for a sampled three-qubit Hamiltonian.

use qtherm::hamiltonians::{assemble, sample_system, substream, trotter_product, LocalHamiltonian};
use qtherm::matcore::{c64, matrix_exp_herm, op2norm};

fn main() -> qtherm::error::Result<()> {
    let h = sample_system(3, 1.0, &mut substream(9, 0))?;
    let terms = h
        .terms
        .iter()
        .map(|t| {
            assemble(&LocalHamiltonian::new(
                h.n_qubits,
                h.locality_c,
                vec![t.clone()],
            )?)
        })
        .collect::<qtherm::error::Result<Vec<_>>>()?;
    let sigma = c64(0.0, -1.0);
    let exact = matrix_exp_herm(&assemble(&h)?, sigma)?;
    for steps in [1, 4, 16, 64] {
        let err = op2norm(&(trotter_product(&terms, sigma, steps)? - &exact));
        println!("{steps:>3} steps: error {err:.3e}");
    }
    Ok(())
}
