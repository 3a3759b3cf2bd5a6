//! Compares the exact Metropolis chain over eigenlevels with the chain seen
//! through finite-precision phase estimation.

use qtherm::channels::IterationOptions;
use qtherm::hamiltonians::gibbs_weights;
use qtherm::markov2::{
    approximate_chain_for, chain_perturbation_bound, exact_chain, phase_kernel,
    run_algorithm_two_on_spectrum, stationary_distribution, KernelMode,
};

fn main() -> qtherm::error::Result<()> {
    let energies = [-1.3, -0.4, 0.2, 1.1];
    let beta = 1.0;
    let p = exact_chain(&energies, beta)?;
    println!("exact stationary {:.5?}", stationary_distribution(&p)?);
    println!("Gibbs            {:.5?}", gibbs_weights(&energies, beta));

    for m_bits in [3, 5, 7] {
        let kernel = phase_kernel(&energies, m_bits)?;
        let approx = approximate_chain_for(&energies, beta, &kernel)?;
        let cp = chain_perturbation_bound(&p, &approx)?;
        println!(
            "m = {m_bits}: ||p' - p||_1 = {:.4e}, bound {:.4e}",
            cp.actual, cp.bound
        );
    }

    let mode = KernelMode::PhaseEstimation {
        m_bits: 5,
        slack: 0.0,
    };
    let trace =
        run_algorithm_two_on_spectrum(&energies, beta, mode, IterationOptions::new(10_000, 1e-13))?;
    println!(
        "Algorithm II: {:?} rounds, deviation from Gibbs {:.4e}",
        trace.converged_at, trace.final_deviation
    );
    Ok(())
}
