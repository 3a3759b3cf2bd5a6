//! Builds the reduced channel of a random one-qubit system coupled to a
//! two-qubit bath and iterates it to its fixed point.

use qtherm::channels::{
    build_superoperator, channel_spectrum, iterate_channel, verify_tcp, IterationOptions,
};
use qtherm::hamiltonians::{gibbs_state, sample_joint_model, substream};
use qtherm::matcore::DensityMatrix;

fn main() -> qtherm::error::Result<()> {
    let (beta, t) = (1.0, 1.5);
    let model = sample_joint_model(1, 2, 0.1, beta, &mut substream(7, 0))?;
    let s = build_superoperator(&model, t, beta)?;

    let tcp = verify_tcp(&s)?;
    println!("worst TCP violation {:.2e}", tcp.worst_violation());

    let spec = channel_spectrum(&s)?;
    println!("|kappa| = {:.6}", spec.kappa.norm());

    let trace = iterate_channel(
        &s,
        DensityMatrix::basis_state(2, 0)?,
        IterationOptions::new(20_000, 1e-12),
        None,
    )?;
    let gibbs = gibbs_state(&model.h_s, beta)?;
    println!(
        "converged at round {:?}; distance to fixed point {:.2e}, to Gibbs {:.4}",
        trace.converged_at,
        trace.final_state().trace_distance(&spec.fixed_point),
        spec.fixed_point.trace_distance(&gibbs),
    );
    Ok(())
}
