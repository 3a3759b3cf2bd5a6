//! Sampling-based expectation values, two-point correlations and a linear
//! response check on a single qubit.

use qtherm::hamiltonians::{gibbs_state, substream};
use qtherm::matcore::pauli;
use qtherm::observables::{
    correlation_2pt, estimate_expectation, linear_response_experiment, sample_count,
};

fn main() -> qtherm::error::Result<()> {
    let (h, x) = (pauli::op(pauli::z()), pauli::op(pauli::x()));
    let beta = 1.0;
    let rho = gibbs_state(&h, beta)?;

    let plan = sample_count(0.02, 0.01)?;
    let est = estimate_expectation(&rho, &h, &plan, &mut substream(1, 0))?;
    println!(
        "<Z> estimate {:.4} from {} shots, exact {:.4}",
        est.value, plan.n_samples, est.exact
    );

    for t in [0.2, 0.5, 1.0] {
        let c = correlation_2pt(&rho, &x, &x, &h, t)?;
        println!("Tr(rho [X, X(t)]) at t = {t}: {c:.5}");
    }

    for kick in [0.04, 0.02, 0.01] {
        let lr = linear_response_experiment(&h, &rho, &x, &x.add(&h)?, kick, 0.7)?;
        println!(
            "kick {kick}: delta {:+.6e}, prediction {:+.6e}, residual {:.2e}",
            lr.delta_o2, lr.prediction, lr.residual
        );
    }
    Ok(())
}
