//! Splits the second-order channel into population and coherence sectors and
//! compares the closed-form bath-correlation prediction with the exact block.

use qtherm::channels::build_superoperator;
use qtherm::hamiltonians::{sample_joint_model, substream};
use qtherm::perturbation::{
    bath_correlation, extract_s2bar, second_order_q_nu, sector_analysis, SystemSpectrum,
};

fn main() -> qtherm::error::Result<()> {
    let (beta, t, lambda) = (1.0, 2.0, 0.003);
    let model = sample_joint_model(1, 3, lambda, beta, &mut substream(3, 0))?;
    let s = build_superoperator(&model, t, beta)?;
    let s2bar = extract_s2bar(&s, &model.h_s, t, lambda)?;
    let spectrum = SystemSpectrum::new(&model.h_s)?;

    let sa = sector_analysis(&s2bar, &spectrum, lambda, t, 1.0)?;
    println!(
        "kappa_D = {:.10}, kappa_ND = {:.10}",
        sa.kappa_d, sa.kappa_nd
    );
    println!("R_D = {:.4e}, R_ND = {:.4e}", sa.rate_d, sa.rate_nd);

    let corr = bath_correlation(&model.h_b, &model.b_op, beta)?;
    let so = second_order_q_nu(
        &spectrum.energies,
        &spectrum.matrix_elements(&model.s_op),
        &corr,
        t,
    )?;
    for m in 0..spectrum.dim() {
        for n in 0..spectrum.dim() {
            println!(
                "Q[{m},{n}] closed form {:+.6}  exact {:+.6}",
                so.q[(m, n)],
                sa.d_block[(m, n)].re
            );
        }
    }
    Ok(())
}
