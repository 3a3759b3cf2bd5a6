use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use qtherm::channels::*;
use qtherm::hamiltonians::*;
use qtherm::matcore::*;
use qtherm::perturbation::*;

fn model(n: usize, k: usize, lambda: f64, beta: f64, seed: u64) -> JointModel {
    sample_joint_model(n, k, lambda, beta, &mut substream(seed, 0)).unwrap()
}

fn s2bar_of(m: &JointModel, t: f64, beta: f64) -> Superoperator {
    extract_s2bar(
        &build_superoperator(m, t, beta).unwrap(),
        &m.h_s,
        t,
        m.lambda,
    )
    .unwrap()
}

fn log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn s2bar_vanishing_cases() {
    let m = model(2, 2, 0.1, 1.0, 300);
    let zero_s = JointModel::new(
        m.h_s.clone(),
        m.h_b.clone(),
        HermitianOperator::zeros(4),
        m.b_op.clone(),
        0.1,
        1.0,
    )
    .unwrap();
    assert!(s2bar_of(&zero_s, 1.5, 1.0).matrix.norm() < 1e-10);
    assert!(s2bar_of(&m, 0.0, 1.0).matrix.norm() < 1e-10);
    assert!(extract_s2bar(&Superoperator::identity(4), &m.h_s, 1.0, 0.0).is_err());
}

#[test]
fn first_order_term_vanishes() {
    let base = model(1, 2, 1.0, 1.0, 301);
    let t = 1.0;
    let s0 = Superoperator::free_evolution(&base.h_s, t).unwrap();
    let lams = [0.02, 0.04, 0.08];
    let diffs: Vec<f64> = lams
        .iter()
        .map(|&l| {
            op2norm(
                &(build_superoperator(&base.with_lambda(l), t, 1.0)
                    .unwrap()
                    .matrix
                    - &s0.matrix),
            )
        })
        .collect();
    let p = log_slope(&lams, &diffs);
    assert!((p - 2.0).abs() < 0.1, "{p}");

    let reference = s2bar_of(&base.with_lambda(0.005), t, 1.0);
    let residual = |l: f64| {
        let s = s2bar_of(&base.with_lambda(l), t, 1.0);
        (s.matrix - &reference.matrix).norm()
    };
    assert!(residual(0.01) < residual(0.04));
    assert!(residual(0.04) < residual(0.16));
}

#[test]
fn d_block_columns_sum_to_zero() {
    for i in 0..4 {
        let m = model(1 + i % 2, 2, 0.05, 1.0, 302 + i as u64);
        let s2 = s2bar_of(&m, 2.0, 1.0);
        let spec = SystemSpectrum::new(&m.h_s).unwrap();
        let sa = sector_analysis(&s2, &spec, m.lambda, 2.0, 1.0).unwrap();
        assert!(sa.d_column_sum_error < 1e-9, "{}", sa.d_column_sum_error);
    }
}

#[test]
fn sector_analysis_examples() {
    let spec =
        SystemSpectrum::new(&HermitianOperator::from_diagonal(&[0.0, 1.0]).unwrap()).unwrap();
    let zero = Superoperator::new(2, ComplexMatrix::zeros(4, 4)).unwrap();
    let sa = sector_analysis(&zero, &spec, 0.1, 1.0, 0.5).unwrap();
    assert_abs_diff_eq!(sa.kappa_d, 1.0, epsilon = 1e-12);
    assert_eq!(sa.rate_d, 0.0);

    // two-state chain (1-a, b; a, 1-b) written as I + lambda^2 D
    let (a, b, lam): (f64, f64, f64) = (0.2, 0.1, 0.1);
    let l2 = lam * lam;
    let chain = Superoperator::from_map(2, |x| {
        let (p0, p1) = (x[(0, 0)], x[(1, 1)]);
        let mut out = ComplexMatrix::zeros(2, 2);
        out[(0, 0)] = (p1 * b - p0 * a) / l2;
        out[(1, 1)] = (p0 * a - p1 * b) / l2;
        out
    })
    .unwrap();
    let sa = sector_analysis(&chain, &spec, lam, 1.0, 0.5).unwrap();
    assert_abs_diff_eq!(sa.kappa_d, 1.0 - a - b, epsilon = 1e-9);
    assert_abs_diff_eq!(sa.rate_d, (a + b) / 0.5, epsilon = 1e-9);
    let fp = sa.perturbative_fixed_point.populations();
    assert_abs_diff_eq!(fp[0], b / (a + b), epsilon = 1e-12);
    assert!(
        sector_analysis(&chain, &spec, lam, 1.0, 0.0)
            .unwrap()
            .rate_d
            == 0.0
    );
}

#[test]
fn degenerate_spectrum_rejected() {
    assert!(SystemSpectrum::new(&HermitianOperator::identity(2)).is_err());
}

#[test]
fn kappa_d_tracks_exact_spectrum() {
    let lam = 0.05;
    let beta = 1.0;
    for (i, t) in [(0u64, 2.0), (1, 3.0), (2, 4.0)] {
        let m = model(1, 3, lam, beta, 305 + i);
        let s = build_superoperator(&m, t, beta).unwrap();
        let spec = SystemSpectrum::new(&m.h_s).unwrap();
        let sa = sector_analysis(
            &extract_s2bar(&s, &m.h_s, t, lam).unwrap(),
            &spec,
            lam,
            t,
            1.0,
        )
        .unwrap();
        let exact = channel_spectrum(&s).unwrap().decomposition.eigenvalues;
        let closest = exact
            .iter()
            .filter(|z| (*z - 1.0).norm() > 1e-9)
            .map(|z| (z - sa.kappa_d).norm())
            .fold(f64::INFINITY, f64::min);
        assert!(closest < 2.0 * lam * lam, "t={t}: {closest}");
    }
}

#[test]
fn bath_correlation_examples() {
    let mut rng = substream(310, 0);
    let hb = assemble(&sample_bath(3, bath_scale(2, 3), &mut rng).unwrap()).unwrap();
    let bop = assemble(&sample_system(3, 1.0, &mut rng).unwrap()).unwrap();
    let beta = 1.7;
    let corr = bath_correlation(&hb, &bop, beta).unwrap();
    let rho = gibbs_state(&hb, beta).unwrap();
    let direct = trace(&(bop.matrix() * bop.matrix() * rho.matrix())).re;
    assert_abs_diff_eq!(corr.eval(0.0).re, direct, epsilon = 1e-10);
    assert_abs_diff_eq!(corr.total_weight(), direct, epsilon = 1e-10);
    assert!(corr.kms_violation(beta) < 1e-10);

    // h(t) = <B B_t> with B_t = e^{iHt} B e^{-iHt}
    let t = 0.8;
    let u = matrix_exp_herm(&hb, c64(0.0, t)).unwrap();
    let bt = &u * bop.matrix() * u.adjoint();
    let direct_t = trace(&(bop.matrix() * bt * rho.matrix()));
    assert!((corr.eval(t) - direct_t).norm() < 1e-10);

    let flat = bath_correlation(&hb, &bop, 0.0).unwrap();
    for &(om, w) in &flat.peaks {
        let mirror: f64 = flat
            .peaks
            .iter()
            .filter(|p| (p.0 + om).abs() < 1e-9)
            .map(|p| p.1)
            .sum();
        assert_abs_diff_eq!(mirror, w, epsilon = 1e-12);
    }
}

#[test]
fn second_order_examples() {
    let m = model(2, 2, 0.01, 1.0, 311);
    let spec = SystemSpectrum::new(&m.h_s).unwrap();
    let corr = bath_correlation(&m.h_b, &m.b_op, 1.0).unwrap();
    let s_elems = spec.matrix_elements(&m.s_op);

    let diag = ComplexMatrix::from_diagonal(&s_elems.diagonal());
    let so = second_order_q_nu(&spec.energies, &diag, &corr, 2.0).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                assert_eq!(so.q[(i, j)], 0.0);
            }
        }
    }

    let full = second_order_q_nu(&spec.energies, &s_elems, &corr, 2.0).unwrap();
    for k in 0..4 {
        assert!(full.q.column(k).sum().abs() < 1e-12);
    }
    let q1 = second_order_q_nu(&spec.energies, &s_elems, &corr, 1e-3)
        .unwrap()
        .q;
    let q2 = second_order_q_nu(&spec.energies, &s_elems, &corr, 5e-4)
        .unwrap()
        .q;
    assert_abs_diff_eq!(q2.norm() / q1.norm(), 0.25, epsilon = 1e-3);
    assert!(second_order_q_nu(&spec.energies, &s_elems, &corr, 0.0).is_err());
}

#[test]
fn nd_eigenvalues_match_second_order_decay() {
    let lam = 0.01;
    let t = 1.5;
    let m = model(1, 2, lam, 1.0, 312);
    let spec = SystemSpectrum::new(&m.h_s).unwrap();
    let corr = bath_correlation(&m.h_b, &m.b_op, 1.0).unwrap();
    let nu = second_order_q_nu(&spec.energies, &spec.matrix_elements(&m.s_op), &corr, t)
        .unwrap()
        .nu;
    let sa = sector_analysis(&s2bar_of(&m, t, 1.0), &spec, lam, t, 1.0).unwrap();
    for ev in &sa.nd_eigenvalues {
        let exact = c64(ev.re, ev.im).norm();
        let pred = (c64(1.0, 0.0) + nu[(ev.n, ev.m)] * lam * lam).norm();
        let shift = (nu[(ev.n, ev.m)] * lam * lam).norm();
        assert!((exact - pred).abs() < 0.05 * shift, "{exact} vs {pred}");
    }
}

#[test]
fn idealized_examples() {
    let beta = 1.3;
    let energies = [0.0, 1.0];
    let sx = pauli::x();
    let h = SechKms { beta, scale: 1.0 };
    let k = idealized_limit(&energies, &sx, &h, beta, 0.05).unwrap();
    let p = k.p_matrix.matrix();
    assert_abs_diff_eq!(p[(0, 1)] / p[(1, 0)], beta.exp(), epsilon = 1e-10);
    assert!(k.detailed_balance_error < 1e-10);
    let pi = gibbs_weights(&energies, beta);
    let moved = k.p_matrix.apply(&pi);
    for i in 0..2 {
        assert_abs_diff_eq!(moved[i], pi[i], epsilon = 1e-10);
    }

    let sz = pauli::z();
    let id = idealized_limit(&energies, &sz, &h, beta, 0.05).unwrap();
    assert!((id.p_matrix.matrix() - identity_chain(2).matrix()).norm() < 1e-15);

    let bad = FnDensity(std::sync::Arc::new(|w: f64| (-w * w).exp()));
    assert!(idealized_limit(&energies, &sx, &bad, beta, 0.05).is_err());
}

fn identity_chain(n: usize) -> qtherm::markov2::MarkovMatrix {
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
    qtherm::markov2::MarkovMatrix::from_columns(&refs).unwrap()
}

#[test]
fn validity_examples() {
    let v = validity_conditions(2, 2, 1.0, 1.0, 2.0).unwrap();
    assert_abs_diff_eq!(
        v.c,
        16.0 * std::f64::consts::PI / (3.0 * 3f64.sqrt()),
        epsilon = 1e-12
    );
    assert_abs_diff_eq!(v.beta_prime, 2.0 * system_width(2), epsilon = 1e-12);
    assert_eq!(validity_conditions(2, 3, 0.0, 5.0, 1.0).unwrap().c, 0.0);
    assert_abs_diff_eq!(
        validity_conditions(1, 2, 1.0, 1.0, 1.0).unwrap().c1,
        6.840,
        epsilon = 1e-3
    );
    assert!(validity_conditions(2, 1, 1.0, 1.0, 1.0).is_err());
}

#[test]
fn zeno_examples() {
    let beta = 1.0;
    let sched = [0.4, 0.2, 0.1, 0.05];
    let z = pauli::op(pauli::z());
    let m = model(1, 2, 0.1, beta, 313);
    let commuting = JointModel::new(
        z.clone(),
        m.h_b.clone(),
        z.scaled(0.5),
        m.b_op.clone(),
        0.1,
        beta,
    )
    .unwrap();
    let probe = inverse_zeno_probe(&commuting, 0.5, &sched, beta).unwrap();
    assert!(probe.commuting);
    assert_eq!(probe.strictly_decreasing, None);

    let probe = inverse_zeno_probe(&m, 0.5, &sched, beta).unwrap();
    assert_eq!(probe.strictly_decreasing, Some(true));
    let first = probe.points.first().unwrap();
    let last = probe.points.last().unwrap();
    assert!(last.mixed_residual < first.mixed_residual);
    for p in &probe.points {
        assert_abs_diff_eq!(p.lambda * p.lambda * p.t, 0.5, epsilon = 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn idealized_kernel_invariants(seed in any::<u64>(), beta in 0.1f64..1.9, l2t in 0.001f64..0.05) {
        let mut rng = substream(seed, 0);
        let h_s = assemble(&sample_system(2, 1.0, &mut rng).unwrap()).unwrap();
        let s = assemble(&sample_system(2, 1.0, &mut rng).unwrap()).unwrap();
        let spec = SystemSpectrum::new(&h_s);
        prop_assume!(spec.is_ok());
        let spec = spec.unwrap();
        let elems = spec.matrix_elements(&s);
        let k = idealized_limit(&spec.energies, &elems, &SechKms { beta, scale: 1.0 }, beta, l2t).unwrap();
        let p = k.p_matrix.matrix();
        for j in 0..4 {
            prop_assert!((p.column(j).sum() - 1.0).abs() < 1e-12);
        }
        if k.conditions.condition1 < 1.0 {
            prop_assert!(p.iter().all(|&x| x >= 0.0));
        }
        prop_assert!(k.detailed_balance_error < 1e-10);
        prop_assert!(k.stationarity_error < 1e-10);
        if k.conditions.condition2 < 1.0 {
            for a in 0..4 {
                for b in 0..4 {
                    if a != b {
                        prop_assert!(k.mu_offdiag[(a, b)].norm() <= 1.0 + 1e-12);
                        prop_assert!((k.mu_offdiag[(a, b)] - k.mu_offdiag[(b, a)].conj()).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn q_columns_sum_to_zero(seed in any::<u64>(), t in 0.01f64..10.0) {
        let m = model(2, 2, 0.1, 1.0, seed);
        let spec = SystemSpectrum::new(&m.h_s).unwrap();
        let corr = bath_correlation(&m.h_b, &m.b_op, 1.0).unwrap();
        let q = second_order_q_nu(&spec.energies, &spec.matrix_elements(&m.s_op), &corr, t).unwrap().q;
        for j in 0..4 {
            prop_assert!(q.column(j).sum().abs() < 1e-10 * (1.0 + q.norm()));
            for i in 0..4 {
                if i != j {
                    prop_assert!(q[(i, j)] >= -1e-12);
                }
            }
        }
    }
}
