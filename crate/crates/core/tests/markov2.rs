use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;
use qtherm::channels::IterationOptions;
use qtherm::hamiltonians::*;
use qtherm::markov2::*;
use qtherm::matcore::*;
use rand::Rng;
use std::f64::consts::PI;

fn spectrum(n: usize, seed: u64) -> Vec<f64> {
    let (h, _) = sample_nondegenerate_system(n, &mut substream(seed, 0)).unwrap();
    eigvalsh(&assemble(&h).unwrap()).unwrap()
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

// Direct sum over the 2^m phase-register basis.
fn dirichlet_oracle(theta: f64, m: usize) -> f64 {
    let z: C64 = (0..m).map(|l| C64::from_polar(1.0, l as f64 * theta)).sum();
    (z / m as f64).norm_sqr()
}

#[test]
fn dirichlet_examples() {
    for theta in [0.0, 0.3, 1.0, PI, 2.0 * PI, -0.7, 1e-10] {
        for m in [2, 8, 64] {
            assert_abs_diff_eq!(
                dirichlet_weight(theta, m),
                dirichlet_oracle(theta, m),
                epsilon = 1e-12
            );
        }
    }
}

#[test]
fn phase_kernel_examples() {
    let k = phase_kernel(&[0.0, 1.0], 1).unwrap();
    // with m = 1 the window maps the top level to pi; a level at pi/2 splits evenly
    assert_abs_diff_eq!(dirichlet_weight(PI / 2.0, 2), 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(k.p[(1, 1)], 1.0, epsilon = 1e-12);

    let e = spectrum(3, 400);
    let k = phase_kernel(&e, 6).unwrap();
    for row in k.p.row_iter() {
        assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
    }
    for (n, &en) in e.iter().enumerate() {
        let ep = k.f1 * en + k.f2;
        assert!((0.0..2.0 * PI).contains(&ep));
        let s = 17;
        let want = dirichlet_oracle(ep - 2.0 * PI * s as f64 / 64.0, 64);
        let norm: f64 = (0..64)
            .map(|t| dirichlet_oracle(ep - 2.0 * PI * t as f64 / 64.0, 64))
            .sum();
        assert_abs_diff_eq!(k.p[(n, s)], want / norm, epsilon = 1e-12);
    }
    assert!(phase_kernel(&[1.0, 1.0], 4).is_err());
    assert!(phase_kernel(&e, 0).is_err());
}

#[test]
fn exact_chain_examples() {
    let e = spectrum(3, 401);
    let uniform = exact_chain(&e, 0.0).unwrap();
    assert!(uniform
        .matrix()
        .iter()
        .all(|&x| (x - 1.0 / 8.0).abs() < 1e-15));

    let two = exact_chain(&[1.0, 0.0], 1.0).unwrap();
    let p = two.matrix();
    assert_abs_diff_eq!(p[(1, 0)], 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(p[(0, 1)], (-1.0f64).exp() / 2.0, epsilon = 1e-15);
    assert_abs_diff_eq!(p[(0, 0)], 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(p[(1, 1)], 1.0 - (-1.0f64).exp() / 2.0, epsilon = 1e-15);
    let pi = gibbs_weights(&[1.0, 0.0], 1.0);
    assert_abs_diff_eq!(p[(1, 0)] * pi[0], p[(0, 1)] * pi[1], epsilon = 1e-15);

    let chain = exact_chain(&e, 1.3).unwrap();
    let st = stationary_distribution(&chain).unwrap();
    assert!(l1(&st, &gibbs_weights(&e, 1.3)) < 1e-12);
    assert!(exact_chain(&[0.0, 0.0, 1.0], 1.0).is_err());
    assert!(exact_chain(&e, -1.0).is_err());
}

#[test]
fn stationary_examples() {
    let u = MarkovMatrix::from_columns(&[&[0.5, 0.5], &[0.5, 0.5]]).unwrap();
    let st = stationary_distribution(&u).unwrap();
    assert_abs_diff_eq!(st[0], 0.5, epsilon = 1e-14);

    let c = MarkovMatrix::from_columns(&[&[0.9, 0.1], &[0.3, 0.7]]).unwrap();
    let st = stationary_distribution(&c).unwrap();
    assert_abs_diff_eq!(st[0], 0.75, epsilon = 1e-12);
    assert_abs_diff_eq!(st[1], 0.25, epsilon = 1e-12);

    let id = MarkovMatrix::from_columns(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
    assert!(stationary_distribution(&id).is_err());
    assert!(MarkovMatrix::from_columns(&[&[0.9, 0.2], &[0.3, 0.7]]).is_err());
}

#[test]
fn approximate_chain_limits() {
    // levels that land exactly on outcomes 0, 2, 5, 7 of a 3-bit register
    let e = [0.0, 2.0, 5.0, 7.0];
    let beta = 0.9;
    let exact = exact_chain(&e, beta).unwrap();
    let delta = PhaseKernel::exact(&e, 3).unwrap();
    assert!(delta.blur() == 0.0);
    let p = approximate_chain_for(&e, beta, &delta).unwrap();
    assert!((p.matrix() - exact.matrix()).norm() < 1e-12);

    let e = spectrum(2, 402);
    let k = phase_kernel(&e, 4).unwrap();
    let flat = PhaseKernel {
        p: DMatrix::from_element(4, 16, 1.0 / 16.0),
        ..k
    };
    let p = approximate_chain_for(&e, beta, &flat).unwrap();
    for j in 1..4 {
        assert!((p.matrix().column(j) - p.matrix().column(0)).norm() < 1e-14);
    }
}

// Triple sum over outcomes, independent of the matrix-product implementation.
fn approximate_oracle(outcome: &MarkovMatrix, k: &PhaseKernel) -> DMatrix<f64> {
    let (n, m) = (k.levels(), k.outcomes());
    let mut out = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let mut acc = 0.0;
            for s in 0..m {
                for t in 0..m {
                    let post = k.p[(b, t)] / (0..n).map(|l| k.p[(l, t)]).sum::<f64>();
                    acc += k.p[(a, s)] * outcome.matrix()[(t, s)] * post;
                }
            }
            out[(b, a)] = acc;
        }
    }
    out
}

#[test]
fn approximate_chain_sharpens_with_bits() {
    let e = spectrum(2, 403);
    let beta = 1.0;
    let exact = exact_chain(&e, beta).unwrap();
    let k6 = phase_kernel(&e, 6).unwrap();
    let oc = outcome_chain(&k6, beta).unwrap();
    let p6 = approximate_chain(&oc, &k6).unwrap();
    assert!(p6.stochasticity_error() < 1e-10);
    assert!((p6.matrix() - approximate_oracle(&oc, &k6)).norm() < 1e-10);

    let err = |m: u32| {
        let k = phase_kernel(&e, m).unwrap();
        (approximate_chain_for(&e, beta, &k).unwrap().matrix() - exact.matrix()).norm()
    };
    assert!(err(8) < err(4), "{} vs {}", err(8), err(4));
}

#[test]
fn perturbation_bound_examples() {
    let e = spectrum(2, 404);
    let p = exact_chain(&e, 1.1).unwrap();
    let zero = chain_perturbation_bound(&p, &p).unwrap();
    assert_eq!(zero.bound, 0.0);
    assert!(zero.actual < 1e-12);

    // reversible chain: D^{-1/2} Y D^{1/2} is symmetric with norm 1/(1 - largest nonunit eigenvalue)
    let cp = chain_perturbation_bound(
        &p,
        &approximate_chain_for(&e, 1.1, &phase_kernel(&e, 6).unwrap()).unwrap(),
    )
    .unwrap();
    let pi = stationary_distribution(&p).unwrap();
    let n = pi.len();
    let sym = DMatrix::from_fn(n, n, |i, j| cp.y_matrix[(i, j)] * (pi[j] / pi[i]).sqrt());
    let ps = DMatrix::from_fn(n, n, |i, j| p.matrix()[(i, j)] * (pi[j] / pi[i]).sqrt());
    let mut ev: Vec<f64> = ps.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    let lam2 = ev[n - 2];
    assert_abs_diff_eq!(op2norm_real(&sym), 1.0 / (1.0 - lam2), epsilon = 1e-9);
    assert!(cp.y_residual < 1e-9);

    let mut rng = substream(405, 0);
    let q = DMatrix::from_fn(4, 4, |_, _| rng.random_range(0.1..1.0));
    let q = normalize_columns(q);
    let eps = DMatrix::from_fn(4, 4, |_, _| rng.random_range(0.0..0.01));
    let q2 = normalize_columns(&q + eps);
    let cp = chain_perturbation_bound(
        &MarkovMatrix::new(q).unwrap(),
        &MarkovMatrix::new(q2).unwrap(),
    )
    .unwrap();
    assert!(cp.bound_valid);
    assert!(cp.actual <= cp.bound, "{} > {}", cp.actual, cp.bound);
}

fn normalize_columns(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for mut c in m.column_iter_mut() {
        let s = c.sum();
        c.unscale_mut(s);
    }
    m
}

#[test]
fn algorithm_two_examples() {
    let e = spectrum(2, 406);
    let opts = IterationOptions::new(2000, 1e-12);
    let flat = run_algorithm_two_on_spectrum(&e, 0.0, KernelMode::Exact, opts).unwrap();
    assert_eq!(flat.converged_at, Some(1));

    let tr = run_algorithm_two_on_spectrum(&e, 1.5, KernelMode::Exact, opts)
        .unwrap()
        .require_converged()
        .unwrap();
    assert!(tr.final_deviation < 1e-9, "{}", tr.final_deviation);

    let blurred = run_algorithm_two_on_spectrum(
        &e,
        1.5,
        KernelMode::PhaseEstimation {
            m_bits: 6,
            slack: 0.0,
        },
        opts,
    )
    .unwrap()
    .require_converged()
    .unwrap();
    let cp = chain_perturbation_bound(&exact_chain(&e, 1.5).unwrap(), &blurred.chain).unwrap();
    if cp.bound_valid {
        assert!(blurred.final_deviation <= cp.bound + 1e-9);
    }
    assert_abs_diff_eq!(blurred.final_deviation, cp.actual, epsilon = 1e-8);

    let h = assemble(
        &sample_nondegenerate_system(2, &mut substream(406, 0))
            .unwrap()
            .0,
    )
    .unwrap();
    let via_h = run_algorithm_two(&h, 1.5, KernelMode::Exact, opts).unwrap();
    assert!(l1(via_h.final_populations(), tr.final_populations()) < 1e-12);

    let short =
        run_algorithm_two_on_spectrum(&e, 1.5, KernelMode::Exact, IterationOptions::new(1, 0.0))
            .unwrap();
    assert!(short.require_converged().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn exact_chain_detailed_balance(seed in any::<u64>(), beta in 0.0f64..20.0, n in 1usize..4) {
        let e = spectrum(n, seed);
        let p = exact_chain(&e, beta).unwrap();
        let pi = gibbs_weights(&e, beta);
        let m = p.matrix();
        for a in 0..e.len() {
            for b in 0..e.len() {
                prop_assert!((m[(b, a)] * pi[a] - m[(a, b)] * pi[b]).abs() < 1e-14);
                prop_assert!(m[(a, b)] > 0.0);
            }
        }
    }

    #[test]
    fn approximate_chain_is_stochastic(seed in any::<u64>(), beta in 0.0f64..5.0, m_bits in 1u32..9) {
        let e = spectrum(2, seed);
        let p = approximate_chain_for(&e, beta, &phase_kernel(&e, m_bits).unwrap()).unwrap();
        prop_assert!(p.stochasticity_error() < 1e-10);
        prop_assert!(p.matrix().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn kernel_rows_are_distributions(seed in any::<u64>(), m_bits in 1u32..10, slack in 0.0f64..0.5) {
        let e = spectrum(2, seed);
        let k = phase_kernel_with_slack(&e, m_bits, slack).unwrap();
        for row in k.p.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn y_commutes_with_chain(seed in any::<u64>(), beta in 0.1f64..3.0) {
        let e = spectrum(2, seed);
        let p = exact_chain(&e, beta).unwrap();
        let cp = chain_perturbation_bound(&p, &p).unwrap();
        let y = &cp.y_matrix;
        prop_assert!((y * p.matrix() - p.matrix() * y).norm() < 1e-9);
    }
}
