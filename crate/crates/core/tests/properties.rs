mod common;

use common::*;
use itergp::faer::Mat;
use itergp::gp::{gaussian_nll, variance_vs_rank};
use itergp::kernels::{kernel_hyper_grad, matern52, HyperParams};
use itergp::linop::{LinearOperator, Precision, ShiftedKernelOperator};
use itergp::rng::rademacher_probes;
use itergp::solvers::{
    hutchinson_trace, lanczos, pcg_solve, pivoted_cholesky, slq_logdet, Preconditioner,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

fn theta_strategy(d: usize) -> impl Strategy<Value = HyperParams> {
    (
        prop::collection::vec(0.05f64..5.0, d),
        0.05f64..5.0,
        0.05f64..5.0,
        -1.0f64..1.0,
    )
        .prop_map(|(ls, s2, noise, mean)| HyperParams::from_constrained(&ls, s2, noise, mean).unwrap())
}

fn inputs_strategy(n: usize, d: usize) -> impl Strategy<Value = Mat<f64>> {
    prop::collection::vec(-2.0f64..2.0, n * d).prop_map(move |v| Mat::from_fn(n, d, |i, j| v[i * d + j]))
}

fn to_na(m: &Mat<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn shifted_operator_is_symmetric_and_bounded_below(
        x in inputs_strategy(25, 2),
        theta in theta_strategy(2),
        v in prop::collection::vec(-1.0f64..1.0, 25),
    ) {
        let op = ShiftedKernelOperator::new(x.as_ref(), &theta, Precision::F64).unwrap();
        let dense = op.to_dense().unwrap();
        for i in 0..25 {
            for j in 0..25 {
                prop_assert_eq!(dense[(i, j)], dense[(j, i)]);
            }
        }
        let av = op.matvec(&v).unwrap();
        let quad: f64 = av.iter().zip(&v).map(|(a, b)| a * b).sum();
        let vv: f64 = v.iter().map(|a| a * a).sum();
        prop_assert!(quad >= theta.noise() * vv * (1.0 - 1e-10) - 1e-12);

        let materialized = op.clone().materialize().unwrap();
        let bv = materialized.matvec(&v).unwrap();
        for (a, b) in av.iter().zip(&bv) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn kernel_on_distinct_points_passes_cholesky(x in inputs_strategy(40, 3), theta in theta_strategy(3)) {
        let mut k = to_na(&matern52(x.as_ref(), x.as_ref(), &theta).unwrap());
        for i in 0..40 {
            k[(i, i)] += theta.noise();
        }
        prop_assert!(k.cholesky().is_some());
    }

    #[test]
    fn gradient_operators_match_finite_differences(x in inputs_strategy(6, 2), theta in theta_strategy(2)) {
        let base = theta.to_vector();
        let h = 1e-6;
        for id in theta.param_ids() {
            let p = theta.index_of(id).unwrap();
            let g = kernel_hyper_grad(x.as_ref(), &theta, id).unwrap().to_dense().unwrap();
            let shifted = |delta: f64| {
                let mut v = base.clone();
                v[p] += delta;
                let t = HyperParams::from_vector(2, &v).unwrap();
                ShiftedKernelOperator::new(x.as_ref(), &t, Precision::F64).unwrap().to_dense().unwrap()
            };
            let (up, down) = (shifted(h), shifted(-h));
            for i in 0..6 {
                for j in 0..6 {
                    let fd = (up[(i, j)] - down[(i, j)]) / (2.0 * h);
                    prop_assert!((g[(i, j)] - fd).abs() <= 1e-5 * fd.abs().max(1e-3),
                        "{:?} ({}, {}): {} vs {}", id, i, j, g[(i, j)], fd);
                }
            }
        }
    }

    #[test]
    fn cg_matches_dense_solve(x in inputs_strategy(60, 2), theta in theta_strategy(2), seed in 0u64..1000) {
        let op = ShiftedKernelOperator::new(x.as_ref(), &theta, Precision::F64).unwrap();
        let b = rademacher_probes(60, 2, seed);
        let rep = pcg_solve(&op, b.as_ref(), 1e-10, 60, &Preconditioner::for_kernel(&op, 10).unwrap()).unwrap();
        let dense = to_na(&op.to_dense().unwrap());
        let eig = dense.clone().symmetric_eigenvalues();
        let cond = eig.max() / eig.min();
        let chol = dense.cholesky().unwrap();
        for c in 0..2 {
            let want = chol.solve(&DVector::from_fn(60, |i, _| b[(i, c)]));
            let got = DVector::from_column_slice(rep.solution(c));
            // A residual of 1e-10 bounds the error by 1e-10 * cond.
            prop_assert!((&got - &want).norm() <= 1e-8f64.max(2e-10 * cond) * want.norm());
            prop_assert_eq!(rep.converged[c], rep.relative_residuals[c] <= 1e-10);
        }
    }

    #[test]
    fn pivoted_cholesky_error_is_nonincreasing(x in inputs_strategy(30, 2), theta in theta_strategy(2)) {
        let op = ShiftedKernelOperator::new(x.as_ref(), &theta, Precision::F64).unwrap();
        let diag = vec![op.outputscale(); 30];
        let mut last = f64::INFINITY;
        for w in 1..=30 {
            let pc = pivoted_cholesky(&diag, |j| op.kernel_column(j), w).unwrap();
            prop_assert!(pc.residual_trace() <= last + 1e-12);
            last = pc.residual_trace();
        }
    }

    #[test]
    fn preconditioner_is_spd_inverse(x in inputs_strategy(40, 2), theta in theta_strategy(2), v in prop::collection::vec(-1.0f64..1.0, 40)) {
        let op = ShiftedKernelOperator::new(x.as_ref(), &theta, Precision::F64).unwrap();
        let p = Preconditioner::for_kernel(&op, 8).unwrap();
        let pv = p.apply_vec(&v).unwrap();
        let vv: f64 = v.iter().map(|a| a * a).sum();
        let vpv: f64 = v.iter().zip(&pv).map(|(a, b)| a * b).sum();
        prop_assert!(vv == 0.0 || vpv > 0.0);
        let l = to_na(&p.factor().to_owned());
        let full = &l * l.transpose() + DMatrix::identity(40, 40) * p.noise();
        let back = &full * DVector::from_vec(pv);
        for i in 0..40 {
            prop_assert!((back[i] - v[i]).abs() <= 1e-9 * (1.0 + v[i].abs()));
        }
    }

    #[test]
    fn proposition_one_sequences_are_nonincreasing(x in inputs_strategy(40, 2), theta in theta_strategy(2), z in inputs_strategy(1, 2)) {
        let mut k_hat = matern52(x.as_ref(), x.as_ref(), &theta).unwrap();
        for i in 0..40 {
            k_hat[(i, i)] += theta.noise();
        }
        let cross = matern52(z.as_ref(), x.as_ref(), &theta).unwrap();
        let v: Vec<f64> = (0..40).map(|j| cross[(0, j)]).collect();
        let rv = variance_vs_rank(k_hat.as_ref(), &v, theta.outputscale(), 40).unwrap();
        for k in 1..40 {
            prop_assert!(rv.variances[k] - rv.variances[k - 1] <= 1e-10);
        }
    }

    #[test]
    fn nll_grid_minimizer_is_nearest_to_squared_residual(resid in 0.05f64..3.0) {
        let target = resid * resid;
        let grid: Vec<f64> = (0..101).map(|i| target * 2f64.powf((i as f64 - 50.0) / 10.0)).collect();
        let best = (0..grid.len())
            .min_by(|&a, &b| gaussian_nll(resid, grid[a], 0.0).total_cmp(&gaussian_nll(resid, grid[b], 0.0)))
            .unwrap();
        prop_assert_eq!(best, 50);
    }
}

#[test]
fn lanczos_inverse_at_full_rank_matches_dense() {
    let mut r = rng(21);
    let x = uniform_inputs(&mut r, 70, 2);
    let theta = HyperParams::from_constrained(&[0.4, 0.6], 1.0, 0.2, 0.0).unwrap();
    let op = ShiftedKernelOperator::new(x.as_ref(), &theta, Precision::F64).unwrap();
    let start: Vec<f64> = (0..70).map(|i| 1.0 + (i as f64 * 0.37).sin()).collect();
    let f = lanczos(&op, &start, 70, true).unwrap();
    let q = to_na(&f.q);
    let t = to_na(&f.tridiagonal());
    let approx = &q * t.try_inverse().unwrap() * q.transpose();
    let exact = to_na(&op.to_dense().unwrap()).try_inverse().unwrap();
    assert!((approx - exact).norm() < 1e-6);
}

#[test]
fn lanczos_ritz_values_lie_inside_spectrum() {
    let mut r = rng(22);
    let x = uniform_inputs(&mut r, 100, 3);
    let theta = HyperParams::from_constrained(&[0.5, 0.5, 0.5], 1.0, 0.05, 0.0).unwrap();
    let op = ShiftedKernelOperator::new(x.as_ref(), &theta, Precision::F64).unwrap();
    let spectrum = to_na(&op.to_dense().unwrap()).symmetric_eigenvalues();
    let (lo, hi) = (spectrum.min(), spectrum.max());
    let start = vec![1.0; 100];
    for k in [2, 5, 10, 20] {
        let eig = lanczos(&op, &start, k, true).unwrap().eigen().unwrap();
        assert!(eig.values[0] >= lo - 1e-10);
        assert!(*eig.values.last().unwrap() <= hi + 1e-10);
    }
}

#[test]
fn kernel_matrix_passes_cholesky_at_n_500() {
    let mut r = rng(23);
    let x = uniform_inputs(&mut r, 500, 3);
    let theta = HyperParams::from_constrained(&[0.3, 0.8, 1.5], 2.0, 0.05, 0.0).unwrap();
    let k = oracle_shifted(&x, &theta);
    assert!(k.cholesky().is_some());
}

#[test]
fn estimators_are_bitwise_reproducible() {
    let mut r = rng(24);
    let x = uniform_inputs(&mut r, 50, 2);
    let theta = random_theta(&mut r, 2);
    let op = ShiftedKernelOperator::new(x.as_ref(), &theta, Precision::F64).unwrap();
    let a = slq_logdet(&op, 5, 20, 77).unwrap();
    let b = slq_logdet(&op, 5, 20, 77).unwrap();
    assert_eq!(a.value.to_bits(), b.value.to_bits());
    let probes = rademacher_probes(50, 5, 77);
    let g = kernel_hyper_grad(x.as_ref(), &theta, itergp::kernels::ParamId::Outputscale).unwrap();
    let solve = |z: itergp::faer::MatRef<'_, f64>| {
        Ok(pcg_solve(&op, z, 1e-8, 200, &Preconditioner::identity(50))?.solutions)
    };
    let t1 = hutchinson_trace(solve, &g, probes.as_ref()).unwrap();
    let t2 = hutchinson_trace(solve, &g, probes.as_ref()).unwrap();
    assert_eq!(t1.value.to_bits(), t2.value.to_bits());
}

#[test]
fn slq_on_diagonal_spectrum_is_within_three_standard_errors() {
    let op = itergp::linop::DiagonalOperator::new((1..=10).map(|i| i as f64).collect());
    let exact: f64 = (1..=10).map(|i| (i as f64).ln()).sum();
    let est = slq_logdet(&op, 30, 10, 5).unwrap();
    assert!((est.value - exact).abs() <= 3.0 * est.std_error + 1e-12);
}

#[test]
fn hutchinson_on_diagonal_is_within_three_standard_errors() {
    let g = itergp::linop::DiagonalOperator::new(vec![1.0, 2.0, 3.0]);
    let probes = rademacher_probes(3, 10_000, 6);
    let est = hutchinson_trace(|z| Ok(z.to_owned()), &g, probes.as_ref()).unwrap();
    assert!((est.value - 6.0).abs() <= 3.0 * est.std_error);
}

#[test]
fn preconditioning_reduces_cg_iterations() {
    let mut wins = 0;
    let trials = 20;
    for t in 0..trials {
        let mut r = rng(100 + t);
        let x = uniform_inputs(&mut r, 300, 3);
        let theta = HyperParams::from_constrained(&[0.5, 0.5, 0.5], 1.0, 0.01, 0.0).unwrap();
        let op = ShiftedKernelOperator::new(x.as_ref(), &theta, Precision::F64).unwrap().materialize().unwrap();
        let b = rademacher_probes(300, 1, t);
        let plain = pcg_solve(&op, b.as_ref(), 1e-6, 1000, &Preconditioner::identity(300)).unwrap();
        let pre = pcg_solve(&op, b.as_ref(), 1e-6, 1000, &Preconditioner::for_kernel(&op, 50).unwrap()).unwrap();
        if pre.iterations[0] <= plain.iterations[0] {
            wins += 1;
        }
    }
    assert!(wins * 10 >= trials * 9, "{wins}/{trials}");
}
