mod common;

use common::*;
use itergp::faer::Mat;
use itergp::gp::{
    build_caches, build_caches_multi, mll, mll_and_grad, mll_terms, predict, variance_vs_rank,
    Backend, GpModel, IterativeSettings,
};
use itergp::kernels::HyperParams;

fn exact_settings(n: usize, probes: usize) -> IterativeSettings {
    IterativeSettings {
        cg_tol: 1e-10,
        precond_rank: 50,
        max_cg_iters: 2 * n,
        num_probes: probes,
        logdet_rank: n,
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn cholesky_mll_matches_dense_oracle() {
    let mut r = rng(1);
    let x = uniform_inputs(&mut r, 60, 2);
    let y = smooth_targets(&mut r, &x, 0.1);
    let theta = random_theta(&mut r, 2);
    let oracle = oracle_posterior(&x, &y, &theta, &x);
    let model = GpModel::new(x, y, theta, Backend::Cholesky).unwrap();
    let value = mll(&model).unwrap();
    assert!((value * 60.0 - oracle.mll_total).abs() < 1e-9 * oracle.mll_total.abs());
}

#[test]
fn cholesky_gradient_matches_finite_differences() {
    let mut r = rng(2);
    for _ in 0..3 {
        let x = uniform_inputs(&mut r, 50, 3);
        let y = smooth_targets(&mut r, &x, 0.2);
        let theta = random_theta(&mut r, 3);
        let model = GpModel::new(x, y, theta.clone(), Backend::Cholesky).unwrap();
        let grad = mll_and_grad(&model).unwrap().gradient.unwrap();
        let base = theta.to_vector();
        let h = 1e-6;
        for p in 0..base.len() {
            let eval = |delta: f64| {
                let mut v = base.clone();
                v[p] += delta;
                let t = HyperParams::from_vector(3, &v).unwrap();
                mll(&model.with_hyperparams(t).unwrap()).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let err = (grad.values[p] - fd).abs();
            assert!(err <= 1e-5 * fd.abs().max(1e-3), "param {p}: {} vs {fd}", grad.values[p]);
        }
    }
}

#[test]
fn gradient_spanning_several_row_blocks_matches_finite_differences() {
    let mut r = rng(12);
    let n = 300;
    let x = uniform_inputs(&mut r, n, 4);
    let y = smooth_targets(&mut r, &x, 0.2);
    let theta = random_theta(&mut r, 4);
    let model = GpModel::new(x.clone(), y.clone(), theta.clone(), Backend::Cholesky).unwrap();
    let grad = mll_and_grad(&model).unwrap().gradient.unwrap();
    let base = theta.to_vector();
    let h = 1e-6;
    for p in 0..base.len() {
        let eval = |delta: f64| {
            let mut v = base.clone();
            v[p] += delta;
            mll(&model.with_hyperparams(HyperParams::from_vector(4, &v).unwrap()).unwrap()).unwrap()
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        assert!((grad.values[p] - fd).abs() <= 1e-5 * fd.abs().max(1e-3), "param {p}: {} vs {fd}", grad.values[p]);
    }

    // Exact solves make the probe-weighted pass agree on the quadratic part.
    let iterative = GpModel::new(x, y, theta, Backend::Iterative(exact_settings(n, 20))).unwrap();
    let approx = mll_and_grad(&iterative).unwrap().gradient.unwrap();
    for p in 0..base.len() {
        assert!((approx.quadratic[p] - grad.quadratic[p]).abs() <= 1e-6 * grad.quadratic[p].abs().max(1.0));
    }
}

#[test]
fn iterative_inference_matches_cholesky_at_full_rank() {
    let mut r = rng(3);
    let n = 200;
    let x = uniform_inputs(&mut r, n, 3);
    let y = smooth_targets(&mut r, &x, 0.3);
    let theta = random_theta(&mut r, 3);
    let x_star = uniform_inputs(&mut r, 40, 3);
    let oracle = oracle_posterior(&x, &y, &theta, &x_star);

    let model = GpModel::new(x, y, theta, Backend::Iterative(exact_settings(n, 50))).unwrap();
    let eval = mll_terms(&model).unwrap();
    assert!((eval.quadratic - oracle.quadratic).abs() <= 1e-8 * oracle.quadratic.abs());
    let total = eval.value * n as f64;
    let se = 0.5 * eval.log_det_std_error;
    assert!((total - oracle.mll_total).abs() <= 3.0 * se + 1e-8, "{total} vs {} (se {se})", oracle.mll_total);

    let cache = build_caches(&model, n).unwrap();
    let pred = predict(&cache, &model, x_star.as_ref(), false).unwrap();
    for i in 0..40 {
        assert!((pred.mean[i] - oracle.mean[i]).abs() < 1e-6);
        assert!((pred.variance[i] - oracle.latent_variance[i]).abs() < 1e-6);
    }
}

#[test]
fn iterative_gradient_within_three_standard_errors() {
    let mut r = rng(4);
    let n = 120;
    let x = uniform_inputs(&mut r, n, 2);
    let y = smooth_targets(&mut r, &x, 0.3);
    let theta = random_theta(&mut r, 2);
    let exact = GpModel::new(x.clone(), y.clone(), theta.clone(), Backend::Cholesky).unwrap();
    let exact_grad = mll_and_grad(&exact).unwrap().gradient.unwrap();
    let settings = IterativeSettings { gradient_std_errors: true, ..exact_settings(n, 200) };
    let model = GpModel::new(x, y, theta, Backend::Iterative(settings)).unwrap();
    let grad = mll_and_grad(&model).unwrap().gradient.unwrap();
    let se = grad.std_errors.unwrap();
    for p in 0..grad.values.len() {
        let err = (grad.values[p] - exact_grad.values[p]).abs();
        assert!(err <= 3.0 * se[p] + 1e-9, "param {p}: err {err}, se {}", se[p]);
        assert!((grad.quadratic[p] - exact_grad.quadratic[p]).abs() <= 1e-6 * exact_grad.quadratic[p].abs().max(1.0));
    }
}

#[test]
fn full_rank_cache_reproduces_dense_inverse() {
    let mut r = rng(5);
    let n = 80;
    let x = uniform_inputs(&mut r, n, 2);
    let y = smooth_targets(&mut r, &x, 0.3);
    let theta = HyperParams::from_constrained(&[0.3, 0.4], 1.0, 0.1, 0.0).unwrap();
    let inv = oracle_shifted(&x, &theta).try_inverse().unwrap();
    let model = GpModel::new(x, y, theta, Backend::Iterative(exact_settings(n, 4))).unwrap();
    let cache = build_caches(&model, n).unwrap();
    let rrt = cache.inverse_approximation();
    let frob: f64 = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (rrt[(i, j)] - inv[(i, j)]).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(frob < 1e-6, "Frobenius error {frob}");
}

#[test]
fn shared_lanczos_caches_match_individual_builds() {
    let mut r = rng(6);
    let x = uniform_inputs(&mut r, 90, 2);
    let y = smooth_targets(&mut r, &x, 0.3);
    let model = GpModel::new(x, y, random_theta(&mut r, 2), Backend::Iterative(exact_settings(90, 4)))
        .unwrap();
    let many = build_caches_multi(&model, &[5, 20, 60]).unwrap();
    for (cache, k) in many.iter().zip([5, 20, 60]) {
        let single = build_caches(&model, k).unwrap();
        assert_eq!(cache.rank, single.rank);
        let (a, b) = (cache.inverse_approximation(), single.inverse_approximation());
        for i in 0..90 {
            for j in 0..90 {
                assert!((a[(i, j)] - b[(i, j)]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn noiseless_limit_interpolates_training_point() {
    let mut r = rng(7);
    let x = uniform_inputs(&mut r, 30, 1);
    let y = smooth_targets(&mut r, &x, 0.0);
    let theta = HyperParams::from_constrained(&[0.5], 1.0, 1e-8, 0.0).unwrap();
    let model = GpModel::new(x.clone(), y.clone(), theta, Backend::Cholesky).unwrap();
    let cache = build_caches(&model, 30).unwrap();
    let x_star = Mat::from_fn(1, 1, |_, _| x[(3, 0)]);
    let pred = predict(&cache, &model, x_star.as_ref(), false).unwrap();
    assert!((pred.mean[0] - y[3]).abs() < 1e-5);
    assert!(pred.variance[0] < 1e-6);
}

#[test]
fn full_eigen_truncation_gives_exact_posterior_variance() {
    let mut r = rng(8);
    let n = 60;
    let x = uniform_inputs(&mut r, n, 2);
    let y = smooth_targets(&mut r, &x, 0.2);
    let theta = random_theta(&mut r, 2);
    let x_star = uniform_inputs(&mut r, 1, 2);
    let oracle = oracle_posterior(&x, &y, &theta, &x_star);
    let k_hat = oracle_shifted(&x, &theta);
    let dense = Mat::from_fn(n, n, |i, j| k_hat[(i, j)]);
    let cross = oracle_kernel(&x_star, &x, &theta);
    let v: Vec<f64> = (0..n).map(|j| cross[(0, j)]).collect();
    let rv = variance_vs_rank(dense.as_ref(), &v, theta.outputscale(), n).unwrap();
    assert!((rv.variances[n - 1] - oracle.latent_variance[0]).abs() < 1e-10);
    for k in 1..n {
        assert!(rv.variances[k] <= rv.variances[k - 1] + 1e-10);
    }
}

#[test]
fn tighter_tolerance_never_loosens_residual() {
    let mut r = rng(9);
    let n = 150;
    let x = uniform_inputs(&mut r, n, 2);
    let y = smooth_targets(&mut r, &x, 0.3);
    let theta = random_theta(&mut r, 2);
    let k_hat = oracle_shifted(&x, &theta);
    let mut last = f64::INFINITY;
    for tol in [1.0, 1e-1, 1e-2, 1e-3, 1e-6] {
        let settings = IterativeSettings { cg_tol: tol, precond_rank: 5, ..Default::default() };
        let model = GpModel::new(x.clone(), y.clone(), theta.clone(), Backend::Iterative(settings)).unwrap();
        let cache = build_caches(&model, 1).unwrap();
        let m = nalgebra::DVector::from_vec(cache.mean_cache.clone());
        let resid = nalgebra::DVector::from_vec(model.residual());
        let err = (&k_hat * m - &resid).norm() / resid.norm();
        assert!(err <= tol);
        assert!(err <= last * (1.0 + 1e-12));
        last = err;
    }
}
