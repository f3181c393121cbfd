//! Independent oracles for the state-space module: quadrature for the
//! discretized input matrix, unscaled series for the matrix exponential,
//! convolution-form and naive-loop references for the scans.

use tmamba_core::gradcheck::grad_check;
use tmamba_core::graph::Graph;
use tmamba_core::rng::Rng;
use tmamba_core::ssm::{
    causal_conv_apply, conv_kernel, discretize_zoh, scan_sequential, selective_projections,
    selective_scan, selective_scan_parallel, selective_scan_raw, SelectiveParams, SsmParams,
};
use tmamba_core::tensor::Tensor;

/// Random continuous system with eigenvalues pushed left for stability.
fn random_stable_params(n: usize, rng: &mut Rng) -> SsmParams {
    let mut a = Tensor::randn(&[n, n], rng, 0.5);
    for i in 0..n {
        a.data_mut()[i * n + i] -= 1.5;
    }
    let b = Tensor::randn(&[n, 1], rng, 1.0);
    let c = Tensor::randn(&[1, n], rng, 1.0);
    let delta = rng.uniform_in(0.05, 0.3);
    SsmParams::new(a, b, c, delta).unwrap()
}

/// Simpson quadrature of integral_0^delta exp(s a) ds * b, the textbook form
/// of the zero-order-hold input matrix.
fn quadrature_bd(a: &Tensor, b: &Tensor, delta: f64, intervals: usize) -> Vec<f64> {
    let n = a.shape()[0];
    let expm_at = |s: f64| tmamba_core::linalg::expm(&a.scale(s)).unwrap();
    let matvec = |m: &Tensor, v: &Tensor| m.matmul(v).unwrap();
    let h = delta / intervals as f64;
    let mut acc = vec![0.0; n];
    for seg in 0..intervals {
        let s0 = seg as f64 * h;
        let f0 = matvec(&expm_at(s0), b);
        let fm = matvec(&expm_at(s0 + 0.5 * h), b);
        let f1 = matvec(&expm_at(s0 + h), b);
        for i in 0..n {
            acc[i] += h / 6.0 * (f0.data()[i] + 4.0 * fm.data()[i] + f1.data()[i]);
        }
    }
    acc
}

#[test]
fn discretized_b_matches_quadrature() {
    for seed in 0..5 {
        let mut rng = Rng::new(seed);
        let params = random_stable_params(4, &mut rng);
        let disc = discretize_zoh(&params).unwrap();
        let oracle = quadrature_bd(&params.a, &params.b, params.delta, 200);
        let b_d = disc.b_d.as_ref().unwrap();
        for i in 0..4 {
            assert!(
                (b_d.data()[i] - oracle[i]).abs() < 1e-8,
                "seed {seed} entry {i}: {} vs {}",
                b_d.data()[i],
                oracle[i]
            );
        }
    }
}

#[test]
fn discretized_a_matches_unscaled_series() {
    // independent route: plain Taylor sum with no scaling/squaring, valid
    // because the scaled arguments here have small norm
    for seed in 0..5 {
        let mut rng = Rng::new(100 + seed);
        let params = random_stable_params(4, &mut rng);
        let disc = discretize_zoh(&params).unwrap();
        let da = params.a.scale(params.delta);
        let mut acc = Tensor::eye(4);
        let mut term = Tensor::eye(4);
        for j in 1..80 {
            term = term.matmul(&da).unwrap().scale(1.0 / j as f64);
            acc = acc.add(&term);
        }
        assert!(
            disc.a_d.as_ref().unwrap().max_abs_diff(&acc) < 1e-10,
            "seed {seed}"
        );
    }
}

#[test]
fn recurrence_equals_convolution_form() {
    for seed in 0..50u64 {
        let mut rng = Rng::new(seed);
        let params = discretize_zoh(&random_stable_params(4, &mut rng)).unwrap();
        let m = 8 + rng.below(57); // up to 64
        let x: Vec<f64> = (0..m).map(|_| rng.gaussian()).collect();
        let by_scan = scan_sequential(&params, &x);
        let kernel = conv_kernel(&params, m).unwrap();
        let by_conv = causal_conv_apply(&kernel, &x);
        for t in 0..m {
            assert!(
                (by_scan[t] - by_conv[t]).abs() < 1e-10,
                "seed {seed} t {t}: {} vs {}",
                by_scan[t],
                by_conv[t]
            );
        }
    }
}

#[test]
fn scan_is_linear_in_input() {
    let mut rng = Rng::new(7);
    let params = discretize_zoh(&random_stable_params(3, &mut rng)).unwrap();
    let m = 24;
    let x: Vec<f64> = (0..m).map(|_| rng.gaussian()).collect();
    let z: Vec<f64> = (0..m).map(|_| rng.gaussian()).collect();
    let (alpha, beta) = (0.7, -1.3);
    let mixed: Vec<f64> = x.iter().zip(&z).map(|(a, b)| alpha * a + beta * b).collect();
    let lhs = scan_sequential(&params, &mixed);
    let yx = scan_sequential(&params, &x);
    let yz = scan_sequential(&params, &z);
    for t in 0..m {
        let rhs = alpha * yx[t] + beta * yz[t];
        assert!((lhs[t] - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
    }
}

#[test]
fn frozen_projections_reduce_to_dense_diagonal_scan() {
    // zero projection weights leave only the biases: constant b, c, delta per
    // token, which is the non-selective SSM with diagonal evolution
    let mut rng = Rng::new(11);
    let (d, n, m) = (1, 4, 20);
    let mut sel = SelectiveParams::init(d, n, &mut rng);
    sel.w_delta = Tensor::zeros(&[d, d]);
    sel.w_b = Tensor::zeros(&[d, n]);
    sel.w_c = Tensor::zeros(&[d, n]);

    let x = Tensor::randn(&[m, d], &mut rng, 1.0);
    let selective = selective_scan(&sel, &x).unwrap();

    // dense counterpart: diagonal A, same constant delta/b/c
    let (delta, bconst, cconst) = selective_projections(&sel, &x).unwrap();
    let dt = delta.data()[0];
    let mut a_dense = Tensor::zeros(&[n, n]);
    for i in 0..n {
        a_dense.data_mut()[i * n + i] = sel.a.data()[i];
    }
    let b_col = Tensor::new(vec![n, 1], bconst.row(0).to_vec()).unwrap();
    let c_row = Tensor::new(vec![1, n], cconst.row(0).to_vec()).unwrap();
    let dense = discretize_zoh(&SsmParams::new(a_dense, b_col, c_row, dt).unwrap()).unwrap();
    let xs: Vec<f64> = x.data().to_vec();
    let reference = scan_sequential(&dense, &xs);
    for t in 0..m {
        assert!(
            (selective.data()[t] - reference[t]).abs() < 1e-10,
            "t {t}: {} vs {}",
            selective.data()[t],
            reference[t]
        );
    }
}

#[test]
fn selective_scan_matches_naive_interpreter() {
    // per-token loop with the closed-form discretization, written separately
    // from the production kernel
    let mut rng = Rng::new(13);
    let (m, d, n) = (16, 4, 3);
    let sel = SelectiveParams::init(d, n, &mut rng);
    let x = Tensor::randn(&[m, d], &mut rng, 1.0);
    let y = selective_scan(&sel, &x).unwrap();

    let (delta, b, c) = selective_projections(&sel, &x).unwrap();
    let mut h = vec![0.0; d * n];
    for t in 0..m {
        for di in 0..d {
            let dt = delta.data()[t * d + di];
            let mut yt = 0.0;
            for i in 0..n {
                let av = sel.a.data()[di * n + i];
                let z = dt * av;
                let abar = z.exp();
                // closed form (exp(z) - 1)/z; arguments here are well away
                // from the singular point
                let bbar = (z.exp() - 1.0) / z * dt * b.data()[t * n + i];
                h[di * n + i] = abar * h[di * n + i] + bbar * x.data()[t * d + di];
                yt += c.data()[t * n + i] * h[di * n + i];
            }
            assert!(
                (y.data()[t * d + di] - yt).abs() < 1e-10,
                "t {t} ch {di}: {} vs {yt}",
                y.data()[t * d + di]
            );
        }
    }
}

#[test]
fn parallel_selective_scan_matches_sequential() {
    let mut rng = Rng::new(17);
    for &m in &[8usize, 64, 512] {
        let (d, n) = (4, 4);
        let sel = SelectiveParams::init(d, n, &mut rng);
        let x = Tensor::randn(&[m, d], &mut rng, 1.0);
        let seq = selective_scan(&sel, &x).unwrap();
        let par = selective_scan_parallel(&sel, &x).unwrap();
        let rel = par.max_abs_diff(&seq) / seq.max_abs().max(1e-12);
        assert!(rel < 1e-8, "length {m}: relative deviation {rel}");
    }
}

#[test]
fn selective_scan_gradients_pass_for_all_projection_weights() {
    let mut rng = Rng::new(19);
    let (m, d, n) = (6, 3, 2);
    let sel = SelectiveParams::init(d, n, &mut rng);
    let x = Tensor::randn(&[m, d], &mut rng, 1.0);

    // every weight tensor takes a turn as the checked variable
    let run = |which: &str, value: &Tensor| -> f64 {
        grad_check(
            |g, var| {
                let xv = g.constant(x.clone());
                let a = if which == "a" { var } else { g.constant(sel.a.clone()) };
                let w_delta = if which == "w_delta" { var } else { g.constant(sel.w_delta.clone()) };
                let bias_delta = if which == "bias_delta" { var } else { g.constant(sel.bias_delta.clone()) };
                let w_b = if which == "w_b" { var } else { g.constant(sel.w_b.clone()) };
                let bias_b = if which == "bias_b" { var } else { g.constant(sel.bias_b.clone()) };
                let w_c = if which == "w_c" { var } else { g.constant(sel.w_c.clone()) };
                let bias_c = if which == "bias_c" { var } else { g.constant(sel.bias_c.clone()) };
                let xin = if which == "x" { var } else { xv };

                let pre = g.matmul(xin, w_delta);
                let pre = g.add_row_bias(pre, bias_delta);
                let delta = g.softplus(pre);
                let b = g.matmul(xin, w_b);
                let b = g.add_row_bias(b, bias_b);
                let c = g.matmul(xin, w_c);
                let c = g.add_row_bias(c, bias_c);
                let y = g.selective_scan(xin, delta, b, c, a);
                let sq = g.mul(y, y);
                g.mean_all(sq)
            },
            value,
            1e-5,
        )
        .unwrap()
    };

    for (name, tensor) in [
        ("x", &x),
        ("a", &sel.a),
        ("w_delta", &sel.w_delta),
        ("bias_delta", &sel.bias_delta),
        ("w_b", &sel.w_b),
        ("bias_b", &sel.bias_b),
        ("w_c", &sel.w_c),
        ("bias_c", &sel.bias_c),
    ] {
        let err = run(name, tensor);
        assert!(err < 1e-4, "{name}: max rel err {err}");
    }
}

#[test]
fn raw_scan_shapes_and_cache() {
    let mut rng = Rng::new(23);
    let (m, d, n) = (5, 2, 3);
    let x = Tensor::randn(&[m, d], &mut rng, 1.0);
    let delta = Tensor::full(&[m, d], 0.05);
    let b = Tensor::randn(&[m, n], &mut rng, 1.0);
    let c = Tensor::randn(&[m, n], &mut rng, 1.0);
    let mut a = Tensor::zeros(&[d, n]);
    for i in 0..d * n {
        a.data_mut()[i] = -1.0 - (i % n) as f64;
    }
    let (y, cache) = selective_scan_raw(&x, &delta, &b, &c, &a);
    assert_eq!(y.shape(), &[m, d]);
    assert_eq!(cache.hidden.len(), m * d * n);
    assert_eq!(cache.abar.len(), m * d * n);
}

#[test]
fn graph_selective_scan_matches_plain() {
    let mut rng = Rng::new(29);
    let (m, d, n) = (12, 3, 4);
    let sel = SelectiveParams::init(d, n, &mut rng);
    let x = Tensor::randn(&[m, d], &mut rng, 1.0);
    let plain = selective_scan(&sel, &x).unwrap();

    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let a = g.constant(sel.a.clone());
    let w_delta = g.constant(sel.w_delta.clone());
    let bias_delta = g.constant(sel.bias_delta.clone());
    let w_b = g.constant(sel.w_b.clone());
    let bias_b = g.constant(sel.bias_b.clone());
    let w_c = g.constant(sel.w_c.clone());
    let bias_c = g.constant(sel.bias_c.clone());
    let pre = g.matmul(xv, w_delta);
    let pre = g.add_row_bias(pre, bias_delta);
    let delta = g.softplus(pre);
    let b = g.matmul(xv, w_b);
    let b = g.add_row_bias(b, bias_b);
    let c = g.matmul(xv, w_c);
    let c = g.add_row_bias(c, bias_c);
    let y = g.selective_scan(xv, delta, b, c, a);
    assert!(g.value(y).max_abs_diff(&plain) < 1e-14);
}
