//! Wall-clock scaling measurements shared by the CLI benchmark command and
//! the verification suites.

use crate::attention::AttnParams;
use crate::rng::Rng;
use crate::ssm::{selective_scan, SelectiveParams};
use crate::tensor::Tensor;
use std::time::Instant;

/// Median wall time of `f` over `repeats` runs after `warmup` discarded runs.
pub fn median_seconds(mut f: impl FnMut(), warmup: usize, repeats: usize) -> f64 {
    for _ in 0..warmup {
        f();
    }
    let mut times: Vec<f64> = (0..repeats.max(1))
        .map(|_| {
            let t0 = Instant::now();
            f();
            t0.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times[times.len() / 2]
}

/// Least-squares slope of log(y) against log(x). Requires at least two
/// points; returns None otherwise.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
}

/// Time the selective scan across sequence lengths; returns (length, median
/// seconds) pairs.
pub fn time_selective_scan(
    lengths: &[usize],
    d: usize,
    n: usize,
    repeats: usize,
    seed: u64,
) -> Vec<(f64, f64)> {
    let mut rng = Rng::new(seed);
    let sel = SelectiveParams::init(d, n, &mut rng);
    lengths
        .iter()
        .map(|&m| {
            let x = Tensor::randn(&[m, d], &mut rng, 1.0);
            let secs = median_seconds(
                || {
                    let y = selective_scan(&sel, &x).unwrap();
                    std::hint::black_box(y.data()[0]);
                },
                1,
                repeats,
            );
            (m as f64, secs)
        })
        .collect()
}

/// Row-streamed scaled dot-product attention: same O(L^2 d) arithmetic as
/// the map-materializing form without the O(L^2) memory, so long sequences
/// can be timed.
pub fn attention_streamed(q: &Tensor, k: &Tensor, v: &Tensor, params: &AttnParams) -> Tensor {
    let d = params.width();
    let qp = q.matmul(&params.w_q).unwrap();
    let kp = k.matmul(&params.w_k).unwrap();
    let vp = v.matmul(&params.w_v).unwrap();
    let (lq, lk) = (qp.shape()[0], kp.shape()[0]);
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = Tensor::zeros(&[lq, d]);
    let mut scores = vec![0.0; lk];
    for i in 0..lq {
        let qrow = qp.row(i);
        let mut mx = f64::NEG_INFINITY;
        for (j, s) in scores.iter_mut().enumerate() {
            let krow = kp.row(j);
            let mut acc = 0.0;
            for c in 0..d {
                acc += qrow[c] * krow[c];
            }
            *s = acc * scale;
            mx = mx.max(*s);
        }
        let mut z = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - mx).exp();
            z += *s;
        }
        let orow = &mut out.data_mut()[i * d..(i + 1) * d];
        for (j, &s) in scores.iter().enumerate() {
            let wgt = s / z;
            let vrow = vp.row(j);
            for c in 0..d {
                orow[c] += wgt * vrow[c];
            }
        }
    }
    out
}

/// Time quadratic self-attention across sequence lengths.
pub fn time_attention(lengths: &[usize], d: usize, repeats: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = Rng::new(seed);
    let params = AttnParams::init(d, &mut rng);
    lengths
        .iter()
        .map(|&l| {
            let x = Tensor::randn(&[l, d], &mut rng, 1.0);
            let secs = median_seconds(
                || {
                    let y = attention_streamed(&x, &x, &x, &params);
                    std::hint::black_box(y.data()[0]);
                },
                1,
                repeats,
            );
            (l as f64, secs)
        })
        .collect()
}
