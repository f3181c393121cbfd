//! Attention family: scaled dot-product attention, sparse causal attention
//! over video frames, and the low-rank bypass path.
//!
//! The bypass path replaces the d x d query/key projections with d x k
//! factors initialized from the truncated SVD of W_Q W_K^T, so the rank-k
//! score map starts as the best Frobenius-norm approximation of the frozen
//! base map. Scores from both paths are mixed pre-softmax with weight phi;
//! only the low-rank factors (and optionally phi) ever receive gradients.

use crate::error::{Error, Result};
use crate::graph::{Graph, VarId};
use crate::linalg::{orthonormal_columns, svd};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::video::VideoTensor;

/// Frozen base projections.
#[derive(Debug, Clone)]
pub struct AttnParams {
    pub w_q: Tensor, // [d, d]
    pub w_k: Tensor, // [d, d]
    pub w_v: Tensor, // [d, d]
}

impl AttnParams {
    pub fn init(d: usize, rng: &mut Rng) -> Self {
        let s = 1.0 / (d as f64).sqrt();
        AttnParams {
            w_q: Tensor::randn(&[d, d], rng, s),
            w_k: Tensor::randn(&[d, d], rng, s),
            w_v: Tensor::randn(&[d, d], rng, s),
        }
    }

    pub fn width(&self) -> usize {
        self.w_q.shape()[0]
    }
}

/// Mixing weight: either a fixed scalar in [0, 1] or a learnable logit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phi {
    Fixed(f64),
    /// sigmoid(rho); the logit rho is the trainable scalar.
    Learnable(f64),
}

impl Phi {
    pub fn value(&self) -> f64 {
        match *self {
            Phi::Fixed(v) => v,
            Phi::Learnable(rho) => crate::graph::sigmoid(rho),
        }
    }
}

/// Low-rank bypass factors plus the mixing weight.
#[derive(Debug, Clone)]
pub struct BypassAttnParams {
    pub w_q_lr: Tensor, // [d, k]
    pub w_k_lr: Tensor, // [d, k]
    pub phi: Phi,
    pub rank: usize,
}

impl BypassAttnParams {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.rank >= d {
            return Err(Error::arg(
                "BypassAttnParams",
                format!("rank {} must be below width {}", self.rank, d),
            ));
        }
        if let Phi::Fixed(v) = self.phi {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::arg("BypassAttnParams", "phi must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Random (non-SVD) initialization; the ablation baseline.
    pub fn random_init(d: usize, k: usize, phi: Phi, rng: &mut Rng) -> Self {
        let s = 1.0 / (d as f64).sqrt();
        BypassAttnParams {
            w_q_lr: Tensor::randn(&[d, k], rng, s),
            w_k_lr: Tensor::randn(&[d, k], rng, s),
            phi,
            rank: k,
        }
    }
}

/// Pre-softmax bilinear score map.
#[derive(Debug, Clone)]
pub struct AttnMap {
    pub scores: Tensor, // [l_q, l_k]
}

/// Base score map: (q W_Q)(k W_K)^T.
pub fn base_map(q_tokens: &Tensor, k_tokens: &Tensor, params: &AttnParams) -> Result<AttnMap> {
    let q = q_tokens.matmul(&params.w_q)?;
    let k = k_tokens.matmul(&params.w_k)?;
    Ok(AttnMap {
        scores: q.matmul(&k.transpose())?,
    })
}

/// Rank-k score map, evaluated as (q W'_Q)(k W'_K)^T so the cost stays
/// O(l d k); the d x d product is never materialized.
pub fn bypass_map(q_tokens: &Tensor, k_tokens: &Tensor, bp: &BypassAttnParams) -> Result<AttnMap> {
    bp.validate(q_tokens.shape()[1])?;
    let q = q_tokens.matmul(&bp.w_q_lr)?;
    let k = k_tokens.matmul(&bp.w_k_lr)?;
    Ok(AttnMap {
        scores: q.matmul(&k.transpose())?,
    })
}

fn softmax_value(map: &AttnMap, v_proj: &Tensor, d: usize) -> Result<Tensor> {
    let mut g = Graph::new();
    let s = g.constant(map.scores.clone());
    let scaled = g.scale(s, 1.0 / (d as f64).sqrt());
    let p = g.softmax_rows(scaled);
    let vv = g.constant(v_proj.clone());
    let out = g.matmul(p, vv);
    Ok(g.value(out).clone())
}

/// Scaled dot-product attention with the base projections:
/// softmax((q W_Q)(k W_K)^T / sqrt(d)) (v W_V).
pub fn attention(
    q_tokens: &Tensor,
    k_tokens: &Tensor,
    v_tokens: &Tensor,
    params: &AttnParams,
) -> Result<Tensor> {
    let d = params.width();
    if q_tokens.shape()[1] != d || k_tokens.shape()[1] != d || v_tokens.shape()[1] != d {
        return Err(Error::shape("attention", "token width differs from params"));
    }
    let map = base_map(q_tokens, k_tokens, params)?;
    let v = v_tokens.matmul(&params.w_v)?;
    softmax_value(&map, &v, d)
}

/// Mixed attention: scores (1 - phi) * bypass + phi * base, softmax once
/// after mixing, value path unchanged. phi = 1 and phi = 0 short-circuit to
/// the pure paths so they are bit-identical to them.
pub fn mixed_attention(
    q_tokens: &Tensor,
    k_tokens: &Tensor,
    v_tokens: &Tensor,
    base: &AttnParams,
    bp: &BypassAttnParams,
) -> Result<Tensor> {
    let d = base.width();
    bp.validate(d)?;
    let phi = bp.phi.value();
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::arg("mixed_attention", "phi must lie in [0, 1]"));
    }
    if phi == 1.0 {
        return attention(q_tokens, k_tokens, v_tokens, base);
    }
    let low = bypass_map(q_tokens, k_tokens, bp)?;
    let scores = if phi == 0.0 {
        low.scores
    } else {
        let full = base_map(q_tokens, k_tokens, base)?;
        // low + phi * (full - low)
        low.scores
            .zip_map(&full.scores, |l, f| l + phi * (f - l))
    };
    let v = v_tokens.matmul(&base.w_v)?;
    softmax_value(&AttnMap { scores }, &v, d)
}

/// SVD initialization of the bypass factors: with W_Q W_K^T = U S V^T,
/// column j of W'_Q is s_j u_j and column j of W'_K is v_j, so
/// W'_Q W'_K^T is the best rank-k approximation of the base product.
pub fn svd_init(base: &AttnParams, k: usize, phi: Phi) -> Result<BypassAttnParams> {
    let d = base.width();
    if k == 0 || k >= d {
        return Err(Error::arg(
            "svd_init",
            format!("rank {k} must satisfy 1 <= k < {d}"),
        ));
    }
    let product = base.w_q.matmul(&base.w_k.transpose())?;
    let (u, s, v) = svd(&product)?;
    let mut w_q_lr = Tensor::zeros(&[d, k]);
    let mut w_k_lr = Tensor::zeros(&[d, k]);
    for j in 0..k {
        let sj = s.data()[j];
        for i in 0..d {
            w_q_lr.data_mut()[i * k + j] = sj * u.data()[i * d + j];
            w_k_lr.data_mut()[i * k + j] = v.data()[i * d + j];
        }
    }
    Ok(BypassAttnParams {
        w_q_lr,
        w_k_lr,
        phi,
        rank: k,
    })
}

/// Sparse causal attention over a video: frame 0 attends to itself; frame i
/// attends to keys/values drawn from the concatenation of frame 0 and frame
/// i-1 (frame 1 therefore sees frame 0 twice). Tokens are pixels; channels
/// are the feature width.
pub fn sparse_causal_attention(frames: &VideoTensor, params: &AttnParams) -> Result<VideoTensor> {
    let (t, c, h, w) = frames.dims();
    if c != params.width() {
        return Err(Error::shape(
            "sparse_causal_attention",
            "channel count differs from attention width",
        ));
    }
    let tokens = frame_tokens(frames);
    let mut out = VideoTensor::zeros(t, c, h, w);
    for i in 0..t {
        let kv = if i == 0 {
            tokens[0].clone()
        } else {
            concat_rows(&tokens[0], &tokens[i - 1])
        };
        let o = attention(&tokens[i], &kv, &kv, params)?;
        write_frame_tokens(&mut out, i, &o);
    }
    Ok(out)
}

/// Per-frame token matrices [h*w, c].
pub fn frame_tokens(frames: &VideoTensor) -> Vec<Tensor> {
    let (t, c, h, w) = frames.dims();
    let hw = h * w;
    (0..t)
        .map(|ti| {
            let mut m = Tensor::zeros(&[hw, c]);
            for ci in 0..c {
                for p in 0..hw {
                    m.data_mut()[p * c + ci] = frames.tensor().data()[(ti * c + ci) * hw + p];
                }
            }
            m
        })
        .collect()
}

fn write_frame_tokens(video: &mut VideoTensor, ti: usize, tokens: &Tensor) {
    let (_, c, h, w) = video.dims();
    let hw = h * w;
    for ci in 0..c {
        for p in 0..hw {
            video.tensor_mut().data_mut()[(ti * c + ci) * hw + p] = tokens.data()[p * c + ci];
        }
    }
}

fn concat_rows(a: &Tensor, b: &Tensor) -> Tensor {
    let n = a.shape()[1];
    let mut data = Vec::with_capacity((a.shape()[0] + b.shape()[0]) * n);
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new(vec![a.shape()[0] + b.shape()[0], n], data).unwrap()
}

// ---- graph builders for the trainable path ----

#[derive(Debug, Clone, Copy)]
pub struct AttnVars {
    pub w_q: VarId,
    pub w_k: VarId,
    pub w_v: VarId,
}

impl AttnParams {
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> AttnVars {
        AttnVars {
            w_q: g.input(self.w_q.clone(), trainable),
            w_k: g.input(self.w_k.clone(), trainable),
            w_v: g.input(self.w_v.clone(), trainable),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BypassVars {
    pub w_q_lr: VarId,
    pub w_k_lr: VarId,
    /// Present only for a learnable mixing weight; holds the logit.
    pub rho: Option<VarId>,
    pub phi_fixed: f64,
}

impl BypassAttnParams {
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BypassVars {
        let rho = match self.phi {
            Phi::Learnable(r) => Some(g.input(Tensor::scalar(r), trainable)),
            Phi::Fixed(_) => None,
        };
        BypassVars {
            w_q_lr: g.input(self.w_q_lr.clone(), trainable),
            w_k_lr: g.input(self.w_k_lr.clone(), trainable),
            rho,
            phi_fixed: match self.phi {
                Phi::Fixed(v) => v,
                Phi::Learnable(_) => f64::NAN,
            },
        }
    }
}

/// Graph attention with base projections.
pub fn attention_graph(g: &mut Graph, q: VarId, k: VarId, v: VarId, base: &AttnVars) -> VarId {
    let d = g.shape(q)[1];
    let qp = g.matmul(q, base.w_q);
    let kp = g.matmul(k, base.w_k);
    let kt = transpose_graph(g, kp);
    let scores = g.matmul(qp, kt);
    finish_attention(g, scores, v, base, d)
}

/// Graph mixed attention. Fixed phi of exactly 1 or 0 takes the corresponding
/// pure path, keeping those limits bit-identical to the unmixed operations.
pub fn mixed_attention_graph(
    g: &mut Graph,
    q: VarId,
    k: VarId,
    v: VarId,
    base: &AttnVars,
    bp: &BypassVars,
) -> VarId {
    let d = g.shape(q)[1];
    if bp.rho.is_none() && bp.phi_fixed == 1.0 {
        return attention_graph(g, q, k, v, base);
    }
    let ql = g.matmul(q, bp.w_q_lr);
    let kl = g.matmul(k, bp.w_k_lr);
    let klt = transpose_graph(g, kl);
    let low = g.matmul(ql, klt);
    let scores = if bp.rho.is_none() && bp.phi_fixed == 0.0 {
        low
    } else {
        let qp = g.matmul(q, base.w_q);
        let kp = g.matmul(k, base.w_k);
        let kt = transpose_graph(g, kp);
        let full = g.matmul(qp, kt);
        let diff = g.sub(full, low);
        let scaled = match bp.rho {
            Some(rho) => {
                let phi = g.sigmoid(rho);
                g.scale_by_var(diff, phi)
            }
            None => g.scale(diff, bp.phi_fixed),
        };
        g.add(low, scaled)
    };
    finish_attention(g, scores, v, base, d)
}

fn finish_attention(g: &mut Graph, scores: VarId, v: VarId, base: &AttnVars, d: usize) -> VarId {
    let scaled = g.scale(scores, 1.0 / (d as f64).sqrt());
    let p = g.softmax_rows(scaled);
    let vp = g.matmul(v, base.w_v);
    g.matmul(p, vp)
}

fn transpose_graph(g: &mut Graph, a: VarId) -> VarId {
    let (m, n) = (g.shape(a)[0], g.shape(a)[1]);
    let mut idx = Vec::with_capacity(m * n);
    for j in 0..n {
        for i in 0..m {
            idx.push(i * n + j);
        }
    }
    g.gather(a, idx, &[n, m])
}

// ---- verification surfaces ----

/// Outcome of a random-projection trial run.
#[derive(Debug, Clone, Copy)]
pub struct JlReport {
    pub trials: usize,
    pub violations: usize,
    pub failure_rate: f64,
    /// 2 exp(-(eps^2 - eps^3) k / 4)
    pub bound: f64,
    /// bound + 3 sigma binomial slack at `trials`
    pub threshold: f64,
}

impl JlReport {
    pub fn holds(&self) -> bool {
        self.failure_rate <= self.threshold
    }
}

/// Monte-Carlo check of the random-projection guarantee: for R in R^{d x k}
/// with i.i.d. N(0, 1/k) entries and fixed z, y, the projected inner product
/// <R^T z, R^T y> deviates from <z, y> by at most eps ||z|| ||y|| except with
/// probability 2 exp(-(eps^2 - eps^3) k / 4).
pub fn jl_verify(d: usize, k: usize, eps: f64, trials: usize, rng: &mut Rng) -> Result<JlReport> {
    if k == 0 || k > d {
        return Err(Error::arg("jl_verify", "need 1 <= k <= d"));
    }
    if !(0.0 < eps && eps < 1.0) {
        return Err(Error::arg("jl_verify", "need 0 < eps < 1"));
    }
    use rayon::prelude::*;
    // one forked generator per trial; the total count is order-independent,
    // so parallel evaluation stays deterministic
    let seeds: Vec<u64> = (0..trials).map(|_| rng.next_u64()).collect();
    let violations = seeds
        .par_iter()
        .map(|&seed| {
            let mut r = Rng::new(seed);
            let mut z = vec![0.0; d];
            let mut y = vec![0.0; d];
            r.fill_gaussian(&mut z);
            r.fill_gaussian(&mut y);
            let sigma = (1.0 / k as f64).sqrt();
            // stream the rows of R; the d x k matrix is never kept
            let mut zr = vec![0.0; k];
            let mut yr = vec![0.0; k];
            let mut row = vec![0.0; k];
            for i in 0..d {
                r.fill_gaussian(&mut row);
                let (zi, yi) = (z[i], y[i]);
                for j in 0..k {
                    let rij = row[j] * sigma;
                    zr[j] += zi * rij;
                    yr[j] += yi * rij;
                }
            }
            let exact: f64 = z.iter().zip(&y).map(|(a, b)| a * b).sum();
            let approx: f64 = zr.iter().zip(&yr).map(|(a, b)| a * b).sum();
            let zn: f64 = z.iter().map(|x| x * x).sum::<f64>().sqrt();
            let yn: f64 = y.iter().map(|x| x * x).sum::<f64>().sqrt();
            usize::from((approx - exact).abs() > eps * zn * yn)
        })
        .sum();
    Ok(report(d, k, eps, trials, violations))
}

/// Sanity control: with k = d and R replaced by an exactly orthogonal matrix,
/// R R^T = I and no trial can violate the inequality.
pub fn jl_verify_orthonormal(d: usize, eps: f64, trials: usize, rng: &mut Rng) -> Result<JlReport> {
    let mut violations = 0usize;
    for _ in 0..trials {
        let r = orthonormal_columns(&Tensor::randn(&[d, d], rng, 1.0));
        let z = Tensor::randn(&[1, d], rng, 1.0);
        let y = Tensor::randn(&[1, d], rng, 1.0);
        let zr = z.matmul(&r)?;
        let yr = y.matmul(&r)?;
        let exact: f64 = z.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let approx: f64 = zr.data().iter().zip(yr.data()).map(|(a, b)| a * b).sum();
        let zn = z.frob_norm();
        let yn = y.frob_norm();
        if (approx - exact).abs() > eps * zn * yn {
            violations += 1;
        }
    }
    Ok(report(d, d, eps, trials, violations))
}

fn report(_d: usize, k: usize, eps: f64, trials: usize, violations: usize) -> JlReport {
    let bound = 2.0 * (-(eps * eps - eps * eps * eps) * k as f64 / 4.0).exp();
    let p = bound.min(1.0);
    let sigma = (p * (1.0 - p) / trials as f64).sqrt();
    JlReport {
        trials,
        violations,
        failure_rate: violations as f64 / trials as f64,
        bound,
        threshold: bound + 3.0 * sigma,
    }
}

/// Trainable-versus-frozen accounting for the bypass substitution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamAudit {
    pub per_layer_trainable: usize,
    pub per_layer_full: usize,
    /// trainable / full = 2dk / 2d^2 = k/d
    pub ratio: f64,
    pub layers: usize,
    pub total_trainable: usize,
    pub total_full: usize,
}

pub fn param_audit(d: usize, k: usize, layers: usize) -> Result<ParamAudit> {
    if k >= d {
        return Err(Error::arg("param_audit", "rank must be below width"));
    }
    let per_layer_trainable = 2 * d * k;
    let per_layer_full = 2 * d * d;
    Ok(ParamAudit {
        per_layer_trainable,
        per_layer_full,
        ratio: k as f64 / d as f64,
        layers,
        total_trainable: layers * per_layer_trainable,
        total_full: layers * per_layer_full,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_token_attends_to_itself() {
        let mut rng = Rng::new(1);
        let d = 4;
        let params = AttnParams::init(d, &mut rng);
        let q = Tensor::randn(&[1, d], &mut rng, 1.0);
        let out = attention(&q, &q, &q, &params).unwrap();
        let expected = q.matmul(&params.w_v).unwrap();
        assert!(out.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn identical_keys_average_values() {
        let mut rng = Rng::new(2);
        let d = 3;
        let params = AttnParams::init(d, &mut rng);
        // four identical key tokens, distinct values
        let k = Tensor::from_rows(&[
            vec![1.0, 0.5, -0.5],
            vec![1.0, 0.5, -0.5],
            vec![1.0, 0.5, -0.5],
            vec![1.0, 0.5, -0.5],
        ]);
        let v = Tensor::randn(&[4, d], &mut rng, 1.0);
        let q = Tensor::randn(&[1, d], &mut rng, 1.0);
        let out = attention(&q, &k, &v, &params).unwrap();
        let vp = v.matmul(&params.w_v).unwrap();
        let mut mean = vec![0.0; d];
        for r in 0..4 {
            for c in 0..d {
                mean[c] += vp.data()[r * d + c] / 4.0;
            }
        }
        for c in 0..d {
            assert!((out.data()[c] - mean[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn bypass_map_zero_factor() {
        let mut rng = Rng::new(3);
        let d = 6;
        let bp = BypassAttnParams {
            w_q_lr: Tensor::zeros(&[d, 2]),
            w_k_lr: Tensor::randn(&[d, 2], &mut rng, 1.0),
            phi: Phi::Fixed(0.5),
            rank: 2,
        };
        let q = Tensor::randn(&[3, d], &mut rng, 1.0);
        let k = Tensor::randn(&[5, d], &mut rng, 1.0);
        let map = bypass_map(&q, &k, &bp).unwrap();
        assert_eq!(map.scores.max_abs(), 0.0);
    }

    #[test]
    fn phi_limits() {
        let mut rng = Rng::new(4);
        let d = 5;
        let base = AttnParams::init(d, &mut rng);
        let q = Tensor::randn(&[3, d], &mut rng, 1.0);
        let k = Tensor::randn(&[4, d], &mut rng, 1.0);
        let v = Tensor::randn(&[4, d], &mut rng, 1.0);
        let mut bp = BypassAttnParams::random_init(d, 2, Phi::Fixed(1.0), &mut rng);
        let mixed = mixed_attention(&q, &k, &v, &base, &bp).unwrap();
        let pure = attention(&q, &k, &v, &base).unwrap();
        assert_eq!(mixed, pure, "phi = 1 must be bit-identical to the base path");

        bp.phi = Phi::Fixed(0.0);
        let mixed0 = mixed_attention(&q, &k, &v, &base, &bp).unwrap();
        let low = bypass_map(&q, &k, &bp).unwrap();
        let vproj = v.matmul(&base.w_v).unwrap();
        let expect = softmax_value(&low, &vproj, d).unwrap();
        assert_eq!(mixed0, expect);
    }

    #[test]
    fn phi_out_of_range_rejected() {
        let mut rng = Rng::new(5);
        let d = 4;
        let base = AttnParams::init(d, &mut rng);
        let bp = BypassAttnParams::random_init(d, 2, Phi::Fixed(1.5), &mut rng);
        let q = Tensor::randn(&[2, d], &mut rng, 1.0);
        assert!(mixed_attention(&q, &q, &q, &base, &bp).is_err());
    }

    #[test]
    fn svd_init_rank_bounds() {
        let mut rng = Rng::new(6);
        let base = AttnParams::init(4, &mut rng);
        assert!(svd_init(&base, 0, Phi::Fixed(0.5)).is_err());
        assert!(svd_init(&base, 4, Phi::Fixed(0.5)).is_err());
        assert!(svd_init(&base, 3, Phi::Fixed(0.5)).is_ok());
    }

    #[test]
    fn sparse_causal_single_frame_is_self_attention() {
        let mut rng = Rng::new(7);
        let (c, h, w) = (3, 2, 2);
        let params = AttnParams::init(c, &mut rng);
        let frames =
            VideoTensor::new(Tensor::randn(&[1, c, h, w], &mut rng, 1.0)).unwrap();
        let out = sparse_causal_attention(&frames, &params).unwrap();
        let tok = frame_tokens(&frames);
        let self_attn = attention(&tok[0], &tok[0], &tok[0], &params).unwrap();
        let out_tok = frame_tokens(&out);
        assert!(out_tok[0].max_abs_diff(&self_attn) < 1e-14);
    }

    #[test]
    fn sparse_causal_second_frame_sees_first_twice() {
        let mut rng = Rng::new(8);
        let (c, h, w) = (2, 2, 1);
        let params = AttnParams::init(c, &mut rng);
        let frames =
            VideoTensor::new(Tensor::randn(&[2, c, h, w], &mut rng, 1.0)).unwrap();
        let out = sparse_causal_attention(&frames, &params).unwrap();
        let tok = frame_tokens(&frames);
        let kv = concat_rows(&tok[0], &tok[0]);
        let expect = attention(&tok[1], &kv, &kv, &params).unwrap();
        let out_tok = frame_tokens(&out);
        assert!(out_tok[1].max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn param_audit_values() {
        let a = param_audit(320, 12, 1).unwrap();
        assert_eq!(a.per_layer_trainable, 7680);
        assert_eq!(a.per_layer_full, 204800);
        assert!((a.ratio - 0.0375).abs() < 1e-15);
        assert!(param_audit(8, 8, 1).is_err());
        // monotone in k
        let mut last = 0.0;
        for k in [2, 4, 8, 16] {
            let r = param_audit(32, k, 1).unwrap().ratio;
            assert!(r > last);
            last = r;
        }
    }

    #[test]
    fn jl_orthonormal_control_never_fails() {
        let mut rng = Rng::new(9);
        let rep = jl_verify_orthonormal(16, 0.5, 50, &mut rng).unwrap();
        assert_eq!(rep.violations, 0);
    }

    #[test]
    fn jl_rejects_bad_arguments() {
        let mut rng = Rng::new(10);
        assert!(jl_verify(8, 0, 0.5, 10, &mut rng).is_err());
        assert!(jl_verify(8, 9, 0.5, 10, &mut rng).is_err());
        assert!(jl_verify(8, 4, 1.5, 10, &mut rng).is_err());
    }
}
