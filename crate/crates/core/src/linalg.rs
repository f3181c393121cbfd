//! Small dense linear algebra: SVD, matrix exponential, phi1.
//!
//! Everything here is deterministic and written for matrices up to a few
//! hundred rows; no blocking, no pivot-order heuristics that could vary
//! between runs.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Thin singular value decomposition, a = U diag(S) V^T.
///
/// One-sided Jacobi on the columns of `a` (transposed first when m < n).
/// Singular values come back non-negative in non-increasing order; U and V
/// have orthonormal columns, with zero-norm columns completed from the
/// standard basis so orthonormality holds even for rank-deficient input.
pub fn svd(a: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    if a.rank() != 2 {
        return Err(Error::shape("svd", format!("rank {}", a.rank())));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite { op: "svd" });
    }
    let (m, n) = (a.shape()[0], a.shape()[1]);
    if m < n {
        let (u, s, v) = svd(&a.transpose())?;
        return Ok((v, s, u));
    }
    let r = n;

    // b holds the working columns; v accumulates the right rotations.
    let mut b: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.data()[i * n + j]).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut col = vec![0.0; n];
            col[j] = 1.0;
            col
        })
        .collect();

    let max_sweeps = 100 * m.max(n);
    let mut sweeps = 0;
    loop {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..m {
                    alpha += b[p][i] * b[p][i];
                    beta += b[q][i] * b[q][i];
                    gamma += b[p][i] * b[q][i];
                }
                // converged pair: inner product negligible relative to norms
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma.abs() <= 1e-300 {
                    continue;
                }
                // Jacobi rotation zeroing the (p,q) inner product.
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let bp = b[p][i];
                    let bq = b[q][i];
                    b[p][i] = c * bp - s * bq;
                    b[q][i] = s * bp + c * bq;
                }
                for i in 0..n {
                    let vp = v[p][i];
                    let vq = v[q][i];
                    v[p][i] = c * vp - s * vq;
                    v[q][i] = s * vp + c * vq;
                }
                rotated = true;
            }
        }
        sweeps += 1;
        if !rotated {
            break;
        }
        if sweeps >= max_sweeps {
            return Err(Error::SvdNonConvergence { iterations: sweeps });
        }
    }

    // Singular values are the column norms; sort descending.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = b.iter().map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let mut u = Tensor::zeros(&[m, r]);
    let mut s_out = Tensor::zeros(&[r]);
    let mut v_out = Tensor::zeros(&[n, r]);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(r);
    for (kth, &j) in order.iter().enumerate() {
        let norm = norms[j];
        s_out.data_mut()[kth] = norm;
        let ucol = if norm > 1e-300 {
            b[j].iter().map(|x| x / norm).collect::<Vec<f64>>()
        } else {
            // Complete a zero column: orthonormalize a basis vector against
            // the columns accepted so far.
            complete_column(&u_cols, m)
        };
        for i in 0..m {
            u.data_mut()[i * r + kth] = ucol[i];
        }
        u_cols.push(ucol);
        for i in 0..n {
            v_out.data_mut()[i * r + kth] = v[j][i];
        }
    }
    Ok((u, s_out, v_out))
}

fn complete_column(existing: &[Vec<f64>], m: usize) -> Vec<f64> {
    for basis in 0..m {
        let mut cand = vec![0.0; m];
        cand[basis] = 1.0;
        for col in existing {
            let dot: f64 = cand.iter().zip(col).map(|(a, b)| a * b).sum();
            for i in 0..m {
                cand[i] -= dot * col[i];
            }
        }
        let norm: f64 = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return cand.iter().map(|x| x / norm).collect();
        }
    }
    unreachable!("could not complete orthonormal basis");
}

/// Matrix exponential by scaling and squaring over a plain Taylor series.
pub fn expm(a: &Tensor) -> Result<Tensor> {
    let (e, _) = expm_phi1(a)?;
    Ok(e)
}

/// phi1(a) = a^{-1} (exp(a) - I), extended by the entire series
/// sum_j a^j / (j+1)!, so singular `a` needs no special casing.
pub fn phi1(a: &Tensor) -> Result<Tensor> {
    let (_, p) = expm_phi1(a)?;
    Ok(p)
}

/// exp(a) and phi1(a) together, sharing the scaling/squaring pass.
///
/// Doubling rules: exp(2M) = exp(M)^2 and phi1(2M) = phi1(M)(exp(M) + I)/2.
pub fn expm_phi1(a: &Tensor) -> Result<(Tensor, Tensor)> {
    if a.rank() != 2 || a.shape()[0] != a.shape()[1] {
        return Err(Error::shape("expm", format!("{:?}", a.shape())));
    }
    let n = a.shape()[0];
    let mut squarings = 0u32;
    let mut scaled = a.clone();
    while scaled.frob_norm() > 0.5 {
        scaled = scaled.scale(0.5);
        squarings += 1;
        if squarings > 200 {
            return Err(Error::NonFinite { op: "expm" });
        }
    }

    // Taylor series for both functions at the scaled argument.
    let mut exp_acc = Tensor::eye(n);
    let mut phi_acc = Tensor::eye(n);
    let mut term = Tensor::eye(n); // scaled^j / j!
    for j in 1..60 {
        term = term.matmul(&scaled)?.scale(1.0 / j as f64);
        exp_acc = exp_acc.add(&term);
        phi_acc = phi_acc.add(&term.scale(1.0 / (j + 1) as f64));
        if term.max_abs() < 1e-18 {
            break;
        }
    }

    let eye = Tensor::eye(n);
    for _ in 0..squarings {
        phi_acc = phi_acc.matmul(&exp_acc.add(&eye))?.scale(0.5);
        exp_acc = exp_acc.matmul(&exp_acc)?;
    }
    if !exp_acc.is_finite() || !phi_acc.is_finite() {
        return Err(Error::NonFinite { op: "expm" });
    }
    Ok((exp_acc, phi_acc))
}

/// Scalar (exp(z) - 1)/z with a series fallback near zero.
pub fn phi1_scalar(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        1.0 + z / 2.0 + z * z / 6.0 + z * z * z / 24.0
    } else {
        z.exp_m1() / z
    }
}

/// Derivative of [`phi1_scalar`].
pub fn phi1_scalar_deriv(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0
    } else {
        (z.exp() * (z - 1.0) + 1.0) / (z * z)
    }
}

/// Gram-Schmidt orthonormalization of the columns of a (m x k, k <= m).
pub fn orthonormal_columns(a: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    assert!(k <= m, "more columns than rows");
    let mut cols: Vec<Vec<f64>> = (0..k)
        .map(|j| (0..m).map(|i| a.data()[i * k + j]).collect())
        .collect();
    for j in 0..k {
        for prev in 0..j {
            let (head, tail) = cols.split_at_mut(j);
            let dot: f64 = head[prev].iter().zip(tail[0].iter()).map(|(a, b)| a * b).sum();
            for i in 0..m {
                cols[j][i] -= dot * cols[prev][i];
            }
        }
        let norm: f64 = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm > 1e-12, "degenerate column in orthonormalization");
        for x in cols[j].iter_mut() {
            *x /= norm;
        }
    }
    let mut out = Tensor::zeros(&[m, k]);
    for j in 0..k {
        for i in 0..m {
            out.data_mut()[i * k + j] = cols[j][i];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn svd_diagonal() {
        let a = Tensor::from_rows(&[
            vec![3.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let (_, s, _) = svd(&a).unwrap();
        assert!((s.data()[0] - 3.0).abs() < 1e-12);
        assert!((s.data()[1] - 2.0).abs() < 1e-12);
        assert!((s.data()[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn svd_zero_matrix() {
        let a = Tensor::zeros(&[4, 3]);
        let (u, s, v) = svd(&a).unwrap();
        assert!(s.data().iter().all(|&x| x == 0.0));
        // completed columns must still be orthonormal
        let utu = u.transpose().matmul(&u).unwrap();
        assert!(utu.sub(&Tensor::eye(3)).frob_norm() < 1e-12);
        let vtv = v.transpose().matmul(&v).unwrap();
        assert!(vtv.sub(&Tensor::eye(3)).frob_norm() < 1e-12);
    }

    #[test]
    fn svd_reconstructs_random() {
        let mut rng = Rng::new(5);
        let a = Tensor::randn(&[8, 8], &mut rng, 1.0);
        let (u, s, v) = svd(&a).unwrap();
        let mut us = u.clone();
        for i in 0..8 {
            for j in 0..8 {
                us.data_mut()[i * 8 + j] *= s.data()[j];
            }
        }
        let rec = us.matmul(&v.transpose()).unwrap();
        let rel = rec.sub(&a).frob_norm() / a.frob_norm();
        assert!(rel < 1e-9, "relative reconstruction error {rel}");
    }

    #[test]
    fn svd_wide_matrix() {
        let mut rng = Rng::new(6);
        let a = Tensor::randn(&[3, 7], &mut rng, 1.0);
        let (u, s, v) = svd(&a).unwrap();
        assert_eq!(u.shape(), &[3, 3]);
        assert_eq!(v.shape(), &[7, 3]);
        let mut us = u.clone();
        for i in 0..3 {
            for j in 0..3 {
                us.data_mut()[i * 3 + j] *= s.data()[j];
            }
        }
        let rec = us.matmul(&v.transpose()).unwrap();
        assert!(rec.sub(&a).frob_norm() / a.frob_norm() < 1e-9);
    }

    #[test]
    fn expm_scalar_values() {
        let a = Tensor::scalar(1.0).reshape(&[1, 1]).unwrap();
        let e = expm(&a).unwrap();
        assert!((e.data()[0] - std::f64::consts::E).abs() < 1e-14);
        let z = Tensor::zeros(&[1, 1]);
        assert!((expm(&z).unwrap().data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn expm_commuting_sum() {
        // exp(A) exp(B) == exp(A+B) for commuting A, B (here both diagonal).
        let a = Tensor::from_rows(&[vec![0.3, 0.0], vec![0.0, -1.2]]);
        let b = Tensor::from_rows(&[vec![-0.7, 0.0], vec![0.0, 0.4]]);
        let lhs = expm(&a).unwrap().matmul(&expm(&b).unwrap()).unwrap();
        let rhs = expm(&a.add(&b)).unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-13);
    }

    #[test]
    fn phi1_matches_scalar_form() {
        let a = Tensor::scalar(0.8).reshape(&[1, 1]).unwrap();
        let p = phi1(&a).unwrap();
        assert!((p.data()[0] - phi1_scalar(0.8)).abs() < 1e-13);
        // singular argument: phi1(0) = 1
        let z = Tensor::zeros(&[2, 2]);
        let p0 = phi1(&z).unwrap();
        assert!(p0.max_abs_diff(&Tensor::eye(2)) < 1e-15);
    }

    #[test]
    fn orthonormalization_is_orthonormal() {
        let mut rng = Rng::new(11);
        let a = Tensor::randn(&[6, 4], &mut rng, 1.0);
        let q = orthonormal_columns(&a);
        let qtq = q.transpose().matmul(&q).unwrap();
        assert!(qtq.sub(&Tensor::eye(4)).frob_norm() < 1e-12);
    }
}
