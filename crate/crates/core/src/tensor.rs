//! Dense row-major f64 tensors.
//!
//! The substrate for everything in this crate: a shape, a flat data buffer,
//! and an optional adjoint buffer of the same shape filled in by the reverse
//! pass of [`crate::graph::Graph`]. Tensors are plain values; nothing here is
//! shared or interior-mutable, so they are safe to move across threads.

use crate::error::{Error, Result};
use crate::rng::Rng;
use std::cell::Cell;

thread_local! {
    static MUL_COUNT: Cell<u64> = const { Cell::new(0) };
}

/// Reset this thread's multiply counter (see [`mul_count`]).
pub fn reset_mul_count() {
    MUL_COUNT.with(|c| c.set(0));
}

/// Scalar multiplies performed by [`Tensor::matmul`] on this thread since the
/// last reset. Used by the cost audits.
pub fn mul_count() -> u64 {
    MUL_COUNT.with(|c| c.get())
}

#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    adjoint: Option<Vec<f64>>,
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {:?} implies {} elements, got {}", shape, n, data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            adjoint: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            adjoint: None,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
            adjoint: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            adjoint: None,
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Matrix from nested rows; rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let m = rows.len();
        let n = if m == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(m * n);
        for r in rows {
            assert_eq!(r.len(), n, "ragged rows");
            data.extend_from_slice(r);
        }
        Tensor {
            shape: vec![m, n],
            data,
            adjoint: None,
        }
    }

    /// I.i.d. N(0, scale^2) entries.
    pub fn randn(shape: &[usize], rng: &mut Rng, scale: f64) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gaussian() * scale).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
            adjoint: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The adjoint buffer, if a reverse pass has produced one.
    pub fn adjoint(&self) -> Option<&[f64]> {
        self.adjoint.as_deref()
    }

    pub fn set_adjoint(&mut self, adj: Option<Vec<f64>>) {
        if let Some(a) = &adj {
            assert_eq!(a.len(), self.data.len(), "adjoint shape mismatch");
        }
        self.adjoint = adj;
    }

    pub fn value(&self) -> f64 {
        assert_eq!(self.numel(), 1, "value() on non-scalar tensor");
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape, shape),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
            adjoint: None,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
            adjoint: None,
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            adjoint: None,
        }
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|x| x * s)
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest elementwise |a - b|.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Tensor {
        assert_eq!(self.rank(), 2, "transpose needs a matrix");
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = Tensor::zeros(&[n, m]);
        for i in 0..m {
            for j in 0..n {
                out.data[j * m + i] = self.data[i * n + j];
            }
        }
        out
    }

    /// Standard matrix product. Increments the per-thread multiply counter by
    /// m*n*p so callers can audit cost (the count is charged on the calling
    /// thread even when rows are computed by workers).
    ///
    /// Large products split by output row across threads; each row's inner
    /// accumulation order is unchanged, so results are bit-identical to the
    /// serial path.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::shape(
                "matmul",
                format!("ranks {} x {}", self.rank(), other.rank()),
            ));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let (n2, p) = (other.shape[0], other.shape[1]);
        if n != n2 {
            return Err(Error::shape(
                "matmul",
                format!("inner extents {} vs {}", n, n2),
            ));
        }
        MUL_COUNT.with(|c| c.set(c.get() + (m * n * p) as u64));
        let mut out = Tensor::zeros(&[m, p]);
        let row_job = |i: usize, o_row: &mut [f64]| {
            let a_row = &self.data[i * n..(i + 1) * n];
            for (kk, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[kk * p..(kk + 1) * p];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        };
        if m * n * p >= 262_144 && m > 1 {
            use rayon::prelude::*;
            out.data
                .par_chunks_mut(p)
                .enumerate()
                .for_each(|(i, o_row)| row_job(i, o_row));
        } else {
            for (i, o_row) in out.data.chunks_mut(p).enumerate() {
                row_job(i, o_row);
            }
        }
        Ok(out)
    }

    /// Row `i` of a matrix.
    pub fn row(&self, i: usize) -> &[f64] {
        assert_eq!(self.rank(), 2);
        let n = self.shape[1];
        &self.data[i * n..(i + 1) * n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let mut rng = Rng::new(1);
        let x = Tensor::randn(&[3, 5], &mut rng, 1.0);
        let id = Tensor::eye(3);
        let y = id.matmul(&x).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = Tensor::from_rows(&[vec![0.0], vec![1.0]]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn matmul_against_triple_loop() {
        let mut rng = Rng::new(9);
        let a = Tensor::randn(&[5, 4], &mut rng, 1.0);
        let b = Tensor::randn(&[4, 3], &mut rng, 1.0);
        let c = a.matmul(&b).unwrap();
        // brute-force oracle
        for i in 0..5 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += a.data()[i * 4 + k] * b.data()[k * 3 + j];
                }
                assert!((c.data()[i * 3 + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mul_counter_counts() {
        reset_mul_count();
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 5]);
        let _ = a.matmul(&b).unwrap();
        assert_eq!(mul_count(), 30);
    }

    #[test]
    fn adjoint_shape_guard() {
        let mut t = Tensor::zeros(&[2, 2]);
        t.set_adjoint(Some(vec![0.0; 4]));
        assert!(t.adjoint().is_some());
    }
}
