//! Dense row-major matrix storage and the float matrix products.
//!
//! [`Tensor::matmul`] is the reference product: it accumulates every output
//! element in `f64` over ascending `k`, which makes it a deterministic oracle
//! for the bit-packed kernels. [`Tensor::matmul_fast`] trades the wide
//! accumulator for speed and is what the training path uses for the
//! real-valued gradient products.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || rows.checked_mul(cols).is_none() {
            return Err(Error::InvalidDims { rows, cols });
        }
        Ok(Tensor {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 || rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::InvalidDims { rows, cols });
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn full(rows: usize, cols: usize, value: T) -> Result<Self> {
        let mut t = Self::zeros(rows, cols)?;
        t.data.fill(value);
        Ok(t)
    }

    /// Glorot-uniform initialization. Returns the tensor together with the
    /// per-layer coefficient `L = sqrt(6 / (rows + cols))`, which also scales
    /// the layer's learning rate.
    pub fn glorot_init(rows: usize, cols: usize, rng: &mut Rng) -> Result<(Self, T)> {
        let mut t = Self::zeros(rows, cols)?;
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        for v in t.data.iter_mut() {
            *v = T::from_f64x(rng.uniform(-limit, limit));
        }
        Ok((t, T::from_f64x(limit)))
    }

    #[inline(always)]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline(always)]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline(always)]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline(always)]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline(always)]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline(always)]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline(always)]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline(always)]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map<F: Fn(T) -> T>(&self, f: F) -> Self {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map<F: Fn(T, T) -> T>(&self, other: &Self, f: F) -> Result<Self> {
        self.check_same_shape(other, "zip_map")?;
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn transpose(&self) -> Self {
        let mut out = vec![T::zero(); self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Tensor {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                op,
                left: format!("{}x{}", self.rows, self.cols),
                right: format!("{}x{}", other.rows, other.cols),
            });
        }
        Ok(())
    }

    /// Reference matrix product. Each output element is accumulated in `f64`
    /// over ascending `k`; the result is bit-for-bit reproducible and serves
    /// as the oracle for the packed kernels.
    pub fn matmul(&self, b: &Self) -> Result<Self> {
        if self.cols != b.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: format!("{}x{}", self.rows, self.cols),
                right: format!("{}x{}", b.rows, b.cols),
            });
        }
        let (m, p, n) = (self.rows, self.cols, b.cols);
        let mut acc = vec![0.0f64; n];
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            acc.fill(0.0);
            let a_row = self.row(i);
            for k in 0..p {
                let aik = a_row[k].to_f64x();
                let b_row = b.row(k);
                for j in 0..n {
                    acc[j] += aik * b_row[j].to_f64x();
                }
            }
            out.extend(acc.iter().map(|&x| T::from_f64x(x)));
        }
        Ok(Tensor {
            rows: m,
            cols: n,
            data: out,
        })
    }

    /// Fast product with native-precision accumulation. Deterministic, but
    /// not the oracle; used for the real-valued gradient GEMMs in training.
    pub fn matmul_fast(&self, b: &Self) -> Result<Self> {
        if self.cols != b.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul_fast",
                left: format!("{}x{}", self.rows, self.cols),
                right: format!("{}x{}", b.rows, b.cols),
            });
        }
        let (m, p, n) = (self.rows, self.cols, b.cols);
        let mut out = vec![T::zero(); m * n];
        // 4-row blocks share each streamed row of b, keeping the product
        // compute-bound instead of re-reading b once per output row
        let mut i = 0;
        while i + 4 <= m {
            let (a0, a1, a2, a3) = (self.row(i), self.row(i + 1), self.row(i + 2), self.row(i + 3));
            for k in 0..p {
                let (x0, x1, x2, x3) = (a0[k], a1[k], a2[k], a3[k]);
                let b_row = b.row(k);
                let (head, rest) = out[i * n..].split_at_mut(n);
                let (r1, rest) = rest.split_at_mut(n);
                let (r2, r3) = rest.split_at_mut(n);
                for j in 0..n {
                    let bj = b_row[j];
                    head[j] = head[j] + x0 * bj;
                    r1[j] = r1[j] + x1 * bj;
                    r2[j] = r2[j] + x2 * bj;
                    r3[j] = r3[j] + x3 * bj;
                }
            }
            i += 4;
        }
        while i < m {
            let a_row = self.row(i);
            let c_row = &mut out[i * n..(i + 1) * n];
            for k in 0..p {
                let aik = a_row[k];
                let b_row = b.row(k);
                for j in 0..n {
                    c_row[j] = c_row[j] + aik * b_row[j];
                }
            }
            i += 1;
        }
        Ok(Tensor {
            rows: m,
            cols: n,
            data: out,
        })
    }

    /// `self * b^T` without materializing the transpose: each output element
    /// is a dot product of a row of `self` with a row of `b`.
    pub fn matmul_a_bt(&self, b: &Self) -> Result<Self> {
        if self.cols != b.cols {
            return Err(Error::ShapeMismatch {
                op: "matmul_a_bt",
                left: format!("{}x{}", self.rows, self.cols),
                right: format!("{}x{} (transposed)", b.rows, b.cols),
            });
        }
        let (m, n, p) = (self.rows, b.rows, self.cols);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let a_row = self.row(i);
            let c_row = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                let b_row = b.row(j);
                // 16 independent partial sums so the reduction vectorizes
                let mut lanes = [T::zero(); 16];
                let mut chunks_a = a_row.chunks_exact(16);
                let mut chunks_b = b_row.chunks_exact(16);
                for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
                    for l in 0..16 {
                        lanes[l] = lanes[l] + ca[l] * cb[l];
                    }
                }
                let mut acc = lanes.iter().copied().fold(T::zero(), |s, x| s + x);
                for (x, y) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
                    acc = acc + *x * *y;
                }
                c_row[j] = acc;
            }
        }
        debug_assert_eq!(p, self.cols);
        Ok(Tensor {
            rows: m,
            cols: n,
            data: out,
        })
    }

    /// `self^T * b` without materializing the transpose.
    pub fn matmul_at_b(&self, b: &Self) -> Result<Self> {
        if self.rows != b.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul_at_b",
                left: format!("{}x{}", self.rows, self.cols),
                right: format!("{}x{}", b.rows, b.cols),
            });
        }
        let (m, p, n) = (self.rows, self.cols, b.cols);
        let mut out = vec![T::zero(); p * n];
        // 4-row blocks over the reduction index so each pass over the
        // p x n output accumulates four samples instead of one
        let mut i = 0;
        while i + 4 <= m {
            let (a0, a1, a2, a3) = (self.row(i), self.row(i + 1), self.row(i + 2), self.row(i + 3));
            let (b0, b1, b2, b3) = (b.row(i), b.row(i + 1), b.row(i + 2), b.row(i + 3));
            for k in 0..p {
                let (x0, x1, x2, x3) = (a0[k], a1[k], a2[k], a3[k]);
                let c_row = &mut out[k * n..(k + 1) * n];
                for j in 0..n {
                    c_row[j] = c_row[j] + x0 * b0[j] + x1 * b1[j] + x2 * b2[j] + x3 * b3[j];
                }
            }
            i += 4;
        }
        while i < m {
            let a_row = self.row(i);
            let b_row = b.row(i);
            for k in 0..p {
                let aik = a_row[k];
                let c_row = &mut out[k * n..(k + 1) * n];
                for j in 0..n {
                    c_row[j] = c_row[j] + aik * b_row[j];
                }
            }
            i += 1;
        }
        Ok(Tensor {
            rows: p,
            cols: n,
            data: out,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type T32 = Tensor<f32>;
    type T64 = Tensor<f64>;

    #[test]
    fn zeros_examples() {
        let t = T32::zeros(2, 2).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        assert_eq!(T32::zeros(1, 1).unwrap().data(), &[0.0]);
        let col = T32::zeros(3, 1).unwrap();
        assert_eq!((col.rows(), col.cols()), (3, 1));
        assert_eq!(col.data(), &[0.0; 3]);
    }

    #[test]
    fn zeros_rejects_bad_dims() {
        assert!(T32::zeros(0, 5).is_err());
        assert!(T32::zeros(5, 0).is_err());
        assert!(T32::zeros(usize::MAX, 2).is_err());
    }

    #[test]
    fn glorot_coefficient_closed_form() {
        let mut rng = Rng::new(1);
        let (_, l) = T64::glorot_init(4096, 4096, &mut rng).unwrap();
        assert!((l - (6.0f64 / 8192.0).sqrt()).abs() < 1e-12);
        assert!((l - 0.02706).abs() < 1e-4);
        let (_, l1) = T64::glorot_init(1, 1, &mut rng).unwrap();
        assert!((l1 - 3.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn glorot_is_bounded_and_deterministic() {
        let mut r1 = Rng::new(99);
        let mut r2 = Rng::new(99);
        let (a, l) = T32::glorot_init(17, 31, &mut r1).unwrap();
        let (b, _) = T32::glorot_init(17, 31, &mut r2).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|x| x.abs() <= l));
    }

    #[test]
    fn matmul_identity() {
        let mut rng = Rng::new(5);
        let (m, _) = T64::glorot_init(4, 4, &mut rng).unwrap();
        let mut id = T64::zeros(4, 4).unwrap();
        for i in 0..4 {
            id.set(i, i, 1.0);
        }
        assert_eq!(id.matmul(&m).unwrap(), m);
    }

    #[test]
    fn matmul_antipodal_row() {
        let a = T64::from_vec(1, 2, vec![1.0, -1.0]).unwrap();
        let b = T64::from_vec(2, 1, vec![1.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[0.0]);
    }

    /// Independent triple-loop reference with the same accumulation order.
    fn naive_ref(a: &T32, b: &T32) -> Vec<f32> {
        let mut out = vec![0.0f32; a.rows() * b.cols()];
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0f64;
                for k in 0..a.cols() {
                    acc += a.get(i, k) as f64 * b.get(k, j) as f64;
                }
                out[i * b.cols() + j] = acc as f32;
            }
        }
        out
    }

    #[test]
    fn matmul_matches_naive_reference() {
        let mut rng = Rng::new(11);
        let (a, _) = T32::glorot_init(7, 5, &mut rng).unwrap();
        let (b, _) = T32::glorot_init(5, 3, &mut rng).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), naive_ref(&a, &b).as_slice());
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = T32::zeros(2, 3).unwrap();
        let b = T32::zeros(4, 2).unwrap();
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn at_b_matches_explicit_transpose() {
        let mut rng = Rng::new(21);
        let (a, _) = T32::glorot_init(6, 4, &mut rng).unwrap();
        let (b, _) = T32::glorot_init(6, 5, &mut rng).unwrap();
        let via_t = a.transpose().matmul_fast(&b).unwrap();
        let direct = a.matmul_at_b(&b).unwrap();
        for (x, y) in via_t.data().iter().zip(direct.data()) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn transpose_roundtrip() {
        let mut rng = Rng::new(31);
        let (a, _) = T32::glorot_init(3, 8, &mut rng).unwrap();
        assert_eq!(a.transpose().transpose(), a);
    }
}
