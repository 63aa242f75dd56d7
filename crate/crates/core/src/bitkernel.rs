//! Bit-packed +-1 linear algebra: 64 values per machine word, XNOR-popcount
//! dot products and GEMM, the 8-bit bit-plane product for the first layer,
//! and the kernel benchmark harness.
//!
//! Encoding: bit = 1 means +1, bit = 0 means -1. For a packed pair of rows
//! the +-1 dot product is `2 * popcount(xnor(a, b)) - n`. Tail bits past the
//! logical column count are kept zero so the last word can be handled with a
//! single mask.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl BitMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    /// Packed size in bytes.
    pub fn packed_bytes(&self) -> usize {
        self.words.len() * 8
    }

    #[inline(always)]
    pub fn row_words(&self, r: usize) -> &[u64] {
        &self.words[r * self.words_per_row..(r + 1) * self.words_per_row]
    }

    fn empty(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidDims { rows, cols });
        }
        let words_per_row = cols.div_ceil(64);
        Ok(BitMatrix {
            rows,
            cols,
            words_per_row,
            words: vec![0u64; rows * words_per_row],
        })
    }

    /// Pack a +-1 tensor. Any element that is not exactly -1 or +1 is
    /// rejected.
    pub fn pack<T: Real>(t: &Tensor<T>) -> Result<Self> {
        for (i, &v) in t.data().iter().enumerate() {
            if v != T::one() && v != -T::one() {
                return Err(Error::NonBinaryValue {
                    index: i,
                    value: v.to_f64x(),
                });
            }
        }
        Ok(Self::pack_sign(t))
    }

    /// Pack the elementwise sign of a real tensor (bit set when >= 0).
    pub fn pack_sign<T: Real>(t: &Tensor<T>) -> Self {
        let mut bm = Self::empty(t.rows(), t.cols()).expect("tensor dims are valid");
        for r in 0..t.rows() {
            let row = t.row(r);
            let out = &mut bm.words[r * bm.words_per_row..(r + 1) * bm.words_per_row];
            for (c, &v) in row.iter().enumerate() {
                if v >= T::zero() {
                    out[c / 64] |= 1u64 << (c % 64);
                }
            }
        }
        bm
    }

    /// Pack the sign of the transpose in one pass (used for weight matrices,
    /// which the packed GEMM consumes row-major transposed).
    pub fn pack_sign_transposed<T: Real>(t: &Tensor<T>) -> Self {
        let mut bm = Self::empty(t.cols(), t.rows()).expect("tensor dims are valid");
        let wpr = bm.words_per_row;
        // accumulate 64 source rows into one column-indexed word buffer so
        // the strided destination is written once per word, not per row
        let mut tmp = vec![0u64; t.cols()];
        let mut r0 = 0;
        while r0 < t.rows() {
            let r1 = (r0 + 64).min(t.rows());
            tmp.fill(0);
            for r in r0..r1 {
                let row = t.row(r);
                let shift = (r % 64) as u32;
                for (acc, &v) in tmp.iter_mut().zip(row) {
                    *acc |= ((v >= T::zero()) as u64) << shift;
                }
            }
            let word = r0 / 64;
            for (c, &w) in tmp.iter().enumerate() {
                bm.words[c * wpr + word] = w;
            }
            r0 = r1;
        }
        bm
    }

    /// Pack one bit plane of a byte matrix: bit set where
    /// `(byte >> plane) & 1 == 1`.
    pub fn pack_byte_plane(rows: usize, cols: usize, bytes: &[u8], plane: u8) -> Result<Self> {
        if rows.checked_mul(cols) != Some(bytes.len()) {
            return Err(Error::InvalidDims { rows, cols });
        }
        let mut bm = Self::empty(rows, cols)?;
        let wpr = bm.words_per_row;
        for r in 0..rows {
            let row = &bytes[r * cols..(r + 1) * cols];
            let out = &mut bm.words[r * wpr..(r + 1) * wpr];
            for (c, &b) in row.iter().enumerate() {
                out[c / 64] |= (((b >> plane) & 1) as u64) << (c % 64);
            }
        }
        Ok(bm)
    }

    pub fn unpack<T: Real>(&self) -> Tensor<T> {
        let mut t = Tensor::zeros(self.rows, self.cols).expect("dims are valid");
        for r in 0..self.rows {
            let words = &self.words[r * self.words_per_row..(r + 1) * self.words_per_row];
            let row = t.row_mut(r);
            for (c, v) in row.iter_mut().enumerate() {
                *v = if (words[c / 64] >> (c % 64)) & 1 == 1 {
                    T::one()
                } else {
                    -T::one()
                };
            }
        }
        t
    }

    /// True when every bit past the logical column count is zero.
    pub fn tail_bits_clear(&self) -> bool {
        let rem = self.cols % 64;
        if rem == 0 {
            return true;
        }
        let mask = !((1u64 << rem) - 1);
        (0..self.rows).all(|r| self.words[(r + 1) * self.words_per_row - 1] & mask == 0)
    }
}

/// XNOR-popcount dot product of two packed +-1 rows of logical length `n`:
/// `2 * popcount(xnor(a, b)) - n`.
pub fn xnor_dot(a_row: &[u64], b_row: &[u64], n: usize) -> Result<i64> {
    let wpr = n.div_ceil(64);
    if a_row.len() != wpr || b_row.len() != wpr {
        return Err(Error::ShapeMismatch {
            op: "xnor_dot",
            left: format!("{} words", a_row.len()),
            right: format!("{} words for n={n}", b_row.len()),
        });
    }
    Ok(xnor_dot_unchecked(a_row, b_row, n))
}

#[inline(always)]
fn xnor_dot_unchecked(a_row: &[u64], b_row: &[u64], n: usize) -> i64 {
    let mut pc: u64 = 0;
    let full = n / 64;
    for k in 0..full {
        pc += (!(a_row[k] ^ b_row[k])).count_ones() as u64;
    }
    let rem = n % 64;
    if rem != 0 {
        let mask = (1u64 << rem) - 1;
        pc += ((!(a_row[full] ^ b_row[full])) & mask).count_ones() as u64;
    }
    2 * pc as i64 - n as i64
}

/// Packed +-1 GEMM. `b_transposed` holds the right operand row-major
/// transposed so both sides stream along their rows. The integer result is
/// exactly equal to the float product of the unpacked operands.
pub fn xnor_gemm<T: Real>(a: &BitMatrix, b_transposed: &BitMatrix) -> Result<Tensor<T>> {
    xnor_gemm_threads(a, b_transposed, 1)
}

/// Same as [`xnor_gemm`], with output rows partitioned over `threads`
/// OS threads. Integer accumulation makes the result identical to the
/// single-threaded kernel.
pub fn xnor_gemm_threads<T: Real>(
    a: &BitMatrix,
    b_transposed: &BitMatrix,
    threads: usize,
) -> Result<Tensor<T>> {
    if a.cols != b_transposed.cols {
        return Err(Error::ShapeMismatch {
            op: "xnor_gemm",
            left: format!("{}x{}", a.rows, a.cols),
            right: format!("{}x{} (transposed)", b_transposed.rows, b_transposed.cols),
        });
    }
    let (m, n, inner) = (a.rows, b_transposed.rows, a.cols);
    let mut out = vec![T::zero(); m * n];
    let threads = threads.clamp(1, m);
    let chunk_rows = m.div_ceil(threads);
    std::thread::scope(|s| {
        for (t, out_chunk) in out.chunks_mut(chunk_rows * n).enumerate() {
            let i0 = t * chunk_rows;
            s.spawn(move || {
                for (di, c_row) in out_chunk.chunks_mut(n).enumerate() {
                    let a_row = a.row_words(i0 + di);
                    for (j, c) in c_row.iter_mut().enumerate() {
                        *c = T::from_i64_(xnor_dot_unchecked(a_row, b_transposed.row_words(j), inner));
                    }
                }
            });
        }
    });
    Tensor::from_vec(m, n, out)
}

/// Unsigned 8-bit inputs decomposed into bit planes (LSB = plane 0).
#[derive(Debug, Clone)]
pub struct BitPlanes8 {
    planes: Vec<BitMatrix>,
    /// popcount of every row of every plane, precomputed for the masked dot
    row_pop: Vec<Vec<i64>>,
    rows: usize,
    cols: usize,
}

impl BitPlanes8 {
    pub fn from_bytes(rows: usize, cols: usize, bytes: &[u8]) -> Result<Self> {
        let mut planes = Vec::with_capacity(8);
        let mut row_pop = Vec::with_capacity(8);
        for p in 0..8u8 {
            let bm = BitMatrix::pack_byte_plane(rows, cols, bytes, p)?;
            let pops = (0..rows)
                .map(|r| {
                    bm.row_words(r)
                        .iter()
                        .map(|w| w.count_ones() as i64)
                        .sum()
                })
                .collect();
            planes.push(bm);
            row_pop.push(pops);
        }
        Ok(BitPlanes8 {
            planes,
            row_pop,
            rows,
            cols,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn plane(&self, n: usize) -> &BitMatrix {
        &self.planes[n]
    }

    /// Reassemble the original bytes (reconstruction invariant).
    pub fn reconstruct(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.rows * self.cols];
        for (p, plane) in self.planes.iter().enumerate() {
            for r in 0..self.rows {
                let words = plane.row_words(r);
                for c in 0..self.cols {
                    out[r * self.cols + c] |=
                        (((words[c / 64] >> (c % 64)) & 1) as u8) << p;
                }
            }
        }
        out
    }
}

/// Exact product of an unsigned-byte matrix with a +-1 weight matrix via
/// eight weighted binary dot products. For a {0,1} plane row against a +-1
/// weight row the dot is `2 * popcount(and(x, w)) - popcount(x)`.
pub fn bitplane_gemm<T: Real>(x: &BitPlanes8, w_transposed: &BitMatrix) -> Result<Tensor<T>> {
    if x.cols != w_transposed.cols {
        return Err(Error::ShapeMismatch {
            op: "bitplane_gemm",
            left: format!("{}x{}", x.rows, x.cols),
            right: format!("{}x{} (transposed)", w_transposed.rows, w_transposed.cols),
        });
    }
    let (m, n) = (x.rows, w_transposed.rows);
    let mut acc = vec![0i64; m * n];
    for p in 0..8 {
        let plane = &x.planes[p];
        let weight = 1i64 << p;
        for i in 0..m {
            let x_row = plane.row_words(i);
            let x_pop = x.row_pop[p][i];
            let out_row = &mut acc[i * n..(i + 1) * n];
            for (j, c) in out_row.iter_mut().enumerate() {
                let w_row = w_transposed.row_words(j);
                let mut and_pop: i64 = 0;
                for (a, b) in x_row.iter().zip(w_row) {
                    and_pop += (a & b).count_ones() as i64;
                }
                *c += weight * (2 * and_pop - x_pop);
            }
        }
    }
    Tensor::from_vec(m, n, acc.into_iter().map(T::from_i64_).collect())
}

/// One benchmark measurement. `speedup` is relative to the float baseline at
/// the same size and is 1.0 for the baseline row itself.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub kernel: &'static str,
    pub size: usize,
    pub threads: usize,
    pub median_ms: f64,
    pub speedup: f64,
}

pub const BENCH_CSV_HEADER: &str = "kernel,size,threads,median_ms,speedup";

impl BenchRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.3},{:.2}",
            self.kernel, self.size, self.threads, self.median_ms, self.speedup
        )
    }
}

/// Naive float GEMM over a pre-transposed right operand: triple loop with
/// the reduction innermost. This is the deliberately unoptimized baseline
/// the packed kernel is measured against.
pub fn naive_gemm_bt<T: Real>(a: &Tensor<T>, b_t: &Tensor<T>) -> Result<Tensor<T>> {
    if a.cols() != b_t.cols() {
        return Err(Error::ShapeMismatch {
            op: "naive_gemm_bt",
            left: format!("{}x{}", a.rows(), a.cols()),
            right: format!("{}x{} (transposed)", b_t.rows(), b_t.cols()),
        });
    }
    let (m, n, p) = (a.rows(), b_t.rows(), a.cols());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let a_row = a.row(i);
        for j in 0..n {
            let b_row = b_t.row(j);
            let mut acc = T::zero();
            for k in 0..p {
                acc = acc + a_row[k] * b_row[k];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::from_vec(m, n, out)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[k]
    } else {
        (xs[k - 1] + xs[k]) / 2.0
    }
}

/// Time the float baseline against the packed XNOR kernel on square +-1
/// matrices. Outputs are checked for exact equality before any timing;
/// packing time is reported as its own row.
pub fn bench_gemm(sizes: &[usize], repetitions: usize, threads: usize) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    let mut rng = crate::rng::Rng::new(0xBEEF);
    for &size in sizes {
        size.checked_mul(size)
            .ok_or(Error::InvalidDims { rows: size, cols: size })?;
        let a = random_pm1::<f32>(size, size, &mut rng);
        let b_t = random_pm1::<f32>(size, size, &mut rng);

        let a_bits = BitMatrix::pack(&a)?;
        let bt_bits = BitMatrix::pack(&b_t)?;

        // correctness gate: both kernels must agree exactly
        let float_out = naive_gemm_bt(&a, &b_t)?;
        let packed_out: Tensor<f32> = xnor_gemm_threads(&a_bits, &bt_bits, threads)?;
        if float_out != packed_out {
            return Err(Error::ShapeMismatch {
                op: "bench correctness gate",
                left: "float baseline".into(),
                right: "xnor kernel disagrees".into(),
            });
        }

        let mut base_ms = Vec::with_capacity(repetitions);
        let mut xnor_ms = Vec::with_capacity(repetitions);
        let mut pack_ms = Vec::with_capacity(repetitions);
        for _ in 0..repetitions.max(1) {
            let t0 = Instant::now();
            let out = naive_gemm_bt(&a, &b_t)?;
            base_ms.push(t0.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(&out);

            let t1 = Instant::now();
            let pa = BitMatrix::pack(&a)?;
            let pb = BitMatrix::pack(&b_t)?;
            pack_ms.push(t1.elapsed().as_secs_f64() * 1e3);

            let t2 = Instant::now();
            let out: Tensor<f32> = xnor_gemm_threads(&pa, &pb, threads)?;
            xnor_ms.push(t2.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(&out);
        }
        let base = median(base_ms);
        let xnor = median(xnor_ms);
        let pack = median(pack_ms);
        rows.push(BenchRow {
            kernel: "float_baseline",
            size,
            threads,
            median_ms: base,
            speedup: 1.0,
        });
        rows.push(BenchRow {
            kernel: "xnor_packed",
            size,
            threads,
            median_ms: xnor,
            speedup: base / xnor,
        });
        rows.push(BenchRow {
            kernel: "pack_only",
            size,
            threads,
            median_ms: pack,
            speedup: base / pack,
        });
    }
    Ok(rows)
}

/// Random +-1 tensor (test/bench helper).
pub fn random_pm1<T: Real>(rows: usize, cols: usize, rng: &mut crate::rng::Rng) -> Tensor<T> {
    let data = (0..rows * cols)
        .map(|_| {
            if rng.next_u64() & 1 == 1 {
                T::one()
            } else {
                -T::one()
            }
        })
        .collect();
    Tensor::from_vec(rows, cols, data).expect("dims are valid")
}
