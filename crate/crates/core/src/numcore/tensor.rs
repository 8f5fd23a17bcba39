use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Dense row-major matrix of 64-bit floats. Vectors are 1×n or n×1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor2 {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        Tensor2 { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![1.0; rows * cols],
        }
    }

    pub fn from_row(v: &[f64]) -> Self {
        Tensor2::new(1, v.len(), v.to_vec())
    }

    pub fn scalar(x: f64) -> Self {
        Tensor2::new(1, 1, vec![x])
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &Tensor2) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    /// In-place elementwise accumulation; shapes must match.
    pub fn add_assign(&mut self, other: &Tensor2) {
        assert!(self.same_shape(other), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    pub fn scale(&self, s: f64) -> Tensor2 {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }
}

pub fn matmul(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "matmul {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Tensor2::zeros(a.rows, b.cols);
    // ikj loop order keeps the inner access contiguous
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.get(i, k);
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, bv) in orow.iter_mut().zip(brow.iter()) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

/// Elementwise max(0, x).
pub fn relu(x: &Tensor2) -> Tensor2 {
    Tensor2 {
        rows: x.rows,
        cols: x.cols,
        data: x.data.iter().map(|v| v.max(0.0)).collect(),
    }
}

/// Row-wise exp-normalize with max subtraction; each row sums to 1.
pub fn softmax_rows(x: &Tensor2) -> Tensor2 {
    let mut out = x.clone();
    for r in 0..x.rows {
        let row = out.row_mut(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_matmul(a: &Tensor2, b: &Tensor2) -> Tensor2 {
        let mut out = Tensor2::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                let mut s = 0.0;
                for k in 0..a.cols {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let i2 = Tensor2::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let m = Tensor2::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(matmul(&i2, &m).unwrap(), m);
    }

    #[test]
    fn matmul_small() {
        let a = Tensor2::new(1, 2, vec![1.0, 2.0]);
        let b = Tensor2::new(2, 1, vec![3.0, 4.0]);
        assert_eq!(matmul(&a, &b).unwrap(), Tensor2::scalar(11.0));
    }

    #[test]
    fn matmul_shape_error() {
        let a = Tensor2::zeros(2, 3);
        let b = Tensor2::zeros(2, 3);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn matmul_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let (m, k, n) = (
                rng.gen_range(1..=64),
                rng.gen_range(1..=64),
                rng.gen_range(1..=64),
            );
            let a = Tensor2::new(m, k, (0..m * k).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let b = Tensor2::new(k, n, (0..k * n).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let got = matmul(&a, &b).unwrap();
            let want = naive_matmul(&a, &b);
            for (g, w) in got.data.iter().zip(want.data.iter()) {
                assert!((g - w).abs() < 1e-12, "{} vs {}", g, w);
            }
        }
    }

    #[test]
    fn relu_basics() {
        let x = Tensor2::from_row(&[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data, vec![0.0, 0.0, 2.0]);
        let pos = Tensor2::from_row(&[1.0, 3.0]);
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let x = Tensor2::from_row(&[0.0, 0.0]);
        assert_eq!(softmax_rows(&x).data, vec![0.5, 0.5]);
        let big = Tensor2::from_row(&[1000.0, 1000.0]);
        let s = softmax_rows(&big);
        assert!(s.is_finite());
        assert_eq!(s.data, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_closed_form() {
        let x = Tensor2::from_row(&[0.0, 3.0_f64.ln()]);
        let s = softmax_rows(&x);
        assert!((s.data[0] - 0.25).abs() < 1e-12);
        assert!((s.data[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor2::new(5, 7, (0..35).map(|_| rng.gen_range(-5.0..5.0)).collect());
        let s = softmax_rows(&x);
        for r in 0..5 {
            let sum: f64 = s.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        let mut shifted = x.clone();
        for r in 0..5 {
            for v in shifted.row_mut(r) {
                *v += 3.25;
            }
        }
        let s2 = softmax_rows(&shifted);
        for (a, b) in s.data.iter().zip(s2.data.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
