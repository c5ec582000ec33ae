use serde::{Deserialize, Serialize};

use super::IndexSet;
use crate::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix data".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |r| self.get(r, c))
    }

    /// Euclidean norm of every column.
    pub fn col_norms(&self) -> Vec<f64> {
        let mut sq = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (acc, v) in sq.iter_mut().zip(self.row(r)) {
                *acc += v * v;
            }
        }
        sq.into_iter().map(f64::sqrt).collect()
    }

    pub fn map_in_place(&mut self, f: impl Fn(f64) -> f64) {
        self.data.iter_mut().for_each(|v| *v = f(*v));
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Standard product `a · b`. Each output entry accumulates over the inner
/// dimension in ascending order.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch(format!(
            "matmul {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a_row.iter().enumerate() {
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

#[inline]
fn dot_over(row: &[f64], x: &[f64], cols: &[usize]) -> f64 {
    let mut acc = 0.0;
    for &c in cols {
        acc += row[c] * x[c];
    }
    acc
}

fn check_vec(w: &Matrix, x: &[f64]) -> Result<()> {
    if x.len() != w.cols {
        return Err(Error::DimensionMismatch(format!(
            "matvec {}x{} by vector of {}",
            w.rows,
            w.cols,
            x.len()
        )));
    }
    Ok(())
}

fn check_set(set: &IndexSet, len: usize) -> Result<()> {
    match set.max() {
        Some(m) if m >= len => Err(Error::IndexOutOfRange { index: m, len }),
        _ => Ok(()),
    }
}

/// `w · x` with only the columns in `cols` contributing. Excluded columns
/// are skipped, which is exactly equivalent to zeroing them.
pub fn masked_matvec(w: &Matrix, x: &[f64], cols: &IndexSet) -> Result<Vec<f64>> {
    check_vec(w, x)?;
    check_set(cols, w.cols)?;
    let idx = cols.as_slice();
    Ok((0..w.rows).map(|r| dot_over(w.row(r), x, idx)).collect())
}

/// Dense `w · x`. Shares the masked kernel so the all-columns mask is
/// bitwise identical.
pub fn matvec(w: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    masked_matvec(w, x, &IndexSet::all(w.cols))
}

/// Rows of `w · x` restricted to `rows`; the other outputs are zero. Each
/// computed entry is the same dot product the dense path produces.
pub fn matvec_rows(w: &Matrix, x: &[f64], rows: &IndexSet) -> Result<Vec<f64>> {
    check_vec(w, x)?;
    check_set(rows, w.rows)?;
    let all: Vec<usize> = (0..w.cols).collect();
    let mut out = vec![0.0; w.rows];
    for &r in rows.iter() {
        out[r] = dot_over(w.row(r), x, &all);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SplitMix64;

    fn random(rng: &mut SplitMix64, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| 2.0 * rng.next_f64() - 1.0).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn identity_left_multiply() {
        let a = Matrix::from_rows(&[vec![1.5, -2.0], vec![0.25, 7.0]]).unwrap();
        assert_eq!(matmul(&Matrix::identity(2), &a).unwrap(), a);
    }

    #[test]
    fn hand_product() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = SplitMix64::new(11);
        let a = random(&mut rng, 8, 8);
        let b = random(&mut rng, 8, 8);
        let c = matmul(&a, &b).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let mut s = 0.0;
                for k in 0..8 {
                    s += a.get(i, k) * b.get(k, j);
                }
                assert_eq!(c.get(i, j), s);
            }
        }
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(
            matmul(&a, &a),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn associativity_with_vector() {
        let mut rng = SplitMix64::new(5);
        let a = random(&mut rng, 16, 16);
        let b = random(&mut rng, 16, 16);
        let x: Vec<f64> = (0..16).map(|_| rng.next_f64() - 0.5).collect();
        let left = matvec(&matmul(&a, &b).unwrap(), &x).unwrap();
        let right = matvec(&a, &matvec(&b, &x).unwrap()).unwrap();
        for (l, r) in left.iter().zip(&right) {
            assert!((l - r).abs() <= 1e-9 * l.abs().max(r.abs()).max(1e-300));
        }
    }

    #[test]
    fn masked_empty_is_zero() {
        let mut rng = SplitMix64::new(3);
        let w = random(&mut rng, 4, 6);
        let y = masked_matvec(&w, &[1.0; 6], &IndexSet::empty()).unwrap();
        assert_eq!(y, vec![0.0; 4]);
    }

    #[test]
    fn masked_all_is_bitwise_dense() {
        let mut rng = SplitMix64::new(4);
        let w = random(&mut rng, 5, 9);
        let x: Vec<f64> = (0..9).map(|_| rng.next_f64()).collect();
        let dense = matvec(&w, &x).unwrap();
        let masked = masked_matvec(&w, &x, &IndexSet::all(9)).unwrap();
        let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&dense), bits(&masked));
    }

    #[test]
    fn masked_matches_zero_fill_oracle() {
        let mut rng = SplitMix64::new(9);
        let w = random(&mut rng, 4, 6);
        let x: Vec<f64> = (0..6).map(|_| rng.next_f64() - 0.5).collect();
        let cols = IndexSet::from_unsorted(vec![4, 1]);
        let mut zeroed = w.clone();
        for r in 0..4 {
            for c in [0, 2, 3, 5] {
                zeroed.set(r, c, 0.0);
            }
        }
        // zero-fill oracle: explicit triple loop over the zeroed matrix
        let oracle: Vec<f64> = (0..4)
            .map(|r| (0..6).fold(0.0, |acc, c| acc + zeroed.get(r, c) * x[c]))
            .collect();
        assert_eq!(masked_matvec(&w, &x, &cols).unwrap(), oracle);
    }

    #[test]
    fn masked_out_of_range() {
        let w = Matrix::zeros(2, 3);
        let err = masked_matvec(&w, &[0.0; 3], &IndexSet::from_unsorted(vec![3])).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { index: 3, len: 3 }));
    }

    #[test]
    fn row_restricted_matches_dense_rows() {
        let mut rng = SplitMix64::new(21);
        let w = random(&mut rng, 7, 5);
        let x: Vec<f64> = (0..5).map(|_| rng.next_f64()).collect();
        let dense = matvec(&w, &x).unwrap();
        let rows = IndexSet::from_unsorted(vec![0, 3, 6]);
        let part = matvec_rows(&w, &x, &rows).unwrap();
        for r in 0..7 {
            if rows.contains(r) {
                assert_eq!(part[r].to_bits(), dense[r].to_bits());
            } else {
                assert_eq!(part[r], 0.0);
            }
        }
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::new(1, 2, vec![1.0]).is_err());
    }

    #[test]
    fn column_norms() {
        let m = Matrix::from_rows(&[vec![3.0, 0.0], vec![4.0, 0.0]]).unwrap();
        assert_eq!(m.col_norms(), vec![5.0, 0.0]);
    }
}
