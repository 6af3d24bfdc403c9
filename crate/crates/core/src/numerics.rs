//! Dense vector/matrix kernels with max-shift stabilized softmax and
//! log-sum-exp.
//!
//! The kernels work on plain `&[f64]` slices so callers can hand in rows of a
//! [`Matrix`] without copying. [`Vector`] is the owned, validated form used
//! where a value crosses a module boundary.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Owned, nonempty vector of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("vector must be nonempty"));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite entry at index {i}")));
        }
        Ok(Vector(data))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "vector dim must be positive");
        Vector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;

    fn try_from(data: Vec<f64>) -> Result<Self> {
        Vector::new(data)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::invalid(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("matrix has non-finite entries"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::invalid(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Appends a row, growing the matrix by one.
    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if self.rows > 0 && row.len() != self.cols {
            return Err(Error::invalid(format!(
                "row has {} columns, expected {}",
                row.len(),
                self.cols
            )));
        }
        if self.rows == 0 {
            self.cols = row.len();
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    /// `self · x` for a column vector `x` of length `cols`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dims(self.cols, x.len())?;
        Ok(self.iter_rows().map(|r| dot_unchecked(r, x)).collect())
    }

    /// `selfᵀ · y` for a column vector `y` of length `rows`.
    pub fn t_matvec(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dims(self.rows, y.len())?;
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in self.iter_rows().zip(y) {
            axpy(yr, r, &mut out);
        }
        Ok(out)
    }
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::invalid(format!(
            "dimension mismatch: expected {expected}, got {got}"
        )));
    }
    Ok(())
}

pub(crate) fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`.
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    Ok(dot_unchecked(a, b))
}

pub fn norm(a: &[f64]) -> f64 {
    dot_unchecked(a, a).sqrt()
}

/// Returns `a / ‖a‖`; rejects zero-norm input.
pub fn normalize(a: &[f64]) -> Result<Vec<f64>> {
    let n = norm(a);
    if !n.is_finite() || n <= 0.0 {
        return Err(Error::invalid("cannot normalize a zero-norm vector"));
    }
    Ok(a.iter().map(|v| v / n).collect())
}

fn nonempty_max(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("empty input"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite input"));
    }
    Ok(values.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// `m + ln Σ exp(v - m)` with `m = max v`. Terms are summed smallest first,
/// so the result does not depend on the order of `values`.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    let m = nonempty_max(values)?;
    if values.len() == 1 {
        return Ok(m);
    }
    let mut terms: Vec<f64> = values.iter().map(|v| (v - m).exp()).collect();
    terms.sort_by(f64::total_cmp);
    Ok(m + terms.iter().sum::<f64>().ln())
}

pub fn softmax(values: &[f64]) -> Result<Vec<f64>> {
    let m = nonempty_max(values)?;
    let exps: Vec<f64> = values.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    let na = norm(a);
    let nb = norm(b);
    if na.is_nan() || nb.is_nan() || na <= 0.0 || nb <= 0.0 {
        return Err(Error::invalid("cosine of a zero-norm vector"));
    }
    Ok((dot_unchecked(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn dot_examples() {
        assert_eq!(dot(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(dot(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        let v = normalize(&[0.3, -1.2, 2.5]).unwrap();
        assert!((dot(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            dot(&[1.0], &[1.0, 2.0]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn lse_examples() {
        assert_eq!(log_sum_exp(&[0.7]).unwrap(), 0.7);
        let a = 3.25;
        assert!((log_sum_exp(&[a, a]).unwrap() - (a + LN2)).abs() < 1e-12);
        let v = log_sum_exp(&[0.0, 3f64.ln()]).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-12);
        assert!((v - 1.3862944).abs() < 1e-7);
        assert!(log_sum_exp(&[]).is_err());
        let big = log_sum_exp(&[1e8, 1e8 - 1.0, -1e8]).unwrap();
        assert!(big.is_finite() && big >= 1e8);
    }

    #[test]
    fn lse_ignores_order() {
        let v = [1.0, -1.0, 1.0, 1.0, 0.3, -2.5];
        let mut w = v;
        w.reverse();
        w.swap(1, 4);
        assert_eq!(log_sum_exp(&v).unwrap().to_bits(), log_sum_exp(&w).unwrap().to_bits());
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[2.0, 2.0, 2.0]).unwrap();
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] >= 0.0 && p[1] < 1e-300);
        let p = softmax(&[0.0, 3f64.ln()]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn cosine_examples() {
        let v = [0.2, -0.4, 0.9];
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn vector_rejects_bad_data() {
        assert!(Vector::new(vec![]).is_err());
        assert!(Vector::new(vec![1.0, f64::NAN]).is_err());
        assert_eq!(Vector::new(vec![1.0, 2.0]).unwrap().dim(), 2);
    }

    #[test]
    fn matvec_and_transpose() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(m.matvec(&[1.0, -1.0]).unwrap(), vec![-1.0, -1.0, -1.0]);
        assert_eq!(m.t_matvec(&[1.0, 0.0, 1.0]).unwrap(), vec![6.0, 8.0]);
        assert!(m.matvec(&[1.0]).is_err());
    }

    fn finite_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, 1..12)
    }

    proptest! {
        #[test]
        fn lse_sandwich(v in finite_vec()) {
            let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s = log_sum_exp(&v).unwrap();
            prop_assert!(m <= s);
            prop_assert!(s <= m + (v.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn lse_singleton_exact(x in -1e8f64..1e8) {
            prop_assert_eq!(log_sum_exp(&[x]).unwrap(), x);
        }

        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(v in finite_vec(), shift in -100.0f64..100.0) {
            let p = softmax(&v).unwrap();
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x > 0.0));
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            pair in (1usize..8).prop_flat_map(|n| (
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(-5.0f64..5.0, n),
            )),
            alpha in 0.01f64..100.0,
            beta in 0.01f64..100.0,
        ) {
            let (a, b) = pair;
            prop_assume!(norm(&a) > 1e-6 && norm(&b) > 1e-6);
            let c = cosine(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&c));
            prop_assert!((c - cosine(&b, &a).unwrap()).abs() < 1e-12);
            let sa: Vec<f64> = a.iter().map(|x| x * alpha).collect();
            let sb: Vec<f64> = b.iter().map(|x| x * beta).collect();
            prop_assert!((c - cosine(&sa, &sb).unwrap()).abs() < 1e-10);
        }
    }
}
