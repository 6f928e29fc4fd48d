//! Small dense linear algebra kit: row-major matrices, Cholesky solves and
//! unpreconditioned conjugate gradient against an abstract operator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum tolerated `|A - A^T|` entry before a matrix is rejected as non-symmetric.
pub const SYMMETRY_TOL: f64 = 1e-9;
pub const DEFAULT_CG_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "DenseMatrix::from_row_major",
                expected: rows * cols,
                actual: entries.len(),
            });
        }
        if let Some(pos) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "non-finite matrix entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut entries = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Contract(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            entries.extend_from_slice(r);
        }
        Self::from_row_major(rows.len(), cols, entries)
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
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.cols + j] += v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                context: "DenseMatrix::matvec",
                expected: self.cols,
                actual: v.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                context: "DenseMatrix::matmul",
                expected: self.cols,
                actual: other.rows,
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.entries[i * other.cols..(i + 1) * other.cols];
                axpy(a, orow, dst);
            }
        }
        Ok(out)
    }

    pub fn scale(&mut self, alpha: f64) {
        self.entries.iter_mut().for_each(|e| *e *= alpha);
    }

    /// Largest entry of `|A - A^T|`; `f64::INFINITY` for non-square input.
    pub fn max_asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Copies the upper triangle onto the lower one.
    pub fn symmetrize_from_upper(&mut self) {
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = self.get(i, j);
                self.set(j, i, v);
            }
        }
    }
}

/// A square linear map given only through its action on vectors.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Vec<f64>;
}

impl LinearOperator for DenseMatrix {
    fn dim(&self) -> usize {
        self.rows
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }
}

/// Adapts a closure into a [`LinearOperator`].
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64>> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        (self.f)(v)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Lower-triangular Cholesky factor `L` with `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: DenseMatrix,
}

impl Cholesky {
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::DimensionMismatch {
                context: "Cholesky::factor (square)",
                expected: a.rows(),
                actual: a.cols(),
            });
        }
        let asym = a.max_asymmetry();
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric {
                max_asymmetry: asym,
            });
        }
        let n = a.rows();
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let lj = l.row(j);
            let mut d = a.get(j, j) - dot(&lj[..j], &lj[..j]);
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Decomposition { pivot: j, value: d });
            }
            d = d.sqrt();
            l.set(j, j, d);
            for i in (j + 1)..n {
                let s = a.get(i, j) - dot(&l.row(i)[..j], &l.row(j)[..j]);
                l.set(i, j, s / d);
            }
        }
        Ok(Self { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                context: "Cholesky::solve",
                expected: n,
                actual: b.len(),
            });
        }
        // forward: L y = b
        let mut y = b.to_vec();
        for i in 0..n {
            let row = self.lower.row(i);
            let s = y[i] - dot(&row[..i], &y[..i]);
            y[i] = s / row[i];
        }
        // backward: L^T x = y
        let mut x = y;
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.lower.get(k, i) * x[k];
            }
            x[i] = s / self.lower.get(i, i);
        }
        Ok(x)
    }
}

pub fn cholesky_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            context: "cholesky_solve",
            expected: a.rows(),
            actual: b.len(),
        });
    }
    Cholesky::factor(a)?.solve(b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgSettings {
    pub tol: f64,
    /// `None` means `10 * dim`.
    pub max_iter: Option<usize>,
}

impl Default for CgSettings {
    fn default() -> Self {
        Self {
            tol: DEFAULT_CG_TOL,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub residual_norm: f64,
}

/// Solves `A x = b` for a symmetric positive definite operator.
///
/// Stops once `||A x - b||_2 <= tol * ||b||_2`. When `max_iter` runs out the
/// best iterate so far is returned with `converged == false`.
pub fn cg_solve<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgSolution> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            context: "cg_solve",
            expected: n,
            actual: b.len(),
        });
    }
    if !(tol > 0.0) {
        return Err(Error::Contract(format!("cg tolerance must be positive, got {tol}")));
    }
    let b_norm = norm2(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(CgSolution {
            x,
            iterations: 0,
            converged: true,
            residual_norm: 0.0,
        });
    }
    let target = tol * b_norm;
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut best_x = x.clone();
    let mut best_res = rr.sqrt();

    for it in 1..=max_iter {
        let ap = a.apply(&p);
        if ap.len() != n {
            return Err(Error::DimensionMismatch {
                context: "cg_solve (operator output)",
                expected: n,
                actual: ap.len(),
            });
        }
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap <= 0.0 {
            if pap.is_nan() {
                return Err(Error::NumericBreakdown(format!("NaN curvature at iteration {it}")));
            }
            return Err(Error::NumericBreakdown(format!(
                "non-positive curvature p^T A p = {pap:e} at iteration {it}"
            )));
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        if x.iter().any(|v| v.is_nan()) {
            return Err(Error::NumericBreakdown(format!("NaN iterate at iteration {it}")));
        }
        let rr_new = dot(&r, &r);
        let res = rr_new.sqrt();
        if res < best_res {
            best_res = res;
            best_x.copy_from_slice(&x);
        }
        if res <= target {
            return Ok(CgSolution {
                x,
                iterations: it,
                converged: true,
                residual_norm: res,
            });
        }
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
    }
    Ok(CgSolution {
        x: best_x,
        iterations: max_iter,
        converged: false,
        residual_norm: best_res,
    })
}

/// [`cg_solve`] with the default `10 * dim` iteration cap.
pub fn cg_solve_with<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    settings: CgSettings,
) -> Result<CgSolution> {
    let max_iter = settings.max_iter.unwrap_or(10 * a.dim().max(1));
    cg_solve(a, b, settings.tol, max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m2() -> DenseMatrix {
        DenseMatrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]).unwrap()
    }

    #[test]
    fn cholesky_identity() {
        let x = cholesky_solve(&DenseMatrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn cholesky_two_by_two() {
        // explicit inverse: (1/11) [[3,-1],[-1,4]] * [1,2] = [1/11, 7/11]
        let x = cholesky_solve(&m2(), &[1.0, 2.0]).unwrap();
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-14);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        match cholesky_solve(&a, &[1.0, 1.0]) {
            Err(Error::Decomposition { pivot, value }) => {
                assert_eq!(pivot, 1);
                assert!(value < 0.0);
            }
            other => panic!("expected decomposition failure, got {other:?}"),
        }
    }

    #[test]
    fn cholesky_rejects_asymmetric() {
        let a = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![0.5, 2.0]]).unwrap();
        assert!(matches!(
            cholesky_solve(&a, &[1.0, 1.0]),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn cholesky_dimension_mismatch() {
        assert!(matches!(
            cholesky_solve(&m2(), &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cg_identity_one_step() {
        let id = DenseMatrix::identity(4);
        let s = cg_solve(&id, &[1.0, 0.0, 0.0, 2.0], 1e-10, 40).unwrap();
        assert_eq!(s.iterations, 1);
        assert!(s.converged);
        assert_eq!(s.x, vec![1.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn cg_two_by_two_matches_cholesky() {
        let a = m2();
        let op = FnOperator::new(2, |v: &[f64]| a.matvec(v).unwrap());
        let s = cg_solve(&op, &[1.0, 2.0], 1e-10, 20).unwrap();
        assert!(s.converged);
        assert!(s.iterations <= 2);
        let direct = cholesky_solve(&a, &[1.0, 2.0]).unwrap();
        assert!(norm_inf(&sub(&s.x, &direct)) < 1e-12);
    }

    #[test]
    fn cg_zero_rhs() {
        let s = cg_solve(&m2(), &[0.0, 0.0], 1e-10, 20).unwrap();
        assert_eq!(s.iterations, 0);
        assert_eq!(s.x, vec![0.0, 0.0]);
    }

    #[test]
    fn cg_reports_nonconvergence() {
        let a = DenseMatrix::from_rows(&[
            vec![10.0, 1.0, 0.0],
            vec![1.0, 5.0, 1.0],
            vec![0.0, 1.0, 1.0],
        ])
        .unwrap();
        let s = cg_solve(&a, &[1.0, 1.0, 1.0], 1e-14, 1).unwrap();
        assert!(!s.converged);
        assert_eq!(s.iterations, 1);
    }

    #[test]
    fn cg_nan_operator_is_breakdown() {
        let op = FnOperator::new(2, |_: &[f64]| vec![f64::NAN, f64::NAN]);
        assert!(matches!(
            cg_solve(&op, &[1.0, 1.0], 1e-8, 10),
            Err(Error::NumericBreakdown(_))
        ));
    }

    #[test]
    fn operator_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_spd(&mut rng, 6);
        for _ in 0..20 {
            let u: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (al, be) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let comb: Vec<f64> = u.iter().zip(&v).map(|(x, y)| al * x + be * y).collect();
            let lhs = a.apply(&comb);
            let au = a.apply(&u);
            let av = a.apply(&v);
            for i in 0..6 {
                assert!((lhs[i] - (al * au[i] + be * av[i])).abs() < 1e-10);
            }
        }
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
        let m: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = DenseMatrix::from_row_major(n, n, m).unwrap();
        let mut a = m.transpose().matmul(&m).unwrap();
        for i in 0..n {
            a.add_at(i, i, 1.0);
        }
        a
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn cg_agrees_with_cholesky(seed in any::<u64>(), n in 1usize..=50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_spd(&mut rng, n);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let direct = cholesky_solve(&a, &b).unwrap();
            let cg = cg_solve_with(&a, &b, CgSettings { tol: 1e-12, max_iter: None }).unwrap();
            prop_assert!(norm_inf(&sub(&direct, &cg.x)) <= 1e-6);
            let r = sub(&a.apply(&direct), &b);
            prop_assert!(norm_inf(&r) <= 1e-8 * (1.0 + norm_inf(&b)));
        }

        #[test]
        fn cholesky_recovers_x(seed in any::<u64>(), n in 2usize..=12, log_cond in 0.0f64..6.0) {
            // A = Q diag(s) Q^T with a Householder Q and spread singular values
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ww = dot(&w, &w).max(1e-12);
            let mut q = DenseMatrix::identity(n);
            for i in 0..n {
                for j in 0..n {
                    q.add_at(i, j, -2.0 * w[i] * w[j] / ww);
                }
            }
            let mut d = DenseMatrix::zeros(n, n);
            for i in 0..n {
                d.set(i, i, 10f64.powf(log_cond * i as f64 / (n - 1) as f64));
            }
            let mut a = q.matmul(&d).unwrap().matmul(&q.transpose()).unwrap();
            a.symmetrize_from_upper();
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = a.apply(&x);
            let got = cholesky_solve(&a, &b).unwrap();
            let rel = norm2(&sub(&got, &x)) / norm2(&x).max(1e-300);
            prop_assert!(rel <= 1e-8, "relative error {rel}");
        }
    }
}
