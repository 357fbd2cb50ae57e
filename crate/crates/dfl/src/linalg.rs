//! Dense linear algebra kernels for the smoothed-LP layer.
//!
//! Everything here operates on small dense matrices (tens to a few hundred
//! rows/columns), so the implementations favour clarity and determinism over
//! asymptotics: plain row-major storage, Gaussian elimination, and
//! normal-equation pseudoinverses.
//!
//! The two projections used by the operator-splitting iteration live here:
//!
//! * [`AffineProjector::project`] — Euclidean projection onto `{w : Aw = b}`,
//!   computed as `w - A†(Aw - b)` with `A†` the Moore–Penrose pseudoinverse.
//! * [`project_nonneg`] — coordinate-wise projection onto the non-negative
//!   orthant, `max{0, w}`.

use crate::Error;

/// Relative cutoff below which a row is treated as linearly dependent.
///
/// The threshold is `ROW_DROP_CUTOFF * scale`, where `scale` is the largest
/// row norm of the matrix — a cheap stand-in for the largest singular value.
const ROW_DROP_CUTOFF: f64 = 1e-10;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// All-zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds a matrix from row vectors.
    ///
    /// # Panics
    /// Panics if the rows have unequal lengths.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows in Matrix::from_rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Borrow row `i` as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Matrix–vector product `A x`.
    ///
    /// # Panics
    /// Panics if `x.len() != ncols`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| {
                let row = self.row(i);
                row.iter().zip(x).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// Transposed matrix–vector product `Aᵀ x`.
    pub fn t_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "t_matvec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for (j, a) in self.row(i).iter().enumerate() {
                out[j] += a * xi;
            }
        }
        out
    }

    /// Matrix product `A B`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    let v = out.get(i, j) + a * other.get(k, j);
                    out.set(i, j, v);
                }
            }
        }
        out
    }

    /// Transposed copy.
    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    /// Largest absolute entry (entry-wise infinity norm).
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Indices of a maximal linearly independent subset of the rows of `a`,
/// found by Gram–Schmidt against previously accepted rows with a relative
/// norm cutoff.
pub fn independent_rows(a: &Matrix) -> Vec<usize> {
    let scale = {
        let mut s: f64 = 0.0;
        for i in 0..a.nrows() {
            s = s.max(dot(a.row(i), a.row(i)).sqrt());
        }
        s
    };
    if scale == 0.0 {
        return Vec::new();
    }
    let tol = ROW_DROP_CUTOFF * scale;
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    for i in 0..a.nrows() {
        let mut r = a.row(i).to_vec();
        // Two rounds of orthogonalisation for numerical hygiene.
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&r, q);
                for (rj, qj) in r.iter_mut().zip(q) {
                    *rj -= c * qj;
                }
            }
        }
        let norm = dot(&r, &r).sqrt();
        if norm > tol {
            for v in r.iter_mut() {
                *v /= norm;
            }
            basis.push(r);
            kept.push(i);
        }
    }
    kept
}

/// Solves the symmetric positive-definite system `M x = rhs` by Cholesky.
///
/// Returns `None` when a pivot falls below a relative tolerance (matrix not
/// numerically positive definite).
fn cholesky_solve(m: &Matrix, rhs: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = m.nrows();
    assert_eq!(m.ncols(), n);
    let mut l = Matrix::zeros(n, n);
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    for j in 0..n {
        let mut d = m.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if d <= 1e-14 * scale {
            return None;
        }
        let dj = d.sqrt();
        l.set(j, j, dj);
        for i in j + 1..n {
            let mut v = m.get(i, j);
            for k in 0..j {
                v -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, v / dj);
        }
    }
    let mut out = Vec::with_capacity(rhs.len());
    for r in rhs {
        assert_eq!(r.len(), n);
        // Forward then backward substitution.
        let mut y = r.clone();
        for i in 0..n {
            for k in 0..i {
                y[i] -= l.get(i, k) * y[k];
            }
            y[i] /= l.get(i, i);
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                y[i] -= l.get(k, i) * y[k];
            }
            y[i] /= l.get(i, i);
        }
        out.push(y);
    }
    Some(out)
}

/// Solves a general square system `M x = rhs` by LU with partial pivoting.
///
/// Returns `None` when the matrix is numerically singular.
pub fn lu_solve(m: &Matrix, rhs: &[f64]) -> Option<Vec<f64>> {
    let n = m.nrows();
    assert_eq!(m.ncols(), n);
    assert_eq!(rhs.len(), n);
    let mut a = m.clone();
    let mut x = rhs.to_vec();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let (pivot_row, pivot_val) = (col..n)
            .map(|r| (r, a.get(r, col).abs()))
            .fold((col, 0.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        if pivot_val <= 1e-13 * scale {
            return None;
        }
        if pivot_row != col {
            for j in 0..n {
                let tmp = a.get(col, j);
                a.set(col, j, a.get(pivot_row, j));
                a.set(pivot_row, j, tmp);
            }
            x.swap(col, pivot_row);
            perm.swap(col, pivot_row);
        }
        let p = a.get(col, col);
        for r in col + 1..n {
            let f = a.get(r, col) / p;
            if f == 0.0 {
                continue;
            }
            a.set(r, col, 0.0);
            for j in col + 1..n {
                let v = a.get(r, j) - f * a.get(col, j);
                a.set(r, j, v);
            }
            x[r] -= f * x[col];
        }
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            x[i] -= a.get(i, k) * x[k];
        }
        x[i] /= a.get(i, i);
    }
    Some(x)
}

/// Moore–Penrose pseudoinverse of a full-row-rank matrix, `A† = Aᵀ(AAᵀ)⁻¹`.
fn pinv_full_row_rank(a: &Matrix) -> Result<Matrix, Error> {
    let m = a.nrows();
    let gram = a.matmul(&a.transpose());
    let rhs: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut e = vec![0.0; m];
            e[i] = 1.0;
            e
        })
        .collect();
    let inv_cols = cholesky_solve(&gram, &rhs).ok_or_else(|| {
        Error::Linalg("constraint Gram matrix is numerically singular".into())
    })?;
    // pinv = Aᵀ · (AAᵀ)⁻¹; build column by column.
    let mut pinv = Matrix::zeros(a.ncols(), m);
    for (j, col) in inv_cols.iter().enumerate() {
        let v = a.t_matvec(col);
        for (i, vi) in v.iter().enumerate() {
            pinv.set(i, j, *vi);
        }
    }
    Ok(pinv)
}

/// Moore–Penrose pseudoinverse of `a`.
///
/// Linearly dependent rows (relative cutoff `1e-10` against the largest row
/// norm) are dropped with a warning before inverting; the returned matrix has
/// zero columns in the positions of dropped rows, so the shape is always
/// `ncols × nrows`. For full-row-rank input the result satisfies the
/// Moore–Penrose identities to about `1e-8`.
///
/// # Errors
/// Returns [`Error::Linalg`] for an all-zero (or empty) matrix, for which no
/// meaningful projector exists here.
///
/// # Example
/// ```
/// use dfl::linalg::{pseudoinverse, Matrix};
/// let a = Matrix::from_rows(&[vec![1.0, 1.0]]);
/// let p = pseudoinverse(&a).unwrap();
/// assert!((p.get(0, 0) - 0.5).abs() < 1e-12);
/// assert!((p.get(1, 0) - 0.5).abs() < 1e-12);
/// ```
pub fn pseudoinverse(a: &Matrix) -> Result<Matrix, Error> {
    let kept = independent_rows(a);
    if kept.is_empty() {
        return Err(Error::Linalg(
            "degenerate constraint matrix: all rows are zero or dependent".into(),
        ));
    }
    if kept.len() < a.nrows() {
        log::warn!(
            "pseudoinverse: dropped {} linearly dependent row(s) of {}",
            a.nrows() - kept.len(),
            a.nrows()
        );
    }
    let reduced = Matrix::from_rows(&kept.iter().map(|&i| a.row(i).to_vec()).collect::<Vec<_>>());
    let pr = pinv_full_row_rank(&reduced)?;
    let mut pinv = Matrix::zeros(a.ncols(), a.nrows());
    for (jr, &jo) in kept.iter().enumerate() {
        for i in 0..a.ncols() {
            pinv.set(i, jo, pr.get(i, jr));
        }
    }
    Ok(pinv)
}

/// Coordinate-wise projection onto the non-negative orthant, `max{0, w}`.
///
/// # Example
/// ```
/// assert_eq!(dfl::linalg::project_nonneg(&[-1.0, 0.5]), vec![0.0, 0.5]);
/// ```
pub fn project_nonneg(w: &[f64]) -> Vec<f64> {
    w.iter().map(|v| v.max(0.0)).collect()
}

/// Euclidean projector onto an affine set `{w : Aw = b}`.
///
/// Construction drops linearly dependent constraint rows (together with the
/// matching entries of `b`) and precomputes the pseudoinverse and the
/// null-space projector `I - A†A`.
#[derive(Debug, Clone)]
pub struct AffineProjector {
    a: Matrix,
    b: Vec<f64>,
    pinv: Matrix,
    null_proj: Matrix,
    /// A particular point of the affine set, `A†b`.
    base_point: Vec<f64>,
}

impl AffineProjector {
    /// Builds the projector for `{w : Aw = b}`.
    ///
    /// # Errors
    /// Fails when the constraint matrix has no independent rows, or when a
    /// dropped dependent row is inconsistent with the rows it depends on
    /// (empty affine set).
    pub fn new(a: &Matrix, b: &[f64]) -> Result<Self, Error> {
        assert_eq!(a.nrows(), b.len(), "constraint right-hand side length mismatch");
        let kept = independent_rows(a);
        if kept.is_empty() {
            return Err(Error::Linalg(
                "degenerate constraint matrix: all rows are zero or dependent".into(),
            ));
        }
        if kept.len() < a.nrows() {
            log::warn!(
                "AffineProjector: dropped {} dependent constraint row(s) of {}",
                a.nrows() - kept.len(),
                a.nrows()
            );
        }
        let ra = Matrix::from_rows(&kept.iter().map(|&i| a.row(i).to_vec()).collect::<Vec<_>>());
        let rb: Vec<f64> = kept.iter().map(|&i| b[i]).collect();
        let pinv = pinv_full_row_rank(&ra)?;
        let base_point = pinv.matvec(&rb);
        // Consistency check of the dropped rows against the base point.
        let full_res = a.matvec(&base_point);
        let scale = 1.0 + b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..a.nrows() {
            if (full_res[i] - b[i]).abs() > 1e-6 * scale {
                return Err(Error::Linalg(format!(
                    "inconsistent dependent constraint row {i}: affine set is empty"
                )));
            }
        }
        let mut null_proj = Matrix::identity(ra.ncols());
        let pa = pinv.matmul(&ra);
        for i in 0..null_proj.nrows() {
            for j in 0..null_proj.ncols() {
                let v = null_proj.get(i, j) - pa.get(i, j);
                null_proj.set(i, j, v);
            }
        }
        Ok(AffineProjector { a: ra, b: rb, pinv, null_proj, base_point })
    }

    /// Number of variables (columns of `A`).
    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    /// Reduced (independent-row) constraint matrix.
    pub fn constraint_matrix(&self) -> &Matrix {
        &self.a
    }

    /// Reduced right-hand side.
    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    /// Materialised null-space projector `I - A†A`.
    pub fn null_proj(&self) -> &Matrix {
        &self.null_proj
    }

    /// Projects `w` onto `{w : Aw = b}` as `w - A†(Aw - b)`.
    ///
    /// The computation uses the factored form (two thin matrix–vector
    /// products) rather than the materialised projector, so a projection
    /// costs `O(m·n)`.
    pub fn project(&self, w: &[f64]) -> Vec<f64> {
        let mut res = self.a.matvec(w);
        for (r, b) in res.iter_mut().zip(&self.b) {
            *r -= b;
        }
        let corr = self.pinv.matvec(&res);
        w.iter().zip(&corr).map(|(wi, ci)| wi - ci).collect()
    }

    /// Applies the null-space projector, `v - A†(Av)`, in factored form.
    pub fn null_apply(&self, v: &[f64]) -> Vec<f64> {
        let res = self.a.matvec(v);
        let corr = self.pinv.matvec(&res);
        v.iter().zip(&corr).map(|(vi, ci)| vi - ci).collect()
    }

    /// The point `A†b`, used as the default starting iterate.
    pub fn base_point(&self) -> &[f64] {
        &self.base_point
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat_close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
        a.nrows() == b.nrows()
            && a.ncols() == b.ncols()
            && (0..a.nrows())
                .all(|i| (0..a.ncols()).all(|j| (a.get(i, j) - b.get(i, j)).abs() <= tol))
    }

    #[test]
    fn pseudoinverse_of_simplex_row() {
        // A = [1 1] has pinv [0.5, 0.5]ᵀ.
        let a = Matrix::from_rows(&[vec![1.0, 1.0]]);
        let p = pseudoinverse(&a).unwrap();
        assert_eq!(p.nrows(), 2);
        assert_eq!(p.ncols(), 1);
        assert!((p.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((p.get(1, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn moore_penrose_identities_hold() {
        let a = Matrix::from_rows(&[
            vec![1.0, 2.0, 0.0, -1.0],
            vec![0.0, 1.0, 3.0, 2.0],
            vec![2.0, 0.0, 1.0, 1.0],
        ]);
        let p = pseudoinverse(&a).unwrap();
        let apa = a.matmul(&p).matmul(&a);
        assert!(mat_close(&apa, &a, 1e-8), "A A† A != A");
        let pap = p.matmul(&a).matmul(&p);
        assert!(mat_close(&pap, &p, 1e-8), "A† A A† != A†");
        let ap = a.matmul(&p);
        assert!(mat_close(&ap, &ap.transpose(), 1e-8), "A A† not symmetric");
        let pa = p.matmul(&a);
        assert!(mat_close(&pa, &pa.transpose(), 1e-8), "A† A not symmetric");
    }

    #[test]
    fn pseudoinverse_rejects_zero_matrix() {
        let a = Matrix::zeros(2, 3);
        assert!(pseudoinverse(&a).is_err());
    }

    #[test]
    fn dependent_rows_are_dropped() {
        // Second row is twice the first; projector must still work.
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]);
        let proj = AffineProjector::new(&a, &[1.0, 2.0]).unwrap();
        assert_eq!(proj.constraint_matrix().nrows(), 1);
        let p = proj.project(&[3.0, -1.0]);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn inconsistent_dependent_row_is_an_error() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]);
        // 2x + 2y = 5 contradicts x + y = 1.
        assert!(AffineProjector::new(&a, &[1.0, 5.0]).is_err());
    }

    #[test]
    fn projection_lands_on_affine_set_and_is_idempotent() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, -1.0], vec![0.0, 1.0, 1.0]]);
        let b = [3.0, 1.0];
        let proj = AffineProjector::new(&a, &b).unwrap();
        let w = [5.0, -2.0, 0.5];
        let p = proj.project(&w);
        let res = a.matvec(&p);
        assert!((res[0] - b[0]).abs() < 1e-9 && (res[1] - b[1]).abs() < 1e-9);
        let pp = proj.project(&p);
        for (x, y) in p.iter().zip(&pp) {
            assert!((x - y).abs() < 1e-9, "projection not idempotent");
        }
    }

    #[test]
    fn null_projector_is_symmetric_idempotent() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0, 1.0, 1.0]]);
        let proj = AffineProjector::new(&a, &[1.0]).unwrap();
        let n = proj.null_proj();
        let nn = n.matmul(n);
        assert!(mat_close(&nn, n, 1e-9));
        assert!(mat_close(&n.transpose(), n, 1e-12));
        // For A = 1ᵀ the null projector is I - J/n.
        assert!((n.get(0, 0) - 0.75).abs() < 1e-12);
        assert!((n.get(0, 1) + 0.25).abs() < 1e-12);
    }

    #[test]
    fn lu_solves_small_system() {
        let m = Matrix::from_rows(&[vec![6.0, 0.0, 1.0], vec![0.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]]);
        let x = lu_solve(&m, &[4.0, 0.0, 0.0]).unwrap();
        assert!((x[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((x[1] + 2.0 / 3.0).abs() < 1e-12);
        assert!((x[2] - 0.0).abs() < 1e-12);
    }
}
