//! Dense two-phase primal simplex with Bland's rule.
//!
//! Works directly on equality standard form (`min cᵀx, Ax = b, x ≥ 0`).
//! Bland's smallest-index pivoting rule makes the method finite (no cycling)
//! and fully deterministic, which matters more here than speed: the solver
//! doubles as the ground-truth oracle for the combinatorial shortcuts and
//! for the differentiable layer's fixed points.

use crate::problems::StandardFormLP;
use crate::solvers::{SolveResult, SolveStatus};
use crate::Error;

/// Pivot-eligibility threshold for ratio tests and reduced costs.
const EPS: f64 = 1e-9;
/// Phase-1 objective above this value means the program is infeasible.
const FEAS_TOL: f64 = 1e-7;

struct Tableau {
    /// `m` constraint rows of length `width`, then the objective row.
    rows: Vec<Vec<f64>>,
    /// Basic variable of each constraint row.
    basis: Vec<usize>,
    /// Number of structural + artificial columns (rhs excluded).
    width: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.width]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.rows[row][col];
        for v in self.rows[row].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[row].clone();
        for (i, r) in self.rows.iter_mut().enumerate() {
            if i == row {
                continue;
            }
            let f = r[col];
            if f == 0.0 {
                continue;
            }
            for (v, pv) in r.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
        }
        self.basis[row] = col;
    }

    /// Runs Bland-rule pivoting on columns `0..allowed`. The last row must
    /// hold current reduced costs. Returns the status and pivot count.
    fn run(&mut self, allowed: usize, max_iters: usize) -> Result<(SolveStatus, usize), Error> {
        let m = self.basis.len();
        for iter in 0..max_iters {
            let obj_row = self.rows.len() - 1;
            let entering = (0..allowed).find(|&j| self.rows[obj_row][j] < -EPS);
            let Some(col) = entering else {
                return Ok((SolveStatus::Optimal, iter));
            };
            // Ratio test; ties on the ratio fall to the row whose basic
            // variable has the smallest index (Bland).
            let mut best: Option<(f64, usize, usize)> = None; // (ratio, basis var, row)
            for i in 0..m {
                let a = self.rows[i][col];
                if a > EPS {
                    let ratio = self.rhs(i) / a;
                    let key = (ratio, self.basis[i]);
                    if best.map_or(true, |(r, bvar, _)| {
                        key.0 < r - EPS || (key.0 < r + EPS && key.1 < bvar)
                    }) {
                        best = Some((ratio, self.basis[i], i));
                    }
                }
            }
            match best {
                Some((_, _, row)) => self.pivot(row, col),
                None => return Ok((SolveStatus::Unbounded, iter)),
            }
        }
        Err(Error::Solver("simplex exceeded its iteration limit".into()))
    }
}

/// Solves `min cᵀx  s.t.  Ax = b, x ≥ 0` by two-phase simplex.
///
/// `cost` must cover every standard-form variable (use
/// [`StandardFormLP::extend_cost`] for natural-sense costs). The returned
/// solution is a vertex of the feasible polyhedron; `status` reports
/// infeasibility or unboundedness instead of erroring, so callers can treat
/// those as data.
///
/// # Errors
/// Only on internal failure (iteration limit), which Bland's rule should
/// make unreachable.
pub fn simplex_solve(std: &StandardFormLP, cost: &[f64]) -> Result<SolveResult, Error> {
    let m = std.a.nrows();
    let n = std.num_vars();
    assert_eq!(cost.len(), n, "simplex cost length mismatch");

    // Build phase-1 tableau with one artificial per row, flipping rows with
    // negative right-hand sides so b >= 0.
    let width = n + m;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    for i in 0..m {
        let sign = if std.b[i] < 0.0 { -1.0 } else { 1.0 };
        let mut row = vec![0.0; width + 1];
        for j in 0..n {
            row[j] = sign * std.a.get(i, j);
        }
        row[n + i] = 1.0;
        row[width] = sign * std.b[i];
        rows.push(row);
    }
    // Phase-1 reduced costs: artificials cost 1, so r_j = -sum_i a_ij for
    // structural columns and the rhs cell carries -sum_i b_i.
    let mut obj = vec![0.0; width + 1];
    for row in &rows {
        for j in 0..=width {
            obj[j] -= row[j];
        }
    }
    for j in n..width {
        obj[j] = 0.0;
    }
    rows.push(obj);
    let mut tab = Tableau { rows, basis: (n..width).collect(), width };

    let iter_cap = 50 * (n + m + 10);
    let (_, it1) = tab.run(n, iter_cap)?;
    let phase1_obj = -tab.rows[m][width];
    if phase1_obj > FEAS_TOL {
        return Ok(SolveResult {
            solution: vec![0.0; n],
            objective: f64::NAN,
            status: SolveStatus::Infeasible,
            iterations: it1,
            fixed_term: 0.0,
        });
    }
    // Drive any artificial still in the basis (at value ~0) out of it, or
    // note the row as redundant when no structural pivot exists.
    for i in 0..m {
        if tab.basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| tab.rows[i][j].abs() > 1e-7) {
                tab.pivot(i, j);
            }
        }
    }

    // Phase 2: rebuild the objective row from the real costs.
    let mut obj = vec![0.0; width + 1];
    obj[..n].copy_from_slice(cost);
    for i in 0..m {
        let cb = if tab.basis[i] < n { cost[tab.basis[i]] } else { 0.0 };
        if cb == 0.0 {
            continue;
        }
        let row = tab.rows[i].clone();
        for (v, rv) in obj.iter_mut().zip(&row) {
            *v -= cb * rv;
        }
    }
    tab.rows[m] = obj;
    let (status, it2) = tab.run(n, iter_cap)?;
    if status == SolveStatus::Unbounded {
        return Ok(SolveResult {
            solution: vec![0.0; n],
            objective: f64::NEG_INFINITY,
            status,
            iterations: it1 + it2,
            fixed_term: 0.0,
        });
    }

    let mut x = vec![0.0; n];
    for i in 0..m {
        if tab.basis[i] < n {
            x[tab.basis[i]] = tab.rhs(i).max(0.0);
        }
    }
    let objective = cost.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(SolveResult { solution: x, objective, status: SolveStatus::Optimal, iterations: it1 + it2, fixed_term: 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn std_lp(a: Vec<Vec<f64>>, b: Vec<f64>, n_orig: usize) -> StandardFormLP {
        StandardFormLP {
            a: Matrix::from_rows(&a),
            b,
            num_original_vars: n_orig,
            slack_offset: n_orig,
            cost_sign: 1.0,
        }
    }

    #[test]
    fn solves_a_textbook_lp() {
        // min -3x - 5y s.t. x + s1 = 4, 2y + s2 = 12, 3x + 2y + s3 = 18.
        let lp = std_lp(
            vec![
                vec![1.0, 0.0, 1.0, 0.0, 0.0],
                vec![0.0, 2.0, 0.0, 1.0, 0.0],
                vec![3.0, 2.0, 0.0, 0.0, 1.0],
            ],
            vec![4.0, 12.0, 18.0],
            2,
        );
        let r = simplex_solve(&lp, &[-3.0, -5.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.solution[0] - 2.0).abs() < 1e-9);
        assert!((r.solution[1] - 6.0).abs() < 1e-9);
        assert!((r.objective + 36.0).abs() < 1e-9);
    }

    #[test]
    fn reports_infeasible() {
        // x + s = 1 and x - s' = 2 with x <= 1 forced: x + x2 = 1, x = 2.
        let lp = std_lp(vec![vec![1.0, 1.0], vec![1.0, 0.0]], vec![1.0, 2.0], 1);
        let r = simplex_solve(&lp, &[1.0, 0.0]).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
    }

    #[test]
    fn reports_unbounded() {
        // min -x s.t. x - s = 0: x can grow without bound.
        let lp = std_lp(vec![vec![1.0, -1.0]], vec![0.0], 1);
        let r = simplex_solve(&lp, &[-1.0, 0.0]).unwrap();
        assert_eq!(r.status, SolveStatus::Unbounded);
    }

    #[test]
    fn handles_redundant_rows() {
        let lp = std_lp(vec![vec![1.0, 1.0], vec![2.0, 2.0]], vec![1.0, 2.0], 2);
        let r = simplex_solve(&lp, &[1.0, 2.0]).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.solution[0] - 1.0).abs() < 1e-9);
        assert!((r.objective - 1.0).abs() < 1e-9);
    }

    #[test]
    fn solution_is_a_vertex() {
        // Random-ish LP: the number of nonzero coordinates never exceeds the
        // number of rows at a basic solution.
        let lp = std_lp(
            vec![vec![1.0, 2.0, 1.0, 1.0, 0.0], vec![2.0, 1.0, 3.0, 0.0, 1.0]],
            vec![4.0, 5.0],
            3,
        );
        let r = simplex_solve(&lp, &[1.0, -2.0, 0.5, 0.0, 0.0]).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        let nz = r.solution.iter().filter(|v| v.abs() > 1e-9).count();
        assert!(nz <= 2, "basic solution has at most m nonzeros");
    }
}
