//! Differentiable smoothed-LP layer via Davis–Yin three-operator splitting.
//!
//! The layer approximately solves the regularized LP
//!
//! ```text
//! min  cᵀw + (rho/2)·‖w_orig‖²   s.t.  A w = b,  w ≥ 0,
//! ```
//!
//! where the quadratic term covers only the *original* variables of the
//! standard form (slacks are not regularized — this is what makes the
//! layer's fixed points agree with the analytic smoothed solutions of the
//! source problems). The forward pass iterates
//!
//! ```text
//! w        = P₊(z)                                  (non-negative clamp)
//! z_next   = z - w + P_A((2 - α·rho·mask)⊙w - z - α·c)
//! ```
//!
//! with `P_A` the affine projection onto `{Aw = b}` and step size
//! `0 < α < 2/rho`. The clamp of the final iterate is the emitted solution.
//!
//! The backward pass does not unroll the iteration. At a fixed point with a
//! stable active set `S = {i : z̄_i > 0}` the smoothed solution solves the
//! equality-constrained QP restricted to `S`, so its exact Jacobian is given
//! by the KKT system
//!
//! ```text
//! [ rho·diag(mask_S)  A_Sᵀ ] [dw_S]   [-dc_S]
//! [ A_S               0    ] [dλ  ] = [  0  ]
//! ```
//!
//! [`DysLayer::vjp`] solves this small system once per call — only the final
//! iterate and its active set are retained, never the iterate trajectory —
//! and agrees with central finite differences wherever the active set is
//! stable.

use crate::linalg::{independent_rows, lu_solve, AffineProjector, Matrix};
use crate::problems::{Problem, StandardFormLP};
use crate::Error;

use std::sync::atomic::{AtomicU64, Ordering};

static LAYER_IDS: AtomicU64 = AtomicU64::new(1);

/// Whether the forward pass runs a fixed iteration budget (training mode)
/// or iterates until the residual drops below `tol` (oracle mode).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterationMode {
    Fixed,
    ToConvergence,
}

/// Configuration of the smoothed layer.
#[derive(Debug, Clone, Copy)]
pub struct DysConfig {
    /// Regularization strength of `(rho/2)·‖w_orig‖²`; must be positive.
    pub rho: f64,
    /// Step size; must lie in `(0, 2/rho)`.
    pub alpha: f64,
    /// Iteration budget (exact count in `Fixed` mode, cap otherwise).
    pub max_iters: usize,
    /// Convergence threshold on the iterate sup-norm change.
    pub tol: f64,
    pub mode: IterationMode,
}

impl DysConfig {
    /// Training-mode configuration: a fixed budget of 100 iterations.
    pub fn fixed(rho: f64, alpha: f64) -> Self {
        DysConfig { rho, alpha, max_iters: 100, tol: 1e-6, mode: IterationMode::Fixed }
    }

    /// Oracle-mode configuration: iterate to a tight fixed point with the
    /// mid-range step size `α = 1/rho`.
    pub fn to_convergence(rho: f64) -> Self {
        DysConfig {
            rho,
            alpha: 1.0 / rho,
            max_iters: 200_000,
            tol: 1e-11,
            mode: IterationMode::ToConvergence,
        }
    }

    fn validate(&self) -> Result<(), Error> {
        if !(self.rho > 0.0) {
            return Err(Error::Dys("rho must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 2.0 / self.rho) {
            return Err(Error::Dys(format!(
                "step size alpha = {} outside (0, 2/rho) = (0, {})",
                self.alpha,
                2.0 / self.rho
            )));
        }
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(Error::Dys("tol must be positive and max_iters nonzero".into()));
        }
        Ok(())
    }
}

/// Everything the backward pass needs from one forward solve.
#[derive(Debug, Clone)]
pub struct DysForwardRecord {
    layer_id: u64,
    /// Final (pre-clamp) iterate `z̄`.
    pub final_iterate: Vec<f64>,
    /// Emitted solution `max{0, z̄}` over all standard-form variables.
    pub output: Vec<f64>,
    /// Active coordinates, `z̄_i > 0`.
    pub active: Vec<bool>,
    /// Sup-norm change of the last iteration.
    pub residual: f64,
    pub iters_used: usize,
}

/// The smoothed differentiable layer for one standard-form LP.
#[derive(Debug, Clone)]
pub struct DysLayer {
    id: u64,
    cfg: DysConfig,
    projector: AffineProjector,
    /// Regularization mask: `true` for original variables, `false` for
    /// slacks.
    reg_mask: Vec<bool>,
}

impl DysLayer {
    /// Builds a layer directly from a standard-form LP.
    pub fn from_standard_form(std: &StandardFormLP, cfg: DysConfig) -> Result<Self, Error> {
        cfg.validate()?;
        let projector = AffineProjector::new(&std.a, &std.b)?;
        let reg_mask: Vec<bool> =
            (0..std.num_vars()).map(|i| i < std.num_original_vars).collect();
        Ok(DysLayer { id: LAYER_IDS.fetch_add(1, Ordering::Relaxed), cfg, projector, reg_mask })
    }

    /// Builds a layer for a problem family's LP relaxation.
    pub fn for_problem(problem: &Problem, cfg: DysConfig) -> Result<Self, Error> {
        Self::from_standard_form(&problem.standard_form(), cfg)
    }

    pub fn config(&self) -> &DysConfig {
        &self.cfg
    }

    /// Number of standard-form variables.
    pub fn dim(&self) -> usize {
        self.projector.dim()
    }

    /// Runs the splitting iteration for the given standard-form cost vector.
    ///
    /// `warm` optionally restarts from a previous record's final iterate;
    /// otherwise iteration starts at the affine base point `A†b`.
    ///
    /// # Errors
    /// Fails when an iterate turns non-finite (diverged — step size too
    /// large for the problem scale) or on dimension mismatch.
    pub fn forward(
        &self,
        cost_std: &[f64],
        warm: Option<&[f64]>,
    ) -> Result<DysForwardRecord, Error> {
        let n = self.dim();
        if cost_std.len() != n {
            return Err(Error::Dys(format!(
                "cost length {} does not match layer dimension {n}",
                cost_std.len()
            )));
        }
        let mut z: Vec<f64> = match warm {
            Some(w) if w.len() == n => w.to_vec(),
            Some(_) => return Err(Error::Dys("warm start has wrong dimension".into())),
            None => self.projector.base_point().to_vec(),
        };
        let DysConfig { rho, alpha, max_iters, tol, mode } = self.cfg;
        let mut residual = f64::INFINITY;
        let mut iters_used = 0;
        let mut u = vec![0.0; n];
        for it in 0..max_iters {
            for i in 0..n {
                let w = z[i].max(0.0);
                let reg = if self.reg_mask[i] { alpha * rho * w } else { 0.0 };
                u[i] = 2.0 * w - reg - z[i] - alpha * cost_std[i];
            }
            let p = self.projector.project(&u);
            residual = 0.0;
            for i in 0..n {
                let z_next = z[i] - z[i].max(0.0) + p[i];
                residual = residual.max((z_next - z[i]).abs());
                z[i] = z_next;
            }
            iters_used = it + 1;
            if !residual.is_finite() {
                return Err(Error::Dys(format!(
                    "iteration diverged after {iters_used} steps (alpha = {alpha}, rho = {rho})"
                )));
            }
            if mode == IterationMode::ToConvergence && residual <= tol {
                break;
            }
        }
        let output: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
        let active: Vec<bool> = z.iter().map(|&v| v > 0.0).collect();
        Ok(DysForwardRecord { layer_id: self.id, final_iterate: z, output, active, residual, iters_used })
    }

    /// Vector–Jacobian product of the layer output with respect to the
    /// standard-form cost, evaluated at a forward record's fixed point.
    ///
    /// Solves the active-set KKT system described in the module docs;
    /// inactive coordinates receive zero gradient. Costs `O(|S|³)` per call.
    ///
    /// # Errors
    /// Fails if the record was produced by a different layer, on dimension
    /// mismatch, or when the active-set system is singular (degenerate
    /// fixed point, e.g. non-unique smoothed solution).
    pub fn vjp(&self, record: &DysForwardRecord, upstream_std: &[f64]) -> Result<Vec<f64>, Error> {
        if record.layer_id != self.id {
            return Err(Error::Dys("stale record: produced by a different layer".into()));
        }
        let n = self.dim();
        if upstream_std.len() != n {
            return Err(Error::Dys("upstream length does not match layer dimension".into()));
        }
        let active: Vec<usize> =
            (0..n).filter(|&i| record.active[i]).collect();
        if active.is_empty() {
            return Ok(vec![0.0; n]);
        }
        let a = self.projector.constraint_matrix();
        // Constraint rows restricted to active columns; dependent rows (for
        // this column subset) are dropped.
        let s = active.len();
        let rows: Vec<Vec<f64>> = (0..a.nrows())
            .map(|r| active.iter().map(|&j| a.get(r, j)).collect())
            .collect();
        let a_s = Matrix::from_rows(&rows);
        let kept = independent_rows(&a_s);
        let m = kept.len();
        let dim = s + m;
        let mut kkt = Matrix::zeros(dim, dim);
        for (si, &j) in active.iter().enumerate() {
            if self.reg_mask[j] {
                kkt.set(si, si, self.cfg.rho);
            }
        }
        for (ri, &r) in kept.iter().enumerate() {
            for si in 0..s {
                let v = a_s.get(r, si);
                kkt.set(si, s + ri, v);
                kkt.set(s + ri, si, v);
            }
        }
        let mut rhs = vec![0.0; dim];
        for (si, &j) in active.iter().enumerate() {
            rhs[si] = upstream_std[j];
        }
        let x = lu_solve(&kkt, &rhs).ok_or_else(|| {
            Error::Dys("degenerate active set: smoothed solution is not locally unique".into())
        })?;
        let mut g = vec![0.0; n];
        for (si, &j) in active.iter().enumerate() {
            g[j] = -x[si];
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::Problem;
    use crate::solvers::top1_qp_exact;

    /// Smoothed solution of `min y·w + (rho/2)w²` over `0 ≤ w ≤ 1`:
    /// 0 above zero, `-y/rho` in between, 1 below `-rho`.
    fn toy_smoothed(y: f64, rho: f64) -> f64 {
        if y > 0.0 {
            0.0
        } else if y > -rho {
            -y / rho
        } else {
            1.0
        }
    }

    fn toy_layer(rho: f64) -> DysLayer {
        let p = Problem::toy_1d();
        DysLayer::for_problem(&p, DysConfig::to_convergence(rho)).unwrap()
    }

    #[test]
    fn toy_forward_matches_piecewise_solution() {
        let layer = toy_layer(6.0);
        for &(y, want) in
            &[(-3.0, 0.5), (-9.0, 1.0), (2.0, 0.0), (-6.0, 1.0), (0.0, 0.0), (-0.5, 0.5 / 6.0)]
        {
            let r = layer.forward(&[y, 0.0], None).unwrap();
            assert!(
                (r.output[0] - want).abs() < 1e-6,
                "y = {y}: got {} want {want}",
                r.output[0]
            );
            assert!((r.output[0] - toy_smoothed(y, 6.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn toy_vjp_matches_hand_derivative() {
        // Interior region at yhat = -3, rho = 6: dw/dy = -1/6, so upstream
        // (4, 0) yields gradient -2/3 on the cost coordinate.
        let layer = toy_layer(6.0);
        let r = layer.forward(&[-3.0, 0.0], None).unwrap();
        let g = layer.vjp(&r, &[4.0, 0.0]).unwrap();
        assert!((g[0] + 2.0 / 3.0).abs() < 1e-9, "got {}", g[0]);
    }

    #[test]
    fn toy_vjp_is_zero_on_the_saturated_plateau() {
        let layer = toy_layer(6.0);
        let r = layer.forward(&[-8.0, 0.0], None).unwrap();
        let g = layer.vjp(&r, &[4.0, 0.0]).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn top1_forward_matches_waterfilling_oracle() {
        let p = Problem::top_k(3, 1).unwrap();
        let layer = DysLayer::for_problem(&p, DysConfig::to_convergence(2.0)).unwrap();
        // Min-convention costs for values (3, 2, 1).
        let std = p.standard_form();
        let cost = std.extend_cost(&[3.0, 2.0, 1.0]);
        let r = layer.forward(&cost, None).unwrap();
        let oracle = top1_qp_exact(&[3.0, 2.0, 1.0], 2.0);
        for (got, want) in r.output.iter().zip(&oracle) {
            assert!((got - want).abs() < 1e-6, "layer {got} oracle {want}");
        }
    }

    #[test]
    fn vjp_matches_finite_differences_on_top1() {
        let p = Problem::top_k(4, 1).unwrap();
        let layer = DysLayer::for_problem(&p, DysConfig::to_convergence(1.5)).unwrap();
        let std = p.standard_form();
        let base = [3.0, 2.4, 0.5, -1.0];
        let cost = std.extend_cost(&base);
        let rec = layer.forward(&cost, None).unwrap();
        let upstream = [0.7, -0.3, 0.2, 0.9, 0.1];
        let g = layer.vjp(&rec, &upstream).unwrap();
        let h = 1e-6;
        for j in 0..5 {
            let mut cp = cost.clone();
            cp[j] += h;
            let mut cm = cost.clone();
            cm[j] -= h;
            let fp = layer.forward(&cp, None).unwrap();
            let fm = layer.forward(&cm, None).unwrap();
            let fd: f64 = (0..5)
                .map(|i| upstream[i] * (fp.output[i] - fm.output[i]) / (2.0 * h))
                .sum();
            assert!((g[j] - fd).abs() < 1e-4, "coord {j}: vjp {} fd {fd}", g[j]);
        }
    }

    #[test]
    fn fixed_mode_uses_exact_budget_and_warm_start_resumes() {
        let p = Problem::toy_1d();
        let layer = DysLayer::for_problem(&p, DysConfig::fixed(6.0, 0.1)).unwrap();
        let r1 = layer.forward(&[-3.0, 0.0], None).unwrap();
        assert_eq!(r1.iters_used, 100);
        let r2 = layer.forward(&[-3.0, 0.0], Some(&r1.final_iterate)).unwrap();
        assert!(r2.residual <= r1.residual, "warm start should not regress");
    }

    #[test]
    fn stale_records_are_rejected() {
        let p = Problem::toy_1d();
        let l1 = DysLayer::for_problem(&p, DysConfig::fixed(6.0, 0.1)).unwrap();
        let l2 = DysLayer::for_problem(&p, DysConfig::fixed(6.0, 0.1)).unwrap();
        let r = l1.forward(&[-3.0, 0.0], None).unwrap();
        assert!(l2.vjp(&r, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn config_validation_rejects_bad_step_sizes() {
        let p = Problem::toy_1d();
        assert!(DysLayer::for_problem(&p, DysConfig::fixed(6.0, 0.4)).is_err()); // 0.4 > 2/6
        assert!(DysLayer::for_problem(&p, DysConfig::fixed(-1.0, 0.1)).is_err());
        assert!(DysLayer::for_problem(&p, DysConfig::fixed(6.0, 0.0)).is_err());
    }
}
