//! Decision losses and their gradients.
//!
//! All losses compare a predicted cost vector `ŷ` against the true cost `y`
//! of the same instance, through the decisions they induce. Internally
//! everything runs in minimization convention (`c = min_cost(y)`), and
//! gradients are reported with respect to the natural-sense prediction.
//!
//! Loss kinds (values for a true optimum `w⋆` and a solver/layer solution
//! `w(·)`):
//!
//! * `Regret` — `cᵀw(ĉ) - cᵀw⋆`; piecewise constant in `ĉ`, so it is only
//!   trainable through the smoothed layer.
//! * `SqDe` — squared decision error `‖w(ĉ) - w⋆‖²`; same restriction.
//! * `SpoPlus` — convex upper bound `(2ĉ-c)ᵀw⋆ - min_w (2ĉ-c)ᵀw`, with
//!   subgradient `2(w⋆ - w(2ĉ-c))`.
//! * `SceYhat` / `SceDiff` — self-contrastive estimation scored at `ĉ` or at
//!   `ĉ - c`; both share the subgradient `w⋆ - w(ĉ)`.
//!
//! Gradient paths:
//!
//! * [`GradPath::Subgradient`] uses a non-differentiable solver (exact, LP
//!   relaxation, or a solution cache) and the closed-form subgradients.
//! * [`GradPath::ThroughLayer`] replaces the solver with the smoothed
//!   [`DysLayer`] and differentiates through it, adding the solution-map
//!   Jacobian term to each loss.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dys::{DysConfig, DysLayer};
use crate::problems::{Problem, StandardFormLP};
use crate::solvers::{SolutionCache, SolveResult};
use crate::Error;

/// Which loss to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Regret,
    SqDe,
    SpoPlus,
    SceYhat,
    SceDiff,
}

/// Solver backing the subgradient path.
#[derive(Debug, Clone, Copy)]
pub enum SolverChoice {
    /// Family-exact combinatorial solver.
    Exact,
    /// Simplex on the LP relaxation.
    Relaxation,
    /// Solution cache that solves exactly with the given probability.
    Cached { solve_prob: f64 },
}

/// How gradients are obtained.
#[derive(Debug, Clone, Copy)]
pub enum GradPath {
    Subgradient(SolverChoice),
    ThroughLayer(DysConfig),
}

/// A loss kind paired with a gradient path.
#[derive(Debug, Clone, Copy)]
pub struct LossSpec {
    pub kind: LossKind,
    pub path: GradPath,
}

/// One loss evaluation.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub value: f64,
    /// Gradient with respect to the natural-sense prediction `ŷ`.
    pub grad: Vec<f64>,
    /// Exact regret of the induced decision when the evaluation computed it
    /// anyway; `NaN` otherwise (it is not free for every path).
    pub regret: f64,
    /// Solver or layer queries made by this evaluation.
    pub solve_calls: usize,
}

/// Reusable evaluation state for one problem/loss pair: the smoothed layer,
/// the solution cache, per-instance warm starts, and cached true optima.
///
/// Instances are identified by the caller-chosen `instance` index so that
/// warm starts and cached optima can be reused across epochs.
pub struct LossContext {
    problem: Problem,
    spec: LossSpec,
    std: StandardFormLP,
    layer: Option<DysLayer>,
    cache: Option<SolutionCache>,
    rng: ChaCha8Rng,
    warm: HashMap<usize, Vec<f64>>,
    /// instance → (optimal objective, fixed term of the optimal solution).
    true_opt: HashMap<usize, (f64, f64)>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn neg(a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| -x).collect()
}

impl LossContext {
    /// Builds the context, validating the kind/path combination.
    ///
    /// # Errors
    /// `Regret` and `SqDe` are piecewise constant along the subgradient
    /// path (their gradient is zero almost everywhere), so requesting them
    /// without the smoothed layer is an error.
    pub fn new(problem: &Problem, spec: LossSpec, seed: u64) -> Result<Self, Error> {
        let layer = match spec.path {
            GradPath::ThroughLayer(cfg) => Some(DysLayer::for_problem(problem, cfg)?),
            GradPath::Subgradient(_) => {
                if matches!(spec.kind, LossKind::Regret | LossKind::SqDe) {
                    return Err(Error::Loss(
                        "regret and squared decision error have no usable subgradient; \
                         use the through-layer path"
                            .into(),
                    ));
                }
                None
            }
        };
        let cache = match spec.path {
            GradPath::Subgradient(SolverChoice::Cached { solve_prob }) => {
                if !(0.0..=1.0).contains(&solve_prob) {
                    return Err(Error::Loss("cache solve probability must be in [0, 1]".into()));
                }
                Some(SolutionCache::new(solve_prob))
            }
            _ => None,
        };
        Ok(LossContext {
            problem: problem.clone(),
            spec,
            std: problem.standard_form(),
            layer,
            cache,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x6c6f7373), // "loss" substream
            warm: HashMap::new(),
            true_opt: HashMap::new(),
        })
    }

    pub fn spec(&self) -> &LossSpec {
        &self.spec
    }

    /// Optimal objective (and its fixed term) under the true cost, cached
    /// per instance. Families without fixed objective terms read it directly
    /// off the stored solution; facility location needs one exact solve.
    fn true_opt(&mut self, instance: usize, c: &[f64], w_star: &[f64]) -> Result<(f64, f64), Error> {
        if let Some(&v) = self.true_opt.get(&instance) {
            return Ok(v);
        }
        let v = if matches!(self.problem, Problem::Cfl { .. }) {
            let r = self.problem.solve_min(c)?;
            (r.objective, r.fixed_term)
        } else {
            (dot(c, w_star), 0.0)
        };
        self.true_opt.insert(instance, v);
        Ok(v)
    }

    fn solve(&mut self, choice: SolverChoice, c: &[f64]) -> Result<SolveResult, Error> {
        match choice {
            SolverChoice::Exact => self.problem.solve_min(c),
            SolverChoice::Relaxation => self.problem.relax_solve_min(c),
            SolverChoice::Cached { .. } => {
                let cache = self.cache.as_mut().expect("cache built in new()");
                cache.solve(&self.problem, c, &mut self.rng)
            }
        }
    }

    /// Evaluates the configured loss for one instance.
    ///
    /// `y` and `y_hat` are natural-sense cost/value vectors; `w_star` is the
    /// stored true optimum (effective decision). `instance` keys warm starts
    /// and cached optima.
    pub fn eval(
        &mut self,
        instance: usize,
        y: &[f64],
        y_hat: &[f64],
        w_star: &[f64],
    ) -> Result<LossEval, Error> {
        let k = self.problem.cost_dim();
        if y.len() != k || y_hat.len() != k || w_star.len() != k {
            return Err(Error::Loss(format!(
                "instance {instance}: expected vectors of length {k}"
            )));
        }
        let c = self.problem.min_cost(y);
        let c_hat = self.problem.min_cost(y_hat);
        let sign = self.problem.min_cost_sign();
        let mut out = match self.spec.path {
            GradPath::Subgradient(choice) => {
                self.eval_subgradient(instance, choice, &c, &c_hat, w_star)?
            }
            GradPath::ThroughLayer(_) => self.eval_through_layer(instance, &c, &c_hat, w_star)?,
        };
        if !out.value.is_finite() || out.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Loss(format!(
                "instance {instance}: non-finite loss or gradient"
            )));
        }
        if sign != 1.0 {
            for g in out.grad.iter_mut() {
                *g *= sign;
            }
        }
        Ok(out)
    }

    fn eval_subgradient(
        &mut self,
        instance: usize,
        choice: SolverChoice,
        c: &[f64],
        c_hat: &[f64],
        w_star: &[f64],
    ) -> Result<LossEval, Error> {
        let (z_star, _) = self.true_opt(instance, c, w_star)?;
        match self.spec.kind {
            LossKind::SpoPlus => {
                let tilted: Vec<f64> =
                    c_hat.iter().zip(c).map(|(ch, cc)| 2.0 * ch - cc).collect();
                let r = self.solve(choice, &tilted)?;
                let value = dot(&tilted, w_star) + (z_star - dot(c, w_star)) - r.objective;
                let grad: Vec<f64> =
                    w_star.iter().zip(&r.solution).map(|(ws, s)| 2.0 * (ws - s)).collect();
                Ok(LossEval { value, grad, regret: f64::NAN, solve_calls: 1 })
            }
            LossKind::SceYhat | LossKind::SceDiff => {
                let r = self.solve(choice, c_hat)?;
                let value = if self.spec.kind == LossKind::SceDiff {
                    dot(&sub(c_hat, c), &sub(w_star, &r.solution))
                } else {
                    (dot(c_hat, w_star) + (z_star - dot(c, w_star)))
                        - (dot(c_hat, &r.solution) + r.fixed_term)
                };
                let grad = sub(w_star, &r.solution);
                // The solve at c_hat makes the exact regret free here (for
                // the exact solver; cached/relaxed solutions still give the
                // regret of the decision actually taken).
                let regret = dot(c, &r.solution) + r.fixed_term - z_star;
                Ok(LossEval { value, grad, regret, solve_calls: 1 })
            }
            LossKind::Regret | LossKind::SqDe => unreachable!("rejected in new()"),
        }
    }

    fn eval_through_layer(
        &mut self,
        instance: usize,
        c: &[f64],
        c_hat: &[f64],
        w_star: &[f64],
    ) -> Result<LossEval, Error> {
        let (z_star, fixed_star) = self.true_opt(instance, c, w_star)?;
        let layer = self.layer.as_ref().expect("layer built in new()");
        let std = &self.std;
        let solve_at = |ctx_warm: Option<&[f64]>, cost_min: &[f64]| {
            let cost_std = self.problem.embed_std_cost(cost_min, std);
            layer.forward(&cost_std, ctx_warm).map(|r| (cost_std, r))
        };
        let warm = self.warm.get(&instance).cloned();
        match self.spec.kind {
            LossKind::Regret => {
                let (_, rec) = solve_at(warm.as_deref(), c_hat)?;
                let c_std = self.problem.embed_std_cost(c, std);
                let value = dot(&c_std, &rec.output) - z_star;
                let g_std = layer.vjp(&rec, &c_std)?;
                let grad = self.problem.extract_grad(&g_std, std);
                self.warm.insert(instance, rec.final_iterate);
                Ok(LossEval { value, grad, regret: value, solve_calls: 1 })
            }
            LossKind::SqDe => {
                let (_, rec) = solve_at(warm.as_deref(), c_hat)?;
                let d = self.problem.extract_solution(&rec.output, std);
                let diff = sub(&d, w_star);
                let value = dot(&diff, &diff);
                let up: Vec<f64> = diff.iter().map(|v| 2.0 * v).collect();
                let g_std = layer.vjp(&rec, &self.problem.embed_upstream(&up, std))?;
                let grad = self.problem.extract_grad(&g_std, std);
                self.warm.insert(instance, rec.final_iterate);
                Ok(LossEval { value, grad, regret: f64::NAN, solve_calls: 1 })
            }
            LossKind::SpoPlus => {
                let tilted: Vec<f64> =
                    c_hat.iter().zip(c).map(|(ch, cc)| 2.0 * ch - cc).collect();
                let (t_std, rec) = solve_at(warm.as_deref(), &tilted)?;
                let d = self.problem.extract_solution(&rec.output, std);
                let value = dot(&tilted, w_star) + fixed_star - dot(&t_std, &rec.output);
                let g_std = layer.vjp(&rec, &neg(&t_std))?;
                let jac_term = self.problem.extract_grad(&g_std, std);
                let grad: Vec<f64> = (0..w_star.len())
                    .map(|i| 2.0 * (w_star[i] - d[i]) + 2.0 * jac_term[i])
                    .collect();
                self.warm.insert(instance, rec.final_iterate);
                Ok(LossEval { value, grad, regret: f64::NAN, solve_calls: 1 })
            }
            LossKind::SceYhat | LossKind::SceDiff => {
                let (h_std, rec) = solve_at(warm.as_deref(), c_hat)?;
                let d = self.problem.extract_solution(&rec.output, std);
                let (value, upstream) = if self.spec.kind == LossKind::SceDiff {
                    let value = dot(&sub(c_hat, c), &sub(w_star, &d));
                    (value, self.problem.embed_upstream(&sub(c, c_hat), std))
                } else {
                    let value = dot(c_hat, w_star) + fixed_star - dot(&h_std, &rec.output);
                    (value, neg(&h_std))
                };
                let g_std = layer.vjp(&rec, &upstream)?;
                let jac_term = self.problem.extract_grad(&g_std, std);
                let grad: Vec<f64> =
                    (0..w_star.len()).map(|i| w_star[i] - d[i] + jac_term[i]).collect();
                self.warm.insert(instance, rec.final_iterate);
                Ok(LossEval { value, grad, regret: f64::NAN, solve_calls: 1 })
            }
        }
    }
}

/// Normalized relative regret of a prediction set over a test set:
/// `Σᵢ (obj(yᵢ, w(ŷᵢ)) - zᵢ⋆) / Σᵢ |zᵢ⋆|`, with both decisions computed by
/// the exact solver.
///
/// # Errors
/// Fails when the total optimal objective mass is (numerically) zero or any
/// solve fails.
pub fn normalized_regret(
    problem: &Problem,
    ys: &[Vec<f64>],
    y_hats: &[Vec<f64>],
) -> Result<f64, Error> {
    if ys.len() != y_hats.len() {
        return Err(Error::Loss("prediction/label count mismatch".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (y, y_hat) in ys.iter().zip(y_hats) {
        let c = problem.min_cost(y);
        let c_hat = problem.min_cost(y_hat);
        let star = problem.solve_min(&c)?;
        let taken = problem.solve_min(&c_hat)?;
        let z_taken = dot(&c, &taken.solution) + taken.fixed_term;
        num += z_taken - star.objective;
        den += star.objective.abs();
    }
    if den < 1e-12 {
        return Err(Error::Loss("normalized regret undefined: zero optimal objective mass".into()));
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn top2() -> Problem {
        Problem::top_k(2, 1).unwrap()
    }

    fn exact_spec(kind: LossKind) -> LossSpec {
        LossSpec { kind, path: GradPath::Subgradient(SolverChoice::Exact) }
    }

    #[test]
    fn regret_without_layer_is_rejected() {
        assert!(LossContext::new(&top2(), exact_spec(LossKind::Regret), 0).is_err());
        assert!(LossContext::new(&top2(), exact_spec(LossKind::SqDe), 0).is_err());
    }

    #[test]
    fn spo_plus_margin_threshold_on_two_items() {
        // True values (5, 10): the SPO+ subgradient vanishes exactly when
        // the predicted margin for item 2 reaches half the true gap, 2.5.
        let p = top2();
        let mut ctx = LossContext::new(&p, exact_spec(LossKind::SpoPlus), 0).unwrap();
        let y = [5.0, 10.0];
        let w_star = [0.0, 1.0];
        let e = ctx.eval(0, &y, &[7.0, 9.6], &w_star).unwrap(); // margin 2.6
        assert!(e.grad.iter().all(|g| g.abs() < 1e-12), "margin 2.6 should be safe");
        let e = ctx.eval(0, &y, &[7.0, 9.4], &w_star).unwrap(); // margin 2.4
        assert!(e.grad.iter().any(|g| g.abs() > 1e-9), "margin 2.4 should push");
        assert!(e.value > 0.0);
    }

    #[test]
    fn sce_vanishes_once_the_true_item_is_preferred() {
        let p = top2();
        let y = [5.0, 10.0];
        let w_star = [0.0, 1.0];
        for kind in [LossKind::SceYhat, LossKind::SceDiff] {
            let mut ctx = LossContext::new(&p, exact_spec(kind), 0).unwrap();
            let e = ctx.eval(0, &y, &[7.0, 7.1], &w_star).unwrap();
            assert!(e.grad.iter().all(|g| g.abs() < 1e-12), "{kind:?} margin 0.1");
            let e = ctx.eval(0, &y, &[7.1, 7.0], &w_star).unwrap();
            assert!(e.grad.iter().any(|g| g.abs() > 1e-9), "{kind:?} misranked");
        }
    }

    #[test]
    fn sce_variants_share_subgradients_but_not_values() {
        let p = top2();
        let y = [5.0, 10.0];
        let w_star = [0.0, 1.0];
        let mut a = LossContext::new(&p, exact_spec(LossKind::SceYhat), 0).unwrap();
        let mut b = LossContext::new(&p, exact_spec(LossKind::SceDiff), 0).unwrap();
        let ea = a.eval(0, &y, &[9.0, 3.0], &w_star).unwrap();
        let eb = b.eval(0, &y, &[9.0, 3.0], &w_star).unwrap();
        assert_eq!(ea.grad, eb.grad);
        assert!((ea.value - eb.value).abs() > 1e-9);
        assert!(ea.value >= -1e-12 && eb.value >= -1e-12);
    }

    #[test]
    fn spo_plus_dominates_regret_on_random_instances() {
        use rand::Rng;
        use rand::SeedableRng;
        let p = Problem::top_k(6, 1).unwrap();
        let mut ctx = LossContext::new(&p, exact_spec(LossKind::SpoPlus), 0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        for i in 0..50 {
            let y: Vec<f64> = (0..6).map(|_| rng.gen_range(1.0..10.0)).collect();
            let y_hat: Vec<f64> = (0..6).map(|_| rng.gen_range(1.0..10.0)).collect();
            let c = p.min_cost(&y);
            let w_star = p.solve_min(&c).unwrap().solution;
            let e = ctx.eval(i, &y, &y_hat, &w_star).unwrap();
            let taken = p.solve_min(&p.min_cost(&y_hat)).unwrap().solution;
            let regret = dot(&c, &taken) - dot(&c, &w_star);
            assert!(e.value >= regret - 1e-9, "SPO+ {} < regret {regret}", e.value);
        }
    }

    #[test]
    fn through_layer_regret_gradient_matches_toy_analysis() {
        // Toy problem, rho = 6, true cost 4: interior predictions see
        // gradient 4·(-1/6), saturated ones see zero.
        let p = Problem::toy_1d();
        let spec = LossSpec {
            kind: LossKind::Regret,
            path: GradPath::ThroughLayer(DysConfig::to_convergence(6.0)),
        };
        let mut ctx = LossContext::new(&p, spec, 0).unwrap();
        let e = ctx.eval(0, &[4.0], &[-3.0], &[0.0]).unwrap();
        assert!((e.grad[0] + 2.0 / 3.0).abs() < 1e-6, "interior grad {}", e.grad[0]);
        assert!((e.value - 2.0).abs() < 1e-6, "smoothed regret at w = 0.5");
        let e = ctx.eval(1, &[4.0], &[-9.0], &[0.0]).unwrap();
        assert_eq!(e.grad, vec![0.0], "plateau grad must vanish");
        assert!((e.value - 4.0).abs() < 1e-6);
    }

    #[test]
    fn through_layer_sce_stays_informative_on_the_plateau() {
        let p = Problem::toy_1d();
        let spec = LossSpec {
            kind: LossKind::SceDiff,
            path: GradPath::ThroughLayer(DysConfig::to_convergence(6.0)),
        };
        let mut ctx = LossContext::new(&p, spec, 0).unwrap();
        let e = ctx.eval(0, &[4.0], &[-9.0], &[0.0]).unwrap();
        assert!(e.grad[0].abs() > 1e-6, "SCE gradient must not vanish below -rho");
    }

    #[test]
    fn normalized_regret_is_zero_for_perfect_predictions() {
        let p = Problem::grid_sp(3).unwrap();
        let ys: Vec<Vec<f64>> = vec![(1..=12).map(|v| v as f64).collect(); 4];
        let r = normalized_regret(&p, &ys, &ys).unwrap();
        assert_eq!(r, 0.0);
        // A deliberately bad prediction has positive normalized regret.
        let bad: Vec<Vec<f64>> = ys.iter().map(|y| y.iter().rev().cloned().collect()).collect();
        let r = normalized_regret(&p, &ys, &bad).unwrap();
        assert!(r > 0.0);
    }
}
