//! Exact (non-differentiable) solvers for the supported problem families.
//!
//! Each family gets a specialised combinatorial routine — dynamic programming
//! for grid shortest paths, depth-first branch and bound for knapsack,
//! sorting for top-k, open-set enumeration for facility location — plus a
//! generic two-phase [`simplex_solve`] and a generic [`milp_solve`] branch
//! and bound that serve as mutual cross-checks.
//!
//! Everything is deterministic: ties break lowest-index-first throughout, so
//! repeated runs are bit-identical.

mod simplex;

pub use simplex::simplex_solve;

use crate::problems::{LinearProgram, Problem, StandardFormLP};
use crate::Error;

/// Outcome classification of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Result of a solve.
///
/// For family-level solves (`Problem::solve_min`) `solution` is the
/// effective decision of cost dimension and `objective` the full objective
/// including fixed terms, with `fixed_term = objective - costᵀsolution`.
/// For raw `simplex_solve` calls `solution` covers all standard-form
/// variables and `fixed_term` is zero.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub solution: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub fixed_term: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Shortest path on a `k × k` grid (north/east moves only) by dynamic
/// programming over the DAG, in minimization convention.
///
/// Returns the 0/1 edge-indicator vector of the optimal monotone path from
/// the southwest to the northeast corner. Ties prefer the east edge (the
/// lower edge index).
///
/// # Example
/// ```
/// // 2×2 grid, edges [east0, east1, north0, north1]; going east first is
/// // cheaper: path east (cost 1) then north (cost 1).
/// let r = dfl::solvers::dag_sp_solve(2, &[1.0, 5.0, 5.0, 1.0]);
/// assert_eq!(r.solution, vec![1.0, 0.0, 0.0, 1.0]);
/// assert_eq!(r.objective, 2.0);
/// ```
pub fn dag_sp_solve(k: usize, cost: &[f64]) -> SolveResult {
    use crate::problems::{grid_east_edge, grid_north_edge};
    assert_eq!(cost.len(), 2 * k * (k - 1), "grid cost length mismatch");
    let node = |r: usize, c: usize| r * k + c;
    let mut dist = vec![f64::INFINITY; k * k];
    // Incoming edge chosen for each node, as (edge index, predecessor node).
    let mut pred: Vec<Option<(usize, usize)>> = vec![None; k * k];
    dist[0] = 0.0;
    for r in 0..k {
        for c in 0..k {
            if r == 0 && c == 0 {
                continue;
            }
            // East edge into (r, c) comes from (r, c-1); it has the lower
            // edge index, so trying it first implements lowest-index ties.
            if c > 0 {
                let e = grid_east_edge(k, r, c - 1);
                let d = dist[node(r, c - 1)] + cost[e];
                if d < dist[node(r, c)] {
                    dist[node(r, c)] = d;
                    pred[node(r, c)] = Some((e, node(r, c - 1)));
                }
            }
            if r > 0 {
                let e = grid_north_edge(k, r - 1, c);
                let d = dist[node(r - 1, c)] + cost[e];
                if d < dist[node(r, c)] {
                    dist[node(r, c)] = d;
                    pred[node(r, c)] = Some((e, node(r - 1, c)));
                }
            }
        }
    }
    let mut sol = vec![0.0; cost.len()];
    let mut cur = node(k - 1, k - 1);
    while let Some((e, p)) = pred[cur] {
        sol[e] = 1.0;
        cur = p;
    }
    SolveResult {
        solution: sol,
        objective: dist[node(k - 1, k - 1)],
        status: SolveStatus::Optimal,
        iterations: k * k,
        fixed_term: 0.0,
    }
}

/// Selects at most `k` of `m` items to maximize total value.
///
/// Items with non-positive value are never selected; ties between equal
/// values go to the lower index.
pub fn topk_solve(m: usize, k: usize, values: &[f64]) -> SolveResult {
    assert_eq!(values.len(), m, "top-k value length mismatch");
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    let mut sol = vec![0.0; m];
    let mut obj = 0.0;
    for &i in idx.iter().take(k) {
        if values[i] > 0.0 {
            sol[i] = 1.0;
            obj += values[i];
        }
    }
    SolveResult { solution: sol, objective: obj, status: SolveStatus::Optimal, iterations: m, fixed_term: 0.0 }
}

/// Exact maximizer of `yᵀw - (rho/2)‖w‖²` over the capped simplex
/// `{w ≥ 0, Σw ≤ 1}`, by water-filling on the KKT conditions.
///
/// This is the analytic oracle for the smoothed top-1 problem: the
/// unconstrained solution `max{y, 0}/rho` is kept when its mass fits the
/// budget; otherwise the multiplier `λ` of the budget constraint is found by
/// scanning support sizes of the sorted values and `w_i = max{(y_i - λ), 0}/rho`.
///
/// # Example
/// ```
/// let w = dfl::solvers::top1_qp_exact(&[3.0, 2.0, 1.0], 2.0);
/// assert!((w[0] - 0.75).abs() < 1e-12);
/// assert!((w[1] - 0.25).abs() < 1e-12);
/// assert_eq!(w[2], 0.0);
/// ```
pub fn top1_qp_exact(values: &[f64], rho: f64) -> Vec<f64> {
    assert!(rho > 0.0, "top1_qp_exact needs rho > 0");
    let unconstrained: Vec<f64> = values.iter().map(|&y| y.max(0.0) / rho).collect();
    if unconstrained.iter().sum::<f64>() <= 1.0 {
        return unconstrained;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut prefix = 0.0;
    for t in 1..=sorted.len() {
        prefix += sorted[t - 1];
        let lambda = (prefix - rho) / t as f64;
        let in_support = sorted[t - 1] - lambda > 0.0;
        let next_out = t == sorted.len() || sorted[t] - lambda <= 0.0;
        if in_support && next_out {
            return values.iter().map(|&y| ((y - lambda) / rho).max(0.0)).collect();
        }
    }
    unreachable!("water-filling always finds a support when the budget binds");
}

/// Multi-dimensional 0/1 knapsack by depth-first branch and bound
/// (maximization).
///
/// The upper bound at each node is the fractional greedy bound on the
/// surrogate single-dimension knapsack obtained by aggregating every weight
/// dimension, normalised by its capacity (a valid relaxation of the
/// original). Items are explored in index order, include-branch first, and
/// only strict improvements replace the incumbent, so among ties the
/// lexicographically largest inclusion vector wins (lowest-index
/// preference).
pub fn knapsack_bb(weights: &[Vec<f64>], capacities: &[f64], values: &[f64]) -> SolveResult {
    let n = values.len();
    let dims = weights.len();
    // Aggregated unit weights for the surrogate bound: any feasible plan has
    // Σ_i (Σ_j w_ji / C_j) x_i ≤ dims.
    let agg: Vec<f64> = (0..n)
        .map(|i| (0..dims).map(|j| weights[j][i] / capacities[j]).sum::<f64>())
        .collect();
    let mut density_order: Vec<usize> = (0..n).filter(|&i| values[i] > 0.0).collect();
    density_order.sort_by(|&a, &b| {
        let da = values[a] / agg[a].max(1e-12);
        let db = values[b] / agg[b].max(1e-12);
        db.partial_cmp(&da).unwrap().then(a.cmp(&b))
    });

    struct Search<'a> {
        weights: &'a [Vec<f64>],
        capacities: &'a [f64],
        values: &'a [f64],
        agg: &'a [f64],
        density_order: &'a [usize],
        dims: usize,
        best_value: f64,
        best_set: Vec<bool>,
        nodes: usize,
    }

    impl Search<'_> {
        /// Fractional greedy bound over items not yet decided (index ≥ i).
        fn bound(&self, next: usize, budget: f64) -> f64 {
            let mut b = 0.0;
            let mut left = budget;
            for &i in self.density_order {
                if i < next || left <= 0.0 {
                    if left <= 0.0 {
                        break;
                    }
                    continue;
                }
                if self.agg[i] <= left {
                    b += self.values[i];
                    left -= self.agg[i];
                } else {
                    b += self.values[i] * left / self.agg[i];
                    break;
                }
            }
            b
        }

        fn dfs(&mut self, i: usize, value: f64, used: &mut [f64], chosen: &mut Vec<bool>) {
            self.nodes += 1;
            if value > self.best_value + 1e-12 {
                self.best_value = value;
                self.best_set = chosen.clone();
                // Pad to full length for partial prefixes.
                self.best_set.resize(self.values.len(), false);
            }
            if i == self.values.len() {
                return;
            }
            let budget = self.dims as f64
                - (0..self.dims).map(|j| used[j] / self.capacities[j]).sum::<f64>();
            if value + self.bound(i, budget) <= self.best_value + 1e-12 {
                return;
            }
            // Include branch first (when feasible and worthwhile).
            let fits = (0..self.dims)
                .all(|j| used[j] + self.weights[j][i] <= self.capacities[j] + 1e-9);
            if fits && self.values[i] > 0.0 {
                for j in 0..self.dims {
                    used[j] += self.weights[j][i];
                }
                chosen.push(true);
                self.dfs(i + 1, value + self.values[i], used, chosen);
                chosen.pop();
                for j in 0..self.dims {
                    used[j] -= self.weights[j][i];
                }
            }
            chosen.push(false);
            self.dfs(i + 1, value, used, chosen);
            chosen.pop();
        }
    }

    let mut search = Search {
        weights,
        capacities,
        values,
        agg: &agg,
        density_order: &density_order,
        dims,
        best_value: 0.0,
        best_set: vec![false; n],
        nodes: 0,
    };
    let mut used = vec![0.0; dims];
    search.dfs(0, 0.0, &mut used, &mut Vec::new());
    let sol: Vec<f64> = search.best_set.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    SolveResult {
        objective: search.best_value,
        status: SolveStatus::Optimal,
        iterations: search.nodes,
        fixed_term: 0.0,
        solution: sol,
    }
}

/// Capacitated facility location, solved exactly by enumerating open-set
/// subsets and pricing each with a transportation LP.
///
/// `transport` holds the per-unit transport costs `y[c * F + f]` (min
/// convention). The returned effective decision is demand-scaled assignment
/// mass per customer–facility pair; opening costs land in `fixed_term`.
pub fn cfl_solve(
    demands: &[f64],
    capacities: &[f64],
    fixed_costs: &[f64],
    transport: &[f64],
) -> Result<SolveResult, Error> {
    let nc = demands.len();
    let nf = capacities.len();
    let total_demand: f64 = demands.iter().sum();
    let mut best: Option<(f64, Vec<f64>, f64, usize)> = None; // (obj, assignment, fixed, iters)
    for mask in 1u32..(1 << nf) {
        let open: Vec<usize> = (0..nf).filter(|f| mask & (1 << f) != 0).collect();
        let cap: f64 = open.iter().map(|&f| capacities[f]).sum();
        if cap + 1e-9 < total_demand {
            continue;
        }
        // No fixed-cost pruning here: tilted SPO+ costs can be negative, so
        // a subset with larger opening cost may still win on transport.
        let fixed: f64 = open.iter().map(|&f| fixed_costs[f]).sum();
        let (obj_t, x, iters) = transportation(demands, capacities, transport, &open)?;
        let obj = obj_t + fixed;
        if best.as_ref().map_or(true, |(b, ..)| obj < *b - 1e-9) {
            best = Some((obj, x, fixed, iters));
        }
    }
    let (objective, x, fixed_term, iterations) =
        best.ok_or_else(|| Error::Solver("facility location: no feasible open set".into()))?;
    let mut solution = vec![0.0; nc * nf];
    for c in 0..nc {
        for f in 0..nf {
            solution[c * nf + f] = demands[c] * x[c * nf + f];
        }
    }
    Ok(SolveResult { solution, objective, status: SolveStatus::Optimal, iterations, fixed_term })
}

/// Prices one open set: `min Σ D_c y_cf x_cf` subject to full assignment and
/// facility capacities. Returns the objective, the full `nc × nf` assignment
/// fraction matrix (closed facilities zero), and pivot count.
fn transportation(
    demands: &[f64],
    capacities: &[f64],
    transport: &[f64],
    open: &[usize],
) -> Result<(f64, Vec<f64>, usize), Error> {
    use crate::linalg::Matrix;
    let nc = demands.len();
    let nf = capacities.len();
    let no = open.len();
    let nvars = nc * no + no; // assignment vars then capacity slacks
    let mut a = Matrix::zeros(nc + no, nvars);
    let mut b = vec![0.0; nc + no];
    for c in 0..nc {
        for (oi, _) in open.iter().enumerate() {
            a.set(c, c * no + oi, 1.0);
        }
        b[c] = 1.0;
    }
    for (oi, &f) in open.iter().enumerate() {
        for c in 0..nc {
            a.set(nc + oi, c * no + oi, demands[c]);
        }
        a.set(nc + oi, nc * no + oi, 1.0);
        b[nc + oi] = capacities[f];
    }
    let std = StandardFormLP { a, b, num_original_vars: nc * no, slack_offset: nc * no, cost_sign: 1.0 };
    let mut cost = vec![0.0; nvars];
    for c in 0..nc {
        for (oi, &f) in open.iter().enumerate() {
            cost[c * no + oi] = demands[c] * transport[c * nf + f];
        }
    }
    let r = simplex_solve(&std, &cost)?;
    if r.status != SolveStatus::Optimal {
        return Err(Error::Solver("transportation subproblem not optimal".into()));
    }
    let mut x = vec![0.0; nc * nf];
    for c in 0..nc {
        for (oi, &f) in open.iter().enumerate() {
            x[c * nf + f] = r.solution[c * no + oi];
        }
    }
    Ok((r.objective, x, r.iterations))
}

/// Generic branch and bound for small binary MILPs, in minimization
/// convention over the program's own variables.
///
/// Branches on the lowest-index fractional integer variable (zero branch
/// first) and bounds with the simplex LP relaxation. Intended as an
/// independent cross-check for the specialised solvers; keep instances small
/// (≲ 25 binary variables).
pub fn milp_solve(lp: &LinearProgram, cost_min: &[f64]) -> Result<SolveResult, Error> {
    assert_eq!(cost_min.len(), lp.num_vars, "milp cost length mismatch");
    for (i, &int) in lp.integer.iter().enumerate() {
        if int && lp.upper_bounds[i].map_or(true, |u| u > 1.0 + 1e-9) {
            // All integer variables we generate are binary; general bounds
            // would need interval branching.
            let implied_binary = matches!(
                (0..lp.ineq_a.nrows()).find(|&r| lp.ineq_a.get(r, i) >= 1.0 && lp.ineq_b[r] <= 1.0),
                Some(_)
            );
            if !implied_binary {
                return Err(Error::Solver(format!(
                    "milp_solve supports binary integer variables only (variable {i})"
                )));
            }
        }
    }

    struct Bb<'a> {
        lp: &'a LinearProgram,
        cost: &'a [f64],
        best: Option<(f64, Vec<f64>)>,
        nodes: usize,
    }

    impl Bb<'_> {
        fn relax(&mut self, fixed: &[Option<f64>]) -> Result<Option<(f64, Vec<f64>)>, Error> {
            self.nodes += 1;
            // Substitute fixed variables into the constraint system.
            let free: Vec<usize> =
                (0..self.lp.num_vars).filter(|&i| fixed[i].is_none()).collect();
            let fval = |i: usize| fixed[i].unwrap_or(0.0);
            let mut constant = 0.0;
            for i in 0..self.lp.num_vars {
                constant += self.cost[i] * fval(i);
            }
            let sub_lp = LinearProgram {
                num_vars: free.len(),
                sense: crate::problems::Sense::Min,
                eq_a: submatrix(&self.lp.eq_a, &free),
                eq_b: (0..self.lp.eq_a.nrows())
                    .map(|r| {
                        self.lp.eq_b[r]
                            - (0..self.lp.num_vars)
                                .map(|i| self.lp.eq_a.get(r, i) * fval(i))
                                .sum::<f64>()
                    })
                    .collect(),
                ineq_a: submatrix(&self.lp.ineq_a, &free),
                ineq_b: (0..self.lp.ineq_a.nrows())
                    .map(|r| {
                        self.lp.ineq_b[r]
                            - (0..self.lp.num_vars)
                                .map(|i| self.lp.ineq_a.get(r, i) * fval(i))
                                .sum::<f64>()
                    })
                    .collect(),
                upper_bounds: free.iter().map(|&i| self.lp.upper_bounds[i]).collect(),
                integer: free.iter().map(|&i| self.lp.integer[i]).collect(),
            };
            let std = sub_lp.to_standard_form();
            let cost_free: Vec<f64> = free.iter().map(|&i| self.cost[i]).collect();
            let r = simplex_solve(&std, &std.extend_cost(&cost_free))?;
            if r.status != SolveStatus::Optimal {
                return Ok(None);
            }
            let mut full = vec![0.0; self.lp.num_vars];
            for i in 0..self.lp.num_vars {
                full[i] = fval(i);
            }
            for (fi, &i) in free.iter().enumerate() {
                full[i] = r.solution[fi];
            }
            Ok(Some((r.objective + constant, full)))
        }

        fn dfs(&mut self, fixed: &mut Vec<Option<f64>>) -> Result<(), Error> {
            let Some((obj, sol)) = self.relax(fixed)? else { return Ok(()) };
            if let Some((best, _)) = &self.best {
                if obj >= *best - 1e-9 {
                    return Ok(());
                }
            }
            let frac = (0..self.lp.num_vars).find(|&i| {
                self.lp.integer[i]
                    && fixed[i].is_none()
                    && (sol[i] - sol[i].round()).abs() > 1e-6
            });
            match frac {
                None => {
                    // Integral (or continuous-only) solution: snap and keep.
                    let snapped: Vec<f64> = (0..self.lp.num_vars)
                        .map(|i| if self.lp.integer[i] { sol[i].round() } else { sol[i] })
                        .collect();
                    self.best = Some((obj, snapped));
                }
                Some(i) => {
                    for v in [0.0, 1.0] {
                        fixed[i] = Some(v);
                        self.dfs(fixed)?;
                    }
                    fixed[i] = None;
                }
            }
            Ok(())
        }
    }

    let mut bb = Bb { lp, cost: cost_min, best: None, nodes: 0 };
    let mut fixed = vec![None; lp.num_vars];
    bb.dfs(&mut fixed)?;
    let (objective, solution) =
        bb.best.ok_or_else(|| Error::Solver("milp: no feasible solution".into()))?;
    Ok(SolveResult {
        solution,
        objective,
        status: SolveStatus::Optimal,
        iterations: bb.nodes,
        fixed_term: 0.0,
    })
}

fn submatrix(a: &crate::linalg::Matrix, cols: &[usize]) -> crate::linalg::Matrix {
    let rows: Vec<Vec<f64>> =
        (0..a.nrows()).map(|r| cols.iter().map(|&c| a.get(r, c)).collect()).collect();
    if rows.is_empty() {
        crate::linalg::Matrix::zeros(0, cols.len())
    } else {
        crate::linalg::Matrix::from_rows(&rows)
    }
}

/// A pool of previously seen solutions that can stand in for the exact
/// solver during training ("solution caching").
///
/// With probability `solve_prob` a call solves exactly and adds the result
/// to the pool; otherwise it returns the pool entry with the best objective
/// under the query cost (lowest index on ties). The pool stores effective
/// decisions together with their fixed objective terms so facility-location
/// objectives stay comparable.
#[derive(Debug, Clone)]
pub struct SolutionCache {
    pub solve_prob: f64,
    pool: Vec<(Vec<f64>, f64)>,
}

impl SolutionCache {
    /// Creates an empty cache.
    ///
    /// # Panics
    /// Panics unless `0 ≤ solve_prob ≤ 1`.
    pub fn new(solve_prob: f64) -> Self {
        assert!((0.0..=1.0).contains(&solve_prob), "solve_prob must be in [0, 1]");
        SolutionCache { solve_prob, pool: Vec::new() }
    }

    /// Number of distinct cached solutions.
    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }

    /// Adds a solution (with its fixed objective term) if not already
    /// present.
    pub fn insert(&mut self, solution: Vec<f64>, fixed_term: f64) {
        let dup = self.pool.iter().any(|(s, _)| {
            s.len() == solution.len()
                && s.iter().zip(&solution).all(|(a, b)| (a - b).abs() <= 1e-9)
        });
        if !dup {
            self.pool.push((solution, fixed_term));
        }
    }

    /// Solves `min cᵀw` approximately through the cache (see type docs).
    pub fn solve<R: rand::Rng>(
        &mut self,
        problem: &Problem,
        c: &[f64],
        rng: &mut R,
    ) -> Result<SolveResult, Error> {
        let exact = self.pool.is_empty() || rng.gen::<f64>() < self.solve_prob;
        if exact {
            let r = problem.solve_min(c)?;
            self.insert(r.solution.clone(), r.fixed_term);
            return Ok(r);
        }
        let mut best = 0;
        let mut best_obj = f64::INFINITY;
        for (i, (s, fixed)) in self.pool.iter().enumerate() {
            let obj = dot(c, s) + fixed;
            if obj < best_obj - 1e-12 {
                best_obj = obj;
                best = i;
            }
        }
        let (s, fixed) = &self.pool[best];
        Ok(SolveResult {
            solution: s.clone(),
            objective: best_obj,
            status: SolveStatus::Optimal,
            iterations: 0,
            fixed_term: *fixed,
        })
    }
}
