//! Decision-problem families and their LP/MILP representations.
//!
//! A [`Problem`] bundles everything the losses and the training loop need to
//! know about one optimization family: the cost dimension, the objective
//! sense, an exact solver, an LP relaxation in standard form, and the
//! (usually trivial) maps between predicted costs and the standard-form
//! objective.
//!
//! All loss code works in *minimization* convention: maximization families
//! (knapsack, top-k selection) negate their costs at this module's boundary
//! via [`Problem::min_cost`], and solutions are reported as "effective
//! decisions" of the same dimension as the cost vector.
//!
//! Families:
//! * [`Problem::grid_sp`] — shortest path on a k×k grid with north/east
//!   moves; the LP relaxation is exact (totally unimodular constraints).
//! * [`Problem::knapsack`] — multi-dimensional 0/1 knapsack (value
//!   maximization).
//! * [`Problem::top_k`] — pick at most K of M items (top-1 is the layer's
//!   main analysis vehicle).
//! * [`Problem::cfl`] — capacitated facility location, a MILP with binary
//!   open/close decisions and continuous assignments.
//! * [`Problem::toy_1d`] — `min y·w` over `0 ≤ w ≤ 1`, the one-dimensional
//!   illustration problem.

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::solvers::{self, SolveResult};
use crate::Error;

/// Objective sense of a problem as stated in its natural form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Min,
    Max,
}

/// A linear (or mixed-integer linear) program without an objective.
///
/// Constraints are split into equalities `A_eq w = b_eq`, inequalities
/// `A_in w ≤ b_in`, optional per-variable upper bounds, and an integrality
/// mask. Variables are implicitly non-negative. The cost vector is supplied
/// at solve time.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub sense: Sense,
    pub eq_a: Matrix,
    pub eq_b: Vec<f64>,
    pub ineq_a: Matrix,
    pub ineq_b: Vec<f64>,
    /// `Some(u)` adds the row `w_i ≤ u` when converting to standard form.
    pub upper_bounds: Vec<Option<f64>>,
    pub integer: Vec<bool>,
}

/// Equality standard form `min cᵀw  s.t.  Aw = b, w ≥ 0`.
///
/// Columns `0..slack_offset` are the original variables; the rest are slacks
/// introduced for inequality rows and upper bounds. `cost_sign` is `-1.0`
/// when the source program maximizes, so that `cost_sign * cost` turns the
/// natural objective into the stored min-sense one.
#[derive(Debug, Clone)]
pub struct StandardFormLP {
    pub a: Matrix,
    pub b: Vec<f64>,
    pub num_original_vars: usize,
    pub slack_offset: usize,
    pub cost_sign: f64,
}

impl StandardFormLP {
    /// Total number of standard-form variables (originals plus slacks).
    pub fn num_vars(&self) -> usize {
        self.a.ncols()
    }

    /// Extends a natural-sense cost over the original variables to the full
    /// standard-form cost vector (slack costs are zero, max-sense costs are
    /// negated).
    pub fn extend_cost(&self, cost: &[f64]) -> Vec<f64> {
        assert_eq!(cost.len(), self.num_original_vars, "cost length mismatch");
        let mut full = vec![0.0; self.num_vars()];
        for (i, c) in cost.iter().enumerate() {
            full[i] = self.cost_sign * c;
        }
        full
    }
}

impl LinearProgram {
    /// Converts to equality standard form by appending one slack variable per
    /// inequality row and per finite upper bound.
    pub fn to_standard_form(&self) -> StandardFormLP {
        let n = self.num_vars;
        let n_ineq = self.ineq_a.nrows();
        let ub: Vec<(usize, f64)> = self
            .upper_bounds
            .iter()
            .enumerate()
            .filter_map(|(i, u)| u.map(|v| (i, v)))
            .collect();
        let total = n + n_ineq + ub.len();
        let mut a = Matrix::zeros(self.eq_a.nrows() + n_ineq + ub.len(), total);
        let mut b = Vec::with_capacity(a.nrows());
        let mut r = 0;
        for i in 0..self.eq_a.nrows() {
            for j in 0..n {
                a.set(r, j, self.eq_a.get(i, j));
            }
            b.push(self.eq_b[i]);
            r += 1;
        }
        for i in 0..n_ineq {
            for j in 0..n {
                a.set(r, j, self.ineq_a.get(i, j));
            }
            a.set(r, n + i, 1.0);
            b.push(self.ineq_b[i]);
            r += 1;
        }
        for (s, &(i, u)) in ub.iter().enumerate() {
            a.set(r, i, 1.0);
            a.set(r, n + n_ineq + s, 1.0);
            b.push(u);
            r += 1;
        }
        StandardFormLP {
            a,
            b,
            num_original_vars: n,
            slack_offset: n,
            cost_sign: if self.sense == Sense::Max { -1.0 } else { 1.0 },
        }
    }
}

/// A supported decision-problem family with its instance data.
///
/// Serializes to a compact self-describing record (JSON in dataset files,
/// TOML in CLI configs).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Problem {
    /// Shortest path on a `k × k` grid, southwest to northeast corner.
    GridSp { k: usize },
    /// Select at most `k` of `m` items to maximize total value.
    TopK { m: usize, k: usize },
    /// Multi-dimensional 0/1 knapsack; `weights[j][i]` is the weight of item
    /// `i` in dimension `j`.
    Knapsack { weights: Vec<Vec<f64>>, capacities: Vec<f64> },
    /// Capacitated facility location: serve every customer's demand from
    /// open facilities, paying per-unit transport plus fixed opening costs.
    Cfl { demands: Vec<f64>, capacities: Vec<f64>, fixed_costs: Vec<f64> },
    /// `min y·w` over `0 ≤ w ≤ 1`.
    Toy1d,
}

impl Problem {
    /// Grid shortest path on a `k × k` grid (`k ≥ 2`).
    pub fn grid_sp(k: usize) -> Result<Self, Error> {
        if k < 2 {
            return Err(Error::Problem("grid shortest path needs k >= 2".into()));
        }
        Ok(Problem::GridSp { k })
    }

    /// Top-K selection of `m` items (`1 ≤ k ≤ m`).
    pub fn top_k(m: usize, k: usize) -> Result<Self, Error> {
        if m == 0 || k == 0 || k > m {
            return Err(Error::Problem("top-k selection needs 1 <= k <= m".into()));
        }
        Ok(Problem::TopK { m, k })
    }

    /// Multi-dimensional knapsack with strictly positive weights and
    /// capacities.
    pub fn knapsack(weights: Vec<Vec<f64>>, capacities: Vec<f64>) -> Result<Self, Error> {
        if weights.is_empty() || weights.len() != capacities.len() {
            return Err(Error::Problem(
                "knapsack needs one weight row per capacity dimension".into(),
            ));
        }
        let n = weights[0].len();
        if n == 0 || weights.iter().any(|r| r.len() != n) {
            return Err(Error::Problem("knapsack weight rows must be equal, nonzero length".into()));
        }
        if weights.iter().flatten().any(|&w| !(w > 0.0)) || capacities.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::Problem("knapsack weights and capacities must be positive".into()));
        }
        Ok(Problem::Knapsack { weights, capacities })
    }

    /// Capacitated facility location. Requires enough total capacity to
    /// serve all demand.
    pub fn cfl(
        demands: Vec<f64>,
        capacities: Vec<f64>,
        fixed_costs: Vec<f64>,
    ) -> Result<Self, Error> {
        if demands.is_empty() || capacities.is_empty() || capacities.len() != fixed_costs.len() {
            return Err(Error::Problem(
                "facility location needs nonempty demands and matching capacity/fixed-cost lists"
                    .into(),
            ));
        }
        if demands.iter().any(|&d| !(d > 0.0)) || capacities.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::Problem("demands and capacities must be positive".into()));
        }
        let total_d: f64 = demands.iter().sum();
        let total_c: f64 = capacities.iter().sum();
        if total_c < total_d {
            return Err(Error::Problem(format!(
                "infeasible facility location: total capacity {total_c} < total demand {total_d}"
            )));
        }
        Ok(Problem::Cfl { demands, capacities, fixed_costs })
    }

    /// The one-dimensional illustration problem.
    pub fn toy_1d() -> Self {
        Problem::Toy1d
    }

    /// Dimension of the predicted cost vector.
    pub fn cost_dim(&self) -> usize {
        match self {
            Problem::GridSp { k } => 2 * k * (k - 1),
            Problem::TopK { m, .. } => *m,
            Problem::Knapsack { weights, .. } => weights[0].len(),
            Problem::Cfl { demands, capacities, .. } => demands.len() * capacities.len(),
            Problem::Toy1d => 1,
        }
    }

    /// Natural objective sense (costs for min families, values for max).
    pub fn sense(&self) -> Sense {
        match self {
            Problem::TopK { .. } | Problem::Knapsack { .. } => Sense::Max,
            _ => Sense::Min,
        }
    }

    /// Converts a natural-sense cost/value vector to minimization convention.
    pub fn min_cost(&self, y: &[f64]) -> Vec<f64> {
        match self.sense() {
            Sense::Min => y.to_vec(),
            Sense::Max => y.iter().map(|v| -v).collect(),
        }
    }

    /// Sign relating gradients in min convention to gradients with respect
    /// to the natural-sense prediction (`dL/dy = sign * dL/dc`).
    pub fn min_cost_sign(&self) -> f64 {
        match self.sense() {
            Sense::Min => 1.0,
            Sense::Max => -1.0,
        }
    }

    /// The MILP representation (integrality included, objective omitted).
    pub fn lp(&self) -> LinearProgram {
        match self {
            Problem::GridSp { k } => grid_sp_lp(*k),
            Problem::TopK { m, k } => {
                let mut ineq_a = Matrix::zeros(1, *m);
                for j in 0..*m {
                    ineq_a.set(0, j, 1.0);
                }
                // For k = 1 the budget row already implies w ≤ 1, so no
                // explicit upper-bound rows are added (keeps the standard
                // form at m + 1 variables).
                let upper = if *k > 1 { vec![Some(1.0); *m] } else { vec![None; *m] };
                LinearProgram {
                    num_vars: *m,
                    sense: Sense::Max,
                    eq_a: Matrix::zeros(0, *m),
                    eq_b: vec![],
                    ineq_a,
                    ineq_b: vec![*k as f64],
                    upper_bounds: upper,
                    integer: vec![true; *m],
                }
            }
            Problem::Knapsack { weights, capacities } => {
                let n = weights[0].len();
                let mut ineq_a = Matrix::zeros(weights.len(), n);
                for (j, row) in weights.iter().enumerate() {
                    for (i, w) in row.iter().enumerate() {
                        ineq_a.set(j, i, *w);
                    }
                }
                LinearProgram {
                    num_vars: n,
                    sense: Sense::Max,
                    eq_a: Matrix::zeros(0, n),
                    eq_b: vec![],
                    ineq_a,
                    ineq_b: capacities.clone(),
                    upper_bounds: vec![Some(1.0); n],
                    integer: vec![true; n],
                }
            }
            Problem::Cfl { demands, capacities, fixed_costs: _ } => {
                cfl_lp(demands, capacities)
            }
            Problem::Toy1d => LinearProgram {
                num_vars: 1,
                sense: Sense::Min,
                eq_a: Matrix::zeros(0, 1),
                eq_b: vec![],
                ineq_a: Matrix::zeros(0, 1),
                ineq_b: vec![],
                upper_bounds: vec![Some(1.0)],
                integer: vec![false],
            },
        }
    }

    /// Standard-form LP relaxation (integrality dropped).
    pub fn standard_form(&self) -> StandardFormLP {
        self.lp().to_standard_form()
    }

    /// Exact solve in minimization convention.
    ///
    /// `c` must already be in min convention (see [`Problem::min_cost`]).
    /// The returned `solution` is the effective decision of length
    /// [`Problem::cost_dim`]; `objective` includes any fixed cost terms
    /// (facility opening costs), and `fixed_term = objective - cᵀsolution`.
    pub fn solve_min(&self, c: &[f64]) -> Result<SolveResult, Error> {
        if c.len() != self.cost_dim() {
            return Err(Error::Problem(format!(
                "cost vector length {} does not match problem dimension {}",
                c.len(),
                self.cost_dim()
            )));
        }
        match self {
            Problem::GridSp { k } => Ok(solvers::dag_sp_solve(*k, c)),
            Problem::TopK { m, k } => {
                let values: Vec<f64> = c.iter().map(|v| -v).collect();
                Ok(negate_objective(solvers::topk_solve(*m, *k, &values)))
            }
            Problem::Knapsack { weights, capacities } => {
                let values: Vec<f64> = c.iter().map(|v| -v).collect();
                Ok(negate_objective(solvers::knapsack_bb(weights, capacities, &values)))
            }
            Problem::Cfl { demands, capacities, fixed_costs } => {
                solvers::cfl_solve(demands, capacities, fixed_costs, c)
            }
            Problem::Toy1d => {
                let w = if c[0] < 0.0 { 1.0 } else { 0.0 };
                Ok(SolveResult {
                    solution: vec![w],
                    objective: c[0] * w,
                    status: solvers::SolveStatus::Optimal,
                    iterations: 0,
                    fixed_term: 0.0,
                })
            }
        }
    }

    /// LP-relaxation solve in minimization convention (simplex on the
    /// standard form). The returned solution is the effective decision
    /// restricted to cost coordinates; its objective includes fixed terms.
    pub fn relax_solve_min(&self, c: &[f64]) -> Result<SolveResult, Error> {
        let std = self.standard_form();
        let cost_std = self.embed_std_cost(c, &std);
        let res = solvers::simplex_solve(&std, &cost_std)?;
        let d = self.extract_solution(&res.solution, &std);
        let obj = dot(&cost_std, &res.solution);
        let fixed = obj - dot(c, &d);
        Ok(SolveResult {
            solution: d,
            objective: obj,
            status: res.status,
            iterations: res.iterations,
            fixed_term: fixed,
        })
    }

    /// Maps a min-convention cost vector to the full standard-form cost,
    /// including fixed objective coefficients (facility opening costs).
    pub fn embed_std_cost(&self, c: &[f64], std: &StandardFormLP) -> Vec<f64> {
        let mut full = self.embed_upstream(c, std);
        if let Problem::Cfl { demands, capacities, fixed_costs } = self {
            let base = demands.len() * capacities.len();
            for (f, fc) in fixed_costs.iter().enumerate() {
                full[base + f] += fc;
            }
        }
        full
    }

    /// Linear part of [`Problem::embed_std_cost`]: the adjoint of
    /// [`Problem::extract_solution`]. Used to push loss upstream vectors
    /// from cost space into standard-form variable space.
    pub fn embed_upstream(&self, v: &[f64], std: &StandardFormLP) -> Vec<f64> {
        assert_eq!(v.len(), self.cost_dim());
        let mut full = vec![0.0; std.num_vars()];
        match self {
            Problem::Cfl { demands, capacities, .. } => {
                let nf = capacities.len();
                for c in 0..demands.len() {
                    for f in 0..nf {
                        full[c * nf + f] = demands[c] * v[c * nf + f];
                    }
                }
            }
            _ => {
                full[..v.len()].copy_from_slice(v);
            }
        }
        full
    }

    /// Extracts the effective decision (length `cost_dim`) from a
    /// standard-form point: assignment fractions are scaled by demand for
    /// facility location, all other families just truncate the slacks.
    pub fn extract_solution(&self, w_std: &[f64], std: &StandardFormLP) -> Vec<f64> {
        assert_eq!(w_std.len(), std.num_vars());
        match self {
            Problem::Cfl { demands, capacities, .. } => {
                let nf = capacities.len();
                let mut d = vec![0.0; self.cost_dim()];
                for c in 0..demands.len() {
                    for f in 0..nf {
                        d[c * nf + f] = demands[c] * w_std[c * nf + f];
                    }
                }
                d
            }
            _ => w_std[..self.cost_dim()].to_vec(),
        }
    }

    /// Adjoint of [`Problem::embed_upstream`]: pulls a standard-form
    /// gradient back to cost space.
    pub fn extract_grad(&self, g_std: &[f64], std: &StandardFormLP) -> Vec<f64> {
        // embed_upstream is a diagonal-scaling embedding, so the adjoint is
        // the same scaling applied to the relevant coordinates.
        self.extract_solution(g_std, std)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn negate_objective(mut r: SolveResult) -> SolveResult {
    r.objective = -r.objective;
    r.fixed_term = -r.fixed_term;
    r
}

/// Index of the east-going edge leaving grid node `(row, col)`.
///
/// Rows count northward from the southwest corner, columns eastward. East
/// edges come first in the cost vector (row-major), then north edges.
pub fn grid_east_edge(k: usize, row: usize, col: usize) -> usize {
    debug_assert!(col + 1 < k);
    row * (k - 1) + col
}

/// Index of the north-going edge leaving grid node `(row, col)`.
pub fn grid_north_edge(k: usize, row: usize, col: usize) -> usize {
    debug_assert!(row + 1 < k);
    k * (k - 1) + row * k + col
}

fn grid_sp_lp(k: usize) -> LinearProgram {
    let num_edges = 2 * k * (k - 1);
    let num_nodes = k * k;
    let mut eq_a = Matrix::zeros(num_nodes, num_edges);
    let node = |row: usize, col: usize| row * k + col;
    for row in 0..k {
        for col in 0..k {
            if col + 1 < k {
                let e = grid_east_edge(k, row, col);
                eq_a.set(node(row, col), e, 1.0);
                eq_a.set(node(row, col + 1), e, -1.0);
            }
            if row + 1 < k {
                let e = grid_north_edge(k, row, col);
                eq_a.set(node(row, col), e, 1.0);
                eq_a.set(node(row + 1, col), e, -1.0);
            }
        }
    }
    let mut eq_b = vec![0.0; num_nodes];
    eq_b[node(0, 0)] = 1.0;
    eq_b[node(k - 1, k - 1)] = -1.0;
    LinearProgram {
        num_vars: num_edges,
        sense: Sense::Min,
        eq_a,
        eq_b,
        ineq_a: Matrix::zeros(0, num_edges),
        ineq_b: vec![],
        upper_bounds: vec![None; num_edges],
        integer: vec![false; num_edges],
    }
}

fn cfl_lp(demands: &[f64], capacities: &[f64]) -> LinearProgram {
    let nc = demands.len();
    let nf = capacities.len();
    let n = nc * nf + nf; // assignment fractions then open indicators
    let mut eq_a = Matrix::zeros(nc, n);
    for c in 0..nc {
        for f in 0..nf {
            eq_a.set(c, c * nf + f, 1.0);
        }
    }
    let mut ineq_a = Matrix::zeros(nf, n);
    for f in 0..nf {
        for c in 0..nc {
            ineq_a.set(f, c * nf + f, demands[c]);
        }
        ineq_a.set(f, nc * nf + f, -capacities[f]);
    }
    let mut upper = vec![None; n];
    let mut integer = vec![false; n];
    for f in 0..nf {
        upper[nc * nf + f] = Some(1.0);
        integer[nc * nf + f] = true;
    }
    LinearProgram {
        num_vars: n,
        sense: Sense::Min,
        eq_a,
        eq_b: vec![1.0; nc],
        ineq_a,
        ineq_b: vec![0.0; nf],
        upper_bounds: upper,
        integer,
    }
}

/// Configuration for sampling random knapsack instances.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct KnapsackGen {
    pub items: usize,
    pub dims: usize,
    /// Integer weights are drawn uniformly from `weight_lo..=weight_hi`.
    pub weight_lo: u32,
    pub weight_hi: u32,
    /// Each capacity is `cap_fraction` times that dimension's total weight.
    pub cap_fraction: f64,
}

impl Default for KnapsackGen {
    fn default() -> Self {
        KnapsackGen { items: 20, dims: 2, weight_lo: 3, weight_hi: 8, cap_fraction: 0.5 }
    }
}

impl KnapsackGen {
    /// Samples an instance with the given RNG.
    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Result<Problem, Error> {
        let mut weights = Vec::with_capacity(self.dims);
        for _ in 0..self.dims {
            let row: Vec<f64> =
                (0..self.items).map(|_| rng.gen_range(self.weight_lo..=self.weight_hi) as f64).collect();
            weights.push(row);
        }
        let capacities: Vec<f64> =
            weights.iter().map(|row| self.cap_fraction * row.iter().sum::<f64>()).collect();
        Problem::knapsack(weights, capacities)
    }
}

/// Configuration for sampling random facility-location instances.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CflGen {
    pub customers: usize,
    pub facilities: usize,
    /// Demands are uniform on `[demand_lo, demand_hi]`.
    pub demand_lo: f64,
    pub demand_hi: f64,
    /// Total capacity is `cap_scale` times total demand, split evenly with
    /// uniform ±25 % jitter per facility.
    pub cap_scale: f64,
    /// Fixed opening costs are uniform on `[fixed_lo, fixed_hi]`.
    pub fixed_lo: f64,
    pub fixed_hi: f64,
}

impl Default for CflGen {
    fn default() -> Self {
        CflGen {
            customers: 10,
            facilities: 3,
            demand_lo: 5.0,
            demand_hi: 10.0,
            cap_scale: 2.0,
            fixed_lo: 50.0,
            fixed_hi: 100.0,
        }
    }
}

impl CflGen {
    /// Samples an instance with the given RNG.
    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Result<Problem, Error> {
        let demands: Vec<f64> =
            (0..self.customers).map(|_| rng.gen_range(self.demand_lo..self.demand_hi)).collect();
        let total: f64 = demands.iter().sum();
        let mean_cap = self.cap_scale * total / self.facilities as f64;
        let capacities: Vec<f64> =
            (0..self.facilities).map(|_| mean_cap * rng.gen_range(0.75..1.25)).collect();
        let fixed_costs: Vec<f64> =
            (0..self.facilities).map(|_| rng.gen_range(self.fixed_lo..self.fixed_hi)).collect();
        Problem::cfl(demands, capacities, fixed_costs)
    }
}
