//! Synthetic feature/cost dataset generation for predict-then-optimize
//! experiments.
//!
//! Each instance draws a feature vector `ψ ~ N(0, I_p)` and produces the
//! cost vector
//!
//! ```text
//! y_j = [ (1/3.5^deg) · max{ (1/√p)(Bψ)_j + 3, 0 }^deg + 1 ] · ξ_j
//! ```
//!
//! where `B` is a fixed `K × p` coefficient matrix (Bernoulli(0.5) entries
//! by default, standard Gaussian optionally) shared by all instances, `deg`
//! controls how non-linear the ground truth is, and `ξ_j ~ U[1-w, 1+w]` is
//! multiplicative noise. Costs are therefore always non-negative; for
//! maximization families they are interpreted as item values.
//!
//! # Determinism
//! All sampling uses the ChaCha8 counter-based generator with named
//! substreams derived from the dataset seed: stream `0` draws `B`, stream
//! `2i + 1` draws instance `i`'s features, stream `2i + 2` its noise.
//! Generation is therefore reproducible cross-platform and independent of
//! instance evaluation order.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::problems::Problem;
use crate::Error;

/// Distribution of the fixed coefficient matrix `B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeffDist {
    Bernoulli,
    Gaussian,
}

/// Shape and distribution parameters of a synthetic dataset.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetSpec {
    /// Number of instances.
    pub n: usize,
    /// Feature dimension.
    pub p: usize,
    /// Polynomial degree of the feature→cost map.
    pub deg: u32,
    /// Half-width of the multiplicative uniform noise.
    pub noise_half_width: f64,
    pub seed: u64,
    pub coeff_dist: CoeffDist,
}

impl DatasetSpec {
    /// Paper-style defaults: degree 6, noise half-width 0.5, Bernoulli
    /// coefficients.
    pub fn new(n: usize, p: usize, seed: u64) -> Self {
        DatasetSpec { n, p, deg: 6, noise_half_width: 0.5, seed, coeff_dist: CoeffDist::Bernoulli }
    }

    fn validate(&self) -> Result<(), Error> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::Dataset("dataset needs n >= 1 and p >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.noise_half_width) {
            return Err(Error::Dataset("noise half-width must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// A generated dataset: features, costs, and precomputed true optima
/// (effective decisions).
#[derive(Debug, Clone)]
pub struct PtoDataset {
    pub problem: Problem,
    pub spec: DatasetSpec,
    pub features: Vec<Vec<f64>>,
    pub costs: Vec<Vec<f64>>,
    pub solutions: Vec<Vec<f64>>,
}

/// Standard normal via Box–Muller (keeps the dependency footprint small and
/// the stream layout explicit).
fn normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen::<f64>();
        if u > 0.0 {
            let v: f64 = rng.gen::<f64>();
            return (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos();
        }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generates a dataset for `problem` under `spec`, solving every instance
/// exactly to record its true optimum.
pub fn generate(problem: &Problem, spec: &DatasetSpec) -> Result<PtoDataset, Error> {
    spec.validate()?;
    let k = problem.cost_dim();
    let p = spec.p;
    // Substream 0: the shared coefficient matrix, row-major.
    let mut rng_b = stream_rng(spec.seed, 0);
    let b: Vec<f64> = (0..k * p)
        .map(|_| match spec.coeff_dist {
            CoeffDist::Bernoulli => {
                if rng_b.gen::<f64>() < 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            CoeffDist::Gaussian => normal(&mut rng_b),
        })
        .collect();

    let scale = 1.0 / 3.5f64.powi(spec.deg as i32);
    let sqrt_p = (p as f64).sqrt();
    let mut features = Vec::with_capacity(spec.n);
    let mut costs = Vec::with_capacity(spec.n);
    let mut solutions = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let mut rng_psi = stream_rng(spec.seed, 2 * i as u64 + 1);
        let psi: Vec<f64> = (0..p).map(|_| normal(&mut rng_psi)).collect();
        let mut rng_xi = stream_rng(spec.seed, 2 * i as u64 + 2);
        let mut y = Vec::with_capacity(k);
        for j in 0..k {
            let bpsi: f64 = (0..p).map(|q| b[j * p + q] * psi[q]).sum();
            let base = (bpsi / sqrt_p + 3.0).max(0.0);
            let xi = 1.0 - spec.noise_half_width
                + 2.0 * spec.noise_half_width * rng_xi.gen::<f64>();
            y.push((scale * base.powi(spec.deg as i32) + 1.0) * xi);
        }
        let sol = problem.solve_min(&problem.min_cost(&y))?.solution;
        features.push(psi);
        costs.push(y);
        solutions.push(sol);
    }
    Ok(PtoDataset { problem: problem.clone(), spec: spec.clone(), features, costs, solutions })
}

impl PtoDataset {
    pub fn len(&self) -> usize {
        self.spec.n
    }

    pub fn is_empty(&self) -> bool {
        self.spec.n == 0
    }

    /// Serializes to the line-oriented text format documented in the guide.
    /// Floats use Rust's shortest round-trip formatting, so save → load is
    /// bitwise exact.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("dfl-dataset v1\n");
        let _ = writeln!(out, "problem {}", serde_json::to_string(&self.problem).unwrap());
        let _ = writeln!(out, "spec {}", serde_json::to_string(&self.spec).unwrap());
        for (name, block) in
            [("features", &self.features), ("costs", &self.costs), ("solutions", &self.solutions)]
        {
            let cols = block.first().map_or(0, |r| r.len());
            let _ = writeln!(out, "{name} {} {}", block.len(), cols);
            for row in block.iter() {
                let mut first = true;
                for v in row {
                    if !first {
                        out.push(' ');
                    }
                    let _ = write!(out, "{v}");
                    first = false;
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        std::fs::write(path, self.to_text())
            .map_err(|e| Error::Dataset(format!("writing {}: {e}", path.display())))
    }

    /// Parses the text format and re-verifies up to 10 seed-chosen instances
    /// against the exact solver, so silent tampering or schema drift fails
    /// loudly.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Dataset(format!("reading {}: {e}", path.display())))?;
        let ds = Self::from_text(&text)?;
        ds.verify_sample()?;
        Ok(ds)
    }

    /// Parses the text format without verification (see [`PtoDataset::load`]).
    pub fn from_text(text: &str) -> Result<Self, Error> {
        let bad = |msg: &str| Error::Dataset(format!("malformed dataset file: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some("dfl-dataset v1") {
            return Err(bad("missing or unsupported header"));
        }
        let problem_line =
            lines.next().and_then(|l| l.strip_prefix("problem ")).ok_or_else(|| bad("missing problem line"))?;
        let problem: Problem = serde_json::from_str(problem_line)
            .map_err(|e| bad(&format!("problem record: {e}")))?;
        let spec_line =
            lines.next().and_then(|l| l.strip_prefix("spec ")).ok_or_else(|| bad("missing spec line"))?;
        let spec: DatasetSpec =
            serde_json::from_str(spec_line).map_err(|e| bad(&format!("spec record: {e}")))?;
        let mut blocks: Vec<Vec<Vec<f64>>> = Vec::new();
        for name in ["features", "costs", "solutions"] {
            let header = lines.next().ok_or_else(|| bad(&format!("missing {name} block")))?;
            let mut parts = header.split_whitespace();
            if parts.next() != Some(name) {
                return Err(bad(&format!("expected {name} block header, got {header:?}")));
            }
            let rows: usize = parts
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(&format!("{name} row count")))?;
            let cols: usize = parts
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(&format!("{name} column count")))?;
            let mut block = Vec::with_capacity(rows);
            for r in 0..rows {
                let line =
                    lines.next().ok_or_else(|| bad(&format!("{name} block truncated at row {r}")))?;
                let row: Vec<f64> = line
                    .split_whitespace()
                    .map(|v| v.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| bad(&format!("{name} row {r}: {e}")))?;
                if row.len() != cols {
                    return Err(bad(&format!("{name} row {r}: expected {cols} values, got {}", row.len())));
                }
                block.push(row);
            }
            blocks.push(block);
        }
        let solutions = blocks.pop().unwrap();
        let costs = blocks.pop().unwrap();
        let features = blocks.pop().unwrap();
        let k = problem.cost_dim();
        if features.len() != spec.n || costs.len() != spec.n || solutions.len() != spec.n {
            return Err(bad("block sizes disagree with spec.n"));
        }
        if spec.n > 0 && (costs[0].len() != k || solutions[0].len() != k || features[0].len() != spec.p) {
            return Err(bad("block widths disagree with the problem/spec dimensions"));
        }
        Ok(PtoDataset { problem, spec, features, costs, solutions })
    }

    /// Re-solves up to 10 seed-chosen instances and compares the stored
    /// optima against the exact solver.
    fn verify_sample(&self) -> Result<(), Error> {
        let mut rng = stream_rng(self.spec.seed, u64::MAX);
        let count = self.spec.n.min(10);
        for _ in 0..count {
            let i = rng.gen_range(0..self.spec.n);
            let c = self.problem.min_cost(&self.costs[i]);
            let fresh = self.problem.solve_min(&c)?;
            let stored = &self.solutions[i];
            let ok = stored.len() == fresh.solution.len()
                && stored.iter().zip(&fresh.solution).all(|(a, b)| (a - b).abs() <= 1e-6);
            if !ok {
                return Err(Error::Dataset(format!(
                    "stored solution for instance {i} disagrees with the exact solver; \
                     the file is stale or was modified"
                )));
            }
        }
        Ok(())
    }
}
