//! Command implementations behind the `dfl` binary.
//!
//! Every command reads an optional TOML config file, applies command-line
//! flag overrides on top, prints the resolved configuration to stdout, and
//! writes CSV output files. CSV files start with `#`-prefixed comment lines
//! that embed the resolved configuration, followed by a header row; floats
//! use shortest round-trip formatting, so a rerun with the same seed and a
//! single worker produces byte-identical files.
//!
//! Commands:
//! * `illustrate-1d` — sweep the 1-D toy problem and tabulate exact and
//!   smoothed losses/gradients;
//! * `simulate-top1` — measure smoothed-solution distances and gradient
//!   magnitudes on random top-1 instances across problem sizes and
//!   regularization strengths;
//! * `gen-data` — generate and save a synthetic dataset;
//! * `train` / `eval` — fit a linear predictor and score it;
//! * `knapsack-demo` — the two-item trajectory comparison of smoothed
//!   regret vs. SCE training.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate, CoeffDist, DatasetSpec, PtoDataset};
use crate::dys::{DysConfig, DysLayer, IterationMode};
use crate::losses::{normalized_regret, GradPath, LossContext, LossKind, LossSpec, SolverChoice};
use crate::model::{mse_eval, train, LinearModel, OptimizerKind, TrainConfig, TrainLoss};
use crate::problems::{CflGen, KnapsackGen, Problem};
use crate::solvers::top1_qp_exact;
use crate::Error;

/// Decision-focused learning toolkit.
#[derive(Debug, Parser)]
#[command(name = "dfl", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sweep the 1-D toy problem: exact vs. smoothed losses and gradients.
    #[command(name = "illustrate-1d")]
    Illustrate1d(Illustrate1dArgs),
    /// Top-1 simulation across sizes and regularization strengths.
    SimulateTop1(SimulateTop1Args),
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train a linear cost predictor.
    Train(TrainArgs),
    /// Evaluate a saved model on a dataset.
    Eval(EvalArgs),
    /// Two-item fractional knapsack training trajectories.
    KnapsackDemo(KnapsackDemoArgs),
}

/// Entry point used by the binary: run and map errors to exit code 1 with a
/// machine-parsable `error:` line on stderr.
pub fn main_cli() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Illustrate1d(a) => cmd_illustrate_1d(&a),
        Command::SimulateTop1(a) => cmd_simulate_top1(&a),
        Command::GenData(a) => cmd_gen_data(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::KnapsackDemo(a) => cmd_knapsack_demo(&a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

/// Worker count for parallel sections, from `DFL_WORKERS` (default 1, which
/// also guarantees byte-identical outputs).
fn workers() -> usize {
    std::env::var("DFL_WORKERS").ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0).unwrap_or(1)
}

fn write_csv(
    path: &Path,
    config: &[(&str, String)],
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<(), Error> {
    let mut out = String::new();
    for (k, v) in config {
        out.push_str(&format!("# {k} = {v}\n"));
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)
        .map_err(|e| Error::Harness(format!("writing {}: {e}", path.display())))
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

// ---------------------------------------------------------------------------
// illustrate-1d

#[derive(Debug, Args)]
pub struct Illustrate1dArgs {
    /// Regularization strength of the smoothed layer.
    #[arg(long, default_value_t = 6.0)]
    pub rho: f64,
    /// True cost of the single decision variable.
    #[arg(long, default_value_t = 4.0)]
    pub y_true: f64,
    /// Prediction sweep range.
    #[arg(long, default_value_t = -10.0)]
    pub lo: f64,
    #[arg(long, default_value_t = 4.0)]
    pub hi: f64,
    #[arg(long, default_value_t = 1000)]
    pub points: usize,
    #[arg(long, short)]
    pub out: PathBuf,
}

/// Sweeps predictions over `[lo, hi]` on the toy problem and tabulates, per
/// grid point: exact and smoothed decisions, regret and SCE values, and the
/// through-layer gradients of the smoothed losses.
pub fn cmd_illustrate_1d(args: &Illustrate1dArgs) -> Result<(), Error> {
    if args.points < 2 || !(args.hi > args.lo) {
        return Err(Error::Harness("need at least 2 grid points and hi > lo".into()));
    }
    let problem = Problem::toy_1d();
    let w_star = vec![if args.y_true < 0.0 { 1.0 } else { 0.0 }];
    let y = vec![args.y_true];
    let dys = DysConfig::to_convergence(args.rho);
    let mut regret_ctx = LossContext::new(
        &problem,
        LossSpec { kind: LossKind::Regret, path: GradPath::ThroughLayer(dys) },
        0,
    )?;
    let mut sce_ctx = LossContext::new(
        &problem,
        LossSpec { kind: LossKind::SceDiff, path: GradPath::ThroughLayer(dys) },
        0,
    )?;
    let mut rows = Vec::with_capacity(args.points);
    for i in 0..args.points {
        let y_hat = args.lo + (args.hi - args.lo) * i as f64 / (args.points - 1) as f64;
        let w_exact = if y_hat < 0.0 { 1.0 } else { 0.0 };
        let regret_exact = args.y_true * (w_exact - w_star[0]);
        let sce_exact = (y_hat - args.y_true) * (w_star[0] - w_exact);
        let re = regret_ctx.eval(i, &y, &[y_hat], &w_star)?;
        let se = sce_ctx.eval(i, &y, &[y_hat], &w_star)?;
        // Recover the smoothed decision from the regret value.
        let w_smoothed = re.value / args.y_true + w_star[0];
        rows.push(vec![
            fmt(y_hat),
            fmt(w_exact),
            fmt(w_smoothed),
            fmt(regret_exact),
            fmt(re.value),
            fmt(sce_exact),
            fmt(se.value),
            fmt(re.grad[0]),
            fmt(se.grad[0]),
        ]);
    }
    let config = [
        ("command", "illustrate-1d".to_string()),
        ("rho", fmt(args.rho)),
        ("y_true", fmt(args.y_true)),
        ("lo", fmt(args.lo)),
        ("hi", fmt(args.hi)),
        ("points", args.points.to_string()),
    ];
    println!("illustrate-1d: rho={} y_true={} points={}", args.rho, args.y_true, args.points);
    write_csv(
        &args.out,
        &config,
        &[
            "y_hat",
            "w_exact",
            "w_smoothed",
            "regret_exact",
            "regret_smoothed",
            "sce_exact",
            "sce_smoothed",
            "grad_regret_smoothed",
            "grad_sce_smoothed",
        ],
        &rows,
    )
}

// ---------------------------------------------------------------------------
// simulate-top1

#[derive(Debug, Args)]
pub struct SimulateTop1Args {
    /// Problem sizes (number of items).
    #[arg(long, value_delimiter = ',', default_values_t = vec![5, 10, 20, 40, 80, 100])]
    pub m_list: Vec<usize>,
    /// Regularization strengths.
    #[arg(long, value_delimiter = ',',
          default_values_t = vec![0.1, 0.5, 0.99, 1.05, 1.5, 2.0, 5.0])]
    pub mu_list: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub out: PathBuf,
}

/// One simulation cell: mean distances and gradient norms over the trials.
#[derive(Debug, Clone)]
pub struct Top1Cell {
    pub m: usize,
    pub mu: f64,
    /// Mean L1 distance between the layer output and the exact top-1 vertex
    /// at the predicted values.
    pub dist_dys: f64,
    /// Same distance, but from the analytic water-filling oracle.
    pub dist_oracle: f64,
    /// Mean sup-norm of the through-layer regret gradient.
    pub grad_regret: f64,
    /// Mean sup-norm of the through-layer SCE gradient.
    pub grad_sce: f64,
    /// Mean exact (unsmoothed) regret of the predicted decisions.
    pub regret: f64,
}

/// Runs the simulation grid. True and predicted values are independent
/// random permutations of `1..=m` (re-drawn until they differ), shared
/// across `mu` values within a trial.
pub fn simulate_top1_grid(args: &SimulateTop1Args) -> Result<Vec<Top1Cell>, Error> {
    let cells: Vec<(usize, f64)> = args
        .m_list
        .iter()
        .flat_map(|&m| args.mu_list.iter().map(move |&mu| (m, mu)))
        .collect();
    let run_cell = |&(m, mu): &(usize, f64)| -> Result<Top1Cell, Error> {
        let problem = Problem::top_k(m, 1)?;
        let std = problem.standard_form();
        let dys = DysConfig::to_convergence(mu);
        let layer = DysLayer::from_standard_form(&std, dys)?;
        let mut regret_ctx = LossContext::new(
            &problem,
            LossSpec { kind: LossKind::Regret, path: GradPath::ThroughLayer(dys) },
            args.seed,
        )?;
        let mut sce_ctx = LossContext::new(
            &problem,
            LossSpec { kind: LossKind::SceDiff, path: GradPath::ThroughLayer(dys) },
            args.seed,
        )?;
        let mut dist_dys = 0.0;
        let mut dist_oracle = 0.0;
        let mut grad_regret = 0.0;
        let mut grad_sce = 0.0;
        let mut regret_sum = 0.0;
        for trial in 0..args.trials {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            rng.set_stream(((m as u64) << 32) | trial as u64);
            let mut y: Vec<f64> = (1..=m).map(|v| v as f64).collect();
            y.shuffle(&mut rng);
            let mut y_hat = y.clone();
            while y_hat == y {
                y_hat.shuffle(&mut rng);
            }
            let w_star = problem.solve_min(&problem.min_cost(&y))?.solution;
            let vertex_hat = problem.solve_min(&problem.min_cost(&y_hat))?;
            regret_sum += problem
                .min_cost(&y)
                .iter()
                .zip(&vertex_hat.solution)
                .map(|(c, w)| c * w)
                .sum::<f64>()
                - problem.min_cost(&y).iter().zip(&w_star).map(|(c, w)| c * w).sum::<f64>();
            // Layer solution at the predicted values.
            let cost_std = problem.embed_std_cost(&problem.min_cost(&y_hat), &std);
            let rec = layer.forward(&cost_std, None)?;
            dist_dys += l1_dist(&rec.output[..m], &vertex_hat.solution);
            let oracle = top1_qp_exact(&y_hat, mu);
            dist_oracle += l1_dist(&oracle, &vertex_hat.solution);
            let re = regret_ctx.eval(trial, &y, &y_hat, &w_star)?;
            grad_regret += sup_norm(&re.grad);
            let se = sce_ctx.eval(trial, &y, &y_hat, &w_star)?;
            grad_sce += sup_norm(&se.grad);
        }
        let t = args.trials as f64;
        Ok(Top1Cell {
            m,
            mu,
            dist_dys: dist_dys / t,
            dist_oracle: dist_oracle / t,
            grad_regret: grad_regret / t,
            grad_sce: grad_sce / t,
            regret: regret_sum / t,
        })
    };
    let nworkers = workers();
    let mut results: Vec<Top1Cell> = if nworkers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(nworkers)
            .build()
            .map_err(|e| Error::Harness(format!("thread pool: {e}")))?;
        pool.install(|| cells.par_iter().map(run_cell).collect::<Result<Vec<_>, _>>())?
    } else {
        cells.iter().map(run_cell).collect::<Result<Vec<_>, _>>()?
    };
    results.sort_by(|a, b| a.m.cmp(&b.m).then(a.mu.partial_cmp(&b.mu).unwrap()));
    Ok(results)
}

fn l1_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn cmd_simulate_top1(args: &SimulateTop1Args) -> Result<(), Error> {
    if args.trials == 0 || args.m_list.is_empty() || args.mu_list.is_empty() {
        return Err(Error::Harness("need at least one m, one mu, and one trial".into()));
    }
    if args.mu_list.iter().any(|&mu| !(mu > 0.0)) {
        return Err(Error::Harness("mu values must be positive".into()));
    }
    let cells = simulate_top1_grid(args)?;
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            vec![
                c.m.to_string(),
                fmt(c.mu),
                fmt(c.dist_dys),
                fmt(c.dist_oracle),
                fmt(c.grad_regret),
                fmt(c.grad_sce),
                fmt(c.regret),
            ]
        })
        .collect();
    for c in &cells {
        println!(
            "m={:<4} mu={:<5} dist={:.4} grad_regret={:.2e} grad_sce={:.2e}",
            c.m, c.mu, c.dist_dys, c.grad_regret, c.grad_sce
        );
    }
    let config = [
        ("command", "simulate-top1".to_string()),
        ("m_list", format!("{:?}", args.m_list)),
        ("mu_list", format!("{:?}", args.mu_list)),
        ("trials", args.trials.to_string()),
        ("seed", args.seed.to_string()),
    ];
    write_csv(
        &args.out,
        &config,
        &["m", "mu", "dist_dys", "dist_oracle", "grad_regret", "grad_sce", "regret"],
        &rows,
    )
}

// ---------------------------------------------------------------------------
// gen-data

/// Resolved dataset-generation configuration (TOML-loadable; CLI flags
/// override individual fields).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    /// One of `grid_sp`, `top_k`, `knapsack`, `cfl`, `toy_1d`.
    pub family: String,
    pub n: usize,
    pub p: usize,
    pub deg: u32,
    pub noise: f64,
    pub seed: u64,
    /// `bernoulli` or `gaussian`.
    pub coeff_dist: String,
    /// Seed for sampling knapsack/facility instances.
    pub instance_seed: u64,
    pub grid_k: usize,
    pub top_m: usize,
    pub top_k: usize,
    pub knapsack: KnapsackGen,
    pub cfl: CflGen,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            family: "grid_sp".into(),
            n: 100,
            p: 5,
            deg: 6,
            noise: 0.5,
            seed: 42,
            coeff_dist: "bernoulli".into(),
            instance_seed: 0,
            grid_k: 5,
            top_m: 10,
            top_k: 1,
            knapsack: KnapsackGen::default(),
            cfl: CflGen::default(),
        }
    }
}

impl GenConfig {
    /// Builds the problem instance this configuration describes.
    pub fn problem(&self) -> Result<Problem, Error> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.instance_seed);
        match self.family.as_str() {
            "grid_sp" => Problem::grid_sp(self.grid_k),
            "top_k" => Problem::top_k(self.top_m, self.top_k),
            "knapsack" => self.knapsack.sample(&mut rng),
            "cfl" => self.cfl.sample(&mut rng),
            "toy_1d" => Ok(Problem::toy_1d()),
            other => Err(Error::Harness(format!(
                "unknown family {other:?} (expected grid_sp, top_k, knapsack, cfl, or toy_1d)"
            ))),
        }
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec, Error> {
        let coeff_dist = match self.coeff_dist.as_str() {
            "bernoulli" => CoeffDist::Bernoulli,
            "gaussian" => CoeffDist::Gaussian,
            other => {
                return Err(Error::Harness(format!(
                    "unknown coeff_dist {other:?} (expected bernoulli or gaussian)"
                )))
            }
        };
        Ok(DatasetSpec {
            n: self.n,
            p: self.p,
            deg: self.deg,
            noise_half_width: self.noise,
            seed: self.seed,
            coeff_dist,
        })
    }
}

fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Harness(format!("reading {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Harness(format!("{}: {e}", path.display())))
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// TOML config file; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub deg: Option<u32>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub coeff_dist: Option<String>,
    #[arg(long)]
    pub instance_seed: Option<u64>,
    /// Grid side length for `grid_sp`.
    #[arg(long)]
    pub grid_k: Option<usize>,
    /// Item count for `top_k`.
    #[arg(long)]
    pub top_m: Option<usize>,
    /// Selection budget for `top_k`.
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long, short)]
    pub out: PathBuf,
}

impl GenDataArgs {
    /// Resolves config file + flag overrides into a full configuration.
    pub fn resolve(&self) -> Result<GenConfig, Error> {
        let mut cfg: GenConfig =
            self.config.as_ref().map(|p| load_toml(p)).transpose()?.unwrap_or_default();
        macro_rules! over {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { cfg.$field = v.clone(); })*
            };
        }
        over!(family, n, p, deg, noise, seed, coeff_dist, instance_seed, grid_k, top_m, top_k);
        Ok(cfg)
    }
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<(), Error> {
    let cfg = args.resolve()?;
    let problem = cfg.problem()?;
    let spec = cfg.dataset_spec()?;
    println!(
        "gen-data: resolved config\n{}",
        toml::to_string(&cfg).map_err(|e| Error::Harness(e.to_string()))?
    );
    let ds = generate(&problem, &spec)?;
    ds.save(&args.out)?;
    println!(
        "wrote {} instances (cost dim {}) to {}",
        ds.len(),
        problem.cost_dim(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train / eval

/// Resolved training configuration (TOML-loadable; flags override).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainFileConfig {
    /// `mse`, `regret`, `sqde`, `spo_plus`, `sce`, or `sce_yhat`.
    pub loss: String,
    /// `subgrad` or `dys`.
    pub path: String,
    /// Subgradient solver: `exact`, `relax`, or `cache`.
    pub solver: String,
    pub cache_prob: f64,
    pub rho: f64,
    /// Step size; defaults to `min(0.01, 1/rho)` when omitted.
    pub alpha: Option<f64>,
    pub iters: usize,
    /// `fixed` or `converge`.
    pub dys_mode: String,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// `sgd` or `adam`.
    pub optimizer: String,
    pub seed: u64,
    pub bias: bool,
}

impl Default for TrainFileConfig {
    fn default() -> Self {
        TrainFileConfig {
            loss: "sce".into(),
            path: "dys".into(),
            solver: "exact".into(),
            cache_prob: 0.5,
            rho: 1.0,
            alpha: None,
            iters: 100,
            dys_mode: "fixed".into(),
            epochs: 20,
            lr: 0.005,
            batch_size: 1,
            optimizer: "sgd".into(),
            seed: 0,
            bias: false,
        }
    }
}

impl TrainFileConfig {
    pub fn dys_config(&self) -> Result<DysConfig, Error> {
        let alpha = self.alpha.unwrap_or_else(|| (0.01f64).min(1.0 / self.rho));
        let mode = match self.dys_mode.as_str() {
            "fixed" => IterationMode::Fixed,
            "converge" => IterationMode::ToConvergence,
            other => return Err(Error::Harness(format!("unknown dys_mode {other:?}"))),
        };
        Ok(DysConfig { rho: self.rho, alpha, max_iters: self.iters, tol: 1e-9, mode })
    }

    /// Maps the textual loss/path/solver selection onto a training loss.
    pub fn train_loss(&self) -> Result<TrainLoss, Error> {
        if self.loss == "mse" {
            return Ok(TrainLoss::Mse);
        }
        let kind = match self.loss.as_str() {
            "regret" => LossKind::Regret,
            "sqde" => LossKind::SqDe,
            "spo_plus" => LossKind::SpoPlus,
            "sce" => LossKind::SceDiff,
            "sce_yhat" => LossKind::SceYhat,
            other => {
                return Err(Error::Harness(format!(
                    "unknown loss {other:?} (expected mse, regret, sqde, spo_plus, sce, sce_yhat)"
                )))
            }
        };
        let path = match self.path.as_str() {
            "dys" => GradPath::ThroughLayer(self.dys_config()?),
            "subgrad" => {
                let choice = match self.solver.as_str() {
                    "exact" => SolverChoice::Exact,
                    "relax" => SolverChoice::Relaxation,
                    "cache" => SolverChoice::Cached { solve_prob: self.cache_prob },
                    other => {
                        return Err(Error::Harness(format!(
                            "unknown solver {other:?} (expected exact, relax, cache)"
                        )))
                    }
                };
                GradPath::Subgradient(choice)
            }
            other => {
                return Err(Error::Harness(format!(
                    "unknown path {other:?} (expected subgrad or dys)"
                )))
            }
        };
        Ok(TrainLoss::Decision(LossSpec { kind, path }))
    }

    pub fn train_config(&self) -> Result<TrainConfig, Error> {
        let optimizer = match self.optimizer.as_str() {
            "sgd" => OptimizerKind::Sgd,
            "adam" => OptimizerKind::adam(),
            other => return Err(Error::Harness(format!("unknown optimizer {other:?}"))),
        };
        Ok(TrainConfig {
            loss: self.train_loss()?,
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer,
            seed: self.seed,
            shuffle: true,
        })
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset (written by gen-data).
    #[arg(long)]
    pub data: PathBuf,
    /// Optional validation dataset for per-epoch normalized regret.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// TOML config file; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub path: Option<String>,
    #[arg(long)]
    pub solver: Option<String>,
    #[arg(long)]
    pub cache_prob: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub dys_mode: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub bias: Option<bool>,
    /// Where to save the trained model.
    #[arg(long)]
    pub out_model: PathBuf,
    /// Per-epoch CSV (epoch, train loss, validation regret).
    #[arg(long)]
    pub out_csv: PathBuf,
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<TrainFileConfig, Error> {
        let mut cfg: TrainFileConfig =
            self.config.as_ref().map(|p| load_toml(p)).transpose()?.unwrap_or_default();
        macro_rules! over {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { cfg.$field = v.clone(); })*
            };
        }
        over!(
            loss, path, solver, cache_prob, rho, iters, dys_mode, epochs, lr, batch_size,
            optimizer, seed, bias
        );
        if self.alpha.is_some() {
            cfg.alpha = self.alpha;
        }
        Ok(cfg)
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), Error> {
    let cfg = args.resolve()?;
    println!(
        "train: resolved config\n{}",
        toml::to_string(&cfg).map_err(|e| Error::Harness(e.to_string()))?
    );
    let data = PtoDataset::load(&args.data)?;
    let val = args.val.as_ref().map(|p| PtoDataset::load(p)).transpose()?;
    let problem = data.problem.clone();
    let mut model = LinearModel::zeros(problem.cost_dim(), data.spec.p, cfg.bias);
    let tc = cfg.train_config()?;
    let report = train(&mut model, &problem, &data, val.as_ref(), &tc)?;
    model.save(&args.out_model)?;
    let rows: Vec<Vec<String>> = report
        .epochs
        .iter()
        .map(|e| vec![e.epoch.to_string(), fmt(e.train_loss), fmt(e.val_regret)])
        .collect();
    let config = [
        ("command", "train".to_string()),
        ("loss", cfg.loss.clone()),
        ("path", cfg.path.clone()),
        ("solver", cfg.solver.clone()),
        ("rho", fmt(cfg.rho)),
        ("epochs", cfg.epochs.to_string()),
        ("lr", fmt(cfg.lr)),
        ("seed", cfg.seed.to_string()),
        ("data", args.data.display().to_string()),
    ];
    write_csv(&args.out_csv, &config, &["epoch", "train_loss", "val_regret"], &rows)?;
    let secs: f64 =
        report.epochs.iter().map(|e| e.seconds).sum::<f64>() / report.epochs.len().max(1) as f64;
    let last = report.epochs.last();
    println!(
        "trained loss={} path={} seed={} epochs={} final_train_loss={} final_val_regret={} seconds_per_epoch={:.3}",
        cfg.loss,
        cfg.path,
        cfg.seed,
        cfg.epochs,
        last.map_or(f64::NAN, |e| e.train_loss),
        last.map_or(f64::NAN, |e| e.val_regret),
        secs
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Optional single-row metrics CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), Error> {
    let data = PtoDataset::load(&args.data)?;
    let model = LinearModel::load(&args.model)?;
    if model.output_dim() != data.problem.cost_dim() || model.feature_dim() != data.spec.p {
        return Err(Error::Harness(format!(
            "model shape {}×{} does not fit dataset (cost dim {}, feature dim {})",
            model.output_dim(),
            model.feature_dim(),
            data.problem.cost_dim(),
            data.spec.p
        )));
    }
    let preds: Vec<Vec<f64>> = data.features.iter().map(|f| model.predict(f)).collect();
    let regret = normalized_regret(&data.problem, &data.costs, &preds)?;
    let mse = mse_eval(&model, &data);
    println!("eval: normalized_regret={regret} mse={mse} instances={}", data.len());
    if let Some(out) = &args.out {
        let config = [
            ("command", "eval".to_string()),
            ("data", args.data.display().to_string()),
            ("model", args.model.display().to_string()),
        ];
        write_csv(
            out,
            &config,
            &["normalized_regret", "mse", "instances"],
            &[vec![fmt(regret), fmt(mse), data.len().to_string()]],
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// knapsack-demo

#[derive(Debug, Args)]
pub struct KnapsackDemoArgs {
    /// True item values.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = vec![0.8, 0.4])]
    pub true_values: Vec<f64>,
    /// Initial predictions.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = vec![0.1, 0.01])]
    pub init: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub rho: f64,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.005)]
    pub lr: f64,
    #[arg(long, short)]
    pub out: PathBuf,
}

/// One trajectory point of the demo.
#[derive(Debug, Clone)]
pub struct DemoPoint {
    pub epoch: usize,
    pub y_hat: [f64; 2],
    pub regret: f64,
}

/// Runs the two-item demo for one loss kind and returns the prediction
/// trajectory (including the starting point as epoch 0).
pub fn knapsack_demo_trajectory(
    kind: LossKind,
    args: &KnapsackDemoArgs,
) -> Result<Vec<DemoPoint>, Error> {
    let problem = Problem::top_k(2, 1)?;
    let y = args.true_values.clone();
    let w_star = problem.solve_min(&problem.min_cost(&y))?.solution;
    let dys = DysConfig {
        max_iters: 5000,
        ..DysConfig::to_convergence(args.rho)
    };
    let mut ctx = LossContext::new(
        &problem,
        LossSpec { kind, path: GradPath::ThroughLayer(dys) },
        0,
    )?;
    let mut y_hat = [args.init[0], args.init[1]];
    let exact_regret = |y_hat: &[f64; 2]| -> Result<f64, Error> {
        let c = problem.min_cost(&y);
        let taken = problem.solve_min(&problem.min_cost(y_hat.as_slice()))?.solution;
        Ok(c.iter().zip(&taken).map(|(a, b)| a * b).sum::<f64>()
            - c.iter().zip(&w_star).map(|(a, b)| a * b).sum::<f64>())
    };
    let mut traj = vec![DemoPoint { epoch: 0, y_hat, regret: exact_regret(&y_hat)? }];
    for epoch in 1..=args.epochs {
        let e = ctx.eval(0, &y, &y_hat, &w_star)?;
        y_hat[0] -= args.lr * e.grad[0];
        y_hat[1] -= args.lr * e.grad[1];
        traj.push(DemoPoint { epoch, y_hat, regret: exact_regret(&y_hat)? });
    }
    Ok(traj)
}

pub fn cmd_knapsack_demo(args: &KnapsackDemoArgs) -> Result<(), Error> {
    if args.true_values.len() != 2 || args.init.len() != 2 {
        return Err(Error::Harness("demo needs exactly two true values and two inits".into()));
    }
    let mut rows = Vec::new();
    for (name, kind) in [("regret", LossKind::Regret), ("sce", LossKind::SceDiff)] {
        let traj = knapsack_demo_trajectory(kind, args)?;
        let last = traj.last().unwrap();
        println!(
            "knapsack-demo {name}: final y_hat = ({}, {}), regret = {}",
            last.y_hat[0], last.y_hat[1], last.regret
        );
        for p in traj {
            rows.push(vec![
                name.to_string(),
                p.epoch.to_string(),
                fmt(p.y_hat[0]),
                fmt(p.y_hat[1]),
                fmt(p.regret),
            ]);
        }
    }
    let config = [
        ("command", "knapsack-demo".to_string()),
        ("true_values", format!("{:?}", args.true_values)),
        ("init", format!("{:?}", args.init)),
        ("rho", fmt(args.rho)),
        ("epochs", args.epochs.to_string()),
        ("lr", fmt(args.lr)),
    ];
    write_csv(&args.out, &config, &["loss", "epoch", "y_hat_1", "y_hat_2", "regret"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gen_config_flag_overrides_win() {
        let args = GenDataArgs {
            config: None,
            family: Some("top_k".into()),
            n: Some(7),
            p: None,
            deg: None,
            noise: None,
            seed: None,
            coeff_dist: None,
            instance_seed: None,
            grid_k: None,
            top_m: Some(4),
            top_k: None,
            out: PathBuf::from("unused"),
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.family, "top_k");
        assert_eq!(cfg.n, 7);
        assert_eq!(cfg.p, 5, "default survives");
        let p = cfg.problem().unwrap();
        assert_eq!(p.cost_dim(), 4);
    }

    #[test]
    fn train_config_rejects_unknown_names() {
        let cfg = TrainFileConfig { loss: "hinge".into(), ..Default::default() };
        assert!(cfg.train_loss().is_err());
        let cfg = TrainFileConfig { path: "warp".into(), ..Default::default() };
        assert!(cfg.train_loss().is_err());
        let cfg = TrainFileConfig { optimizer: "lbfgs".into(), ..Default::default() };
        assert!(cfg.train_config().is_err());
    }

    #[test]
    fn demo_default_start_is_already_optimal_and_stays_put() {
        // With the spec defaults the starting ranking is already correct, so
        // both losses sit at zero regret from epoch 0.
        let args = KnapsackDemoArgs {
            true_values: vec![0.8, 0.4],
            init: vec![0.1, 0.01],
            rho: 0.05,
            epochs: 5,
            lr: 0.005,
            out: PathBuf::from("unused"),
        };
        let traj = knapsack_demo_trajectory(LossKind::Regret, &args).unwrap();
        assert!(traj.iter().all(|p| p.regret == 0.0));
        assert_eq!(traj.last().unwrap().y_hat, [0.1, 0.01]);
    }
}
