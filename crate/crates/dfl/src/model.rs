//! Linear cost-prediction model and the decision-focused training loop.
//!
//! The model is a plain linear map `ŷ = Wψ (+ b)` from features to predicted
//! costs. Training walks the dataset in a seeded shuffled order, evaluates
//! the configured loss per instance (batch size 1 by default), chains
//! `dL/dW = (dL/dŷ) ψᵀ`, and applies SGD or Adam. With a fixed seed and a
//! single thread every run is bit-identical.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::PtoDataset;
use crate::linalg::Matrix;
use crate::losses::{normalized_regret, LossContext, LossSpec};
use crate::problems::Problem;
use crate::Error;

/// Linear predictor of cost vectors.
#[derive(Debug, Clone)]
pub struct LinearModel {
    /// `K × p` weight matrix.
    pub weights: Matrix,
    /// Optional per-output bias.
    pub bias: Option<Vec<f64>>,
}

impl LinearModel {
    /// Zero-initialised model (the default starting point).
    pub fn zeros(k: usize, p: usize, bias: bool) -> Self {
        LinearModel { weights: Matrix::zeros(k, p), bias: bias.then(|| vec![0.0; k]) }
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.ncols()
    }

    /// Predicts a cost vector for one feature vector.
    pub fn predict(&self, features: &[f64]) -> Vec<f64> {
        let mut y = self.weights.matvec(features);
        if let Some(b) = &self.bias {
            for (yi, bi) in y.iter_mut().zip(b) {
                *yi += bi;
            }
        }
        y
    }

    /// Writes the model as a small line-oriented text file (dims, then
    /// row-major weight entries, then the bias if present). Floats use
    /// shortest round-trip formatting.
    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let mut out = String::from("dfl-model v1\n");
        let _ = writeln!(
            out,
            "dims {} {} bias={}",
            self.output_dim(),
            self.feature_dim(),
            self.bias.is_some() as u8
        );
        for i in 0..self.output_dim() {
            let row: Vec<String> = self.weights.row(i).iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        if let Some(b) = &self.bias {
            let row: Vec<String> = b.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        std::fs::write(path, out)
            .map_err(|e| Error::Model(format!("writing {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let bad = |msg: String| Error::Model(format!("malformed model file: {msg}"));
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Model(format!("reading {}: {e}", path.display())))?;
        let mut lines = text.lines();
        if lines.next() != Some("dfl-model v1") {
            return Err(bad("missing header".into()));
        }
        let dims = lines.next().ok_or_else(|| bad("missing dims".into()))?;
        let mut parts = dims.split_whitespace();
        if parts.next() != Some("dims") {
            return Err(bad("expected dims line".into()));
        }
        let k: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("k".into()))?;
        let p: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("p".into()))?;
        let has_bias = match parts.next() {
            Some("bias=0") => false,
            Some("bias=1") => true,
            other => return Err(bad(format!("bias flag: {other:?}"))),
        };
        let mut parse_row = |what: &str| -> Result<Vec<f64>, Error> {
            let line = lines.next().ok_or_else(|| bad(format!("truncated at {what}")))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse())
                .collect::<Result<_, _>>()
                .map_err(|e| bad(format!("{what}: {e}")))?;
            if row.len() != p && what.starts_with("weights") {
                return Err(bad(format!("{what}: expected {p} entries")));
            }
            Ok(row)
        };
        let mut weights = Matrix::zeros(k, p);
        for i in 0..k {
            let row = parse_row(&format!("weights row {i}"))?;
            for (j, v) in row.iter().enumerate() {
                weights.set(i, j, *v);
            }
        }
        let bias = if has_bias {
            let b = parse_row("bias")?;
            if b.len() != k {
                return Err(bad("bias length".into()));
            }
            Some(b)
        } else {
            None
        };
        Ok(LinearModel { weights, bias })
    }
}

/// Training objective: plain regression or a decision loss.
#[derive(Debug, Clone, Copy)]
pub enum TrainLoss {
    /// Mean squared error on the cost vector (the two-stage baseline).
    Mse,
    Decision(LossSpec),
}

/// First-order optimizer.
#[derive(Debug, Clone, Copy)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub loss: TrainLoss,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Shuffle the instance order each epoch (seeded; disable for strictly
    /// sequential sweeps).
    pub shuffle: bool,
}

impl TrainConfig {
    /// Defaults: learning rate 0.005, 20 epochs, batch size 1, SGD, shuffled.
    pub fn new(loss: TrainLoss, seed: u64) -> Self {
        TrainConfig {
            loss,
            lr: 0.005,
            epochs: 20,
            batch_size: 1,
            optimizer: OptimizerKind::Sgd,
            seed,
            shuffle: true,
        }
    }
}

/// Per-epoch training statistics.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training loss over the epoch's instances.
    pub train_loss: f64,
    /// Normalized regret on the validation set (exact solvers); `NaN`
    /// without a validation set.
    pub val_regret: f64,
    /// Wall-clock seconds spent on this epoch (not deterministic).
    pub seconds: f64,
}

/// Output of [`train`].
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Trains `model` in place on `train_set`.
///
/// # Errors
/// Dimension mismatches, invalid hyperparameters, loss failures (including
/// non-finite losses, reported with their instance index), and solver
/// failures all abort training.
pub fn train(
    model: &mut LinearModel,
    problem: &Problem,
    train_set: &PtoDataset,
    val_set: Option<&PtoDataset>,
    cfg: &TrainConfig,
) -> Result<TrainReport, Error> {
    let k = problem.cost_dim();
    let p = train_set.spec.p;
    if model.output_dim() != k || model.feature_dim() != p {
        return Err(Error::Model(format!(
            "model shape {}×{} does not match problem dim {k} and feature dim {p}",
            model.output_dim(),
            model.feature_dim()
        )));
    }
    if train_set.problem != *problem {
        return Err(Error::Model("training dataset was generated for a different problem".into()));
    }
    if !(cfg.lr > 0.0) || cfg.batch_size == 0 {
        return Err(Error::Model("learning rate must be positive and batch size nonzero".into()));
    }
    let mut loss_ctx = match cfg.loss {
        TrainLoss::Decision(spec) => Some(LossContext::new(problem, spec, cfg.seed)?),
        TrainLoss::Mse => None,
    };
    let n_bias = if model.bias.is_some() { k } else { 0 };
    let n_params = k * p + n_bias;
    let mut adam = match cfg.optimizer {
        OptimizerKind::Adam { .. } => {
            Some(AdamState { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 })
        }
        OptimizerKind::Sgd => None,
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7368_7566); // "shuf" substream
    let mut report = TrainReport { epochs: Vec::with_capacity(cfg.epochs) };

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        if cfg.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let mut epoch_loss = 0.0;
        let mut grad_acc = vec![0.0; n_params];
        let mut in_batch = 0;
        for (pos, &i) in order.iter().enumerate() {
            let psi = &train_set.features[i];
            let y = &train_set.costs[i];
            let y_hat = model.predict(psi);
            let (value, g) = match &mut loss_ctx {
                Some(ctx) => {
                    let e = ctx.eval(i, y, &y_hat, &train_set.solutions[i])?;
                    (e.value, e.grad)
                }
                None => {
                    let diff: Vec<f64> =
                        y_hat.iter().zip(y).map(|(a, b)| a - b).collect();
                    let value = diff.iter().map(|d| d * d).sum::<f64>() / k as f64;
                    let g: Vec<f64> = diff.iter().map(|d| 2.0 * d / k as f64).collect();
                    (value, g)
                }
            };
            if !value.is_finite() {
                return Err(Error::Model(format!("non-finite loss at instance {i}")));
            }
            epoch_loss += value;
            // Chain rule: dL/dW = g ψᵀ, dL/db = g.
            for r in 0..k {
                if g[r] == 0.0 {
                    continue;
                }
                for q in 0..p {
                    grad_acc[r * p + q] += g[r] * psi[q];
                }
            }
            if model.bias.is_some() {
                for r in 0..k {
                    grad_acc[k * p + r] += g[r];
                }
            }
            in_batch += 1;
            let last = pos + 1 == order.len();
            if in_batch == cfg.batch_size || last {
                apply_step(model, &mut grad_acc, in_batch, cfg, &mut adam);
                grad_acc.iter_mut().for_each(|v| *v = 0.0);
                in_batch = 0;
            }
        }
        let val_regret = match val_set {
            Some(vs) => {
                let preds: Vec<Vec<f64>> =
                    vs.features.iter().map(|f| model.predict(f)).collect();
                normalized_regret(problem, &vs.costs, &preds)?
            }
            None => f64::NAN,
        };
        report.epochs.push(EpochStats {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            val_regret,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(report)
}

fn apply_step(
    model: &mut LinearModel,
    grad: &mut [f64],
    batch: usize,
    cfg: &TrainConfig,
    adam: &mut Option<AdamState>,
) {
    let k = model.output_dim();
    let p = model.feature_dim();
    let inv = 1.0 / batch as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    let step: Vec<f64> = match (&cfg.optimizer, adam) {
        (OptimizerKind::Sgd, _) => grad.iter().map(|g| cfg.lr * g).collect(),
        (OptimizerKind::Adam { beta1, beta2, eps }, Some(state)) => {
            state.t += 1;
            let bc1 = 1.0 - beta1.powi(state.t as i32);
            let bc2 = 1.0 - beta2.powi(state.t as i32);
            grad.iter()
                .enumerate()
                .map(|(j, g)| {
                    state.m[j] = beta1 * state.m[j] + (1.0 - beta1) * g;
                    state.v[j] = beta2 * state.v[j] + (1.0 - beta2) * g * g;
                    cfg.lr * (state.m[j] / bc1) / ((state.v[j] / bc2).sqrt() + eps)
                })
                .collect()
        }
        (OptimizerKind::Adam { .. }, None) => unreachable!("adam state built in train()"),
    };
    for r in 0..k {
        for q in 0..p {
            let v = model.weights.get(r, q) - step[r * p + q];
            model.weights.set(r, q, v);
        }
    }
    if let Some(b) = &mut model.bias {
        for r in 0..k {
            b[r] -= step[k * p + r];
        }
    }
}

/// Mean squared error of the model's cost predictions over a dataset.
pub fn mse_eval(model: &LinearModel, data: &PtoDataset) -> f64 {
    let k = data.problem.cost_dim() as f64;
    let mut total = 0.0;
    for (psi, y) in data.features.iter().zip(&data.costs) {
        let y_hat = model.predict(psi);
        total += y_hat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / k;
    }
    total / data.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, DatasetSpec};
    use crate::dys::DysConfig;
    use crate::losses::{GradPath, LossKind, SolverChoice};

    /// A fixed "dataset" with constant features, so training adjusts the
    /// prediction vector directly (the two-item demo setup).
    fn demo_dataset(problem: &Problem, y: Vec<f64>) -> PtoDataset {
        let sol = problem.solve_min(&problem.min_cost(&y)).unwrap().solution;
        PtoDataset {
            problem: problem.clone(),
            spec: DatasetSpec::new(1, 1, 0),
            features: vec![vec![1.0]],
            costs: vec![y],
            solutions: vec![sol],
        }
    }

    fn demo_model(init: &[f64]) -> LinearModel {
        let mut m = LinearModel::zeros(init.len(), 1, false);
        for (i, v) in init.iter().enumerate() {
            m.weights.set(i, 0, *v);
        }
        m
    }

    /// Fractional two-item knapsack demo: smoothed-regret training is stuck
    /// on its zero-gradient plateau while SCE escapes it.
    #[test]
    fn demo_regret_freezes_and_sce_recovers() {
        let p = Problem::top_k(2, 1).unwrap();
        let data = demo_dataset(&p, vec![0.8, 0.4]);
        // Start misranked (item 2 ahead) with a gap exceeding rho, so the
        // smoothed solution is the wrong vertex and the regret gradient is
        // exactly zero.
        let init = [0.01, 0.1];
        let dys = DysConfig { max_iters: 2000, ..DysConfig::to_convergence(0.05) };
        let regret_cfg = TrainConfig {
            epochs: 50,
            ..TrainConfig::new(
                TrainLoss::Decision(LossSpec {
                    kind: LossKind::Regret,
                    path: GradPath::ThroughLayer(dys),
                }),
                0,
            )
        };
        let mut m = demo_model(&init);
        train(&mut m, &p, &data, None, &regret_cfg).unwrap();
        assert!((m.weights.get(0, 0) - init[0]).abs() < 1e-12);
        assert!((m.weights.get(1, 0) - init[1]).abs() < 1e-12);

        let sce_cfg = TrainConfig {
            epochs: 500,
            ..TrainConfig::new(
                TrainLoss::Decision(LossSpec {
                    kind: LossKind::SceDiff,
                    path: GradPath::ThroughLayer(dys),
                }),
                0,
            )
        };
        let mut m = demo_model(&init);
        train(&mut m, &p, &data, None, &sce_cfg).unwrap();
        let y_hat = m.predict(&[1.0]);
        assert!(y_hat[0] > y_hat[1], "SCE should cross into the correct ranking: {y_hat:?}");
        let r = normalized_regret(&p, &data.costs, &[y_hat]).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn mse_training_reduces_mse() {
        let p = Problem::top_k(4, 1).unwrap();
        let ds = generate(&p, &DatasetSpec::new(30, 3, 5)).unwrap();
        let mut m = LinearModel::zeros(4, 3, true);
        let before = mse_eval(&m, &ds);
        let cfg = TrainConfig { epochs: 30, lr: 0.01, ..TrainConfig::new(TrainLoss::Mse, 1) };
        let report = train(&mut m, &p, &ds, Some(&ds), &cfg).unwrap();
        let after = mse_eval(&m, &ds);
        assert!(after < before, "MSE should decrease: {before} -> {after}");
        assert_eq!(report.epochs.len(), 30);
        assert!(report.epochs.last().unwrap().val_regret.is_finite());
    }

    #[test]
    fn training_is_deterministic_given_a_seed() {
        let p = Problem::top_k(4, 1).unwrap();
        let ds = generate(&p, &DatasetSpec::new(20, 3, 5)).unwrap();
        let spec = LossSpec {
            kind: LossKind::SpoPlus,
            path: GradPath::Subgradient(SolverChoice::Exact),
        };
        let cfg = TrainConfig { epochs: 5, ..TrainConfig::new(TrainLoss::Decision(spec), 9) };
        let mut m1 = LinearModel::zeros(4, 3, false);
        let r1 = train(&mut m1, &p, &ds, None, &cfg).unwrap();
        let mut m2 = LinearModel::zeros(4, 3, false);
        let r2 = train(&mut m2, &p, &ds, None, &cfg).unwrap();
        assert_eq!(m1.weights, m2.weights);
        let l1: Vec<f64> = r1.epochs.iter().map(|e| e.train_loss).collect();
        let l2: Vec<f64> = r2.epochs.iter().map(|e| e.train_loss).collect();
        assert_eq!(l1, l2);
    }

    #[test]
    fn adam_also_learns() {
        let p = Problem::top_k(4, 1).unwrap();
        let ds = generate(&p, &DatasetSpec::new(30, 3, 5)).unwrap();
        let mut m = LinearModel::zeros(4, 3, false);
        let cfg = TrainConfig {
            epochs: 20,
            optimizer: OptimizerKind::adam(),
            ..TrainConfig::new(TrainLoss::Mse, 1)
        };
        let before = mse_eval(&m, &ds);
        train(&mut m, &p, &ds, None, &cfg).unwrap();
        assert!(mse_eval(&m, &ds) < before);
    }

    #[test]
    fn model_save_load_round_trips() {
        let mut m = LinearModel::zeros(3, 2, true);
        m.weights.set(0, 1, -1.25e-7);
        m.weights.set(2, 0, 3.5);
        m.bias.as_mut().unwrap()[1] = 0.125;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        m.save(&path).unwrap();
        let l = LinearModel::load(&path).unwrap();
        assert_eq!(m.weights, l.weights);
        assert_eq!(m.bias, l.bias);
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let p = Problem::top_k(4, 1).unwrap();
        let ds = generate(&p, &DatasetSpec::new(5, 3, 5)).unwrap();
        let mut m = LinearModel::zeros(3, 3, false); // wrong output dim
        let cfg = TrainConfig::new(TrainLoss::Mse, 0);
        assert!(train(&mut m, &p, &ds, None, &cfg).is_err());
    }
}
