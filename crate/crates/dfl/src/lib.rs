//! Decision-focused learning for linear and mixed-integer programs.
//!
//! This crate trains cost-vector predictors by the quality of the decisions
//! they induce rather than by prediction accuracy alone. It provides:
//!
//! * [`problems`] — problem families (grid shortest path, knapsack, top-k
//!   selection, facility location, a 1-D toy) with exact solvers and
//!   standard-form LP relaxations;
//! * [`solvers`] — deterministic exact solvers: two-phase simplex, dynamic
//!   programming, branch and bound, subset enumeration, plus a solution
//!   cache;
//! * [`dys`] — a differentiable smoothed-LP layer based on three-operator
//!   splitting, with an exact active-set backward pass;
//! * [`losses`] — decision losses (regret, squared decision error, SPO+,
//!   self-contrastive estimation) with subgradient and through-layer
//!   gradient paths;
//! * [`model`] / [`datagen`] — a linear predictor with SGD/Adam training and
//!   reproducible synthetic dataset generation;
//! * [`harness`] — the command implementations behind the `dfl` binary.
//!
//! The usage guide lives in `book/`; its code snippets are compiled and run
//! as doc-tests of this crate (see the hidden `book_doctests` module), so
//! guide and library cannot drift apart.

pub mod datagen;
pub mod dys;
pub mod harness;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod problems;
pub mod solvers;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("linear algebra: {0}")]
    Linalg(String),
    #[error("problem: {0}")]
    Problem(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("smoothed layer: {0}")]
    Dys(String),
    #[error("loss: {0}")]
    Loss(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("model: {0}")]
    Model(String),
    #[error("harness: {0}")]
    Harness(String),
}

/// Compiles and runs every code block in the guide as doc-tests.
#[cfg(doctest)]
mod book_doctests {
    macro_rules! book_chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    book_chapter!(readme, "../../../README.md");
    book_chapter!(introduction, "../../../book/src/introduction.md");
    book_chapter!(problems, "../../../book/src/problems.md");
    book_chapter!(solvers, "../../../book/src/solvers.md");
    book_chapter!(smoothed_layer, "../../../book/src/smoothed-layer.md");
    book_chapter!(losses, "../../../book/src/losses.md");
    book_chapter!(training, "../../../book/src/training.md");
    book_chapter!(data, "../../../book/src/data.md");
    book_chapter!(cli, "../../../book/src/cli.md");
}
