//! Randomized subspace ensembles of support vector regressors.
//!
//! A model is an additive mixture of low-dimensional submodels, each an
//! ε-insensitive SVR fitted on a randomly drawn set of `k` predictor columns.
//! Subspaces are drawn, scored by k-fold cross-validation against the current
//! residuals, and accepted when they cut the CV error by more than a selection
//! threshold. Hyperparameters `(ε, C)` are chosen on a grid by generalized
//! cross-validation, with the smoother trace computed either by the exact
//! stagewise recursion ([`GcvVariant::A1`]) or by the sum of per-subspace
//! ridge-smoother traces ([`GcvVariant::A2`]).
//!
//! Module map:
//!
//! * [`kernels`]: kernel functions and Gram matrices.
//! * [`svr`]: SMO dual solver for ε-SVR and the kernel ridge smoother.
//! * [`search`]: the draw / evaluate / accept loop.
//! * [`ensemble`]: full-data refit, prediction and additive decomposition.
//! * [`gcv`]: smoother traces, the GCV score, and the hyperparameter grid.
//! * [`reporting`]: outer k-fold evaluation and common-variable extraction.
//! * [`data`]: CSV ingestion, z-score normalization and synthetic data.
//! * [`cli`]: the `subspace-svr` command line.

pub mod cli;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod gcv;
pub mod kernels;
pub mod reporting;
pub mod search;
pub mod seed;
pub mod svr;

pub use data::{Dataset, Normalization, SynthSpec, Term};
pub use ensemble::EnsembleModel;
pub use error::{Error, Result};
pub use gcv::{GcvVariant, GridResult, HyperGrid};
pub use kernels::{KernelFamily, KernelSpec};
pub use reporting::{FoldReport, OuterEvaluation, VariableReport};
pub use search::{FoldSplit, SearchConfig, SearchOutcome, SearchTrace, Subspace};
pub use svr::{SvrConfig, SvrModel};
