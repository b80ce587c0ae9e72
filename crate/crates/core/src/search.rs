//! Randomized subspace generation and acceptance.
//!
//! The learning rows are split into `folds` train/validation pairs. Every
//! fold keeps its own residual vector, starting from `y` minus that fold's
//! training mean. At iteration `t` a random set of `k` columns is drawn, one
//! SVR per fold is trained on the fold's training residuals, and
//!
//! ```text
//! CV_t = mean_q RMSE(validation residuals of fold q after subtracting g_t)
//! Δe   = (CV* − CV_t) / CV*
//! ```
//!
//! A draw is accepted when `Δe > η`; the search stops after `patience`
//! consecutive draws with `Δe < τ`, or at `max_iterations`.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed::{rng_for, Stream};
use crate::svr::{svr_fit, SvrConfig, SvrModel};

/// `k` distinct column indices, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subspace {
    pub indices: Vec<usize>,
    pub iteration_drawn: usize,
}

impl Subspace {
    pub fn new(mut indices: Vec<usize>, iteration_drawn: usize, p: usize) -> Result<Self> {
        indices.sort_unstable();
        if indices.is_empty() {
            return Err(Error::input("subspace needs at least one index"));
        }
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::input(format!("subspace indices not distinct: {indices:?}")));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= p) {
            return Err(Error::input(format!("subspace index {bad} out of range for p = {p}")));
        }
        Ok(Subspace { indices, iteration_drawn })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// `k`
    pub subspace_dim: usize,
    /// `η`, as a fraction.
    pub selection_threshold: f64,
    /// `τ`, as a fraction.
    pub termination_threshold: f64,
    pub max_iterations: usize,
    pub folds: usize,
    /// Consecutive draws with `Δe < τ` needed to stop.
    pub patience: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            subspace_dim: 3,
            selection_threshold: 0.01,
            termination_threshold: 0.00001,
            max_iterations: 10_000,
            folds: 5,
            patience: 10,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (eta, tau) = (self.selection_threshold, self.termination_threshold);
        if !(tau > 0.0 && tau < eta && eta.is_finite()) {
            return Err(Error::input(format!(
                "thresholds must satisfy 0 < tau < eta (tau = {tau}, eta = {eta})"
            )));
        }
        if eta >= 1.0 {
            return Err(Error::input(format!("eta must be below 1, got {eta}")));
        }
        if self.subspace_dim < 1 {
            return Err(Error::input("subspace dimension must be >= 1"));
        }
        if self.folds < 2 {
            return Err(Error::input("need at least 2 folds"));
        }
        if self.max_iterations < 1 {
            return Err(Error::input("max_iterations must be >= 1"));
        }
        if self.patience < 1 {
            return Err(Error::input("patience must be >= 1"));
        }
        Ok(())
    }
}

/// Fold id for every row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub assignments: Vec<usize>,
    pub folds: usize,
}

impl FoldSplit {
    /// Shuffle the rows, then deal them round-robin.
    pub fn shuffled<R: Rng>(n: usize, folds: usize, rng: &mut R) -> Result<Self> {
        if folds < 2 || n < folds {
            return Err(Error::input(format!("cannot split {n} rows into {folds} folds")));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let mut assignments = vec![0; n];
        for (pos, &row) in perm.iter().enumerate() {
            assignments[row] = pos % folds;
        }
        Ok(FoldSplit { assignments, folds })
    }

    pub fn validation_rows(&self, q: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == q).collect()
    }

    pub fn training_rows(&self, q: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] != q).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Uniform draw of `k` distinct columns out of `p`.
pub fn draw_subspace<R: Rng>(rng: &mut R, p: usize, k: usize, iteration: usize) -> Result<Subspace> {
    if k < 1 || k > p {
        return Err(Error::input(format!("cannot draw {k} of {p} variables")));
    }
    let indices = rand::seq::index::sample(rng, p, k).into_vec();
    Subspace::new(indices, iteration, p)
}

/// Relative error reduction `(CV* − CV_t) / CV*`.
pub fn delta_e(cv_star: f64, cv_t: f64) -> Result<f64> {
    if !(cv_star > 0.0) {
        return Err(Error::numeric(format!("CV* must be positive, got {cv_star}")));
    }
    Ok((cv_star - cv_t) / cv_star)
}

pub(crate) fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v * v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}

/// Per-fold rows and the current residuals of the partial model over all rows.
#[derive(Debug, Clone)]
pub struct FoldState {
    pub training: Vec<usize>,
    pub validation: Vec<usize>,
    pub residuals: DVector<f64>,
}

impl FoldState {
    fn validation_rmse(&self, pred: Option<&DVector<f64>>) -> f64 {
        rms(self.validation.iter().map(|&i| match pred {
            Some(p) => self.residuals[i] - p[i],
            None => self.residuals[i],
        }))
    }
}

/// Fold states for the constant model: each fold's residuals are `y` minus
/// its training mean. Returns the states and `CV₀`.
pub fn constant_baseline(data: &Dataset, split: &FoldSplit) -> Result<(Vec<FoldState>, f64)> {
    if split.assignments.len() != data.n() {
        return Err(Error::input("fold split does not match dataset size"));
    }
    let mut states = Vec::with_capacity(split.folds);
    for q in 0..split.folds {
        let training = split.training_rows(q);
        let validation = split.validation_rows(q);
        if training.len() < 2 || validation.is_empty() {
            return Err(Error::input(format!(
                "fold {q} has {} training and {} validation rows",
                training.len(),
                validation.len()
            )));
        }
        let mean = training.iter().map(|&i| data.y[i]).sum::<f64>() / training.len() as f64;
        let residuals = data.y.map(|v| v - mean);
        states.push(FoldState {
            training,
            validation,
            residuals,
        });
    }
    let cv0 = states.iter().map(|s| s.validation_rmse(None)).sum::<f64>() / split.folds as f64;
    Ok((states, cv0))
}

/// A candidate fitted on every fold.
#[derive(Debug, Clone)]
pub struct CandidateFit {
    pub cv: f64,
    pub fold_rmse: Vec<f64>,
    pub fold_models: Vec<SvrModel>,
    /// Per fold, predictions over all rows.
    pub fold_predictions: Vec<DVector<f64>>,
}

/// Fit `candidate` on each fold's training residuals and score it on the
/// validation rows. Folds are fitted in parallel and reduced in fold order.
pub fn evaluate_candidate(
    candidate: &Subspace,
    states: &[FoldState],
    data: &Dataset,
    svr: &SvrConfig,
) -> Result<CandidateFit> {
    let all_rows = data.columns(&candidate.indices);
    let per_fold: Vec<Result<(SvrModel, DVector<f64>, f64)>> = states
        .par_iter()
        .map(|st| {
            if st.training.len() < 2 {
                return Err(Error::input("fold with fewer than 2 training rows"));
            }
            let z = data.project(&st.training, &candidate.indices);
            let r: Vec<f64> = st.training.iter().map(|&i| st.residuals[i]).collect();
            let model = svr_fit(&z, &r, svr)?;
            let pred = model.predict(&all_rows)?;
            let rmse = st.validation_rmse(Some(&pred));
            Ok((model, pred, rmse))
        })
        .collect();

    let mut fit = CandidateFit {
        cv: 0.0,
        fold_rmse: Vec::with_capacity(states.len()),
        fold_models: Vec::with_capacity(states.len()),
        fold_predictions: Vec::with_capacity(states.len()),
    };
    for r in per_fold {
        let (m, p, e) = r?;
        fit.fold_models.push(m);
        fit.fold_predictions.push(p);
        fit.fold_rmse.push(e);
    }
    fit.cv = fit.fold_rmse.iter().sum::<f64>() / states.len() as f64;
    Ok(fit)
}

/// `CV_t` of `candidate` against the current fold residuals.
pub fn cv_score(candidate: &Subspace, states: &[FoldState], data: &Dataset, svr: &SvrConfig) -> Result<f64> {
    evaluate_candidate(candidate, states, data, svr).map(|f| f.cv)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accepted,
    Rejected,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub indices: Vec<usize>,
    pub cv: f64,
    pub delta_e: f64,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchTrace {
    pub cv0: f64,
    pub records: Vec<TraceRecord>,
    /// `CV*` after each acceptance, starting with `CV₀`.
    pub best_cv_history: Vec<f64>,
}

impl SearchTrace {
    /// One JSON object per iteration, after an optional `#` comment line.
    pub fn write_jsonl<W: Write>(&self, mut w: W, comment: Option<&str>) -> std::io::Result<()> {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Vec<TraceRecord>> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut out = Vec::new();
        for (lineno, line) in std::io::BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let s = line.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let rec = serde_json::from_str(s)
                .map_err(|e| Error::input(format!("{}: line {}: {e}", path.display(), lineno + 1)))?;
            out.push(rec);
        }
        Ok(out)
    }

    pub fn accepted(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| r.decision == Decision::Accepted)
    }
}

#[derive(Debug, Clone)]
pub struct AcceptedSubspace {
    pub subspace: Subspace,
    pub fold_models: Vec<SvrModel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    IterationCap,
    /// `CV*` reached zero; nothing left to explain.
    PerfectFit,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub accepted: Vec<AcceptedSubspace>,
    pub trace: SearchTrace,
    pub cv0: f64,
    pub cv_star: f64,
    pub iterations: usize,
    pub stop: StopReason,
    pub split: FoldSplit,
    pub fold_states: Vec<FoldState>,
}

impl SearchOutcome {
    pub fn subspaces(&self) -> Vec<Subspace> {
        self.accepted.iter().map(|a| a.subspace.clone()).collect()
    }

    pub fn hit_cap(&self) -> bool {
        self.stop == StopReason::IterationCap
    }
}

/// Run the draw / evaluate / accept loop on a normalized learning set.
pub fn run_search(data: &Dataset, config: &SearchConfig, svr: &SvrConfig) -> Result<SearchOutcome> {
    config.validate()?;
    svr.validate()?;
    let (n, p) = (data.n(), data.p());
    if n < config.folds {
        return Err(Error::input(format!("{n} rows cannot fill {} folds", config.folds)));
    }
    if config.subspace_dim > p {
        return Err(Error::input(format!(
            "subspace dimension {} exceeds the {p} available predictors",
            config.subspace_dim
        )));
    }

    let mut fold_rng = rng_for(config.seed, Stream::InnerFolds);
    let mut draw_rng = rng_for(config.seed, Stream::SubspaceDraws);
    let split = FoldSplit::shuffled(n, config.folds, &mut fold_rng)?;
    let (mut states, cv0) = constant_baseline(data, &split)?;

    let mut trace = SearchTrace {
        cv0,
        records: Vec::new(),
        best_cv_history: vec![cv0],
    };
    let mut accepted = Vec::new();
    let mut cv_star = cv0;
    let mut below_tau = 0usize;
    let mut t = 0usize;
    let stop = loop {
        if cv_star <= 0.0 {
            break StopReason::PerfectFit;
        }
        if t >= config.max_iterations {
            break StopReason::IterationCap;
        }
        t += 1;
        let candidate = draw_subspace(&mut draw_rng, p, config.subspace_dim, t)?;
        let fit = evaluate_candidate(&candidate, &states, data, svr)?;
        let de = delta_e(cv_star, fit.cv)?;

        let decision = if de > config.selection_threshold {
            below_tau = 0;
            Decision::Accepted
        } else if de < config.termination_threshold {
            below_tau += 1;
            if below_tau >= config.patience {
                Decision::Terminated
            } else {
                Decision::Rejected
            }
        } else {
            below_tau = 0;
            Decision::Rejected
        };
        trace.records.push(TraceRecord {
            t,
            indices: candidate.indices.clone(),
            cv: fit.cv,
            delta_e: de,
            decision,
        });
        log::debug!("t={t} {:?} cv={:.6} de={:.6} {:?}", candidate.indices, fit.cv, de, decision);

        match decision {
            Decision::Accepted => {
                for (st, pred) in states.iter_mut().zip(&fit.fold_predictions) {
                    st.residuals -= pred;
                }
                cv_star = fit.cv;
                trace.best_cv_history.push(cv_star);
                accepted.push(AcceptedSubspace {
                    subspace: candidate,
                    fold_models: fit.fold_models,
                });
            }
            Decision::Terminated => break StopReason::Converged,
            Decision::Rejected => {}
        }
    };

    Ok(SearchOutcome {
        accepted,
        trace,
        cv0,
        cv_star,
        iterations: t,
        stop,
        split,
        fold_states: states,
    })
}
