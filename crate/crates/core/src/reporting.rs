//! Outer k-fold evaluation and critical-subspace reporting.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::ensemble::EnsembleModel;
use crate::error::{Error, Result};
use crate::gcv::{grid_search, GcvVariant, GridCell, HyperGrid};
use crate::search::{rms, FoldSplit, SearchConfig, TraceRecord};
use crate::seed::{child_seed, rng_for, Stream};
use crate::svr::SvrConfig;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold_id: usize,
    pub test_rmse: f64,
    pub accepted_subspaces: Vec<Vec<usize>>,
    pub optimal_epsilon: f64,
    pub optimal_cost: f64,
    pub n_learning: usize,
    pub n_test: usize,
    pub grid: Vec<GridCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableReport {
    pub per_fold_variable_sets: Vec<BTreeSet<usize>>,
    pub common_variables: BTreeSet<usize>,
    /// Number of accepted subspaces, over all folds, that contain each variable.
    pub subspace_frequency: BTreeMap<usize, usize>,
}

/// Per fold, the union of accepted-subspace members; common variables are
/// the intersection of those unions.
pub fn extract_common_variables(folds: &[FoldReport]) -> VariableReport {
    let per_fold: Vec<BTreeSet<usize>> = folds
        .iter()
        .map(|f| f.accepted_subspaces.iter().flatten().copied().collect())
        .collect();
    let common = per_fold
        .split_first()
        .map(|(first, rest)| {
            rest.iter()
                .fold(first.clone(), |acc, s| acc.intersection(s).copied().collect())
        })
        .unwrap_or_default();
    let mut freq = BTreeMap::new();
    for f in folds {
        for s in &f.accepted_subspaces {
            let members: BTreeSet<usize> = s.iter().copied().collect();
            for v in members {
                *freq.entry(v).or_insert(0) += 1;
            }
        }
    }
    VariableReport {
        per_fold_variable_sets: per_fold,
        common_variables: common,
        subspace_frequency: freq,
    }
}

/// Mean and sample (n − 1) standard deviation.
pub fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterEvaluation {
    pub schema_version: u32,
    pub folds: Vec<FoldReport>,
    pub mean_rmse: f64,
    pub sd_rmse: f64,
    pub variables: VariableReport,
    pub variant: GcvVariant,
    pub labels: Vec<String>,
}

/// Settings shared by every outer fold.
#[derive(Debug, Clone)]
pub struct EvaluationSetup {
    pub search: SearchConfig,
    pub grid: HyperGrid,
    pub svr_template: SvrConfig,
    pub variant: GcvVariant,
    /// Number of outer test folds.
    pub outer_folds: usize,
}

/// Hold out each outer fold in turn, tune and fit on the rest, and score the
/// held-out rows in original units.
pub fn outer_evaluate(raw: &Dataset, setup: &EvaluationSetup) -> Result<OuterEvaluation> {
    if raw.is_normalized() {
        return Err(Error::input("outer evaluation expects raw (unnormalized) data"));
    }
    let k = setup.outer_folds;
    if raw.n() < 2 * k {
        return Err(Error::input(format!(
            "outer evaluation with {k} folds needs at least {} rows, got {}",
            2 * k,
            raw.n()
        )));
    }
    let data = raw.normalize()?;
    let mut rng = rng_for(setup.search.seed, Stream::OuterFolds);
    let split = FoldSplit::shuffled(raw.n(), k, &mut rng)?;

    let reports: Vec<Result<FoldReport>> = (0..k)
        .into_par_iter()
        .map(|f| {
            let test = split.validation_rows(f);
            let learn = split.training_rows(f);
            let learn_set: BTreeSet<usize> = learn.iter().copied().collect();
            if test.iter().any(|i| learn_set.contains(i)) || test.len() + learn.len() != raw.n() {
                return Err(Error::Invariant(format!("outer fold {f} test rows overlap learning rows")));
            }
            let learning = data.subset(&learn);
            let cfg = SearchConfig {
                seed: child_seed(setup.search.seed, f as u64),
                ..setup.search
            };
            let grid = grid_search(&learning, &setup.grid, &cfg, &setup.svr_template, setup.variant)?;
            let test_raw = raw.subset(&test);
            let pred = grid.best_model.predict(&test_raw.x)?;
            let test_rmse = rms(pred.iter().zip(test_raw.y.iter()).map(|(a, b)| a - b));
            Ok(FoldReport {
                fold_id: f,
                test_rmse,
                accepted_subspaces: grid.best_model.subspace_indices(),
                optimal_epsilon: grid.best_epsilon,
                optimal_cost: grid.best_cost,
                n_learning: learn.len(),
                n_test: test.len(),
                grid: grid.table,
            })
        })
        .collect();
    let folds = reports.into_iter().collect::<Result<Vec<_>>>()?;
    let rmses: Vec<f64> = folds.iter().map(|f| f.test_rmse).collect();
    let (mean_rmse, sd_rmse) = mean_and_sd(&rmses);
    let variables = extract_common_variables(&folds);
    Ok(OuterEvaluation {
        schema_version: REPORT_SCHEMA_VERSION,
        folds,
        mean_rmse,
        sd_rmse,
        variables,
        variant: setup.variant,
        labels: raw.labels.clone(),
    })
}

/// One accepted subspace, in acceptance order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalRow {
    pub rank: usize,
    pub indices: Vec<usize>,
    pub labels: Vec<String>,
    /// Per member, whether it is in the supplied common-variable set.
    pub common: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalTable {
    pub schema_version: u32,
    pub rows: Vec<CriticalRow>,
}

pub fn critical_subspace_table(
    subspaces: &[Vec<usize>],
    labels: &[String],
    common: Option<&BTreeSet<usize>>,
) -> Result<CriticalTable> {
    let p = labels.len();
    let mut rows = Vec::with_capacity(subspaces.len());
    for (r, idx) in subspaces.iter().enumerate() {
        if let Some(&bad) = idx.iter().find(|&&i| i >= p) {
            return Err(Error::input(format!("subspace index {bad} has no label (p = {p})")));
        }
        rows.push(CriticalRow {
            rank: r + 1,
            indices: idx.clone(),
            labels: idx.iter().map(|&i| labels[i].clone()).collect(),
            common: idx.iter().map(|i| common.is_some_and(|c| c.contains(i))).collect(),
        });
    }
    Ok(CriticalTable {
        schema_version: REPORT_SCHEMA_VERSION,
        rows,
    })
}

/// Critical-subspace table of a fitted model.
pub fn report_critical_subspaces(
    model: &EnsembleModel,
    labels: &[String],
    common: Option<&BTreeSet<usize>>,
) -> Result<CriticalTable> {
    if labels.len() != model.p {
        return Err(Error::input(format!(
            "{} labels supplied for a model with p = {}",
            labels.len(),
            model.p
        )));
    }
    critical_subspace_table(&model.subspace_indices(), labels, common)
}

impl CriticalTable {
    /// Aligned text; common members are marked with `*`.
    pub fn render(&self) -> String {
        let mut out = String::from("rank  subspace\n");
        for row in &self.rows {
            let members: Vec<String> = row
                .labels
                .iter()
                .zip(&row.common)
                .map(|(l, &c)| if c { format!("{l}*") } else { l.clone() })
                .collect();
            out.push_str(&format!("{:>4}  {{{}}}\n", row.rank, members.join(", ")));
        }
        out
    }
}

fn label_set(set: &BTreeSet<usize>, labels: &[String]) -> String {
    let names: Vec<&str> = set
        .iter()
        .map(|&i| labels.get(i).map(String::as_str).unwrap_or("?"))
        .collect();
    format!("{{{}}}", names.join(", "))
}

impl OuterEvaluation {
    /// Aligned text summary: per-fold RMSE and hyperparameters, mean/sd,
    /// common variables, and each fold's critical subspaces.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("GCV variant: {}\n\n", self.variant));
        out.push_str("fold   test_rmse   epsilon      cost  subspaces\n");
        for f in &self.folds {
            out.push_str(&format!(
                "{:>4}  {:>10.6}  {:>8}  {:>8}  {:>9}\n",
                f.fold_id + 1,
                f.test_rmse,
                f.optimal_epsilon,
                f.optimal_cost,
                f.accepted_subspaces.len()
            ));
        }
        out.push_str(&format!("\nmean RMSE {:.6}  sd {:.6}\n", self.mean_rmse, self.sd_rmse));
        out.push_str(&format!(
            "common variables: {}\n",
            label_set(&self.variables.common_variables, &self.labels)
        ));
        for f in &self.folds {
            out.push_str(&format!("\nfold {} critical subspaces\n", f.fold_id + 1));
            match critical_subspace_table(&f.accepted_subspaces, &self.labels, Some(&self.variables.common_variables)) {
                Ok(t) => out.push_str(&t.render()),
                Err(e) => out.push_str(&format!("  ({e})\n")),
            }
        }
        out
    }
}

/// Short summary of a search trace.
pub fn render_trace_summary(records: &[TraceRecord]) -> String {
    use crate::search::Decision;
    let accepted = records.iter().filter(|r| r.decision == Decision::Accepted).count();
    let last = records.last();
    format!(
        "iterations {}  accepted {}  final decision {}\n",
        records.len(),
        accepted,
        last.map(|r| format!("{:?}", r.decision).to_lowercase()).unwrap_or_else(|| "none".into())
    )
}
