//! Hyperparameter selection by generalized cross-validation.
//!
//! ```text
//! GCV = (1/n) Σᵢ [ (yᵢ − ŷᵢ) / (1 − tr(S)/n) ]²
//! ```
//!
//! `tr(S)` is approximated from squared-loss smoothers with the same kernel
//! and `λ = 1/C`. With `S′ⱼ = Kⱼ(Kⱼ + λI)⁻¹` the stagewise smoother of the
//! `j`-th subspace is `Sⱼ = S′ⱼ (I − Σ_{l<j} S_l)`, so `ŷ = (Σⱼ Sⱼ) y`.
//! A1 uses `Σ tr(Sⱼ)`, A2 the cheaper `Σ tr(S′ⱼ)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::ensemble::{finalize, EnsembleModel};
use crate::error::{Error, Result};
use crate::kernels::{kernel_matrix, KernelSpec};
use crate::search::{run_search, SearchConfig, SearchOutcome};
use crate::svr::{ridge_smoother_from_gram, SvrConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum GcvVariant {
    /// Exact stagewise recursion.
    A1,
    /// Sum of per-subspace smoother traces.
    #[default]
    A2,
}

impl std::fmt::Display for GcvVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GcvVariant::A1 => "A1",
            GcvVariant::A2 => "A2",
        })
    }
}

impl std::str::FromStr for GcvVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a1" => Ok(GcvVariant::A1),
            "a2" => Ok(GcvVariant::A2),
            other => Err(Error::input(format!("unknown GCV variant {other:?} (use A1 or A2)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub epsilons: Vec<f64>,
    pub costs: Vec<f64>,
}

impl Default for HyperGrid {
    /// ε ∈ {0.01, 0.1, 0.5}, C ∈ {1, 2, 5}.
    fn default() -> Self {
        HyperGrid {
            epsilons: vec![0.01, 0.1, 0.5],
            costs: vec![1.0, 2.0, 5.0],
        }
    }
}

impl HyperGrid {
    pub fn single(epsilon: f64, cost: f64) -> Self {
        HyperGrid {
            epsilons: vec![epsilon],
            costs: vec![cost],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() || self.costs.is_empty() {
            return Err(Error::input("hyperparameter grid lists must be nonempty"));
        }
        if self.epsilons.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::input("grid epsilons must be finite and >= 0"));
        }
        if self.costs.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::input("grid costs must be finite and > 0"));
        }
        for list in [&self.epsilons, &self.costs] {
            for (i, a) in list.iter().enumerate() {
                if list[..i].contains(a) {
                    return Err(Error::input(format!("duplicate grid value {a}")));
                }
            }
        }
        Ok(())
    }

    /// Cells in enumeration order: ε outer, C inner.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.epsilons
            .iter()
            .flat_map(|&e| self.costs.iter().map(move |&c| (e, c)))
            .collect()
    }
}

/// Per-subspace squared-loss smoothers `S′ⱼ` on the full learning rows.
pub fn ridge_smoothers(data: &Dataset, accepted: &[Vec<usize>], kernel: &KernelSpec, lambda: f64) -> Result<Vec<DMatrix<f64>>> {
    accepted
        .iter()
        .map(|idx| {
            let k = kernel_matrix(kernel, &data.columns(idx))?;
            ridge_smoother_from_gram(&k, lambda)
        })
        .collect()
}

/// Stagewise smoothers `Sⱼ = S′ⱼ (I − Σ_{l<j} S_l)`.
pub fn stagewise_smoothers(primes: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let Some(first) = primes.first() else {
        return Vec::new();
    };
    let n = first.nrows();
    let mut remainder = DMatrix::<f64>::identity(n, n);
    let mut out = Vec::with_capacity(primes.len());
    for sp in primes {
        let sj = sp * &remainder;
        remainder -= &sj;
        out.push(sj);
    }
    out
}

/// `tr(S)` under the chosen variant; 0 for an empty model.
pub fn smoother_traces(
    data: &Dataset,
    accepted: &[Vec<usize>],
    kernel: &KernelSpec,
    lambda: f64,
    variant: GcvVariant,
) -> Result<f64> {
    if accepted.is_empty() {
        return Ok(0.0);
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::numeric(format!("lambda must be > 0, got {lambda}")));
    }
    let primes = ridge_smoothers(data, accepted, kernel, lambda)?;
    Ok(match variant {
        GcvVariant::A2 => primes.iter().map(|s| s.trace()).sum(),
        GcvVariant::A1 => {
            // only the running remainder I − Σ S_l is kept
            let n = data.n();
            let mut remainder = DMatrix::<f64>::identity(n, n);
            let mut total = 0.0;
            for sp in &primes {
                let sj = sp * &remainder;
                total += sj.trace();
                remainder -= &sj;
            }
            total
        }
    })
}

/// Fitted values of stagewise squared-loss fitting: each stage smooths the
/// current residual with its own `S′ⱼ`.
pub fn stagewise_ridge_fitted(primes: &[DMatrix<f64>], y: &DVector<f64>) -> DVector<f64> {
    let mut fitted = DVector::zeros(y.len());
    let mut resid = y.clone();
    for sp in primes {
        let g = sp * &resid;
        resid -= &g;
        fitted += g;
    }
    fitted
}

/// The GCV criterion for fitted values `fitted` of targets `y`.
pub fn gcv_score(y: &DVector<f64>, fitted: &DVector<f64>, trace_total: f64) -> Result<f64> {
    let n = y.len();
    if n == 0 || fitted.len() != n {
        return Err(Error::input("GCV needs equal-length nonempty vectors"));
    }
    let nf = n as f64;
    if !(trace_total < nf) {
        return Err(Error::numeric(format!(
            "smoother trace {trace_total} is not below n = {n}"
        )));
    }
    let denom = 1.0 - trace_total / nf;
    let s: f64 = y
        .iter()
        .zip(fitted.iter())
        .map(|(a, b)| {
            let r = (a - b) / denom;
            r * r
        })
        .sum();
    Ok(s / nf)
}

/// One row of the grid table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub epsilon: f64,
    pub cost: f64,
    pub variant: GcvVariant,
    pub trace: f64,
    /// `+∞` when the smoother is saturated (`trace ≥ n`).
    pub gcv: f64,
    pub n_subspaces: usize,
    pub cv_star_final: f64,
    pub iterations: usize,
    pub hit_cap: bool,
}

pub const GRID_TABLE_HEADER: &str = "epsilon,cost,variant,trace,gcv,n_subspaces,cv_star_final";

impl GridCell {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epsilon, self.cost, self.variant, self.trace, self.gcv, self.n_subspaces, self.cv_star_final
        )
    }
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best_epsilon: f64,
    pub best_cost: f64,
    pub best_model: EnsembleModel,
    pub best_search: SearchOutcome,
    pub table: Vec<GridCell>,
}

impl GridResult {
    pub fn table_csv(&self, comment: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(c) = comment {
            s.push_str(&format!("# {c}\n"));
        }
        s.push_str(GRID_TABLE_HEADER);
        s.push('\n');
        for row in &self.table {
            s.push_str(&row.csv_row());
            s.push('\n');
        }
        s
    }
}

/// Run the search and the full refit for every `(ε, C)` cell with the same
/// seed, and keep the cell with the smallest GCV. Ties go to the smaller
/// `C`, then the smaller `ε`.
pub fn grid_search(
    data: &Dataset,
    grid: &HyperGrid,
    search_cfg: &SearchConfig,
    svr_template: &SvrConfig,
    variant: GcvVariant,
) -> Result<GridResult> {
    grid.validate()?;
    let cells = grid.cells();
    let results: Vec<Result<(GridCell, EnsembleModel, SearchOutcome)>> = cells
        .par_iter()
        .map(|&(epsilon, cost)| {
            let svr = SvrConfig {
                epsilon,
                cost,
                ..*svr_template
            };
            let outcome = run_search(data, search_cfg, &svr)?;
            let accepted = outcome.subspaces();
            let fin = finalize(data, &accepted, &svr, search_cfg)?;
            let idx: Vec<Vec<usize>> = accepted.iter().map(|s| s.indices.clone()).collect();
            let trace = smoother_traces(data, &idx, &svr.kernel, svr.lambda(), variant)?;
            let gcv = match gcv_score(&data.y, &fin.fitted, trace) {
                Ok(v) => v,
                Err(Error::Numeric(msg)) => {
                    log::warn!("grid cell eps={epsilon} C={cost}: {msg}; scored as +inf");
                    f64::INFINITY
                }
                Err(e) => return Err(e),
            };
            if outcome.hit_cap() {
                log::info!("grid cell eps={epsilon} C={cost} stopped at the iteration cap");
            }
            let cell = GridCell {
                epsilon,
                cost,
                variant,
                trace,
                gcv,
                n_subspaces: accepted.len(),
                cv_star_final: outcome.cv_star,
                iterations: outcome.iterations,
                hit_cap: outcome.hit_cap(),
            };
            Ok((cell, fin.model, outcome))
        })
        .collect();

    let mut table = Vec::with_capacity(cells.len());
    let mut models = Vec::with_capacity(cells.len());
    for r in results {
        let (cell, model, outcome) = r?;
        table.push(cell);
        models.push((model, outcome));
    }

    let mut best = 0;
    for i in 1..table.len() {
        let (a, b) = (&table[i], &table[best]);
        let better = match a.gcv.partial_cmp(&b.gcv) {
            Some(std::cmp::Ordering::Less) => true,
            Some(std::cmp::Ordering::Equal) => (a.cost, a.epsilon) < (b.cost, b.epsilon),
            _ => false,
        };
        if better {
            best = i;
        }
    }
    let (best_model, best_search) = models.swap_remove(best);
    Ok(GridResult {
        best_epsilon: table[best].epsilon,
        best_cost: table[best].cost,
        best_model,
        best_search,
        table,
    })
}
