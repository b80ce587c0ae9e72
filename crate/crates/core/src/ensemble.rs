//! The full additive model: a baseline plus one SVR per accepted subspace,
//! refitted stagewise on all learning rows in acceptance order.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnStats, Dataset, Normalization};
use crate::error::{Error, Result};
use crate::search::{SearchConfig, Subspace};
use crate::svr::{svr_fit, SvrConfig, SvrModel};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedSubspace {
    pub indices: Vec<usize>,
    pub model: SvrModel,
}

/// Predictions are `baseline + Σⱼ contributionⱼ` in original response units,
/// where `contributionⱼ = sd(y) · gⱼ(zⱼ)` on normalized inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub version: u32,
    pub p: usize,
    pub labels: Vec<String>,
    pub response_label: String,
    pub baseline: f64,
    pub normalization: Normalization,
    pub subspaces: Vec<FittedSubspace>,
    pub svr_config: SvrConfig,
    pub search_config: SearchConfig,
    pub seed: u64,
}

/// Statistics that leave values unchanged, for data that was never normalized.
fn identity_normalization(p: usize) -> Normalization {
    let id = ColumnStats { mean: 0.0, sd: 1.0 };
    Normalization {
        predictors: vec![id; p],
        response: id,
    }
}

/// Result of [`finalize`]: the model plus its fitted values on the
/// learning rows, in the dataset's (normalized) units.
#[derive(Debug, Clone)]
pub struct Finalized {
    pub model: EnsembleModel,
    pub fitted: DVector<f64>,
}

/// Refit every accepted subspace on the whole learning set against the
/// running residuals `y − baseline − Σ_{l<j} ĝ_l`.
pub fn finalize(
    data: &Dataset,
    accepted: &[Subspace],
    svr: &SvrConfig,
    search: &SearchConfig,
) -> Result<Finalized> {
    let p = data.p();
    for s in accepted {
        if let Some(&bad) = s.indices.iter().find(|&&i| i >= p) {
            return Err(Error::input(format!("subspace index {bad} out of range for p = {p}")));
        }
    }
    let norm = data.normalization.clone().unwrap_or_else(|| identity_normalization(p));
    let base = data.y.mean();
    let mut fitted = DVector::from_element(data.n(), base);
    let mut resid = data.y.map(|v| v - base);
    let mut subspaces = Vec::with_capacity(accepted.len());
    for s in accepted {
        let z = data.columns(&s.indices);
        let model = svr_fit(&z, resid.as_slice(), svr)?;
        let g = model.predict(&z)?;
        resid -= &g;
        fitted += &g;
        subspaces.push(FittedSubspace {
            indices: s.indices.clone(),
            model,
        });
    }
    let model = EnsembleModel {
        version: MODEL_FORMAT_VERSION,
        p,
        labels: data.labels.clone(),
        response_label: data.response_label.clone(),
        baseline: norm.response.inverse(base),
        normalization: norm,
        subspaces,
        svr_config: *svr,
        search_config: *search,
        seed: search.seed,
    };
    Ok(Finalized { model, fitted })
}

impl EnsembleModel {
    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.p {
            return Err(Error::input(format!(
                "model expects p = {} predictors, got {}",
                self.p,
                x.ncols()
            )));
        }
        if let Some((i, j)) = (0..x.nrows())
            .flat_map(|i| (0..x.ncols()).map(move |j| (i, j)))
            .find(|&(i, j)| !x[(i, j)].is_finite())
        {
            return Err(Error::input(format!("non-finite input at row {}, column {}", i + 1, j + 1)));
        }
        Ok(())
    }

    /// Per-subspace contributions in original units, one vector per subspace.
    pub fn components(&self, x: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
        self.check_input(x)?;
        let xn = self.normalization.apply_x(x)?;
        let scale = self.normalization.response.sd;
        self.subspaces
            .iter()
            .map(|s| {
                let z = DMatrix::from_fn(xn.nrows(), s.indices.len(), |i, j| xn[(i, s.indices[j])]);
                Ok(s.model.predict(&z)? * scale)
            })
            .collect()
    }

    /// Predictions for raw (unnormalized) rows, in original units.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let comps = self.components(x)?;
        let mut out = DVector::from_element(x.nrows(), self.baseline);
        for c in &comps {
            out += c;
        }
        Ok(out)
    }

    /// Contribution of every subspace to the prediction at `x`.
    pub fn decompose(&self, x: &[f64]) -> Result<Vec<(Vec<usize>, f64)>> {
        let row = DMatrix::from_row_slice(1, x.len(), x);
        let comps = self.components(&row)?;
        Ok(self
            .subspaces
            .iter()
            .zip(comps)
            .map(|(s, c)| (s.indices.clone(), c[0]))
            .collect())
    }

    pub fn subspace_indices(&self) -> Vec<Vec<usize>> {
        self.subspaces.iter().map(|s| s.indices.clone()).collect()
    }

    /// Pretty JSON, preceded by a `#` comment line when given.
    pub fn to_text(&self, comment: Option<&str>) -> Result<String> {
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Invariant(format!("model serialization failed: {e}")))?;
        Ok(match comment {
            Some(c) => format!("# {c}\n{body}\n"),
            None => format!("{body}\n"),
        })
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let body: String = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .collect::<Vec<_>>()
            .join("\n");
        let model: EnsembleModel =
            serde_json::from_str(&body).map_err(|e| Error::input(format!("invalid model file: {e}")))?;
        if model.version != MODEL_FORMAT_VERSION {
            return Err(Error::input(format!(
                "unsupported model version {} (expected {MODEL_FORMAT_VERSION})",
                model.version
            )));
        }
        if model.labels.len() != model.p || model.normalization.predictors.len() != model.p {
            return Err(Error::input("model file is internally inconsistent in p"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        std::fs::write(path, self.to_text(comment)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
