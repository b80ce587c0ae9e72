//! Datasets: CSV ingestion, z-score normalization and synthetic generation.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_for, Stream};

/// Mean and sample standard deviation of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub sd: f64,
}

impl ColumnStats {
    pub fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count();
        if n == 0 {
            return ColumnStats { mean: 0.0, sd: 0.0 };
        }
        let mean = values.clone().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        ColumnStats { mean, sd }
    }

    /// A zero sd marks a constant column; it maps to 0.
    #[inline]
    pub fn forward(&self, v: f64) -> f64 {
        if self.sd > 0.0 {
            (v - self.mean) / self.sd
        } else {
            0.0
        }
    }

    #[inline]
    pub fn inverse(&self, z: f64) -> f64 {
        self.mean + self.sd * z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub predictors: Vec<ColumnStats>,
    pub response: ColumnStats,
}

impl Normalization {
    /// Normalize raw predictor rows.
    pub fn apply_x(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.predictors.len() {
            return Err(Error::input(format!(
                "expected {} predictor columns, got {}",
                self.predictors.len(),
                x.ncols()
            )));
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            self.predictors[j].forward(x[(i, j)])
        }))
    }
}

/// Response column selector for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseColumn {
    Name(String),
    Index(usize),
    Last,
}

impl std::str::FromStr for ResponseColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => ResponseColumn::Index(i),
            Err(_) => ResponseColumn::Name(s.to_string()),
        })
    }
}

/// Predictor matrix, response and labels.
///
/// After [`Dataset::normalize`] the values are z-scores and `normalization`
/// holds the statistics needed to map back.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub labels: Vec<String>,
    pub response_label: String,
    pub normalization: Option<Normalization>,
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, labels: Vec<String>, response_label: impl Into<String>) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Err(Error::input(format!("dataset must have n >= 1 and p >= 1, got {n}x{p}")));
        }
        if y.len() != n {
            return Err(Error::input(format!("response has {} rows, predictors have {n}", y.len())));
        }
        if labels.len() != p {
            return Err(Error::input(format!("{} labels for {p} predictors", labels.len())));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::input(format!("duplicate column label {l:?}")));
            }
        }
        if let Some((i, j)) = (0..n)
            .flat_map(|i| (0..p).map(move |j| (i, j)))
            .find(|&(i, j)| !x[(i, j)].is_finite())
        {
            return Err(Error::input(format!("non-finite predictor at row {}, column {}", i + 1, j + 1)));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite response at row {}", i + 1)));
        }
        Ok(Dataset {
            x,
            y,
            labels,
            response_label: response_label.into(),
            normalization: None,
            warnings: Vec::new(),
        })
    }

    /// Labels `x1..xp`, response `y`.
    pub fn with_default_labels(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let labels = default_labels(x.ncols());
        Self::new(x, y, labels, "y")
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalization.is_some()
    }

    /// Z-score every predictor column and the response using the sample sd.
    pub fn normalize(&self) -> Result<Dataset> {
        if self.is_normalized() {
            return Err(Error::input("dataset is already normalized"));
        }
        let (n, p) = self.x.shape();
        let mut warnings = self.warnings.clone();
        let predictors: Vec<ColumnStats> = (0..p)
            .map(|j| {
                let s = ColumnStats::of(self.x.column(j).iter().copied());
                if s.sd == 0.0 {
                    let msg = format!("predictor {:?} is constant; left at 0 after centering", self.labels[j]);
                    log::warn!("{msg}");
                    warnings.push(msg);
                }
                s
            })
            .collect();
        let response = ColumnStats::of(self.y.iter().copied());
        if response.sd == 0.0 {
            let msg = format!("response {:?} is constant", self.response_label);
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let x = DMatrix::from_fn(n, p, |i, j| predictors[j].forward(self.x[(i, j)]));
        let y = self.y.map(|v| response.forward(v));
        Ok(Dataset {
            x,
            y,
            labels: self.labels.clone(),
            response_label: self.response_label.clone(),
            normalization: Some(Normalization { predictors, response }),
            warnings,
        })
    }

    /// Map normalized response values back to original units.
    pub fn denormalize_response(&self, z: &DVector<f64>) -> DVector<f64> {
        match &self.normalization {
            Some(norm) => z.map(|v| norm.response.inverse(v)),
            None => z.clone(),
        }
    }

    /// Response in original units.
    pub fn raw_response(&self) -> DVector<f64> {
        self.denormalize_response(&self.y)
    }

    /// Rows `rows` of this dataset, keeping labels and normalization statistics.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let x = DMatrix::from_fn(rows.len(), self.p(), |i, j| self.x[(rows[i], j)]);
        let y = DVector::from_fn(rows.len(), |i, _| self.y[rows[i]]);
        Dataset {
            x,
            y,
            labels: self.labels.clone(),
            response_label: self.response_label.clone(),
            normalization: self.normalization.clone(),
            warnings: self.warnings.clone(),
        }
    }

    /// Submatrix of the given rows and predictor columns.
    pub fn project(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.x[(rows[i], cols[j])])
    }

    /// All rows, selected columns.
    pub fn columns(&self, cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), cols.len(), |i, j| self.x[(i, cols[j])])
    }

    /// Write predictors followed by the response. Values use the shortest
    /// representation that parses back to the same `f64`.
    pub fn save_csv(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut buf = String::new();
        if let Some(c) = comment {
            buf.push_str("# ");
            buf.push_str(c);
            buf.push('\n');
        }
        let mut header: Vec<&str> = self.labels.iter().map(String::as_str).collect();
        header.push(&self.response_label);
        buf.push_str(&header.join(","));
        buf.push('\n');
        for i in 0..self.n() {
            let mut cells: Vec<String> = self.x.row(i).iter().map(|v| v.to_string()).collect();
            cells.push(self.y[i].to_string());
            buf.push_str(&cells.join(","));
            buf.push('\n');
        }
        f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub fn default_labels(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

/// A parsed numeric table. Zero data rows are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
    pub width: usize,
}

/// Read a comma-delimited numeric table. Lines starting with `#` and blank
/// lines are skipped.
pub fn read_table(path: &Path, has_header: bool) -> Result<Table> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut headers = None;
    let mut rows = Vec::new();
    let mut width = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        if has_header && headers.is_none() {
            headers = Some(rec.iter().map(str::to_string).collect::<Vec<_>>());
            width = Some(rec.len());
            continue;
        }
        match width {
            Some(w) if w != rec.len() => {
                return Err(Error::input(format!(
                    "{}: line {line} has {} fields, expected {w}",
                    path.display(),
                    rec.len()
                )));
            }
            None => width = Some(rec.len()),
            _ => {}
        }
        let mut row = Vec::with_capacity(rec.len());
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::input(format!(
                    "{}: line {line}, column {}: not a number: {cell:?}",
                    path.display(),
                    j + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::input(format!(
                    "{}: line {line}, column {}: non-finite value",
                    path.display(),
                    j + 1
                )));
            }
            row.push(v);
        }
        rows.push(row);
    }
    Ok(Table {
        headers,
        rows,
        width: width.unwrap_or(0),
    })
}

/// Load a CSV into a raw (unnormalized) dataset.
pub fn load_csv(path: &Path, has_header: bool, response: &ResponseColumn) -> Result<Dataset> {
    let table = read_table(path, has_header)?;
    if table.width < 2 {
        return Err(Error::input(format!(
            "{}: need at least one predictor and a response column",
            path.display()
        )));
    }
    let names = table
        .headers
        .clone()
        .unwrap_or_else(|| (1..=table.width).map(|j| format!("c{j}")).collect());
    let resp = match response {
        ResponseColumn::Last => table.width - 1,
        ResponseColumn::Index(i) if *i < table.width => *i,
        ResponseColumn::Index(i) => {
            return Err(Error::input(format!(
                "{}: response column {i} out of range (width {})",
                path.display(),
                table.width
            )))
        }
        ResponseColumn::Name(name) => names.iter().position(|h| h == name).ok_or_else(|| {
            Error::input(format!("{}: no response column named {name:?}", path.display()))
        })?,
    };
    if table.rows.is_empty() {
        return Err(Error::input(format!("{}: no data rows", path.display())));
    }
    let n = table.rows.len();
    let p = table.width - 1;
    let pred_cols: Vec<usize> = (0..table.width).filter(|&j| j != resp).collect();
    let x = DMatrix::from_fn(n, p, |i, j| table.rows[i][pred_cols[j]]);
    let y = DVector::from_fn(n, |i, _| table.rows[i][resp]);
    let (labels, response_label) = if table.headers.is_some() {
        (
            pred_cols.iter().map(|&j| names[j].clone()).collect(),
            names[resp].clone(),
        )
    } else {
        (default_labels(p), "y".to_string())
    };
    Dataset::new(x, y, labels, response_label)
}

/// One additive term of a synthetic response. Indices are 0-based columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Term {
    /// `coef · x[index]`
    Linear { index: usize, coef: f64 },
    /// `coef · Π x[indices]`
    Product { indices: Vec<usize>, coef: f64 },
    /// `coef · x[index]^power`
    Polynomial { index: usize, power: i32, coef: f64 },
}

impl Term {
    pub fn indices(&self) -> Vec<usize> {
        match self {
            Term::Linear { index, .. } | Term::Polynomial { index, .. } => vec![*index],
            Term::Product { indices, .. } => indices.clone(),
        }
    }

    fn eval(&self, row: &[f64]) -> f64 {
        match self {
            Term::Linear { index, coef } => coef * row[*index],
            Term::Product { indices, coef } => coef * indices.iter().map(|&i| row[i]).product::<f64>(),
            Term::Polynomial { index, power, coef } => coef * row[*index].powi(*power),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub p: usize,
    pub terms: Vec<Term>,
    pub noise_sd: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// `x1 + 2·x2·x3 + N(0, noise_sd²)` on `p` uniform columns.
    pub fn interaction_benchmark(n: usize, p: usize, noise_sd: f64, seed: u64) -> Self {
        SynthSpec {
            n,
            p,
            terms: vec![
                Term::Linear { index: 0, coef: 1.0 },
                Term::Product { indices: vec![1, 2], coef: 2.0 },
            ],
            noise_sd,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::input("synthetic spec needs n >= 1 and p >= 1"));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::input("noise_sd must be finite and >= 0"));
        }
        for t in &self.terms {
            let idx = t.indices();
            if idx.is_empty() {
                return Err(Error::input("synthetic term with no variables"));
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= self.p) {
                return Err(Error::input(format!("term index {bad} out of range for p = {}", self.p)));
            }
        }
        Ok(())
    }
}

/// Latin hypercube design on `[0, 1]^p`: in every column each of the `n`
/// equal-width bins holds exactly one point.
pub fn latin_hypercube<R: Rng>(n: usize, p: usize, rng: &mut R) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, p);
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..p {
        perm.shuffle(rng);
        for i in 0..n {
            let u: f64 = rng.gen();
            let mut v = (perm[i] as f64 + u) / n as f64;
            if (v * n as f64).floor() as usize != perm[i] {
                v = (perm[i] as f64 + 0.5) / n as f64;
            }
            x[(i, j)] = v;
        }
    }
    x
}

/// Generate a raw dataset and the index sets of its true terms.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(Dataset, Vec<Vec<usize>>)> {
    spec.validate()?;
    let mut design_rng = rng_for(spec.seed, Stream::SynthDesign);
    let mut noise_rng = rng_for(spec.seed, Stream::SynthNoise);
    let x = latin_hypercube(spec.n, spec.p, &mut design_rng);
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::input(e.to_string()))?;
    let y = DVector::from_fn(spec.n, |i, _| {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        let signal: f64 = spec.terms.iter().map(|t| t.eval(&row)).sum();
        let e = if spec.noise_sd > 0.0 { noise.sample(&mut noise_rng) } else { 0.0 };
        signal + e
    });
    let truth = spec.terms.iter().map(Term::indices).collect();
    Ok((Dataset::with_default_labels(x, y)?, truth))
}
