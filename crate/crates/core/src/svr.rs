//! ε-insensitive support vector regression.
//!
//! The dual is solved in the usual `2n`-variable form: `α⁺, α⁻ ∈ [0, C]ⁿ`,
//! `Σ α⁺ − Σ α⁻ = 0`, minimizing
//!
//! ```text
//! ½ βᵀKβ − yᵀβ + ε Σ (α⁺ᵢ + α⁻ᵢ),    β = α⁺ − α⁻
//! ```
//!
//! by sequential minimal optimization. Each step picks the most violating
//! index `i`, then the partner `j` with the largest second-order decrease,
//! and solves the two-variable subproblem in closed form. The loop stops
//! when the maximal KKT violation drops below `tolerance`.
//!
//! The fitted function is `g(z) = Σ βᵢ K(z, zᵢ) + b`.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{kernel_matrix, kernel_row, rows_of, KernelSpec};

const TAU: f64 = 1e-12;
/// Largest free set handed to the joint Newton step.
const MAX_FREE: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrConfig {
    /// Tube radius ε.
    pub epsilon: f64,
    /// Box bound C (= 1/λ).
    pub cost: f64,
    pub kernel: KernelSpec,
    /// Stop when the maximal KKT violation falls below this.
    pub tolerance: f64,
    /// Iteration budget in passes of `n` pair updates; `None` allows `max(100·n², 100000)` updates.
    pub max_passes: Option<usize>,
}

impl SvrConfig {
    pub fn new(epsilon: f64, cost: f64, kernel: KernelSpec) -> Self {
        SvrConfig {
            epsilon,
            cost,
            kernel,
            tolerance: 1e-4,
            max_passes: None,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_passes(mut self, passes: usize) -> Self {
        self.max_passes = Some(passes);
        self
    }

    /// Regularization weight λ = 1/C.
    pub fn lambda(&self) -> f64 {
        1.0 / self.cost
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::input(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.cost.is_finite() && self.cost > 0.0) {
            return Err(Error::input(format!("cost must be > 0, got {}", self.cost)));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::input(format!("tolerance must be > 0, got {}", self.tolerance)));
        }
        if self.max_passes == Some(0) {
            return Err(Error::input("max_passes must be positive"));
        }
        self.kernel.validate()
    }
}

/// A fitted submodel. Only points with nonzero coefficients are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    /// Signed dual coefficients βᵢ = α⁺ᵢ − α⁻ᵢ, aligned with `support_points`.
    pub alphas: Vec<f64>,
    pub support_points: Vec<Vec<f64>>,
    pub intercept: f64,
    pub kernel: KernelSpec,
    pub training_dimension: usize,
}

impl SvrModel {
    /// The zero function plus an intercept.
    pub fn constant(intercept: f64, kernel: KernelSpec, training_dimension: usize) -> Self {
        SvrModel {
            alphas: Vec::new(),
            support_points: Vec::new(),
            intercept,
            kernel,
            training_dimension,
        }
    }

    pub fn n_support(&self) -> usize {
        self.alphas.len()
    }

    pub fn predict(&self, z: &DMatrix<f64>) -> Result<DVector<f64>> {
        svr_predict(self, z)
    }
}

/// Full dual solution on the training set.
#[derive(Debug, Clone)]
pub struct DualSolution {
    /// βᵢ for every training point.
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub objective: f64,
    pub iterations: usize,
    /// Maximal KKT violation at exit.
    pub gap: f64,
    pub converged: bool,
}

/// `½ βᵀKβ − yᵀβ + ε‖β‖₁`.
pub fn dual_objective(k: &DMatrix<f64>, y: &[f64], epsilon: f64, beta: &[f64]) -> f64 {
    let n = beta.len();
    let mut quad = 0.0;
    for i in 0..n {
        if beta[i] == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for j in 0..n {
            row += k[(i, j)] * beta[j];
        }
        quad += beta[i] * row;
    }
    let lin: f64 = beta.iter().zip(y).map(|(b, t)| b * t).sum();
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    0.5 * quad - lin + epsilon * l1
}

fn check_finite(z: &DMatrix<f64>, what: &str) -> Result<()> {
    if z.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::input(format!("{what} contains non-finite values")))
    }
}

/// Solve the dual given a precomputed Gram matrix.
pub fn solve_dual(k: &DMatrix<f64>, y: &[f64], config: &SvrConfig) -> DualSolution {
    let n = y.len();
    let l = 2 * n;
    let c = config.cost;
    let eps = config.epsilon;

    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let kk = |t: usize, u: usize| k[(t % n, u % n)];
    let diag: Vec<f64> = (0..n).map(|t| k[(t, t)]).collect();

    let mut a = vec![0.0f64; l];
    let mut g: Vec<f64> = (0..l)
        .map(|t| if t < n { eps - y[t] } else { eps + y[t - n] })
        .collect();

    let max_iter = match config.max_passes {
        Some(passes) => passes.saturating_mul(n.max(1)),
        None => (100 * n * n).max(100_000),
    };
    let mut iterations = 0;
    let mut gap;
    let mut converged = false;

    loop {
        // most violating i from the "up" set
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if a[t] < c && -g[t] >= gmax {
                gmax = -g[t];
                i_sel = Some(t);
            }
        }
        for t in n..l {
            if a[t] > 0.0 && g[t] >= gmax {
                gmax = g[t];
                i_sel = Some(t);
            }
        }

        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        if let Some(i) = i_sel {
            let ri = i % n;
            let col_i = k.column(ri);
            let kii = diag[ri];
            let mut best = f64::INFINITY;
            let mut consider = |t: usize, tt: usize, grad_diff: f64| {
                if grad_diff > 0.0 {
                    let quad = kii + diag[tt] - 2.0 * col_i[tt];
                    let quad = if quad > 0.0 { quad } else { TAU };
                    let obj = -(grad_diff * grad_diff) / quad;
                    if obj <= best {
                        best = obj;
                        j_sel = Some(t);
                    }
                }
            };
            for t in 0..n {
                if a[t] > 0.0 {
                    gmax2 = gmax2.max(g[t]);
                    consider(t, t, gmax + g[t]);
                }
            }
            for t in n..l {
                if a[t] < c {
                    gmax2 = gmax2.max(-g[t]);
                    consider(t, t - n, gmax - g[t]);
                }
            }
        }

        gap = gmax + gmax2;
        if !gap.is_finite() || gap < config.tolerance {
            if !gap.is_finite() {
                gap = 0.0;
            }
            converged = true;
            break;
        }
        let (i, j) = match (i_sel, j_sel) {
            (Some(i), Some(j)) => (i, j),
            _ => {
                converged = true;
                break;
            }
        };
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        let (si, sj) = (sign(i), sign(j));
        let qij = si * sj * kk(i, j);
        let (old_ai, old_aj) = (a[i], a[j]);
        if si != sj {
            let mut quad = kk(i, i) + kk(j, j) + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-g[i] - g[j]) / quad;
            let diff = a[i] - a[j];
            a[i] += delta;
            a[j] += delta;
            if diff > 0.0 {
                if a[j] < 0.0 {
                    a[j] = 0.0;
                    a[i] = diff;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = -diff;
            }
            if diff > 0.0 {
                if a[i] > c {
                    a[i] = c;
                    a[j] = c - diff;
                }
            } else if a[j] > c {
                a[j] = c;
                a[i] = c + diff;
            }
        } else {
            let mut quad = kk(i, i) + kk(j, j) - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (g[i] - g[j]) / quad;
            let sum = a[i] + a[j];
            a[i] -= delta;
            a[j] += delta;
            if sum > c {
                if a[i] > c {
                    a[i] = c;
                    a[j] = sum - c;
                }
            } else if a[j] < 0.0 {
                a[j] = 0.0;
                a[i] = sum;
            }
            if sum > c {
                if a[j] > c {
                    a[j] = c;
                    a[i] = sum - c;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = sum;
            }
        }

        let dai = a[i] - old_ai;
        let daj = a[j] - old_aj;
        if dai != 0.0 || daj != 0.0 {
            let (ci, cj) = (si * dai, sj * daj);
            let (col_i, col_j) = (k.column(i % n), k.column(j % n));
            let (gp, gm) = g.split_at_mut(n);
            for t in 0..n {
                let d = ci * col_i[t] + cj * col_j[t];
                gp[t] += d;
                gm[t] -= d;
            }
        }
        if iterations % n.max(16) == 0 {
            free_set_step(k, c, &mut a, &mut g);
        }
    }

    // intercept: average over free variables, midpoint of the feasible interval otherwise
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut n_free = 0usize;
    for t in 0..l {
        let yg = sign(t) * g[t];
        if a[t] >= c {
            if sign(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if a[t] <= 0.0 {
            if sign(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            free_sum += yg;
        }
    }
    let rho = if n_free > 0 {
        free_sum / n_free as f64
    } else {
        let mid = 0.5 * (ub + lb);
        if mid.is_finite() {
            mid
        } else {
            0.0
        }
    };

    let beta: Vec<f64> = (0..n).map(|i| a[i] - a[i + n]).collect();
    let objective = dual_objective(k, y, eps, &beta);
    DualSolution {
        beta,
        intercept: -rho,
        objective,
        iterations,
        gap,
        converged,
    }
}

/// Joint Newton step over the free coefficients, with the equality
/// constraint and the sign pattern held fixed, clipped to the box. Pairwise
/// updates crawl when more points are free than the kernel has rank; this
/// moves along such flat directions at once. Never increases the objective.
fn free_set_step(k: &DMatrix<f64>, c: f64, a: &mut [f64], g: &mut [f64]) {
    let n = k.nrows();
    let free: Vec<usize> = (0..n)
        .filter(|&t| {
            let (p, m) = (a[t], a[t + n]);
            (p > 0.0 && p < c && m == 0.0) || (m > 0.0 && m < c && p == 0.0)
        })
        .collect();
    let m = free.len();
    if m < 2 || m > MAX_FREE {
        return;
    }
    let beta: Vec<f64> = free.iter().map(|&t| a[t] - a[t + n]).collect();
    let grad: Vec<f64> = free
        .iter()
        .zip(&beta)
        .map(|(&t, &b)| if b > 0.0 { g[t] } else { -g[t + n] })
        .collect();

    let scale = free.iter().map(|&t| k[(t, t)].abs()).sum::<f64>() / m as f64;
    let ridge = 1e-9 * scale.max(f64::MIN_POSITIVE);
    let mut kkt = DMatrix::zeros(m + 1, m + 1);
    let mut rhs = DVector::zeros(m + 1);
    for (r, &t) in free.iter().enumerate() {
        for (q, &u) in free.iter().enumerate() {
            kkt[(r, q)] = k[(t, u)];
        }
        kkt[(r, r)] += ridge;
        kkt[(r, m)] = 1.0;
        kkt[(m, r)] = 1.0;
        rhs[r] = -grad[r];
    }
    let Some(sol) = kkt.lu().solve(&rhs) else { return };
    let mut d = sol.rows(0, m).into_owned();
    if !d.iter().all(|v| v.is_finite()) {
        return;
    }
    // keep Σd = 0 exactly; the solve is ill-conditioned for low-rank K
    let mean = d.mean();
    d.add_scalar_mut(-mean);
    let slope: f64 = grad.iter().zip(d.iter()).map(|(g, d)| g * d).sum();
    if slope >= 0.0 {
        return;
    }
    let mut curv = 0.0;
    for (r, &t) in free.iter().enumerate() {
        for (q, &u) in free.iter().enumerate() {
            curv += d[r] * k[(t, u)] * d[q];
        }
    }

    let mut t_max = f64::INFINITY;
    let mut hit = None;
    for r in 0..m {
        let (b, dr) = (beta[r].abs(), d[r] * beta[r].signum());
        let room = if dr > 0.0 {
            (c - b) / dr
        } else if dr < 0.0 {
            b / -dr
        } else {
            continue;
        };
        if room < t_max {
            t_max = room;
            hit = Some(r);
        }
    }
    let step = if curv > 0.0 { (-slope / curv).min(t_max) } else { t_max };
    if !(step.is_finite() && step > 0.0) {
        return;
    }

    let mut delta = vec![0.0; m];
    for r in 0..m {
        let sgn = beta[r].signum();
        let mut mag = (beta[r] + step * d[r]).abs();
        if step == t_max && hit == Some(r) {
            mag = if d[r] * sgn > 0.0 { c } else { 0.0 };
        }
        let mag = mag.clamp(0.0, c);
        let t = free[r];
        if sgn > 0.0 {
            a[t] = mag;
        } else {
            a[t + n] = mag;
        }
        delta[r] = sgn * mag - beta[r];
    }
    let (gp, gm) = g.split_at_mut(n);
    for (r, &u) in free.iter().enumerate() {
        if delta[r] == 0.0 {
            continue;
        }
        let col = k.column(u);
        for t in 0..n {
            let v = delta[r] * col[t];
            gp[t] += v;
            gm[t] -= v;
        }
    }
}

/// Fit one submodel on rows of `z` against targets `r`.
pub fn svr_fit(z: &DMatrix<f64>, r: &[f64], config: &SvrConfig) -> Result<SvrModel> {
    svr_fit_with_solution(z, r, config).map(|(m, _)| m)
}

/// As [`svr_fit`], also returning the full dual solution.
pub fn svr_fit_with_solution(
    z: &DMatrix<f64>,
    r: &[f64],
    config: &SvrConfig,
) -> Result<(SvrModel, DualSolution)> {
    config.validate()?;
    let n = z.nrows();
    if n < 2 {
        return Err(Error::input(format!("SVR fit needs at least 2 points, got {n}")));
    }
    if r.len() != n {
        return Err(Error::input(format!(
            "SVR targets have length {} but data has {} rows",
            r.len(),
            n
        )));
    }
    check_finite(z, "SVR design")?;
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::input("SVR targets contain non-finite values"));
    }

    let k = kernel_matrix(&config.kernel, z)?;
    let sol = solve_dual(&k, r, config);

    let rows = rows_of(z);
    let mut alphas = Vec::new();
    let mut support_points = Vec::new();
    for (i, &b) in sol.beta.iter().enumerate() {
        if b != 0.0 {
            alphas.push(b);
            support_points.push(rows[i].clone());
        }
    }
    let model = SvrModel {
        alphas,
        support_points,
        intercept: sol.intercept,
        kernel: config.kernel,
        training_dimension: z.ncols(),
    };
    if !sol.converged {
        return Err(Error::Convergence {
            iterations: sol.iterations,
            gap: sol.gap,
            best: Box::new(model),
        });
    }
    Ok((model, sol))
}

/// `Σⱼ βⱼ K(zᵢ, sⱼ) + b` for every row `zᵢ` of `z`.
pub fn svr_predict(model: &SvrModel, z: &DMatrix<f64>) -> Result<DVector<f64>> {
    if z.ncols() != model.training_dimension {
        return Err(Error::input(format!(
            "model expects {} columns, got {}",
            model.training_dimension,
            z.ncols()
        )));
    }
    check_finite(z, "prediction input")?;
    let mut out = DVector::from_element(z.nrows(), model.intercept);
    if model.alphas.is_empty() {
        return Ok(out);
    }
    for i in 0..z.nrows() {
        let kr = kernel_row(&model.kernel, z.row(i).transpose().as_view(), &model.support_points);
        let s: f64 = kr.iter().zip(&model.alphas).map(|(k, a)| k * a).sum();
        out[i] += s;
    }
    Ok(out)
}

/// Squared-loss kernel smoother `K(K + λI)⁻¹`, via a Cholesky solve of
/// `(K + λI) X = K`.
pub fn ridge_smoother_from_gram(k: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::numeric(format!("ridge lambda must be > 0, got {lambda}")));
    }
    let n = k.nrows();
    let mut a = k.clone();
    for i in 0..n {
        a[(i, i)] += lambda;
    }
    let chol = Cholesky::new(a)
        .ok_or_else(|| Error::numeric("K + λI is not positive definite"))?;
    let s = chol.solve(k);
    if !s.iter().all(|v| v.is_finite()) {
        return Err(Error::numeric("ridge smoother solve produced non-finite values"));
    }
    Ok(s)
}

pub fn ridge_smoother(z: &DMatrix<f64>, kernel: &KernelSpec, lambda: f64) -> Result<DMatrix<f64>> {
    let k = kernel_matrix(kernel, z)?;
    ridge_smoother_from_gram(&k, lambda)
}
