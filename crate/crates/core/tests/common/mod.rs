//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Optimum of the ε-insensitive dual found by exhaustive active-set enumeration.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub objective: f64,
}

/// Polynomial kernel Gram matrix, written out directly.
pub fn poly_gram(z: &DMatrix<f64>, gamma: f64, offset: f64, degree: i32) -> DMatrix<f64> {
    let n = z.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        let dot: f64 = (0..z.ncols()).map(|c| z[(i, c)] * z[(j, c)]).sum();
        (gamma * dot + offset).powi(degree)
    })
}

pub fn objective(k: &DMatrix<f64>, y: &[f64], eps: f64, beta: &[f64]) -> f64 {
    let b = DVector::from_column_slice(beta);
    let kb = k * &b;
    0.5 * b.dot(&kb) - y.iter().zip(beta).map(|(a, c)| a * c).sum::<f64>()
        + eps * beta.iter().map(|v| v.abs()).sum::<f64>()
}

// Per-point state: 0 -> -C, 1 -> free negative, 2 -> zero, 3 -> free positive, 4 -> +C.
fn fixed_value(state: u8, c: f64) -> Option<f64> {
    match state {
        0 => Some(-c),
        2 => Some(0.0),
        4 => Some(c),
        _ => None,
    }
}

/// Enumerate every assignment of points to {-C, (-C,0), 0, (0,C), C}, solve the
/// KKT equalities for the free coefficients and the intercept, and keep the
/// feasible candidate with the lowest objective.
pub fn brute_force_svr(k: &DMatrix<f64>, y: &[f64], eps: f64, c: f64) -> Option<OracleSolution> {
    let n = y.len();
    let tol = 1e-9 * (1.0 + c);
    let mut best: Option<OracleSolution> = None;
    let total = 5usize.pow(n as u32);
    let mut states = vec![0u8; n];
    for code in 0..total {
        let mut rest = code;
        for s in states.iter_mut() {
            *s = (rest % 5) as u8;
            rest /= 5;
        }
        let free: Vec<usize> = (0..n).filter(|&i| fixed_value(states[i], c).is_none()).collect();
        let mut beta = vec![0.0; n];
        for i in 0..n {
            if let Some(v) = fixed_value(states[i], c) {
                beta[i] = v;
            }
        }
        let fixed_sum: f64 = beta.iter().sum();
        let intercept;
        if free.is_empty() {
            if fixed_sum.abs() > tol {
                continue;
            }
            // f_i = (Kβ)_i + b; feasible b forms an interval.
            let mut lo = f64::NEG_INFINITY;
            let mut hi = f64::INFINITY;
            for i in 0..n {
                let kb: f64 = (0..n).map(|j| k[(i, j)] * beta[j]).sum();
                let base = y[i] - kb;
                match states[i] {
                    0 => lo = lo.max(base + eps),
                    2 => {
                        lo = lo.max(base - eps);
                        hi = hi.min(base + eps);
                    }
                    4 => hi = hi.min(base - eps),
                    _ => unreachable!(),
                }
            }
            if lo > hi + tol {
                continue;
            }
            intercept = if lo.is_finite() && hi.is_finite() {
                0.5 * (lo + hi)
            } else if lo.is_finite() {
                lo
            } else {
                hi
            };
        } else {
            let m = free.len();
            let mut a = DMatrix::zeros(m + 1, m + 1);
            let mut rhs = DVector::zeros(m + 1);
            for (r, &i) in free.iter().enumerate() {
                let sgn = if states[i] == 3 { 1.0 } else { -1.0 };
                for (s, &j) in free.iter().enumerate() {
                    a[(r, s)] = k[(i, j)];
                }
                a[(r, m)] = 1.0;
                let fixed_part: f64 = (0..n)
                    .filter(|j| !free.contains(j))
                    .map(|j| k[(i, j)] * beta[j])
                    .sum();
                rhs[r] = y[i] - sgn * eps - fixed_part;
                a[(m, r)] = 1.0;
            }
            rhs[m] = -fixed_sum;
            let svd = a.clone().svd(true, true);
            let smax = svd.singular_values.max();
            if svd.singular_values.min() <= 1e-10 * smax.max(1.0) {
                continue;
            }
            let Ok(sol) = svd.solve(&rhs, 0.0) else { continue };
            let mut ok = true;
            for (r, &i) in free.iter().enumerate() {
                let v = sol[r];
                let inside = if states[i] == 3 { v >= -tol && v <= c + tol } else { v <= tol && v >= -c - tol };
                if !inside {
                    ok = false;
                    break;
                }
                beta[i] = v.clamp(-c, c);
            }
            if !ok {
                continue;
            }
            intercept = sol[m];
        }
        // Complementary slackness on the fixed points.
        let mut ok = true;
        for i in 0..n {
            let kb: f64 = (0..n).map(|j| k[(i, j)] * beta[j]).sum();
            let resid = y[i] - kb - intercept;
            let good = match states[i] {
                0 => resid <= -eps + tol,
                2 => resid.abs() <= eps + tol,
                4 => resid >= eps - tol,
                _ => true,
            };
            if !good {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        let obj = objective(k, y, eps, &beta);
        if best.as_ref().map_or(true, |b| obj < b.objective - 1e-12) {
            best = Some(OracleSolution {
                beta,
                intercept,
                objective: obj,
            });
        }
    }
    best.map(|mut b| {
        b.intercept = canonical_intercept(k, y, eps, c, &b.beta);
        b
    })
}

/// The intercept is pinned by any strictly interior coefficient; otherwise
/// every value in an interval is optimal and its midpoint is reported.
pub fn canonical_intercept(k: &DMatrix<f64>, y: &[f64], eps: f64, c: f64, beta: &[f64]) -> f64 {
    let n = y.len();
    let tol = 1e-9 * (1.0 + c);
    let base: Vec<f64> = (0..n)
        .map(|i| y[i] - (0..n).map(|j| k[(i, j)] * beta[j]).sum::<f64>())
        .collect();
    let free: Vec<f64> = (0..n)
        .filter(|&i| beta[i].abs() > tol && beta[i].abs() < c - tol)
        .map(|i| base[i] - eps * beta[i].signum())
        .collect();
    if !free.is_empty() {
        return free.iter().sum::<f64>() / free.len() as f64;
    }
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for i in 0..n {
        if beta[i] >= c - tol {
            hi = hi.min(base[i] - eps);
        } else if beta[i] <= -c + tol {
            lo = lo.max(base[i] + eps);
        } else {
            lo = lo.max(base[i] - eps);
            hi = hi.min(base[i] + eps);
        }
    }
    0.5 * (lo + hi)
}

/// A small random regression instance.
pub struct SvrInstance {
    pub z: DMatrix<f64>,
    pub y: Vec<f64>,
    pub epsilon: f64,
    pub cost: f64,
}

pub fn svr_instance(seed: u64) -> SvrInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..=6);
    let k = rng.gen_range(1..=3);
    let epsilon = if rng.gen_bool(0.5) { 0.0 } else { 0.1 };
    let cost = if rng.gen_bool(0.5) { 1.0 } else { 5.0 };
    let z = DMatrix::from_fn(n, k, |_, _| rng.gen_range(-1.5..1.5));
    let y = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    SvrInstance { z, y, epsilon, cost }
}

/// Squared-loss stagewise fit done the slow way: explicit inverses and a
/// running residual.
pub fn stagewise_ridge_reference(grams: &[DMatrix<f64>], y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let n = y.len();
    let mut resid = y.clone();
    let mut fitted = DVector::zeros(n);
    for k in grams {
        let inv = (k + DMatrix::identity(n, n) * lambda).try_inverse().expect("invertible");
        let step = k * (inv * &resid);
        fitted += &step;
        resid -= &step;
    }
    fitted
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}
