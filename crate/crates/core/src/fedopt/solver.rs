//! Minimization of the penalized quadratic over the probability simplex.
//!
//! The variables are `z = (eta^0, eta^1, .., eta^m)`; `eta^0` does not enter
//! the quadratic, it absorbs the slack of the sum constraint. With up to
//! [`ENUMERATION_LIMIT`] sources the exact minimizer is found by enumerating
//! supports and solving each face's KKT system; larger problems fall back to
//! projected gradient iterations.

use nalgebra::{DMatrix, DVector};

use super::stats::Quadratic;
use crate::error::{Error, Result};

pub const ENUMERATION_LIMIT: usize = 12;
const PSD_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-11;

/// A minimizer on the simplex: `z[0]` is the target weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSolution {
    pub z: Vec<f64>,
    pub objective: f64,
    /// Frank-Wolfe duality gap `grad'z - min_i grad_i`.
    pub gap: f64,
}

fn gradient(q: &Quadratic, lambda: f64, z: &[f64]) -> Vec<f64> {
    let m = q.dim();
    let mut g = vec![0.0; m + 1];
    for j in 0..m {
        let mut acc = -2.0 * q.b[j] + lambda / q.n * q.chi_sq[j];
        for k in 0..m {
            acc += 2.0 * q.g(j, k) * z[k + 1];
        }
        g[j + 1] = acc;
    }
    g
}

/// Duality gap of `z` for the quadratic at penalty `lambda`.
pub fn fw_gap(q: &Quadratic, lambda: f64, z: &[f64]) -> f64 {
    let g = gradient(q, lambda, z);
    let min = g.iter().cloned().fold(f64::INFINITY, f64::min);
    g.iter().zip(z).map(|(gi, zi)| gi * zi).sum::<f64>() - min
}

fn check_psd(q: &Quadratic) -> Result<()> {
    let m = q.dim();
    if m == 0 {
        return Ok(());
    }
    let g = DMatrix::from_row_slice(m, m, &q.g);
    if (0..m).any(|j| (0..m).any(|k| (g[(j, k)] - g[(k, j)]).abs() > PSD_TOL * (1.0 + g[(j, k)].abs()))) {
        return Err(Error::Numerical("quadratic form is not symmetric".into()));
    }
    if !g.iter().all(|v| v.is_finite()) || !q.b.iter().all(|v| v.is_finite()) || !q.c.is_finite() {
        return Err(Error::Numerical("quadratic has non-finite entries".into()));
    }
    let scale = 1.0 + g.diagonal().iter().map(|v| v.abs()).sum::<f64>();
    if shifted_cholesky_ok(&q.g, m, PSD_TOL * scale) {
        return Ok(());
    }
    let min = g.symmetric_eigenvalues().min();
    if min < -PSD_TOL * scale {
        return Err(Error::Numerical(format!("quadratic form is not positive semidefinite (eigenvalue {min:e})")));
    }
    Ok(())
}

/// Cholesky factorization of `g + shift I`; success proves the smallest
/// eigenvalue of `g` is above `-shift`.
fn shifted_cholesky_ok(g: &[f64], m: usize, shift: f64) -> bool {
    let mut l = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let mut acc = g[i * m + j] + if i == j { shift } else { 0.0 };
            for k in 0..j {
                acc -= l[i * m + k] * l[j * m + k];
            }
            if i == j {
                if acc <= 0.0 {
                    return false;
                }
                l[i * m + i] = acc.sqrt();
            } else {
                l[i * m + j] = acc / l[j * m + j];
            }
        }
    }
    true
}

/// Minimizes `Q` plus the penalty `(lambda / n) sum chi_k^2 eta^k` over the
/// simplex. Among minimizers, prefers the largest target weight, then the
/// smallest norm.
pub fn solve_simplex(q: &Quadratic, lambda: f64) -> Result<SimplexSolution> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("penalty must be non-negative, got {lambda}")));
    }
    check_psd(q)?;
    let m = q.dim();
    if m == 0 {
        return Ok(SimplexSolution {
            z: vec![1.0],
            objective: q.c,
            gap: 0.0,
        });
    }
    let z = if m <= ENUMERATION_LIMIT {
        enumerate(q, lambda)?
    } else {
        projected_gradient(q, lambda)
    };
    Ok(finish(q, lambda, z))
}

fn finish(q: &Quadratic, lambda: f64, mut z: Vec<f64>) -> SimplexSolution {
    for v in z.iter_mut() {
        *v = v.max(0.0);
    }
    let s: f64 = z.iter().sum();
    z.iter_mut().for_each(|v| *v /= s);
    SimplexSolution {
        objective: q.value(&z[1..], lambda),
        gap: fw_gap(q, lambda, &z).max(0.0),
        z,
    }
}

/// Solves the KKT system of every face and keeps the best feasible point.
fn enumerate(q: &Quadratic, lambda: f64) -> Result<Vec<f64>> {
    let m = q.dim();
    let vars = m + 1;
    let scale = 1.0 + q.c.abs() + q.b.iter().map(|v| v.abs()).sum::<f64>() + q.g.iter().map(|v| v.abs()).sum::<f64>();
    // A positive definite form has a unique minimizer, so the first KKT
    // point found is the answer; otherwise every face is visited for the
    // tie-break.
    let unique = shifted_cholesky_ok(&q.g, m, -1e-9 * scale);
    let mut masks: Vec<u32> = (1u32..(1 << vars)).collect();
    masks.sort_by_key(|mask| std::cmp::Reverse(mask.count_ones()));
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in masks {
        let support: Vec<usize> = (0..vars).filter(|i| mask & (1 << i) != 0).collect();
        let Some(z) = face_kkt(q, lambda, &support) else { continue };
        if z.iter().any(|&v| v < -FEAS_TOL) {
            continue;
        }
        let grad = gradient(q, lambda, &z);
        let nu = support.iter().map(|&i| grad[i]).sum::<f64>() / support.len() as f64;
        if (0..vars).any(|i| mask & (1 << i) == 0 && grad[i] < nu - 1e-9 * scale) {
            continue;
        }
        let obj = q.value(&z[1..], lambda);
        let better = match &best {
            None => true,
            Some((bo, bz)) => {
                let tol = 1e-12 * scale;
                if obj < bo - tol {
                    true
                } else if obj > bo + tol {
                    false
                } else if (z[0] - bz[0]).abs() > 1e-12 {
                    z[0] > bz[0]
                } else {
                    norm_sq(&z) < norm_sq(bz) - 1e-15
                }
            }
        };
        if better {
            best = Some((obj, z));
        }
        if unique {
            break;
        }
    }
    best.map(|(_, z)| z)
        .ok_or_else(|| Error::Numerical("no feasible KKT point found".into()))
}

fn norm_sq(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum()
}

/// Stationary point of the objective on the affine hull of `support`
/// (minimum-norm solution when the face is degenerate).
fn face_kkt(q: &Quadratic, lambda: f64, support: &[usize]) -> Option<Vec<f64>> {
    let s = support.len();
    let dim = s + 1;
    let mut mat = vec![0.0; dim * dim];
    let mut rhs = vec![0.0; dim];
    for (r, &i) in support.iter().enumerate() {
        if i > 0 {
            for (c, &k) in support.iter().enumerate() {
                if k > 0 {
                    mat[r * dim + c] = 2.0 * q.g(i - 1, k - 1);
                }
            }
            rhs[r] = 2.0 * q.b[i - 1] - lambda / q.n * q.chi_sq[i - 1];
        }
        mat[r * dim + s] = -1.0;
        mat[s * dim + r] = 1.0;
    }
    rhs[s] = 1.0;
    let sol = match gauss_solve(&mat, &rhs, dim) {
        Some(sol) => sol,
        None => {
            let m = DMatrix::from_row_slice(dim, dim, &mat);
            let b = DVector::from_column_slice(&rhs);
            let svd = m.clone().svd(true, true);
            let tol = 1e-12 * svd.singular_values.max().max(1.0);
            let sol = svd.solve(&b, tol).ok()?;
            let resid = (&m * &sol - &b).amax();
            if !(resid <= 1e-8 * (1.0 + b.amax())) {
                return None;
            }
            sol.as_slice().to_vec()
        }
    };
    let mut z = vec![0.0; q.dim() + 1];
    for (r, &i) in support.iter().enumerate() {
        z[i] = sol[r];
    }
    Some(z)
}

/// Gaussian elimination with partial pivoting; `None` when a pivot is
/// negligible relative to the matrix scale.
fn gauss_solve(mat: &[f64], rhs: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut a = mat.to_vec();
    let mut b = rhs.to_vec();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[piv * n + col].abs() < 1e-10 * scale {
            return None;
        }
        if piv != col {
            for c in 0..n {
                a.swap(piv * n + c, col * n + c);
            }
            b.swap(piv, col);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f != 0.0 {
                for c in col..n {
                    a[r * n + c] -= f * a[col * n + c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in r + 1..n {
            acc -= a[r * n + c] * x[c];
        }
        x[r] = acc / a[r * n + r];
    }
    Some(x)
}

/// Euclidean projection onto the simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

fn projected_gradient(q: &Quadratic, lambda: f64) -> Vec<f64> {
    let m = q.dim();
    let g = DMatrix::from_row_slice(m, m, &q.g);
    let lip = 2.0 * g.symmetric_eigenvalues().max().max(1e-12);
    let mut z = vec![0.0; m + 1];
    z[0] = 1.0;
    let mut y = z.clone();
    let mut t: f64 = 1.0;
    for _ in 0..200_000 {
        let grad = gradient(q, lambda, &y);
        let step: Vec<f64> = y.iter().zip(&grad).map(|(yi, gi)| yi - gi / lip).collect();
        let next = project_simplex(&step);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = next
            .iter()
            .zip(&z)
            .map(|(n, o)| n + (t - 1.0) / t_next * (n - o))
            .collect();
        z = next;
        t = t_next;
        if fw_gap(q, lambda, &z) < 1e-12 {
            break;
        }
    }
    z
}
