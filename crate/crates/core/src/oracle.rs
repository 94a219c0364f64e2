//! Brute-force ground truth for small problems.
//!
//! Two independent routes to the optimal `k`-weight removal:
//!
//! * [`exhaustive_best_subset`] scores every `|Q| = k` with the group saliency
//!   `½ w_Qᵀ ([F⁻¹]_[Q,Q])⁻¹ w_Q` on an explicitly inverted Fisher.
//! * [`sparse_regression_min`] solves, for every zero pattern, the restricted
//!   least-squares problem on the gradient "design matrix" (with the dampening
//!   ridge appended as extra rows) by Householder QR. No Fisher inverse appears.
//!
//! Both enumerate subsets in lexicographic order and keep the first minimum.

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::tensorstore::GradientSet;

/// Largest dimension either oracle accepts.
pub const MAX_ORACLE_DIM: usize = 14;

fn guard(d: usize, k: usize) -> Result<()> {
    if d > MAX_ORACLE_DIM {
        return Err(Error::TooLarge {
            dim: d,
            max: MAX_ORACLE_DIM,
        });
    }
    if k > d {
        return Err(Error::TargetTooLarge {
            requested: k,
            available: d,
        });
    }
    Ok(())
}

/// Dot product accumulated in double-double, returned as (hi, lo).
fn dot2(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let p = x * y;
        let perr = x.mul_add(y, -p);
        let s = hi + p;
        let bb = s - hi;
        let serr = (hi - (s - bb)) + (p - bb);
        hi = s;
        lo += perr + serr;
    }
    (hi, lo)
}

/// Cholesky solve followed by iterative refinement with compensated residuals,
/// so the oracle stays accurate on Fishers with tiny dampening.
fn refined_solve(a: &Matrix, chol: &Cholesky, b: &[f64]) -> Vec<f64> {
    let mut x = chol.solve(b);
    for _ in 0..3 {
        let r: Vec<f64> = (0..a.dim())
            .map(|i| {
                let (hi, lo) = dot2(a.row(i), &x);
                (b[i] - hi) - lo
            })
            .collect();
        let dx = chol.solve(&r);
        x.iter_mut().zip(&dx).for_each(|(xi, di)| *xi += di);
    }
    x
}

/// Inverse of an SPD matrix, column by column with refinement.
fn refined_inverse(f: &Matrix) -> Result<Matrix> {
    let chol = Cholesky::factor(f)?;
    let n = f.dim();
    let mut inv = Matrix::zeros(n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        for (i, v) in refined_solve(f, &chol, &e).into_iter().enumerate() {
            inv[(i, j)] = v;
        }
    }
    // symmetrize the rounding
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            inv[(i, j)] = v;
            inv[(j, i)] = v;
        }
    }
    Ok(inv)
}

/// `½ w_Qᵀ ([F⁻¹]_[Q,Q])⁻¹ w_Q` given the dense inverse.
pub fn group_objective(w: &[f64], f_inv: &Matrix, q: &[usize]) -> Result<f64> {
    if q.is_empty() {
        return Ok(0.0);
    }
    let sub = f_inv.principal(q);
    let chol = Cholesky::factor(&sub)?;
    let wq: Vec<f64> = q.iter().map(|&i| w[i]).collect();
    let z = refined_solve(&sub, &chol, &wq);
    let (hi, lo) = dot2(&wq, &z);
    Ok(0.5 * (hi + lo))
}

/// Exhaustive minimizer of the group saliency over all `|Q| = k`.
pub fn exhaustive_best_subset(w: &[f64], fisher: &Matrix, k: usize) -> Result<(Vec<usize>, f64)> {
    let d = w.len();
    if fisher.dim() != d {
        return Err(Error::Shape(format!(
            "{d} weights against a {0}x{0} Fisher",
            fisher.dim()
        )));
    }
    guard(d, k)?;
    let f_inv = refined_inverse(fisher)?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    for q in (0..d).combinations(k) {
        let v = group_objective(w, &f_inv, &q)?;
        if best.as_ref().is_none_or(|(_, b)| v < *b) {
            best = Some((q, v));
        }
    }
    Ok(best.expect("at least one subset"))
}

/// Dense empirical Fisher `λI + (1/m) Σ gᵢgᵢᵀ`.
pub fn dense_fisher(grads: &GradientSet, damp: f64) -> Matrix {
    let d = grads.dim();
    let m = grads.num_samples() as f64;
    let mut f = Matrix::scaled_identity(d, damp);
    for g in grads.rows() {
        for i in 0..d {
            for j in 0..d {
                f[(i, j)] += g[i] * g[j] / m;
            }
        }
    }
    f
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSolution {
    /// Indices forced to zero, ascending.
    pub zeros: Vec<usize>,
    pub weights: Vec<f64>,
    /// `(1/2m) Σ (gᵢᵀw′ − gᵢᵀw*)² + (λ/2)‖w′ − w*‖²`
    pub error: f64,
}

/// Best `k`-zero fit of the gradient projections of `w_star`, by enumeration.
pub fn sparse_regression_min(grads: &GradientSet, w_star: &[f64], k: usize, damp: f64) -> Result<RegressionSolution> {
    let d = grads.dim();
    if w_star.len() != d {
        return Err(Error::Shape(format!(
            "{} weights against gradients of dimension {d}",
            w_star.len()
        )));
    }
    guard(d, k)?;
    if !(damp >= 0.0) {
        return Err(Error::Config("ridge must be non-negative".into()));
    }
    // Stacked design A = [G / √m ; √λ I], so the objective is ½‖A (w′ − w*)‖².
    let m = grads.num_samples();
    let rows = m + d;
    let scale = 1.0 / (m as f64).sqrt();
    let ridge = damp.sqrt();
    let design = |r: usize, c: usize| -> f64 {
        if r < m {
            grads.row(r)[c] * scale
        } else if r - m == c {
            ridge
        } else {
            0.0
        }
    };
    let mut best: Option<RegressionSolution> = None;
    for zeros in (0..d).combinations(k) {
        let free: Vec<usize> = (0..d).filter(|i| !zeros.contains(i)).collect();
        // minimize ‖A_R u − b‖ with b = A_Q w*_Q, then w′_R = w*_R + u
        let b: Vec<f64> = (0..rows)
            .map(|r| zeros.iter().map(|&c| design(r, c) * w_star[c]).sum())
            .collect();
        let a: Vec<f64> = (0..rows)
            .flat_map(|r| free.iter().map(move |&c| (r, c)))
            .map(|(r, c)| design(r, c))
            .collect();
        let (u, resid) = least_squares(a, rows, free.len(), b)?;
        let error = 0.5 * resid;
        if best.as_ref().is_none_or(|s| error < s.error) {
            let mut weights = vec![0.0; d];
            for (&c, du) in free.iter().zip(&u) {
                weights[c] = w_star[c] + du;
            }
            best = Some(RegressionSolution { zeros, weights, error });
        }
    }
    Ok(best.expect("at least one pattern"))
}

/// Householder QR least squares on a row-major `rows x cols` matrix.
/// Returns the solution and the squared residual norm.
fn least_squares(mut a: Vec<f64>, rows: usize, cols: usize, mut b: Vec<f64>) -> Result<(Vec<f64>, f64)> {
    if cols == 0 {
        return Ok((Vec::new(), b.iter().map(|v| v * v).sum()));
    }
    for j in 0..cols {
        let norm: f64 = (j..rows).map(|r| a[r * cols + j].powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::NotPositiveDefinite {
                condition: f64::INFINITY,
            });
        }
        let alpha = if a[j * cols + j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (j..rows).map(|r| a[r * cols + j]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for c in j..cols {
                let s: f64 = v.iter().enumerate().map(|(i, vi)| vi * a[(j + i) * cols + c]).sum();
                let f = 2.0 * s / vnorm2;
                for (i, vi) in v.iter().enumerate() {
                    a[(j + i) * cols + c] -= f * vi;
                }
            }
            let s: f64 = v.iter().enumerate().map(|(i, vi)| vi * b[j + i]).sum();
            let f = 2.0 * s / vnorm2;
            for (i, vi) in v.iter().enumerate() {
                b[j + i] -= f * vi;
            }
        }
    }
    let mut x = vec![0.0; cols];
    for j in (0..cols).rev() {
        let s: f64 = ((j + 1)..cols).map(|c| a[j * cols + c] * x[c]).sum();
        x[j] = (b[j] - s) / a[j * cols + j];
    }
    let resid = b[cols..].iter().map(|v| v * v).sum();
    Ok((x, resid))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_zero_and_full() {
        let f = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let (q, v) = exhaustive_best_subset(&[1.0, 1.0], &f, 0).unwrap();
        assert!(q.is_empty() && v == 0.0);
        let (q, v) = exhaustive_best_subset(&[1.0, 1.0], &f, 2).unwrap();
        assert_eq!(q, vec![0, 1]);
        assert!((v - 3.0).abs() < 1e-12);
    }

    #[test]
    fn k_one_is_single_saliency_argmin() {
        let f = Matrix::from_rows(&[vec![4.0, 1.0, 0.0], vec![1.0, 3.0, 0.5], vec![0.0, 0.5, 1.0]]);
        let w = [0.5, -0.4, 0.9];
        let inv = f.spd_inverse().unwrap();
        let scores: Vec<f64> = (0..3).map(|i| w[i] * w[i] / (2.0 * inv.diag(i))).collect();
        let arg = (0..3).min_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
        let (q, v) = exhaustive_best_subset(&w, &f, 1).unwrap();
        assert_eq!(q, vec![arg]);
        assert!((v - scores[arg]).abs() < 1e-12);
    }

    #[test]
    fn regression_extremes() {
        let g = GradientSet::from_rows("0", &[vec![1.0, 0.5], vec![-0.3, 2.0], vec![0.7, 0.1]]).unwrap();
        let w = [0.8, -0.6];
        let none = sparse_regression_min(&g, &w, 0, 1e-2).unwrap();
        assert!(none.error.abs() < 1e-24);
        assert!((none.weights[0] - 0.8).abs() < 1e-12);
        let all = sparse_regression_min(&g, &w, 2, 1e-2).unwrap();
        let f = dense_fisher(&g, 1e-2);
        assert!((all.error - 0.5 * f.quad_form(&w)).abs() < 1e-12);
        assert_eq!(all.weights, vec![0.0, 0.0]);
    }

    #[test]
    fn guards() {
        let f = Matrix::scaled_identity(15, 1.0);
        assert!(matches!(
            exhaustive_best_subset(&[1.0; 15], &f, 1),
            Err(Error::TooLarge { .. })
        ));
        let f = Matrix::scaled_identity(3, 1.0);
        assert!(exhaustive_best_subset(&[1.0; 3], &f, 4).is_err());
    }
}
