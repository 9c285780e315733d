//! Low-rank recovery of the true rating matrix from privatized observations.
//!
//! The estimator is the nuclear-norm minimizer subject to a Frobenius
//! data-fit constraint on the observed cells:
//!
//! ```text
//! minimize ||M||_*   subject to   ||P(M - Z)||_F <= rho
//! ```
//!
//! The constrained program is solved through its penalized form
//! `1/2 ||P(M - Z)||_F^2 + lambda ||M||_*` by proximal gradient with
//! singular-value soft-thresholding (step size 1: the masked-residual
//! gradient is 1-Lipschitz). The penalty weight is driven by bisection until
//! the active residual lands in `[rho (1 - tol), rho (1 + tol)]`. All
//! iterations are deterministic: zero initialization, fixed order, no
//! randomness.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::matrix::{Matrix, MatrixError, RatingMatrix};
use crate::rng::RandomStream;

/// Singular values below this fraction of the largest are treated as zero
/// for rank and nuclear-norm reporting.
pub const SINGULAR_VALUE_RTOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompletionError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("rho must be nonnegative and finite, got {0}")]
    InvalidRho(f64),
    #[error("observation mask is empty")]
    EmptyMask,
    #[error("observation fraction must be in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("rank must be between 1 and {max}, got {got}")]
    InvalidRank { got: usize, max: usize },
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("invalid solver configuration: {0}")]
    BadConfig(String),
}

/// Tuning knobs for [`solve_completion`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Inner proximal-gradient iteration cap per penalty weight.
    pub max_iterations: usize,
    /// Relative step-norm threshold that ends the inner iteration.
    pub step_tolerance: f64,
    /// Relative width of the accepted residual window around rho.
    pub constraint_tolerance: f64,
    /// Number of bisection probes on the penalty weight.
    pub lambda_bisection_steps: usize,
    /// Cap on the number of singular values kept per thresholding step.
    pub rank_cap: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            step_tolerance: 1e-9,
            constraint_tolerance: 1e-3,
            lambda_bisection_steps: 48,
            rank_cap: usize::MAX,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), CompletionError> {
        if self.max_iterations == 0 {
            return Err(CompletionError::BadConfig(
                "max_iterations must be >= 1".into(),
            ));
        }
        if !self.step_tolerance.is_finite() || self.step_tolerance <= 0.0 {
            return Err(CompletionError::BadConfig(format!(
                "step_tolerance must be positive and finite, got {}",
                self.step_tolerance
            )));
        }
        let ctol = self.constraint_tolerance;
        if ctol.is_nan() || ctol <= 0.0 || ctol >= 1.0 {
            return Err(CompletionError::BadConfig(format!(
                "constraint_tolerance must be in (0, 1), got {ctol}"
            )));
        }
        if self.lambda_bisection_steps == 0 {
            return Err(CompletionError::BadConfig(
                "lambda_bisection_steps must be >= 1".into(),
            ));
        }
        if self.rank_cap == 0 {
            return Err(CompletionError::BadConfig("rank_cap must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub estimate: Matrix,
    pub nuclear_norm: f64,
    pub constraint_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Zero out everything outside the mask. Idempotent, and a contraction in
/// Frobenius norm.
pub fn project(a: &Matrix, mask: &[bool]) -> Result<RatingMatrix, CompletionError> {
    Ok(RatingMatrix::from_parts(a.clone(), mask.to_vec())?)
}

/// Frobenius norm of the difference between a dense reference and the
/// privatized matrix, restricted to the privatized matrix's support.
pub fn compute_rho(theta: &Matrix, z: &RatingMatrix) -> Result<f64, CompletionError> {
    if !theta.same_shape(z.values()) {
        return Err(theta.shape_error(z.values()).into());
    }
    let mut sum = 0.0;
    for i in 0..theta.rows() {
        for j in 0..theta.cols() {
            if z.is_observed(i, j) {
                let d = theta[(i, j)] - z.value(i, j);
                sum += d * d;
            }
        }
    }
    Ok(sum.sqrt())
}

/// Full-matrix Frobenius distance between an estimate and the reference.
pub fn estimation_error(estimate: &Matrix, theta: &Matrix) -> Result<f64, CompletionError> {
    Ok(estimate.frobenius_distance(theta)?)
}

/// Empirical restricted-isometry distortion of the mask: the worst relative
/// deviation of `(1/p) ||P(A)||_F^2 / ||A||_F^2` from one over random rank-r
/// matrices. Small values indicate the mask preserves low-rank energy. This
/// is a diagnostic, not a proof.
pub fn rip_alpha_estimate(
    z: &RatingMatrix,
    p: f64,
    rank: usize,
    trials: usize,
    rng: &mut RandomStream,
) -> Result<f64, CompletionError> {
    if p.is_nan() || p <= 0.0 || p > 1.0 {
        return Err(CompletionError::InvalidFraction(p));
    }
    let max_rank = z.rows().min(z.cols());
    if rank == 0 || rank > max_rank {
        return Err(CompletionError::InvalidRank {
            got: rank,
            max: max_rank,
        });
    }
    if trials == 0 {
        return Err(CompletionError::NoTrials);
    }
    let mut alpha = 0.0f64;
    for _ in 0..trials {
        let u = Matrix::from_fn(z.rows(), rank, |_, _| rng.next_symmetric_unit());
        let v = Matrix::from_fn(z.cols(), rank, |_, _| rng.next_symmetric_unit());
        let a = u.mul_transpose(&v);
        let total: f64 = a.data().iter().map(|x| x * x).sum();
        if total == 0.0 {
            continue;
        }
        let masked: f64 = a
            .data()
            .iter()
            .zip(z.mask())
            .filter(|(_, &m)| m)
            .map(|(x, _)| x * x)
            .sum();
        alpha = alpha.max((masked / (p * total) - 1.0).abs());
    }
    Ok(alpha)
}

/// Sum of singular values, with tiny trailing values truncated at
/// [`SINGULAR_VALUE_RTOL`] times the largest.
pub fn nuclear_norm(a: &Matrix) -> Result<f64, CompletionError> {
    if !a.is_finite() {
        return Err(MatrixError::NonFinite.into());
    }
    if a.rows() == 0 || a.cols() == 0 {
        return Ok(0.0);
    }
    let singular = singular_values(a);
    let largest = singular.iter().fold(0.0f64, |acc, &s| acc.max(s));
    Ok(singular
        .iter()
        .filter(|&&s| s >= SINGULAR_VALUE_RTOL * largest)
        .sum())
}

/// Singular values of `a`, descending.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    let svd = to_dmatrix(a).svd(false, false);
    let mut values: Vec<f64> = svd.singular_values.iter().copied().collect();
    values.sort_by(|x, y| y.total_cmp(x));
    values
}

fn to_dmatrix(a: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.rows(), a.cols(), a.data())
}

/// Singular-value soft-thresholding: shrink every singular value by
/// `lambda`, drop the nonpositive ones, keep at most `rank_cap` of them.
/// Returns the thresholded matrix and its (exact) nuclear norm.
fn soft_threshold_svd(a: &Matrix, lambda: f64, rank_cap: usize) -> (Matrix, f64) {
    let rows = a.rows();
    let cols = a.cols();
    let svd = to_dmatrix(a).svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let s = svd.singular_values;

    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));

    let mut out = Matrix::zeros(rows, cols);
    let mut nuclear = 0.0;
    for (used, &k) in order.iter().enumerate() {
        let shrunk = s[k] - lambda;
        if shrunk <= 0.0 || used >= rank_cap {
            break;
        }
        nuclear += shrunk;
        for i in 0..rows {
            let scale = shrunk * u[(i, k)];
            for j in 0..cols {
                out[(i, j)] += scale * vt[(k, j)];
            }
        }
    }
    (out, nuclear)
}

/// Replace the masked cells of `m` with the observed values of `z`. This is
/// the unit-step proximal-gradient point for the masked least-squares term.
fn overlay(z: &RatingMatrix, m: &Matrix) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| {
        if z.is_observed(i, j) {
            z.value(i, j)
        } else {
            m[(i, j)]
        }
    })
}

fn masked_residual(m: &Matrix, z: &RatingMatrix) -> f64 {
    let mut sum = 0.0;
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if z.is_observed(i, j) {
                let d = m[(i, j)] - z.value(i, j);
                sum += d * d;
            }
        }
    }
    sum.sqrt()
}

struct PenalizedFit {
    estimate: Matrix,
    nuclear_norm: f64,
    iterations: usize,
    converged: bool,
}

fn penalized_solve(
    z: &RatingMatrix,
    lambda: f64,
    warm: &Matrix,
    config: &SolverConfig,
) -> PenalizedFit {
    let mut m = warm.clone();
    let mut nuclear = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..config.max_iterations {
        iterations += 1;
        let target = overlay(z, &m);
        let (next, next_nuclear) = soft_threshold_svd(&target, lambda, config.rank_cap);
        let step = next.frobenius_distance(&m).expect("iterates share a shape");
        let scale = m.frobenius_norm().max(1.0);
        m = next;
        nuclear = next_nuclear;
        if step <= config.step_tolerance * scale {
            converged = true;
            break;
        }
    }
    PenalizedFit {
        estimate: m,
        nuclear_norm: nuclear,
        iterations,
        converged,
    }
}

/// Solve the constrained nuclear-norm program.
///
/// Among the iterates produced while bisecting the penalty weight, the
/// feasible one (residual within `rho (1 + tol)`) with the smallest nuclear
/// norm is returned. `rho = 0` is treated as a hard equality constraint on
/// the observed cells: the penalty is driven toward zero and the data is
/// re-imposed exactly at the end. Non-convergence is reported through
/// `converged = false`, never as an error.
pub fn solve_completion(
    z: &RatingMatrix,
    rho: f64,
    config: &SolverConfig,
) -> Result<CompletionResult, CompletionError> {
    config.validate()?;
    if !rho.is_finite() || rho < 0.0 {
        return Err(CompletionError::InvalidRho(rho));
    }
    if z.observed_count() == 0 {
        return Err(CompletionError::EmptyMask);
    }
    if !z.values().is_finite() {
        return Err(MatrixError::NonFinite.into());
    }

    let observed_norm = z.masked_frobenius_norm();
    if rho >= observed_norm {
        // The zero matrix is already feasible and has the least possible
        // nuclear norm.
        return Ok(CompletionResult {
            estimate: Matrix::zeros(z.rows(), z.cols()),
            nuclear_norm: 0.0,
            constraint_residual: observed_norm,
            iterations: 0,
            converged: true,
        });
    }

    let lambda_max = singular_values(z.values()).first().copied().unwrap_or(0.0);

    if rho == 0.0 {
        return Ok(solve_equality(z, lambda_max, config));
    }

    let target_lo = rho * (1.0 - config.constraint_tolerance);
    let target_hi = rho * (1.0 + config.constraint_tolerance);
    let mut lo = 0.0;
    let mut hi = lambda_max;
    let mut warm = Matrix::zeros(z.rows(), z.cols());
    let mut total_iterations = 0;
    let mut last_residual = observed_norm;
    let mut best: Option<(Matrix, f64, f64, bool)> = None;

    for _ in 0..config.lambda_bisection_steps {
        let lambda = 0.5 * (lo + hi);
        let fit = penalized_solve(z, lambda, &warm, config);
        total_iterations += fit.iterations;
        let residual = masked_residual(&fit.estimate, z);
        warm = fit.estimate.clone();
        last_residual = residual;

        if residual <= target_hi {
            let replace = best
                .as_ref()
                .is_none_or(|(_, _, nuc, _)| fit.nuclear_norm < *nuc);
            if replace {
                best = Some((fit.estimate, residual, fit.nuclear_norm, fit.converged));
            }
        }

        if residual > target_hi {
            hi = lambda;
        } else if residual < target_lo {
            lo = lambda;
        } else {
            break;
        }
    }

    Ok(match best {
        Some((estimate, residual, nuclear, converged)) => CompletionResult {
            estimate,
            nuclear_norm: nuclear,
            constraint_residual: residual,
            iterations: total_iterations,
            converged,
        },
        None => CompletionResult {
            nuclear_norm: nuclear_norm(&warm)?,
            estimate: warm,
            constraint_residual: last_residual,
            iterations: total_iterations,
            converged: false,
        },
    })
}

fn solve_equality(z: &RatingMatrix, lambda_max: f64, config: &SolverConfig) -> CompletionResult {
    let floor = lambda_max * 1e-12;
    let mut lambda = lambda_max * 0.5;
    let mut m = Matrix::zeros(z.rows(), z.cols());
    let mut total_iterations = 0;
    let mut converged;
    loop {
        let fit = penalized_solve(z, lambda, &m, config);
        total_iterations += fit.iterations;
        converged = fit.converged;
        m = fit.estimate;
        if lambda <= floor {
            break;
        }
        lambda *= 0.25;
    }
    // Impose the observed data exactly; the residual is zero by
    // construction.
    let estimate = overlay(z, &m);
    let nuclear = nuclear_norm(&estimate).expect("iterates are finite");
    CompletionResult {
        estimate,
        nuclear_norm: nuclear,
        constraint_residual: 0.0,
        iterations: total_iterations,
        converged,
    }
}
