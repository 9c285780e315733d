//! Utility analysis: closed-form upper bounds on the privatized observation
//! error, the synthetic rating pipeline, and Monte Carlo coverage
//! experiments tying the mechanisms to the recovery solver.
//!
//! The pipeline mirrors the rating generating process: a dense low-rank
//! truth, a sparse noisy observation of it, and a privatized matrix produced
//! by applying one of the mechanisms row by row (one stream per user row).
//! With probability at least `1 - gamma` the realized masked error
//! `||P(theta - Z)||_F` stays below the mechanism's bound; coverage
//! experiments measure how often that happens.

use thiserror::Error;

use crate::completion::{
    compute_rho, estimation_error, solve_completion, CompletionError, SolverConfig,
};
use crate::io::denormalize_stars;
use crate::matrix::{Matrix, RatingMatrix};
use crate::mechanisms::{
    mlaplace_perturb_vector, rr_perturb_vector, ContinuousRating, DiscreteRating, Mechanism,
    MechanismError, PerturbedContinuousRating, PrivacyBudget,
};
use crate::rng::RandomStream;

const MIN_COVERAGE_TRIALS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UtilityError {
    #[error("matrix dimensions must be at least 1x1")]
    EmptyGrid,
    #[error("ground-truth rank must be between 1 and {max}, got {got}")]
    InvalidRank { got: usize, max: usize },
    #[error("observation probability must be in (0, 1], got {0}")]
    InvalidObservationProbability(f64),
    #[error("noise scale rho0 must be nonnegative and finite, got {0}")]
    InvalidRho0(f64),
    #[error("tolerance gamma must be in (0, 1), got {0}")]
    InvalidGamma(f64),
    #[error("count of observed ratings {s} exceeds the {m}x{n} grid")]
    TooManyObserved { s: usize, m: usize, n: usize },
    #[error("mechanism {mechanism} cannot privatize this data: {detail}")]
    DataKindMismatch {
        mechanism: &'static str,
        detail: String,
    },
    #[error("coverage needs at least {required} trials, got {got}")]
    TooFewTrials { required: usize, got: usize },
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Completion(#[from] CompletionError),
}

/// Inputs of the closed-form error bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityBoundInputs {
    pub rho0: f64,
    pub s: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub m: usize,
    pub n: usize,
    /// Star alphabet size; only the discrete bound reads it.
    pub d: u32,
}

impl UtilityBoundInputs {
    pub fn new(
        rho0: f64,
        s: usize,
        epsilon: f64,
        gamma: f64,
        m: usize,
        n: usize,
        d: u32,
    ) -> Result<Self, UtilityError> {
        if m == 0 || n == 0 {
            return Err(UtilityError::EmptyGrid);
        }
        if !rho0.is_finite() || rho0 < 0.0 {
            return Err(UtilityError::InvalidRho0(rho0));
        }
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(MechanismError::InvalidEpsilon(epsilon).into());
        }
        if gamma.is_nan() || gamma <= 0.0 || gamma >= 1.0 {
            return Err(UtilityError::InvalidGamma(gamma));
        }
        if s > m * n {
            return Err(UtilityError::TooManyObserved { s, m, n });
        }
        if d < 1 {
            return Err(MechanismError::InvalidAlphabet(d).into());
        }
        Ok(Self {
            rho0,
            s,
            epsilon,
            gamma,
            m,
            n,
            d,
        })
    }
}

/// High-probability bound on the masked observation error of the continuous
/// mechanism:
///
/// ```text
/// rho0 sqrt(s) + (4/eps) sqrt(s/gamma)
///             + sqrt( 2mn/((e^{eps/2}+1) gamma) * (1 + 8/eps^2) )
/// ```
///
/// Strictly decreasing in epsilon, tending to `rho0 sqrt(s)`.
pub fn bound_mlaplace(inputs: &UtilityBoundInputs) -> f64 {
    let s = inputs.s as f64;
    let mn = (inputs.m * inputs.n) as f64;
    let eps = inputs.epsilon;
    let intrinsic = inputs.rho0 * s.sqrt();
    let kept_noise = (4.0 / eps) * (s / inputs.gamma).sqrt();
    let fabricated =
        (2.0 * mn / (((eps / 2.0).exp() + 1.0) * inputs.gamma) * (1.0 + 8.0 / (eps * eps))).sqrt();
    intrinsic + kept_noise + fabricated
}

/// High-probability bound on the masked observation error of randomized
/// response:
///
/// ```text
/// rho0 sqrt(s) + 2 (d-1) sqrt( 2mnd / ((e^eps + d) gamma) )
/// ```
///
/// Equals `rho0 sqrt(s)` exactly when d = 1.
pub fn bound_rr(inputs: &UtilityBoundInputs) -> f64 {
    let s = inputs.s as f64;
    let mn = (inputs.m * inputs.n) as f64;
    let d = f64::from(inputs.d);
    let intrinsic = inputs.rho0 * s.sqrt();
    let flip =
        2.0 * (d - 1.0) * (2.0 * mn * d / ((inputs.epsilon.exp() + d) * inputs.gamma)).sqrt();
    intrinsic + flip
}

/// Value scale of the synthetic ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueScale {
    /// Entries in [-1, 1]; feeds the continuous mechanism.
    Continuous,
    /// Entries quantized to stars 1..=d; feeds randomized response.
    Stars { d: u32 },
}

/// Parameters of a synthetic experiment instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthSpec {
    pub m: usize,
    pub n: usize,
    pub rank: usize,
    pub value_scale: ValueScale,
    pub p_obs: f64,
    pub rho0: f64,
}

impl GroundTruthSpec {
    pub fn new(
        m: usize,
        n: usize,
        rank: usize,
        value_scale: ValueScale,
        p_obs: f64,
        rho0: f64,
    ) -> Result<Self, UtilityError> {
        if m == 0 || n == 0 {
            return Err(UtilityError::EmptyGrid);
        }
        let max_rank = m.min(n);
        if rank == 0 || rank > max_rank {
            return Err(UtilityError::InvalidRank {
                got: rank,
                max: max_rank,
            });
        }
        if p_obs.is_nan() || p_obs <= 0.0 || p_obs > 1.0 {
            return Err(UtilityError::InvalidObservationProbability(p_obs));
        }
        if !rho0.is_finite() || rho0 < 0.0 {
            return Err(UtilityError::InvalidRho0(rho0));
        }
        if let ValueScale::Stars { d } = value_scale {
            if d < 1 {
                return Err(MechanismError::InvalidAlphabet(d).into());
            }
        }
        Ok(Self {
            m,
            n,
            rank,
            value_scale,
            p_obs,
            rho0,
        })
    }
}

fn quantize_star(x: f64, d: u32) -> f64 {
    if d == 1 {
        1.0
    } else {
        f64::from(denormalize_stars(x.clamp(-1.0, 1.0), d).expect("d >= 2 and finite input"))
    }
}

/// Draw a dense rank-`spec.rank` ground truth: a product of two factors with
/// uniform [-1, 1] entries (left factor drawn first, row-major), rescaled so
/// the largest magnitude is one. For a star scale the entries are then
/// quantized to 1..=d.
pub fn generate_ground_truth(spec: &GroundTruthSpec, rng: &mut RandomStream) -> Matrix {
    let left = Matrix::from_fn(spec.m, spec.rank, |_, _| rng.next_symmetric_unit());
    let right = Matrix::from_fn(spec.n, spec.rank, |_, _| rng.next_symmetric_unit());
    let mut theta = left.mul_transpose(&right);
    let peak = theta.max_abs();
    if peak > 0.0 {
        theta = theta.map(|x| x / peak);
    }
    if let ValueScale::Stars { d } = spec.value_scale {
        theta = theta.map(|x| quantize_star(x, d));
    }
    theta
}

/// A sparse noisy observation of the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub ratings: RatingMatrix,
    /// Largest per-entry deviation |X - theta| actually realized; for star
    /// scales this is measured after quantization.
    pub realized_rho0: f64,
}

/// Observe the ground truth: each cell independently enters the support
/// with probability `p_obs`, and observed values carry uniform noise bounded
/// by `rho0` per entry, which keeps `||P(theta - X)||_F <= rho0 sqrt(s)`
/// deterministically. Cells are visited row-major; each visit consumes one
/// mask draw and, when observed, one noise draw.
pub fn observe(theta: &Matrix, spec: &GroundTruthSpec, rng: &mut RandomStream) -> Observation {
    let mut ratings = RatingMatrix::unobserved(spec.m, spec.n);
    let mut realized = 0.0f64;
    for i in 0..spec.m {
        for j in 0..spec.n {
            if !rng.bernoulli(spec.p_obs) {
                continue;
            }
            let noisy = theta[(i, j)] + spec.rho0 * rng.next_symmetric_unit();
            let value = match spec.value_scale {
                ValueScale::Continuous => noisy.clamp(-1.0, 1.0),
                ValueScale::Stars { d } => noisy.round().clamp(1.0, f64::from(d)),
            };
            realized = realized.max((value - theta[(i, j)]).abs());
            ratings.set_observed(i, j, value);
        }
    }
    Observation {
        ratings,
        realized_rho0: realized,
    }
}

/// Privatize an observed matrix row by row. Every user row gets its own
/// stream forked from `rng`, so rows can be reproduced (and parallelized)
/// independently. The output support is the non-missing pattern of the
/// mechanism output: dropped ratings leave the support, fabricated ones
/// join it.
pub fn privatize_matrix(
    x: &RatingMatrix,
    mechanism: &Mechanism,
    epsilon: PrivacyBudget,
    rng: &mut RandomStream,
) -> Result<RatingMatrix, UtilityError> {
    let rows = x.rows();
    let cols = x.cols();
    let mut row_streams: Vec<RandomStream> = (0..rows).map(|_| rng.fork()).collect();
    let mut z = RatingMatrix::unobserved(rows, cols);
    match mechanism {
        Mechanism::ModifiedLaplace => {
            for (i, stream) in row_streams.iter_mut().enumerate() {
                let mut row = Vec::with_capacity(cols);
                for j in 0..cols {
                    if x.is_observed(i, j) {
                        let v = x.value(i, j);
                        if !(-1.0..=1.0).contains(&v) || !v.is_finite() {
                            return Err(UtilityError::DataKindMismatch {
                                mechanism: mechanism.tag(),
                                detail: format!("value {v} at ({i}, {j}) is not in [-1, 1]"),
                            });
                        }
                        row.push(ContinuousRating::Value(v));
                    } else {
                        row.push(ContinuousRating::Missing);
                    }
                }
                let privatized = mlaplace_perturb_vector(&row, epsilon, stream)?;
                for (j, out) in privatized.iter().enumerate() {
                    if let PerturbedContinuousRating::Value(v) = out {
                        z.set_observed(i, j, *v);
                    }
                }
            }
        }
        Mechanism::RandomizedResponse { d } => {
            for (i, stream) in row_streams.iter_mut().enumerate() {
                let mut row = Vec::with_capacity(cols);
                for j in 0..cols {
                    if x.is_observed(i, j) {
                        let v = x.value(i, j);
                        let star = v.round();
                        if (v - star).abs() > 1e-9 || star < 1.0 || star > f64::from(*d) {
                            return Err(UtilityError::DataKindMismatch {
                                mechanism: mechanism.tag(),
                                detail: format!("value {v} at ({i}, {j}) is not a star in 1..={d}"),
                            });
                        }
                        row.push(DiscreteRating::new(star as u32, *d)?);
                    } else {
                        row.push(DiscreteRating::MISSING);
                    }
                }
                let privatized = rr_perturb_vector(&row, *d, epsilon, stream)?;
                for (j, out) in privatized.iter().enumerate() {
                    if !out.is_missing() {
                        z.set_observed(i, j, f64::from(out.value()));
                    }
                }
            }
        }
    }
    Ok(z)
}

/// The matrices produced by one synthetic pipeline execution.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub theta: Matrix,
    pub observed: RatingMatrix,
    pub privatized: RatingMatrix,
    /// Realized count of observed true ratings.
    pub s: usize,
    /// Per-entry noise scale backing the bound: the declared rho0, enlarged
    /// if quantization pushed any realized entry error above it.
    pub rho0_used: f64,
}

/// Run truth -> observation -> privatization for one seed.
pub fn run_pipeline(
    spec: &GroundTruthSpec,
    mechanism: &Mechanism,
    epsilon: PrivacyBudget,
    seed: u64,
) -> Result<PipelineRun, UtilityError> {
    check_scale(spec, mechanism)?;
    let mut rng = RandomStream::new(seed);
    let theta = generate_ground_truth(spec, &mut rng);
    let observation = observe(&theta, spec, &mut rng);
    let privatized = privatize_matrix(&observation.ratings, mechanism, epsilon, &mut rng)?;
    let s = observation.ratings.observed_count();
    let rho0_used = spec.rho0.max(observation.realized_rho0);
    Ok(PipelineRun {
        theta,
        observed: observation.ratings,
        privatized,
        s,
        rho0_used,
    })
}

fn check_scale(spec: &GroundTruthSpec, mechanism: &Mechanism) -> Result<(), UtilityError> {
    match (spec.value_scale, mechanism) {
        (ValueScale::Continuous, Mechanism::ModifiedLaplace) => Ok(()),
        (ValueScale::Stars { d: scale_d }, Mechanism::RandomizedResponse { d }) => {
            if scale_d == *d {
                Ok(())
            } else {
                Err(UtilityError::DataKindMismatch {
                    mechanism: mechanism.tag(),
                    detail: format!("ground truth uses d = {scale_d}, mechanism uses d = {d}"),
                })
            }
        }
        (scale, mechanism) => Err(UtilityError::DataKindMismatch {
            mechanism: mechanism.tag(),
            detail: format!("value scale {scale:?} does not feed this mechanism"),
        }),
    }
}

/// Everything recorded about one experiment trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub seed: u64,
    pub mechanism: Mechanism,
    pub epsilon: f64,
    pub s: usize,
    pub rho: f64,
    pub bound: f64,
    pub within_bound: bool,
    pub recovery_error: f64,
    pub rank: usize,
    pub p_obs: f64,
    pub converged: bool,
}

fn bound_for(
    mechanism: &Mechanism,
    rho0: f64,
    s: usize,
    epsilon: f64,
    gamma: f64,
    m: usize,
    n: usize,
) -> Result<f64, UtilityError> {
    match mechanism {
        Mechanism::ModifiedLaplace => {
            let inputs = UtilityBoundInputs::new(rho0, s, epsilon, gamma, m, n, 1)?;
            Ok(bound_mlaplace(&inputs))
        }
        Mechanism::RandomizedResponse { d } => {
            let inputs = UtilityBoundInputs::new(rho0, s, epsilon, gamma, m, n, *d)?;
            Ok(bound_rr(&inputs))
        }
    }
}

/// Execute one full trial: pipeline, realized masked error, matching bound,
/// and recovery through the completion solver with the realized error as the
/// constraint radius. Solver non-convergence is recorded, not raised.
pub fn run_trial(
    spec: &GroundTruthSpec,
    mechanism: &Mechanism,
    epsilon: PrivacyBudget,
    gamma: f64,
    seed: u64,
    solver: &SolverConfig,
) -> Result<TrialRecord, UtilityError> {
    let pipeline = run_pipeline(spec, mechanism, epsilon, seed)?;
    let rho = compute_rho(&pipeline.theta, &pipeline.privatized)?;
    let bound = bound_for(
        mechanism,
        pipeline.rho0_used,
        pipeline.s,
        epsilon.epsilon(),
        gamma,
        spec.m,
        spec.n,
    )?;
    let (recovery_error, converged) = match solve_completion(&pipeline.privatized, rho, solver) {
        Ok(result) => (
            estimation_error(&result.estimate, &pipeline.theta)?,
            result.converged,
        ),
        // An empty privatized support leaves only the zero estimate.
        Err(CompletionError::EmptyMask) => (pipeline.theta.frobenius_norm(), false),
        Err(other) => return Err(other.into()),
    };
    Ok(TrialRecord {
        seed,
        mechanism: *mechanism,
        epsilon: epsilon.epsilon(),
        s: pipeline.s,
        rho,
        bound,
        within_bound: rho <= bound,
        recovery_error,
        rank: spec.rank,
        p_obs: spec.p_obs,
        converged,
    })
}

/// Fraction of trials whose realized masked error respects the bound.
/// Trials use seeds `base_seed + index` and skip the recovery solver: the
/// coverage statement concerns only the error and its bound.
pub fn coverage_estimate(
    spec: &GroundTruthSpec,
    mechanism: &Mechanism,
    epsilon: PrivacyBudget,
    gamma: f64,
    trials: usize,
    base_seed: u64,
) -> Result<f64, UtilityError> {
    if trials < MIN_COVERAGE_TRIALS {
        return Err(UtilityError::TooFewTrials {
            required: MIN_COVERAGE_TRIALS,
            got: trials,
        });
    }
    let mut within = 0usize;
    for index in 0..trials {
        let seed = base_seed.wrapping_add(index as u64);
        let pipeline = run_pipeline(spec, mechanism, epsilon, seed)?;
        let rho = compute_rho(&pipeline.theta, &pipeline.privatized)?;
        let bound = bound_for(
            mechanism,
            pipeline.rho0_used,
            pipeline.s,
            epsilon.epsilon(),
            gamma,
            spec.m,
            spec.n,
        )?;
        if rho <= bound {
            within += 1;
        }
    }
    Ok(within as f64 / trials as f64)
}
