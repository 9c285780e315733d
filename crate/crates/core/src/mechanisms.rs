//! The two per-user privatization mechanisms and their closed-form moments.
//!
//! Both mechanisms act coordinatewise on a user's rating vector with an
//! explicit random stream, so outputs are reproducible bit-for-bit.
//!
//! * The **modified Laplace mechanism** works on ratings normalized into
//!   [-1, 1] with a distinguished missing token. Present ratings get
//!   Laplace(0, 2/eps) noise and are randomly dropped to missing; missing
//!   ratings are randomly replaced by fabricated noise ratings. The keep
//!   probability is exp(eps/2) / (exp(eps/2) + 1) in both directions.
//! * The **randomized response mechanism** works on the star alphabet
//!   {0, 1, ..., d} where 0 means "not rated". A value is kept with
//!   probability exp(eps) / (exp(eps) + d) and otherwise flipped to one of
//!   the d alternatives uniformly.
//!
//! Applied to an n-coordinate vector, each mechanism satisfies the
//! n*eps privacy ratio bound certified in [`crate::dp_verify`].

use thiserror::Error;

use crate::rng::RandomStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("continuous rating {0} outside [-1, 1]")]
    RatingOutOfRange(f64),
    #[error("alphabet size d must be >= 1, got {0}")]
    InvalidAlphabet(u32),
    #[error("category {value} outside {{0, ..., {d}}}")]
    CategoryOutOfRange { value: u32, d: u32 },
}

/// Per-coordinate privacy budget. Privatizing an n-coordinate vector with
/// budget `epsilon` gives an n*epsilon guarantee overall.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    epsilon: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64) -> Result<Self, MechanismError> {
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(MechanismError::InvalidEpsilon(epsilon));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(self) -> f64 {
        self.epsilon
    }
}

/// A raw user rating: a value normalized into [-1, 1], or the distinguished
/// missing token. Missing is an explicit alternative, never a sentinel real,
/// so membership tests in the certification code are exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContinuousRating {
    Value(f64),
    Missing,
}

impl ContinuousRating {
    /// Checked constructor for the non-missing branch.
    pub fn value(v: f64) -> Result<Self, MechanismError> {
        if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
            return Err(MechanismError::RatingOutOfRange(v));
        }
        Ok(ContinuousRating::Value(v))
    }

    pub fn is_missing(self) -> bool {
        matches!(self, ContinuousRating::Missing)
    }
}

/// A privatized continuous rating. The value branch is unbounded: noise is
/// never clipped back into [-1, 1], so downstream consumers must accept
/// arbitrary finite reals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PerturbedContinuousRating {
    Value(f64),
    Missing,
}

impl PerturbedContinuousRating {
    pub fn is_missing(self) -> bool {
        matches!(self, PerturbedContinuousRating::Missing)
    }
}

/// A star rating on the alphabet {0, 1, ..., d}; 0 encodes "not rated".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DiscreteRating(u32);

impl DiscreteRating {
    pub const MISSING: DiscreteRating = DiscreteRating(0);

    pub fn new(value: u32, d: u32) -> Result<Self, MechanismError> {
        validate_alphabet(d)?;
        if value > d {
            return Err(MechanismError::CategoryOutOfRange { value, d });
        }
        Ok(DiscreteRating(value))
    }

    pub fn value(self) -> u32 {
        self.0
    }

    pub fn is_missing(self) -> bool {
        self.0 == 0
    }
}

/// Which mechanism a pipeline stage should apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    ModifiedLaplace,
    RandomizedResponse { d: u32 },
}

impl Mechanism {
    /// Short tag used in report and result files.
    pub fn tag(&self) -> &'static str {
        match self {
            Mechanism::ModifiedLaplace => "mlaplace",
            Mechanism::RandomizedResponse { .. } => "rr",
        }
    }
}

fn validate_alphabet(d: u32) -> Result<(), MechanismError> {
    if d < 1 {
        return Err(MechanismError::InvalidAlphabet(d));
    }
    Ok(())
}

/// Probability that the modified Laplace mechanism keeps a coordinate in its
/// current observed/missing state: exp(eps/2) / (exp(eps/2) + 1).
///
/// Strictly increasing in epsilon, always in (1/2, 1), and tending to 1 as
/// epsilon grows.
pub fn bernoulli_keep_prob(epsilon: PrivacyBudget) -> f64 {
    let half = (epsilon.epsilon() / 2.0).exp();
    if half.is_infinite() {
        return 1.0;
    }
    half / (half + 1.0)
}

/// Inverse CDF of the Laplace(0, scale) law at `u` in (0, 1): the sign comes
/// from which side of 1/2 the uniform falls on, the magnitude from an
/// exponential transform. One uniform draw in, one sample out.
fn laplace_inverse_cdf(u: f64, scale: f64) -> f64 {
    let centered = u - 0.5;
    -scale * centered.signum() * (1.0 - 2.0 * centered.abs()).ln()
}

/// CDF of the Laplace(location, scale) law. Tolerates infinite arguments.
pub fn laplace_cdf(t: f64, location: f64, scale: f64) -> f64 {
    if t < location {
        0.5 * ((t - location) / scale).exp()
    } else {
        1.0 - 0.5 * (-(t - location) / scale).exp()
    }
}

/// Mass of `[lo, hi)` under Laplace(location, scale), computed tail-aware.
///
/// Naive CDF differences lose all precision deep in the upper tail
/// (`1 - (1 - tiny)`), which inflates tail-mass ratios; each branch here
/// works with exponentials of negative arguments only.
pub fn laplace_interval_mass(lo: f64, hi: f64, location: f64, scale: f64) -> f64 {
    let a = (lo - location) / scale;
    let b = (hi - location) / scale;
    if a >= 0.0 {
        // Upper tail: SF(a) - SF(b) = 0.5 e^-a (1 - e^-(b-a)).
        0.5 * (-a).exp() * (-(-(b - a)).exp_m1())
    } else if b <= 0.0 {
        // Lower tail, by symmetry: 0.5 e^b (1 - e^-(b-a)).
        0.5 * b.exp() * (-(-(b - a)).exp_m1())
    } else {
        // Straddles the center; both tail terms are moderate.
        1.0 - 0.5 * a.exp() - 0.5 * (-b).exp()
    }
}

/// Draw one sample from Laplace(0, scale) by inverse CDF on a single
/// uniform draw.
pub fn sample_laplace(scale: f64, rng: &mut RandomStream) -> Result<f64, MechanismError> {
    if !scale.is_finite() || scale <= 0.0 {
        return Err(MechanismError::InvalidScale(scale));
    }
    Ok(laplace_inverse_cdf(rng.next_unit_open(), scale))
}

/// Privatize one continuous rating.
///
/// Present ratings are kept (with added Laplace(0, 2/eps) noise) with the
/// keep probability and dropped to missing otherwise; missing ratings stay
/// missing with the keep probability and otherwise become a fabricated noise
/// rating. The keep/drop coin and the noise are independent, and both draws
/// are consumed on every call so vector positions stay aligned regardless of
/// the branch taken.
pub fn mlaplace_perturb_entry(
    x: ContinuousRating,
    epsilon: PrivacyBudget,
    rng: &mut RandomStream,
) -> Result<PerturbedContinuousRating, MechanismError> {
    if let ContinuousRating::Value(v) = x {
        if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
            return Err(MechanismError::RatingOutOfRange(v));
        }
    }
    let keep = rng.bernoulli(bernoulli_keep_prob(epsilon));
    let noise = laplace_inverse_cdf(rng.next_unit_open(), 2.0 / epsilon.epsilon());
    Ok(match (x, keep) {
        (ContinuousRating::Value(v), true) => PerturbedContinuousRating::Value(v + noise),
        (ContinuousRating::Value(_), false) => PerturbedContinuousRating::Missing,
        (ContinuousRating::Missing, true) => PerturbedContinuousRating::Missing,
        (ContinuousRating::Missing, false) => PerturbedContinuousRating::Value(noise),
    })
}

/// Privatize a whole continuous rating vector, coordinate by coordinate with
/// fresh randomness from the same stream.
pub fn mlaplace_perturb_vector(
    x: &[ContinuousRating],
    epsilon: PrivacyBudget,
    rng: &mut RandomStream,
) -> Result<Vec<PerturbedContinuousRating>, MechanismError> {
    x.iter()
        .map(|&entry| mlaplace_perturb_entry(entry, epsilon, rng))
        .collect()
}

/// Probability mass function of the randomized response output for input
/// category `i`: entry j is exp(eps)/(exp(eps)+d) when j == i and
/// 1/(exp(eps)+d) otherwise. Length d+1, sums to one.
pub fn rr_pmf(
    i: DiscreteRating,
    d: u32,
    epsilon: PrivacyBudget,
) -> Result<Vec<f64>, MechanismError> {
    validate_alphabet(d)?;
    if i.value() > d {
        return Err(MechanismError::CategoryOutOfRange {
            value: i.value(),
            d,
        });
    }
    let e = epsilon.epsilon().exp();
    if e.is_infinite() {
        // Degenerate limit: all mass on the input category.
        return Ok((0..=d)
            .map(|j| if j == i.value() { 1.0 } else { 0.0 })
            .collect());
    }
    let denom = e + f64::from(d);
    Ok((0..=d)
        .map(|j| {
            if j == i.value() {
                e / denom
            } else {
                1.0 / denom
            }
        })
        .collect())
}

/// Privatize one star rating by inverse CDF over categories in index order
/// 0..=d from a single uniform draw.
pub fn rr_perturb_entry(
    x: DiscreteRating,
    d: u32,
    epsilon: PrivacyBudget,
    rng: &mut RandomStream,
) -> Result<DiscreteRating, MechanismError> {
    let pmf = rr_pmf(x, d, epsilon)?;
    let u = rng.next_unit_open();
    let mut cumulative = 0.0;
    for (j, p) in pmf.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return Ok(DiscreteRating(j as u32));
        }
    }
    Ok(DiscreteRating(d))
}

/// Privatize a whole star rating vector, coordinate by coordinate.
pub fn rr_perturb_vector(
    x: &[DiscreteRating],
    d: u32,
    epsilon: PrivacyBudget,
    rng: &mut RandomStream,
) -> Result<Vec<DiscreteRating>, MechanismError> {
    x.iter()
        .map(|&entry| rr_perturb_entry(entry, d, epsilon, rng))
        .collect()
}

/// Conditional second moment of the modified Laplace perturbation on a kept
/// coordinate: E[(X - Z)^2 | both observed] = 2 * (2/eps)^2 = 8/eps^2.
pub fn mlaplace_sq_error(epsilon: PrivacyBudget) -> f64 {
    let e = epsilon.epsilon();
    8.0 / (e * e)
}

/// Upper bound on the conditional squared error of randomized response on a
/// kept coordinate: (d-1)^2 * d / (exp(eps) + d).
pub fn rr_sq_error_bound(d: u32, epsilon: PrivacyBudget) -> Result<f64, MechanismError> {
    validate_alphabet(d)?;
    let df = f64::from(d);
    Ok((df - 1.0) * (df - 1.0) * df / (epsilon.epsilon().exp() + df))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn budget(e: f64) -> PrivacyBudget {
        PrivacyBudget::new(e).unwrap()
    }

    #[test]
    fn keep_prob_frozen_values() {
        // Independently evaluated: e/(e+1) at eps = 2.
        let p = bernoulli_keep_prob(budget(2.0));
        assert!((p - 0.7310585786300049).abs() < 1e-15);

        // eps -> 0+ gives 1/2.
        let p0 = bernoulli_keep_prob(budget(1e-12));
        assert!((p0 - 0.5).abs() < 1e-12);

        // eps = 100 is within 1e-20 of 1.
        let p100 = bernoulli_keep_prob(budget(100.0));
        assert!(1.0 - p100 < 1e-20);
        assert!(p100 <= 1.0);
    }

    #[test]
    fn keep_prob_strictly_increasing() {
        let grid = [0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 20.0];
        for pair in grid.windows(2) {
            assert!(bernoulli_keep_prob(budget(pair[0])) < bernoulli_keep_prob(budget(pair[1])));
        }
    }

    #[test]
    fn privacy_budget_rejects_bad_epsilon() {
        assert!(PrivacyBudget::new(0.0).is_err());
        assert!(PrivacyBudget::new(-1.0).is_err());
        assert!(PrivacyBudget::new(f64::NAN).is_err());
        assert!(PrivacyBudget::new(f64::INFINITY).is_err());
    }

    #[test]
    fn laplace_inverse_cdf_median_is_zero() {
        assert_eq!(laplace_inverse_cdf(0.5, 1.0), 0.0);
        assert_eq!(laplace_inverse_cdf(0.5, 17.0), 0.0);
    }

    #[test]
    fn laplace_interval_mass_matches_cdf_in_the_bulk() {
        for (lo, hi) in [(-2.0, -0.5), (-0.5, 0.75), (1.0, 3.0), (-1.0, 1.0)] {
            for (loc, scale) in [(0.0, 1.0), (0.3, 2.0), (-1.0, 0.5)] {
                let direct = laplace_interval_mass(lo, hi, loc, scale);
                let via_cdf = laplace_cdf(hi, loc, scale) - laplace_cdf(lo, loc, scale);
                assert!(
                    (direct - via_cdf).abs() < 1e-14,
                    "[{lo},{hi}) at ({loc},{scale}): {direct} vs {via_cdf}"
                );
            }
        }
        // Full line and the two half-lines.
        assert_eq!(
            laplace_interval_mass(f64::NEG_INFINITY, f64::INFINITY, 0.2, 1.0),
            1.0
        );
        let left = laplace_interval_mass(f64::NEG_INFINITY, 0.2, 0.2, 1.0);
        let right = laplace_interval_mass(0.2, f64::INFINITY, 0.2, 1.0);
        assert!((left - 0.5).abs() < 1e-15);
        assert!((right - 0.5).abs() < 1e-15);
    }

    #[test]
    fn laplace_tail_masses_keep_full_precision() {
        // Deep upper tail: the mass is 0.5 e^-(t-loc)/scale exactly; a CDF
        // difference would only get this to a few percent.
        let scale = 0.4;
        let tail = laplace_interval_mass(12.0, f64::INFINITY, 1.0, scale);
        let exact = 0.5 * (-(12.0 - 1.0) / scale).exp();
        assert!(((tail - exact) / exact).abs() < 1e-14, "{tail} vs {exact}");

        // Tail-mass ratio between two shifted laws is exp(shift / scale).
        let far = laplace_interval_mass(12.0, f64::INFINITY, -1.0, scale);
        let ratio = tail / far;
        let expected = (2.0 / scale).exp();
        assert!(
            ((ratio - expected) / expected).abs() < 1e-12,
            "tail ratio {ratio} vs {expected}"
        );

        // Narrow bins deep in the tail keep relative precision too.
        let bin = laplace_interval_mass(12.0, 12.25, 1.0, scale);
        let exact_bin = 0.5 * (-(11.0) / scale).exp() * (-(-0.25 / scale).exp_m1());
        assert!(((bin - exact_bin) / exact_bin).abs() < 1e-14);
    }

    #[test]
    fn laplace_sampler_moments() {
        // Laplace(0, 1): mean 0, variance 2. 1e6 draws, 3 standard errors.
        let mut rng = RandomStream::new(11);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let x = sample_laplace(1.0, &mut rng).unwrap();
            sum += x;
            sum_sq += x * x;
        }
        let nf = n as f64;
        let mean = sum / nf;
        let var = sum_sq / nf - mean * mean;
        // SE of the mean is sqrt(2/n); SE of the variance is ~sqrt(20/n).
        assert!(mean.abs() < 3.0 * (2.0 / nf).sqrt(), "mean {mean}");
        assert!(
            (var - 2.0).abs() < 3.0 * (20.0 / nf).sqrt(),
            "variance {var}"
        );
    }

    #[test]
    fn laplace_sampler_variance_matches_noise_scale() {
        // scale = 2/eps at eps = 2 is 1, so the sample variance must be
        // 2 * scale^2 = 2 within Monte Carlo error.
        let mut rng = RandomStream::new(5);
        let n = 1_000_000;
        let scale = 2.0 / 2.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let x = sample_laplace(scale, &mut rng).unwrap();
            sum_sq += x * x;
        }
        let second_moment = sum_sq / n as f64;
        // E X^2 = 2 scale^2; E X^4 = 24 scale^4 gives SE sqrt(20/n) for it.
        assert!((second_moment - 2.0).abs() < 3.0 * (20.0 / n as f64).sqrt());
    }

    #[test]
    fn laplace_sampler_rejects_bad_scale() {
        let mut rng = RandomStream::new(0);
        assert!(sample_laplace(0.0, &mut rng).is_err());
        assert!(sample_laplace(-2.0, &mut rng).is_err());
        assert!(sample_laplace(f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn mlaplace_entry_missing_rates() {
        // Pr(output missing | present input) = 1/(e+1) at eps = 2.
        let eps = budget(2.0);
        let mut rng = RandomStream::new(21);
        let n = 1_000_000;
        let mut missing = 0u64;
        for _ in 0..n {
            let z = mlaplace_perturb_entry(ContinuousRating::Value(0.5), eps, &mut rng).unwrap();
            if z.is_missing() {
                missing += 1;
            }
        }
        let p = 0.2689414213699951;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let freq = missing as f64 / n as f64;
        assert!((freq - p).abs() < 3.0 * se, "freq {freq}");

        // Pr(output missing | missing input) = e/(e+1) at eps = 2.
        let mut kept = 0u64;
        for _ in 0..n {
            let z = mlaplace_perturb_entry(ContinuousRating::Missing, eps, &mut rng).unwrap();
            if z.is_missing() {
                kept += 1;
            }
        }
        let q = 0.7310585786300049;
        let se_q = (q * (1.0 - q) / n as f64).sqrt();
        let freq_q = kept as f64 / n as f64;
        assert!((freq_q - q).abs() < 3.0 * se_q, "freq {freq_q}");
    }

    #[test]
    fn mlaplace_kept_noise_is_centered() {
        // Conditional on a kept output, the mean equals the input.
        let eps = budget(1.0);
        let mut rng = RandomStream::new(33);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut kept = 0u64;
        for _ in 0..n {
            if let PerturbedContinuousRating::Value(v) =
                mlaplace_perturb_entry(ContinuousRating::Value(0.0), eps, &mut rng).unwrap()
            {
                sum += v;
                kept += 1;
            }
        }
        let mean = sum / kept as f64;
        // Laplace(0, 2) has standard deviation sqrt(8).
        let se = (8.0f64 / kept as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "conditional mean {mean}");
    }

    #[test]
    fn mlaplace_entry_rejects_out_of_range() {
        let eps = budget(1.0);
        let mut rng = RandomStream::new(0);
        let bad = ContinuousRating::Value(1.5);
        assert_eq!(
            mlaplace_perturb_entry(bad, eps, &mut rng),
            Err(MechanismError::RatingOutOfRange(1.5))
        );
        assert!(ContinuousRating::value(f64::NAN).is_err());
        assert!(ContinuousRating::value(-1.0001).is_err());
        assert!(ContinuousRating::value(1.0).is_ok());
    }

    #[test]
    fn mlaplace_vector_empty_and_deterministic() {
        let eps = budget(2.0);
        let mut rng = RandomStream::new(9);
        let empty = mlaplace_perturb_vector(&[], eps, &mut rng).unwrap();
        assert!(empty.is_empty());

        let input = vec![
            ContinuousRating::Value(-1.0),
            ContinuousRating::Missing,
            ContinuousRating::Value(0.25),
        ];
        let a = mlaplace_perturb_vector(&input, eps, &mut RandomStream::new(77)).unwrap();
        let b = mlaplace_perturb_vector(&input, eps, &mut RandomStream::new(77)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mlaplace_all_missing_fabrication_count() {
        // Each missing coordinate fabricates with probability 1/(e+1) at eps=2.
        let eps = budget(2.0);
        let n = 64usize;
        let trials = 10_000;
        let input = vec![ContinuousRating::Missing; n];
        let mut rng = RandomStream::new(15);
        let mut fabricated = 0u64;
        for _ in 0..trials {
            let z = mlaplace_perturb_vector(&input, eps, &mut rng).unwrap();
            fabricated += z.iter().filter(|e| !e.is_missing()).count() as u64;
        }
        let total = (n * trials) as f64;
        let p = 0.2689414213699951;
        let se = (p * (1.0 - p) / total).sqrt();
        let freq = fabricated as f64 / total;
        assert!((freq - p).abs() < 4.0 * se, "fabrication rate {freq}");
    }

    #[test]
    fn rr_pmf_frozen_values() {
        let d = 5;
        let eps = budget(5.0f64.ln());
        for i in 0..=d {
            let pmf = rr_pmf(DiscreteRating::new(i, d).unwrap(), d, eps).unwrap();
            assert!((pmf[i as usize] - 0.5).abs() < 1e-12);
            for (j, &p) in pmf.iter().enumerate() {
                if j as u32 != i {
                    assert!((p - 0.1).abs() < 1e-12);
                }
            }
            let total: f64 = pmf.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rr_pmf_near_uniform_at_tiny_epsilon() {
        let d = 4;
        let pmf = rr_pmf(DiscreteRating::new(2, d).unwrap(), d, budget(1e-9)).unwrap();
        for &p in &pmf {
            assert!((p - 1.0 / 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rr_pmf_rejects_out_of_range() {
        assert!(DiscreteRating::new(6, 5).is_err());
        assert!(DiscreteRating::new(0, 0).is_err());
        // A rating built for a wider alphabet is rejected at use time.
        let wide = DiscreteRating::new(7, 9).unwrap();
        assert!(rr_pmf(wide, 5, budget(1.0)).is_err());
    }

    #[test]
    fn rr_entry_keep_frequency() {
        let d = 5;
        let eps = budget(5.0f64.ln());
        let x = DiscreteRating::new(3, d).unwrap();
        let mut rng = RandomStream::new(41);
        let n = 1_000_000;
        let mut same = 0u64;
        for _ in 0..n {
            if rr_perturb_entry(x, d, eps, &mut rng).unwrap() == x {
                same += 1;
            }
        }
        let se = (0.5 * 0.5 / n as f64).sqrt();
        let freq = same as f64 / n as f64;
        assert!((freq - 0.5).abs() < 3.0 * se, "keep frequency {freq}");
    }

    #[test]
    fn rr_entry_huge_epsilon_is_identity() {
        let d = 5;
        let eps = budget(50.0);
        let x = DiscreteRating::new(2, d).unwrap();
        let mut rng = RandomStream::new(4);
        for _ in 0..1_000_000 {
            assert_eq!(rr_perturb_entry(x, d, eps, &mut rng).unwrap(), x);
        }
    }

    #[test]
    fn rr_vector_empty_determinism_and_agreement() {
        let d = 4;
        let eps = budget(1.0);
        let empty = rr_perturb_vector(&[], d, eps, &mut RandomStream::new(1)).unwrap();
        assert!(empty.is_empty());

        let input: Vec<DiscreteRating> = (0..=d)
            .map(|v| DiscreteRating::new(v, d).unwrap())
            .collect();
        let a = rr_perturb_vector(&input, d, eps, &mut RandomStream::new(8)).unwrap();
        let b = rr_perturb_vector(&input, d, eps, &mut RandomStream::new(8)).unwrap();
        assert_eq!(a, b);

        // Expected Hamming agreement with the input is n * e^eps / (e^eps + d).
        let n_vec = 32usize;
        let trials = 10_000;
        let long_input: Vec<DiscreteRating> = (0..n_vec)
            .map(|k| DiscreteRating::new((k as u32) % (d + 1), d).unwrap())
            .collect();
        let keep = 1.0f64.exp() / (1.0f64.exp() + f64::from(d));
        let mut rng = RandomStream::new(12);
        let mut agree = 0u64;
        for _ in 0..trials {
            let z = rr_perturb_vector(&long_input, d, eps, &mut rng).unwrap();
            agree += z.iter().zip(&long_input).filter(|(a, b)| a == b).count() as u64;
        }
        let total = (n_vec * trials) as f64;
        let se = (keep * (1.0 - keep) / total).sqrt();
        let freq = agree as f64 / total;
        assert!((freq - keep).abs() < 4.0 * se, "agreement {freq} vs {keep}");
    }

    #[test]
    fn rr_vector_near_uniform_histogram_at_tiny_epsilon() {
        // eps = 0.01, d = 4: output categories are near-uniform; use a
        // chi-square statistic against the exact (slightly non-uniform) pmf.
        let d = 4;
        let eps = budget(0.01);
        let mut rng = RandomStream::new(19);
        let n = 200_000usize;
        let mut input = Vec::with_capacity(n);
        for _ in 0..n {
            let v = (rng.next_u64() % u64::from(d + 1)) as u32;
            input.push(DiscreteRating::new(v, d).unwrap());
        }
        let z = rr_perturb_vector(&input, d, eps, &mut rng).unwrap();
        let mut counts = [0u64; 5];
        for out in &z {
            counts[out.value() as usize] += 1;
        }
        // Inputs are uniform, so outputs are exactly uniform by symmetry.
        let expected = n as f64 / 5.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let dev = c as f64 - expected;
                dev * dev / expected
            })
            .sum();
        // 4 degrees of freedom: 99.9th percentile is 18.47.
        assert!(chi2 < 18.47, "chi-square {chi2}");
    }

    #[test]
    fn moment_formulas_frozen_values() {
        assert_eq!(mlaplace_sq_error(budget(2.0)), 2.0);
        assert_eq!(mlaplace_sq_error(budget(1.0)), 8.0);

        // d = 1 collapses to zero regardless of epsilon.
        assert_eq!(rr_sq_error_bound(1, budget(0.3)).unwrap(), 0.0);

        // Independently evaluated: 16 * 5 / 10 = 8 at d = 5, eps = ln 5.
        let b = rr_sq_error_bound(5, budget(5.0f64.ln())).unwrap();
        assert!((b - 8.0).abs() < 1e-12);
    }

    #[test]
    fn cross_thread_determinism() {
        // Same (input, eps, seed) on two threads gives identical output.
        let eps = budget(1.0);
        let input = vec![
            ContinuousRating::Value(0.5),
            ContinuousRating::Missing,
            ContinuousRating::Value(-0.75),
        ];
        let spawn_input = input.clone();
        let handle = std::thread::spawn(move || {
            mlaplace_perturb_vector(&spawn_input, eps, &mut RandomStream::new(99)).unwrap()
        });
        let local = mlaplace_perturb_vector(&input, eps, &mut RandomStream::new(99)).unwrap();
        assert_eq!(handle.join().unwrap(), local);
    }
}
