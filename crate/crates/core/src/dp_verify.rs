//! Numerical certification of the privacy ratio bound for both mechanisms.
//!
//! For any two inputs x, y and any output event S the mechanisms must
//! satisfy Pr(M(x) in S) <= exp(eps) * Pr(M(y) in S). Randomized response
//! has a finite output alphabet, so its certificate is an exhaustive exact
//! enumeration. The modified Laplace mechanism has a continuous output
//! component; its certificate evaluates closed-form probabilities over a
//! covering partition of bins, tails and the missing atom. The density
//! ratio of two shifted Laplace laws is piecewise monotone, so bin events
//! certify interval events; this is a certification, not a proof.
//!
//! Monte Carlo checks (sampler fidelity, vector composition for the
//! continuous mechanism) use Wilson 99.9% intervals so a certificate only
//! fails when the discrepancy is statistically solid.

use std::fmt;

use thiserror::Error;

use crate::mechanisms::{
    bernoulli_keep_prob, laplace_interval_mass, mlaplace_perturb_vector, rr_pmf, ContinuousRating,
    DiscreteRating, Mechanism, MechanismError, PerturbedContinuousRating, PrivacyBudget,
};
use crate::rng::RandomStream;

/// Additive tolerance on exact ratio comparisons: certified ratios may
/// exceed the bound by at most this much before a certificate fails.
pub const RATIO_TOLERANCE: f64 = 1e-9;

/// Empirical frequencies must sit within this many standard errors of the
/// closed-form probability.
pub const FREQUENCY_SE_LIMIT: f64 = 4.0;

/// Two-sided 99.9% normal quantile used for Wilson score intervals.
pub const WILSON_Z_999: f64 = 3.2905267314919255;

const MIN_FREQUENCY_SAMPLES: u64 = 100_000;
const MIN_COMPOSITION_SAMPLES: u64 = 1_000_000;
const MAX_COMPOSITION_DIMENSION: usize = 3;
const MAX_ENUMERATION: u128 = 200_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("interval requires lo < hi, got [{lo}, {hi})")]
    BadInterval { lo: f64, hi: f64 },
    #[error("event not valid here: {0}")]
    MalformedEvent(String),
    #[error("union members must be pairwise disjoint")]
    OverlappingUnion,
    #[error("partition does not cover the output space: {0}")]
    PartitionNotCovering(String),
    #[error("vector length must be between 1 and {MAX_COMPOSITION_DIMENSION}, got {0}")]
    UnsupportedDimension(usize),
    #[error("at least {required} samples required, got {got}")]
    UndersizedSampleCount { required: u64, got: u64 },
    #[error("exact enumeration too large: {0} combinations")]
    EnumerationTooLarge(u128),
    #[error("input kind does not match the mechanism")]
    MechanismMismatch,
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
}

/// A measurable output event for either mechanism.
///
/// Intervals are half-open `[lo, hi)` and may have infinite endpoints.
/// Unions must be pairwise disjoint so probabilities add.
#[derive(Debug, Clone, PartialEq)]
pub enum OutputEvent {
    RealInterval { lo: f64, hi: f64 },
    MissingAtom,
    Category(u32),
    Product(Vec<OutputEvent>),
    Union(Vec<OutputEvent>),
}

impl OutputEvent {
    pub fn interval(lo: f64, hi: f64) -> Result<Self, VerifyError> {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(VerifyError::BadInterval { lo, hi });
        }
        Ok(OutputEvent::RealInterval { lo, hi })
    }

    /// Membership test for a privatized continuous rating.
    pub fn contains_continuous(&self, out: PerturbedContinuousRating) -> bool {
        match (self, out) {
            (OutputEvent::RealInterval { lo, hi }, PerturbedContinuousRating::Value(v)) => {
                *lo <= v && v < *hi
            }
            (OutputEvent::MissingAtom, PerturbedContinuousRating::Missing) => true,
            (OutputEvent::Union(members), _) => members.iter().any(|m| m.contains_continuous(out)),
            _ => false,
        }
    }

    /// Membership test for a privatized star rating.
    pub fn contains_discrete(&self, out: DiscreteRating) -> bool {
        match self {
            OutputEvent::Category(j) => *j == out.value(),
            OutputEvent::Union(members) => members.iter().any(|m| m.contains_discrete(out)),
            _ => false,
        }
    }

    /// Check that the event is made of intervals and missing atoms only,
    /// with disjoint union members.
    fn validate_continuous(&self) -> Result<(), VerifyError> {
        match self {
            OutputEvent::RealInterval { lo, hi } => {
                if lo.is_nan() || hi.is_nan() || lo >= hi {
                    return Err(VerifyError::BadInterval { lo: *lo, hi: *hi });
                }
                Ok(())
            }
            OutputEvent::MissingAtom => Ok(()),
            OutputEvent::Union(members) => {
                let mut intervals = Vec::new();
                let mut missing_seen = false;
                for m in members {
                    m.validate_continuous()?;
                    match m {
                        OutputEvent::RealInterval { lo, hi } => intervals.push((*lo, *hi)),
                        OutputEvent::MissingAtom => {
                            if missing_seen {
                                return Err(VerifyError::OverlappingUnion);
                            }
                            missing_seen = true;
                        }
                        OutputEvent::Union(_) => {
                            return Err(VerifyError::MalformedEvent(
                                "nested unions are not supported".into(),
                            ))
                        }
                        other => {
                            return Err(VerifyError::MalformedEvent(format!(
                                "event {other} cannot appear in a continuous union"
                            )))
                        }
                    }
                }
                intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
                for pair in intervals.windows(2) {
                    if pair[1].0 < pair[0].1 {
                        return Err(VerifyError::OverlappingUnion);
                    }
                }
                Ok(())
            }
            other => Err(VerifyError::MalformedEvent(format!(
                "event {other} is not a continuous-output event"
            ))),
        }
    }

    fn is_mixed(&self) -> bool {
        match self {
            OutputEvent::Union(members) => {
                members
                    .iter()
                    .any(|m| matches!(m, OutputEvent::MissingAtom))
                    && members
                        .iter()
                        .any(|m| matches!(m, OutputEvent::RealInterval { .. }))
            }
            _ => false,
        }
    }

    fn touches_missing(&self) -> bool {
        match self {
            OutputEvent::MissingAtom => true,
            OutputEvent::Union(members) => members.iter().any(OutputEvent::touches_missing),
            _ => false,
        }
    }
}

impl fmt::Display for OutputEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutputEvent::RealInterval { lo, hi } => write!(f, "[{lo};{hi})"),
            OutputEvent::MissingAtom => write!(f, "?"),
            OutputEvent::Category(j) => write!(f, "{j}"),
            OutputEvent::Product(members) => {
                for (k, m) in members.iter().enumerate() {
                    if k > 0 {
                        write!(f, "*")?;
                    }
                    write!(f, "({m})")?;
                }
                Ok(())
            }
            OutputEvent::Union(members) => {
                for (k, m) in members.iter().enumerate() {
                    if k > 0 {
                        write!(f, "u")?;
                    }
                    write!(f, "{m}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyMethod {
    Exact,
    MonteCarlo,
}

impl fmt::Display for VerifyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VerifyMethod::Exact => write!(f, "exact"),
            VerifyMethod::MonteCarlo => write!(f, "monte_carlo"),
        }
    }
}

/// One certified ratio.
///
/// `ratio` is the certified quantity: the exact probability ratio for
/// [`VerifyMethod::Exact`], and the Wilson-adjusted empirical ratio (lower
/// numerator bound over upper denominator bound) for
/// [`VerifyMethod::MonteCarlo`]. `slack` is zero for exact reports and the
/// gap between the raw empirical ratio and the adjusted one otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioReport {
    pub case_label: String,
    pub input_x: String,
    pub input_y: String,
    pub event: OutputEvent,
    pub ratio: f64,
    pub bound: f64,
    pub method: VerifyMethod,
    pub mc_samples: u64,
    pub slack: f64,
}

impl RatioReport {
    pub fn passes(&self) -> bool {
        self.ratio <= self.bound + RATIO_TOLERANCE
    }
}

fn rating_display(x: ContinuousRating) -> String {
    match x {
        ContinuousRating::Value(v) => format!("{v}"),
        ContinuousRating::Missing => "?".to_string(),
    }
}

fn rating_kind(x: ContinuousRating) -> &'static str {
    if x.is_missing() {
        "missing"
    } else {
        "real"
    }
}

fn event_kind(event: &OutputEvent) -> &'static str {
    if event.is_mixed() {
        "mixed"
    } else if event.touches_missing() {
        "missing"
    } else {
        "real"
    }
}

/// Closed-form probability that the privatized value of `x` lands in
/// `event`. A present input contributes keep-probability times the Laplace
/// mass of the shifted event plus drop-probability on the missing atom; a
/// missing input is symmetric with the fabricated noise centered at zero.
pub fn mlaplace_event_prob(
    x: ContinuousRating,
    epsilon: PrivacyBudget,
    event: &OutputEvent,
) -> Result<f64, VerifyError> {
    event.validate_continuous()?;
    if let ContinuousRating::Value(v) = x {
        if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
            return Err(MechanismError::RatingOutOfRange(v).into());
        }
    }
    let keep = bernoulli_keep_prob(epsilon);
    let scale = 2.0 / epsilon.epsilon();
    let p = match x {
        ContinuousRating::Value(v) => {
            keep * laplace_mass(event, v, scale) + (1.0 - keep) * missing_mass(event)
        }
        ContinuousRating::Missing => {
            keep * missing_mass(event) + (1.0 - keep) * laplace_mass(event, 0.0, scale)
        }
    };
    Ok(p.clamp(0.0, 1.0))
}

fn laplace_mass(event: &OutputEvent, location: f64, scale: f64) -> f64 {
    match event {
        OutputEvent::RealInterval { lo, hi } => laplace_interval_mass(*lo, *hi, location, scale),
        OutputEvent::MissingAtom => 0.0,
        OutputEvent::Union(members) => members
            .iter()
            .map(|m| laplace_mass(m, location, scale))
            .sum(),
        _ => 0.0,
    }
}

fn missing_mass(event: &OutputEvent) -> f64 {
    match event {
        OutputEvent::MissingAtom => 1.0,
        OutputEvent::Union(members) => members.iter().map(missing_mass).sum(),
        _ => 0.0,
    }
}

/// Build the standard continuous partition: `bins` half-open cells over
/// [lo, hi), two infinite tails and the missing atom.
pub fn binned_partition(lo: f64, hi: f64, bins: usize) -> Vec<OutputEvent> {
    assert!(lo < hi && bins >= 1, "need lo < hi and at least one bin");
    let width = hi - lo;
    let mut edges = Vec::with_capacity(bins + 1);
    for i in 0..=bins {
        edges.push(lo + width * i as f64 / bins as f64);
    }
    edges[0] = lo;
    edges[bins] = hi;
    let mut events = Vec::with_capacity(bins + 3);
    events.push(OutputEvent::RealInterval {
        lo: f64::NEG_INFINITY,
        hi: lo,
    });
    for i in 0..bins {
        events.push(OutputEvent::RealInterval {
            lo: edges[i],
            hi: edges[i + 1],
        });
    }
    events.push(OutputEvent::RealInterval {
        lo: hi,
        hi: f64::INFINITY,
    });
    events.push(OutputEvent::MissingAtom);
    events
}

/// The input grid used for entry certification of the continuous mechanism:
/// all ordered pairs over {-1, -0.5, 0, 0.5, 1, missing}.
pub fn mlaplace_grid() -> Vec<(ContinuousRating, ContinuousRating)> {
    let points = [
        ContinuousRating::Value(-1.0),
        ContinuousRating::Value(-0.5),
        ContinuousRating::Value(0.0),
        ContinuousRating::Value(0.5),
        ContinuousRating::Value(1.0),
        ContinuousRating::Missing,
    ];
    let mut grid = Vec::with_capacity(points.len() * points.len());
    for &x in &points {
        for &y in &points {
            grid.push((x, y));
        }
    }
    grid
}

fn validate_partition_covers(partition: &[OutputEvent]) -> Result<(), VerifyError> {
    let mut intervals = Vec::new();
    let mut has_missing = false;
    for event in partition {
        event.validate_continuous()?;
        flatten_continuous(event, &mut intervals, &mut has_missing);
    }
    if !has_missing {
        return Err(VerifyError::PartitionNotCovering(
            "missing atom not included".into(),
        ));
    }
    if intervals.is_empty() {
        return Err(VerifyError::PartitionNotCovering(
            "no real intervals included".into(),
        ));
    }
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    if intervals[0].0 != f64::NEG_INFINITY {
        return Err(VerifyError::PartitionNotCovering(format!(
            "real line starts at {} instead of -inf",
            intervals[0].0
        )));
    }
    let mut hi = intervals[0].1;
    for &(lo, next_hi) in &intervals[1..] {
        if lo != hi {
            return Err(VerifyError::PartitionNotCovering(format!(
                "gap or overlap between {hi} and {lo}"
            )));
        }
        hi = next_hi;
    }
    if hi != f64::INFINITY {
        return Err(VerifyError::PartitionNotCovering(format!(
            "real line ends at {hi} instead of +inf"
        )));
    }
    Ok(())
}

fn flatten_continuous(
    event: &OutputEvent,
    intervals: &mut Vec<(f64, f64)>,
    has_missing: &mut bool,
) {
    match event {
        OutputEvent::RealInterval { lo, hi } => intervals.push((*lo, *hi)),
        OutputEvent::MissingAtom => *has_missing = true,
        OutputEvent::Union(members) => {
            for m in members {
                flatten_continuous(m, intervals, has_missing);
            }
        }
        _ => {}
    }
}

/// Exact entry-level certificate for the continuous mechanism.
///
/// Evaluates the ratio Pr(M(x) in S) / Pr(M(y) in S) for every pair in
/// `grid` and three families of events: each partition cell on its own,
/// the missing atom, and each real cell joined with the missing atom (the
/// "more than missing" shapes). Reports are sorted with the largest ratio
/// first; the certificate passes when every ratio is within
/// [`RATIO_TOLERANCE`] of exp(eps).
pub fn certify_mlaplace_entry(
    epsilon: PrivacyBudget,
    grid: &[(ContinuousRating, ContinuousRating)],
    partition: &[OutputEvent],
) -> Result<Vec<RatioReport>, VerifyError> {
    validate_partition_covers(partition)?;
    let bound = epsilon.epsilon().exp();

    let mut events: Vec<OutputEvent> = partition.to_vec();
    for event in partition {
        if !event.touches_missing() {
            events.push(OutputEvent::Union(vec![
                event.clone(),
                OutputEvent::MissingAtom,
            ]));
        }
    }

    let mut reports = Vec::with_capacity(grid.len() * events.len());
    for &(x, y) in grid {
        for event in &events {
            let px = mlaplace_event_prob(x, epsilon, event)?;
            let py = mlaplace_event_prob(y, epsilon, event)?;
            let ratio = if py > 0.0 {
                px / py
            } else if px == 0.0 {
                // Both sides assign no mass: the bound is vacuous here.
                0.0
            } else {
                f64::INFINITY
            };
            reports.push(RatioReport {
                case_label: format!(
                    "{}-{}/{}",
                    rating_kind(x),
                    rating_kind(y),
                    event_kind(event)
                ),
                input_x: rating_display(x),
                input_y: rating_display(y),
                event: event.clone(),
                ratio,
                bound,
                method: VerifyMethod::Exact,
                mc_samples: 0,
                slack: 0.0,
            });
        }
    }
    sort_reports(&mut reports);
    Ok(reports)
}

/// Exhaustive exact certificate for randomized response: every ordered input
/// pair x != y against every singleton output. The ratios take exactly three
/// values: exp(eps) when the output equals x, exp(-eps) when it equals y,
/// and 1 otherwise.
pub fn certify_rr_entry(d: u32, epsilon: PrivacyBudget) -> Result<Vec<RatioReport>, VerifyError> {
    let bound = epsilon.epsilon().exp();
    let pmfs: Vec<Vec<f64>> = (0..=d)
        .map(|i| rr_pmf(DiscreteRating::new(i, d)?, d, epsilon))
        .collect::<Result<_, _>>()?;

    let mut reports = Vec::new();
    for x in 0..=d {
        for y in 0..=d {
            if x == y {
                continue;
            }
            for s in 0..=d {
                let label = if s == x {
                    "s=x"
                } else if s == y {
                    "s=y"
                } else {
                    "s=other"
                };
                reports.push(RatioReport {
                    case_label: label.to_string(),
                    input_x: x.to_string(),
                    input_y: y.to_string(),
                    event: OutputEvent::Category(s),
                    ratio: pmfs[x as usize][s as usize] / pmfs[y as usize][s as usize],
                    bound,
                    method: VerifyMethod::Exact,
                    mc_samples: 0,
                    slack: 0.0,
                });
            }
        }
    }
    sort_reports(&mut reports);
    Ok(reports)
}

fn sort_reports(reports: &mut [RatioReport]) {
    reports.sort_by(|a, b| {
        b.ratio
            .total_cmp(&a.ratio)
            .then_with(|| a.case_label.cmp(&b.case_label))
            .then_with(|| a.input_x.cmp(&b.input_x))
            .then_with(|| a.input_y.cmp(&b.input_y))
            .then_with(|| a.event.to_string().cmp(&b.event.to_string()))
    });
}

/// Certify the n-fold vector composition: the worst product-event ratio must
/// stay within exp(n * eps).
///
/// Randomized response is certified exactly by enumerating all input vector
/// pairs and all product singleton events. The continuous mechanism is
/// certified by Monte Carlo over a coarse product partition with Wilson
/// 99.9% slack; `mc_samples` must be at least one million there.
pub fn certify_vector_composition(
    mechanism: &Mechanism,
    n: usize,
    epsilon: PrivacyBudget,
    rng: &mut RandomStream,
    mc_samples: u64,
) -> Result<RatioReport, VerifyError> {
    if n == 0 || n > MAX_COMPOSITION_DIMENSION {
        return Err(VerifyError::UnsupportedDimension(n));
    }
    match mechanism {
        Mechanism::RandomizedResponse { d } => compose_rr_exact(*d, n, epsilon),
        Mechanism::ModifiedLaplace => compose_mlaplace_mc(n, epsilon, rng, mc_samples),
    }
}

fn compose_rr_exact(d: u32, n: usize, epsilon: PrivacyBudget) -> Result<RatioReport, VerifyError> {
    let alphabet = u128::from(d) + 1;
    let combos = alphabet.pow(3 * n as u32);
    if combos > MAX_ENUMERATION {
        return Err(VerifyError::EnumerationTooLarge(combos));
    }
    let pmfs: Vec<Vec<f64>> = (0..=d)
        .map(|i| rr_pmf(DiscreteRating::new(i, d)?, d, epsilon))
        .collect::<Result<_, _>>()?;

    let size = (d + 1) as usize;
    let count = size.pow(n as u32);
    // Decode every index once up front; the triple loop below only reads.
    let vectors: Vec<Vec<usize>> = (0..count)
        .map(|mut idx| {
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                v.push(idx % size);
                idx /= size;
            }
            v
        })
        .collect();

    let mut max_ratio = f64::NEG_INFINITY;
    let mut argmax = (0usize, 0usize, 0usize);
    for (xi, x) in vectors.iter().enumerate() {
        for (yi, y) in vectors.iter().enumerate() {
            for (si, s) in vectors.iter().enumerate() {
                let mut ratio = 1.0;
                for k in 0..n {
                    ratio *= pmfs[x[k]][s[k]] / pmfs[y[k]][s[k]];
                }
                if ratio > max_ratio {
                    max_ratio = ratio;
                    argmax = (xi, yi, si);
                }
            }
        }
    }

    let display = |idx: usize| {
        let parts: Vec<String> = vectors[idx].iter().map(|k| k.to_string()).collect();
        format!("({})", parts.join(";"))
    };
    let event = OutputEvent::Product(
        vectors[argmax.2]
            .iter()
            .map(|&s| OutputEvent::Category(s as u32))
            .collect(),
    );
    Ok(RatioReport {
        case_label: "product".to_string(),
        input_x: display(argmax.0),
        input_y: display(argmax.1),
        event,
        ratio: max_ratio,
        bound: (epsilon.epsilon() * n as f64).exp(),
        method: VerifyMethod::Exact,
        mc_samples: 0,
        slack: 0.0,
    })
}

/// Per-coordinate classification grid for the Monte Carlo composition
/// check: left tail, six width-2 bins over [-6, 6), right tail, missing.
fn coarse_cell_events() -> Vec<OutputEvent> {
    let mut events = binned_partition(-6.0, 6.0, 6);
    debug_assert_eq!(events.len(), 9);
    // Order is left tail, bins, right tail, missing; keep it as-is.
    let missing = events.pop().expect("partition has a missing atom");
    events.push(missing);
    events
}

fn coarse_cell_index(out: PerturbedContinuousRating) -> usize {
    match out {
        PerturbedContinuousRating::Missing => 8,
        PerturbedContinuousRating::Value(v) => {
            if v < -6.0 {
                0
            } else if v >= 6.0 {
                7
            } else {
                1 + ((v + 6.0) / 2.0).floor() as usize
            }
        }
    }
}

fn compose_mlaplace_mc(
    n: usize,
    epsilon: PrivacyBudget,
    rng: &mut RandomStream,
    mc_samples: u64,
) -> Result<RatioReport, VerifyError> {
    if mc_samples < MIN_COMPOSITION_SAMPLES {
        return Err(VerifyError::UndersizedSampleCount {
            required: MIN_COMPOSITION_SAMPLES,
            got: mc_samples,
        });
    }
    let pairs: Vec<(Vec<ContinuousRating>, Vec<ContinuousRating>)> = vec![
        (
            vec![ContinuousRating::Value(-1.0); n],
            vec![ContinuousRating::Value(1.0); n],
        ),
        (
            vec![ContinuousRating::Value(0.5); n],
            vec![ContinuousRating::Missing; n],
        ),
        (
            vec![ContinuousRating::Missing; n],
            vec![ContinuousRating::Value(0.5); n],
        ),
    ];
    let cells = coarse_cell_events();
    let cell_count = cells.len().pow(n as u32);
    let bound = (epsilon.epsilon() * n as f64).exp();

    let mut best: Option<RatioReport> = None;
    for (x, y) in &pairs {
        let counts_x = sample_cell_counts(x, epsilon, rng, mc_samples, n, cell_count)?;
        let counts_y = sample_cell_counts(y, epsilon, rng, mc_samples, n, cell_count)?;
        for cell in 0..cell_count {
            let (num_lo, _) = wilson_bounds(counts_x[cell], mc_samples, WILSON_Z_999);
            let (_, den_hi) = wilson_bounds(counts_y[cell], mc_samples, WILSON_Z_999);
            let adjusted = if den_hi > 0.0 { num_lo / den_hi } else { 0.0 };
            let raw = if counts_y[cell] > 0 {
                counts_x[cell] as f64 / counts_y[cell] as f64
            } else {
                adjusted
            };
            let is_new_max = best.as_ref().is_none_or(|b| adjusted > b.ratio);
            if is_new_max {
                let mut idx = cell;
                let mut members = Vec::with_capacity(n);
                for _ in 0..n {
                    members.push(cells[idx % cells.len()].clone());
                    idx /= cells.len();
                }
                best = Some(RatioReport {
                    case_label: "product".to_string(),
                    input_x: vector_display(x),
                    input_y: vector_display(y),
                    event: OutputEvent::Product(members),
                    ratio: adjusted,
                    bound,
                    method: VerifyMethod::MonteCarlo,
                    mc_samples,
                    slack: (raw - adjusted).max(0.0),
                });
            }
        }
    }
    Ok(best.expect("at least one pair is always evaluated"))
}

fn vector_display(v: &[ContinuousRating]) -> String {
    let parts: Vec<String> = v.iter().map(|&r| rating_display(r)).collect();
    format!("({})", parts.join(";"))
}

fn sample_cell_counts(
    input: &[ContinuousRating],
    epsilon: PrivacyBudget,
    rng: &mut RandomStream,
    mc_samples: u64,
    n: usize,
    cell_count: usize,
) -> Result<Vec<u64>, VerifyError> {
    debug_assert_eq!(input.len(), n);
    let mut counts = vec![0u64; cell_count];
    for _ in 0..mc_samples {
        let z = mlaplace_perturb_vector(input, epsilon, rng)?;
        let mut cell = 0usize;
        let mut stride = 1usize;
        for &out in &z {
            cell += coarse_cell_index(out) * stride;
            stride *= 9;
        }
        counts[cell] += 1;
    }
    Ok(counts)
}

/// Scalar input for the sampler fidelity check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MechanismInput {
    Continuous(ContinuousRating),
    Discrete(DiscreteRating),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyRow {
    pub event: OutputEvent,
    pub expected: f64,
    pub observed: u64,
    pub frequency: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTest {
    pub rows: Vec<FrequencyRow>,
    pub samples: u64,
}

impl FrequencyTest {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    /// The first event whose empirical frequency strayed too far.
    pub fn first_failure(&self) -> Option<&FrequencyRow> {
        self.rows.iter().find(|r| !r.pass)
    }
}

/// Draw `mc_samples` outputs for the given input and compare per-event
/// empirical frequencies against the closed-form probabilities, at
/// [`FREQUENCY_SE_LIMIT`] standard errors.
pub fn empirical_frequency_test(
    mechanism: &Mechanism,
    input: MechanismInput,
    epsilon: PrivacyBudget,
    partition: &[OutputEvent],
    mc_samples: u64,
    rng: &mut RandomStream,
) -> Result<FrequencyTest, VerifyError> {
    if mc_samples < MIN_FREQUENCY_SAMPLES {
        return Err(VerifyError::UndersizedSampleCount {
            required: MIN_FREQUENCY_SAMPLES,
            got: mc_samples,
        });
    }
    let mut counts = vec![0u64; partition.len()];
    let expected: Vec<f64> = match (mechanism, input) {
        (Mechanism::ModifiedLaplace, MechanismInput::Continuous(x)) => {
            let expected = partition
                .iter()
                .map(|event| mlaplace_event_prob(x, epsilon, event))
                .collect::<Result<Vec<_>, _>>()?;
            for _ in 0..mc_samples {
                let z = crate::mechanisms::mlaplace_perturb_entry(x, epsilon, rng)?;
                for (k, event) in partition.iter().enumerate() {
                    if event.contains_continuous(z) {
                        counts[k] += 1;
                    }
                }
            }
            expected
        }
        (Mechanism::RandomizedResponse { d }, MechanismInput::Discrete(x)) => {
            let pmf = rr_pmf(x, *d, epsilon)?;
            let expected = partition
                .iter()
                .map(|event| discrete_event_prob(event, &pmf))
                .collect::<Result<Vec<_>, _>>()?;
            for _ in 0..mc_samples {
                let z = crate::mechanisms::rr_perturb_entry(x, *d, epsilon, rng)?;
                for (k, event) in partition.iter().enumerate() {
                    if event.contains_discrete(z) {
                        counts[k] += 1;
                    }
                }
            }
            expected
        }
        _ => return Err(VerifyError::MechanismMismatch),
    };

    let rows = partition
        .iter()
        .zip(expected.iter())
        .zip(counts.iter())
        .map(|((event, &p), &observed)| {
            let frequency = observed as f64 / mc_samples as f64;
            let se = (p * (1.0 - p) / mc_samples as f64).sqrt();
            let pass = if se > 0.0 {
                (frequency - p).abs() <= FREQUENCY_SE_LIMIT * se
            } else {
                frequency == p
            };
            FrequencyRow {
                event: event.clone(),
                expected: p,
                observed,
                frequency,
                pass,
            }
        })
        .collect();
    Ok(FrequencyTest {
        rows,
        samples: mc_samples,
    })
}

fn discrete_event_prob(event: &OutputEvent, pmf: &[f64]) -> Result<f64, VerifyError> {
    match event {
        OutputEvent::Category(j) => pmf.get(*j as usize).copied().ok_or_else(|| {
            VerifyError::MalformedEvent(format!("category {j} outside the alphabet"))
        }),
        OutputEvent::Union(members) => {
            let mut seen = std::collections::BTreeSet::new();
            let mut total = 0.0;
            for m in members {
                match m {
                    OutputEvent::Category(j) => {
                        if !seen.insert(*j) {
                            return Err(VerifyError::OverlappingUnion);
                        }
                        total += discrete_event_prob(m, pmf)?;
                    }
                    other => {
                        return Err(VerifyError::MalformedEvent(format!(
                            "event {other} is not a discrete-output event"
                        )))
                    }
                }
            }
            Ok(total)
        }
        other => Err(VerifyError::MalformedEvent(format!(
            "event {other} is not a discrete-output event"
        ))),
    }
}

/// All singleton categories {0}, ..., {d}.
pub fn category_partition(d: u32) -> Vec<OutputEvent> {
    (0..=d).map(OutputEvent::Category).collect()
}

/// Wilson score interval for `successes` out of `samples` at normal
/// quantile `z`, clamped into [0, 1].
pub fn wilson_bounds(successes: u64, samples: u64, z: f64) -> (f64, f64) {
    let n = samples as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = (z / denom) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}
