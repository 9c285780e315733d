//! File formats, star normalization and run configuration.
//!
//! Everything written here is canonical: rows sorted, floats printed with
//! twelve significant digits, LF line endings. Re-running a command with the
//! same inputs therefore produces byte-identical files.
//!
//! Ratings files are CSV with the exact header `user,item,value`; a missing
//! rating is an absent row, never a sentinel value. Run configurations are
//! flat `key=value` text files with `#` comments.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::completion::SolverConfig;
use crate::dp_verify::RatioReport;
use crate::matrix::{Matrix, RatingMatrix};
use crate::mechanisms::Mechanism;
use crate::utility::{GroundTruthSpec, TrialRecord, UtilityError, ValueScale};

pub const RATINGS_HEADER: &str = "user,item,value";
pub const RESULTS_HEADER: &str =
    "trial,seed,mechanism,epsilon,s,rho,bound,within_bound,recovery_error,converged";
pub const REPORT_HEADER: &str = "case,x,y,event,ratio,bound,method,pass";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate rating for ({user}, {item})")]
    DuplicatePair {
        line: usize,
        user: String,
        item: String,
    },
    #[error("missing required key '{0}'")]
    MissingKey(String),
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("invalid value for '{key}': {message}")]
    BadValue { key: String, message: String },
    #[error("star ratings need d >= 2 for normalization, got {0}")]
    InvalidStarScale(u32),
    #[error("star value {value} outside 1..={d}")]
    StarOutOfRange { value: u32, d: u32 },
    #[error("value must be finite, got {0}")]
    NonFinite(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Canonical float formatting: round to twelve significant digits, then
/// print the shortest positional representation of the rounded value, or a
/// trimmed scientific form outside [1e-4, 1e15) where positional digits
/// sprawl.
pub fn format_value(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let scientific = format!("{v:.11e}");
    let rounded: f64 = scientific.parse().expect("scientific notation parses back");
    let magnitude = rounded.abs();
    if (1e-4..1e15).contains(&magnitude) {
        format!("{rounded}")
    } else {
        trim_scientific(&format!("{rounded:.11e}"))
    }
}

fn trim_scientific(s: &str) -> String {
    let (mantissa, exponent) = s.split_once('e').expect("scientific form has an exponent");
    let mantissa = if mantissa.contains('.') {
        mantissa.trim_end_matches('0').trim_end_matches('.')
    } else {
        mantissa
    };
    format!("{mantissa}e{exponent}")
}

/// Map a star in 1..=d onto the uniform grid in [-1, 1]:
/// `value -> 2 (value - 1) / (d - 1) - 1`. Order preserving, grid spacing
/// exactly `2 / (d - 1)`.
pub fn normalize_stars(value: u32, d: u32) -> Result<f64, FormatError> {
    if d < 2 {
        return Err(FormatError::InvalidStarScale(d));
    }
    if value < 1 || value > d {
        return Err(FormatError::StarOutOfRange { value, d });
    }
    Ok(2.0 * f64::from(value - 1) / f64::from(d - 1) - 1.0)
}

/// Inverse of [`normalize_stars`] with rounding to the nearest star and
/// clamping into 1..=d.
pub fn denormalize_stars(x: f64, d: u32) -> Result<u32, FormatError> {
    if d < 2 {
        return Err(FormatError::InvalidStarScale(d));
    }
    if !x.is_finite() {
        return Err(FormatError::NonFinite(x));
    }
    let raw = ((x + 1.0) * f64::from(d - 1) / 2.0).round() + 1.0;
    Ok(raw.clamp(1.0, f64::from(d)) as u32)
}

/// Declared scale of the values in a ratings file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueSchema {
    /// Integer stars in 1..=d.
    Stars { d: u32 },
    /// Reals in [-1, 1].
    Continuous,
    /// Arbitrary finite reals (privatized continuous output).
    Unbounded,
}

/// A parsed ratings file: user and item ids in first-appearance order plus
/// the masked matrix they index into.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsFile {
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub matrix: RatingMatrix,
}

/// Parse ratings CSV. Rows must be `user,item,value` with unique
/// (user, item) pairs and values within the declared schema. Row and column
/// indices follow first appearance in the file.
pub fn parse_ratings(text: &str, schema: ValueSchema) -> Result<RatingsFile, FormatError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == RATINGS_HEADER => {}
        Some((_, header)) => {
            return Err(FormatError::Parse {
                line: 1,
                message: format!("expected header '{RATINGS_HEADER}', got '{header}'"),
            })
        }
        None => {
            return Err(FormatError::Parse {
                line: 1,
                message: format!("empty file, expected header '{RATINGS_HEADER}'"),
            })
        }
    }

    let mut users: Vec<String> = Vec::new();
    let mut items: Vec<String> = Vec::new();
    let mut user_index: HashMap<String, usize> = HashMap::new();
    let mut item_index: HashMap<String, usize> = HashMap::new();
    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();

    for (zero_based, raw) in lines {
        let line = zero_based + 1;
        let mut fields = raw.split(',');
        let (user, item, value) = match (fields.next(), fields.next(), fields.next(), fields.next())
        {
            (Some(u), Some(i), Some(v), None) => (u, i, v),
            _ => {
                return Err(FormatError::Parse {
                    line,
                    message: format!("expected three comma-separated fields, got '{raw}'"),
                })
            }
        };
        if user.is_empty() || item.is_empty() {
            return Err(FormatError::Parse {
                line,
                message: "user and item ids must be nonempty".to_string(),
            });
        }
        let value: f64 = value.parse().map_err(|_| FormatError::Parse {
            line,
            message: format!("malformed value '{value}'"),
        })?;
        validate_scale(value, schema).map_err(|message| FormatError::Parse { line, message })?;

        let next_user = users.len();
        let u = *user_index.entry(user.to_string()).or_insert_with(|| {
            users.push(user.to_string());
            next_user
        });
        let next_item = items.len();
        let i = *item_index.entry(item.to_string()).or_insert_with(|| {
            items.push(item.to_string());
            next_item
        });
        if seen.insert((u, i), line).is_some() {
            return Err(FormatError::DuplicatePair {
                line,
                user: user.to_string(),
                item: item.to_string(),
            });
        }
        entries.push((u, i, value));
    }

    let mut matrix = RatingMatrix::unobserved(users.len(), items.len());
    for (u, i, value) in entries {
        matrix.set_observed(u, i, value);
    }
    Ok(RatingsFile {
        users,
        items,
        matrix,
    })
}

fn validate_scale(value: f64, schema: ValueSchema) -> Result<(), String> {
    if !value.is_finite() {
        return Err(format!("value {value} is not finite"));
    }
    match schema {
        ValueSchema::Stars { d } => {
            let star = value.round();
            if (value - star).abs() > 1e-9 || star < 1.0 || star > f64::from(d) {
                return Err(format!("value {value} is not a star in 1..={d}"));
            }
        }
        ValueSchema::Continuous => {
            if !(-1.0..=1.0).contains(&value) {
                return Err(format!("value {value} outside [-1, 1]"));
            }
        }
        ValueSchema::Unbounded => {}
    }
    Ok(())
}

/// Serialize to canonical CSV: header plus one row per observed cell,
/// sorted by (user, item), trailing newline, LF endings.
pub fn ratings_to_csv(file: &RatingsFile) -> String {
    let mut rows: Vec<(String, String, f64)> = Vec::with_capacity(file.matrix.observed_count());
    for u in 0..file.matrix.rows() {
        for i in 0..file.matrix.cols() {
            if file.matrix.is_observed(u, i) {
                rows.push((
                    file.users[u].clone(),
                    file.items[i].clone(),
                    file.matrix.value(u, i),
                ));
            }
        }
    }
    rows.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
    let mut out = String::from(RATINGS_HEADER);
    out.push('\n');
    for (user, item, value) in rows {
        out.push_str(&format!("{user},{item},{}\n", format_value(value)));
    }
    out
}

pub fn read_ratings(path: &Path, schema: ValueSchema) -> Result<RatingsFile, FormatError> {
    let text = std::fs::read_to_string(path)?;
    parse_ratings(&text, schema)
}

/// Replace each observed star with its normalized [-1, 1] value.
pub fn normalize_matrix_stars(matrix: &RatingMatrix, d: u32) -> Result<RatingMatrix, FormatError> {
    let mut out = RatingMatrix::unobserved(matrix.rows(), matrix.cols());
    for i in 0..matrix.rows() {
        for j in 0..matrix.cols() {
            if matrix.is_observed(i, j) {
                let value = matrix.value(i, j);
                let star = value.round();
                if (value - star).abs() > 1e-9 || star < 1.0 {
                    return Err(FormatError::BadValue {
                        key: "value".to_string(),
                        message: format!("{value} is not a star in 1..={d}"),
                    });
                }
                out.set_observed(i, j, normalize_stars(star as u32, d)?);
            }
        }
    }
    Ok(out)
}

/// Dense estimate as a raw CSV grid: one matrix row per line, columns comma
/// separated, canonical float formatting.
pub fn matrix_to_grid_csv(matrix: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..matrix.rows() {
        let row: Vec<String> = (0..matrix.cols())
            .map(|j| format_value(matrix[(i, j)]))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// One results row per trial, matching [`RESULTS_HEADER`].
pub fn trial_record_row(trial: usize, record: &TrialRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        trial,
        record.seed,
        record.mechanism.tag(),
        format_value(record.epsilon),
        record.s,
        format_value(record.rho),
        format_value(record.bound),
        record.within_bound,
        format_value(record.recovery_error),
        record.converged
    )
}

/// One certification report row, matching [`REPORT_HEADER`].
pub fn ratio_report_row(report: &RatioReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        report.case_label,
        report.input_x,
        report.input_y,
        report.event,
        format_value(report.ratio),
        format_value(report.bound),
        report.method,
        report.passes()
    )
}

/// Parse a mechanism name plus its optional alphabet size. Randomized
/// response requires `d`; the continuous mechanism ignores it.
pub fn parse_mechanism(name: &str, d: Option<u32>) -> Result<Mechanism, FormatError> {
    match name {
        "mlaplace" => Ok(Mechanism::ModifiedLaplace),
        "rr" => {
            let d = d.ok_or_else(|| FormatError::BadValue {
                key: "d".to_string(),
                message: "randomized response requires the star alphabet size d".to_string(),
            })?;
            if d < 1 {
                return Err(FormatError::BadValue {
                    key: "d".to_string(),
                    message: format!("d must be >= 1, got {d}"),
                });
            }
            Ok(Mechanism::RandomizedResponse { d })
        }
        other => Err(FormatError::BadValue {
            key: "mechanism".to_string(),
            message: format!("unknown mechanism '{other}', expected mlaplace or rr"),
        }),
    }
}

/// A full experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mechanism: Mechanism,
    pub epsilon: f64,
    pub gamma: f64,
    pub rho0: f64,
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub p_obs: f64,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl RunConfig {
    /// The ground-truth spec implied by this configuration: a star scale
    /// for randomized response, the continuous scale otherwise.
    pub fn ground_truth_spec(&self) -> Result<GroundTruthSpec, UtilityError> {
        let scale = match self.mechanism {
            Mechanism::ModifiedLaplace => ValueScale::Continuous,
            Mechanism::RandomizedResponse { d } => ValueScale::Stars { d },
        };
        GroundTruthSpec::new(self.m, self.n, self.r, scale, self.p_obs, self.rho0)
    }
}

/// Parse a flat `key=value` configuration. Blank lines and `#` comments are
/// skipped; keys must be known and unique. Solver keys are optional and fall
/// back to [`SolverConfig::default`].
pub fn parse_run_config(text: &str) -> Result<RunConfig, FormatError> {
    let mut values: HashMap<&str, (usize, &str)> = HashMap::new();
    for (zero_based, raw) in text.lines().enumerate() {
        let line = zero_based + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| FormatError::Parse {
            line,
            message: format!("expected key=value, got '{content}'"),
        })?;
        let key = key.trim();
        let value = value.trim();
        const KNOWN: &[&str] = &[
            "mechanism",
            "d",
            "epsilon",
            "gamma",
            "rho0",
            "m",
            "n",
            "r",
            "p_obs",
            "seed",
            "max_iterations",
            "step_tolerance",
            "constraint_tolerance",
            "lambda_bisection_steps",
            "rank_cap",
        ];
        let key = *KNOWN
            .iter()
            .find(|&&k| k == key)
            .ok_or_else(|| FormatError::UnknownKey(key.to_string()))?;
        if values.insert(key, (line, value)).is_some() {
            return Err(FormatError::Parse {
                line,
                message: format!("duplicate key '{key}'"),
            });
        }
    }

    fn required<'a>(
        values: &HashMap<&str, (usize, &'a str)>,
        key: &str,
    ) -> Result<&'a str, FormatError> {
        values
            .get(key)
            .map(|&(_, v)| v)
            .ok_or_else(|| FormatError::MissingKey(key.to_string()))
    }

    fn parse_as<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T, FormatError> {
        raw.parse().map_err(|_| FormatError::BadValue {
            key: key.to_string(),
            message: format!("cannot parse '{raw}'"),
        })
    }

    fn optional<T: std::str::FromStr>(
        values: &HashMap<&str, (usize, &str)>,
        key: &str,
        default: T,
    ) -> Result<T, FormatError> {
        match values.get(key) {
            Some(&(_, raw)) => parse_as(key, raw),
            None => Ok(default),
        }
    }

    let mechanism_name = required(&values, "mechanism")?;
    let d = match values.get("d") {
        Some(&(_, raw)) => Some(parse_as::<u32>("d", raw)?),
        None => None,
    };
    let mechanism = parse_mechanism(mechanism_name, d)?;

    let defaults = SolverConfig::default();
    let solver = SolverConfig {
        max_iterations: optional(&values, "max_iterations", defaults.max_iterations)?,
        step_tolerance: optional(&values, "step_tolerance", defaults.step_tolerance)?,
        constraint_tolerance: optional(
            &values,
            "constraint_tolerance",
            defaults.constraint_tolerance,
        )?,
        lambda_bisection_steps: optional(
            &values,
            "lambda_bisection_steps",
            defaults.lambda_bisection_steps,
        )?,
        rank_cap: optional(&values, "rank_cap", defaults.rank_cap)?,
    };

    Ok(RunConfig {
        mechanism,
        epsilon: parse_as("epsilon", required(&values, "epsilon")?)?,
        gamma: parse_as("gamma", required(&values, "gamma")?)?,
        rho0: parse_as("rho0", required(&values, "rho0")?)?,
        m: parse_as("m", required(&values, "m")?)?,
        n: parse_as("n", required(&values, "n")?)?,
        r: parse_as("r", required(&values, "r")?)?,
        p_obs: parse_as("p_obs", required(&values, "p_obs")?)?,
        seed: parse_as("seed", required(&values, "seed")?)?,
        solver,
    })
}
