//! Command-line surface for the rating-privacy toolkit.
//!
//! Exit codes: 0 on success, 1 when a certificate fails or the solver does
//! not converge, 2 on usage or input errors.

use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ldp_ratings::completion::{solve_completion, SolverConfig};
use ldp_ratings::dp_verify::{
    binned_partition, category_partition, certify_mlaplace_entry, certify_rr_entry,
    certify_vector_composition, empirical_frequency_test, mlaplace_grid, FrequencyTest,
    MechanismInput, RatioReport, VerifyError, VerifyMethod, FREQUENCY_SE_LIMIT,
};
use ldp_ratings::io::{
    format_value, matrix_to_grid_csv, normalize_matrix_stars, parse_mechanism, parse_run_config,
    ratings_to_csv, ratio_report_row, read_ratings, trial_record_row, RatingsFile, ValueSchema,
    REPORT_HEADER, RESULTS_HEADER,
};
use ldp_ratings::mechanisms::{ContinuousRating, DiscreteRating, Mechanism, PrivacyBudget};
use ldp_ratings::rng::RandomStream;
use ldp_ratings::utility::{
    bound_mlaplace, bound_rr, privatize_matrix, run_trial, UtilityBoundInputs,
};

#[derive(Parser)]
#[command(
    name = "ldp-ratings",
    version,
    about = "Privatize rating files locally, certify the privacy guarantee, and recover the rating matrix"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Privatize a ratings CSV row by row (one stream per user).
    Privatize {
        /// mlaplace or rr.
        #[arg(long)]
        mechanism: String,
        /// Per-coordinate privacy budget.
        #[arg(long)]
        epsilon: f64,
        /// Star alphabet size. Required for rr; for mlaplace it declares
        /// star input that is normalized into [-1, 1] first.
        #[arg(long)]
        d: Option<u32>,
        #[arg(long)]
        seed: u64,
        /// Input ratings CSV (header `user,item,value`).
        #[arg(long = "in")]
        input: PathBuf,
        /// Output path for the privatized CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Certify the privacy ratio bound and write a report CSV.
    VerifyDp {
        #[arg(long)]
        mechanism: String,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        d: Option<u32>,
        /// Adds seeded Monte Carlo checks (sampler fidelity; composition
        /// when at least one million samples are requested).
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path for the report CSV.
        #[arg(long)]
        report: PathBuf,
    },
    /// Print the high-probability bound on the privatized observation error.
    Bound {
        #[arg(long)]
        mechanism: String,
        #[arg(long)]
        epsilon: f64,
        /// Tolerance level in (0, 1).
        #[arg(long)]
        gamma: f64,
        /// Per-entry intrinsic noise scale.
        #[arg(long)]
        rho0: f64,
        /// Count of observed true ratings.
        #[arg(long)]
        s: u64,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: Option<u32>,
    },
    /// Run seeded coverage experiments from a key=value config file.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trials: usize,
        /// Output path for the per-trial results CSV.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recover a dense estimate from a privatized ratings file.
    Recover {
        #[arg(long = "in")]
        input: PathBuf,
        /// Constraint radius for the masked residual.
        #[arg(long)]
        rho: f64,
        /// Output path for the dense estimate (raw CSV grid; rows and
        /// columns follow first appearance in the input file).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_iterations: Option<usize>,
        #[arg(long)]
        step_tolerance: Option<f64>,
        #[arg(long)]
        constraint_tolerance: Option<f64>,
        #[arg(long)]
        bisection_steps: Option<usize>,
        #[arg(long)]
        rank_cap: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<ExitCode, Box<dyn Error>> {
    match command {
        Command::Privatize {
            mechanism,
            epsilon,
            d,
            seed,
            input,
            out,
        } => privatize(&mechanism, epsilon, d, seed, &input, &out),
        Command::VerifyDp {
            mechanism,
            epsilon,
            d,
            samples,
            seed,
            report,
        } => verify_dp(&mechanism, epsilon, d, samples, seed, &report),
        Command::Bound {
            mechanism,
            epsilon,
            gamma,
            rho0,
            s,
            m,
            n,
            d,
        } => bound(&mechanism, epsilon, gamma, rho0, s, m, n, d),
        Command::Experiment {
            config,
            trials,
            out,
            seed,
        } => experiment(&config, trials, &out, seed),
        Command::Recover {
            input,
            rho,
            out,
            max_iterations,
            step_tolerance,
            constraint_tolerance,
            bisection_steps,
            rank_cap,
        } => recover(
            &input,
            rho,
            &out,
            max_iterations,
            step_tolerance,
            constraint_tolerance,
            bisection_steps,
            rank_cap,
        ),
    }
}

fn privatize(
    mechanism_name: &str,
    epsilon: f64,
    d: Option<u32>,
    seed: u64,
    input: &Path,
    out: &Path,
) -> Result<ExitCode, Box<dyn Error>> {
    let mechanism = parse_mechanism(mechanism_name, d)?;
    let budget = PrivacyBudget::new(epsilon)?;
    let mut rng = RandomStream::new(seed);

    let privatized = match mechanism {
        Mechanism::ModifiedLaplace => {
            let (schema, normalize_d) = match d {
                Some(d) => (ValueSchema::Stars { d }, Some(d)),
                None => (ValueSchema::Continuous, None),
            };
            let file = read_ratings(input, schema)?;
            let matrix = match normalize_d {
                Some(d) => normalize_matrix_stars(&file.matrix, d)?,
                None => file.matrix.clone(),
            };
            let z = privatize_matrix(&matrix, &mechanism, budget, &mut rng)?;
            RatingsFile {
                users: file.users,
                items: file.items,
                matrix: z,
            }
        }
        Mechanism::RandomizedResponse { d } => {
            let file = read_ratings(input, ValueSchema::Stars { d })?;
            let z = privatize_matrix(&file.matrix, &mechanism, budget, &mut rng)?;
            RatingsFile {
                users: file.users,
                items: file.items,
                matrix: z,
            }
        }
    };

    fs::write(out, ratings_to_csv(&privatized))?;
    Ok(ExitCode::SUCCESS)
}

/// Render a frequency test as report rows: the `ratio` column carries the
/// deviation in standard errors and the bound column the acceptance limit.
fn frequency_rows(input_label: &str, test: &FrequencyTest) -> Vec<RatioReport> {
    test.rows
        .iter()
        .map(|row| {
            let se = (row.expected * (1.0 - row.expected) / test.samples as f64).sqrt();
            let deviation = if se > 0.0 {
                (row.frequency - row.expected).abs() / se
            } else if row.frequency == row.expected {
                0.0
            } else {
                f64::INFINITY
            };
            RatioReport {
                case_label: "frequency".to_string(),
                input_x: input_label.to_string(),
                input_y: input_label.to_string(),
                event: row.event.clone(),
                ratio: deviation,
                bound: FREQUENCY_SE_LIMIT,
                method: VerifyMethod::MonteCarlo,
                mc_samples: test.samples,
                slack: 0.0,
            }
        })
        .collect()
}

fn verify_dp(
    mechanism_name: &str,
    epsilon: f64,
    d: Option<u32>,
    samples: Option<u64>,
    seed: u64,
    report_path: &Path,
) -> Result<ExitCode, Box<dyn Error>> {
    let mechanism = parse_mechanism(mechanism_name, d)?;
    let budget = PrivacyBudget::new(epsilon)?;
    let mut rng = RandomStream::new(seed);
    let mut reports: Vec<RatioReport> = Vec::new();

    match mechanism {
        Mechanism::RandomizedResponse { d } => {
            reports.extend(certify_rr_entry(d, budget)?);
            match certify_vector_composition(&mechanism, 2, budget, &mut rng, 0) {
                Ok(report) => reports.push(report),
                // Composition enumeration is skipped for very wide alphabets.
                Err(VerifyError::EnumerationTooLarge(_)) => {}
                Err(err) => return Err(err.into()),
            }
            if let Some(samples) = samples {
                let mut stars = vec![0u32, d.div_ceil(2), d];
                stars.dedup();
                let partition = category_partition(d);
                for star in stars {
                    let input = DiscreteRating::new(star, d)?;
                    let test = empirical_frequency_test(
                        &mechanism,
                        MechanismInput::Discrete(input),
                        budget,
                        &partition,
                        samples,
                        &mut rng,
                    )?;
                    reports.extend(frequency_rows(&star.to_string(), &test));
                }
            }
        }
        Mechanism::ModifiedLaplace => {
            let partition = binned_partition(-8.0, 8.0, 64);
            reports.extend(certify_mlaplace_entry(
                budget,
                &mlaplace_grid(),
                &partition,
            )?);
            if let Some(samples) = samples {
                if samples >= 1_000_000 {
                    reports.push(certify_vector_composition(
                        &mechanism, 2, budget, &mut rng, samples,
                    )?);
                }
                let frequency_partition = binned_partition(-8.0, 8.0, 16);
                for (label, input) in [
                    ("-1", ContinuousRating::Value(-1.0)),
                    ("0.5", ContinuousRating::Value(0.5)),
                    ("?", ContinuousRating::Missing),
                ] {
                    let test = empirical_frequency_test(
                        &mechanism,
                        MechanismInput::Continuous(input),
                        budget,
                        &frequency_partition,
                        samples,
                        &mut rng,
                    )?;
                    reports.extend(frequency_rows(label, &test));
                }
            }
        }
    }

    let mut lines = Vec::with_capacity(reports.len() + 1);
    lines.push(REPORT_HEADER.to_string());
    let mut all_pass = true;
    for report in &reports {
        all_pass &= report.passes();
        lines.push(ratio_report_row(report));
    }
    fs::write(report_path, lines.join("\n") + "\n")?;

    if all_pass {
        println!("certified: {} ratio checks passed", reports.len());
        Ok(ExitCode::SUCCESS)
    } else {
        let failures = reports.iter().filter(|r| !r.passes()).count();
        eprintln!(
            "certification FAILED: {failures} of {} checks",
            reports.len()
        );
        Ok(ExitCode::from(1))
    }
}

#[allow(clippy::too_many_arguments)]
fn bound(
    mechanism_name: &str,
    epsilon: f64,
    gamma: f64,
    rho0: f64,
    s: u64,
    m: usize,
    n: usize,
    d: Option<u32>,
) -> Result<ExitCode, Box<dyn Error>> {
    let mechanism = parse_mechanism(mechanism_name, d)?;
    let inputs = UtilityBoundInputs::new(rho0, s as usize, epsilon, gamma, m, n, d.unwrap_or(1))?;
    let value = match mechanism {
        Mechanism::ModifiedLaplace => bound_mlaplace(&inputs),
        Mechanism::RandomizedResponse { .. } => bound_rr(&inputs),
    };
    println!("{value:.11e}");
    Ok(ExitCode::SUCCESS)
}

fn experiment(
    config_path: &Path,
    trials: usize,
    out: &Path,
    seed_override: Option<u64>,
) -> Result<ExitCode, Box<dyn Error>> {
    if trials == 0 {
        return Err("experiment needs at least one trial".into());
    }
    let text = fs::read_to_string(config_path)?;
    let mut config = parse_run_config(&text)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    let spec = config.ground_truth_spec()?;
    let budget = PrivacyBudget::new(config.epsilon)?;

    let mut lines = Vec::with_capacity(trials + 1);
    lines.push(RESULTS_HEADER.to_string());
    let mut within = 0usize;
    for trial in 0..trials {
        let record = run_trial(
            &spec,
            &config.mechanism,
            budget,
            config.gamma,
            config.seed.wrapping_add(trial as u64),
            &config.solver,
        )?;
        if record.within_bound {
            within += 1;
        }
        lines.push(trial_record_row(trial, &record));
    }
    fs::write(out, lines.join("\n") + "\n")?;
    println!("coverage={}", format_value(within as f64 / trials as f64));
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn recover(
    input: &Path,
    rho: f64,
    out: &Path,
    max_iterations: Option<usize>,
    step_tolerance: Option<f64>,
    constraint_tolerance: Option<f64>,
    bisection_steps: Option<usize>,
    rank_cap: Option<usize>,
) -> Result<ExitCode, Box<dyn Error>> {
    let file = read_ratings(input, ValueSchema::Unbounded)?;
    let defaults = SolverConfig::default();
    let config = SolverConfig {
        max_iterations: max_iterations.unwrap_or(defaults.max_iterations),
        step_tolerance: step_tolerance.unwrap_or(defaults.step_tolerance),
        constraint_tolerance: constraint_tolerance.unwrap_or(defaults.constraint_tolerance),
        lambda_bisection_steps: bisection_steps.unwrap_or(defaults.lambda_bisection_steps),
        rank_cap: rank_cap.unwrap_or(defaults.rank_cap),
    };
    let result = solve_completion(&file.matrix, rho, &config)?;
    fs::write(out, matrix_to_grid_csv(&result.estimate))?;
    println!(
        "converged={} residual={} nuclear_norm={} iterations={}",
        result.converged,
        format_value(result.constraint_residual),
        format_value(result.nuclear_norm),
        result.iterations
    );
    if result.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("solver did not reach the requested residual window");
        Ok(ExitCode::from(1))
    }
}
