//! Privacy-ratio certification invariants for both mechanisms.

use ldp_ratings::dp_verify::{
    binned_partition, certify_mlaplace_entry, certify_rr_entry, certify_vector_composition,
    mlaplace_grid, OutputEvent, VerifyMethod,
};
use ldp_ratings::mechanisms::{Mechanism, PrivacyBudget};
use ldp_ratings::rng::RandomStream;

use proptest::prelude::*;

fn budget(e: f64) -> PrivacyBudget {
    PrivacyBudget::new(e).unwrap()
}

fn close_rel(value: f64, target: f64, rtol: f64) -> bool {
    (value - target).abs() <= rtol * target.max(1.0)
}

#[test]
fn rr_pmf_valid_on_the_pinned_grid() {
    use ldp_ratings::mechanisms::{rr_pmf, DiscreteRating};
    for d in 1..=10u32 {
        for eps_val in [0.01, 0.1, 1.0, 5.0f64.ln(), 5.0, 50.0] {
            for i in 0..=d {
                let pmf = rr_pmf(DiscreteRating::new(i, d).unwrap(), d, budget(eps_val)).unwrap();
                assert_eq!(pmf.len(), (d + 1) as usize);
                assert!(pmf.iter().all(|&p| p >= 0.0));
                let total: f64 = pmf.iter().sum();
                assert!(
                    (total - 1.0).abs() < 1e-12,
                    "d {d} eps {eps_val} i {i}: mass {total}"
                );
            }
        }
    }
}

#[test]
fn rr_certificates_across_alphabets_and_budgets() {
    for d in 1..=6u32 {
        for eps_val in [0.1, 0.5, 1.0, 2.0, 5.0f64.ln()] {
            let reports = certify_rr_entry(d, budget(eps_val)).unwrap();
            let e = eps_val.exp();
            assert!(
                close_rel(reports[0].ratio, e, 1e-12),
                "d {d} eps {eps_val}: max ratio {}",
                reports[0].ratio
            );
            for r in &reports {
                assert!(
                    close_rel(r.ratio, e, 1e-12)
                        || close_rel(r.ratio, 1.0 / e, 1e-12)
                        || close_rel(r.ratio, 1.0, 1e-12),
                    "d {d} eps {eps_val}: stray ratio {}",
                    r.ratio
                );
                assert!(r.passes());
            }
        }
    }
}

#[test]
fn mlaplace_nine_case_shapes_are_all_certified() {
    let partition = binned_partition(-8.0, 8.0, 64);
    let grid = mlaplace_grid();
    for eps_val in [0.5, 1.0, 2.0] {
        let reports = certify_mlaplace_entry(budget(eps_val), &grid, &partition).unwrap();
        let bound = eps_val.exp();
        for r in &reports {
            assert!(
                r.ratio <= bound + 1e-9,
                "eps {eps_val} case {}: ratio {} above {}",
                r.case_label,
                r.ratio,
                bound
            );
        }
        // Every input-pair/event shape from the case analysis must appear.
        for x_kind in ["real", "missing"] {
            for y_kind in ["real", "missing"] {
                for s_kind in ["real", "missing", "mixed"] {
                    let label = format!("{x_kind}-{y_kind}/{s_kind}");
                    assert!(
                        reports.iter().any(|r| r.case_label == label),
                        "case {label} missing from the certificate"
                    );
                }
            }
        }
    }
}

#[test]
fn mlaplace_certificate_is_tight_at_extreme_separation() {
    // The +-1 input pair against a far tail realizes the bound itself.
    for eps_val in [0.5, 1.0, 2.0] {
        let reports = certify_mlaplace_entry(
            budget(eps_val),
            &mlaplace_grid(),
            &binned_partition(-8.0, 8.0, 64),
        )
        .unwrap();
        let max = reports[0].ratio;
        assert!(
            close_rel(max, eps_val.exp(), 1e-9),
            "eps {eps_val}: max {max} vs {}",
            eps_val.exp()
        );
    }
}

#[test]
fn mlaplace_certificate_holds_off_the_pinned_grid() {
    // Tighter bins, wider range and budgets outside the usual grid; the
    // worst ratio must still be exactly the bound, attained at the tails.
    let partition = binned_partition(-12.0, 12.0, 128);
    let grid = mlaplace_grid();
    for eps_val in [0.1, 5.0] {
        let reports = certify_mlaplace_entry(budget(eps_val), &grid, &partition).unwrap();
        let bound = eps_val.exp();
        for r in &reports {
            assert!(r.ratio <= bound + 1e-9, "eps {eps_val}: {}", r.ratio);
        }
        assert!(
            close_rel(reports[0].ratio, bound, 1e-9),
            "eps {eps_val}: max {} vs bound {bound}",
            reports[0].ratio
        );
    }
}

#[test]
fn mlaplace_composition_three_coordinates() {
    let mut rng = RandomStream::new(31_337);
    let report = certify_vector_composition(
        &Mechanism::ModifiedLaplace,
        3,
        budget(1.0),
        &mut rng,
        1_000_000,
    )
    .unwrap();
    assert!(
        report.passes(),
        "n = 3 adjusted ratio {} above bound {}",
        report.ratio,
        report.bound
    );
    assert!(report.ratio > 1.0);
}

#[test]
fn rr_composition_exact_products() {
    let mut rng = RandomStream::new(0);
    // n = 2: the worst product ratio is the square of the entry worst case.
    for eps_val in [0.5, 1.0] {
        let report = certify_vector_composition(
            &Mechanism::RandomizedResponse { d: 2 },
            2,
            budget(eps_val),
            &mut rng,
            0,
        )
        .unwrap();
        assert_eq!(report.method, VerifyMethod::Exact);
        assert!(close_rel(report.ratio, (2.0 * eps_val).exp(), 1e-12));
        assert!(report.passes());
    }
    // n = 3 with a tiny alphabet stays exact and within the cubed bound.
    let report = certify_vector_composition(
        &Mechanism::RandomizedResponse { d: 1 },
        3,
        budget(1.0),
        &mut rng,
        0,
    )
    .unwrap();
    assert!(close_rel(report.ratio, 3.0f64.exp(), 1e-12));
}

#[test]
fn mlaplace_composition_monte_carlo() {
    let mut rng = RandomStream::new(2024);
    let report = certify_vector_composition(
        &Mechanism::ModifiedLaplace,
        2,
        budget(1.0),
        &mut rng,
        1_000_000,
    )
    .unwrap();
    assert_eq!(report.method, VerifyMethod::MonteCarlo);
    assert_eq!(report.mc_samples, 1_000_000);
    assert!(report.slack >= 0.0);
    assert!(
        report.passes(),
        "adjusted ratio {} above bound {}",
        report.ratio,
        report.bound
    );
    // The worst pair should actually exercise the certificate: the adjusted
    // ratio has to be substantially above one.
    assert!(
        report.ratio > 1.0,
        "degenerate certificate {}",
        report.ratio
    );

    // One-coordinate composition reduces to the entry-level bound.
    let entry = certify_vector_composition(
        &Mechanism::ModifiedLaplace,
        1,
        budget(1.0),
        &mut rng,
        1_000_000,
    )
    .unwrap();
    assert!(entry.passes());
    assert!(entry.bound < report.bound);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rr_pmf_is_a_distribution_with_three_ratio_values(
        d in 1u32..=10,
        eps_val in 0.01f64..50.0,
        x_raw in 0u32..=10,
        y_raw in 0u32..=10,
    ) {
        use ldp_ratings::mechanisms::{rr_pmf, DiscreteRating};
        let eps = budget(eps_val);
        let x = DiscreteRating::new(x_raw % (d + 1), d).unwrap();
        let y = DiscreteRating::new(y_raw % (d + 1), d).unwrap();
        let px = rr_pmf(x, d, eps).unwrap();
        let py = rr_pmf(y, d, eps).unwrap();

        let total: f64 = px.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(px.iter().all(|&p| p >= 0.0));

        if x != y {
            let e = eps_val.exp();
            for j in 0..=d as usize {
                let ratio = px[j] / py[j];
                let target = if j as u32 == x.value() {
                    e
                } else if j as u32 == y.value() {
                    1.0 / e
                } else {
                    1.0
                };
                prop_assert!((ratio - target).abs() <= 1e-12 * target.max(1.0));
            }
        }
    }

    #[test]
    fn mlaplace_event_probabilities_are_probabilities(
        eps_val in 0.05f64..20.0,
        x_choice in 0usize..6,
        lo in -6.0f64..5.0,
        width in 0.1f64..4.0,
    ) {
        use ldp_ratings::dp_verify::mlaplace_event_prob;
        use ldp_ratings::mechanisms::ContinuousRating;
        let points = [
            ContinuousRating::Value(-1.0),
            ContinuousRating::Value(-0.5),
            ContinuousRating::Value(0.0),
            ContinuousRating::Value(0.5),
            ContinuousRating::Value(1.0),
            ContinuousRating::Missing,
        ];
        let x = points[x_choice];
        let eps = budget(eps_val);
        let event = OutputEvent::interval(lo, lo + width).unwrap();
        let p = mlaplace_event_prob(x, eps, &event).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));

        // Adding the missing atom can only grow the probability, and the
        // total space has probability one.
        let mixed = OutputEvent::Union(vec![event, OutputEvent::MissingAtom]);
        let p_mixed = mlaplace_event_prob(x, eps, &mixed).unwrap();
        prop_assert!(p_mixed >= p - 1e-15);

        let everything = OutputEvent::Union(vec![
            OutputEvent::interval(f64::NEG_INFINITY, f64::INFINITY).unwrap(),
            OutputEvent::MissingAtom,
        ]);
        let p_all = mlaplace_event_prob(x, eps, &everything).unwrap();
        prop_assert!((p_all - 1.0).abs() < 1e-12);
    }
}
