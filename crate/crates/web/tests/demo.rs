use bessplan_web::{coverage, plan_day, plan_without_storage, CoverageInput, PlanInput};

fn day_input() -> PlanInput {
    PlanInput { n_buses: 5, seed: 3, day: 1, price_margin: 0.2, load_margin: 0.1, bess_cost: 2.0 }
}

#[test]
fn storage_never_costs_more_than_going_without() {
    let with = plan_day(&day_input()).unwrap();
    let without = plan_without_storage(&day_input()).unwrap();
    assert!(without.sizes.iter().all(|x| *x == 0.0));
    assert!(with.objective <= without.objective + 1e-6, "{} > {}", with.objective, without.objective);
    assert_eq!(with.steps.len(), 24);
    assert!(with.steps.iter().all(|s| s.marginal_load_cost.is_finite() && s.import.is_finite()));
}

#[test]
fn storage_shifts_no_energy_when_none_is_installed() {
    let without = plan_without_storage(&day_input()).unwrap();
    assert!(without.steps.iter().all(|s| s.dispatch.abs() < 1e-7));
}

#[test]
fn bad_margins_and_feeders_are_rejected() {
    assert!(plan_day(&PlanInput { price_margin: 1.5, ..day_input() }).is_err());
    assert!(plan_day(&PlanInput { n_buses: 1, ..day_input() }).is_err());
}

#[test]
fn ceiling_rule_covers_at_nominal_level() {
    let input = CoverageInput { alpha: 0.1, m_cal: 500, m_test: 20_000, spread: 4.0, floor_rule: false, seed: 9 };
    let r = coverage(&input).unwrap();
    assert_eq!(r.rank, 451);
    assert_eq!(r.q_star, r.scores[450]);
    assert!(r.empirical >= 0.88 && r.empirical <= r.upper_bound + 0.01, "{}", r.empirical);
}

#[test]
fn tiny_calibration_set_gives_infinite_threshold() {
    let input = CoverageInput { alpha: 0.1, m_cal: 5, m_test: 100, spread: 1.0, floor_rule: false, seed: 1 };
    let r = coverage(&input).unwrap();
    assert!(r.q_star.is_infinite());
    assert_eq!(r.empirical, 1.0);
}
