//! Browser demo: plan storage on a synthetic feeder, read the marginal cost
//! of load off the optimal duals, and watch split-conformal coverage.
//!
//! Every operation has a plain Rust entry point returning a serializable
//! report, and a `wasm_bindgen` wrapper that hands the report to the page
//! as JSON.

use bessplan::assembly::ModelConfig;
use bessplan::conformal::{calibrate, quantile_index, QuantileRule};
use bessplan::robust::{build_at, solve_stage, BoxSet, SingleStage};
use bessplan::solver::{value_gradient, SolveResult, SolverOptions};
use bessplan::synth::{apply_pv, generate, ScenarioSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const STEPS_PER_DAY: usize = 24;

/// Knobs of the planning demo.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanInput {
    pub n_buses: usize,
    pub seed: u64,
    pub day: usize,
    /// Relative half-width of the price box around the realized prices.
    pub price_margin: f64,
    /// Relative half-width of the load box around the realized loads.
    pub load_margin: f64,
    pub bess_cost: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepReport {
    /// Worst-case price, averaged over phases.
    pub price: f64,
    /// Worst-case aggregate load, summed over phases.
    pub load: f64,
    /// Real power bought at the substation, summed over phases.
    pub import: f64,
    /// Net storage dispatch over all buses and phases (positive charges).
    pub dispatch: f64,
    /// Change of the optimal cost per unit of extra load, summed over phases.
    pub marginal_load_cost: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanReport {
    pub objective: f64,
    pub sizes: Vec<f64>,
    pub iterations: usize,
    /// Set when some complementary pair is nearly degenerate, in which case
    /// the marginal costs are one element of a subdifferential.
    pub degenerate: bool,
    pub steps: Vec<StepReport>,
}

fn scaled_box(truth: &[[f64; 3]], margin: f64) -> Result<BoxSet, String> {
    let lower = truth.iter().map(|r| r.map(|v| v * (1.0 - margin))).collect();
    let upper = truth.iter().map(|r| r.map(|v| v * (1.0 + margin))).collect();
    BoxSet::new(lower, upper).map_err(|e| e.to_string())
}

fn build_day(input: &PlanInput) -> Result<SingleStage, String> {
    if !(0.0..1.0).contains(&input.price_margin) || !(0.0..1.0).contains(&input.load_margin) {
        return Err("margins must lie in [0, 1)".into());
    }
    let spec = ScenarioSpec {
        n_buses: input.n_buses,
        days: (input.day + 1).max(2),
        seed: input.seed,
        bess_cost: input.bess_cost,
        ..Default::default()
    };
    let scenario = generate(&spec).map_err(|e| e.to_string())?;
    let series = &scenario.series;
    let window = input.day * STEPS_PER_DAY..(input.day + 1) * STEPS_PER_DAY;
    let price = scaled_box(&series.price[window.clone()], input.price_margin)?;
    let load_truth: Vec<[f64; 3]> = window.clone().map(|t| series.aggregate_load(t)).collect();
    let load = scaled_box(&load_truth, input.load_margin)?;
    let solar: Vec<f64> = window.map(|t| series.weather[t][3]).collect();
    let network = apply_pv(&scenario.network, &scenario.pv_capacity, &solar);
    let config = ModelConfig { horizon: STEPS_PER_DAY, ..Default::default() };
    build_at(&network, &config, &scenario.weights, price.upper, load.upper).map_err(|e| e.to_string())
}

fn summarize(stage: &SingleStage, result: &SolveResult, objective: f64, sizes: Vec<f64>) -> Result<PlanReport, String> {
    let plan = stage.program.extract(result);
    let gradient = value_gradient(result, &stage.params, &stage.program.lp).map_err(|e| e.to_string())?;
    let steps = (0..STEPS_PER_DAY)
        .map(|t| StepReport {
            price: stage.price[t].iter().sum::<f64>() / 3.0,
            load: stage.load[t].iter().sum(),
            import: plan.s0[t].re().iter().sum(),
            dispatch: plan.dispatch.iter().map(|bus| bus[t].iter().sum::<f64>()).sum(),
            marginal_load_cost: (0..3).map(|p| gradient.grad[stage.load_param(t, p)]).sum(),
        })
        .collect();
    Ok(PlanReport { objective, sizes, iterations: result.iterations, degenerate: gradient.degenerate.is_some(), steps })
}

/// Robust siting and sizing for one day of a generated scenario, with boxes
/// drawn symmetrically around the realized prices and loads.
pub fn plan_day(input: &PlanInput) -> Result<PlanReport, String> {
    let stage = build_day(input)?;
    let (result, plan) = solve_stage(&stage, &SolverOptions::default()).map_err(|e| e.to_string())?;
    summarize(&stage, &result, plan.objective, plan.x)
}

/// Knobs of the coverage demo.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageInput {
    pub alpha: f64,
    pub m_cal: usize,
    pub m_test: usize,
    /// Ratio between the largest and smallest residual scale.
    pub spread: f64,
    pub floor_rule: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    pub q_star: f64,
    /// 1-based rank of the threshold among the sorted calibration scores.
    pub rank: usize,
    pub nominal: f64,
    /// `1 - alpha + 1 / (m_cal + 1)`, the upper coverage bound for
    /// continuous scores under the ceiling rule.
    pub upper_bound: f64,
    pub empirical: f64,
    /// Sorted calibration scores, for the histogram.
    pub scores: Vec<f64>,
}

/// Calibrates a threshold on residual scores of a heteroscedastic forecast
/// and measures coverage on fresh draws from the same distribution.
pub fn coverage(input: &CoverageInput) -> Result<CoverageReport, String> {
    if input.spread.is_nan() || input.spread < 1.0 {
        return Err("spread must be at least 1".into());
    }
    if input.m_test == 0 {
        return Err("need at least one test draw".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(input.seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let scale = Uniform::new_inclusive(1.0, input.spread).map_err(|e| e.to_string())?;
    let mut draw =
        |m: usize| -> Vec<f64> { (0..m).map(|_| (scale.sample(&mut rng) * noise.sample(&mut rng)).abs()).collect() };
    let rule = if input.floor_rule { QuantileRule::Floor } else { QuantileRule::Ceiling };
    let cal = draw(input.m_cal);
    let threshold = calibrate(&cal, input.alpha, rule).map_err(|e| e.to_string())?;
    let test = draw(input.m_test);
    let covered = test.iter().filter(|s| **s <= threshold.q_star).count();
    let mut scores = cal;
    scores.sort_by(|a, b| a.total_cmp(b));
    Ok(CoverageReport {
        q_star: threshold.q_star,
        rank: quantile_index(input.m_cal, input.alpha, rule),
        nominal: 1.0 - input.alpha,
        upper_bound: 1.0 - input.alpha + 1.0 / (input.m_cal + 1) as f64,
        empirical: covered as f64 / input.m_test as f64,
        scores,
    })
}

fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let report = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&report).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = planDay)]
pub fn plan_day_js(
    n_buses: usize,
    seed: u64,
    day: usize,
    price_margin: f64,
    load_margin: f64,
    bess_cost: f64,
) -> Result<String, JsError> {
    to_json(plan_day(&PlanInput { n_buses, seed, day, price_margin, load_margin, bess_cost }))
}

/// Re-solves the day with every storage size pinned to zero, so the page
/// can show what the batteries save.
#[wasm_bindgen(js_name = planWithoutStorage)]
pub fn plan_without_storage_js(
    n_buses: usize,
    seed: u64,
    day: usize,
    price_margin: f64,
    load_margin: f64,
) -> Result<String, JsError> {
    to_json(plan_without_storage(&PlanInput { n_buses, seed, day, price_margin, load_margin, bess_cost: 0.0 }))
}

/// Same day as [`plan_day`] with all sizes fixed at zero.
pub fn plan_without_storage(input: &PlanInput) -> Result<PlanReport, String> {
    let mut stage = build_day(input)?;
    let lp = &mut stage.program.lp;
    for j in 0..input.n_buses {
        let col = stage.program.varmap.x(j);
        lp.upper[col] = 0.0;
    }
    let (result, plan) = solve_stage(&stage, &SolverOptions::default()).map_err(|e| e.to_string())?;
    summarize(&stage, &result, plan.objective, plan.x)
}

#[wasm_bindgen(js_name = conformalCoverage)]
pub fn coverage_js(
    alpha: f64,
    m_cal: usize,
    m_test: usize,
    spread: f64,
    floor_rule: bool,
    seed: u64,
) -> Result<String, JsError> {
    to_json(coverage(&CoverageInput { alpha, m_cal, m_test, spread, floor_rule, seed }))
}
