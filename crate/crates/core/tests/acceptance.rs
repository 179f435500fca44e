//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use bessplan::assembly::{admittance_relation, check_physics, impedance_relation, ModelConfig, PhysicsReport};
use bessplan::conformal::{self, QuantileRule, Thresholds};
use bessplan::network::{alpha_plus, gamma_matrix, invert, Matrix3C};
use bessplan::predictor::{backward, forward, LstmParams, Normalization, QuantileForecast, Shape};
use bessplan::robust::{brute_force_two_stage, build_at, build_single_stage, solve_stage, OracleOptions};
use bessplan::solver::{solve, solve_with, value_gradient, SolveStatus, SolverOptions};
use bessplan::synth::{generate, ScenarioSpec};
use bessplan::training::{
    calibrate, continue_training, evaluate, inflated_boxes, train, Dataset, DatasetOptions, EvalReport, Mode,
    TrainConfig,
};
use common::instances::{random_admittance, random_instance};
use common::lp_oracle::{random_lp, vertex_oracle, OracleOutcome};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Post-solve tolerances for the physics invariants.
const BALANCE_TOL: f64 = 1e-7;
const SOC_TELESCOPING_TOL: f64 = 1e-9;
const BOX_TOL: f64 = 1e-9;

fn physics_ok(r: &PhysicsReport) -> bool {
    r.power_balance <= BALANCE_TOL
        && r.soc_telescoping <= SOC_TELESCOPING_TOL
        && r.soc_bounds <= BOX_TOL
        && r.voltage_bounds <= BOX_TOL
}

/// Worst value of every invariant over a set of solves.
#[derive(Default)]
struct PhysicsLedger {
    worst: PhysicsReport,
    solves: usize,
    failures: usize,
}

impl PhysicsLedger {
    fn record(&mut self, r: &PhysicsReport) {
        self.solves += 1;
        self.failures += !physics_ok(r) as usize;
        self.worst.power_balance = self.worst.power_balance.max(r.power_balance);
        self.worst.soc_telescoping = self.worst.soc_telescoping.max(r.soc_telescoping);
        self.worst.soc_bounds = self.worst.soc_bounds.max(r.soc_bounds);
        self.worst.voltage_bounds = self.worst.voltage_bounds.max(r.voltage_bounds);
    }
}

fn gamma_identity() -> Outcome {
    let start = Instant::now();
    let a = alpha_plus();
    let outer = a * a.adjoint();
    let err = (gamma_matrix() - outer).iter().map(|v| v.norm()).fold(0.0, f64::max);
    let took = start.elapsed();
    outcome(err <= 1e-12 && took < Duration::from_millis(1), format!("max entry error {err:.1e}, {took:?}"))
}

fn random_hermitian(rng: &mut impl Rng) -> Matrix3C {
    let m = Matrix3C::from_fn(|_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    (m + m.adjoint()).scale(0.5) + Matrix3C::identity().scale(2.0)
}

fn voltage_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut worst_admittance = 0.0f64;
    for _ in 0..100 {
        let y = random_admittance(&mut rng);
        let z = invert(&y).expect("dominant admittance is invertible");
        let v_from = random_hermitian(&mut rng);
        let s = Matrix3C::from_fn(|_, _| Complex64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)));
        // choose the downstream voltage so that the admittance relation holds
        let drop = z * (s.adjoint() * y.adjoint() + y * s) * z.adjoint();
        let v_to = v_from - drop;
        worst_admittance = worst_admittance.max(admittance_relation(&y, &v_from, &v_to, &s).norm());
        worst = worst.max(impedance_relation(&z, &v_from, &v_to, &s).norm());
    }
    let took = start.elapsed();
    outcome(
        worst <= 1e-9 && worst_admittance <= 1e-9 && took < Duration::from_secs(1),
        format!("impedance residual {worst:.1e} where admittance residual <= {worst_admittance:.1e}, {took:?}"),
    )
}

fn solver_vs_vertex_enumeration() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = Vec::new();
    let mut counts = [0usize; 3];
    for k in 0..200 {
        let lp = random_lp(&mut rng, 6, 8);
        let r = solve(&lp, 1e-9, 200).expect("well-formed program");
        let ok = match vertex_oracle(&lp) {
            OracleOutcome::Optimal(v) => {
                counts[0] += 1;
                r.status == SolveStatus::Optimal && (r.objective - v).abs() <= 1e-6 * (1.0 + v.abs())
            }
            OracleOutcome::Infeasible => {
                counts[1] += 1;
                r.status == SolveStatus::PrimalInfeasible
            }
            OracleOutcome::Unbounded => {
                counts[2] += 1;
                r.status == SolveStatus::DualInfeasible
            }
        };
        if !ok {
            mismatches.push(k);
        }
    }
    let took = start.elapsed();
    outcome(
        mismatches.is_empty() && took < Duration::from_secs(10),
        format!(
            "{} optimal / {} infeasible / {} unbounded, mismatches {mismatches:?}, {took:?}",
            counts[0], counts[1], counts[2]
        ),
    )
}

fn single_stage_matches_two_stage(physics: &mut PhysicsLedger) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let opts = OracleOptions { grid_points: 5, x_points: 3, ..Default::default() };
    let mut worst = 0.0f64;
    let mut errors = Vec::new();
    for k in 0..20 {
        let inst = random_instance(&mut rng, 4);
        let stage = build_single_stage(&inst).expect("valid instance");
        let (_, plan) = match solve_stage(&stage, &opts.solver) {
            Ok(v) => v,
            Err(e) => {
                errors.push(format!("instance {k}: {e}"));
                continue;
            }
        };
        physics.record(&check_physics(&inst.network, &inst.config, &plan));
        match brute_force_two_stage(&inst, &opts) {
            Ok(o) => worst = worst.max((plan.objective - o.value).abs() / (1.0 + plan.objective.abs())),
            Err(e) => errors.push(format!("instance {k}: {e}")),
        }
    }
    let took = start.elapsed();
    outcome(
        worst <= 1e-6 && errors.is_empty() && took < Duration::from_secs(120),
        format!("worst scaled gap {worst:.1e}, errors {errors:?}, {took:?}"),
    )
}

fn envelope_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let opts = SolverOptions::with_tol(1e-10);
    let (mut accepted, mut kinked, mut tried) = (0usize, 0usize, 0usize);
    let mut worst = 0.0f64;
    while accepted < 50 && tried < 500 {
        tried += 1;
        let inst = random_instance(&mut rng, 3);
        let stage = build_single_stage(&inst).expect("valid instance");
        let Ok((r, _)) = solve_stage(&stage, &opts) else { continue };
        let g = value_gradient(&r, &stage.params, &stage.program.lp).expect("optimal solve").grad;
        let value_at = |k: usize, h: f64| -> Option<f64> {
            let mut lp = stage.program.lp.clone();
            let mut delta = vec![0.0; stage.params.len()];
            delta[k] = h;
            stage.params.perturb(&mut lp, &delta);
            let r = solve_with(&lp, &opts).ok()?;
            r.is_optimal().then_some(r.objective)
        };
        let horizon = stage.price.len();
        let mut fd = Vec::with_capacity(g.len());
        let mut smooth = true;
        for k in 0..g.len() {
            let (t, p) = ((k / 3) % horizon, k % 3);
            let value = if k < 3 * horizon { stage.price[t][p] } else { stage.load[t][p] };
            let h = 1e-2 * value.abs().max(0.1);
            let (Some(up), Some(down)) = (value_at(k, h), value_at(k, -h)) else {
                smooth = false;
                break;
            };
            // the value is piecewise linear, so matching one-sided slopes
            // mean no breakpoint lies within the step
            let (fwd, bwd) = ((up - r.objective) / h, (r.objective - down) / h);
            if (fwd - bwd).abs() > 1e-6 * (1.0 + fwd.abs().max(bwd.abs())) {
                smooth = false;
                break;
            }
            fd.push((up - down) / (2.0 * h));
        }
        if !smooth {
            kinked += 1;
            continue;
        }
        accepted += 1;
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let err = g.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
        worst = worst.max(err);
    }
    let took = start.elapsed();
    outcome(
        accepted == 50 && worst <= 1e-4 && took < Duration::from_secs(60),
        format!(
            "{accepted} differentiable instances ({kinked} skipped at a breakpoint), worst relative error {worst:.1e}, {took:?}"
        ),
    )
}

fn lstm_gradcheck() -> Outcome {
    let start = Instant::now();
    let shape = Shape { step_inputs: 5, history: 4, hidden: 8, horizon: 2 };
    let params = LstmParams::init(shape, 0.4, 21);
    let norm = Normalization::identity(&shape);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let window: Vec<f64> = (0..shape.feature_dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
    let k = shape.outputs();
    let d_lower: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let d_upper: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |p: &LstmParams| -> f64 {
        let c = forward(p, &norm, &window).expect("matching window");
        c.lower_std.iter().zip(&d_lower).map(|(a, b)| a * b).sum::<f64>()
            + c.upper_std.iter().zip(&d_upper).map(|(a, b)| a * b).sum::<f64>()
    };
    let cache = forward(&params, &norm, &window).expect("matching window");
    let g = backward(&params, &cache, &d_lower, &d_upper).expect("matching cache");
    let h = 1e-6;
    let mut fd = vec![0.0; g.len()];
    let mut p = params.clone();
    for i in 0..g.len() {
        let orig = p.data[i];
        p.data[i] = orig + h;
        let up = loss(&p);
        p.data[i] = orig - h;
        let down = loss(&p);
        p.data[i] = orig;
        fd[i] = (up - down) / (2.0 * h);
    }
    let off = shape.offsets();
    let mut worst = (0.0f64, "");
    for (t, (name, _, _)) in shape.tensors().iter().enumerate() {
        let r = off[t]..off[t + 1];
        let diff: f64 = g[r.clone()].iter().zip(&fd[r.clone()]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let norm_g = g[r.clone()].iter().map(|a| a * a).sum::<f64>().sqrt();
        let norm_fd = fd[r].iter().map(|a| a * a).sum::<f64>().sqrt();
        let rel = diff / norm_g.max(norm_fd).max(1e-12);
        if rel > worst.0 {
            worst = (rel, name);
        }
    }
    let took = start.elapsed();
    outcome(
        worst.0 <= 1e-5 && took < Duration::from_secs(30),
        format!("{} parameters, worst tensor {} at {:.1e}, {took:?}", g.len(), worst.1, worst.0),
    )
}

fn conformal_coverage() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    // heteroscedastic truth around a random forecast box of one step
    let draw = |rng: &mut ChaCha8Rng| -> (QuantileForecast, Vec<f64>) {
        let centre: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..10.0)).collect();
        let half: Vec<f64> = (0..6).map(|k| 0.5 + 0.1 * k as f64).collect();
        let lower: Vec<f64> = centre.iter().zip(&half).map(|(c, h)| c - h).collect();
        let upper: Vec<f64> = centre.iter().zip(&half).map(|(c, h)| c + h).collect();
        let truth = centre.iter().enumerate().map(|(k, c)| c + (1.0 + 0.2 * k as f64) * noise.sample(rng)).collect();
        (QuantileForecast::from_flat(&lower, &upper), truth)
    };
    let (m_cal, n_test, reps) = (500usize, 10_000usize, 30usize);
    let mut details = Vec::new();
    let mut pass = true;
    for alpha in [0.05, 0.1, 0.3] {
        let mut total = 0.0;
        for _ in 0..reps {
            let scores: Vec<f64> = (0..m_cal)
                .map(|_| {
                    let (f, y) = draw(&mut rng);
                    conformal::score(&f, &y)
                })
                .collect();
            let th = Thresholds::Shared(conformal::calibrate(&scores, alpha, QuantileRule::Ceiling).expect("scores"));
            let hits = (0..n_test)
                .filter(|_| {
                    let (f, y) = draw(&mut rng);
                    th.covers(&f, &y)
                })
                .count();
            total += hits as f64 / n_test as f64;
        }
        let mean = total / reps as f64;
        let (lo, hi) = (1.0 - alpha - 0.02, 1.0 - alpha + 1.0 / (m_cal as f64 + 1.0) + 0.02);
        pass &= (lo..=hi).contains(&mean);
        details.push(format!("alpha {alpha}: {mean:.4} in [{lo:.4}, {hi:.4}]"));
    }
    let took = start.elapsed();
    outcome(pass && took < Duration::from_secs(120), format!("{}, {took:?}", details.join("; ")))
}

/// Trained models on the default scenario shared by the directional checks.
struct Sweep {
    data: Dataset,
    /// `(loss weight, report at the shared threshold)`; the first entry is
    /// the decoupled baseline.
    reports: Vec<(f64, EvalReport)>,
    /// End-to-end model at weight 0.8 with reports at two miscoverage levels.
    alpha_reports: [(f64, EvalReport); 2],
    /// Training time of the baseline and of the weight-0.8 model.
    baseline_time: Duration,
    e2e_time: Duration,
    sweep_time: Duration,
    alpha_time: Duration,
}

const WARMUP_EPOCHS: usize = 40;
const FINE_TUNE_EPOCHS: usize = 5;
const EVAL_ALPHA: f64 = 0.1;
const SWEEP_WEIGHTS: [f64; 4] = [0.9, 0.8, 0.7, 0.6];

fn run_sweep(physics: &mut PhysicsLedger) -> Sweep {
    let start = Instant::now();
    let scenario = generate(&ScenarioSpec::default()).expect("default scenario");
    let data = Dataset::from_scenario(&scenario, &ModelConfig::default(), &DatasetOptions::default()).expect("dataset");
    let base = TrainConfig { warmup_epochs: WARMUP_EPOCHS, epochs: 0, mode: Mode::Eto, ..Default::default() };
    let warm = train(&data, &base).expect("warmup").forecaster;
    let shared_setup = start.elapsed();

    let fit = |mode: Mode, weight: f64| {
        let cfg = TrainConfig {
            warmup_epochs: WARMUP_EPOCHS,
            epochs: FINE_TUNE_EPOCHS,
            mode,
            loss_weight: weight,
            ..Default::default()
        };
        continue_training(&data, &cfg, warm.clone(), WARMUP_EPOCHS).expect("training").forecaster
    };
    let report = |fc: &bessplan::predictor::Forecaster, alpha: f64| {
        let th = calibrate(fc, &data.split.calibration, alpha, QuantileRule::Ceiling, false).expect("calibration");
        let rep = evaluate(fc, Some(&th), &data.split.test, &data.template, &data.limits, 0.8).expect("evaluation");
        (th, rep)
    };

    let t = Instant::now();
    let eto = fit(Mode::Eto, 1.0);
    let mut reports = vec![(1.0, report(&eto, EVAL_ALPHA).1)];
    let baseline_time = shared_setup + t.elapsed();

    let mut e2e_time = Duration::ZERO;
    let mut sweep_time = shared_setup;
    let mut e2e_08 = None;
    for w in SWEEP_WEIGHTS {
        let t = Instant::now();
        let fc = fit(Mode::EndToEnd, w);
        let (th, rep) = report(&fc, EVAL_ALPHA);
        let took = t.elapsed();
        sweep_time += took;
        if w == 0.8 {
            e2e_time = shared_setup + took;
            // physics invariants at every evaluation solve of this model
            for s in &data.split.test {
                let (_, b) = inflated_boxes(&fc, s, &th, &data.limits).expect("forecast");
                if let Ok((_, _, plan)) = data.template.solve_at(s, b.price.upper.clone(), b.load.upper.clone()) {
                    let net = bessplan::synth::apply_pv(&data.template.network, &data.template.pv_capacity, &s.solar);
                    physics.record(&check_physics(&net, &data.template.config, &plan));
                }
            }
            e2e_08 = Some(fc);
        }
        reports.push((w, rep));
    }
    let t = Instant::now();
    let fc = e2e_08.expect("weight 0.8 is in the sweep");
    let alpha_reports = [(0.05, report(&fc, 0.05).1), (0.3, report(&fc, 0.3).1)];
    let alpha_time = e2e_time + t.elapsed();
    Sweep { data, reports, alpha_reports, baseline_time, e2e_time, sweep_time, alpha_time }
}

fn directional_baseline(sweep: &Sweep) -> Outcome {
    let eto = &sweep.reports[0].1;
    let e2e = &sweep.reports.iter().find(|(w, _)| *w == 0.8).expect("weight 0.8").1;
    let took = sweep.baseline_time + sweep.e2e_time;
    let pass = e2e.task_loss <= eto.task_loss
        && e2e.total_weighted <= eto.total_weighted
        && e2e.total_raw <= eto.total_raw
        && eto.pred_loss <= e2e.pred_loss
        && took < Duration::from_secs(30 * 60);
    outcome(
        pass,
        format!(
            "task {:.1} vs {:.1}, total (weighted) {:.2} vs {:.2}, total (raw) {:.1} vs {:.1}, prediction {:.2} vs {:.2} \
             (end-to-end vs decoupled; {} train / {} test samples), {took:?}",
            e2e.task_loss,
            eto.task_loss,
            e2e.total_weighted,
            eto.total_weighted,
            e2e.total_raw,
            eto.total_raw,
            e2e.pred_loss,
            eto.pred_loss,
            sweep.data.split.train.len(),
            sweep.data.split.test.len(),
        ),
    )
}

fn directional_weight_sweep(sweep: &Sweep) -> Outcome {
    let rows: Vec<&(f64, EvalReport)> = sweep.reports.iter().filter(|(w, _)| SWEEP_WEIGHTS.contains(w)).collect();
    let monotone =
        rows.windows(2).all(|p| p[1].1.task_loss <= p[0].1.task_loss && p[1].1.pred_loss >= p[0].1.pred_loss);
    let table: Vec<String> =
        rows.iter().map(|(w, r)| format!("{w}: task {:.1} pred {:.2}", r.task_loss, r.pred_loss)).collect();
    outcome(
        monotone && sweep.sweep_time < Duration::from_secs(2 * 3600),
        format!("{}, {:?}", table.join("; "), sweep.sweep_time),
    )
}

fn directional_alpha(sweep: &Sweep) -> Outcome {
    let [(a_lo, lo), (a_hi, hi)] = &sweep.alpha_reports;
    let pass = lo.coverage > hi.coverage && hi.task_loss <= lo.task_loss && sweep.alpha_time < Duration::from_secs(600);
    outcome(
        pass,
        format!(
            "coverage {:.3} at alpha {a_lo} vs {:.3} at alpha {a_hi}, task {:.1} vs {:.1}, {:?}",
            lo.coverage, hi.coverage, lo.task_loss, hi.task_loss, sweep.alpha_time
        ),
    )
}

fn physics_invariants(ledger: &PhysicsLedger) -> Outcome {
    let w = &ledger.worst;
    outcome(
        ledger.failures == 0 && ledger.solves > 0,
        format!(
            "{} solves, {} violations; worst balance {:.1e}, telescoping {:.1e}, SOC box {:.1e}, voltage box {:.1e}",
            ledger.solves, ledger.failures, w.power_balance, w.soc_telescoping, w.soc_bounds, w.voltage_bounds
        ),
    )
}

fn desk_scale_solve() -> Outcome {
    let spec = ScenarioSpec::default();
    let scenario = generate(&spec).expect("default scenario");
    let config = ModelConfig { horizon: 24, ..Default::default() };
    let price = scenario.series.price[24..48].to_vec();
    let load: Vec<[f64; 3]> = (24..48).map(|t| scenario.series.aggregate_load(t)).collect();
    let start = Instant::now();
    let stage = build_at(&scenario.network, &config, &scenario.weights, price, load).expect("planning model");
    let solved = solve_stage(&stage, &SolverOptions::default());
    let took = start.elapsed();
    let detail = match &solved {
        Ok((r, _)) => {
            format!("{} buses, {} columns, {} iterations, {took:?}", spec.n_buses, stage.program.lp.n(), r.iterations)
        }
        Err(e) => format!("solve failed: {e}"),
    };
    outcome(solved.is_ok() && took < Duration::from_secs(2), detail)
}

fn main() {
    let mut physics = PhysicsLedger::default();
    let mut results: Vec<(&str, Outcome)> = vec![
        ("balanced phase matrix equals the outer product of the phase vector", gamma_identity()),
        ("admittance and impedance voltage relations agree on invertible lines", voltage_equivalence()),
        ("interior-point solver agrees with vertex enumeration", solver_vs_vertex_enumeration()),
        ("single-stage value equals the brute-force two-stage value", single_stage_matches_two_stage(&mut physics)),
        ("value gradients match central differences", envelope_gradients()),
        ("forecaster backpropagation matches central differences", lstm_gradcheck()),
        ("split-conformal coverage lies in the finite-sample band", conformal_coverage()),
    ];
    let sweep = run_sweep(&mut physics);
    results.push(("end-to-end beats the decoupled baseline on task and total loss", directional_baseline(&sweep)));
    results.push(("lower loss weights trade prediction loss for task loss", directional_weight_sweep(&sweep)));
    results.push(("larger miscoverage gives lower coverage and lower task loss", directional_alpha(&sweep)));
    results.push(("physics invariants hold at every optimal plan", physics_invariants(&physics)));
    results.push(("eight-bus, 24-step planning solve is fast", desk_scale_solve()));

    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!("criterion {:>2} {} - {name}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += !o.pass as usize;
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
