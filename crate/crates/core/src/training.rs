//! Joint training of the forecaster against prediction and planning losses,
//! the decoupled baseline, and the evaluation harness.
//!
//! The task loss of one sample is the optimal value of the single-stage
//! planning model built at the forecast's upper price and load bounds,
//! divided by a fixed cost scale. Its gradient with respect to those bounds
//! comes from the LP duals and is chained into the network's upper head.

use std::io::Write;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{ModelConfig, PlanSolution};
use crate::conformal::{self, ConformalError, InflatedBoxes, PhysicalLimits, QuantileRule, Thresholds};
use crate::dataset::{self, DatasetError, Sample, Split, TimeSeries};
use crate::network::Network;
use crate::predictor::{
    adam_step, backward, nll_loss, AdamState, Forecaster, LstmParams, Normalization, PredictorError, QuantileForecast,
    Shape, TARGETS_PER_STEP,
};
use crate::robust::{build_at, solve_stage, RobustError};
use crate::solver::{value_gradient, SolverOptions};
use crate::synth::{apply_pv, Scenario};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    ConfigInvalid(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("{failed} of {total} planning solves failed in one step (first: {first})")]
    TooManyFailures { failed: usize, total: usize, first: String },
    #[error("no calibrated threshold available")]
    MissingThreshold,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Robust(#[from] RobustError),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Prediction loss only; the planner is applied after training.
    Eto,
    /// Prediction and task loss combined with `loss_weight`.
    EndToEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the prediction loss; the task loss gets the rest.
    pub loss_weight: f64,
    pub alpha: f64,
    pub lr: f64,
    /// Epochs run in the configured mode.
    pub epochs: usize,
    /// Prediction-only epochs run first in both modes.
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: Mode,
    pub hidden: usize,
    pub init_std: f64,
    /// Largest tolerated fraction of failed solves in one batch.
    pub max_failure_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_weight: 0.8,
            alpha: 0.1,
            lr: 1e-3,
            epochs: 10,
            warmup_epochs: 40,
            batch_size: 8,
            seed: 7,
            mode: Mode::EndToEnd,
            hidden: 64,
            init_std: 0.1,
            max_failure_fraction: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::ConfigInvalid(m));
        if !(0.0..=1.0).contains(&self.loss_weight) {
            return bad(format!("loss weight {} outside [0, 1]", self.loss_weight));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return bad("batch size and hidden size must be positive".into());
        }
        if !(self.init_std > 0.0) || !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return bad("init std must be positive and the failure fraction in [0, 1]".into());
        }
        Ok(())
    }

    /// Loss weight in force during epoch `e` (0-based).
    pub fn weight_at(&self, e: usize) -> f64 {
        if e < self.warmup_epochs || self.mode == Mode::Eto {
            1.0
        } else {
            self.loss_weight
        }
    }
}

/// Everything except the forecast needed to set up one planning problem.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskTemplate {
    pub network: Network,
    pub config: ModelConfig,
    pub weights: Vec<[f64; 3]>,
    pub pv_capacity: Vec<f64>,
    /// Task losses are divided by this cost.
    pub scale: f64,
    pub solver: SolverOptions,
}

impl TaskTemplate {
    /// Planning problem at the given per-step prices and aggregate loads,
    /// with PV following the sample's solar channel.
    pub fn solve_at(
        &self,
        sample: &Sample,
        price: Vec<[f64; 3]>,
        load: Vec<[f64; 3]>,
    ) -> Result<(crate::robust::SingleStage, crate::solver::SolveResult, PlanSolution), RobustError> {
        let net = apply_pv(&self.network, &self.pv_capacity, &sample.solar);
        let stage = build_at(&net, &self.config, &self.weights, price, load)?;
        let (r, plan) = solve_stage(&stage, &self.solver)?;
        Ok((stage, r, plan))
    }

    /// Procurement cost at the true prices and loads with no storage built.
    pub fn no_storage_cost(&self, sample: &Sample) -> Result<f64, RobustError> {
        let mut t = self.clone();
        for b in &mut t.network.buses {
            b.bess_candidate = false;
        }
        let (_, r, _) = t.solve_at(sample, sample.price.clone(), sample.load.clone())?;
        Ok(r.objective)
    }
}

/// Train/calibration/test samples plus the planning template.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub split: Split,
    pub template: TaskTemplate,
    pub limits: PhysicalLimits,
    pub history: usize,
    pub horizon: usize,
    pub n_buses: usize,
}

/// Options for cutting a scenario into a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetOptions {
    /// Steps between consecutive sample starts.
    pub stride: usize,
    pub fractions: [f64; 3],
    /// At most this many training samples enter the cost-scale median.
    pub scale_samples: usize,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions { stride: 24, fractions: [0.6, 0.2, 0.2], scale_samples: 16 }
    }
}

impl Dataset {
    pub fn from_scenario(sc: &Scenario, model: &ModelConfig, opts: &DatasetOptions) -> Result<Dataset, TrainError> {
        Dataset::from_parts(&sc.network, &sc.weights, &sc.pv_capacity, &sc.series, sc.spec.history, model, opts)
    }

    /// Cuts `series` into samples for the given feeder and model.
    pub fn from_parts(
        network: &Network,
        weights: &[[f64; 3]],
        pv_capacity: &[f64],
        series: &TimeSeries,
        history: usize,
        model: &ModelConfig,
        opts: &DatasetOptions,
    ) -> Result<Dataset, TrainError> {
        if series.n_buses() != network.n_buses() {
            return Err(TrainError::ConfigInvalid(format!(
                "series has loads for {} buses, network has {}",
                series.n_buses(),
                network.n_buses()
            )));
        }
        crate::robust::check_weights(network, weights)?;
        let tau = model.horizon;
        let samples = dataset::windows(series, history, tau, opts.stride)?;
        let split = dataset::split(samples, opts.fractions, tau)?;
        let mut template = TaskTemplate {
            network: network.clone(),
            config: model.clone(),
            weights: weights.to_vec(),
            pv_capacity: pv_capacity.to_vec(),
            scale: 1.0,
            solver: SolverOptions::default(),
        };
        template.scale = cost_scale(&template, &split.train, opts.scale_samples)?;
        let max_price = series.price.iter().flatten().cloned().fold(0.0, f64::max);
        let max_load = (0..series.len()).flat_map(|t| series.aggregate_load(t)).fold(0.0, f64::max);
        Ok(Dataset {
            split,
            template,
            limits: PhysicalLimits::from_history(max_price, max_load),
            history,
            horizon: tau,
            n_buses: network.n_buses(),
        })
    }

    pub fn shape(&self, hidden: usize) -> Shape {
        Shape { step_inputs: self.n_buses + 4, history: self.history, hidden, horizon: self.horizon }
    }
}

/// Median no-storage cost over evenly spaced training samples. Samples
/// whose no-storage problem is infeasible are left out; falls back to 1
/// when no usable positive median remains.
pub fn cost_scale(template: &TaskTemplate, train: &[Sample], max_samples: usize) -> Result<f64, TrainError> {
    if train.is_empty() || max_samples == 0 {
        return Ok(1.0);
    }
    let n = train.len().min(max_samples);
    let mut costs = Vec::with_capacity(n);
    for i in 0..n {
        let s = &train[i * train.len() / n];
        match template.no_storage_cost(s) {
            Ok(c) => costs.push(c.abs()),
            Err(RobustError::NotSolved(status)) => {
                warn!("no-storage problem for sample starting at step {} is {status:?}", s.start)
            }
            Err(e) => return Err(e.into()),
        }
    }
    if costs.is_empty() {
        return Ok(1.0);
    }
    costs.sort_by(|a, b| a.total_cmp(b));
    let k = costs.len();
    let m = if k % 2 == 1 { costs[k / 2] } else { 0.5 * (costs[k / 2 - 1] + costs[k / 2]) };
    Ok(if m > 0.0 && m.is_finite() { m } else { 1.0 })
}

fn pairs(samples: &[Sample]) -> impl Iterator<Item = (&[f64], Vec<f64>)> + Clone {
    samples.iter().map(|s| (s.features.as_slice(), s.target()))
}

/// Upper bounds split into per-step price and load trajectories.
fn upper_trajectories(f: &QuantileForecast) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
    let price = f.upper.iter().map(|u| [u[0], u[1], u[2]]).collect();
    let load = f.upper.iter().map(|u| [u[3], u[4], u[5]]).collect();
    (price, load)
}

/// Interval NLL averaged over entries, so that it is commensurate with the
/// normalized task loss.
pub fn mean_nll(lower: &[f64], upper: &[f64], truth: &[f64], alpha: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let (l, mut dl, mut du) = nll_loss(lower, upper, truth, alpha);
    let n = lower.len().max(1) as f64;
    dl.iter_mut().chain(du.iter_mut()).for_each(|g| *g /= n);
    (l / n, dl, du)
}

/// Losses and parameter gradient of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    /// Gaussian interval NLL in standardized target units, per entry.
    pub pred_loss: f64,
    /// Normalized task loss, when the task term is active.
    pub task_loss: Option<f64>,
    pub grad: Vec<f64>,
    pub degenerate: bool,
}

/// `weight * pred + (1 - weight) * task` and its gradient for one sample.
/// The planning problem is only built when `weight < 1`.
pub fn sample_objective(
    fc: &Forecaster,
    sample: &Sample,
    template: &TaskTemplate,
    weight: f64,
) -> Result<SampleOutcome, TrainError> {
    let (forecast, cache) = fc.forward(&sample.features)?;
    let truth = fc.norm.target_to_std(&sample.target());
    let (pred, dl, du) = mean_nll(&cache.lower_std, &cache.upper_std, &truth, fc.alpha);
    let up_l: Vec<f64> = dl.iter().map(|v| weight * v).collect();
    let mut up_u: Vec<f64> = du.iter().map(|v| weight * v).collect();
    let mut task = None;
    let mut degenerate = false;
    if weight < 1.0 {
        let (price, load) = upper_trajectories(&forecast);
        let (stage, r, _) = template.solve_at(sample, price, load)?;
        let vg = value_gradient(&r, &stage.params, &stage.program.lp).map_err(RobustError::from)?;
        degenerate = vg.degenerate.is_some();
        let k = (1.0 - weight) / template.scale;
        let std = &fc.norm.targets.std;
        for t in 0..forecast.horizon() {
            for p in 0..3 {
                let kp = TARGETS_PER_STEP * t + p;
                let kl = kp + 3;
                up_u[kp] += k * vg.grad[stage.price_param(t, p)] * std[p];
                up_u[kl] += k * vg.grad[stage.load_param(t, p)] * std[p + 3];
            }
        }
        task = Some(r.objective / template.scale);
    }
    let grad = backward(&fc.params, &cache, &up_l, &up_u)?;
    Ok(SampleOutcome { pred_loss: pred, task_loss: task, grad, degenerate })
}

/// Objective value only (for finite-difference checks).
pub fn sample_value(fc: &Forecaster, sample: &Sample, template: &TaskTemplate, weight: f64) -> Result<f64, TrainError> {
    let (forecast, cache) = fc.forward(&sample.features)?;
    let truth = fc.norm.target_to_std(&sample.target());
    let (pred, _, _) = mean_nll(&cache.lower_std, &cache.upper_std, &truth, fc.alpha);
    let mut v = weight * pred;
    if weight < 1.0 {
        let (price, load) = upper_trajectories(&forecast);
        let (_, r, _) = template.solve_at(sample, price, load)?;
        v += (1.0 - weight) * r.objective / template.scale;
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StepMetrics {
    pub pred_loss: f64,
    /// Mean normalized task loss over solved samples (NaN when inactive).
    pub task_loss: f64,
    pub used: usize,
    pub failed: usize,
    pub degenerate: usize,
}

/// One optimizer step on the batch mean of [`sample_objective`]. Samples
/// whose planning problem fails are skipped.
pub fn combined_step(
    fc: &mut Forecaster,
    adam: &mut AdamState,
    batch: &[&Sample],
    template: &TaskTemplate,
    weight: f64,
    lr: f64,
    max_failure_fraction: f64,
) -> Result<StepMetrics, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let outcomes: Vec<Result<SampleOutcome, TrainError>> = {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            let f: &Forecaster = fc;
            batch.par_iter().map(|s| sample_objective(f, s, template, weight)).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            batch.iter().map(|s| sample_objective(fc, s, template, weight)).collect()
        }
    };
    let mut grad = vec![0.0; fc.params.data.len()];
    let mut m = StepMetrics { task_loss: f64::NAN, ..Default::default() };
    let mut task_sum = 0.0;
    let mut first_failure = None;
    for (s, o) in batch.iter().zip(outcomes) {
        match o {
            Ok(o) => {
                for (g, v) in grad.iter_mut().zip(&o.grad) {
                    *g += v;
                }
                m.pred_loss += o.pred_loss;
                if let Some(t) = o.task_loss {
                    task_sum += t;
                }
                m.degenerate += o.degenerate as usize;
                m.used += 1;
            }
            Err(TrainError::Robust(e)) => {
                warn!("planning solve failed for sample starting at step {}: {e}", s.start);
                first_failure.get_or_insert_with(|| e.to_string());
                m.failed += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if m.failed as f64 > max_failure_fraction * batch.len() as f64 || m.used == 0 {
        return Err(TrainError::TooManyFailures {
            failed: m.failed,
            total: batch.len(),
            first: first_failure.unwrap_or_default(),
        });
    }
    let n = m.used as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    m.pred_loss /= n;
    if weight < 1.0 {
        m.task_loss = task_sum / n;
    }
    adam_step(&mut fc.params.data, &grad, lr, adam)?;
    Ok(m)
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_weight: f64,
    pub pred_loss: f64,
    pub task_loss: f64,
    pub total: f64,
    /// Fraction of calibration truths inside the raw (uninflated) boxes.
    pub coverage: f64,
    pub solve_failures: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub forecaster: Forecaster,
    pub history: Vec<EpochRecord>,
}

/// A freshly initialized forecaster with statistics from the training set.
pub fn init_forecaster(data: &Dataset, cfg: &TrainConfig) -> Forecaster {
    let shape = data.shape(cfg.hidden);
    let norm = Normalization::fit(&shape, pairs(&data.split.train));
    Forecaster { params: LstmParams::init(shape, cfg.init_std, cfg.seed), norm, alpha: cfg.alpha }
}

/// Fraction of samples whose truth lies inside the raw forecast boxes.
pub fn raw_coverage(fc: &Forecaster, samples: &[Sample]) -> Result<f64, TrainError> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut hit = 0usize;
    for s in samples {
        hit += (conformal::score(&fc.predict(&s.features)?, &s.target()) <= 0.0) as usize;
    }
    Ok(hit as f64 / samples.len() as f64)
}

/// Trains from a fresh initialization. Deterministic in `cfg.seed`.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let fc = init_forecaster(data, cfg);
    continue_training(data, cfg, fc, 0)
}

/// Runs epochs `first_epoch..warmup + epochs` on an existing forecaster,
/// with a fresh optimizer state.
pub fn continue_training(
    data: &Dataset,
    cfg: &TrainConfig,
    mut fc: Forecaster,
    first_epoch: usize,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let train = &data.split.train;
    let mut adam = AdamState::new(fc.params.data.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5_eed0_fba7_c4e5);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let total_epochs = cfg.warmup_epochs + cfg.epochs;
    for epoch in 0..total_epochs {
        // the shuffle sequence depends only on the seed and the epoch index
        order.sort_unstable();
        order.shuffle(&mut rng);
        if epoch < first_epoch {
            continue;
        }
        let weight = cfg.weight_at(epoch);
        let (mut pred, mut task, mut used, mut failed, mut task_steps) = (0.0, 0.0, 0usize, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let m =
                combined_step(&mut fc, &mut adam, &batch, &data.template, weight, cfg.lr, cfg.max_failure_fraction)?;
            pred += m.pred_loss * m.used as f64;
            if m.task_loss.is_finite() {
                task += m.task_loss * m.used as f64;
                task_steps += m.used;
            }
            used += m.used;
            failed += m.failed;
        }
        let pred = if used > 0 { pred / used as f64 } else { f64::NAN };
        let task = if task_steps > 0 { task / task_steps as f64 } else { f64::NAN };
        let total = if task.is_finite() { weight * pred + (1.0 - weight) * task } else { pred };
        history.push(EpochRecord {
            epoch,
            loss_weight: weight,
            pred_loss: pred,
            task_loss: task,
            total,
            coverage: raw_coverage(&fc, &data.split.calibration)?,
            solve_failures: failed,
        });
    }
    Ok(TrainOutcome { forecaster: fc, history })
}

pub fn write_history<W: Write>(history: &[EpochRecord], out: W) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(out);
    for r in history {
        w.serialize(r).map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Evaluation results on a held-out set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean optimal planning cost with the inflated boxes (raw units).
    pub task_loss: f64,
    /// Mean squared error of box midpoints against the truth (raw units).
    pub pred_loss: f64,
    /// `task_loss + pred_loss`.
    pub total_raw: f64,
    /// `w * pred_loss + (1 - w) * task_loss` for the reported weight `w`.
    pub total_weighted: f64,
    pub loss_weight: f64,
    pub coverage: f64,
    pub samples: usize,
    pub solve_failures: usize,
}

/// Calibrates thresholds on the calibration part of `data`.
pub fn calibrate(
    fc: &Forecaster,
    samples: &[Sample],
    alpha: f64,
    rule: QuantileRule,
    per_target: bool,
) -> Result<Thresholds, TrainError> {
    Ok(conformal::calibrate_forecaster(fc, pairs(samples), alpha, rule, per_target)?)
}

/// Inflated and clipped boxes for one sample.
pub fn inflated_boxes(
    fc: &Forecaster,
    sample: &Sample,
    thresholds: &Thresholds,
    limits: &PhysicalLimits,
) -> Result<(QuantileForecast, InflatedBoxes), TrainError> {
    let f = fc.predict(&sample.features)?;
    let b = conformal::inflate(&f, thresholds, limits);
    Ok((f, b))
}

pub fn evaluate(
    fc: &Forecaster,
    thresholds: Option<&Thresholds>,
    test: &[Sample],
    template: &TaskTemplate,
    limits: &PhysicalLimits,
    loss_weight: f64,
) -> Result<EvalReport, TrainError> {
    let th = thresholds.ok_or(TrainError::MissingThreshold)?;
    if test.is_empty() {
        return Err(TrainError::EmptyTestSet);
    }
    let run = |s: &Sample| -> Result<(f64, bool, Option<f64>), TrainError> {
        let (f, b) = inflated_boxes(fc, s, th, limits)?;
        let truth = s.target();
        let mid = f.midpoint();
        let mse = mid.iter().zip(&truth).map(|(m, t)| (m - t) * (m - t)).sum::<f64>() / truth.len() as f64;
        let covered = th.covers(&f, &truth);
        let cost = match template.solve_at(s, b.price.upper.clone(), b.load.upper.clone()) {
            Ok((_, r, _)) => Some(r.objective),
            Err(e) => {
                warn!("evaluation solve failed for sample starting at step {}: {e}", s.start);
                None
            }
        };
        Ok((mse, covered, cost))
    };
    let results: Vec<Result<_, TrainError>> = {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            test.par_iter().map(run).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            test.iter().map(run).collect()
        }
    };
    let (mut mse, mut cost, mut hit, mut solved, mut failed) = (0.0, 0.0, 0usize, 0usize, 0usize);
    for r in results {
        let (m, c, v) = r?;
        mse += m;
        hit += c as usize;
        match v {
            Some(v) => {
                cost += v;
                solved += 1;
            }
            None => failed += 1,
        }
    }
    let n = test.len() as f64;
    let task = if solved > 0 { cost / solved as f64 } else { f64::NAN };
    let pred = mse / n;
    Ok(EvalReport {
        task_loss: task,
        pred_loss: pred,
        total_raw: task + pred,
        total_weighted: loss_weight * pred + (1.0 - loss_weight) * task,
        loss_weight,
        coverage: hit as f64 / n,
        samples: test.len(),
        solve_failures: failed,
    })
}
