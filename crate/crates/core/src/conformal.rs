//! Split conformal calibration of forecast boxes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::predictor::{Forecaster, PredictorError, QuantileForecast, TARGETS_PER_STEP};
use crate::robust::BoxSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConformalError {
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("score is not a number")]
    NanScore,
    #[error(transparent)]
    Predictor(#[from] PredictorError),
}

/// Which part of the forecast a score looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    All,
    Price,
    Load,
}

impl Target {
    fn includes(self, k: usize) -> bool {
        let is_price = k % TARGETS_PER_STEP < 3;
        match self {
            Target::All => true,
            Target::Price => is_price,
            Target::Load => !is_price,
        }
    }
}

/// Largest signed distance of the truth outside the box over the selected
/// entries; negative iff the truth lies strictly inside everywhere.
pub fn score_of(forecast: &QuantileForecast, truth: &[f64], target: Target) -> f64 {
    let lower = forecast.flat_lower();
    let upper = forecast.flat_upper();
    let mut s = f64::NEG_INFINITY;
    for k in 0..lower.len().min(truth.len()) {
        if target.includes(k) {
            s = s.max(lower[k] - truth[k]).max(truth[k] - upper[k]);
        }
    }
    s
}

pub fn score(forecast: &QuantileForecast, truth: &[f64]) -> f64 {
    score_of(forecast, truth, Target::All)
}

/// Order-statistic rule for the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantileRule {
    /// `ceil((M+1)(1-alpha))`, which keeps the coverage guarantee.
    #[default]
    Ceiling,
    /// `floor((M+1)(1-alpha))`, clamped to at least the first element.
    Floor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalThreshold {
    #[serde(with = "extended_float")]
    pub q_star: f64,
    pub alpha: f64,
    pub m_cal: usize,
    pub rule: QuantileRule,
}

/// JSON has no infinities; non-finite thresholds are written as the
/// strings `"inf"` and `"-inf"`.
mod extended_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("`{other}` is not a threshold"))),
            },
        }
    }
}

/// 1-based order-statistic index for `m` scores.
pub fn quantile_index(m: usize, alpha: f64, rule: QuantileRule) -> usize {
    let x = (m as f64 + 1.0) * (1.0 - alpha);
    // guard against products like 101 * 0.9 = 90.90000000000001
    let r = x.round();
    let x = if (x - r).abs() < 1e-9 * x.max(1.0) { r } else { x };
    match rule {
        QuantileRule::Ceiling => x.ceil() as usize,
        QuantileRule::Floor => (x.floor() as usize).max(1),
    }
}

pub fn calibrate(scores: &[f64], alpha: f64, rule: QuantileRule) -> Result<ConformalThreshold, ConformalError> {
    if scores.is_empty() {
        return Err(ConformalError::EmptyCalibration);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ConformalError::InvalidAlpha(alpha));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(ConformalError::NanScore);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let m = sorted.len();
    let idx = quantile_index(m, alpha, rule);
    let q_star = if idx > m { f64::INFINITY } else { sorted[idx - 1] };
    Ok(ConformalThreshold { q_star, alpha, m_cal: m, rule })
}

/// One shared threshold, or separate price and load thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Thresholds {
    Shared(ConformalThreshold),
    PerTarget { price: ConformalThreshold, load: ConformalThreshold },
}

impl Thresholds {
    pub fn price_q(&self) -> f64 {
        match self {
            Thresholds::Shared(t) => t.q_star,
            Thresholds::PerTarget { price, .. } => price.q_star,
        }
    }

    pub fn load_q(&self) -> f64 {
        match self {
            Thresholds::Shared(t) => t.q_star,
            Thresholds::PerTarget { load, .. } => load.q_star,
        }
    }

    /// Whether `truth` lies in the inflated box.
    pub fn covers(&self, forecast: &QuantileForecast, truth: &[f64]) -> bool {
        match self {
            Thresholds::Shared(t) => score(forecast, truth) <= t.q_star,
            Thresholds::PerTarget { price, load } => {
                score_of(forecast, truth, Target::Price) <= price.q_star
                    && score_of(forecast, truth, Target::Load) <= load.q_star
            }
        }
    }
}

/// Physical clipping range applied to inflated boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalLimits {
    pub price_max: f64,
    pub load_max: f64,
}

impl PhysicalLimits {
    /// Zero to three times the largest observed value.
    pub fn from_history(max_price: f64, max_load: f64) -> Self {
        PhysicalLimits { price_max: 3.0 * max_price.max(0.0), load_max: 3.0 * max_load.max(0.0) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InflatedBoxes {
    pub price: BoxSet,
    pub load: BoxSet,
}

fn widen(b: &BoxSet, q: f64, cap: f64) -> BoxSet {
    let mut out = b.clone();
    for t in 0..b.steps() {
        for p in 0..3 {
            let (mut lo, mut hi) = (b.lower[t][p] - q, b.upper[t][p] + q);
            if lo > hi {
                // a negative threshold larger than the half-width collapses
                // the interval onto its midpoint
                let mid = 0.5 * (b.lower[t][p] + b.upper[t][p]);
                lo = mid;
                hi = mid;
            }
            out.lower[t][p] = lo.clamp(0.0, cap);
            out.upper[t][p] = hi.clamp(0.0, cap);
        }
    }
    out
}

/// `[lower - q, upper + q]` per entry, clipped to the physical limits.
pub fn inflate(forecast: &QuantileForecast, thresholds: &Thresholds, limits: &PhysicalLimits) -> InflatedBoxes {
    InflatedBoxes {
        price: widen(&forecast.price_box(), thresholds.price_q(), limits.price_max),
        load: widen(&forecast.load_box(), thresholds.load_q(), limits.load_max),
    }
}

/// Calibrates from `(features, truth)` pairs.
pub fn calibrate_forecaster<'a>(
    forecaster: &Forecaster,
    pairs: impl Iterator<Item = (&'a [f64], Vec<f64>)>,
    alpha: f64,
    rule: QuantileRule,
    per_target: bool,
) -> Result<Thresholds, ConformalError> {
    let mut all = Vec::new();
    let mut price = Vec::new();
    let mut load = Vec::new();
    for (w, truth) in pairs {
        let f = forecaster.predict(w)?;
        all.push(score(&f, &truth));
        price.push(score_of(&f, &truth, Target::Price));
        load.push(score_of(&f, &truth, Target::Load));
    }
    if per_target {
        Ok(Thresholds::PerTarget { price: calibrate(&price, alpha, rule)?, load: calibrate(&load, alpha, rule)? })
    } else {
        Ok(Thresholds::Shared(calibrate(&all, alpha, rule)?))
    }
}

/// Fraction of scores at or below the threshold.
pub fn coverage_of_scores(scores: &[f64], q_star: f64) -> Result<f64, ConformalError> {
    if scores.is_empty() {
        return Err(ConformalError::EmptyTestSet);
    }
    Ok(scores.iter().filter(|&&s| s <= q_star).count() as f64 / scores.len() as f64)
}

/// Empirical coverage of the inflated boxes on held-out pairs.
pub fn coverage<'a>(
    forecaster: &Forecaster,
    thresholds: &Thresholds,
    pairs: impl Iterator<Item = (&'a [f64], Vec<f64>)>,
) -> Result<f64, ConformalError> {
    let mut n = 0usize;
    let mut hit = 0usize;
    for (w, truth) in pairs {
        let f = forecaster.predict(w)?;
        n += 1;
        hit += thresholds.covers(&f, &truth) as usize;
    }
    if n == 0 {
        return Err(ConformalError::EmptyTestSet);
    }
    Ok(hit as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boxes(lower: f64, upper: f64, steps: usize) -> QuantileForecast {
        QuantileForecast { lower: vec![[lower; 6]; steps], upper: vec![[upper; 6]; steps] }
    }

    #[test]
    fn score_examples() {
        let f = boxes(0.0, 2.0, 2);
        assert_eq!(score(&f, &[1.0; 12]), -1.0);
        let mut t = vec![1.0; 12];
        t[7] = 2.3;
        assert!((score(&f, &t) - 0.3).abs() < 1e-12);
        t[7] = 2.0;
        assert_eq!(score(&f, &t), 0.0);
        t[7] = 1.0;
        t[1] = 2.5;
        assert!((score_of(&f, &t, Target::Load) + 1.0).abs() < 1e-12);
        assert!((score_of(&f, &t, Target::Price) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn calibrate_examples() {
        let s: Vec<f64> = (1..=100).rev().map(|v| v as f64).collect();
        let t = calibrate(&s, 0.1, QuantileRule::Ceiling).unwrap();
        assert_eq!(t.q_star, 91.0);
        assert_eq!(calibrate(&s, 0.1, QuantileRule::Floor).unwrap().q_star, 90.0);
        assert_eq!(calibrate(&[3.5], 0.5, QuantileRule::Ceiling).unwrap().q_star, 3.5);
        let ten: Vec<f64> = (0..10).map(|v| v as f64).collect();
        assert_eq!(calibrate(&ten, 0.01, QuantileRule::Ceiling).unwrap().q_star, f64::INFINITY);
        assert_eq!(calibrate(&[], 0.1, QuantileRule::Ceiling), Err(ConformalError::EmptyCalibration));
        assert!(calibrate(&[1.0], 1.0, QuantileRule::Ceiling).is_err());
    }

    #[test]
    fn inflate_examples() {
        let lim = PhysicalLimits { price_max: 100.0, load_max: 10.0 };
        let f = boxes(1.0, 2.0, 1);
        let th =
            |q| Thresholds::Shared(ConformalThreshold { q_star: q, alpha: 0.1, m_cal: 1, rule: QuantileRule::Ceiling });
        let same = inflate(&f, &th(0.0), &lim);
        assert_eq!(same.price.lower, vec![[1.0; 3]]);
        assert_eq!(same.load.upper, vec![[2.0; 3]]);
        let wide = inflate(&f, &th(0.5), &lim);
        assert_eq!(wide.price.lower, vec![[0.5; 3]]);
        assert_eq!(wide.price.upper, vec![[2.5; 3]]);
        let inf = inflate(&f, &th(f64::INFINITY), &lim);
        assert_eq!(inf.price.lower, vec![[0.0; 3]]);
        assert_eq!(inf.price.upper, vec![[100.0; 3]]);
        assert_eq!(inf.load.upper, vec![[10.0; 3]]);
        let shrink = inflate(&f, &th(-2.0), &lim);
        assert_eq!(shrink.load.lower, vec![[1.5; 3]]);
        assert_eq!(shrink.load.upper, vec![[1.5; 3]]);
    }

    #[test]
    fn thresholds_survive_json() {
        for q in [0.25, f64::INFINITY] {
            let t =
                Thresholds::Shared(ConformalThreshold { q_star: q, alpha: 0.1, m_cal: 3, rule: QuantileRule::Floor });
            let back: Thresholds = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
            assert_eq!(back, t);
        }
    }

    #[test]
    fn coverage_examples() {
        let s = [0.1, 0.5, 0.9];
        assert_eq!(coverage_of_scores(&s, f64::INFINITY).unwrap(), 1.0);
        assert_eq!(coverage_of_scores(&s, 0.0).unwrap(), 0.0);
        assert!(coverage_of_scores(&[], 0.0).is_err());
    }
}
