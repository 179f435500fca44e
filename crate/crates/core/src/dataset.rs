//! Hourly grid and weather time series, and the forecasting samples cut
//! from them.

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("series has {found} rows, need at least {needed} for one window")]
    TooShort { needed: usize, found: usize },
    #[error("inconsistent series: {0}")]
    Inconsistent(String),
    #[error("invalid split fractions {0:?}")]
    InvalidSplit([f64; 3]),
}

/// Weather channels in feature order.
pub const WEATHER_CHANNELS: [&str; 4] = ["windspeed", "temperature", "humidity", "solar"];

/// Aligned per-step series. Loads are per bus and phase, demand positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub start: NaiveDateTime,
    pub step_hours: u32,
    pub price: Vec<[f64; 3]>,
    /// `[windspeed, temperature, humidity, solar]` per step.
    pub weather: Vec<[f64; 4]>,
    /// `loads[t][bus]`.
    pub loads: Vec<Vec<[f64; 3]>>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.price.len()
    }

    pub fn is_empty(&self) -> bool {
        self.price.is_empty()
    }

    pub fn n_buses(&self) -> usize {
        self.loads.first().map_or(0, |l| l.len())
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let n = self.len();
        if self.weather.len() != n || self.loads.len() != n {
            return Err(DatasetError::Inconsistent(format!(
                "{} price rows, {} weather rows, {} load rows",
                n,
                self.weather.len(),
                self.loads.len()
            )));
        }
        let nb = self.n_buses();
        if let Some(t) = self.loads.iter().position(|l| l.len() != nb) {
            return Err(DatasetError::Inconsistent(format!(
                "row {t} has {} buses, expected {nb}",
                self.loads[t].len()
            )));
        }
        if self.step_hours == 0 || 24 % self.step_hours != 0 {
            return Err(DatasetError::Inconsistent(format!("step of {} h does not divide a day", self.step_hours)));
        }
        let finite = self.price.iter().flatten().chain(self.weather.iter().flatten()).all(|v| v.is_finite())
            && self.loads.iter().flatten().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(DatasetError::Inconsistent("non-finite entry".into()));
        }
        Ok(())
    }

    pub fn timestamp(&self, t: usize) -> NaiveDateTime {
        self.start + chrono::Duration::hours(self.step_hours as i64 * t as i64)
    }

    /// Aggregate per-phase demand over all buses at step `t`.
    pub fn aggregate_load(&self, t: usize) -> [f64; 3] {
        let mut out = [0.0; 3];
        for l in &self.loads[t] {
            for p in 0..3 {
                out[p] += l[p];
            }
        }
        out
    }
}

/// One forecasting sample: features from the history window and the
/// truths over the planning horizon that follows it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Index of the first horizon step in the series.
    pub start: usize,
    /// `history x (n_buses + 4)` values, step-major, then the latest price.
    pub features: Vec<f64>,
    pub price: Vec<[f64; 3]>,
    pub load: Vec<[f64; 3]>,
    /// Solar channel over the horizon (drives PV injections).
    pub solar: Vec<f64>,
}

impl Sample {
    /// Truth laid out like the forecaster's heads: per step, three prices
    /// then three loads.
    pub fn target(&self) -> Vec<f64> {
        self.price.iter().zip(&self.load).flat_map(|(p, l)| p.iter().chain(l.iter()).copied()).collect()
    }
}

/// Feature count for `n_buses` and `history` steps.
pub fn feature_dim(n_buses: usize, history: usize) -> usize {
    n_buses * history + 4 * history + 1
}

/// Cuts samples whose horizons start every `stride` steps.
pub fn windows(
    series: &TimeSeries,
    history: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<Sample>, DatasetError> {
    series.validate()?;
    let need = history + horizon;
    if series.len() < need {
        return Err(DatasetError::TooShort { needed: need, found: series.len() });
    }
    let stride = stride.max(1);
    let nb = series.n_buses();
    let mut out = Vec::new();
    let mut s = history;
    while s + horizon <= series.len() {
        let mut features = Vec::with_capacity(feature_dim(nb, history));
        for t in s - history..s {
            features.extend(series.loads[t].iter().map(|l| l.iter().sum::<f64>()));
            features.extend_from_slice(&series.weather[t]);
        }
        let last = series.price[s - 1];
        features.push(last.iter().sum::<f64>() / 3.0);
        out.push(Sample {
            start: s,
            features,
            price: series.price[s..s + horizon].to_vec(),
            load: (s..s + horizon).map(|t| series.aggregate_load(t)).collect(),
            solar: series.weather[s..s + horizon].iter().map(|w| w[3]).collect(),
        });
        s += stride;
    }
    Ok(out)
}

/// Chronological train/calibration/test split. Samples whose horizon would
/// overlap the next part's first horizon are dropped at the boundary, so
/// no truth step appears in two parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<Sample>,
    pub calibration: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn split(samples: Vec<Sample>, fractions: [f64; 3], horizon: usize) -> Result<Split, DatasetError> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(*f >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(DatasetError::InvalidSplit(fractions));
    }
    let n = samples.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_cal = ((fractions[0] + fractions[1]) * n as f64).round() as usize - n_train;
    let mut it = samples.into_iter();
    let mut train: Vec<Sample> = it.by_ref().take(n_train).collect();
    let mut calibration: Vec<Sample> = it.by_ref().take(n_cal).collect();
    let test: Vec<Sample> = it.collect();
    let trim = |part: &mut Vec<Sample>, next_start: Option<usize>| {
        if let Some(ns) = next_start {
            part.retain(|s| s.start + horizon <= ns);
        }
    };
    let cal_start = calibration.first().map(|s| s.start).or(test.first().map(|s| s.start));
    trim(&mut train, cal_start);
    trim(&mut calibration, test.first().map(|s| s.start));
    Ok(Split { train, calibration, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(len: usize, nb: usize) -> TimeSeries {
        TimeSeries {
            start: chrono::NaiveDate::from_ymd_opt(2024, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap(),
            step_hours: 1,
            price: (0..len).map(|t| [t as f64; 3]).collect(),
            weather: (0..len).map(|t| [1.0, 2.0, 3.0, t as f64]).collect(),
            loads: (0..len).map(|t| vec![[t as f64, 0.0, 1.0]; nb]).collect(),
        }
    }

    #[test]
    fn window_layout() {
        let s = series(10, 3);
        let w = windows(&s, 2, 3, 1).unwrap();
        assert_eq!(w.len(), 6);
        assert_eq!(w[0].features.len(), feature_dim(3, 2));
        assert_eq!(w[0].features[..3], [1.0, 1.0, 1.0]);
        assert_eq!(w[0].features[3..7], [1.0, 2.0, 3.0, 0.0]);
        assert_eq!(*w[0].features.last().unwrap(), 1.0);
        assert_eq!(w[0].load[0], [6.0, 0.0, 3.0]);
        assert_eq!(w[0].target()[..6], [2.0, 2.0, 2.0, 6.0, 0.0, 3.0]);
        assert!(windows(&s, 8, 3, 1).is_err());
    }

    #[test]
    fn split_parts_do_not_overlap() {
        let s = series(200, 2);
        let w = windows(&s, 24, 24, 1).unwrap();
        let sp = split(w, [0.6, 0.2, 0.2], 24).unwrap();
        let last_train = sp.train.last().unwrap().start + 24;
        assert!(last_train <= sp.calibration[0].start);
        assert!(sp.calibration.last().unwrap().start + 24 <= sp.test[0].start);
        assert!(split(vec![], [0.5, 0.6, 0.0], 1).is_err());
    }
}
