//! Synthetic feeder and hourly data with known structure: sinusoidal
//! weather, temperature-coupled loads and spiky load-driven prices.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::TimeSeries;
use crate::network::{BaseQuantities, Bus, BusKind, Complex3, Line, Matrix3C, Network, NetworkError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeatherModel {
    pub temp_mean: f64,
    pub temp_daily_amp: f64,
    /// Linear drift over the whole period (degrees).
    pub temp_drift: f64,
    pub temp_sigma: f64,
    pub wind_mean: f64,
    pub wind_sigma: f64,
    pub humidity_mean: f64,
    pub humidity_sigma: f64,
    /// Day-to-day spread of the cloud factor scaling clear-sky solar.
    pub cloud_sigma: f64,
    pub solar_sigma: f64,
}

impl Default for WeatherModel {
    fn default() -> Self {
        WeatherModel {
            temp_mean: 20.0,
            temp_daily_amp: 6.0,
            temp_drift: 8.0,
            temp_sigma: 1.0,
            wind_mean: 4.0,
            wind_sigma: 1.0,
            humidity_mean: 60.0,
            humidity_sigma: 5.0,
            cloud_sigma: 0.15,
            solar_sigma: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadModel {
    /// Mean per-phase demand of a loaded bus (per-unit).
    pub base: f64,
    /// Relative demand change per degree above the mean temperature.
    pub temp_coupling: f64,
    /// Noise standard deviation relative to the bus base demand.
    pub sigma: f64,
    /// Per-phase demand shares.
    pub phase_share: [f64; 3],
}

impl Default for LoadModel {
    fn default() -> Self {
        LoadModel { base: 0.15, temp_coupling: 0.03, sigma: 0.05, phase_share: [1.1, 1.0, 0.9] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceModel {
    pub base: f64,
    /// Price change per degree above the mean temperature.
    pub temp_coef: f64,
    /// Price change per unit of aggregate (all-phase) demand above nominal.
    pub load_coef: f64,
    pub sigma: f64,
    pub spike_prob: f64,
    pub spike_mult: f64,
    pub phase_factor: [f64; 3],
}

impl Default for PriceModel {
    fn default() -> Self {
        PriceModel {
            base: 30.0,
            temp_coef: 0.8,
            load_coef: 10.0,
            sigma: 2.0,
            spike_prob: 0.05,
            spike_mult: 3.0,
            phase_factor: [1.0, 1.02, 0.98],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub n_buses: usize,
    pub days: usize,
    pub step_hours: u32,
    pub seed: u64,
    /// History length of each forecasting window.
    pub history: usize,
    /// Planning horizon in steps.
    pub horizon: usize,
    pub weather: WeatherModel,
    pub load: LoadModel,
    pub price: PriceModel,
    /// Per-phase PV capacity of each loaded bus (per-unit).
    pub pv_capacity: f64,
    /// Size cost per unit of installed storage over one planning horizon.
    pub bess_cost: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            n_buses: 8,
            days: 120,
            step_hours: 1,
            seed: 7,
            history: 24,
            horizon: 24,
            weather: WeatherModel::default(),
            load: LoadModel::default(),
            price: PriceModel::default(),
            pv_capacity: 0.06,
            bess_cost: 6.0,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.into()));
        if self.n_buses < 2 {
            return bad("need at least two buses");
        }
        if self.step_hours == 0 || 24 % self.step_hours != 0 {
            return bad("step length must divide 24 hours");
        }
        let steps_per_day = (24 / self.step_hours) as usize;
        if self.days * steps_per_day < self.history + self.horizon {
            return bad("too few days for one window");
        }
        let w = &self.weather;
        let sigmas = [
            w.temp_sigma,
            w.wind_sigma,
            w.humidity_sigma,
            w.cloud_sigma,
            w.solar_sigma,
            self.load.sigma,
            self.price.sigma,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0)) {
            return bad("noise levels must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.price.spike_prob) || self.price.spike_mult < 1.0 {
            return bad("spike probability must lie in [0, 1] and the multiplier be at least 1");
        }
        if self.load.base < 0.0 || self.load.phase_share.iter().any(|s| *s < 0.0) || self.pv_capacity < 0.0 {
            return bad("load base, phase shares and PV capacity must be nonnegative");
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.days * (24 / self.step_hours) as usize
    }

    /// Hard cap on any bus-phase demand.
    pub fn load_cap(&self) -> f64 {
        let share = self.load.phase_share.iter().cloned().fold(0.0, f64::max);
        3.0 * self.load.base * share * (1.0 + self.load.temp_coupling * 20.0).max(1.0)
    }

    /// Hard cap on any price.
    pub fn price_cap(&self) -> f64 {
        let pf = self.price.phase_factor.iter().cloned().fold(0.0, f64::max);
        let p = &self.price;
        let aggregate = 3.0 * self.load_cap() * self.n_buses as f64;
        pf * p.spike_mult * (p.base + p.temp_coef * 40.0 + p.load_coef * aggregate + 6.0 * p.sigma)
    }
}

/// Relative demand base of each bus; the slack bus and the bus behind the
/// delta-wye transformer carry none (see [`feeder`]).
pub fn bus_bases(n: usize) -> Vec<f64> {
    (0..n).map(|j| if j == 0 || j == n - 1 { 0.0 } else { 0.8 + 0.4 * ((j * 37 % 11) as f64 / 10.0) }).collect()
}

/// Disaggregation weights matching [`bus_bases`].
pub fn load_weights(n: usize) -> Vec<[f64; 3]> {
    let b = bus_bases(n);
    let total: f64 = b.iter().sum();
    b.iter().map(|bj| [bj / total; 3]).collect()
}

fn overhead_line(scale: f64) -> Matrix3C {
    // Self and mutual impedances of a short overhead section, slightly
    // untransposed; the admittance is its inverse.
    let c = Complex64::new;
    let zs = c(0.010, 0.030) * scale;
    let zm = c(0.004, 0.012) * scale;
    let z = Matrix3C::new(zs, zm, zm * 0.95, zm, zs * 1.02, zm, zm * 0.95, zm, zs * 0.98);
    z.try_inverse().expect("line impedance is invertible")
}

/// Self admittance of a delta-wye transformer as seen from either side;
/// rank two, since zero-sequence current cannot pass.
pub fn delta_wye_admittance(y_t: Complex64) -> Matrix3C {
    Matrix3C::from_fn(|p, q| if p == q { y_t * (2.0 / 3.0) } else { y_t * (-1.0 / 3.0) })
}

/// A radial chain `0 - 1 - ... - (n-2)` with a delta-wye transformer
/// feeding the last bus from bus `n-2`.
pub fn feeder(spec: &ScenarioSpec) -> Result<Network, SynthError> {
    let n = spec.n_buses;
    let big = 5.0;
    let buses = (0..n)
        .map(|id| {
            let slack = id == 0;
            Bus {
                id,
                kind: if slack { BusKind::Slack } else { BusKind::Load },
                // no backfeed through the substation: the slack bus only imports
                s_min: Complex3::from_re_im([if slack { 0.0 } else { -big }; 3], [-big; 3]),
                s_max: Complex3::from_re_im([big; 3], [big; 3]),
                v_min: if slack { 0.9 } else { 0.81 },
                v_max: if slack { 1.1 } else { 1.21 },
                pv_profile: Vec::new(),
                bess_cost: if slack { 0.0 } else { spec.bess_cost },
                bess_candidate: !slack,
            }
        })
        .collect();
    let mut lines: Vec<Line> = (1..n.saturating_sub(1))
        .map(|j| {
            let y = overhead_line(1.0 + 0.1 * j as f64);
            Line { from: j - 1, to: j, y_fwd: y, y_rev: y, is_transformer: false, flow_cap: None }
        })
        .collect();
    let yt = delta_wye_admittance(Complex64::new(2.0, -20.0));
    lines.push(Line {
        from: n.saturating_sub(2),
        to: n - 1,
        y_fwd: yt,
        y_rev: yt,
        is_transformer: true,
        flow_cap: None,
    });
    Ok(Network::new(BaseQuantities::default(), buses, lines)?)
}

/// Per-bus PV capacity in proportion to the bus's demand base, so that
/// midday PV stays below demand and nothing has to flow back through the
/// substation.
pub fn pv_capacities(spec: &ScenarioSpec) -> Vec<f64> {
    bus_bases(spec.n_buses).into_iter().map(|b| spec.pv_capacity * b).collect()
}

/// Sets the PV profile of every bus with nonzero capacity to that capacity
/// times the solar channel; other buses keep their profile.
pub fn apply_pv(network: &Network, capacity: &[f64], solar: &[f64]) -> Network {
    let mut net = network.clone();
    for (bus, &cap) in net.buses.iter_mut().zip(capacity) {
        if cap != 0.0 {
            bus.pv_profile = solar.iter().map(|s| Complex3::real([cap * s; 3])).collect();
        }
    }
    net
}

/// Generated data set: feeder, time series and disaggregation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub network: Network,
    pub weights: Vec<[f64; 3]>,
    pub pv_capacity: Vec<f64>,
    pub series: TimeSeries,
}

/// Deterministic in `spec.seed`.
pub fn generate(spec: &ScenarioSpec) -> Result<Scenario, SynthError> {
    spec.validate()?;
    let network = feeder(spec)?;
    let n = spec.n_buses;
    let steps = spec.steps();
    let spd = (24 / spec.step_hours) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let z = move |rng: &mut ChaCha8Rng| -> f64 { std.sample(rng) };

    let w = &spec.weather;
    let bases = bus_bases(n);
    let (mut temp_ar, mut wind_ar) = (0.0, 0.0);
    let mut cloud = 1.0;
    let mut price = Vec::with_capacity(steps);
    let mut weather = Vec::with_capacity(steps);
    let mut loads = Vec::with_capacity(steps);
    let two_pi = 2.0 * std::f64::consts::PI;
    for t in 0..steps {
        let hour = (t % spd) as f64 * spec.step_hours as f64;
        if t % spd == 0 {
            cloud = (1.0 - w.cloud_sigma * z(&mut rng).abs()).clamp(0.2, 1.0);
        }
        temp_ar = 0.8 * temp_ar + w.temp_sigma * z(&mut rng);
        wind_ar = 0.7 * wind_ar + w.wind_sigma * z(&mut rng);
        let drift = w.temp_drift * t as f64 / steps as f64;
        let temp = w.temp_mean + drift + w.temp_daily_amp * (two_pi * (hour - 9.0) / 24.0).sin() + temp_ar;
        let wind = (w.wind_mean + wind_ar).max(0.0);
        let clear = ((hour - 6.0) / 12.0 * std::f64::consts::PI).sin().max(0.0);
        let solar = (clear * cloud + w.solar_sigma * z(&mut rng) * (clear > 0.0) as u8 as f64).clamp(0.0, 1.0);
        let humidity =
            (w.humidity_mean - 1.5 * (temp - w.temp_mean) + w.humidity_sigma * z(&mut rng)).clamp(0.0, 100.0);
        weather.push([wind, temp, humidity, solar]);

        // morning and evening peaks on a base level
        let shape = 0.7 + 0.25 * (-((hour - 8.0) / 2.5).powi(2)).exp() + 0.45 * (-((hour - 19.0) / 3.0).powi(2)).exp();
        let heat = (1.0 + spec.load.temp_coupling * (temp - w.temp_mean)).max(0.2);
        let cap = spec.load_cap();
        let row: Vec<[f64; 3]> = bases
            .iter()
            .map(|&b| {
                std::array::from_fn(|p| {
                    if b == 0.0 {
                        return 0.0;
                    }
                    let mean = spec.load.base * b * spec.load.phase_share[p] * shape * heat;
                    (mean + spec.load.sigma * spec.load.base * b * z(&mut rng)).clamp(0.0, cap)
                })
            })
            .collect();
        let aggregate: f64 = row.iter().flatten().sum();
        let nominal = 3.0 * spec.load.base * bases.iter().sum::<f64>();
        loads.push(row);

        let pm = &spec.price;
        let spike = if rng.random_bool(pm.spike_prob) { pm.spike_mult } else { 1.0 };
        let level = pm.base + pm.temp_coef * (temp - w.temp_mean) + pm.load_coef * (aggregate - nominal);
        let noise = pm.sigma * z(&mut rng);
        let pcap = spec.price_cap();
        price.push(std::array::from_fn(|p| ((level + noise) * spike * pm.phase_factor[p]).clamp(0.0, pcap)));
    }
    let series = TimeSeries {
        start: chrono::NaiveDate::from_ymd_opt(2024, 6, 1)
            .expect("valid date")
            .and_hms_opt(0, 0, 0)
            .expect("valid time"),
        step_hours: spec.step_hours,
        price,
        weather,
        loads,
    };
    Ok(Scenario { weights: load_weights(n), pv_capacity: pv_capacities(spec), network, spec: spec.clone(), series })
}
