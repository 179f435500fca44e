//! On-disk formats: network JSON, time-series CSV, run configuration TOML,
//! box files and result exports.
//!
//! Quantities are converted to per-unit exactly once, when a file is read.
//! Files declare their units; `pu` files are taken as they are, `physical`
//! files give powers in kW/kvar, voltages in kV, admittances in siemens and
//! prices per MWh.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::ModelConfig;
use crate::conformal::QuantileRule;
use crate::dataset::TimeSeries;
use crate::network::{validate_radial, BaseQuantities, Bus, BusKind, Complex3, Line, Matrix3C, Network, NetworkError};
use crate::robust::{BoxSet, RobustError};
use crate::training::{DatasetOptions, TrainConfig};

/// Malformed input is a parse error; well-formed input that violates a
/// domain rule is a validation error.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("parse error in {file}: {message}")]
    Parse { file: String, message: String },
    #[error("validation error in {file}: {message}")]
    Validation { file: String, message: String },
    #[error("cannot access {file}: {source}")]
    Io { file: String, source: std::io::Error },
}

impl FormatError {
    fn parse(file: &str, message: impl Into<String>) -> Self {
        FormatError::Parse { file: file.into(), message: message.into() }
    }

    fn validation(file: &str, message: impl Into<String>) -> Self {
        FormatError::Validation { file: file.into(), message: message.into() }
    }

    pub fn is_parse(&self) -> bool {
        matches!(self, FormatError::Parse { .. })
    }
}

fn read_to_string(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io { file: path.display().to_string(), source })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), FormatError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| FormatError::Io { file: dir.display().to_string(), source })?;
    }
    fs::write(path, contents).map_err(|source| FormatError::Io { file: path.display().to_string(), source })
}

// ---------------------------------------------------------------------------
// Units

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    #[default]
    Pu,
    Physical,
}

/// Multipliers from file units to per-unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitScale {
    pub power: f64,
    pub voltage_sq: f64,
    pub admittance: f64,
    pub price: f64,
}

impl UnitScale {
    pub fn new(units: Units, base: &BaseQuantities) -> Self {
        match units {
            Units::Pu => UnitScale { power: 1.0, voltage_sq: 1.0, admittance: 1.0, price: 1.0 },
            Units::Physical => {
                let z_base = base.voltage_kv * base.voltage_kv * 1000.0 / base.power_kva;
                UnitScale {
                    power: 1.0 / base.power_kva,
                    voltage_sq: 1.0 / (base.voltage_kv * base.voltage_kv),
                    admittance: z_base,
                    // one per-unit hour is power_kva / 1000 MWh
                    price: base.power_kva / 1000.0,
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Network file

/// Per-phase complex triple as separate real and imaginary parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexTriple {
    pub re: [f64; 3],
    pub im: [f64; 3],
}

impl ComplexTriple {
    fn from_c3(c: &Complex3, k: f64) -> Self {
        let re = c.re();
        let im = c.im();
        ComplexTriple { re: re.map(|v| v * k), im: im.map(|v| v * k) }
    }

    fn to_c3(self, k: f64) -> Complex3 {
        Complex3::from_re_im(self.re.map(|v| v * k), self.im.map(|v| v * k))
    }
}

/// 3x3 complex matrix as rows of `[re, im]` pairs.
pub type MatrixPairs = [[[f64; 2]; 3]; 3];

fn matrix_to_pairs(m: &Matrix3C, k: f64) -> MatrixPairs {
    std::array::from_fn(|r| std::array::from_fn(|c| [m[(r, c)].re * k, m[(r, c)].im * k]))
}

fn pairs_to_matrix(p: &MatrixPairs, k: f64) -> Matrix3C {
    Matrix3C::from_fn(|r, c| Complex64::new(p[r][c][0] * k, p[r][c][1] * k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusRecord {
    pub id: usize,
    pub kind: BusKind,
    pub s_min: ComplexTriple,
    pub s_max: ComplexTriple,
    /// Squared voltage magnitude bounds (pu), or magnitude bounds in kV.
    pub v_min: f64,
    pub v_max: f64,
    /// Explicit PV injection per step.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pv_profile: Vec<ComplexTriple>,
    /// Per-phase real PV at full solar intensity; the profile then follows
    /// the time series' solar channel.
    #[serde(default)]
    pub pv_capacity: f64,
    #[serde(default)]
    pub bess_cost: f64,
    #[serde(default)]
    pub bess_candidate: bool,
    /// Share of the aggregate per-phase demand drawn at this bus.
    #[serde(default)]
    pub load_weight: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineRecord {
    pub from: usize,
    pub to: usize,
    pub y_fwd: MatrixPairs,
    pub y_rev: MatrixPairs,
    #[serde(default)]
    pub is_transformer: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_cap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    #[serde(default)]
    pub units: Units,
    pub base: BaseQuantities,
    pub buses: Vec<BusRecord>,
    pub lines: Vec<LineRecord>,
}

/// A network plus the per-bus data that lives next to it in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkData {
    pub network: Network,
    /// Units of the file this came from (time series use the same units).
    pub units: Units,
    pub pv_capacity: Vec<f64>,
    pub load_weights: Vec<[f64; 3]>,
}

impl NetworkData {
    /// Scale for time series recorded in the same units as this network.
    pub fn unit_scale(&self) -> UnitScale {
        UnitScale::new(self.units, &self.network.base)
    }
}

impl NetworkFile {
    /// Per-unit file describing `data`.
    pub fn from_data(data: &NetworkData) -> Self {
        let net = &data.network;
        NetworkFile {
            units: Units::Pu,
            base: net.base,
            buses: net
                .buses
                .iter()
                .enumerate()
                .map(|(j, b)| BusRecord {
                    id: b.id,
                    kind: b.kind,
                    s_min: ComplexTriple::from_c3(&b.s_min, 1.0),
                    s_max: ComplexTriple::from_c3(&b.s_max, 1.0),
                    v_min: b.v_min,
                    v_max: b.v_max,
                    pv_profile: b.pv_profile.iter().map(|c| ComplexTriple::from_c3(c, 1.0)).collect(),
                    pv_capacity: data.pv_capacity.get(j).copied().unwrap_or(0.0),
                    bess_cost: b.bess_cost,
                    bess_candidate: b.bess_candidate,
                    load_weight: data.load_weights.get(j).copied().unwrap_or([0.0; 3]),
                })
                .collect(),
            lines: net
                .lines
                .iter()
                .map(|l| LineRecord {
                    from: l.from,
                    to: l.to,
                    y_fwd: matrix_to_pairs(&l.y_fwd, 1.0),
                    y_rev: matrix_to_pairs(&l.y_rev, 1.0),
                    is_transformer: l.is_transformer,
                    flow_cap: l.flow_cap,
                })
                .collect(),
        }
    }

    /// Converts to per-unit and validates elements and radiality.
    pub fn into_data(self, file: &str) -> Result<NetworkData, FormatError> {
        let k = UnitScale::new(self.units, &self.base);
        let vk = |v: f64| match self.units {
            Units::Pu => v,
            Units::Physical => v * v * k.voltage_sq,
        };
        let buses = self
            .buses
            .iter()
            .map(|b| Bus {
                id: b.id,
                kind: b.kind,
                s_min: b.s_min.to_c3(k.power),
                s_max: b.s_max.to_c3(k.power),
                v_min: vk(b.v_min),
                v_max: vk(b.v_max),
                pv_profile: b.pv_profile.iter().map(|c| c.to_c3(k.power)).collect(),
                bess_cost: b.bess_cost,
                bess_candidate: b.bess_candidate,
            })
            .collect();
        let lines = self
            .lines
            .iter()
            .map(|l| Line {
                from: l.from,
                to: l.to,
                y_fwd: pairs_to_matrix(&l.y_fwd, k.admittance),
                y_rev: pairs_to_matrix(&l.y_rev, k.admittance),
                is_transformer: l.is_transformer,
                flow_cap: l.flow_cap.map(|c| c * k.power),
            })
            .collect();
        let invalid = |e: NetworkError| FormatError::validation(file, e.to_string());
        let network = Network::new(self.base, buses, lines).map_err(invalid)?;
        validate_radial(&network).map_err(invalid)?;
        Ok(NetworkData {
            network,
            units: self.units,
            pv_capacity: self.buses.iter().map(|b| b.pv_capacity * k.power).collect(),
            load_weights: self.buses.iter().map(|b| b.load_weight).collect(),
        })
    }
}

pub fn parse_network(text: &str, file: &str) -> Result<NetworkData, FormatError> {
    let f: NetworkFile = serde_json::from_str(text).map_err(|e| FormatError::parse(file, e.to_string()))?;
    f.into_data(file)
}

pub fn load_network(path: &Path) -> Result<NetworkData, FormatError> {
    parse_network(&read_to_string(path)?, &path.display().to_string())
}

pub fn network_to_json(data: &NetworkData) -> String {
    serde_json::to_string_pretty(&NetworkFile::from_data(data)).expect("network serializes")
}

pub fn save_network(path: &Path, data: &NetworkData) -> Result<(), FormatError> {
    write_file(path, network_to_json(data).as_bytes())
}

// ---------------------------------------------------------------------------
// Time-series file

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

const PRICE_COLUMNS: [&str; 3] = ["price_a", "price_b", "price_c"];
const PHASE_SUFFIX: [&str; 3] = ["a", "b", "c"];

fn load_column(bus: usize, phase: usize) -> String {
    format!("load_bus{bus}_{}", PHASE_SUFFIX[phase])
}

/// Column names for a series over `n_buses` buses.
pub fn timeseries_header(n_buses: usize) -> Vec<String> {
    let mut h = vec!["timestamp".to_string()];
    h.extend(PRICE_COLUMNS.iter().map(|s| s.to_string()));
    h.extend(crate::dataset::WEATHER_CHANNELS.iter().map(|s| s.to_string()));
    for b in 0..n_buses {
        h.extend((0..3).map(|p| load_column(b, p)));
    }
    h
}

pub fn write_timeseries<W: Write>(series: &TimeSeries, out: W) -> Result<(), FormatError> {
    let io =
        |e: csv::Error| FormatError::Io { file: "time series".into(), source: std::io::Error::other(e.to_string()) };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(timeseries_header(series.n_buses())).map_err(io)?;
    for t in 0..series.len() {
        let mut rec = vec![series.timestamp(t).format(TIMESTAMP_FORMAT).to_string()];
        rec.extend(series.price[t].iter().map(|v| v.to_string()));
        rec.extend(series.weather[t].iter().map(|v| v.to_string()));
        rec.extend(series.loads[t].iter().flatten().map(|v| v.to_string()));
        w.write_record(rec).map_err(io)?;
    }
    w.flush().map_err(|source| FormatError::Io { file: "time series".into(), source })
}

/// Reads a series; loads and prices are scaled by `scale` to per-unit.
pub fn read_timeseries<R: Read>(input: R, file: &str, scale: &UnitScale) -> Result<TimeSeries, FormatError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers().map_err(|e| FormatError::parse(file, e.to_string()))?.clone();
    let index: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| {
        index.get(name).copied().ok_or_else(|| FormatError::parse(file, format!("missing column `{name}`")))
    };
    let ts_col = col("timestamp")?;
    let price_cols = PRICE_COLUMNS.iter().map(|c| col(c)).collect::<Result<Vec<_>, _>>()?;
    let weather_cols = crate::dataset::WEATHER_CHANNELS.iter().map(|c| col(c)).collect::<Result<Vec<_>, _>>()?;
    let mut n_buses = 0;
    while index.contains_key(load_column(n_buses, 0).as_str()) {
        n_buses += 1;
    }
    if n_buses == 0 {
        return Err(FormatError::parse(file, "missing column `load_bus0_a`"));
    }
    let mut load_cols = Vec::with_capacity(n_buses);
    for b in 0..n_buses {
        load_cols.push([col(&load_column(b, 0))?, col(&load_column(b, 1))?, col(&load_column(b, 2))?]);
    }

    let mut stamps: Vec<NaiveDateTime> = Vec::new();
    let mut price = Vec::new();
    let mut weather = Vec::new();
    let mut loads = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let line = r + 2;
        let rec = rec.map_err(|e| FormatError::parse(file, format!("line {line}: {e}")))?;
        let cell = |c: usize| -> Result<&str, FormatError> {
            match rec.get(c) {
                Some(s) if !s.is_empty() => Ok(s),
                _ => Err(FormatError::parse(file, format!("line {line}: missing value in column `{}`", &header[c]))),
            }
        };
        let num = |c: usize| -> Result<f64, FormatError> {
            let s = cell(c)?;
            s.parse::<f64>().map_err(|_| {
                FormatError::parse(file, format!("line {line}: `{s}` in column `{}` is not a number", &header[c]))
            })
        };
        let ts = NaiveDateTime::parse_from_str(cell(ts_col)?, TIMESTAMP_FORMAT)
            .map_err(|e| FormatError::parse(file, format!("line {line}: bad timestamp: {e}")))?;
        stamps.push(ts);
        price.push([
            num(price_cols[0])? * scale.price,
            num(price_cols[1])? * scale.price,
            num(price_cols[2])? * scale.price,
        ]);
        weather.push([num(weather_cols[0])?, num(weather_cols[1])?, num(weather_cols[2])?, num(weather_cols[3])?]);
        let mut row = Vec::with_capacity(n_buses);
        for c in &load_cols {
            row.push([num(c[0])? * scale.power, num(c[1])? * scale.power, num(c[2])? * scale.power]);
        }
        loads.push(row);
    }
    if stamps.len() < 2 {
        return Err(FormatError::validation(file, "need at least two rows"));
    }
    let step = stamps[1] - stamps[0];
    if step <= chrono::Duration::zero() || step.num_seconds() % 3600 != 0 {
        return Err(FormatError::validation(file, format!("step {step} is not a positive whole number of hours")));
    }
    for t in 1..stamps.len() {
        let d = stamps[t] - stamps[t - 1];
        if d != step {
            return Err(FormatError::validation(
                file,
                format!(
                    "gap at line {}: {} follows {} (expected a {} h step)",
                    t + 2,
                    stamps[t],
                    stamps[t - 1],
                    step.num_hours()
                ),
            ));
        }
    }
    let series = TimeSeries { start: stamps[0], step_hours: step.num_hours() as u32, price, weather, loads };
    series.validate().map_err(|e| FormatError::validation(file, e.to_string()))?;
    Ok(series)
}

pub fn load_timeseries(path: &Path, scale: &UnitScale) -> Result<TimeSeries, FormatError> {
    let file = path.display().to_string();
    let f = fs::File::open(path).map_err(|source| FormatError::Io { file: file.clone(), source })?;
    read_timeseries(f, &file, scale)
}

pub fn save_timeseries(path: &Path, series: &TimeSeries) -> Result<(), FormatError> {
    let mut buf = Vec::new();
    write_timeseries(series, &mut buf)?;
    write_file(path, &buf)
}

// ---------------------------------------------------------------------------
// Box file

/// Price and aggregate-load boxes plus an optional solar profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxFile {
    pub price: BoxSet,
    pub load: BoxSet,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub solar: Vec<f64>,
}

pub fn parse_boxes(text: &str, file: &str) -> Result<BoxFile, FormatError> {
    let b: BoxFile = serde_json::from_str(text).map_err(|e| FormatError::parse(file, e.to_string()))?;
    let invalid = |e: RobustError| FormatError::validation(file, e.to_string());
    b.price.validate().map_err(invalid)?;
    b.load.validate().map_err(invalid)?;
    if b.price.steps() != b.load.steps() {
        return Err(FormatError::validation(
            file,
            format!("{} price steps but {} load steps", b.price.steps(), b.load.steps()),
        ));
    }
    if !b.solar.is_empty() && b.solar.len() != b.price.steps() {
        return Err(FormatError::validation(
            file,
            format!("{} solar values for {} steps", b.solar.len(), b.price.steps()),
        ));
    }
    Ok(b)
}

pub fn load_boxes(path: &Path) -> Result<BoxFile, FormatError> {
    parse_boxes(&read_to_string(path)?, &path.display().to_string())
}

// ---------------------------------------------------------------------------
// Run configuration

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub network: Option<PathBuf>,
    pub timeseries: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub thresholds: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub history: usize,
    #[serde(flatten)]
    pub options: DatasetOptions,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { history: 24, options: DatasetOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub alpha: f64,
    pub rule: QuantileRule,
    /// Separate price and load thresholds instead of one shared one.
    pub per_target: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { alpha: 0.1, rule: QuantileRule::Ceiling, per_target: false }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataSection,
    pub eval: EvalSection,
}

impl RunConfig {
    /// Parses and checks that referenced input files exist. Relative paths
    /// are resolved against `base_dir`.
    pub fn parse(text: &str, file: &str, base_dir: &Path) -> Result<RunConfig, FormatError> {
        let mut c: RunConfig = toml::from_str(text).map_err(|e| FormatError::parse(file, e.to_string()))?;
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base_dir.join(&*p);
            }
        };
        for p in [
            &mut c.paths.network,
            &mut c.paths.timeseries,
            &mut c.paths.checkpoint,
            &mut c.paths.thresholds,
            &mut c.paths.out_dir,
        ] {
            resolve(p);
        }
        for (name, p) in [
            ("network", &c.paths.network),
            ("timeseries", &c.paths.timeseries),
            ("checkpoint", &c.paths.checkpoint),
            ("thresholds", &c.paths.thresholds),
        ] {
            if let Some(p) = p.as_ref().filter(|p| !p.exists()) {
                return Err(FormatError::validation(file, format!("paths.{name} = {} does not exist", p.display())));
            }
        }
        c.model.validate().map_err(|e| FormatError::validation(file, e.to_string()))?;
        c.train.validate().map_err(|e| FormatError::validation(file, e.to_string()))?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<RunConfig, FormatError> {
        let dir = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&read_to_string(path)?, &path.display().to_string(), dir)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }
}

// ---------------------------------------------------------------------------
// JSON helpers and exports

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    write_file(path, serde_json::to_string_pretty(value).expect("value serializes").as_bytes())
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, FormatError> {
    let file = path.display().to_string();
    serde_json::from_str(&read_to_string(path)?).map_err(|e| FormatError::parse(&file, e.to_string()))
}

pub fn save_text(path: &Path, text: &str) -> Result<(), FormatError> {
    write_file(path, text.as_bytes())
}

/// One row of the slack-power plot export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub step: usize,
    pub phase: char,
    /// Planned real power drawn at the slack bus.
    pub slack_power: f64,
    pub load_lower: f64,
    pub load_upper: f64,
    pub load_truth: f64,
    pub price_lower: f64,
    pub price_upper: f64,
    pub price_truth: f64,
}

pub fn write_csv<W: Write, T: Serialize>(rows: &[T], out: W) -> Result<(), FormatError> {
    let err =
        |e: csv::Error| FormatError::Io { file: "csv export".into(), source: std::io::Error::other(e.to_string()) };
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|source| FormatError::Io { file: "csv export".into(), source })
}

pub fn save_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), FormatError> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    write_file(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, ScenarioSpec};

    fn small() -> crate::synth::Scenario {
        generate(&ScenarioSpec { n_buses: 4, days: 3, ..Default::default() }).unwrap()
    }

    #[test]
    fn network_round_trip() {
        let sc = small();
        let data = NetworkData {
            network: sc.network.clone(),
            units: Units::Pu,
            pv_capacity: sc.pv_capacity.clone(),
            load_weights: sc.weights.clone(),
        };
        let back = parse_network(&network_to_json(&data), "mem").unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn network_cycle_is_a_validation_error() {
        let sc = small();
        let data = NetworkData {
            network: sc.network.clone(),
            units: Units::Pu,
            pv_capacity: sc.pv_capacity.clone(),
            load_weights: sc.weights.clone(),
        };
        let mut f = NetworkFile::from_data(&data);
        let mut extra = f.lines[0].clone();
        extra.from = 1;
        extra.to = 3;
        f.lines.push(extra);
        let err = f.into_data("mem").unwrap_err();
        assert!(!err.is_parse());
        assert!(err.to_string().contains("cycle"), "{err}");
    }

    #[test]
    fn physical_units_convert_once() {
        let base = BaseQuantities { power_kva: 500.0, voltage_kv: 4.0 };
        let k = UnitScale::new(Units::Physical, &base);
        assert!((250.0 * k.power - 0.5).abs() < 1e-15);
        assert!((4.0 * 4.0 * k.voltage_sq - 1.0).abs() < 1e-15);
        assert!((k.admittance - 32.0).abs() < 1e-12);
        assert!((k.price - 0.5).abs() < 1e-15);
    }

    #[test]
    fn timeseries_round_trip_and_errors() {
        let sc = small();
        let mut buf = Vec::new();
        write_timeseries(&sc.series, &mut buf).unwrap();
        let pu = UnitScale::new(Units::Pu, &BaseQuantities::default());
        let back = read_timeseries(buf.as_slice(), "mem", &pu).unwrap();
        assert_eq!(back, sc.series);

        let text = String::from_utf8(buf).unwrap();
        let no_col = text.replacen("humidity", "humid", 1);
        let err = read_timeseries(no_col.as_bytes(), "mem", &pu).unwrap_err();
        assert!(err.is_parse() && err.to_string().contains("`humidity`"), "{err}");

        let mut lines: Vec<&str> = text.lines().collect();
        lines.remove(5);
        let gap = lines.join("\n");
        let err = read_timeseries(gap.as_bytes(), "mem", &pu).unwrap_err();
        assert!(!err.is_parse() && err.to_string().contains("gap at line 6"), "{err}");
    }

    #[test]
    fn run_config_defaults_and_missing_paths() {
        let c = RunConfig::parse("[train]\nloss_weight = 0.7\n", "mem", Path::new(".")).unwrap();
        assert_eq!(c.train.loss_weight, 0.7);
        assert_eq!(c.model, ModelConfig::default());
        let back = RunConfig::parse(&c.to_toml(), "mem", Path::new(".")).unwrap();
        assert_eq!(back, c);
        let err =
            RunConfig::parse("[paths]\nnetwork = \"/nonexistent/net.json\"\n", "mem", Path::new(".")).unwrap_err();
        assert!(!err.is_parse());
        assert!(RunConfig::parse("[train]\nbogus = 1\n", "mem", Path::new(".")).unwrap_err().is_parse());
    }
}
