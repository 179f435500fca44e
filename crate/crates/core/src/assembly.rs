//! Linearized three-phase branch-flow model as a sparse LP.
//!
//! Branch flows are never given their own columns: the per-phase flow into a
//! subtree is the negated sum of the subtree's injections, and the 3x3 flow
//! matrix is `gamma * diag(lambda)`. Bus voltages follow the balanced
//! parameterization `v = v_c * A`, one real column per bus and step.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{
    gamma_matrix, invert, is_invertible, path_to_root, subtree, validate_radial, BusKind, Complex3, Matrix3C, Network,
    NetworkError, RootedTree, DEFAULT_INVERTIBILITY_TOL,
};
use crate::solver::{CsrMatrix, SolveResult, StandardLp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("line {line} ({from}->{to}) has a singular admittance; use the admittance or auto voltage mode")]
    SingularImpedance { line: usize, from: usize, to: usize },
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("{what}: expected {expected} steps, found {found}")]
    HorizonMismatch { what: String, expected: usize, found: usize },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VoltageMode {
    /// Path-summed impedance relation for every bus; fails on singular lines.
    Impedance,
    /// Admittance relation in both directions on every line.
    Admittance,
    /// Admittance relation on singular lines, impedance relation elsewhere.
    #[default]
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of dispatch steps (the horizon length including step 0).
    pub horizon: usize,
    /// State-of-charge limits as multiples of the installed size.
    pub soc_min: f64,
    pub soc_max: f64,
    /// Per-phase real dispatch limits per step.
    pub dispatch_min: f64,
    pub dispatch_max: f64,
    /// Upper bound on installed size per bus.
    pub x_max: f64,
    /// Slack-bus squared voltage.
    pub v_ref: f64,
    /// Weight of the prediction loss during training.
    pub loss_weight: f64,
    pub voltage_mode: VoltageMode,
    pub invertibility_tol: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            horizon: 24,
            soc_min: -1.0,
            soc_max: 0.0,
            dispatch_min: -0.5,
            dispatch_max: 0.5,
            x_max: 10.0,
            v_ref: 1.0,
            loss_weight: 0.8,
            voltage_mode: VoltageMode::Auto,
            invertibility_tol: DEFAULT_INVERTIBILITY_TOL,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), AssemblyError> {
        let bad = |m: String| Err(AssemblyError::InvalidConfig(m));
        if self.horizon == 0 {
            return bad("horizon must be at least one step".into());
        }
        if !(self.soc_min <= 0.0 && 0.0 <= self.soc_max) {
            return bad(format!("need soc_min <= 0 <= soc_max, got [{}, {}]", self.soc_min, self.soc_max));
        }
        if !(self.dispatch_min <= self.dispatch_max) {
            return bad("dispatch_min exceeds dispatch_max".into());
        }
        if !(self.x_max >= 0.0 && self.x_max.is_finite()) {
            return bad("x_max must be finite and nonnegative".into());
        }
        if !(self.v_ref > 0.0 && self.v_ref.is_finite()) {
            return bad("v_ref must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.loss_weight) {
            return bad(format!("loss_weight must lie in [0, 1], got {}", self.loss_weight));
        }
        if !(self.invertibility_tol > 0.0) {
            return bad("invertibility_tol must be positive".into());
        }
        let finite = [self.soc_min, self.soc_max, self.dispatch_min, self.dispatch_max];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("limits must be finite".into());
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Variables

/// Owner of one LP column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    /// Installed storage size at a bus.
    Size { bus: usize },
    /// Real part of the net injection.
    InjRe { bus: usize, t: usize, phase: usize },
    /// Imaginary part of the net injection.
    InjIm { bus: usize, t: usize, phase: usize },
    /// Real storage dispatch (injection positive).
    Dispatch { bus: usize, t: usize, phase: usize },
    /// State of charge, `t` runs over `0..=horizon`.
    Soc { bus: usize, t: usize, phase: usize },
    /// Balanced squared-voltage scalar.
    Voltage { bus: usize, t: usize },
    /// Worst-case procurement cost.
    Epigraph,
}

impl std::fmt::Display for Symbol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        const PH: [char; 3] = ['a', 'b', 'c'];
        match *self {
            Symbol::Size { bus } => write!(f, "x[{bus}]"),
            Symbol::InjRe { bus, t, phase } => write!(f, "p[{bus},{t},{}]", PH[phase]),
            Symbol::InjIm { bus, t, phase } => write!(f, "q[{bus},{t},{}]", PH[phase]),
            Symbol::Dispatch { bus, t, phase } => write!(f, "d[{bus},{t},{}]", PH[phase]),
            Symbol::Soc { bus, t, phase } => write!(f, "soc[{bus},{t},{}]", PH[phase]),
            Symbol::Voltage { bus, t } => write!(f, "v[{bus},{t}]"),
            Symbol::Epigraph => write!(f, "eta"),
        }
    }
}

/// Column layout of the planning LP.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableMap {
    n_buses: usize,
    horizon: usize,
    x0: usize,
    inj0: usize,
    v0: usize,
    /// First dispatch / SOC column per bus; `None` at the slack bus.
    d0: Vec<Option<usize>>,
    soc0: Vec<Option<usize>>,
    eta: usize,
    owners: Vec<Symbol>,
}

impl VariableMap {
    pub fn new(n_buses: usize, horizon: usize) -> Self {
        let mut owners = Vec::new();
        let x0 = owners.len();
        owners.extend((0..n_buses).map(|bus| Symbol::Size { bus }));
        let inj0 = owners.len();
        for t in 0..horizon {
            for bus in 0..n_buses {
                owners.extend((0..3).map(|phase| Symbol::InjRe { bus, t, phase }));
                owners.extend((0..3).map(|phase| Symbol::InjIm { bus, t, phase }));
            }
        }
        let v0 = owners.len();
        for t in 0..horizon {
            owners.extend((0..n_buses).map(|bus| Symbol::Voltage { bus, t }));
        }
        let mut d0 = vec![None; n_buses];
        let mut soc0 = vec![None; n_buses];
        for bus in 1..n_buses {
            d0[bus] = Some(owners.len());
            for t in 0..horizon {
                owners.extend((0..3).map(|phase| Symbol::Dispatch { bus, t, phase }));
            }
            soc0[bus] = Some(owners.len());
            for t in 0..=horizon {
                owners.extend((0..3).map(|phase| Symbol::Soc { bus, t, phase }));
            }
        }
        let eta = owners.len();
        owners.push(Symbol::Epigraph);
        VariableMap { n_buses, horizon, x0, inj0, v0, d0, soc0, eta, owners }
    }

    pub fn n_cols(&self) -> usize {
        self.owners.len()
    }

    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn owner(&self, col: usize) -> Symbol {
        self.owners[col]
    }

    pub fn x(&self, bus: usize) -> usize {
        self.x0 + bus
    }

    pub fn s_re(&self, bus: usize, t: usize, phase: usize) -> usize {
        self.inj0 + (t * self.n_buses + bus) * 6 + phase
    }

    pub fn s_im(&self, bus: usize, t: usize, phase: usize) -> usize {
        self.inj0 + (t * self.n_buses + bus) * 6 + 3 + phase
    }

    pub fn v(&self, bus: usize, t: usize) -> usize {
        self.v0 + t * self.n_buses + bus
    }

    pub fn dispatch(&self, bus: usize, t: usize, phase: usize) -> Option<usize> {
        self.d0[bus].map(|b| b + t * 3 + phase)
    }

    pub fn soc(&self, bus: usize, t: usize, phase: usize) -> Option<usize> {
        self.soc0[bus].map(|b| b + t * 3 + phase)
    }

    pub fn eta(&self) -> usize {
        self.eta
    }

    /// Looks up the column owned by `sym`.
    pub fn column(&self, sym: Symbol) -> Option<usize> {
        let in_range = |bus: usize, t: usize, phase: usize, tmax: usize| bus < self.n_buses && t < tmax && phase < 3;
        match sym {
            Symbol::Size { bus } => (bus < self.n_buses).then(|| self.x(bus)),
            Symbol::InjRe { bus, t, phase } => in_range(bus, t, phase, self.horizon).then(|| self.s_re(bus, t, phase)),
            Symbol::InjIm { bus, t, phase } => in_range(bus, t, phase, self.horizon).then(|| self.s_im(bus, t, phase)),
            Symbol::Dispatch { bus, t, phase } => {
                if in_range(bus, t, phase, self.horizon) {
                    self.dispatch(bus, t, phase)
                } else {
                    None
                }
            }
            Symbol::Soc { bus, t, phase } => {
                if in_range(bus, t, phase, self.horizon + 1) {
                    self.soc(bus, t, phase)
                } else {
                    None
                }
            }
            Symbol::Voltage { bus, t } => in_range(bus, t, 0, self.horizon).then(|| self.v(bus, t)),
            Symbol::Epigraph => Some(self.eta),
        }
    }
}

// ---------------------------------------------------------------------------
// Affine expressions

/// Real affine expression over LP columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn var(col: usize) -> Self {
        LinExpr { terms: vec![(col, 1.0)], constant: 0.0 }
    }

    pub fn add_scaled(&mut self, other: &LinExpr, k: f64) {
        if k == 0.0 {
            return;
        }
        self.terms.extend(other.terms.iter().map(|&(j, v)| (j, v * k)));
        self.constant += other.constant * k;
    }

    pub fn scaled(&self, k: f64) -> LinExpr {
        let mut e = LinExpr::default();
        e.add_scaled(self, k);
        e
    }

    /// Sorted, merged terms with negligible coefficients removed.
    pub fn compact(&self, rel_tol: f64) -> LinExpr {
        let mut t = self.terms.clone();
        t.sort_by_key(|e| e.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(t.len());
        for (j, v) in t {
            match out.last_mut() {
                Some(last) if last.0 == j => last.1 += v,
                _ => out.push((j, v)),
            }
        }
        let scale = out.iter().fold(0.0f64, |m, e| m.max(e.1.abs()));
        out.retain(|e| e.1.abs() > rel_tol * scale);
        LinExpr { terms: out, constant: self.constant }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(j, v)| v * x[j]).sum::<f64>()
    }
}

/// Complex affine expression `re + i im`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CExpr {
    pub re: LinExpr,
    pub im: LinExpr,
}

impl CExpr {
    /// `self += k * other`
    pub fn add_mul(&mut self, other: &CExpr, k: Complex64) {
        self.re.add_scaled(&other.re, k.re);
        self.re.add_scaled(&other.im, -k.im);
        self.im.add_scaled(&other.im, k.re);
        self.im.add_scaled(&other.re, k.im);
    }

    pub fn conj(&self) -> CExpr {
        CExpr { re: self.re.clone(), im: self.im.scaled(-1.0) }
    }

    pub fn eval(&self, x: &[f64]) -> Complex64 {
        Complex64::new(self.re.eval(x), self.im.eval(x))
    }
}

/// 3x3 matrix of complex affine expressions, row major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CMatExpr(pub [[CExpr; 3]; 3]);

impl CMatExpr {
    /// `K * self` for a constant matrix `K`.
    pub fn left_mul(&self, k: &Matrix3C) -> CMatExpr {
        let mut out = CMatExpr::default();
        for p in 0..3 {
            for q in 0..3 {
                for r in 0..3 {
                    out.0[p][q].add_mul(&self.0[r][q], k[(p, r)]);
                }
            }
        }
        out
    }

    /// `self * K` for a constant matrix `K`.
    pub fn right_mul(&self, k: &Matrix3C) -> CMatExpr {
        let mut out = CMatExpr::default();
        for p in 0..3 {
            for q in 0..3 {
                for r in 0..3 {
                    out.0[p][q].add_mul(&self.0[p][r], k[(r, q)]);
                }
            }
        }
        out
    }

    pub fn adjoint(&self) -> CMatExpr {
        let mut out = CMatExpr::default();
        for p in 0..3 {
            for q in 0..3 {
                out.0[p][q] = self.0[q][p].conj();
            }
        }
        out
    }

    pub fn add(&self, other: &CMatExpr) -> CMatExpr {
        let mut out = self.clone();
        for p in 0..3 {
            for q in 0..3 {
                out.0[p][q].add_mul(&other.0[p][q], Complex64::new(1.0, 0.0));
            }
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> Matrix3C {
        Matrix3C::from_fn(|p, q| self.0[p][q].eval(x))
    }
}

// ---------------------------------------------------------------------------
// Rows

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowLabel {
    PowerBalance,
    VoltageImpedance,
    VoltageAdmittance,
    VoltageReference,
    InjectionBounds,
    VoltageBounds,
    FlowCap,
    InjectionComposition,
    DispatchBounds,
    SocDynamics,
    SocInitial,
    SocCapacity,
    Epigraph,
}

impl RowLabel {
    pub const ALL: [RowLabel; 13] = [
        RowLabel::PowerBalance,
        RowLabel::VoltageImpedance,
        RowLabel::VoltageAdmittance,
        RowLabel::VoltageReference,
        RowLabel::InjectionBounds,
        RowLabel::VoltageBounds,
        RowLabel::FlowCap,
        RowLabel::InjectionComposition,
        RowLabel::DispatchBounds,
        RowLabel::SocDynamics,
        RowLabel::SocInitial,
        RowLabel::SocCapacity,
        RowLabel::Epigraph,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RowLabel::PowerBalance => "power_balance",
            RowLabel::VoltageImpedance => "voltage_impedance",
            RowLabel::VoltageAdmittance => "voltage_admittance",
            RowLabel::VoltageReference => "voltage_reference",
            RowLabel::InjectionBounds => "injection_bounds",
            RowLabel::VoltageBounds => "voltage_bounds",
            RowLabel::FlowCap => "flow_cap",
            RowLabel::InjectionComposition => "injection_composition",
            RowLabel::DispatchBounds => "dispatch_bounds",
            RowLabel::SocDynamics => "soc_dynamics",
            RowLabel::SocInitial => "soc_initial",
            RowLabel::SocCapacity => "soc_capacity",
            RowLabel::Epigraph => "epigraph",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Eq,
    Le,
}

impl Relation {
    pub fn symbol(&self) -> &'static str {
        match self {
            Relation::Eq => "=",
            Relation::Le => "<=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub coefs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
    pub label: RowLabel,
}

const COEF_REL_TOL: f64 = 1e-13;

impl ConstraintRow {
    /// Builds `expr (rel) 0`, moving the constant to the right-hand side.
    /// Returns `None` for an identically zero expression.
    pub fn from_expr(expr: &LinExpr, relation: Relation, label: RowLabel) -> Option<ConstraintRow> {
        let e = expr.compact(COEF_REL_TOL);
        if e.terms.is_empty() {
            return None;
        }
        Some(ConstraintRow { coefs: e.terms, relation, rhs: -e.constant, label })
    }

    fn new(coefs: Vec<(usize, f64)>, relation: Relation, rhs: f64, label: RowLabel) -> ConstraintRow {
        ConstraintRow { coefs, relation, rhs, label }
    }

    /// Row activity minus right-hand side (`<= 0` or `= 0` when satisfied).
    pub fn residual(&self, x: &[f64]) -> f64 {
        self.coefs.iter().map(|&(j, v)| v * x[j]).sum::<f64>() - self.rhs
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearConstraintSystem {
    pub rows: Vec<ConstraintRow>,
}

impl LinearConstraintSystem {
    pub fn extend(&mut self, rows: Vec<ConstraintRow>) -> std::ops::Range<usize> {
        let start = self.rows.len();
        self.rows.extend(rows);
        start..self.rows.len()
    }

    pub fn count(&self, label: RowLabel) -> usize {
        self.rows.iter().filter(|r| r.label == label).count()
    }

    /// Largest violation over all rows.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|r| match r.relation {
                Relation::Eq => r.residual(x).abs(),
                Relation::Le => r.residual(x).max(0.0),
            })
            .fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Topology cache

/// Rooted tree plus the subtree and path sets used by the flow expressions.
#[derive(Debug, Clone)]
pub struct Topology {
    pub tree: RootedTree,
    pub subtrees: Vec<Vec<usize>>,
    pub paths: Vec<Vec<usize>>,
}

impl Topology {
    pub fn new(network: &Network) -> Result<Topology, AssemblyError> {
        let tree = validate_radial(network)?;
        let n = network.n_buses();
        let subtrees = (0..n).map(|j| subtree(&tree, j)).collect::<Result<Vec<_>, _>>()?;
        let paths = (0..n).map(|j| path_to_root(&tree, j)).collect::<Result<Vec<_>, _>>()?;
        Ok(Topology { tree, subtrees, paths })
    }
}

// ---------------------------------------------------------------------------
// Row generators

/// Six rows: real and imaginary parts of the per-phase injections sum to zero.
pub fn assemble_power_balance(network: &Network, vm: &VariableMap, t: usize) -> Vec<ConstraintRow> {
    let n = network.n_buses();
    let mut rows = Vec::with_capacity(6);
    for phase in 0..3 {
        rows.push(ConstraintRow::new(
            (0..n).map(|j| (vm.s_re(j, t, phase), 1.0)).collect(),
            Relation::Eq,
            0.0,
            RowLabel::PowerBalance,
        ));
    }
    for phase in 0..3 {
        rows.push(ConstraintRow::new(
            (0..n).map(|j| (vm.s_im(j, t, phase), 1.0)).collect(),
            Relation::Eq,
            0.0,
            RowLabel::PowerBalance,
        ));
    }
    rows
}

/// Per-phase flow on the line entering bus `to`: minus the injections of
/// the subtree below it.
pub fn subtree_flow_expr(topo: &Topology, vm: &VariableMap, to: usize, t: usize) -> [CExpr; 3] {
    let mut lambda: [CExpr; 3] = Default::default();
    for (phase, l) in lambda.iter_mut().enumerate() {
        for &k in &topo.subtrees[to] {
            l.re.terms.push((vm.s_re(k, t, phase), -1.0));
            l.im.terms.push((vm.s_im(k, t, phase), -1.0));
        }
    }
    lambda
}

/// `gamma * diag(lambda)`: column `q` is gamma's column `q` times `lambda_q`.
pub fn flow_matrix_expr(lambda: &[CExpr; 3]) -> CMatExpr {
    let g = gamma_matrix();
    let mut s = CMatExpr::default();
    for p in 0..3 {
        for q in 0..3 {
            s.0[p][q].add_mul(&lambda[q], g[(p, q)]);
        }
    }
    s
}

/// Balanced phase matrix `A = gamma`.
fn phase_matrix() -> Matrix3C {
    gamma_matrix()
}

/// Coefficient of the projection of a Hermitian matrix onto `A`:
/// `<A, M> / <A, A>` with the Frobenius inner product.
fn project_on_phase(m: &CMatExpr) -> LinExpr {
    let a = phase_matrix();
    let mut acc = CExpr::default();
    for p in 0..3 {
        for q in 0..3 {
            acc.add_mul(&m.0[p][q], a[(p, q)].conj() / 9.0);
        }
    }
    acc.re
}

/// `z S^H + S z^H` for constant `z`.
pub fn impedance_drop_expr(z: &Matrix3C, s: &CMatExpr) -> CMatExpr {
    s.adjoint().left_mul(z).add(&s.right_mul(&z.adjoint()))
}

/// `S^H y^H + y S` for constant `y`.
pub fn admittance_flow_expr(y: &Matrix3C, s: &CMatExpr) -> CMatExpr {
    s.adjoint().right_mul(&y.adjoint()).add(&s.left_mul(y))
}

/// Residual `v_from - v_to - (z S^H + S z^H)` of the impedance relation.
pub fn impedance_relation(z: &Matrix3C, v_from: &Matrix3C, v_to: &Matrix3C, s: &Matrix3C) -> Matrix3C {
    v_from - v_to - (z * s.adjoint() + s * z.adjoint())
}

/// Residual `y (v_from - v_to) y^H - (S^H y^H + y S)` of the admittance relation.
pub fn admittance_relation(y: &Matrix3C, v_from: &Matrix3C, v_to: &Matrix3C, s: &Matrix3C) -> Matrix3C {
    y * (v_from - v_to) * y.adjoint() - (s.adjoint() * y.adjoint() + y * s)
}

fn line_impedance(network: &Network, line: usize, tol: f64) -> Result<Matrix3C, AssemblyError> {
    let l = &network.lines[line];
    if !is_invertible(&l.y_fwd, tol) {
        return Err(AssemblyError::SingularImpedance { line, from: l.from, to: l.to });
    }
    invert(&l.y_fwd).ok_or(AssemblyError::SingularImpedance { line, from: l.from, to: l.to })
}

/// Projected impedance drop of one line, as an affine expression in the
/// injections.
fn line_drop(topo: &Topology, vm: &VariableMap, network: &Network, line: usize, t: usize, z: &Matrix3C) -> LinExpr {
    let to = network.lines[line].to;
    let s = flow_matrix_expr(&subtree_flow_expr(topo, vm, to, t));
    project_on_phase(&impedance_drop_expr(z, &s))
}

/// One row per non-slack bus: `v_0 - v_j` equals the summed, projected
/// impedance drops along the path from the slack bus.
pub fn assemble_voltage_impedance(
    network: &Network,
    topo: &Topology,
    vm: &VariableMap,
    t: usize,
    tol: f64,
) -> Result<Vec<ConstraintRow>, AssemblyError> {
    let n = network.n_buses();
    let z: Vec<Option<Matrix3C>> =
        (0..network.lines.len()).map(|l| line_impedance(network, l, tol).map(Some)).collect::<Result<_, _>>()?;
    let mut rows = Vec::with_capacity(n - 1);
    for j in 1..n {
        let mut e = LinExpr::var(vm.v(0, t));
        e.add_scaled(&LinExpr::var(vm.v(j, t)), -1.0);
        for &l in &topo.paths[j] {
            let drop = line_drop(topo, vm, network, l, t, z[l].as_ref().unwrap());
            e.add_scaled(&drop, -1.0);
        }
        rows.extend(ConstraintRow::from_expr(&e, Relation::Eq, RowLabel::VoltageImpedance));
    }
    Ok(rows)
}

/// Single-line impedance row `v_from - v_to = proj(z S^H + S z^H)`.
fn impedance_line_row(
    network: &Network,
    topo: &Topology,
    vm: &VariableMap,
    line: usize,
    t: usize,
    tol: f64,
) -> Result<Option<ConstraintRow>, AssemblyError> {
    let z = line_impedance(network, line, tol)?;
    let l = &network.lines[line];
    let mut e = LinExpr::var(vm.v(l.from, t));
    e.add_scaled(&LinExpr::var(vm.v(l.to, t)), -1.0);
    e.add_scaled(&line_drop(topo, vm, network, line, t, &z), -1.0);
    Ok(ConstraintRow::from_expr(&e, Relation::Eq, RowLabel::VoltageImpedance))
}

/// Nine real rows per direction of one line; identically zero rows (from
/// a singular admittance) are dropped.
fn admittance_line_rows(
    network: &Network,
    topo: &Topology,
    vm: &VariableMap,
    line: usize,
    t: usize,
) -> Vec<ConstraintRow> {
    let l = &network.lines[line];
    let lambda = subtree_flow_expr(topo, vm, l.to, t);
    let neg: [CExpr; 3] =
        std::array::from_fn(|p| CExpr { re: lambda[p].re.scaled(-1.0), im: lambda[p].im.scaled(-1.0) });
    let a = phase_matrix();
    let mut rows = Vec::with_capacity(18);
    for (y, lam, from, to) in [(&l.y_fwd, &lambda, l.from, l.to), (&l.y_rev, &neg, l.to, l.from)] {
        let s = flow_matrix_expr(lam);
        let rhs = admittance_flow_expr(y, &s);
        let b = y * a * y.adjoint();
        for p in 0..3 {
            for q in p..3 {
                let parts: &[bool] = if p == q { &[true] } else { &[true, false] };
                for &real in parts {
                    let bpq = if real { b[(p, q)].re } else { b[(p, q)].im };
                    let mut e = LinExpr::default();
                    e.terms.push((vm.v(from, t), bpq));
                    e.terms.push((vm.v(to, t), -bpq));
                    let m = &rhs.0[p][q];
                    e.add_scaled(if real { &m.re } else { &m.im }, -1.0);
                    rows.extend(ConstraintRow::from_expr(&e, Relation::Eq, RowLabel::VoltageAdmittance));
                }
            }
        }
    }
    rows
}

/// Admittance-form rows for every line.
pub fn assemble_voltage_admittance(
    network: &Network,
    topo: &Topology,
    vm: &VariableMap,
    t: usize,
) -> Vec<ConstraintRow> {
    (0..network.lines.len()).flat_map(|l| admittance_line_rows(network, topo, vm, l, t)).collect()
}

/// Voltage relations under the configured mode, plus the slack reference.
pub fn assemble_voltage(
    network: &Network,
    topo: &Topology,
    vm: &VariableMap,
    config: &ModelConfig,
    t: usize,
) -> Result<Vec<ConstraintRow>, AssemblyError> {
    let mut rows =
        vec![ConstraintRow::new(vec![(vm.v(0, t), 1.0)], Relation::Eq, config.v_ref, RowLabel::VoltageReference)];
    match config.voltage_mode {
        VoltageMode::Impedance => {
            rows.extend(assemble_voltage_impedance(network, topo, vm, t, config.invertibility_tol)?)
        }
        VoltageMode::Admittance => rows.extend(assemble_voltage_admittance(network, topo, vm, t)),
        VoltageMode::Auto => {
            for (l, line) in network.lines.iter().enumerate() {
                if is_invertible(&line.y_fwd, config.invertibility_tol) {
                    rows.extend(impedance_line_row(network, topo, vm, l, t, config.invertibility_tol)?);
                } else {
                    rows.extend(admittance_line_rows(network, topo, vm, l, t));
                }
            }
        }
    }
    Ok(rows)
}

/// Injection and voltage boxes as rows, plus optional line-flow caps.
pub fn assemble_operational_bounds(
    network: &Network,
    topo: &Topology,
    vm: &VariableMap,
    t: usize,
) -> Result<Vec<ConstraintRow>, AssemblyError> {
    let mut rows = Vec::new();
    for bus in &network.buses {
        let j = bus.id;
        for p in 0..3 {
            let (lo, hi) = (bus.s_min.0[p], bus.s_max.0[p]);
            if lo.re > hi.re || lo.im > hi.im {
                return Err(AssemblyError::InvalidBounds(format!("bus {j} phase {p}: s_min > s_max")));
            }
            rows.push(ConstraintRow::new(
                vec![(vm.s_re(j, t, p), 1.0)],
                Relation::Le,
                hi.re,
                RowLabel::InjectionBounds,
            ));
            rows.push(ConstraintRow::new(
                vec![(vm.s_re(j, t, p), -1.0)],
                Relation::Le,
                -lo.re,
                RowLabel::InjectionBounds,
            ));
            rows.push(ConstraintRow::new(
                vec![(vm.s_im(j, t, p), 1.0)],
                Relation::Le,
                hi.im,
                RowLabel::InjectionBounds,
            ));
            rows.push(ConstraintRow::new(
                vec![(vm.s_im(j, t, p), -1.0)],
                Relation::Le,
                -lo.im,
                RowLabel::InjectionBounds,
            ));
        }
        if !(bus.v_min > 0.0 && bus.v_min <= bus.v_max) {
            return Err(AssemblyError::InvalidBounds(format!(
                "bus {j}: voltage bounds [{}, {}]",
                bus.v_min, bus.v_max
            )));
        }
        rows.push(ConstraintRow::new(vec![(vm.v(j, t), 1.0)], Relation::Le, bus.v_max, RowLabel::VoltageBounds));
        rows.push(ConstraintRow::new(vec![(vm.v(j, t), -1.0)], Relation::Le, -bus.v_min, RowLabel::VoltageBounds));
    }
    for line in &network.lines {
        let Some(cap) = line.flow_cap else { continue };
        if !(cap >= 0.0) {
            return Err(AssemblyError::InvalidBounds(format!("line {}->{}: negative flow cap", line.from, line.to)));
        }
        let lambda = subtree_flow_expr(topo, vm, line.to, t);
        for l in &lambda {
            for sign in [1.0, -1.0] {
                let mut e = l.re.scaled(sign);
                e.constant -= cap;
                rows.extend(ConstraintRow::from_expr(&e, Relation::Le, RowLabel::FlowCap));
            }
        }
    }
    Ok(rows)
}

/// Storage and injection composition rows for one step. `load_rhs[j]` is
/// the signed load (demand negative) of bus `j` at this step.
pub fn assemble_der_step(
    network: &Network,
    vm: &VariableMap,
    config: &ModelConfig,
    load_rhs: &[Complex3],
    t: usize,
) -> Vec<ConstraintRow> {
    let mut rows = Vec::new();
    for bus in network.buses.iter().filter(|b| b.kind == BusKind::Load) {
        let j = bus.id;
        let pv = bus.pv_at(t).re();
        let load = load_rhs[j].re();
        for p in 0..3 {
            let d = vm.dispatch(j, t, p).expect("load buses carry dispatch columns");
            rows.push(ConstraintRow::new(
                vec![(vm.s_re(j, t, p), 1.0), (d, -1.0)],
                Relation::Eq,
                pv[p] + load[p],
                RowLabel::InjectionComposition,
            ));
        }
        for p in 0..3 {
            let d = vm.dispatch(j, t, p).unwrap();
            rows.push(ConstraintRow::new(vec![(d, 1.0)], Relation::Le, config.dispatch_max, RowLabel::DispatchBounds));
            rows.push(ConstraintRow::new(
                vec![(d, -1.0)],
                Relation::Le,
                -config.dispatch_min,
                RowLabel::DispatchBounds,
            ));
        }
        for p in 0..3 {
            let d = vm.dispatch(j, t, p).unwrap();
            let (s0, s1) = (vm.soc(j, t, p).unwrap(), vm.soc(j, t + 1, p).unwrap());
            rows.push(ConstraintRow::new(
                vec![(s1, 1.0), (s0, -1.0), (d, -1.0)],
                Relation::Eq,
                0.0,
                RowLabel::SocDynamics,
            ));
        }
    }
    rows
}

/// Initial-state and capacity rows of every storage unit.
pub fn assemble_soc_limits(network: &Network, vm: &VariableMap, config: &ModelConfig) -> Vec<ConstraintRow> {
    let mut rows = Vec::new();
    for bus in network.buses.iter().filter(|b| b.kind == BusKind::Load) {
        let j = bus.id;
        for p in 0..3 {
            rows.push(ConstraintRow::new(
                vec![(vm.soc(j, 0, p).unwrap(), 1.0)],
                Relation::Eq,
                0.0,
                RowLabel::SocInitial,
            ));
        }
        for t in 0..=vm.horizon() {
            for p in 0..3 {
                let s = vm.soc(j, t, p).unwrap();
                let mut hi = vec![(s, 1.0)];
                if config.soc_max != 0.0 {
                    hi.push((vm.x(j), -config.soc_max));
                }
                rows.push(ConstraintRow::new(hi, Relation::Le, 0.0, RowLabel::SocCapacity));
                let mut lo = vec![(s, -1.0)];
                if config.soc_min != 0.0 {
                    lo.push((vm.x(j), config.soc_min));
                }
                rows.push(ConstraintRow::new(lo, Relation::Le, 0.0, RowLabel::SocCapacity));
            }
        }
    }
    rows
}

/// All storage rows over the horizon.
pub fn assemble_der(
    network: &Network,
    vm: &VariableMap,
    config: &ModelConfig,
    load_rhs: &[Vec<Complex3>],
) -> Result<Vec<ConstraintRow>, AssemblyError> {
    check_loads(network, vm.horizon(), load_rhs)?;
    let mut rows = Vec::new();
    for t in 0..vm.horizon() {
        let step: Vec<Complex3> = load_rhs.iter().map(|l| l[t]).collect();
        rows.extend(assemble_der_step(network, vm, config, &step, t));
    }
    rows.extend(assemble_soc_limits(network, vm, config));
    Ok(rows)
}

fn check_loads(network: &Network, horizon: usize, load_rhs: &[Vec<Complex3>]) -> Result<(), AssemblyError> {
    if load_rhs.len() != network.n_buses() {
        return Err(AssemblyError::HorizonMismatch {
            what: "load buses".into(),
            expected: network.n_buses(),
            found: load_rhs.len(),
        });
    }
    for (j, l) in load_rhs.iter().enumerate() {
        if l.len() != horizon {
            return Err(AssemblyError::HorizonMismatch {
                what: format!("load of bus {j}"),
                expected: horizon,
                found: l.len(),
            });
        }
        if l.iter().any(|c| !c.is_finite()) {
            return Err(AssemblyError::NonFinite(format!("load of bus {j}")));
        }
    }
    for bus in &network.buses {
        if !bus.pv_profile.is_empty() && bus.pv_profile.len() < horizon {
            return Err(AssemblyError::HorizonMismatch {
                what: format!("pv profile of bus {}", bus.id),
                expected: horizon,
                found: bus.pv_profile.len(),
            });
        }
    }
    Ok(())
}

/// Objective `c^T x + eta` and the epigraph row
/// `sum_t price_t . Re(s_0^t) - eta <= 0`.
pub fn assemble_objective(
    network: &Network,
    vm: &VariableMap,
    price: &[[f64; 3]],
) -> Result<(Vec<f64>, ConstraintRow), AssemblyError> {
    if price.len() != vm.horizon() {
        return Err(AssemblyError::HorizonMismatch {
            what: "price".into(),
            expected: vm.horizon(),
            found: price.len(),
        });
    }
    if price.iter().flatten().any(|p| !p.is_finite()) {
        return Err(AssemblyError::NonFinite("price".into()));
    }
    let mut c = vec![0.0; vm.n_cols()];
    for bus in &network.buses {
        c[vm.x(bus.id)] = bus.bess_cost;
    }
    c[vm.eta()] = 1.0;
    let mut coefs: Vec<(usize, f64)> = Vec::with_capacity(3 * price.len() + 1);
    for (t, pt) in price.iter().enumerate() {
        for (p, &v) in pt.iter().enumerate() {
            // keep zero prices as explicit entries so they can be perturbed
            coefs.push((vm.s_re(0, t, p), v));
        }
    }
    coefs.push((vm.eta(), -1.0));
    Ok((c, ConstraintRow { coefs, relation: Relation::Le, rhs: 0.0, label: RowLabel::Epigraph }))
}

// ---------------------------------------------------------------------------
// Whole program

/// Where a constraint row landed in the solver's standard form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSlot {
    Eq(usize),
    In(usize),
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub lp: StandardLp,
    pub system: LinearConstraintSystem,
    pub varmap: VariableMap,
    pub slots: Vec<RowSlot>,
    /// System row of the epigraph constraint.
    pub epigraph_row: usize,
    /// System row of each `(bus, t, phase)` composition equation; empty for
    /// the slack bus.
    pub composition_rows: Vec<Vec<[usize; 3]>>,
}

/// Assembles the full planning LP for given per-step prices and signed
/// per-bus loads.
pub fn build_program(
    network: &Network,
    config: &ModelConfig,
    price: &[[f64; 3]],
    load_rhs: &[Vec<Complex3>],
) -> Result<LinearProgram, AssemblyError> {
    config.validate()?;
    let topo = Topology::new(network)?;
    let horizon = config.horizon;
    let vm = VariableMap::new(network.n_buses(), horizon);
    check_loads(network, horizon, load_rhs)?;

    let mut system = LinearConstraintSystem::default();
    let mut composition_rows = vec![Vec::new(); network.n_buses()];
    for t in 0..horizon {
        system.extend(assemble_power_balance(network, &vm, t));
        system.extend(assemble_voltage(network, &topo, &vm, config, t)?);
        system.extend(assemble_operational_bounds(network, &topo, &vm, t)?);
        let step: Vec<Complex3> = load_rhs.iter().map(|l| l[t]).collect();
        let range = system.extend(assemble_der_step(network, &vm, config, &step, t));
        let comp: Vec<usize> = range.filter(|&r| system.rows[r].label == RowLabel::InjectionComposition).collect();
        for (k, bus) in network.buses.iter().filter(|b| b.kind == BusKind::Load).enumerate() {
            composition_rows[bus.id].push([comp[3 * k], comp[3 * k + 1], comp[3 * k + 2]]);
        }
    }
    system.extend(assemble_soc_limits(network, &vm, config));
    let (c, epi) = assemble_objective(network, &vm, price)?;
    let epigraph_row = system.rows.len();
    system.rows.push(epi);

    let n = vm.n_cols();
    let mut lower = vec![f64::NEG_INFINITY; n];
    let mut upper = vec![f64::INFINITY; n];
    for bus in &network.buses {
        let col = vm.x(bus.id);
        lower[col] = 0.0;
        upper[col] = if bus.bess_candidate && bus.kind == BusKind::Load { config.x_max } else { 0.0 };
    }

    let mut a_eq = CsrMatrix::empty(n);
    let mut a_in = CsrMatrix::empty(n);
    let (mut b_eq, mut b_in) = (Vec::new(), Vec::new());
    let mut slots = Vec::with_capacity(system.rows.len());
    for row in &system.rows {
        match row.relation {
            Relation::Eq => {
                slots.push(RowSlot::Eq(b_eq.len()));
                a_eq.push_row(&row.coefs);
                b_eq.push(row.rhs);
            }
            Relation::Le => {
                slots.push(RowSlot::In(b_in.len()));
                a_in.push_row(&row.coefs);
                b_in.push(row.rhs);
            }
        }
    }
    let lp = StandardLp { c, offset: 0.0, a_eq, b_eq, a_in, b_in, lower, upper };
    Ok(LinearProgram { lp, system, varmap: vm, slots, epigraph_row, composition_rows })
}

/// Optimal plan read back from a solve.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanSolution {
    pub objective: f64,
    /// Installed size per bus.
    pub x: Vec<f64>,
    /// Per-step slack injection (procurement).
    pub s0: Vec<Complex3>,
    /// Per-bus, per-step net injection.
    pub injection: Vec<Vec<Complex3>>,
    /// Per-bus, per-step real dispatch (zero at the slack bus).
    pub dispatch: Vec<Vec<[f64; 3]>>,
    /// Per-bus state of charge over `0..=horizon`.
    pub soc: Vec<Vec<[f64; 3]>>,
    /// Per-bus, per-step squared voltage scalar.
    pub v: Vec<Vec<f64>>,
    pub eta: f64,
    /// Multiplier of each constraint row, signed so that it is the
    /// derivative of the optimal value with respect to the row's rhs.
    pub row_duals: Vec<f64>,
}

impl PlanSolution {
    /// Sites whose installed size exceeds the reporting threshold.
    pub fn sited(&self, threshold: f64) -> Vec<usize> {
        (0..self.x.len()).filter(|&j| self.x[j] > threshold).collect()
    }
}

/// Reporting threshold separating "no installation" from a real site.
pub const SITING_THRESHOLD: f64 = 1e-4;

impl LinearProgram {
    pub fn row_dual(&self, result: &SolveResult, row: usize) -> f64 {
        match self.slots[row] {
            RowSlot::Eq(i) => result.y_eq[i],
            RowSlot::In(i) => -result.y_in[i],
        }
    }

    pub fn extract(&self, result: &SolveResult) -> PlanSolution {
        let vm = &self.varmap;
        let x = &result.x;
        let n = vm.n_buses();
        let h = vm.horizon();
        let c3 = |j: usize, t: usize| {
            Complex3::from_re_im(
                [x[vm.s_re(j, t, 0)], x[vm.s_re(j, t, 1)], x[vm.s_re(j, t, 2)]],
                [x[vm.s_im(j, t, 0)], x[vm.s_im(j, t, 1)], x[vm.s_im(j, t, 2)]],
            )
        };
        let injection: Vec<Vec<Complex3>> = (0..n).map(|j| (0..h).map(|t| c3(j, t)).collect()).collect();
        let dispatch = (0..n)
            .map(|j| (0..h).map(|t| std::array::from_fn(|p| vm.dispatch(j, t, p).map_or(0.0, |c| x[c]))).collect())
            .collect();
        let soc = (0..n)
            .map(|j| (0..=h).map(|t| std::array::from_fn(|p| vm.soc(j, t, p).map_or(0.0, |c| x[c]))).collect())
            .collect();
        PlanSolution {
            objective: result.objective,
            x: (0..n).map(|j| x[vm.x(j)]).collect(),
            s0: injection[0].clone(),
            injection,
            dispatch,
            soc,
            v: (0..n).map(|j| (0..h).map(|t| x[vm.v(j, t)]).collect()).collect(),
            eta: x[vm.eta()],
            row_duals: (0..self.system.rows.len()).map(|r| self.row_dual(result, r)).collect(),
        }
    }

    /// Text dump: one constraint per line (`label relation rhs col:coef ...`)
    /// followed by objective and bound lines.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let vm = &self.varmap;
        let _ = write!(out, "objective min");
        for (j, &c) in self.lp.c.iter().enumerate() {
            if c != 0.0 {
                let _ = write!(out, " {}:{:e}", vm.owner(j), c);
            }
        }
        out.push('\n');
        for row in &self.system.rows {
            let _ = write!(out, "{} {} {:e}", row.label.as_str(), row.relation.symbol(), row.rhs);
            for &(j, v) in &row.coefs {
                let _ = write!(out, " {}:{:e}", vm.owner(j), v);
            }
            out.push('\n');
        }
        for j in 0..vm.n_cols() {
            let (l, u) = (self.lp.lower[j], self.lp.upper[j]);
            if l.is_finite() || u.is_finite() {
                let _ = writeln!(out, "bound {} {:e} {:e}", vm.owner(j), l, u);
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Post-solve physics checks

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhysicsReport {
    /// Largest per-phase imbalance of summed injections.
    pub power_balance: f64,
    /// Largest gap between SOC and the running sum of dispatch.
    pub soc_telescoping: f64,
    /// Largest excursion of SOC outside its size-scaled box.
    pub soc_bounds: f64,
    /// Largest excursion of any squared voltage outside its bus box.
    pub voltage_bounds: f64,
}

pub fn check_physics(network: &Network, config: &ModelConfig, sol: &PlanSolution) -> PhysicsReport {
    let n = network.n_buses();
    let h = sol.s0.len();
    let mut r = PhysicsReport::default();
    for t in 0..h {
        for p in 0..3 {
            let sum: Complex64 = (0..n).map(|j| sol.injection[j][t].0[p]).sum();
            r.power_balance = r.power_balance.max(sum.re.abs()).max(sum.im.abs());
        }
        for bus in &network.buses {
            let v = sol.v[bus.id][t];
            r.voltage_bounds = r.voltage_bounds.max(bus.v_min - v).max(v - bus.v_max);
        }
    }
    for bus in network.buses.iter().filter(|b| b.kind == BusKind::Load) {
        let j = bus.id;
        for p in 0..3 {
            let mut acc = 0.0;
            for t in 0..=h {
                let s = sol.soc[j][t][p];
                r.soc_telescoping = r.soc_telescoping.max((s - acc).abs());
                r.soc_bounds = r.soc_bounds.max(config.soc_min * sol.x[j] - s).max(s - config.soc_max * sol.x[j]);
                if t < h {
                    acc += sol.dispatch[j][t][p];
                }
            }
        }
    }
    r.voltage_bounds = r.voltage_bounds.max(0.0);
    r.soc_bounds = r.soc_bounds.max(0.0);
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{alpha_plus, balanced_outer, BaseQuantities, Bus, Line};

    fn bus(id: usize) -> Bus {
        Bus {
            id,
            kind: if id == 0 { BusKind::Slack } else { BusKind::Load },
            s_min: Complex3::from_re_im([-10.0; 3], [-10.0; 3]),
            s_max: Complex3::from_re_im([10.0; 3], [10.0; 3]),
            v_min: 0.81,
            v_max: 1.21,
            pv_profile: vec![],
            bess_cost: 0.0,
            bess_candidate: false,
        }
    }

    fn line(from: usize, to: usize, y: Matrix3C) -> Line {
        Line { from, to, y_fwd: y, y_rev: y, is_transformer: false, flow_cap: None }
    }

    fn sample_y() -> Matrix3C {
        let c = |re, im| Complex64::new(re, im);
        Matrix3C::new(
            c(3.0, -9.0),
            c(-0.8, 2.0),
            c(-0.7, 1.9),
            c(-0.8, 2.0),
            c(3.1, -9.2),
            c(-0.75, 2.1),
            c(-0.7, 1.9),
            c(-0.75, 2.1),
            c(2.9, -8.8),
        )
    }

    /// Phase-symmetric admittance: `a+` is an eigenvector.
    fn symmetric_y() -> Matrix3C {
        let (d, o) = (Complex64::new(3.0, -9.0), Complex64::new(-0.8, 2.0));
        Matrix3C::from_fn(|p, q| if p == q { d } else { o })
    }

    fn chain(n: usize) -> Network {
        let buses = (0..n).map(bus).collect();
        let lines = (1..n).map(|j| line(j - 1, j, sample_y())).collect();
        Network::new(BaseQuantities::default(), buses, lines).unwrap()
    }

    fn star(leaves: usize) -> Network {
        // 0 -> 1 (hub) -> 2..
        let n = leaves + 2;
        let buses = (0..n).map(bus).collect();
        let mut lines = vec![line(0, 1, sample_y())];
        lines.extend((2..n).map(|j| line(1, j, sample_y())));
        Network::new(BaseQuantities::default(), buses, lines).unwrap()
    }

    fn cols(e: &LinExpr) -> Vec<usize> {
        e.compact(0.0).terms.iter().map(|t| t.0).collect()
    }

    #[test]
    fn subtree_flow_examples() {
        let net = chain(3);
        let topo = Topology::new(&net).unwrap();
        let vm = VariableMap::new(3, 1);
        let leaf = subtree_flow_expr(&topo, &vm, 2, 0);
        assert_eq!(leaf[0].re.terms, vec![(vm.s_re(2, 0, 0), -1.0)]);
        let root = subtree_flow_expr(&topo, &vm, 1, 0);
        assert_eq!(cols(&root[1].re), vec![vm.s_re(1, 0, 1), vm.s_re(2, 0, 1)]);

        let net = star(4);
        let topo = Topology::new(&net).unwrap();
        let vm = VariableMap::new(6, 1);
        let hub = subtree_flow_expr(&topo, &vm, 1, 0);
        assert_eq!(hub[2].im.terms.len(), 5);
    }

    #[test]
    fn flow_matrix_examples() {
        // lambda as constants via a single dummy column fixed to 1
        let one = |k: f64| CExpr { re: LinExpr { terms: vec![(0, k)], constant: 0.0 }, im: LinExpr::default() };
        let x = [1.0];
        let g = gamma_matrix();
        let s = flow_matrix_expr(&[one(1.0), one(0.0), one(0.0)]).eval(&x);
        for p in 0..3 {
            assert!((s[(p, 0)] - g[(p, 0)]).norm() < 1e-15);
            assert!(s[(p, 1)].norm() < 1e-15 && s[(p, 2)].norm() < 1e-15);
        }
        let s = flow_matrix_expr(&[one(1.0), one(1.0), one(1.0)]).eval(&x);
        assert!((s - g).norm() < 1e-14);
        let s = flow_matrix_expr(&[one(0.7), one(0.7), one(0.7)]).eval(&x);
        let ap = alpha_plus();
        assert!((s - ap * ap.adjoint() * Complex64::new(0.7, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn zero_flow_gives_flat_voltage() {
        let net = chain(4);
        let topo = Topology::new(&net).unwrap();
        let vm = VariableMap::new(4, 1);
        let rows = assemble_voltage_impedance(&net, &topo, &vm, 0, 1e-9).unwrap();
        let mut x = vec![0.0; vm.n_cols()];
        for j in 0..4 {
            x[vm.v(j, 0)] = 1.0;
        }
        assert!(rows.iter().all(|r| r.residual(&x).abs() < 1e-14));
        let rows = assemble_voltage_admittance(&net, &topo, &vm, 0);
        assert!(rows.iter().all(|r| r.residual(&x).abs() < 1e-14));
    }

    #[test]
    fn single_line_drop_matches_matrix_arithmetic() {
        let mut net = chain(2);
        net.lines[0].y_fwd = symmetric_y();
        net.lines[0].y_rev = symmetric_y();
        let topo = Topology::new(&net).unwrap();
        let vm = VariableMap::new(2, 1);
        let mut x = vec![0.0; vm.n_cols()];
        // balanced consumption at bus 1
        for p in 0..3 {
            x[vm.s_re(1, 0, p)] = -0.3;
            x[vm.s_im(1, 0, p)] = -0.1;
        }
        let z = symmetric_y().try_inverse().unwrap();
        let lambda = Complex64::new(0.3, 0.1);
        let s = gamma_matrix() * Matrix3C::from_diagonal_element(lambda);
        let drop = z * s.adjoint() + s * z.adjoint();
        let a = gamma_matrix();
        let coef = (a.adjoint() * drop).trace().re / 9.0;
        x[vm.v(0, 0)] = 1.0;
        x[vm.v(1, 0)] = 1.0 - coef;
        let rows = assemble_voltage_impedance(&net, &topo, &vm, 0, 1e-9).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].residual(&x).abs() < 1e-13);
        // a balanced flow through a phase-symmetric line has a drop exactly
        // proportional to A, so the admittance rows hold at the same point
        let rows = assemble_voltage_admittance(&net, &topo, &vm, 0);
        for r in &rows {
            assert!(r.residual(&x).abs() < 1e-12, "{r:?}");
        }
        let dv = balanced_outer(1.0).unwrap() - balanced_outer(1.0 - coef).unwrap();
        assert!((dv - drop).norm() < 1e-12);
    }

    #[test]
    fn singular_line_rejected_by_impedance_form() {
        let mut y = sample_y();
        for q in 0..3 {
            y[(2, q)] = Complex64::new(0.0, 0.0);
        }
        let mut net = chain(3);
        net.lines[1].y_fwd = y;
        net.lines[1].is_transformer = true;
        let topo = Topology::new(&net).unwrap();
        let vm = VariableMap::new(3, 1);
        assert!(matches!(
            assemble_voltage_impedance(&net, &topo, &vm, 0, 1e-9),
            Err(AssemblyError::SingularImpedance { line: 1, .. })
        ));
        let rows = assemble_voltage_admittance(&net, &topo, &vm, 0);
        assert!(rows.iter().all(|r| !r.coefs.is_empty()));
        // the zero row of y removes the (2, *) equations of that direction
        assert!(rows.len() < 36);
    }

    #[test]
    fn bound_row_counts() {
        let mut net = chain(3);
        let topo = Topology::new(&net).unwrap();
        let vm = VariableMap::new(3, 1);
        let rows = assemble_operational_bounds(&net, &topo, &vm, 0).unwrap();
        assert_eq!(rows.iter().filter(|r| r.label == RowLabel::VoltageBounds).count(), 6);
        assert_eq!(rows.iter().filter(|r| r.label == RowLabel::FlowCap).count(), 0);
        net.lines[0].flow_cap = Some(1.0);
        let rows = assemble_operational_bounds(&net, &topo, &vm, 0).unwrap();
        assert_eq!(rows.iter().filter(|r| r.label == RowLabel::FlowCap).count(), 6);
    }

    #[test]
    fn epigraph_row_dot_product() {
        let net = chain(2);
        let vm = VariableMap::new(2, 1);
        let (_, row) = assemble_objective(&net, &vm, &[[1.0, 1.0, 1.0]]).unwrap();
        let mut x = vec![0.0; vm.n_cols()];
        x[vm.s_re(0, 0, 0)] = 0.2;
        x[vm.s_re(0, 0, 1)] = 0.3;
        x[vm.s_re(0, 0, 2)] = 0.5;
        x[vm.eta()] = 1.0;
        assert!(row.residual(&x).abs() < 1e-15);
        x[vm.eta()] = 0.99;
        assert!(row.residual(&x) > 0.0);
    }

    #[test]
    fn every_column_has_one_owner() {
        let vm = VariableMap::new(4, 3);
        for col in 0..vm.n_cols() {
            assert_eq!(vm.column(vm.owner(col)), Some(col));
        }
    }
}
