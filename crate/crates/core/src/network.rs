//! Three-phase radial feeder model and topology queries.
//!
//! Quantities are per-unit. Complex powers are injections (generation
//! positive), voltage magnitudes are carried as squares.

use std::collections::VecDeque;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Matrix3C = Matrix3<Complex64>;

/// Relative singular-value tolerance separating a genuinely singular
/// admittance (for example a delta-wye transformer block) from roundoff.
pub const DEFAULT_INVERTIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("network has no buses")]
    Empty,
    #[error("bus ids must be 0..n in order; found id {found} at position {position}")]
    NonContiguousIds { position: usize, found: usize },
    #[error("cycle detected through buses {0:?}")]
    CycleDetected(Vec<usize>),
    #[error("buses {0:?} are not reachable from the slack bus")]
    Disconnected(Vec<usize>),
    #[error("bus 0 must be the unique slack bus; slack buses found: {0:?}")]
    MultipleSlack(Vec<usize>),
    #[error("line {line} ({from}->{to}) points towards the slack bus")]
    ReversedLine { line: usize, from: usize, to: usize },
    #[error("unknown bus {0}")]
    UnknownBus(usize),
    #[error("line {0} connects a bus to itself")]
    SelfLoop(usize),
    #[error("line {0} has an all-zero admittance block")]
    ZeroAdmittance(usize),
    #[error("invalid bounds at bus {bus}: {reason}")]
    InvalidBounds { bus: usize, reason: String },
    #[error("voltage square must be nonnegative, got {0}")]
    NegativeVoltageSquare(f64),
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

/// Per-phase complex quantity (phases a, b, c).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Complex3(pub [Complex64; 3]);

impl Complex3 {
    pub const ZERO: Complex3 = Complex3([Complex64::new(0.0, 0.0); 3]);

    pub fn from_re_im(re: [f64; 3], im: [f64; 3]) -> Self {
        Complex3([Complex64::new(re[0], im[0]), Complex64::new(re[1], im[1]), Complex64::new(re[2], im[2])])
    }

    pub fn real(re: [f64; 3]) -> Self {
        Self::from_re_im(re, [0.0; 3])
    }

    pub fn splat(v: Complex64) -> Self {
        Complex3([v; 3])
    }

    pub fn re(&self) -> [f64; 3] {
        [self.0[0].re, self.0[1].re, self.0[2].re]
    }

    pub fn im(&self) -> [f64; 3] {
        [self.0[0].im, self.0[1].im, self.0[2].im]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn as_vector(&self) -> Vector3<Complex64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Load,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Lower injection bounds; real and imaginary parts bound `Re(s)` and
    /// `Im(s)` per phase.
    pub s_min: Complex3,
    pub s_max: Complex3,
    /// Bounds on the squared voltage magnitude.
    pub v_min: f64,
    pub v_max: f64,
    /// Photovoltaic injection per time step.
    pub pv_profile: Vec<Complex3>,
    pub bess_cost: f64,
    pub bess_candidate: bool,
}

impl Bus {
    pub fn pv_at(&self, t: usize) -> Complex3 {
        self.pv_profile.get(t).copied().unwrap_or(Complex3::ZERO)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub y_fwd: Matrix3C,
    pub y_rev: Matrix3C,
    pub is_transformer: bool,
    /// Optional per-phase cap on the real part of the branch flow.
    pub flow_cap: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseQuantities {
    pub power_kva: f64,
    pub voltage_kv: f64,
}

impl Default for BaseQuantities {
    fn default() -> Self {
        Self { power_kva: 1000.0, voltage_kv: 12.47 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub base: BaseQuantities,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
}

impl Network {
    /// Builds a network after checking per-element invariants. Topology is
    /// checked separately by [`validate_radial`].
    pub fn new(base: BaseQuantities, buses: Vec<Bus>, lines: Vec<Line>) -> Result<Self, NetworkError> {
        let net = Network { base, buses, lines };
        net.check_elements()?;
        Ok(net)
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn check_elements(&self) -> Result<(), NetworkError> {
        if self.buses.is_empty() {
            return Err(NetworkError::Empty);
        }
        for (position, bus) in self.buses.iter().enumerate() {
            if bus.id != position {
                return Err(NetworkError::NonContiguousIds { position, found: bus.id });
            }
            if !bus.s_min.is_finite() || !bus.s_max.is_finite() {
                return Err(NetworkError::NonFinite(format!("injection bounds of bus {}", bus.id)));
            }
            for p in 0..3 {
                let (lo, hi) = (bus.s_min.0[p], bus.s_max.0[p]);
                if lo.re > hi.re || lo.im > hi.im {
                    return Err(NetworkError::InvalidBounds {
                        bus: bus.id,
                        reason: format!("s_min > s_max on phase {p}"),
                    });
                }
            }
            if !(bus.v_min > 0.0 && bus.v_min <= bus.v_max && bus.v_max.is_finite()) {
                return Err(NetworkError::InvalidBounds {
                    bus: bus.id,
                    reason: format!("need 0 < v_min <= v_max, got [{}, {}]", bus.v_min, bus.v_max),
                });
            }
            if !(bus.bess_cost >= 0.0 && bus.bess_cost.is_finite()) {
                return Err(NetworkError::InvalidBounds {
                    bus: bus.id,
                    reason: format!("bess_cost must be nonnegative, got {}", bus.bess_cost),
                });
            }
            if bus.pv_profile.iter().any(|s| !s.is_finite()) {
                return Err(NetworkError::NonFinite(format!("pv profile of bus {}", bus.id)));
            }
        }
        let slacks: Vec<usize> = self.buses.iter().filter(|b| b.kind == BusKind::Slack).map(|b| b.id).collect();
        if slacks != [0] {
            return Err(NetworkError::MultipleSlack(slacks));
        }
        let n = self.buses.len();
        for (l, line) in self.lines.iter().enumerate() {
            if line.from >= n {
                return Err(NetworkError::UnknownBus(line.from));
            }
            if line.to >= n {
                return Err(NetworkError::UnknownBus(line.to));
            }
            if line.from == line.to {
                return Err(NetworkError::SelfLoop(l));
            }
            if line.y_fwd.iter().chain(line.y_rev.iter()).any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                return Err(NetworkError::NonFinite(format!("admittance of line {l}")));
            }
            if line.y_fwd.iter().all(|c| c.norm() == 0.0) || line.y_rev.iter().all(|c| c.norm() == 0.0) {
                return Err(NetworkError::ZeroAdmittance(l));
            }
        }
        Ok(())
    }
}

/// Parent map of a radial network rooted at the slack bus.
#[derive(Debug, Clone, PartialEq)]
pub struct RootedTree {
    parent: Vec<Option<usize>>,
    /// Index of the line entering each bus from its parent.
    parent_line: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
}

impl RootedTree {
    pub fn n_buses(&self) -> usize {
        self.parent.len()
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parent.get(j).copied().flatten()
    }

    pub fn parent_line(&self, j: usize) -> Option<usize> {
        self.parent_line.get(j).copied().flatten()
    }

    /// Children in ascending bus id.
    pub fn children(&self, j: usize) -> &[usize] {
        &self.children[j]
    }

    pub fn depth_of(&self, j: usize) -> usize {
        self.depth[j]
    }

    pub fn depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    fn check(&self, j: usize) -> Result<(), NetworkError> {
        if j < self.n_buses() {
            Ok(())
        } else {
            Err(NetworkError::UnknownBus(j))
        }
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Undirected path between two buses using the lines seen so far.
fn undirected_path(adj: &[Vec<usize>], from: usize, to: usize) -> Vec<usize> {
    let mut prev = vec![usize::MAX; adj.len()];
    let mut queue = VecDeque::from([from]);
    prev[from] = from;
    while let Some(u) = queue.pop_front() {
        if u == to {
            break;
        }
        for &v in &adj[u] {
            if prev[v] == usize::MAX {
                prev[v] = u;
                queue.push_back(v);
            }
        }
    }
    let mut path = vec![to];
    let mut cur = to;
    while cur != from && prev[cur] != usize::MAX {
        cur = prev[cur];
        path.push(cur);
    }
    path.reverse();
    path
}

/// Checks that the lines form a tree oriented away from bus 0.
pub fn validate_radial(network: &Network) -> Result<RootedTree, NetworkError> {
    network.check_elements()?;
    let n = network.n_buses();

    let mut uf: Vec<usize> = (0..n).collect();
    let mut adj = vec![Vec::new(); n];
    for line in &network.lines {
        let (a, b) = (find(&mut uf, line.from), find(&mut uf, line.to));
        if a == b {
            let mut cycle = undirected_path(&adj, line.to, line.from);
            cycle.push(line.to);
            return Err(NetworkError::CycleDetected(cycle));
        }
        uf[a] = b;
        adj[line.from].push(line.to);
        adj[line.to].push(line.from);
    }

    let root = find(&mut uf, 0);
    let unreachable: Vec<usize> = (0..n).filter(|&i| find(&mut uf, i) != root).collect();
    if !unreachable.is_empty() {
        return Err(NetworkError::Disconnected(unreachable));
    }

    let mut parent = vec![None; n];
    let mut parent_line = vec![None; n];
    let mut children = vec![Vec::new(); n];
    for (l, line) in network.lines.iter().enumerate() {
        parent[line.to] = Some(line.from);
        parent_line[line.to] = Some(l);
        children[line.from].push(line.to);
    }
    for c in &mut children {
        c.sort_unstable();
    }

    // A bus entered by no line other than the root, or the root entered by
    // a line, means some line points upstream.
    if parent[0].is_some() || (1..n).any(|j| parent[j].is_none()) {
        let bad = network
            .lines
            .iter()
            .enumerate()
            .find(|(_, l)| l.to == 0)
            .or_else(|| {
                let mut indeg = vec![0usize; n];
                for l in &network.lines {
                    indeg[l.to] += 1;
                }
                network.lines.iter().enumerate().find(|(_, l)| indeg[l.to] > 1)
            })
            .map(|(i, l)| (i, l.from, l.to))
            .unwrap_or((0, 0, 0));
        return Err(NetworkError::ReversedLine { line: bad.0, from: bad.1, to: bad.2 });
    }

    let mut depth = vec![0usize; n];
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for &v in &children[u] {
            depth[v] = depth[u] + 1;
            queue.push_back(v);
        }
    }

    Ok(RootedTree { parent, parent_line, children, depth })
}

/// Buses of the subtree rooted at `j` (including `j`), ascending.
pub fn subtree(tree: &RootedTree, j: usize) -> Result<Vec<usize>, NetworkError> {
    tree.check(j)?;
    let mut out = Vec::new();
    let mut stack = vec![j];
    while let Some(u) = stack.pop() {
        out.push(u);
        stack.extend(tree.children(u).iter().copied());
    }
    out.sort_unstable();
    Ok(out)
}

/// Lines on the unique path from the slack bus to `j`, ordered from the root.
pub fn path_to_root(tree: &RootedTree, j: usize) -> Result<Vec<usize>, NetworkError> {
    tree.check(j)?;
    let mut lines = Vec::with_capacity(tree.depth_of(j));
    let mut cur = j;
    while let Some(l) = tree.parent_line(cur) {
        lines.push(l);
        cur = tree.parent(cur).expect("parent line implies parent");
    }
    lines.reverse();
    Ok(lines)
}

pub fn alpha() -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * PI / 3.0)
}

/// Positive-sequence phase vector `[1, a, a^2]`.
pub fn alpha_plus() -> Vector3<Complex64> {
    let a = alpha();
    Vector3::new(Complex64::new(1.0, 0.0), a, a * a)
}

/// Constant phase matrix relating branch flow matrices to per-phase flows.
pub fn gamma_matrix() -> Matrix3C {
    let one = Complex64::new(1.0, 0.0);
    let a = alpha();
    let a2 = a * a;
    Matrix3C::new(one, a2, a, a, one, a2, a2, a, one)
}

/// Squared-voltage matrix of a balanced bus, `v_c * a+ a+^H`.
pub fn balanced_outer(v_c: f64) -> Result<Matrix3C, NetworkError> {
    if !(v_c >= 0.0) {
        return Err(NetworkError::NegativeVoltageSquare(v_c));
    }
    let ap = alpha_plus();
    Ok((ap * ap.adjoint()).map(|c| c * v_c))
}

/// True when the smallest singular value exceeds `tol` times the largest.
pub fn is_invertible(y: &Matrix3C, tol: f64) -> bool {
    let sv = y.singular_values();
    let max = sv.max();
    let min = sv.min();
    max > 0.0 && min > tol * max
}

pub fn invert(y: &Matrix3C) -> Option<Matrix3C> {
    y.try_inverse()
}
