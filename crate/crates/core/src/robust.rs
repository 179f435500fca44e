//! Box uncertainty, the dominant-point substitution and the single-stage
//! planning model, plus a brute-force two-stage oracle for small instances.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{
    build_program, AssemblyError, LinearProgram, ModelConfig, PlanSolution, RowSlot, SITING_THRESHOLD,
};
use crate::network::{BusKind, Complex3, Network};
use crate::solver::{solve_with, LpEntry, ParameterMap, SolveResult, SolveStatus, SolverError, SolverOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RobustError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid budget: need m >= 1 and 0 < k <= m, got m = {m}, k = {k}")]
    InvalidBudget { m: usize, k: f64 },
    #[error("invalid disaggregation weights: {0}")]
    InvalidWeights(String),
    #[error("oracle needs {needed} realizations, budget is {budget}")]
    OracleTooLarge { needed: u128, budget: u128 },
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("planning problem is {0:?}")]
    NotSolved(SolveStatus),
}

/// Per-step lower and upper bounds on a three-component quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub lower: Vec<[f64; 3]>,
    pub upper: Vec<[f64; 3]>,
}

impl BoxSet {
    pub fn new(lower: Vec<[f64; 3]>, upper: Vec<[f64; 3]>) -> Result<BoxSet, RobustError> {
        let b = BoxSet { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn point(p: Vec<[f64; 3]>) -> BoxSet {
        BoxSet { lower: p.clone(), upper: p }
    }

    pub fn steps(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<(), RobustError> {
        if self.lower.len() != self.upper.len() {
            return Err(RobustError::InvalidBox(format!(
                "{} lower vs {} upper steps",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (t, (l, u)) in self.lower.iter().zip(&self.upper).enumerate() {
            for p in 0..3 {
                if l[p].is_nan() || u[p].is_nan() || l[p] > u[p] {
                    return Err(RobustError::InvalidBox(format!("step {t} component {p}: [{}, {}]", l[p], u[p])));
                }
            }
        }
        Ok(())
    }

    /// Components with a nontrivial interval, as `(step, component)`.
    pub fn uncertain_dims(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for t in 0..self.steps() {
            for p in 0..3 {
                if self.upper[t][p] > self.lower[t][p] {
                    out.push((t, p));
                }
            }
        }
        out
    }

    pub fn contains(&self, y: &[[f64; 3]]) -> bool {
        y.len() == self.steps()
            && y.iter().enumerate().all(|(t, v)| (0..3).all(|p| self.lower[t][p] <= v[p] && v[p] <= self.upper[t][p]))
    }

    pub fn is_subset_of(&self, other: &BoxSet) -> bool {
        self.steps() == other.steps()
            && (0..self.steps())
                .all(|t| (0..3).all(|p| other.lower[t][p] <= self.lower[t][p] && self.upper[t][p] <= other.upper[t][p]))
    }
}

/// Worst-case prices: with prices multiplying nonnegative procurement in a
/// minimization, the inner maximum sits at the upper bounds.
pub fn worst_case_price(price_box: &BoxSet) -> Vec<[f64; 3]> {
    price_box.upper.clone()
}

/// Affine map `h -> lower + (upper - lower) * h` from the unit box.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxMap {
    pub offset: Vec<[f64; 3]>,
    pub scale: Vec<[f64; 3]>,
}

impl BoxMap {
    pub fn apply(&self, h: &[[f64; 3]]) -> Vec<[f64; 3]> {
        h.iter()
            .enumerate()
            .map(|(t, ht)| std::array::from_fn(|p| self.offset[t][p] + self.scale[t][p] * ht[p]))
            .collect()
    }
}

pub fn normalize_box(b: &BoxSet) -> BoxMap {
    BoxMap {
        offset: b.lower.clone(),
        scale: b.lower.iter().zip(&b.upper).map(|(l, u)| std::array::from_fn(|p| u[p] - l[p])).collect(),
    }
}

/// Vertices of a set dominating the budgeted unit box
/// `{h in [0,1]^m : sum h <= k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DominantSet {
    pub m: usize,
    pub k: f64,
    pub beta: f64,
    /// `beta * e_i` for each `i`, then `beta * (k/m) * e`.
    pub vertices: Vec<Vec<f64>>,
}

pub fn dominant_set(m: usize, k: f64) -> Result<DominantSet, RobustError> {
    if m == 0 || !(k > 0.0 && k <= m as f64) {
        return Err(RobustError::InvalidBudget { m, k });
    }
    let mf = m as f64;
    let beta = k.min(mf / k);
    let mut vertices: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut v = vec![0.0; m];
            v[i] = beta;
            v
        })
        .collect();
    vertices.push(vec![beta * k / mf; m]);
    Ok(DominantSet { m, k, beta, vertices })
}

impl DominantSet {
    /// Convex weights over the vertices whose combination dominates `h`,
    /// following the two cases of the construction.
    pub fn certificate(&self, h: &[f64]) -> Vec<f64> {
        let mf = self.m as f64;
        let mut alpha = vec![0.0; self.m + 1];
        if self.k * self.k <= mf {
            // beta = k
            let total: f64 = h.iter().sum();
            for i in 0..self.m {
                alpha[i] = h[i] / self.k;
            }
            alpha[self.m] = (1.0 - total / self.k).max(0.0);
        } else {
            // beta = m / k: the scaled all-ones vertex is e itself
            alpha[self.m] = 1.0;
        }
        alpha
    }

    pub fn combine(&self, alpha: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (a, v) in alpha.iter().zip(&self.vertices) {
            for i in 0..self.m {
                out[i] += a * v[i];
            }
        }
        out
    }
}

/// Dominant load realization: the elementwise upper bounds.
pub fn dominant_load(load_box: &BoxSet) -> Vec<[f64; 3]> {
    load_box.upper.clone()
}

/// Two-stage planning instance with box-uncertain prices and loads.
#[derive(Debug, Clone)]
pub struct RobustInstance {
    pub network: Network,
    pub config: ModelConfig,
    pub price_box: BoxSet,
    /// Aggregate per-phase demand (positive) per step.
    pub load_box: BoxSet,
    /// Share of each phase's aggregate demand drawn at each bus.
    pub weights: Vec<[f64; 3]>,
}

impl RobustInstance {
    pub fn validate(&self) -> Result<(), RobustError> {
        self.price_box.validate()?;
        self.load_box.validate()?;
        let h = self.config.horizon;
        if self.price_box.steps() != h || self.load_box.steps() != h {
            return Err(AssemblyError::HorizonMismatch {
                what: "uncertainty boxes".into(),
                expected: h,
                found: self.price_box.steps().min(self.load_box.steps()),
            }
            .into());
        }
        check_weights(&self.network, &self.weights)
    }
}

pub fn check_weights(network: &Network, weights: &[[f64; 3]]) -> Result<(), RobustError> {
    if weights.len() != network.n_buses() {
        return Err(RobustError::InvalidWeights(format!("{} weights for {} buses", weights.len(), network.n_buses())));
    }
    for p in 0..3 {
        let mut sum = 0.0;
        for (j, w) in weights.iter().enumerate() {
            if !(w[p] >= 0.0) {
                return Err(RobustError::InvalidWeights(format!("bus {j} phase {p}: {}", w[p])));
            }
            if w[p] > 0.0 && network.buses[j].kind == BusKind::Slack {
                return Err(RobustError::InvalidWeights("the slack bus carries no load".into()));
            }
            sum += w[p];
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(RobustError::InvalidWeights(format!("phase {p} weights sum to {sum}")));
        }
    }
    Ok(())
}

/// Signed per-bus loads (demand negative) from aggregate demand.
pub fn disaggregate(weights: &[[f64; 3]], load: &[[f64; 3]]) -> Vec<Vec<Complex3>> {
    weights
        .iter()
        .map(|w| load.iter().map(|l| Complex3::real(std::array::from_fn(|p| -w[p] * l[p]))).collect())
        .collect()
}

/// Single-stage model with the parameters that enter it.
#[derive(Debug, Clone)]
pub struct SingleStage {
    pub program: LinearProgram,
    /// Parameters `3t + p` are prices, `3(horizon + t) + p` aggregate loads.
    pub params: ParameterMap,
    pub price: Vec<[f64; 3]>,
    pub load: Vec<[f64; 3]>,
}

impl SingleStage {
    pub fn price_param(&self, t: usize, p: usize) -> usize {
        3 * t + p
    }

    pub fn load_param(&self, t: usize, p: usize) -> usize {
        3 * (self.price.len() + t) + p
    }
}

/// Single-stage model at worst-case prices and the dominant load.
pub fn build_single_stage(inst: &RobustInstance) -> Result<SingleStage, RobustError> {
    inst.validate()?;
    let price = worst_case_price(&inst.price_box);
    let load = dominant_load(&inst.load_box);
    build_at(&inst.network, &inst.config, &inst.weights, price, load)
}

/// Planning LP at a given price and aggregate load trajectory.
pub fn build_at(
    network: &Network,
    config: &ModelConfig,
    weights: &[[f64; 3]],
    price: Vec<[f64; 3]>,
    load: Vec<[f64; 3]>,
) -> Result<SingleStage, RobustError> {
    check_weights(network, weights)?;
    let load_rhs = disaggregate(weights, &load);
    let program = build_program(network, config, &price, &load_rhs)?;
    let vm = &program.varmap;
    let RowSlot::In(epi) = program.slots[program.epigraph_row] else {
        unreachable!("the epigraph row is an inequality")
    };
    let mut params = ParameterMap::new();
    for t in 0..price.len() {
        for p in 0..3 {
            params.push(format!("price[{t},{p}]"), vec![(LpEntry::InCoef(epi, vm.s_re(0, t, p)), 1.0)]);
        }
    }
    for t in 0..load.len() {
        for p in 0..3 {
            let mut entries = Vec::new();
            for (j, w) in weights.iter().enumerate() {
                if w[p] != 0.0 {
                    let RowSlot::Eq(i) = program.slots[program.composition_rows[j][t][p]] else { unreachable!() };
                    entries.push((LpEntry::EqRhs(i), -w[p]));
                }
            }
            if entries.is_empty() {
                // every parameter must touch the program; a zero-weight phase
                // still shows up through its (zero) slack price term
                entries.push((LpEntry::Offset, 0.0));
            }
            params.push(format!("load[{t},{p}]"), entries);
        }
    }
    Ok(SingleStage { program, params, price, load })
}

/// Solves the program and reads back the plan.
pub fn solve_stage(stage: &SingleStage, opts: &SolverOptions) -> Result<(SolveResult, PlanSolution), RobustError> {
    let r = solve_with(&stage.program.lp, opts)?;
    if !r.is_optimal() {
        return Err(RobustError::NotSolved(r.status));
    }
    let plan = stage.program.extract(&r);
    Ok((r, plan))
}

/// Options of the brute-force two-stage oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOptions {
    pub grid_points: usize,
    /// Relative spread of the local size grid around the single-stage sizes.
    pub x_spread: f64,
    pub x_points: usize,
    pub max_solves: u128,
    pub solver: SolverOptions,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            grid_points: 11,
            x_spread: 0.2,
            x_points: 5,
            max_solves: 200_000,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// `min_x max_load min_dispatch` over the grids.
    pub value: f64,
    pub x: Vec<f64>,
    pub realizations: usize,
    pub solves: usize,
}

/// Grid values along one uncertain dimension, upper bound first.
fn axis(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points <= 1 || hi == lo {
        return vec![hi];
    }
    (0..points).map(|i| hi - (hi - lo) * i as f64 / (points - 1) as f64).collect()
}

/// Enumerates a load grid (prices at their upper bounds) for every size
/// candidate around the single-stage optimum and returns the min-max value.
pub fn brute_force_two_stage(inst: &RobustInstance, opts: &OracleOptions) -> Result<OracleResult, RobustError> {
    let stage = build_single_stage(inst)?;
    let (_, plan) = solve_stage(&stage, &opts.solver)?;
    let dims = inst.load_box.uncertain_dims();
    let axes: Vec<Vec<f64>> = dims
        .iter()
        .map(|&(t, p)| axis(inst.load_box.lower[t][p], inst.load_box.upper[t][p], opts.grid_points))
        .collect();
    let n_real: u128 = axes.iter().map(|a| a.len() as u128).product();

    let sites: Vec<usize> =
        inst.network.buses.iter().filter(|b| b.bess_candidate && b.kind == BusKind::Load).map(|b| b.id).collect();
    let x_axes: Vec<Vec<f64>> = sites
        .iter()
        .map(|&j| {
            let c = plan.x[j];
            if c < SITING_THRESHOLD {
                // an unsited bus is evaluated without storage; fixing a
                // vanishing size would pin both SOC limits at once
                vec![0.0]
            } else if opts.x_points <= 1 {
                vec![c]
            } else {
                // centre first so the incumbent is set by the single-stage sizes
                let mut v = vec![c];
                let half = (opts.x_points - 1) / 2;
                for i in 1..=half {
                    let d = opts.x_spread * c * i as f64 / half as f64;
                    v.push(c - d);
                    v.push((c + d).min(inst.config.x_max));
                }
                v
            }
        })
        .collect();
    let n_x: u128 = x_axes.iter().map(|a| a.len() as u128).product();
    let needed = n_real * n_x;
    if needed > opts.max_solves {
        return Err(RobustError::OracleTooLarge { needed, budget: opts.max_solves });
    }

    // Realizations rewrite the composition right-hand sides in place.
    let base = stage.program.clone();
    let vm = &base.varmap;
    let rhs_base = base.lp.b_eq.clone();
    let slot_of = |row: usize| match base.slots[row] {
        RowSlot::Eq(i) => i,
        RowSlot::In(_) => unreachable!(),
    };

    let mut best = f64::INFINITY;
    let mut best_x = plan.x.clone();
    let mut solves = 0usize;
    let mut xi = vec![0usize; x_axes.len()];
    'outer: loop {
        let mut lp = base.lp.clone();
        let mut x = vec![0.0; inst.network.n_buses()];
        for (s, &j) in sites.iter().enumerate() {
            let v = x_axes[s][xi[s]];
            x[j] = v;
            lp.lower[vm.x(j)] = v;
            lp.upper[vm.x(j)] = v;
        }
        let mut worst = f64::NEG_INFINITY;
        let mut gi = vec![0usize; axes.len()];
        loop {
            let mut load = stage.load.clone();
            for (d, &(t, p)) in dims.iter().enumerate() {
                load[t][p] = axes[d][gi[d]];
            }
            for (j, w) in inst.weights.iter().enumerate() {
                for (t, lt) in load.iter().enumerate() {
                    for p in 0..3 {
                        if let Some(rows) = base.composition_rows[j].get(t) {
                            let i = slot_of(rows[p]);
                            lp.b_eq[i] = rhs_base[i] + w[p] * (stage.load[t][p] - lt[p]);
                        }
                    }
                }
            }
            let r = solve_with(&lp, &opts.solver)?;
            solves += 1;
            let v = match r.status {
                SolveStatus::Optimal => r.objective,
                SolveStatus::PrimalInfeasible => f64::INFINITY,
                s => return Err(RobustError::NotSolved(s)),
            };
            worst = worst.max(v);
            if worst >= best {
                break; // this size cannot improve on the incumbent
            }
            if !advance(&mut gi, &axes) {
                break;
            }
        }
        if worst < best {
            best = worst;
            best_x = x;
        }
        if !advance(&mut xi, &x_axes) {
            break 'outer;
        }
    }
    Ok(OracleResult { value: best, x: best_x, realizations: n_real as usize, solves })
}

/// Odometer increment over a product grid; false when exhausted.
fn advance(idx: &mut [usize], axes: &[Vec<f64>]) -> bool {
    for d in (0..idx.len()).rev() {
        idx[d] += 1;
        if idx[d] < axes[d].len() {
            return true;
        }
        idx[d] = 0;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn price_and_load_picks() {
        let b = BoxSet::new(vec![[0.1; 3]], vec![[0.5; 3]]).unwrap();
        assert_eq!(worst_case_price(&b), vec![[0.5; 3]]);
        let p = BoxSet::point(vec![[0.3, 0.2, 0.1]]);
        assert_eq!(worst_case_price(&p), vec![[0.3, 0.2, 0.1]]);
        let l = BoxSet::new(vec![[0.8; 3]], vec![[1.2; 3]]).unwrap();
        assert_eq!(dominant_load(&l), vec![[1.2; 3]]);
        assert!(BoxSet::new(vec![[1.0; 3]], vec![[0.0; 3]]).is_err());
    }

    #[test]
    fn normalization_round_trips() {
        let b = BoxSet::new(vec![[2.0, 0.0, -1.0]], vec![[4.0, 1.0, 1.0]]).unwrap();
        let m = normalize_box(&b);
        assert_eq!(m.apply(&[[0.0; 3]]), b.lower);
        assert_eq!(m.apply(&[[1.0; 3]]), b.upper);
        assert_eq!(m.apply(&[[0.5; 3]]), vec![[3.0, 0.5, 0.0]]);
    }

    #[test]
    fn dominant_set_examples() {
        let d = dominant_set(1, 1.0).unwrap();
        assert_eq!(d.beta, 1.0);
        assert_eq!(d.vertices, vec![vec![1.0], vec![1.0]]);
        let d = dominant_set(4, 2.0).unwrap();
        assert_eq!(d.beta, 2.0);
        assert_eq!(d.vertices[0], vec![2.0, 0.0, 0.0, 0.0]);
        assert_eq!(d.vertices[4], vec![1.0; 4]);
        let d = dominant_set(2, 2.0).unwrap();
        assert_eq!(d.beta, 1.0);
        assert_eq!(d.vertices[2], vec![1.0, 1.0]);
        assert!(dominant_set(2, 3.0).is_err());
        assert!(dominant_set(0, 1.0).is_err());
    }
}
