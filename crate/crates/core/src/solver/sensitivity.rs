//! Optimal-value sensitivities from the Lagrangian at a solved point.
//!
//! With `L = c^T x - y^T (A_eq x - b_eq) + mu^T (A_in x - b_in)
//!         - z_l^T (x - l) + z_u^T (x - u)`,
//! the envelope theorem gives `dz*/dp = dL/dp` at the optimum for any data
//! entry `p`, as long as the optimum is unique and strictly complementary.

use super::csr::norm_inf;
use super::{SolveResult, SolverError, StandardLp};

/// A single entry of the LP data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LpEntry {
    Cost(usize),
    Offset,
    EqRhs(usize),
    InRhs(usize),
    EqCoef(usize, usize),
    InCoef(usize, usize),
    Lower(usize),
    Upper(usize),
}

/// A scalar parameter entering the LP data affinely: each listed entry
/// moves by `weight` per unit change of the parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub entries: Vec<(LpEntry, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterMap {
    pub params: Vec<Parameter>,
}

impl ParameterMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, entries: Vec<(LpEntry, f64)>) -> usize {
        assert!(!entries.is_empty(), "a parameter must touch at least one LP entry");
        self.params.push(Parameter { name: name.into(), entries });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Applies `lp_entry += weight * delta[k]` for every parameter `k`.
    pub fn perturb(&self, lp: &mut StandardLp, delta: &[f64]) {
        for (p, &d) in self.params.iter().zip(delta) {
            for &(e, w) in &p.entries {
                let v = w * d;
                match e {
                    LpEntry::Cost(j) => lp.c[j] += v,
                    LpEntry::Offset => lp.offset += v,
                    LpEntry::EqRhs(i) => lp.b_eq[i] += v,
                    LpEntry::InRhs(i) => lp.b_in[i] += v,
                    LpEntry::EqCoef(i, j) => add_coef(&mut lp.a_eq, i, j, v),
                    LpEntry::InCoef(i, j) => add_coef(&mut lp.a_in, i, j, v),
                    LpEntry::Lower(j) => lp.lower[j] += v,
                    LpEntry::Upper(j) => lp.upper[j] += v,
                }
            }
        }
    }
}

fn add_coef(a: &mut super::CsrMatrix, i: usize, j: usize, v: f64) {
    let r = a.indptr[i]..a.indptr[i + 1];
    match a.indices[r.clone()].binary_search(&j) {
        Ok(k) => a.data[r.start + k] += v,
        Err(_) => panic!("parameter targets structurally zero entry ({i}, {j})"),
    }
}

/// Attached when some slack/multiplier pair is not strictly complementary;
/// the gradient is then one element of the subdifferential.
#[derive(Debug, Clone, PartialEq)]
pub struct DegenerateWarning {
    pub weakest_margin: f64,
    pub weak_pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueGradient {
    pub grad: Vec<f64>,
    pub degenerate: Option<DegenerateWarning>,
}

/// Derivative of the Lagrangian with respect to one LP entry.
pub fn entry_derivative(result: &SolveResult, e: LpEntry) -> f64 {
    let x = &result.x;
    match e {
        LpEntry::Cost(j) => x[j],
        LpEntry::Offset => 1.0,
        LpEntry::EqRhs(i) => result.y_eq[i],
        LpEntry::InRhs(i) => -result.y_in[i],
        LpEntry::EqCoef(i, j) => -result.y_eq[i] * x[j],
        LpEntry::InCoef(i, j) => result.y_in[i] * x[j],
        LpEntry::Lower(j) => result.z_lower[j],
        LpEntry::Upper(j) => -result.z_upper[j],
    }
}

/// Smallest `max(slack, multiplier)` over all finite inequality and bound
/// pairs, each scaled to the size of the data, and the number of pairs
/// falling below `margin`.
pub fn complementarity_margin(lp: &StandardLp, result: &SolveResult, margin: f64) -> (f64, usize) {
    let gx = lp.a_in.mul_vec(&result.x);
    let sscale = 1.0 + norm_inf(&lp.b_in).max(norm_inf(&result.x));
    let dscale = 1.0 + norm_inf(&lp.c);
    let mut weakest = f64::INFINITY;
    let mut weak = 0;
    let mut check = |slack: f64, dual: f64| {
        let m = (slack / sscale).max(dual / dscale);
        weakest = weakest.min(m);
        if m < margin {
            weak += 1;
        }
    };
    for i in 0..lp.b_in.len() {
        check(lp.b_in[i] - gx[i], result.y_in[i]);
    }
    for j in 0..lp.n() {
        if lp.lower[j] == lp.upper[j] {
            continue;
        }
        if lp.lower[j].is_finite() {
            check(result.x[j] - lp.lower[j], result.z_lower[j]);
        }
        if lp.upper[j].is_finite() {
            check(lp.upper[j] - result.x[j], result.z_upper[j]);
        }
    }
    (weakest, weak)
}

pub const DEGENERACY_MARGIN: f64 = 1e-6;

pub fn value_gradient(
    result: &SolveResult,
    pmap: &ParameterMap,
    lp: &StandardLp,
) -> Result<ValueGradient, SolverError> {
    if !result.is_optimal() {
        return Err(SolverError::NotOptimal(result.status));
    }
    let grad =
        pmap.params.iter().map(|p| p.entries.iter().map(|&(e, w)| w * entry_derivative(result, e)).sum()).collect();
    let (weakest, weak) = complementarity_margin(lp, result, DEGENERACY_MARGIN);
    let degenerate = (weak > 0).then_some(DegenerateWarning { weakest_margin: weakest, weak_pairs: weak });
    Ok(ValueGradient { grad, degenerate })
}
