//! Linear programming: interior-point solve, KKT checks and optimal-value
//! sensitivities.
//!
//! Problems are stated as
//!
//! ```text
//! min  c^T x + offset
//! s.t. A_eq x  = b_eq      (duals y,  free)
//!      A_in x <= b_in      (duals mu >= 0)
//!      l <= x <= u         (duals z_l, z_u >= 0)
//! ```
//!
//! with stationarity `c - A_eq^T y + A_in^T mu - z_l + z_u = 0`.

mod csr;
mod ipm;
mod kkt;
mod ldl;
mod presolve;
mod sensitivity;

pub use csr::CsrMatrix;
pub use ipm::IterateLog;
pub use kkt::{verify_kkt, KktReport};
pub use ldl::{minimum_degree, LdlFactor, LdlSymbolic, SymmetricPattern};
pub use sensitivity::{
    complementarity_margin, entry_derivative, value_gradient, DegenerateWarning, LpEntry, Parameter, ParameterMap,
    ValueGradient, DEGENERACY_MARGIN,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite data: {0}")]
    NonFinite(String),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("solve did not reach optimality (status {0:?})")]
    NotOptimal(SolveStatus),
    #[error("iteration limit reached")]
    IterationLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub reg_primal: f64,
    pub reg_dual: f64,
    pub refine_steps: usize,
    /// Run auxiliary feasibility/ray problems when the main solve fails.
    pub diagnose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-8, max_iter: 200, reg_primal: 1e-7, reg_dual: 1e-7, refine_steps: 10, diagnose: true }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        SolverOptions { tol, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardLp {
    pub c: Vec<f64>,
    pub offset: f64,
    pub a_eq: CsrMatrix,
    pub b_eq: Vec<f64>,
    pub a_in: CsrMatrix,
    pub b_in: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl StandardLp {
    /// Nonnegative variables, no rows.
    pub fn new(c: Vec<f64>) -> Self {
        let n = c.len();
        StandardLp {
            c,
            offset: 0.0,
            a_eq: CsrMatrix::empty(n),
            b_eq: vec![],
            a_in: CsrMatrix::empty(n),
            b_in: vec![],
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn add_eq(&mut self, row: &[(usize, f64)], rhs: f64) -> usize {
        self.a_eq.push_row(row);
        self.b_eq.push(rhs);
        self.b_eq.len() - 1
    }

    pub fn add_le(&mut self, row: &[(usize, f64)], rhs: f64) -> usize {
        self.a_in.push_row(row);
        self.b_in.push(rhs);
        self.b_in.len() - 1
    }

    pub fn add_ge(&mut self, row: &[(usize, f64)], rhs: f64) -> usize {
        let neg: Vec<(usize, f64)> = row.iter().map(|&(j, v)| (j, -v)).collect();
        self.add_le(&neg, -rhs)
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        csr::dot(&self.c, x) + self.offset
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.n();
        if self.a_eq.ncols != n || self.a_in.ncols != n || self.lower.len() != n || self.upper.len() != n {
            return Err(SolverError::DimensionMismatch(format!(
                "{} objective entries vs eq cols {}, ineq cols {}, bounds {}/{}",
                n,
                self.a_eq.ncols,
                self.a_in.ncols,
                self.lower.len(),
                self.upper.len()
            )));
        }
        if self.a_eq.nrows != self.b_eq.len() || self.a_in.nrows != self.b_in.len() {
            return Err(SolverError::DimensionMismatch("row count vs right-hand side".into()));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.c)
            || !finite(&self.b_eq)
            || !finite(&self.b_in)
            || !finite(&self.a_eq.data)
            || !finite(&self.a_in.data)
        {
            return Err(SolverError::NonFinite("objective, matrix or right-hand side".into()));
        }
        if self.lower.iter().any(|v| v.is_nan() || *v == f64::INFINITY)
            || self.upper.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY)
        {
            return Err(SolverError::NonFinite("variable bounds".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub y_eq: Vec<f64>,
    /// Multipliers of the `<=` rows, nonnegative at optimality.
    pub y_in: Vec<f64>,
    pub z_lower: Vec<f64>,
    pub z_upper: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub history: Vec<IterateLog>,
    pub kkt: KktReport,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    fn with_status(lp: &StandardLp, status: SolveStatus, iterations: usize) -> Self {
        let n = lp.n();
        SolveResult {
            status,
            x: vec![f64::NAN; n],
            y_eq: vec![0.0; lp.b_eq.len()],
            y_in: vec![0.0; lp.b_in.len()],
            z_lower: vec![0.0; n],
            z_upper: vec![0.0; n],
            objective: match status {
                SolveStatus::PrimalInfeasible => f64::INFINITY,
                SolveStatus::DualInfeasible => f64::NEG_INFINITY,
                _ => f64::NAN,
            },
            iterations,
            history: vec![],
            kkt: KktReport::default(),
        }
    }
}

/// Solves the LP with default options except tolerance and iteration cap.
pub fn solve(lp: &StandardLp, tol: f64, max_iter: usize) -> Result<SolveResult, SolverError> {
    solve_with(lp, &SolverOptions { tol, max_iter, ..Default::default() })
}

pub fn solve_with(lp: &StandardLp, opts: &SolverOptions) -> Result<SolveResult, SolverError> {
    lp.validate()?;
    let pre = match presolve::presolve(lp) {
        presolve::Outcome::Infeasible => return Ok(SolveResult::with_status(lp, SolveStatus::PrimalInfeasible, 0)),
        presolve::Outcome::Reduced(p) => p,
    };
    let out = ipm::run(&pre.problem, opts);
    let out = match out {
        Ok(o) => o,
        Err(e) => {
            if opts.diagnose {
                if let Some(status) = diagnose(lp, opts)? {
                    return Ok(SolveResult::with_status(lp, status, 0));
                }
            }
            return Err(e);
        }
    };
    if out.status != ipm::IpmStatus::Optimal {
        let iterations = out.iterations;
        if opts.diagnose {
            if let Some(status) = diagnose(lp, opts)? {
                return Ok(SolveResult::with_status(lp, status, iterations));
            }
        }
        let mut r = pre.postsolve(lp, &out);
        r.status = SolveStatus::IterationLimit;
        return Ok(r);
    }
    let mut r = pre.postsolve(lp, &out);
    r.status = SolveStatus::Optimal;
    r.kkt = verify_kkt(lp, &r, opts.tol);
    Ok(r)
}

/// Decides infeasibility or unboundedness through two auxiliary problems
/// that are feasible and bounded by construction.
fn diagnose(lp: &StandardLp, opts: &SolverOptions) -> Result<Option<SolveStatus>, SolverError> {
    let inner = SolverOptions { diagnose: false, max_iter: opts.max_iter.max(100), ..opts.clone() };
    let n = lp.n();
    if (0..n).any(|j| lp.lower[j] > lp.upper[j]) {
        return Ok(Some(SolveStatus::PrimalInfeasible));
    }

    // Phase one: minimize total constraint violation.
    let me = lp.b_eq.len();
    let mi = lp.b_in.len();
    let nv = n + 2 * me + mi;
    let mut c = vec![0.0; nv];
    c[n..].iter_mut().for_each(|v| *v = 1.0);
    let mut aux = StandardLp::new(c);
    aux.lower[..n].copy_from_slice(&lp.lower);
    aux.upper[..n].copy_from_slice(&lp.upper);
    for i in 0..me {
        let mut row: Vec<(usize, f64)> = lp.a_eq.row(i).collect();
        row.push((n + 2 * i, 1.0));
        row.push((n + 2 * i + 1, -1.0));
        aux.add_eq(&row, lp.b_eq[i]);
    }
    for i in 0..mi {
        let mut row: Vec<(usize, f64)> = lp.a_in.row(i).collect();
        row.push((n + 2 * me + i, -1.0));
        aux.add_le(&row, lp.b_in[i]);
    }
    let scale = 1.0 + csr::norm_inf(&lp.b_eq).max(csr::norm_inf(&lp.b_in));
    match solve_with(&aux, &inner) {
        Ok(r) if r.is_optimal() => {
            if r.objective > 1e-6 * scale {
                return Ok(Some(SolveStatus::PrimalInfeasible));
            }
        }
        _ => return Ok(None),
    }

    // Recession direction with negative cost inside a unit box.
    let mut ray = StandardLp::new(lp.c.clone());
    for j in 0..n {
        let (lf, uf) = (lp.lower[j].is_finite(), lp.upper[j].is_finite());
        ray.lower[j] = if lf { 0.0 } else { -1.0 };
        ray.upper[j] = if uf { 0.0 } else { 1.0 };
    }
    for i in 0..me {
        let row: Vec<(usize, f64)> = lp.a_eq.row(i).collect();
        ray.add_eq(&row, 0.0);
    }
    for i in 0..mi {
        let row: Vec<(usize, f64)> = lp.a_in.row(i).collect();
        ray.add_le(&row, 0.0);
    }
    match solve_with(&ray, &inner) {
        Ok(r) if r.is_optimal() => {
            if r.objective < -1e-7 * (1.0 + csr::norm_inf(&lp.c)) {
                return Ok(Some(SolveStatus::DualInfeasible));
            }
        }
        _ => return Ok(None),
    }
    Ok(None)
}
