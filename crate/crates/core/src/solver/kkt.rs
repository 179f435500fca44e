use super::csr::{dot, norm_inf};
use super::{SolveResult, StandardLp};

/// Infinity-norm residuals of the optimality conditions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktReport {
    /// `c - A_eq^T y + A_in^T mu - z_l + z_u`
    pub stationarity: f64,
    /// Equality, inequality and bound violations.
    pub primal_feasibility: f64,
    /// Negative parts of `mu`, `z_l`, `z_u`, and multipliers on infinite bounds.
    pub dual_feasibility: f64,
    /// Largest product of a slack and its multiplier.
    pub complementarity: f64,
    /// Relative primal-dual objective gap.
    pub duality_gap: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_feasibility)
            .max(self.dual_feasibility)
            .max(self.complementarity)
            .max(self.duality_gap)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

/// Evaluates the optimality conditions at the point stored in `result`.
/// Residuals are scaled by `1 + ||data||` so they are comparable to `tol`;
/// `tol` is only used to decide which slacks count as finite.
pub fn verify_kkt(lp: &StandardLp, result: &SolveResult, _tol: f64) -> KktReport {
    let n = lp.n();
    let x = &result.x;
    let (y, mu, zl, zu) = (&result.y_eq, &result.y_in, &result.z_lower, &result.z_upper);
    if x.len() != n || y.len() != lp.b_eq.len() || mu.len() != lp.b_in.len() || zl.len() != n || zu.len() != n {
        return KktReport {
            stationarity: f64::INFINITY,
            primal_feasibility: f64::INFINITY,
            dual_feasibility: f64::INFINITY,
            complementarity: f64::INFINITY,
            duality_gap: f64::INFINITY,
        };
    }

    let cscale = 1.0 + norm_inf(&lp.c);
    let bscale = 1.0
        + norm_inf(&lp.b_eq)
            .max(norm_inf(&lp.b_in))
            .max(lp.lower.iter().chain(&lp.upper).filter(|v| v.is_finite()).fold(0.0f64, |m, v| m.max(v.abs())));

    let mut grad = lp.c.clone();
    let aty = lp.a_eq.mul_t(y);
    let atm = lp.a_in.mul_t(mu);
    for j in 0..n {
        grad[j] += -aty[j] + atm[j] - zl[j] + zu[j];
    }
    let stationarity = norm_inf(&grad) / cscale;

    let ax = lp.a_eq.mul_vec(x);
    let gx = lp.a_in.mul_vec(x);
    let mut pf = 0.0f64;
    for i in 0..lp.b_eq.len() {
        pf = pf.max((ax[i] - lp.b_eq[i]).abs());
    }
    for i in 0..lp.b_in.len() {
        pf = pf.max(gx[i] - lp.b_in[i]);
    }
    for j in 0..n {
        pf = pf.max(lp.lower[j] - x[j]).max(x[j] - lp.upper[j]);
    }
    let primal_feasibility = pf.max(0.0) / bscale;

    let mut df = 0.0f64;
    for &m in mu {
        df = df.max(-m);
    }
    for j in 0..n {
        df = df.max(-zl[j]).max(-zu[j]);
        if !lp.lower[j].is_finite() {
            df = df.max(zl[j].abs());
        }
        if !lp.upper[j].is_finite() {
            df = df.max(zu[j].abs());
        }
    }
    let dual_feasibility = df.max(0.0) / cscale;

    let mut comp = 0.0f64;
    for i in 0..lp.b_in.len() {
        comp = comp.max(((lp.b_in[i] - gx[i]) * mu[i]).abs());
    }
    for j in 0..n {
        if lp.lower[j].is_finite() {
            comp = comp.max(((x[j] - lp.lower[j]) * zl[j]).abs());
        }
        if lp.upper[j].is_finite() {
            comp = comp.max(((lp.upper[j] - x[j]) * zu[j]).abs());
        }
    }
    let complementarity = comp / (cscale * bscale);

    let pobj = dot(&lp.c, x);
    let mut dobj = dot(&lp.b_eq, y) - dot(&lp.b_in, mu);
    for j in 0..n {
        if lp.lower[j].is_finite() {
            dobj += lp.lower[j] * zl[j];
        }
        if lp.upper[j].is_finite() {
            dobj -= lp.upper[j] * zu[j];
        }
    }
    let duality_gap = (pobj - dobj).abs() / (1.0 + pobj.abs());

    KktReport { stationarity, primal_feasibility, dual_feasibility, complementarity, duality_gap }
}
