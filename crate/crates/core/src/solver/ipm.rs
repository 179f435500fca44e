//! Mehrotra predictor-corrector on `min c^T x, A x = b, l <= x <= u`.
//!
//! Bound slacks `p = x - l`, `q = u - x` are carried as separate variables
//! so the iterate may start infeasible with respect to the bounds. Each
//! Newton system is reduced to the quasi-definite augmented form
//!
//! ```text
//! [ -(D + rho I)   A^T     ] [dx]   [r1]
//! [  A             delta I ] [dy] = [r2]
//! ```
//!
//! with `D = zl/p + zu/q`, factored once per iteration and polished by
//! iterative refinement against the unregularized matrix.

use super::csr::{dot, norm_inf, CsrMatrix};
use super::ldl::{minimum_degree, LdlFactor, LdlSymbolic, SymmetricPattern};
use super::{SolverError, SolverOptions};

pub(crate) struct IpmProblem {
    pub a: CsrMatrix,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum IpmStatus {
    Optimal,
    IterationLimit,
    Diverged,
}

/// Objective and residual snapshot of one iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterateLog {
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub mu: f64,
}

pub(crate) struct IpmOutput {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub zl: Vec<f64>,
    pub zu: Vec<f64>,
    pub status: IpmStatus,
    pub iterations: usize,
    pub history: Vec<IterateLog>,
}

struct Kkt {
    n: usize,
    m: usize,
    sym: LdlSymbolic,
    factor: LdlFactor,
    values: Vec<f64>,
    signs: Vec<f64>,
    /// Offset of the diagonal entry of row-block column `i` in `values`.
    row_diag: Vec<usize>,
    diag: Vec<f64>,
}

impl Kkt {
    fn new(a: &CsrMatrix) -> Self {
        let (m, n) = (a.nrows, a.ncols);
        let mut colptr = Vec::with_capacity(n + m + 1);
        let mut rowidx = Vec::with_capacity(n + a.nnz() + m);
        let mut values = Vec::with_capacity(n + a.nnz() + m);
        colptr.push(0);
        for j in 0..n {
            rowidx.push(j);
            values.push(-1.0);
            colptr.push(rowidx.len());
        }
        let mut row_diag = Vec::with_capacity(m);
        for i in 0..m {
            for (j, v) in a.row(i) {
                rowidx.push(j);
                values.push(v);
            }
            row_diag.push(rowidx.len());
            rowidx.push(n + i);
            values.push(0.0);
            colptr.push(rowidx.len());
        }
        let pattern = SymmetricPattern { n: n + m, colptr, rowidx };
        let perm = minimum_degree(&pattern);
        let sym = LdlSymbolic::analyze(&pattern, perm);
        let factor = LdlFactor::new(&sym);
        let mut signs = vec![-1.0; n];
        signs.extend(std::iter::repeat_n(1.0, m));
        Kkt { n, m, sym, factor, values, signs, row_diag, diag: vec![0.0; n] }
    }

    fn factor(&mut self, d: &[f64], opts: &SolverOptions) {
        for j in 0..self.n {
            self.values[j] = -(d[j] + opts.reg_primal);
        }
        for i in 0..self.m {
            self.values[self.row_diag[i]] = opts.reg_dual;
        }
        self.diag.copy_from_slice(d);
        self.factor.factor(&self.sym, &self.values, &self.signs, 1e-13, opts.reg_primal.max(1e-10));
    }

    /// Solves the unregularized system by refining the regularized factor;
    /// stops after `refine` corrections or once the residual stalls.
    fn solve(&self, a: &CsrMatrix, r1: &[f64], r2: &[f64], refine: usize) -> (Vec<f64>, Vec<f64>) {
        let (n, m) = (self.n, self.m);
        let mut rhs: Vec<f64> = r1.iter().chain(r2).copied().collect();
        let target = 1e-14 * (1.0 + norm_inf(&rhs));
        let mut sol = rhs.clone();
        self.factor.solve(&self.sym, &mut sol);
        let mut last = f64::INFINITY;
        for _ in 0..refine {
            // residual = rhs - K0 sol
            let (sx, sy) = sol.split_at(n);
            let mut kx: Vec<f64> = (0..n).map(|j| -self.diag[j] * sx[j]).collect();
            a.mul_t_acc(sy, &mut kx);
            let ky = a.mul_vec(sx);
            let mut res_norm = 0.0f64;
            for j in 0..n {
                rhs[j] = r1[j] - kx[j];
                res_norm = res_norm.max(rhs[j].abs());
            }
            for i in 0..m {
                rhs[n + i] = r2[i] - ky[i];
                res_norm = res_norm.max(rhs[n + i].abs());
            }
            if res_norm <= target || res_norm > 0.5 * last {
                break;
            }
            last = res_norm;
            self.factor.solve(&self.sym, &mut rhs);
            for (s, c) in sol.iter_mut().zip(&rhs) {
                *s += c;
            }
        }
        let dy = sol.split_off(n);
        (sol, dy)
    }
}

/// Largest fraction of the step to the boundary that is taken.
const MAX_STEP_FRACTION: f64 = 1.0 - 1e-6;

const POLISH_PASSES: usize = 4;
const POLISH_PIN_WEIGHT: f64 = 1e8;

fn max_step(v: &[f64], dv: &[f64], mask: &[bool]) -> f64 {
    let mut alpha = 1.0f64;
    for i in 0..v.len() {
        if mask[i] && dv[i] < 0.0 {
            alpha = alpha.min(-v[i] / dv[i]);
        }
    }
    alpha
}

/// Removes the equality residual left at termination with minimum-norm
/// corrections. Corrected values are clipped to the bounds; columns that hit
/// a bound get a large weight in the next pass so the remaining columns carry
/// the correction. The best point found is kept, and only if it shrinks the
/// residual.
fn polish(kkt: &mut Kkt, p: &IpmProblem, opts: &SolverOptions, x: &mut [f64], has_l: &[bool], has_u: &[bool]) {
    let a = &p.a;
    let residual = |x: &[f64]| -> Vec<f64> {
        let ax = a.mul_vec(x);
        (0..a.nrows).map(|i| p.b[i] - ax[i]).collect()
    };
    let mut best = norm_inf(&residual(x));
    let mut weight = vec![1.0; x.len()];
    for _ in 0..POLISH_PASSES {
        if best == 0.0 {
            return;
        }
        kkt.factor(&weight, opts);
        let (dx, _) = kkt.solve(a, &vec![0.0; a.ncols], &residual(x), opts.refine_steps);
        if dx.iter().any(|v| !v.is_finite()) {
            return;
        }
        let mut clipped = false;
        let candidate: Vec<f64> = (0..x.len())
            .map(|j| {
                let v = x[j] + dx[j];
                let mut c = v;
                if has_l[j] {
                    c = c.max(p.l[j].min(x[j]));
                }
                if has_u[j] {
                    c = c.min(p.u[j].max(x[j]));
                }
                if c != v {
                    weight[j] = POLISH_PIN_WEIGHT;
                    clipped = true;
                }
                c
            })
            .collect();
        let after = norm_inf(&residual(&candidate));
        if after < best {
            best = after;
            x.copy_from_slice(&candidate);
        } else if !clipped {
            return;
        }
    }
}

pub(crate) fn run(p: &IpmProblem, opts: &SolverOptions) -> Result<IpmOutput, SolverError> {
    let a = &p.a;
    let (m, n) = (a.nrows, a.ncols);
    let has_l: Vec<bool> = p.l.iter().map(|v| v.is_finite()).collect();
    let has_u: Vec<bool> = p.u.iter().map(|v| v.is_finite()).collect();
    let npairs = has_l.iter().filter(|&&b| b).count() + has_u.iter().filter(|&&b| b).count();

    let bnorm = norm_inf(&p.b)
        .max(p.l.iter().filter(|v| v.is_finite()).fold(0.0f64, |m, v| m.max(v.abs())))
        .max(p.u.iter().filter(|v| v.is_finite()).fold(0.0f64, |m, v| m.max(v.abs())));
    let cnorm = norm_inf(&p.c);

    let mut kkt = Kkt::new(a);

    // Starting point from least-squares solves with D = I.
    kkt.factor(&vec![1.0; n], opts);
    let (xt, _) = kkt.solve(a, &vec![0.0; n], &p.b, opts.refine_steps);
    let (neg_z, y0) = kkt.solve(a, &p.c, &vec![0.0; m], opts.refine_steps);
    let zt: Vec<f64> = neg_z.iter().map(|v| -v).collect();

    let mut x = xt;
    let mut y = y0;
    let mut pl = vec![0.0; n];
    let mut qu = vec![0.0; n];
    let mut zl = vec![0.0; n];
    let mut zu = vec![0.0; n];
    for j in 0..n {
        if has_l[j] {
            pl[j] = x[j] - p.l[j];
        }
        if has_u[j] {
            qu[j] = p.u[j] - x[j];
        }
        match (has_l[j], has_u[j]) {
            (true, true) => {
                zl[j] = 0.5 * zt[j];
                zu[j] = -0.5 * zt[j];
            }
            (true, false) => zl[j] = zt[j],
            (false, true) => zu[j] = -zt[j],
            (false, false) => {}
        }
    }
    if npairs > 0 {
        let fold_min = |v: &[f64], mask: &[bool]| {
            v.iter().zip(mask).filter(|(_, &b)| b).fold(f64::INFINITY, |acc, (x, _)| acc.min(*x))
        };
        let min_x = fold_min(&pl, &has_l).min(fold_min(&qu, &has_u));
        let min_z = fold_min(&zl, &has_l).min(fold_min(&zu, &has_u));
        let dx = (-1.5 * min_x).max(0.0);
        let dz = (-1.5 * min_z).max(0.0);
        for j in 0..n {
            if has_l[j] {
                pl[j] += dx;
                zl[j] += dz;
            }
            if has_u[j] {
                qu[j] += dx;
                zu[j] += dz;
            }
        }
        let xz: f64 = (0..n).map(|j| pl[j] * zl[j] + qu[j] * zu[j]).sum();
        let sx: f64 = (0..n).map(|j| pl[j] + qu[j]).sum();
        let sz: f64 = (0..n).map(|j| zl[j] + zu[j]).sum();
        let (hx, hz) = if xz > 0.0 && sx > 0.0 && sz > 0.0 { (0.5 * xz / sz, 0.5 * xz / sx) } else { (1.0, 1.0) };
        for j in 0..n {
            if has_l[j] {
                pl[j] = (pl[j] + hx).max(1e-8);
                zl[j] = (zl[j] + hz).max(1e-8);
            }
            if has_u[j] {
                qu[j] = (qu[j] + hx).max(1e-8);
                zu[j] = (zu[j] + hz).max(1e-8);
            }
        }
    }

    let mut history = Vec::new();
    let mut status = IpmStatus::IterationLimit;
    let mut iterations = 0;
    let mut d = vec![0.0; n];
    let mut r1 = vec![0.0; n];

    for iter in 0..=opts.max_iter {
        // residuals
        let ax = a.mul_vec(&x);
        let r_p: Vec<f64> = (0..m).map(|i| p.b[i] - ax[i]).collect();
        let r_pl: Vec<f64> = (0..n).map(|j| if has_l[j] { p.l[j] - x[j] + pl[j] } else { 0.0 }).collect();
        let r_pu: Vec<f64> = (0..n).map(|j| if has_u[j] { p.u[j] - x[j] - qu[j] } else { 0.0 }).collect();
        let mut r_d = p.c.clone();
        let aty = a.mul_t(&y);
        for j in 0..n {
            r_d[j] -= aty[j] + zl[j] - zu[j];
        }
        let comp: f64 = (0..n).map(|j| pl[j] * zl[j] + qu[j] * zu[j]).sum();
        let mu = if npairs > 0 { comp / npairs as f64 } else { 0.0 };

        let pobj = dot(&p.c, &x);
        let dobj = dot(&p.b, &y)
            + (0..n)
                .map(|j| (if has_l[j] { p.l[j] * zl[j] } else { 0.0 }) - (if has_u[j] { p.u[j] * zu[j] } else { 0.0 }))
                .sum::<f64>();
        let pres = norm_inf(&r_p).max(norm_inf(&r_pl)).max(norm_inf(&r_pu)) / (1.0 + bnorm);
        let dres = norm_inf(&r_d) / (1.0 + cnorm);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs());
        history.push(IterateLog {
            primal_objective: pobj,
            dual_objective: dobj,
            primal_residual: pres,
            dual_residual: dres,
            mu,
        });
        iterations = iter;

        if !(pres.is_finite() && dres.is_finite() && gap.is_finite()) {
            return Err(SolverError::NumericalBreakdown(format!("non-finite residual at iteration {iter}")));
        }
        if pres <= opts.tol && dres <= opts.tol && gap <= opts.tol {
            status = IpmStatus::Optimal;
            if iter > 0 {
                polish(&mut kkt, p, opts, &mut x, &has_l, &has_u);
            }
            break;
        }
        let big = 1e12;
        if norm_inf(&x) > big * (1.0 + bnorm)
            || norm_inf(&y) > big * (1.0 + cnorm)
            || mu > big * (1.0 + bnorm) * (1.0 + cnorm)
        {
            status = IpmStatus::Diverged;
            break;
        }
        if iter == opts.max_iter {
            break;
        }

        for j in 0..n {
            d[j] = (if has_l[j] { zl[j] / pl[j] } else { 0.0 }) + (if has_u[j] { zu[j] / qu[j] } else { 0.0 });
        }
        kkt.factor(&d, opts);

        // Newton direction for given complementarity targets rl, ru.
        let direction = |rl: &[f64], ru: &[f64], r1: &mut Vec<f64>| {
            for j in 0..n {
                let mut v = r_d[j];
                if has_l[j] {
                    v -= (rl[j] + zl[j] * r_pl[j]) / pl[j];
                }
                if has_u[j] {
                    v += (ru[j] - zu[j] * r_pu[j]) / qu[j];
                }
                r1[j] = v;
            }
            let (dx, dy) = kkt.solve(a, r1, &r_p, opts.refine_steps);
            let mut dp = vec![0.0; n];
            let mut dq = vec![0.0; n];
            let mut dzl = vec![0.0; n];
            let mut dzu = vec![0.0; n];
            for j in 0..n {
                if has_l[j] {
                    dp[j] = dx[j] - r_pl[j];
                    dzl[j] = (rl[j] - zl[j] * dp[j]) / pl[j];
                }
                if has_u[j] {
                    dq[j] = r_pu[j] - dx[j];
                    dzu[j] = (ru[j] - zu[j] * dq[j]) / qu[j];
                }
            }
            (dx, dy, dp, dq, dzl, dzu)
        };

        // predictor
        let rl: Vec<f64> = (0..n).map(|j| -pl[j] * zl[j]).collect();
        let ru: Vec<f64> = (0..n).map(|j| -qu[j] * zu[j]).collect();
        let (_, _, dp_a, dq_a, dzl_a, dzu_a) = direction(&rl, &ru, &mut r1);
        let ap = max_step(&pl, &dp_a, &has_l).min(max_step(&qu, &dq_a, &has_u));
        let ad = max_step(&zl, &dzl_a, &has_l).min(max_step(&zu, &dzu_a, &has_u));
        let sigma = if npairs > 0 && mu > 0.0 {
            let mu_aff: f64 = (0..n)
                .map(|j| {
                    (pl[j] + ap * dp_a[j]) * (zl[j] + ad * dzl_a[j]) + (qu[j] + ap * dq_a[j]) * (zu[j] + ad * dzu_a[j])
                })
                .sum::<f64>()
                / npairs as f64;
            (mu_aff / mu).clamp(0.0, 1.0).powi(3)
        } else {
            0.0
        };

        // corrector
        let rl: Vec<f64> =
            (0..n).map(|j| if has_l[j] { sigma * mu - pl[j] * zl[j] - dp_a[j] * dzl_a[j] } else { 0.0 }).collect();
        let ru: Vec<f64> =
            (0..n).map(|j| if has_u[j] { sigma * mu - qu[j] * zu[j] - dq_a[j] * dzu_a[j] } else { 0.0 }).collect();
        let (dx, dy, dp, dq, dzl, dzu) = direction(&rl, &ru, &mut r1);
        if dx.iter().chain(&dy).any(|v| !v.is_finite()) {
            return Err(SolverError::NumericalBreakdown(format!("non-finite Newton step at iteration {iter}")));
        }
        // stay strictly inside: once mu underflows, 1 - mu rounds to one and
        // a full step would land iterates exactly on their bounds
        let frac = (1.0 - mu.min(0.005)).clamp(0.995, MAX_STEP_FRACTION);
        let ap = (frac * max_step(&pl, &dp, &has_l).min(max_step(&qu, &dq, &has_u))).min(1.0);
        let ad = (frac * max_step(&zl, &dzl, &has_l).min(max_step(&zu, &dzu, &has_u))).min(1.0);

        for j in 0..n {
            x[j] += ap * dx[j];
            if has_l[j] {
                pl[j] += ap * dp[j];
                zl[j] += ad * dzl[j];
            }
            if has_u[j] {
                qu[j] += ap * dq[j];
                zu[j] += ad * dzu[j];
            }
        }
        for i in 0..m {
            y[i] += ad * dy[i];
        }
    }

    Ok(IpmOutput { x, y, zl, zu, status, iterations, history })
}
