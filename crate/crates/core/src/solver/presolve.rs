//! Light presolve: singleton inequality rows become bounds and fixed columns
//! are substituted out, repeatedly until neither rule applies; rows left
//! empty are checked and dropped. Postsolve maps the reduced iterate back and attributes bound duals to the
//! rows that produced the bounds.

use super::csr::{dot, CsrMatrix};
use super::ipm::{IpmOutput, IpmProblem};
use super::{KktReport, SolveResult, SolveStatus, StandardLp};

const FEAS_TOL: f64 = 1e-9;

pub(super) enum Outcome {
    Infeasible,
    Reduced(Box<Presolved>),
}

pub(super) struct Presolved {
    pub problem: IpmProblem,
    /// Reduced column -> original column.
    cols: Vec<usize>,
    /// Original column -> fixed value, if substituted out.
    fixed: Vec<Option<f64>>,
    /// Substituted columns in the order they were fixed.
    fix_order: Vec<usize>,
    eq_rows: Vec<usize>,
    in_rows: Vec<usize>,
    /// Singleton row `(row, coefficient)` that supplies the active bound.
    lower_src: Vec<Option<(usize, f64)>>,
    upper_src: Vec<Option<(usize, f64)>>,
}

pub(super) fn presolve(lp: &StandardLp) -> Outcome {
    let n = lp.n();
    let mut lower = lp.lower.clone();
    let mut upper = lp.upper.clone();
    let mut lower_src = vec![None; n];
    let mut upper_src = vec![None; n];
    let mut row_is_bound = vec![false; lp.b_in.len()];
    let mut fixed: Vec<Option<f64>> = vec![None; n];
    let mut fix_order = Vec::new();

    // Substituting a fixed column can leave another inequality with a single
    // free entry, so bounds and fixings are propagated to a fixed point.
    loop {
        let mut changed = false;
        for i in 0..lp.b_in.len() {
            if row_is_bound[i] {
                continue;
            }
            let mut free = lp.a_in.row(i).filter(|&(j, _)| fixed[j].is_none());
            let (Some((j, a)), None) = (free.next(), free.next()) else { continue };
            let rest: f64 = lp.a_in.row(i).filter_map(|(k, v)| fixed[k].map(|x| v * x)).sum();
            let bound = (lp.b_in[i] - rest) / a;
            row_is_bound[i] = true;
            changed = true;
            if a > 0.0 {
                if bound < upper[j] {
                    upper[j] = bound;
                    upper_src[j] = Some((i, a));
                }
            } else if bound > lower[j] {
                lower[j] = bound;
                lower_src[j] = Some((i, a));
            }
        }
        for j in 0..n {
            if fixed[j].is_some() {
                continue;
            }
            let scale = 1.0 + lower[j].abs().max(upper[j].abs());
            if lower[j] > upper[j] + FEAS_TOL * scale {
                return Outcome::Infeasible;
            }
            if lower[j] >= upper[j] {
                fixed[j] = Some(if lp.lower[j] == lp.upper[j] { lp.lower[j] } else { 0.5 * (lower[j] + upper[j]) });
                fix_order.push(j);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let cols: Vec<usize> = (0..n).filter(|&j| fixed[j].is_none()).collect();
    let mut col_new = vec![usize::MAX; n];
    for (k, &j) in cols.iter().enumerate() {
        col_new[j] = k;
    }

    let reduce_row = |row: &mut dyn Iterator<Item = (usize, f64)>, rhs: f64| {
        let mut entries = Vec::new();
        let mut r = rhs;
        for (j, v) in row {
            match fixed[j] {
                Some(val) => r -= v * val,
                None => entries.push((col_new[j], v)),
            }
        }
        (entries, r)
    };

    let nr = cols.len();
    let mut eq_rows = Vec::new();
    let mut in_rows = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut b = Vec::new();
    for i in 0..lp.b_eq.len() {
        let (entries, r) = reduce_row(&mut lp.a_eq.row(i), lp.b_eq[i]);
        if entries.is_empty() {
            if r.abs() > FEAS_TOL * (1.0 + lp.b_eq[i].abs()) {
                return Outcome::Infeasible;
            }
            continue;
        }
        eq_rows.push(i);
        rows.push(entries);
        b.push(r);
    }
    for i in 0..lp.b_in.len() {
        if row_is_bound[i] {
            continue;
        }
        let (entries, r) = reduce_row(&mut lp.a_in.row(i), lp.b_in[i]);
        if entries.is_empty() {
            if r < -FEAS_TOL * (1.0 + lp.b_in[i].abs()) {
                return Outcome::Infeasible;
            }
            continue;
        }
        in_rows.push(i);
        rows.push(entries);
        b.push(r);
    }
    // one slack column per kept inequality
    let me = eq_rows.len();
    let ntot = nr + in_rows.len();
    for (k, row) in rows.iter_mut().enumerate().skip(me) {
        row.push((nr + k - me, 1.0));
    }
    let a = CsrMatrix::from_rows(ntot, &rows);
    let mut c: Vec<f64> = cols.iter().map(|&j| lp.c[j]).collect();
    let mut l: Vec<f64> = cols.iter().map(|&j| lower[j]).collect();
    let mut u: Vec<f64> = cols.iter().map(|&j| upper[j]).collect();
    c.resize(ntot, 0.0);
    l.resize(ntot, 0.0);
    u.resize(ntot, f64::INFINITY);

    Outcome::Reduced(Box::new(Presolved {
        problem: IpmProblem { a, b, c, l, u },
        cols,
        fixed,
        fix_order,
        eq_rows,
        in_rows,
        lower_src,
        upper_src,
    }))
}

impl Presolved {
    pub fn postsolve(&self, lp: &StandardLp, out: &IpmOutput) -> SolveResult {
        let n = lp.n();
        let mut x = vec![0.0; n];
        let mut z_lower = vec![0.0; n];
        let mut z_upper = vec![0.0; n];
        for (k, &j) in self.cols.iter().enumerate() {
            x[j] = out.x[k];
            z_lower[j] = out.zl[k];
            z_upper[j] = out.zu[k];
        }
        for j in 0..n {
            if let Some(v) = self.fixed[j] {
                x[j] = v;
            }
        }
        let mut y_eq = vec![0.0; lp.b_eq.len()];
        for (k, &i) in self.eq_rows.iter().enumerate() {
            y_eq[i] = out.y[k];
        }
        let me = self.eq_rows.len();
        let mut y_in = vec![0.0; lp.b_in.len()];
        for (k, &i) in self.in_rows.iter().enumerate() {
            y_in[i] = -out.y[me + k];
        }

        // Bounds that came from singleton rows hand their duals to the rows.
        let hand_over = |j: usize, zl: f64, zu: f64, y_in: &mut [f64], z_lower: &mut [f64], z_upper: &mut [f64]| {
            match self.lower_src[j] {
                Some((i, a)) => y_in[i] += zl / -a,
                None => z_lower[j] += zl,
            }
            match self.upper_src[j] {
                Some((i, a)) => y_in[i] += zu / a,
                None => z_upper[j] += zu,
            }
        };
        for &j in &self.cols {
            let (zl, zu) = (std::mem::take(&mut z_lower[j]), std::mem::take(&mut z_upper[j]));
            hand_over(j, zl, zu, &mut y_in, &mut z_lower, &mut z_upper);
        }
        // Substituted columns take their reduced cost from the rows, latest
        // fixing first: a row turned into a bound only after its other
        // columns were fixed, so its dual is complete before they are visited.
        for &j in self.fix_order.iter().rev() {
            let mut r = lp.c[j];
            for (i, v) in col_entries(&lp.a_eq, j) {
                r -= v * y_eq[i];
            }
            for (i, v) in col_entries(&lp.a_in, j) {
                r += v * y_in[i];
            }
            let (zl, zu) = if r >= 0.0 { (r, 0.0) } else { (0.0, -r) };
            hand_over(j, zl, zu, &mut y_in, &mut z_lower, &mut z_upper);
        }
        // Infinite original bounds carry no multiplier.
        for j in 0..n {
            if !lp.lower[j].is_finite() {
                z_lower[j] = 0.0;
            }
            if !lp.upper[j].is_finite() {
                z_upper[j] = 0.0;
            }
        }

        SolveResult {
            status: SolveStatus::Optimal,
            objective: dot(&lp.c, &x) + lp.offset,
            x,
            y_eq,
            y_in,
            z_lower,
            z_upper,
            iterations: out.iterations,
            history: out.history.clone(),
            kkt: KktReport::default(),
        }
    }
}

/// Entries `(row, value)` of column `j`.
fn col_entries(a: &CsrMatrix, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
    (0..a.nrows).filter_map(move |i| {
        let r = a.indptr[i]..a.indptr[i + 1];
        a.indices[r.clone()].binary_search(&j).ok().map(|k| (i, a.data[r.start + k]))
    })
}
