//! Brute-force LP oracle: enumerates basic feasible points and extreme rays
//! of small problems whose variables all have finite lower bounds.

use bessplan::solver::StandardLp;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleOutcome {
    Optimal(f64),
    Infeasible,
    Unbounded,
}

fn combinations(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let Some(i) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

struct Dense {
    eq: Vec<(Vec<f64>, f64)>,
    le: Vec<(Vec<f64>, f64)>,
    infeasible_empty: bool,
}

fn densify(lp: &StandardLp) -> Dense {
    let n = lp.n();
    let row = |m: &bessplan::solver::CsrMatrix, i: usize| {
        let mut r = vec![0.0; n];
        for (j, v) in m.row(i) {
            r[j] = v;
        }
        r
    };
    // An empty equality row is either vacuous or makes the problem infeasible.
    let mut infeasible_empty = false;
    let eq = (0..lp.b_eq.len())
        .filter(|&i| {
            let empty = lp.a_eq.row_nnz(i) == 0;
            if empty && lp.b_eq[i].abs() > 1e-12 {
                infeasible_empty = true;
            }
            !empty
        })
        .map(|i| (row(&lp.a_eq, i), lp.b_eq[i]))
        .collect();
    let mut le: Vec<(Vec<f64>, f64)> = (0..lp.b_in.len()).map(|i| (row(&lp.a_in, i), lp.b_in[i])).collect();
    for j in 0..n {
        let mut e = vec![0.0; n];
        if lp.lower[j].is_finite() {
            e[j] = -1.0;
            le.push((e.clone(), -lp.lower[j]));
        }
        if lp.upper[j].is_finite() {
            e[j] = 1.0;
            le.push((e, lp.upper[j]));
        }
    }
    Dense { eq, le, infeasible_empty }
}

/// Exact optimum of a pointed LP by vertex and extreme-ray enumeration.
pub fn vertex_oracle(lp: &StandardLp) -> OracleOutcome {
    let n = lp.n();
    assert!(lp.lower.iter().all(|v| v.is_finite()), "oracle needs a pointed feasible set");
    let d = densify(lp);
    if d.infeasible_empty {
        return OracleOutcome::Infeasible;
    }
    let me = d.eq.len();
    if me > n {
        // overdetermined: fall back to enumerating subsets of the equalities
        // is unnecessary for the generator, which keeps me <= n
        panic!("more equalities than variables");
    }
    let feas = |x: &DVector<f64>| {
        d.eq.iter()
            .all(|(a, b)| (a.iter().zip(x.iter()).map(|(p, q)| p * q).sum::<f64>() - b).abs() <= 1e-8 * (1.0 + b.abs()))
            && d.le
                .iter()
                .all(|(a, b)| a.iter().zip(x.iter()).map(|(p, q)| p * q).sum::<f64>() <= b + 1e-8 * (1.0 + b.abs()))
    };
    let mut best = f64::INFINITY;
    combinations(d.le.len(), n - me, |s| {
        let mut m = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        for (r, (a, b)) in d.eq.iter().chain(s.iter().map(|&i| &d.le[i])).enumerate() {
            for j in 0..n {
                m[(r, j)] = a[j];
            }
            rhs[r] = *b;
        }
        let svd = m.clone().svd(false, false);
        let sv = &svd.singular_values;
        if sv.min() <= 1e-9 * sv.max().max(1.0) {
            return;
        }
        if let Some(x) = m.lu().solve(&rhs) {
            if feas(&x) {
                let obj: f64 = lp.c.iter().zip(x.iter()).map(|(c, v)| c * v).sum();
                best = best.min(obj);
            }
        }
    });
    if !best.is_finite() {
        return OracleOutcome::Infeasible;
    }

    // Extreme rays of the recession cone.
    let cone: Vec<&Vec<f64>> = d.le.iter().map(|(a, _)| a).collect();
    let in_cone = |v: &DVector<f64>| {
        d.eq.iter().all(|(a, _)| a.iter().zip(v.iter()).map(|(p, q)| p * q).sum::<f64>().abs() <= 1e-9)
            && cone.iter().all(|a| a.iter().zip(v.iter()).map(|(p, q)| p * q).sum::<f64>() <= 1e-9)
    };
    let mut unbounded = false;
    if me < n {
        combinations(cone.len(), n - 1 - me, |s| {
            if unbounded {
                return;
            }
            let rows = n - 1;
            let mut m = DMatrix::zeros(n, n);
            for (r, a) in d.eq.iter().map(|(a, _)| a).chain(s.iter().map(|&i| cone[i])).enumerate() {
                for j in 0..n {
                    m[(r, j)] = a[j];
                }
            }
            let svd = m.svd(false, true);
            let vt = svd.v_t.unwrap();
            let sv = &svd.singular_values;
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).unwrap());
            if rows > 0 && sv[order[rows - 1]] <= 1e-9 * sv[order[0]].max(1.0) {
                return;
            }
            let k = order[n - 1];
            let dir: DVector<f64> = vt.row(k).transpose();
            for sign in [1.0, -1.0] {
                let v = &dir * sign;
                if in_cone(&v) {
                    let cd: f64 = lp.c.iter().zip(v.iter()).map(|(c, x)| c * x).sum();
                    if cd < -1e-9 {
                        unbounded = true;
                    }
                }
            }
        });
    }
    if unbounded {
        OracleOutcome::Unbounded
    } else {
        OracleOutcome::Optimal(best + lp.offset)
    }
}

fn coef(rng: &mut impl Rng) -> f64 {
    if rng.random_bool(0.3) {
        0.0
    } else {
        (rng.random_range(-30..=30) as f64) / 10.0
    }
}

/// Random small LP with nonnegative variables, some finite upper bounds,
/// up to two equalities and up to `max_rows` rows in total.
pub fn random_lp(rng: &mut impl Rng, max_vars: usize, max_rows: usize) -> StandardLp {
    let n = rng.random_range(1..=max_vars);
    let me = rng.random_range(0..=2usize.min(n - 1).min(max_rows));
    let mi = rng.random_range(0..=(max_rows - me));
    let c: Vec<f64> = (0..n).map(|_| coef(rng)).collect();
    let mut lp = StandardLp::new(c);
    for j in 0..n {
        if rng.random_bool(0.5) {
            lp.upper[j] = rng.random_range(1..=5) as f64;
        }
    }
    // Equalities pass through a random point of the box so most are feasible.
    let x0: Vec<f64> = (0..n).map(|j| rng.random_range(0.0..lp.upper[j].min(3.0))).collect();
    for _ in 0..me {
        let row: Vec<(usize, f64)> = (0..n).map(|j| (j, coef(rng))).collect();
        let rhs: f64 = row.iter().map(|&(j, v)| v * x0[j]).sum();
        lp.add_eq(&row, (rhs * 10.0).round() / 10.0);
    }
    for _ in 0..mi {
        let row: Vec<(usize, f64)> = (0..n).map(|j| (j, coef(rng))).collect();
        let rhs = (rng.random_range(-20..=40) as f64) / 10.0;
        lp.add_le(&row, rhs);
    }
    lp
}
