//! Sparse `L D L^T` factorization for symmetric quasi-definite systems.
//!
//! Up-looking algorithm over the elimination tree, with a minimum-degree
//! fill-reducing ordering. Pivots whose sign disagrees with the expected
//! inertia are replaced by a small regularization of the right sign.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

const NONE: usize = usize::MAX;

/// Upper triangle (diagonal included) of a symmetric matrix, column major.
#[derive(Debug, Clone)]
pub struct SymmetricPattern {
    pub n: usize,
    pub colptr: Vec<usize>,
    pub rowidx: Vec<usize>,
}

/// Minimum-degree ordering on the adjacency graph of the pattern.
/// Returns `perm` with `perm[k]` the original index eliminated k-th.
pub fn minimum_degree(pattern: &SymmetricPattern) -> Vec<usize> {
    let n = pattern.n;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for j in 0..n {
        for &i in &pattern.rowidx[pattern.colptr[j]..pattern.colptr[j + 1]] {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let mut eliminated = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> = (0..n).map(|i| Reverse((adj[i].len(), i))).collect();
    let mut perm = Vec::with_capacity(n);
    let mut merged = Vec::new();
    while let Some(Reverse((deg, v))) = heap.pop() {
        if eliminated[v] || deg != adj[v].len() {
            continue;
        }
        eliminated[v] = true;
        perm.push(v);
        let nbrs = std::mem::take(&mut adj[v]);
        for &u in &nbrs {
            // adj[u] <- (adj[u] \ {v}) ∪ (nbrs \ {u})
            merged.clear();
            let (a, b) = (&adj[u], &nbrs);
            let (mut p, mut q) = (0, 0);
            while p < a.len() || q < b.len() {
                let next = match (a.get(p), b.get(q)) {
                    (Some(&x), Some(&y)) if x == y => {
                        p += 1;
                        q += 1;
                        x
                    }
                    (Some(&x), Some(&y)) if x < y => {
                        p += 1;
                        x
                    }
                    (Some(_), Some(&y)) => {
                        q += 1;
                        y
                    }
                    (Some(&x), None) => {
                        p += 1;
                        x
                    }
                    (None, Some(&y)) => {
                        q += 1;
                        y
                    }
                    (None, None) => unreachable!(),
                };
                if next != u && next != v {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[u], &mut merged);
            heap.push(Reverse((adj[u].len(), u)));
        }
    }
    debug_assert_eq!(perm.len(), n);
    perm
}

/// Symbolic analysis: permuted pattern, elimination tree and column counts.
#[derive(Debug, Clone)]
pub struct LdlSymbolic {
    n: usize,
    perm: Vec<usize>,
    /// Permuted upper-triangular pattern.
    cp: Vec<usize>,
    ci: Vec<usize>,
    /// For each entry of the original pattern, its slot in the permuted one.
    amap: Vec<usize>,
    parent: Vec<usize>,
    lp: Vec<usize>,
}

impl LdlSymbolic {
    pub fn analyze(pattern: &SymmetricPattern, perm: Vec<usize>) -> Self {
        let n = pattern.n;
        let mut iperm = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            iperm[p] = k;
        }
        // count entries per permuted column
        let mut counts = vec![0usize; n];
        for j in 0..n {
            for &i in &pattern.rowidx[pattern.colptr[j]..pattern.colptr[j + 1]] {
                let (pi, pj) = (iperm[i], iperm[j]);
                counts[pi.max(pj)] += 1;
            }
        }
        let mut cp = vec![0usize; n + 1];
        for k in 0..n {
            cp[k + 1] = cp[k] + counts[k];
        }
        let mut next = cp.clone();
        let mut ci = vec![0usize; cp[n]];
        let mut amap = vec![0usize; pattern.rowidx.len()];
        for j in 0..n {
            for e in pattern.colptr[j]..pattern.colptr[j + 1] {
                let i = pattern.rowidx[e];
                let (pi, pj) = (iperm[i], iperm[j]);
                let (r, c) = (pi.min(pj), pi.max(pj));
                ci[next[c]] = r;
                amap[e] = next[c];
                next[c] += 1;
            }
        }

        let mut parent = vec![NONE; n];
        let mut flag = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for &i0 in &ci[cp[k]..cp[k + 1]] {
                let mut i = i0;
                if i < k {
                    while flag[i] != k {
                        if parent[i] == NONE {
                            parent[i] = k;
                        }
                        lnz[i] += 1;
                        flag[i] = k;
                        i = parent[i];
                    }
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + lnz[k];
        }
        LdlSymbolic { n, perm, cp, ci, amap, parent, lp }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz_l(&self) -> usize {
        self.lp[self.n]
    }
}

/// Numeric factor `P A P^T = L D L^T`.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    /// Number of pivots replaced by regularization in the last factorization.
    pub regularized_pivots: usize,
    // workspaces
    y: Vec<f64>,
    pattern: Vec<usize>,
    flag: Vec<usize>,
    lnz: Vec<usize>,
    cx: Vec<f64>,
}

impl LdlFactor {
    pub fn new(sym: &LdlSymbolic) -> Self {
        let n = sym.n;
        LdlFactor {
            li: vec![0; sym.nnz_l()],
            lx: vec![0.0; sym.nnz_l()],
            d: vec![0.0; n],
            regularized_pivots: 0,
            y: vec![0.0; n],
            pattern: vec![0; n],
            flag: vec![0; n],
            lnz: vec![0; n],
            cx: vec![0.0; sym.ci.len()],
        }
    }

    /// Factors the matrix whose original-pattern values are `values`.
    /// `signs[i]` is the expected pivot sign of original index `i`; a pivot
    /// with the wrong sign or magnitude below `pivot_tol` becomes
    /// `sign * pivot_reg`.
    pub fn factor(&mut self, sym: &LdlSymbolic, values: &[f64], signs: &[f64], pivot_tol: f64, pivot_reg: f64) {
        let n = sym.n;
        self.cx.iter_mut().for_each(|v| *v = 0.0);
        for (e, &v) in values.iter().enumerate() {
            self.cx[sym.amap[e]] += v;
        }
        self.regularized_pivots = 0;
        let (y, pattern, flag, lnz) = (&mut self.y, &mut self.pattern, &mut self.flag, &mut self.lnz);
        for k in 0..n {
            y[k] = 0.0;
            let mut top = n;
            flag[k] = k;
            lnz[k] = 0;
            for p in sym.cp[k]..sym.cp[k + 1] {
                let mut i = sym.ci[p];
                y[i] += self.cx[p];
                let mut len = 0;
                while flag[i] != k {
                    pattern[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = sym.parent[i];
                }
                while len > 0 {
                    top -= 1;
                    len -= 1;
                    pattern[top] = pattern[len];
                }
            }
            let mut dk = y[k];
            y[k] = 0.0;
            for &i in &pattern[top..n] {
                let yi = y[i];
                y[i] = 0.0;
                let p2 = sym.lp[i] + lnz[i];
                for p in sym.lp[i]..p2 {
                    y[self.li[p]] -= self.lx[p] * yi;
                }
                let l_ki = yi / self.d[i];
                dk -= l_ki * yi;
                self.li[p2] = k;
                self.lx[p2] = l_ki;
                lnz[i] += 1;
            }
            let s = signs[sym.perm[k]];
            if !(dk * s > pivot_tol) {
                dk = s * pivot_reg;
                self.regularized_pivots += 1;
            }
            self.d[k] = dk;
        }
    }

    /// Solves in place; `b` is indexed by original indices.
    pub fn solve(&self, sym: &LdlSymbolic, b: &mut [f64]) {
        let n = sym.n;
        let mut x: Vec<f64> = sym.perm.iter().map(|&p| b[p]).collect();
        for j in 0..n {
            let xj = x[j];
            for p in sym.lp[j]..sym.lp[j + 1] {
                x[self.li[p]] -= self.lx[p] * xj;
            }
        }
        for j in 0..n {
            x[j] /= self.d[j];
        }
        for j in (0..n).rev() {
            let mut xj = x[j];
            for p in sym.lp[j]..sym.lp[j + 1] {
                xj -= self.lx[p] * x[self.li[p]];
            }
            x[j] = xj;
        }
        for (k, &p) in sym.perm.iter().enumerate() {
            b[p] = x[k];
        }
    }
}
