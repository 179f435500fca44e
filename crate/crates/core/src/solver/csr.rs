/// Compressed sparse row matrix with sorted, duplicate-free column indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl CsrMatrix {
    pub fn empty(ncols: usize) -> Self {
        CsrMatrix { nrows: 0, ncols, indptr: vec![0], indices: vec![], data: vec![] }
    }

    /// Builds from per-row coefficient lists. Duplicates are summed and exact
    /// zeros dropped.
    pub fn from_rows(ncols: usize, rows: &[Vec<(usize, f64)>]) -> Self {
        let mut m = CsrMatrix::empty(ncols);
        for row in rows {
            m.push_row(row);
        }
        m
    }

    pub fn push_row(&mut self, row: &[(usize, f64)]) {
        let mut entries: Vec<(usize, f64)> = row.to_vec();
        entries.sort_by_key(|e| e.0);
        let mut last: Option<usize> = None;
        let start = self.indices.len();
        for (j, v) in entries {
            assert!(j < self.ncols, "column {j} out of range {}", self.ncols);
            if last == Some(j) {
                *self.data.last_mut().unwrap() += v;
            } else {
                self.indices.push(j);
                self.data.push(v);
                last = Some(j);
            }
        }
        // drop cancelled entries
        let mut w = start;
        for r in start..self.indices.len() {
            if self.data[r] != 0.0 {
                self.indices[w] = self.indices[r];
                self.data[w] = self.data[r];
                w += 1;
            }
        }
        self.indices.truncate(w);
        self.data.truncate(w);
        self.indptr.push(w);
        self.nrows += 1;
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.data[r].iter().copied())
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.indptr[i + 1] - self.indptr[i]
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    /// `out += A^T y`
    pub fn mul_t_acc(&self, y: &[f64], out: &mut [f64]) {
        for (i, &yi) in y.iter().enumerate().take(self.nrows) {
            if yi == 0.0 {
                continue;
            }
            for (j, v) in self.row(i) {
                out[j] += v * yi;
            }
        }
    }

    pub fn mul_t(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        self.mul_t_acc(y, &mut out);
        out
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.indptr[i]..self.indptr[i + 1];
        match self.indices[r.clone()].binary_search(&j) {
            Ok(k) => self.data[r.start + k],
            Err(_) => 0.0,
        }
    }
}

pub(crate) fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_summed_and_zeros_dropped() {
        let m = CsrMatrix::from_rows(3, &[vec![(2, 1.0), (0, 2.0), (2, 3.0)], vec![(1, 1.0), (1, -1.0)]]);
        assert_eq!(m.row(0).collect::<Vec<_>>(), vec![(0, 2.0), (2, 4.0)]);
        assert_eq!(m.row_nnz(1), 0);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 1.0]), vec![6.0, 0.0]);
        assert_eq!(m.mul_t(&[1.0, 5.0]), vec![2.0, 0.0, 4.0]);
        assert_eq!(m.get(0, 2), 4.0);
        assert_eq!(m.get(0, 1), 0.0);
    }
}
