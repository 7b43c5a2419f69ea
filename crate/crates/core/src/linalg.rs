//! Compressed sparse rows and a banded LU factorization for the implicit
//! stepping systems. Grids are small enough that a dense band is cheaper to
//! manage than a general sparse direct solver.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a square matrix from per-row `(column, value)` lists. Duplicate
    /// columns within a row are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                debug_assert!(c < n);
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows((0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(c, v)| v * x[c]).sum()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.n];
        for i in 0..self.n {
            for (c, v) in self.row(i) {
                rows[c].push((i, v));
            }
        }
        Self::from_rows(rows)
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &SparseMatrix, b: f64) -> Self {
        assert_eq!(self.n, other.n);
        let rows = (0..self.n)
            .map(|i| {
                self.row(i)
                    .map(|(c, v)| (c, a * v))
                    .chain(other.row(i).map(|(c, v)| (c, b * v)))
                    .collect()
            })
            .collect();
        Self::from_rows(rows)
    }

    /// Lower and upper bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for i in 0..self.n {
            for (c, v) in self.row(i) {
                if v == 0.0 {
                    continue;
                }
                if c < i {
                    kl = kl.max(i - c);
                } else {
                    ku = ku.max(c - i);
                }
            }
        }
        (kl, ku)
    }
}

/// LU factorization without pivoting of a banded matrix. The stepping
/// matrices `I - Δt·A` are diagonally dominant M-matrices at the step sizes in
/// use, so pivoting is not needed; a vanishing pivot is reported.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl BandedLu {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        let n = a.dim();
        let (kl, ku) = a.bandwidths();
        let width = kl + ku + 1;
        let mut data = vec![0.0; n * width];
        for i in 0..n {
            for (c, v) in a.row(i) {
                data[i * width + c + kl - i] += v;
            }
        }
        let at = |i: usize, j: usize| i * width + j + kl - i;
        let scale = data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for k in 0..n {
            let pivot = data[at(k, k)];
            if pivot.abs() <= 1e-14 * scale || !pivot.is_finite() {
                return Err(Error::SingularSystem { row: k });
            }
            let i_end = (k + kl).min(n - 1);
            let j_end = (k + ku).min(n - 1);
            for i in k + 1..=i_end {
                let l = data[at(i, k)] / pivot;
                if l == 0.0 {
                    continue;
                }
                data[at(i, k)] = l;
                for j in k + 1..=j_end {
                    data[at(i, j)] -= l * data[at(k, j)];
                }
            }
        }
        Ok(Self { n, kl, ku, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves in place.
    pub fn solve(&self, b: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let width = kl + ku + 1;
        let at = |i: usize, j: usize| i * width + j + kl - i;
        for i in 0..n {
            let start = i.saturating_sub(kl);
            let mut s = b[i];
            for j in start..i {
                s -= self.data[at(i, j)] * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let end = (i + ku).min(n - 1);
            let mut s = b[i];
            for j in i + 1..=end {
                s -= self.data[at(i, j)] * b[j];
            }
            b[i] = s / self.data[at(i, i)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_entries_are_summed() {
        let m = SparseMatrix::from_rows(vec![vec![(0, 1.0), (0, 2.0)], vec![(1, 1.0)]]);
        assert_eq!(m.get(0, 0), 3.0);
    }

    #[test]
    fn banded_solve_matches_dense_product() {
        // pentadiagonal, diagonally dominant
        let n = 12;
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, 6.0 + i as f64 * 0.1)];
                for (d, v) in [(1usize, -1.0), (2, 0.5)] {
                    if i >= d {
                        r.push((i - d, v));
                    }
                    if i + d < n {
                        r.push((i + d, -0.7 * v));
                    }
                }
                r
            })
            .collect();
        let a = SparseMatrix::from_rows(rows);
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b = a.matvec(&x);
        BandedLu::factor(&a).unwrap().solve(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-13);
        }
    }

    #[test]
    fn transpose_roundtrip() {
        let a = SparseMatrix::from_rows(vec![vec![(1, 2.0)], vec![(0, 3.0), (1, 1.0)]]);
        let t = a.transpose();
        assert_eq!(t.get(1, 0), 2.0);
        assert_eq!(t.get(0, 1), 3.0);
        assert_eq!(t.transpose(), a);
    }

    #[test]
    fn zero_pivot_reported() {
        let a = SparseMatrix::from_rows(vec![vec![(1, 1.0)], vec![(0, 1.0)]]);
        assert!(matches!(BandedLu::factor(&a), Err(Error::SingularSystem { row: 0 })));
    }
}
