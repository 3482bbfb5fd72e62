use crate::error::{Error, Result};

/// Square matrix with `bw` sub- and super-diagonals, stored by rows.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandMatrix { n, bw, data: vec![0.0; n * (2 * bw + 1)] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i.abs_diff(j) <= self.bw, "entry ({i},{j}) outside band {}", self.bw);
        i * (2 * self.bw + 1) + (j + self.bw - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// Replace row and column `i` by the identity (Dirichlet condition).
    pub fn pin(&mut self, i: usize) {
        let lo = i.saturating_sub(self.bw);
        let hi = (i + self.bw).min(self.n - 1);
        for j in lo..=hi {
            let a = self.idx(i, j);
            self.data[a] = 0.0;
            let b = self.idx(j, i);
            self.data[b] = 0.0;
        }
        let d = self.idx(i, i);
        self.data[d] = 1.0;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.bw);
                let hi = (i + self.bw).min(self.n - 1);
                (lo..=hi).map(|j| self.data[self.idx(i, j)] * x[j]).sum()
            })
            .collect()
    }

    /// Solve `A x = b` by banded Gaussian elimination without pivoting.
    ///
    /// Intended for the symmetric positive definite systems of the solver; a
    /// vanishing or non-finite pivot is reported as a singular system.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let bw = self.bw;
        let mut a = self.data.clone();
        let mut x = b.to_vec();
        let w = 2 * bw + 1;
        let at = |i: usize, j: usize| i * w + (j + bw - i);
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for k in 0..n {
            let pivot = a[at(k, k)];
            if !pivot.is_finite() || pivot.abs() <= 1e-300 * scale {
                return Err(Error::SingularSystem { row: k, pivot });
            }
            let hi = (k + bw).min(n - 1);
            for i in k + 1..=hi {
                let f = a[at(i, k)] / pivot;
                if f == 0.0 {
                    continue;
                }
                for j in k..=hi {
                    a[at(i, j)] -= f * a[at(k, j)];
                }
                x[i] -= f * x[k];
            }
        }
        for k in (0..n).rev() {
            let hi = (k + bw).min(n - 1);
            let mut s = x[k];
            for j in k + 1..=hi {
                s -= a[at(k, j)] * x[j];
            }
            x[k] = s / a[at(k, k)];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem { row: n, pivot: f64::NAN });
        }
        Ok(x)
    }
}
