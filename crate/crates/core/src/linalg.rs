//! Small dense linear algebra: LU factorization with partial pivoting.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Row-major LU factors of a square matrix, `P A = L U`.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    factors: Vec<f64>,
    pivots: Vec<usize>,
}

impl Lu {
    /// Factorizes the `n x n` row-major matrix `a`.
    ///
    /// A pivot smaller than `1e-13` times the largest entry of `a` is
    /// reported as singular.
    pub fn factor(n: usize, mut a: Vec<f64>) -> Result<Self> {
        assert_eq!(a.len(), n * n, "matrix must be n x n");
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let threshold = 1e-13 * scale.max(f64::MIN_POSITIVE);
        let mut pivots = Vec::with_capacity(n);
        for k in 0..n {
            let (mut best, mut best_abs) = (k, a[k * n + k].abs());
            for r in (k + 1)..n {
                let v = a[r * n + k].abs();
                if v > best_abs {
                    best = r;
                    best_abs = v;
                }
            }
            if best_abs <= threshold || !best_abs.is_finite() {
                return Err(Error::Numerical(alloc::format!("singular matrix (pivot {best_abs:e} in column {k})")));
            }
            pivots.push(best);
            if best != k {
                for c in 0..n {
                    a.swap(k * n + c, best * n + c);
                }
            }
            let diag = a[k * n + k];
            for r in (k + 1)..n {
                let f = a[r * n + k] / diag;
                if f == 0.0 {
                    continue;
                }
                a[r * n + k] = f;
                for c in (k + 1)..n {
                    a[r * n + c] -= f * a[k * n + c];
                }
            }
        }
        Ok(Self { n, factors: a, pivots })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        for (k, &p) in self.pivots.iter().enumerate() {
            if p != k {
                b.swap(k, p);
            }
        }
        for r in 0..n {
            let mut s = b[r];
            for c in 0..r {
                s -= self.factors[r * n + c] * b[c];
            }
            b[r] = s;
        }
        for r in (0..n).rev() {
            let mut s = b[r];
            for c in (r + 1)..n {
                s -= self.factors[r * n + c] * b[c];
            }
            b[r] = s / self.factors[r * n + r];
        }
    }

    /// Solves `x^T A = b^T`, i.e. `A^T x = b`, in place.
    pub fn solve_transpose_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        // U^T y = b
        for r in 0..n {
            let mut s = b[r];
            for c in 0..r {
                s -= self.factors[c * n + r] * b[c];
            }
            b[r] = s / self.factors[r * n + r];
        }
        // L^T z = y
        for r in (0..n).rev() {
            let mut s = b[r];
            for c in (r + 1)..n {
                s -= self.factors[c * n + r] * b[c];
            }
            b[r] = s;
        }
        for (k, &p) in self.pivots.iter().enumerate().rev() {
            if p != k {
                b.swap(k, p);
            }
        }
    }
}

/// Solves a single dense system.
pub fn solve(n: usize, a: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    Lu::factor(n, a)?.solve_in_place(&mut b);
    Ok(b)
}
