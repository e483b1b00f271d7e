//! Orthonormal DCT-II.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_traits::Float;

/// Precomputed orthonormal DCT-II basis; row `k` holds `s(k)·cos(πk(2n+1)/2N)`.
#[derive(Debug, Clone)]
pub struct Dct2 {
    n: usize,
    basis: Vec<f64>,
}

impl Dct2 {
    pub fn new(n: usize) -> Self {
        let mut basis = Vec::with_capacity(n * n);
        for k in 0..n {
            let s = if k == 0 { Float::sqrt(1.0 / n as f64) } else { Float::sqrt(2.0 / n as f64) };
            for i in 0..n {
                basis.push(s * Float::cos(PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64));
            }
        }
        Self { n, basis }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// First `keep` coefficients of the transform of `x`.
    pub fn forward(&self, x: &[f64], keep: usize) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..keep.min(self.n))
            .map(|k| {
                let row = &self.basis[k * self.n..(k + 1) * self.n];
                row.iter().zip(x).map(|(b, v)| b * v).sum()
            })
            .collect()
    }

    /// Transpose of the basis; inverts [`Dct2::forward`] when all coefficients are kept.
    pub fn inverse(&self, c: &[f64]) -> Vec<f64> {
        assert_eq!(c.len(), self.n);
        (0..self.n)
            .map(|i| (0..self.n).map(|k| self.basis[k * self.n + i] * c[k]).sum())
            .collect()
    }
}

/// Orthonormal DCT-II of the whole input.
pub fn dct2(x: &[f64]) -> Vec<f64> {
    Dct2::new(x.len()).forward(x, x.len())
}
