//! Finite periodic lattice geometry: row-major site indexing, centered
//! coordinates, and the discrete frequency grid.

use crate::Scalar;
use serde::{Deserialize, Serialize};

/// Shape of a finite periodic lattice `N_1 x ... x N_d`, row-major storage
/// (last axis fastest).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeShape {
    dims: Vec<usize>,
}

impl LatticeShape {
    pub fn new(dims: Vec<usize>) -> Self {
        assert!(!dims.is_empty() && dims.iter().all(|&n| n > 0), "empty lattice shape");
        Self { dims }
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn sites(&self) -> usize {
        self.dims.iter().product()
    }

    /// Row-major stride of `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.dims[axis + 1..].iter().product()
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.dim());
        let mut idx = 0;
        for (a, &c) in coords.iter().enumerate() {
            debug_assert!(c < self.dims[a]);
            idx = idx * self.dims[a] + c;
        }
        idx
    }

    pub fn coords(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            out[a] = index % self.dims[a];
            index /= self.dims[a];
        }
        out
    }

    /// Site index of `coords + offset` with periodic wrap.
    pub fn wrapped(&self, coords: &[usize], offset: &[i64]) -> usize {
        let mut idx = 0;
        for a in 0..self.dim() {
            let n = self.dims[a] as i64;
            let c = (coords[a] as i64 + offset[a]).rem_euclid(n) as usize;
            idx = idx * self.dims[a] + c;
        }
        idx
    }

    /// Centered coordinate on each axis: `c = i - N/2 ∈ [-N/2, N/2)`.
    /// The splice interfaces and observation windows sit at `c = 0`.
    pub fn centered(&self, coords: &[usize]) -> Vec<i64> {
        coords
            .iter()
            .zip(&self.dims)
            .map(|(&c, &n)| c as i64 - (n / 2) as i64)
            .collect()
    }

    /// Site index whose centered coordinates equal `centered` (wrapped).
    pub fn site_at_centered(&self, centered: &[i64]) -> usize {
        let mut idx = 0;
        for a in 0..self.dim() {
            let n = self.dims[a] as i64;
            let c = (centered[a] + (self.dims[a] / 2) as i64).rem_euclid(n) as usize;
            idx = idx * self.dims[a] + c;
        }
        idx
    }

    /// Discrete frequency `theta_k = 2*pi*k_a/N_a` of the site-indexed mode `k`.
    pub fn frequency<T: Scalar>(&self, coords: &[usize]) -> Vec<T> {
        coords
            .iter()
            .zip(&self.dims)
            .map(|(&k, &n)| T::of(2.0) * T::pi() * T::of(k as f64) / T::of(n as f64))
            .collect()
    }

    pub fn iter_sites(&self) -> impl Iterator<Item = usize> {
        0..self.sites()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_index_coords() {
        let shape = LatticeShape::new(vec![3, 4, 5]);
        for i in shape.iter_sites() {
            let c = shape.coords(i);
            assert_eq!(shape.index(&c), i);
        }
        assert_eq!(shape.stride(0), 20);
        assert_eq!(shape.stride(2), 1);
    }

    #[test]
    fn wrap_and_center() {
        let shape = LatticeShape::new(vec![8]);
        assert_eq!(shape.wrapped(&[7], &[1]), 0);
        assert_eq!(shape.wrapped(&[0], &[-1]), 7);
        assert_eq!(shape.centered(&[4]), vec![0]);
        assert_eq!(shape.centered(&[0]), vec![-4]);
        assert_eq!(shape.site_at_centered(&[0]), 4);
        assert_eq!(shape.site_at_centered(&[-4]), 0);
    }

    #[test]
    fn frequencies() {
        let shape = LatticeShape::new(vec![4]);
        let f: Vec<f64> = shape.frequency(&[1]);
        assert!((f[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }
}
