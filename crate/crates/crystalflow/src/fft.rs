//! d-dimensional FFT on row-major complex buffers.
//!
//! Sign convention matches the analysis: the forward transform is
//! `F[g](theta_k) = sum_x exp(+i theta_k . x) g(x)` and the inverse is
//! `g(x) = |L|^{-1} sum_k exp(-i theta_k . x) F[g](k)`, so symbols evaluated
//! at `theta_k = 2 pi k / N` multiply forward coefficients directly.

use crate::lattice::LatticeShape;
use crate::Scalar;
use num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::collections::HashMap;
use std::sync::Arc;

pub struct NdFft<T: Scalar> {
    plans: HashMap<(usize, bool), Arc<dyn Fft<T>>>,
}

impl<T: Scalar> NdFft<T> {
    pub fn new(shape: &LatticeShape) -> Self {
        let mut planner = FftPlanner::new();
        let mut plans = HashMap::new();
        for &n in shape.dims() {
            // rustfft's "inverse" direction carries the e^{+i} kernel.
            plans
                .entry((n, true))
                .or_insert_with(|| planner.plan_fft(n, FftDirection::Inverse));
            plans
                .entry((n, false))
                .or_insert_with(|| planner.plan_fft(n, FftDirection::Forward));
        }
        Self { plans }
    }

    /// In-place `sum_x e^{+i theta_k . x}`, unnormalized.
    pub fn forward(&self, data: &mut [Complex<T>], shape: &LatticeShape) {
        self.transform(data, shape, true);
        // unnormalized by design
    }

    /// In-place `|L|^{-1} sum_k e^{-i theta_k . x}`.
    pub fn inverse(&self, data: &mut [Complex<T>], shape: &LatticeShape) {
        self.transform(data, shape, false);
        let scale = T::one() / T::of(shape.sites() as f64);
        for z in data.iter_mut() {
            *z = z.scale(scale);
        }
    }

    fn transform(&self, data: &mut [Complex<T>], shape: &LatticeShape, plus: bool) {
        assert_eq!(data.len(), shape.sites());
        for axis in 0..shape.dim() {
            let n = shape.dims()[axis];
            if n == 1 {
                continue;
            }
            let plan = &self.plans[&(n, plus)];
            let stride = shape.stride(axis);
            let mut scratch = vec![Complex::default(); plan.get_inplace_scratch_len()];
            if stride == 1 {
                for line in data.chunks_exact_mut(n) {
                    plan.process_with_scratch(line, &mut scratch);
                }
            } else {
                let block = n * stride; // consecutive sites sharing all outer coords
                let mut line = vec![Complex::default(); n];
                for chunk in data.chunks_exact_mut(block) {
                    for off in 0..stride {
                        for (j, slot) in line.iter_mut().enumerate() {
                            *slot = chunk[j * stride + off];
                        }
                        plan.process_with_scratch(&mut line, &mut scratch);
                        for (j, value) in line.iter().enumerate() {
                            chunk[j * stride + off] = *value;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dft_plus(data: &[Complex<f64>], shape: &LatticeShape, k: &[usize]) -> Complex<f64> {
        let mut acc = Complex::new(0.0, 0.0);
        for site in shape.iter_sites() {
            let x = shape.coords(site);
            let phase: f64 = x
                .iter()
                .zip(k)
                .zip(shape.dims())
                .map(|((&xi, &ki), &ni)| {
                    2.0 * std::f64::consts::PI * (xi as f64) * (ki as f64) / (ni as f64)
                })
                .sum();
            acc += data[site] * Complex::from_polar(1.0, phase);
        }
        acc
    }

    #[test]
    fn matches_direct_sum_and_roundtrips() {
        let shape = LatticeShape::new(vec![4, 6]);
        let fft = NdFft::<f64>::new(&shape);
        let mut data: Vec<Complex<f64>> = (0..shape.sites())
            .map(|i| Complex::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let original = data.clone();

        fft.forward(&mut data, &shape);
        for probe in [[0usize, 0], [1, 2], [3, 5], [2, 3]] {
            let direct = dft_plus(&original, &shape, &probe);
            let got = data[shape.index(&probe)];
            assert_relative_eq!(got.re, direct.re, epsilon = 1e-12, max_relative = 1e-12);
            assert_relative_eq!(got.im, direct.im, epsilon = 1e-12, max_relative = 1e-12);
        }

        fft.inverse(&mut data, &shape);
        for (a, b) in data.iter().zip(&original) {
            assert_relative_eq!(a.re, b.re, epsilon = 1e-13);
            assert_relative_eq!(a.im, b.im, epsilon = 1e-13);
        }
    }

    #[test]
    fn single_mode_has_one_coefficient() {
        // g(x) = e^{-i theta_1 x} picks out forward coefficient at k = 1:
        // sum_x e^{+i theta_k x} e^{-i theta_1 x} = N delta_{k,1}.
        let shape = LatticeShape::new(vec![8]);
        let fft = NdFft::<f64>::new(&shape);
        let theta = 2.0 * std::f64::consts::PI / 8.0;
        let mut data: Vec<Complex<f64>> = (0..8)
            .map(|x| Complex::from_polar(1.0, -theta * x as f64))
            .collect();
        fft.forward(&mut data, &shape);
        assert_relative_eq!(data[1].re, 8.0, epsilon = 1e-12);
        assert_relative_eq!(data[1].im, 0.0, epsilon = 1e-12);
        for k in [0usize, 2, 3, 4, 5, 6, 7] {
            assert!(data[k].norm() < 1e-12);
        }
    }
}
