//! Analytic long-time objects by quadrature over the torus grid: the
//! limiting covariance `q̂_∞(θ)`, its real-space window `q_∞(x)`, the mean
//! energy current `J_∞`, the transport constants `c_l`, and the kinetic
//! temperature `K_∞`.
//!
//! The limiting covariance is assembled per grid point as
//!
//! ```text
//! q̂_∞(θ) = Σ_σ Π_σ (M⁺_{k,σ} + i M⁻_{k,σ}) Π_σ,
//! M⁺_{k,σ} = 2^{-k} Σ_n L₁⁺(q̂_n) [1 + S^even_{k,n}(ω_σ)],
//! M⁻_{k,σ} = 2^{-k} Σ_n L₂⁻(q̂_n) S^odd_{k,n}(ω_σ),
//! ```
//!
//! with `L₁⁺(q) = (q + C q C*)/2`, `L₂⁻(q) = (C q - q C*)/2`,
//! `C = [[0, Ω⁻¹], [-Ω, 0]]`, and the sign sums `S^even/odd` running over
//! subset products of `sgn(∂ω_σ/∂θ_p)·(-1)^{n_p}`. Sums over the half-space
//! pattern set use the same `2^{-k}` normalization.

use crate::measures::{ReservoirLayout, SignPattern};
use crate::spectral::{DispersionData, InteractionMatrix, PointDispersion, TorusGrid};
use crate::{Error, Result, Scalar};
use nalgebra::DMatrix;
use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Exact integer sign sums `(S^even, S^odd)` for one band's velocity signs
/// and one reservoir pattern: sums over nonempty subsets `P ⊆ {1..k}` of
/// `Π_{p∈P} s_p (-1)^{n_p}`, split by |P| parity.
pub fn sign_sums(signs: &[i8], pattern: &SignPattern) -> (i64, i64) {
    let k = pattern.k();
    debug_assert!(signs.len() >= k);
    let mut even = 0i64;
    let mut odd = 0i64;
    for subset in 1u32..(1u32 << k) {
        let mut prod = 1i64;
        for j in 0..k {
            if subset & (1 << j) != 0 {
                prod *= signs[j] as i64 * pattern.parity(j) as i64;
            }
        }
        if subset.count_ones() % 2 == 0 {
            even += prod;
        } else {
            odd += prod;
        }
    }
    (even, odd)
}

/// `C(θ) = [[0, Ω⁻¹], [-Ω, 0]]` assembled from the band decomposition.
/// Fails on a zero band (the shifted grid avoids `C_0` for admissible models).
pub fn c_matrix<T: Scalar>(point: &PointDispersion<T>, n: usize, theta: &[T]) -> Result<DMatrix<Complex<T>>> {
    let mut omega: DMatrix<Complex<T>> = DMatrix::zeros(n, n);
    let mut omega_inv: DMatrix<Complex<T>> = DMatrix::zeros(n, n);
    for band in &point.bands {
        if band.omega <= T::zero() {
            return Err(Error::SingularSymbol {
                theta: theta.iter().map(|t| t.to_f64()).collect(),
                eigenvalue: (band.omega * band.omega).to_f64(),
            });
        }
        omega += band.projector.map(|z| z.scale(band.omega));
        omega_inv += band.projector.map(|z| z.scale(T::one() / band.omega));
    }
    let mut c: DMatrix<Complex<T>> = DMatrix::zeros(2 * n, 2 * n);
    for r in 0..n {
        for col in 0..n {
            c[(r, n + col)] = omega_inv[(r, col)];
            c[(n + r, col)] = -omega[(r, col)];
        }
    }
    Ok(c)
}

/// `L₁⁺(q) = (q + C q C*)/2`.
pub fn l1_plus<T: Scalar>(q: &DMatrix<Complex<T>>, c: &DMatrix<Complex<T>>) -> DMatrix<Complex<T>> {
    let half = Complex::new(T::of(0.5), T::zero());
    (q + c * q * c.adjoint()).map(|z| z * half)
}

/// `L₂⁻(q) = (C q - q C*)/2`.
pub fn l2_minus<T: Scalar>(q: &DMatrix<Complex<T>>, c: &DMatrix<Complex<T>>) -> DMatrix<Complex<T>> {
    let half = Complex::new(T::of(0.5), T::zero());
    (c * q - q * c.adjoint()).map(|z| z * half)
}

/// Block-diagonal projection `diag(Π,Π) · M · diag(Π,Π)`.
fn project_blocks<T: Scalar>(
    m: &DMatrix<Complex<T>>,
    projector: &DMatrix<Complex<T>>,
    n: usize,
) -> DMatrix<Complex<T>> {
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for bi in 0..2 {
        for bj in 0..2 {
            let block = m.view((bi * n, bj * n), (n, n));
            let projected = projector * block * projector;
            out.view_mut((bi * n, bj * n), (n, n)).copy_from(&projected);
        }
    }
    out
}

/// The limiting covariance tabulated on the quadrature grid.
pub struct CovarianceGrid<T: Scalar> {
    grid: TorusGrid,
    components: usize,
    qhat: Vec<DMatrix<Complex<T>>>,
}

impl<T: Scalar> CovarianceGrid<T> {
    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn at(&self, index: usize) -> &DMatrix<Complex<T>> {
        &self.qhat[index]
    }

    /// Real-space covariance `q_∞(x)` by direct summation over the grid
    /// (window-independent of the lattice). Returns the real part and the
    /// largest relative imaginary residue.
    pub fn real_space(&self, x: &[i64]) -> (DMatrix<T>, f64) {
        let m = 2 * self.components;
        let mut acc: DMatrix<Complex<T>> = DMatrix::zeros(m, m);
        for idx in 0..self.grid.points() {
            let theta = self.grid.theta::<T>(idx);
            let mut phase = T::zero();
            for (t, &xi) in theta.iter().zip(x) {
                phase -= *t * T::of(xi as f64);
            }
            let factor = Complex::new(phase.cos(), phase.sin());
            acc += self.qhat[idx].map(|z| z * factor);
        }
        let w = self.grid.weight::<T>();
        let mut imag = T::zero();
        let mut scale = T::one();
        let real = DMatrix::from_fn(m, m, |r, c| {
            let z = acc[(r, c)];
            imag = imag.max(z.im.abs());
            scale = scale.max(z.re.abs());
            z.re * w
        });
        (real, (imag / scale).to_f64())
    }

    /// `K_∞ = (2π)^{-d} ∫ tr q̂^{11}_∞ dθ` by midpoint quadrature.
    pub fn kinetic_temperature(&self) -> T {
        let n = self.components;
        let mut acc = T::zero();
        for q in &self.qhat {
            for c in 0..n {
                acc += q[(n + c, n + c)].re;
            }
        }
        acc * self.grid.weight::<T>()
    }

    /// Worst-grid-point residues of the structural identities of the limit
    /// covariance: `q̂^{11} = V̂ q̂^{00}`, `q̂^{10} = -q̂^{01}`, Hermitian PSD
    /// diagonal blocks, anti-Hermitian `q̂^{10}`.
    pub fn equilibrium_residue(&self, interaction: &InteractionMatrix<T>) -> f64 {
        let n = self.components;
        let mut worst = T::zero();
        for (idx, q) in self.qhat.iter().enumerate() {
            let theta = self.grid.theta::<T>(idx);
            let symbol = interaction.symbol(&theta);
            let q00 = q.view((0, 0), (n, n)).clone_owned();
            let q01 = q.view((0, n), (n, n)).clone_owned();
            let q10 = q.view((n, 0), (n, n)).clone_owned();
            let q11 = q.view((n, n), (n, n)).clone_owned();
            let scale = T::one() + q.norm();
            let r1 = (&symbol * &q00 - &q11).norm() / scale;
            let r2 = (&q10 + &q01).norm() / scale;
            let r3 = (q00.adjoint() - &q00).norm() / scale;
            let r4 = (q11.adjoint() - &q11).norm() / scale;
            let r5 = (q10.adjoint() + &q10).norm() / scale;
            // PSD of the diagonal blocks: negative eigenvalues are residue
            let neg = |m: &DMatrix<Complex<T>>| {
                m.symmetric_eigenvalues()
                    .iter()
                    .fold(T::zero(), |acc, &l| acc.max(-l))
            };
            let r6 = neg(&q00) / scale;
            let r7 = neg(&q11) / scale;
            worst = worst
                .max(r1)
                .max(r2)
                .max(r3)
                .max(r4)
                .max(r5)
                .max(r6)
                .max(r7);
        }
        worst.to_f64()
    }

    /// Real diagonals of `q̂^{00}` and `q̂^{11}` per grid point (band-table
    /// style export).
    pub fn diagonal_rows(&self) -> Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = self.components;
        (0..self.grid.points())
            .map(|idx| {
                let theta: Vec<f64> = self
                    .grid
                    .theta::<T>(idx)
                    .iter()
                    .map(|t| t.to_f64())
                    .collect();
                let q = &self.qhat[idx];
                let q00: Vec<f64> = (0..n).map(|c| q[(c, c)].re.to_f64()).collect();
                let q11: Vec<f64> = (0..n).map(|c| q[(n + c, n + c)].re.to_f64()).collect();
                (theta, q00, q11)
            })
            .collect()
    }
}

/// Quadrature engine binding one reservoir layout to one dispersion table.
pub struct LimitEngine<'a, T: Scalar> {
    dispersion: &'a DispersionData<T>,
    layout: &'a ReservoirLayout<T>,
}

impl<'a, T: Scalar> LimitEngine<'a, T> {
    pub fn new(layout: &'a ReservoirLayout<T>, dispersion: &'a DispersionData<T>) -> Result<Self> {
        if layout.k() > dispersion.grid().dim() {
            return Err(Error::InvalidConfig(format!(
                "layout splices {} axes but the model has d = {}",
                layout.k(),
                dispersion.grid().dim()
            )));
        }
        Ok(Self { dispersion, layout })
    }

    fn norm_factor(&self) -> T {
        T::of(0.5).powi(self.layout.k() as i32)
    }

    /// General path: `q̂_∞(θ)` from the L/C kernels at every grid point.
    pub fn limiting_covariance(&self) -> Result<CovarianceGrid<T>> {
        let grid = self.dispersion.grid();
        let n = self.dispersion.components();
        let prefactor = self.norm_factor();
        let qhat: Vec<DMatrix<Complex<T>>> = (0..grid.points())
            .into_par_iter()
            .map(|idx| {
                let theta = grid.theta::<T>(idx);
                let point = self.dispersion.point(idx);
                let c = c_matrix(point, n, &theta)?;
                let terms: Vec<(DMatrix<Complex<T>>, DMatrix<Complex<T>>)> = (0..self
                    .layout
                    .reservoirs())
                    .map(|r| {
                        let q = self.layout.spec(r).eval(&theta)?;
                        Ok((l1_plus(&q, &c), l2_minus(&q, &c)))
                    })
                    .collect::<Result<_>>()?;
                let mut total: DMatrix<Complex<T>> = DMatrix::zeros(2 * n, 2 * n);
                for band in &point.bands {
                    let mut m_plus: DMatrix<Complex<T>> = DMatrix::zeros(2 * n, 2 * n);
                    let mut m_minus: DMatrix<Complex<T>> = DMatrix::zeros(2 * n, 2 * n);
                    for (r, pattern) in self.layout.patterns().iter().enumerate() {
                        let (even, odd) = sign_sums(&band.signs, pattern);
                        let w_plus = T::of((1 + even) as f64);
                        let w_minus = T::of(odd as f64);
                        if w_plus != T::zero() {
                            m_plus += terms[r].0.map(|z| z.scale(w_plus));
                        }
                        if w_minus != T::zero() {
                            m_minus += terms[r].1.map(|z| z.scale(w_minus));
                        }
                    }
                    let i_unit = Complex::new(T::zero(), T::one());
                    let combined = m_plus.map(|z| z.scale(prefactor))
                        + m_minus.map(|z| z.scale(prefactor) * i_unit);
                    total += project_blocks(&combined, &band.projector, n);
                }
                Ok(total)
            })
            .collect::<Result<_>>()?;
        Ok(CovarianceGrid {
            grid,
            components: n,
            qhat,
        })
    }

    /// Specialized k = 1 route (`M⁺ = ½L₁⁺(q̂₂+q̂₁)`,
    /// `M⁻ = ½L₂⁻(q̂₂-q̂₁)·sgn ∂₁ω_σ`); independent of the general path.
    pub fn limiting_covariance_k1(&self) -> Result<CovarianceGrid<T>> {
        if self.layout.k() != 1 || self.layout.reservoirs() != 2 {
            return Err(Error::InvalidConfig(
                "specialized covariance route requires a full-space k = 1 layout".into(),
            ));
        }
        let grid = self.dispersion.grid();
        let n = self.dispersion.components();
        let half = T::of(0.5);
        let qhat: Vec<DMatrix<Complex<T>>> = (0..grid.points())
            .into_par_iter()
            .map(|idx| {
                let theta = grid.theta::<T>(idx);
                let point = self.dispersion.point(idx);
                let c = c_matrix(point, n, &theta)?;
                let q1 = self.layout.spec(0).eval(&theta)?; // pattern "-"
                let q2 = self.layout.spec(1).eval(&theta)?; // pattern "+"
                let m_plus = l1_plus(&(&q2 + &q1), &c).map(|z| z.scale(half));
                let l2 = l2_minus(&(&q2 - &q1), &c).map(|z| z.scale(half));
                let i_unit = Complex::new(T::zero(), T::one());
                let mut total: DMatrix<Complex<T>> = DMatrix::zeros(2 * n, 2 * n);
                for band in &point.bands {
                    let s = T::of(band.signs[0] as f64);
                    let combined = &m_plus + l2.map(|z| z.scale(s) * i_unit);
                    total += project_blocks(&combined, &band.projector, n);
                }
                Ok(total)
            })
            .collect::<Result<_>>()?;
        Ok(CovarianceGrid {
            grid,
            components: n,
            qhat,
        })
    }

    /// Mean limiting current, Gibbs fast path:
    /// `J^l = -(2π)^{-d} 2^{-k} Σ_σ Σ_n ∫ r_σ T_n S^odd_{k,n}(ω_σ) ∂_l ω_σ dθ`.
    pub fn current_gibbs(&self) -> Result<Vec<T>> {
        let temps = self.layout.temperatures().ok_or_else(|| {
            Error::InvalidConfig("Gibbs current path requires a Gibbs layout".into())
        })?;
        let grid = self.dispersion.grid();
        let d = grid.dim();
        let partials: Vec<Vec<T>> = (0..grid.points())
            .into_par_iter()
            .map(|idx| {
                let point = self.dispersion.point(idx);
                let mut acc = vec![T::zero(); d];
                for band in &point.bands {
                    let r = T::of(band.multiplicity as f64);
                    let mut weight = T::zero();
                    for (res, pattern) in self.layout.patterns().iter().enumerate() {
                        let (_, odd) = sign_sums(&band.signs, pattern);
                        weight += temps[res] * T::of(odd as f64);
                    }
                    for (axis, slot) in acc.iter_mut().enumerate() {
                        *slot += r * weight * band.velocity[axis];
                    }
                }
                acc
            })
            .collect();
        let scale = -grid.weight::<T>() * self.norm_factor();
        let mut current = vec![T::zero(); d];
        for p in partials {
            for (axis, value) in p.into_iter().enumerate() {
                current[axis] += value;
            }
        }
        for value in current.iter_mut() {
            *value *= scale;
        }
        Ok(current)
    }

    /// General-spectrum current:
    /// `J^l = -(2π)^{-d} 2^{-k} Σ_σ Σ_n ∫ { ½ tr[ω² p⁰⁰ + p¹¹] S^odd ∂_l ω
    ///        + Im(tr p⁰¹)(1+S^even) ω ∂_l ω } dθ`
    /// with `p^{ij} = Π_σ q̂_n^{ij} Π_σ`.
    pub fn current_general(&self) -> Result<Vec<T>> {
        let grid = self.dispersion.grid();
        let n = self.dispersion.components();
        let d = grid.dim();
        let partials: Vec<Vec<T>> = (0..grid.points())
            .into_par_iter()
            .map(|idx| {
                let theta = grid.theta::<T>(idx);
                let point = self.dispersion.point(idx);
                let specs: Vec<DMatrix<Complex<T>>> = (0..self.layout.reservoirs())
                    .map(|r| self.layout.spec(r).eval(&theta))
                    .collect::<Result<_>>()?;
                let mut acc = vec![T::zero(); d];
                for band in &point.bands {
                    for (res, pattern) in self.layout.patterns().iter().enumerate() {
                        let q = &specs[res];
                        // traces of the projected blocks: tr(Π q^{ij} Π) = tr(q^{ij} Π)
                        let mut tr00 = T::zero();
                        let mut tr11 = T::zero();
                        let mut im01 = T::zero();
                        for a in 0..n {
                            for b in 0..n {
                                let p = band.projector[(b, a)];
                                tr00 += (q[(a, b)] * p).re;
                                tr11 += (q[(n + a, n + b)] * p).re;
                                im01 += (q[(a, n + b)] * p).im;
                            }
                        }
                        let (even, odd) = sign_sums(&band.signs, pattern);
                        let w2 = band.omega * band.omega;
                        let odd_part = (w2 * tr00 + tr11) * T::of(0.5) * T::of(odd as f64);
                        let even_part = im01 * T::of((1 + even) as f64) * band.omega;
                        for (axis, slot) in acc.iter_mut().enumerate() {
                            *slot += (odd_part + even_part) * band.velocity[axis];
                        }
                    }
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        let scale = -grid.weight::<T>() * self.norm_factor();
        let mut current = vec![T::zero(); d];
        for p in partials {
            for (axis, value) in p.into_iter().enumerate() {
                current[axis] += value;
            }
        }
        for value in current.iter_mut() {
            *value *= scale;
        }
        Ok(current)
    }

    /// The transport coefficients
    /// `c^l_{p₁…p_m} = (2π)^{-d} Σ_σ ∫ r_σ sgn(∂_{p₁}ω)⋯sgn(∂_{p_m}ω) ∂_l ω dθ`
    /// for every nonempty subset of the spliced axes. The single-axis
    /// diagonal entries are the constants `c_l` (as |∂_l ω| integrals).
    pub fn c_coefficients(&self) -> Vec<CCoefficient> {
        let grid = self.dispersion.grid();
        let k = self.layout.k();
        let d = grid.dim();
        let weight = grid.weight::<T>();
        let mut out = Vec::new();
        for subset in 1u32..(1u32 << k) {
            let axes: Vec<usize> = (0..k).filter(|j| subset & (1 << j) != 0).collect();
            for l in 0..d {
                let total: T = (0..grid.points())
                    .into_par_iter()
                    .map(|idx| {
                        let point = self.dispersion.point(idx);
                        let mut acc = T::zero();
                        for band in &point.bands {
                            let mut sgn = 1i64;
                            for &p in &axes {
                                sgn *= band.signs[p] as i64;
                            }
                            if sgn != 0 {
                                acc += T::of((band.multiplicity as i64 * sgn) as f64)
                                    * band.velocity[l];
                            }
                        }
                        acc
                    })
                    .reduce(T::zero, |a, b| a + b);
                out.push(CCoefficient {
                    axis: l + 1,
                    subset: axes.iter().map(|&p| p + 1).collect(),
                    value: (total * weight).to_f64(),
                });
            }
        }
        out
    }

    /// Symmetry-condition shortcut
    /// `J^l = -c_l 2^{-k} Σ'(T_n|_{n_l=2} - T_n|_{n_l=1})` for spliced axes,
    /// zero beyond them. Exact in the temperatures.
    pub fn current_shortcut(&self, c_constants: &[T]) -> Result<Vec<T>> {
        let temps = self.layout.temperatures().ok_or_else(|| {
            Error::InvalidConfig("shortcut current requires a Gibbs layout".into())
        })?;
        let d = self.dispersion.grid().dim();
        let k = self.layout.k();
        let mut current = vec![T::zero(); d];
        for l in 0..k {
            let mut diff = T::zero();
            for (res, pattern) in self.layout.patterns().iter().enumerate() {
                diff += T::of(pattern.parity(l) as f64) * temps[res];
            }
            current[l] = -c_constants[l] * self.norm_factor() * diff;
        }
        Ok(current)
    }

    /// Kinetic temperature, Gibbs fast path:
    /// `K_∞ = 2^{-k} Σ_n T_n Σ_σ (2π)^{-d} ∫ r_σ (1 + S^even_{k,n}) dθ`.
    pub fn kinetic_temperature(&self) -> Result<T> {
        let temps = self.layout.temperatures().ok_or_else(|| {
            Error::InvalidConfig("Gibbs kinetic temperature requires a Gibbs layout".into())
        })?;
        let grid = self.dispersion.grid();
        let total: T = (0..grid.points())
            .into_par_iter()
            .map(|idx| {
                let point = self.dispersion.point(idx);
                let mut acc = T::zero();
                for band in &point.bands {
                    let r = T::of(band.multiplicity as f64);
                    for (res, pattern) in self.layout.patterns().iter().enumerate() {
                        let (even, _) = sign_sums(&band.signs, pattern);
                        acc += r * temps[res] * T::of((1 + even) as f64);
                    }
                }
                acc
            })
            .reduce(T::zero, |a, b| a + b);
        Ok(total * grid.weight::<T>() * self.norm_factor())
    }

    /// Closed form `K_∞ = n 2^{-k} Σ_n T_n`, valid when every band is even in
    /// each spliced variable.
    pub fn kinetic_temperature_closed_form(&self) -> Option<T> {
        let temps = self.layout.temperatures()?;
        let mut sum = T::zero();
        for &t in temps {
            sum += t;
        }
        Some(T::of(self.dispersion.components() as f64) * self.norm_factor() * sum)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CCoefficient {
    /// Current direction l (1-based axis).
    pub axis: usize,
    /// Sign-factor axes p₁…p_m (1-based).
    pub subset: Vec<usize>,
    pub value: f64,
}

/// Numeric test of the symmetry conditions under which the current shortcut
/// holds: (a)/(b) evenness patterns of the bands, (c) separability of the
/// velocity signs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SymmetryReport {
    /// Per axis: the band spectrum is even under θ_axis → -θ_axis.
    pub even_axes: Vec<bool>,
    pub max_even_residue: f64,
    /// Per spliced axis p: sgn(∂_p ω) depends only on θ_p.
    pub sign_separable: Vec<bool>,
    pub condition_a: bool,
    pub condition_b: bool,
    pub condition_c: bool,
}

impl SymmetryReport {
    pub fn any(&self) -> bool {
        self.condition_a || self.condition_b || self.condition_c
    }
}

pub fn sc_symmetry_test<T: Scalar>(dispersion: &DispersionData<T>, k: usize) -> SymmetryReport {
    let grid = dispersion.grid();
    let d = grid.dim();
    let tol = T::of(1e-9);

    let mut even_axes = vec![true; d];
    let mut max_res = T::zero();
    for axis in 0..d {
        for idx in 0..grid.points() {
            let mirror = grid.reflected(idx, axis);
            if mirror < idx {
                continue;
            }
            let a = &dispersion.point(idx).omegas;
            let b = &dispersion.point(mirror).omegas;
            for (x, y) in a.iter().zip(b) {
                let res = (*x - *y).abs() / (T::one() + x.abs());
                max_res = max_res.max(res);
                if res > tol {
                    even_axes[axis] = false;
                }
            }
        }
    }

    // sgn(∂_p ω_σ) a function of θ_p alone: scan orthogonal slices for mixed
    // signs at fixed coordinate value (zeros ignored).
    let max_bands = (0..grid.points())
        .map(|i| dispersion.point(i).bands.len())
        .max()
        .unwrap_or(0);
    let g = grid.per_axis();
    let mut sign_separable = vec![true; k];
    for (p, flag) in sign_separable.iter_mut().enumerate() {
        let mut seen = vec![(false, false); g * max_bands];
        for idx in 0..grid.points() {
            let coord = grid.coords(idx)[p];
            for (s, band) in dispersion.point(idx).bands.iter().enumerate() {
                let slot = coord * max_bands + s;
                match band.signs[p] {
                    1 => seen[slot].0 = true,
                    -1 => seen[slot].1 = true,
                    _ => {}
                }
            }
        }
        if seen.iter().any(|&(plus, minus)| plus && minus) {
            *flag = false;
        }
    }

    let transverse_even = (k..d).all(|axis| even_axes[axis]);
    let spliced_even_count = (0..k).filter(|&axis| even_axes[axis]).count();
    let condition_a = transverse_even && (k < 2 || spliced_even_count >= k - 1);
    let condition_b = (0..k).all(|axis| even_axes[axis]);
    let condition_c =
        sign_separable.iter().all(|&ok| ok) && (k < 3 || spliced_even_count >= k - 1);

    SymmetryReport {
        even_axes,
        max_even_residue: max_res.to_f64(),
        sign_separable,
        condition_a,
        condition_b,
        condition_c,
    }
}

/// One row of the real-space covariance window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowEntry {
    pub x: Vec<i64>,
    /// Row-major 2n×2n real covariance block.
    pub q: Vec<f64>,
    pub imag_residue: f64,
}

/// `q_∞(x)` over the cube `|x_i| ≤ window`.
pub fn window_entries<T: Scalar>(cov: &CovarianceGrid<T>, window: i64) -> Vec<WindowEntry> {
    let d = cov.grid().dim();
    let mut points = vec![vec![]];
    for _ in 0..d {
        points = points
            .into_iter()
            .flat_map(|v: Vec<i64>| {
                (-window..=window).map(move |x| {
                    let mut w = v.clone();
                    w.push(x);
                    w
                })
            })
            .collect();
    }
    let m = 2 * cov.components();
    points
        .into_iter()
        .map(|x| {
            let (q, imag_residue) = cov.real_space(&x);
            WindowEntry {
                q: (0..m)
                    .flat_map(|r| (0..m).map(move |c| (r, c)))
                    .map(|(r, c)| q[(r, c)].to_f64())
                    .collect(),
                x,
                imag_residue,
            }
        })
        .collect()
}

/// Analytic limit report: currents with a grid-refinement error estimate,
/// transport constants, kinetic temperature, symmetry diagnostics, and the
/// structural residues of `q̂_∞`. Per-band `c_l` breakdowns inherit the
/// per-θ sorted band labeling and are marked as such.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitReport {
    pub k: usize,
    pub half_space: bool,
    pub grid_per_axis: usize,
    pub coarse_grid_per_axis: usize,
    pub current: Vec<f64>,
    pub current_coarse: Vec<f64>,
    pub current_error_estimate: Vec<f64>,
    pub current_shortcut: Option<Vec<f64>>,
    pub shortcut_consistent: Option<bool>,
    pub c_constants: Vec<CCoefficient>,
    pub kinetic_temperature: f64,
    pub kinetic_temperature_closed_form: Option<f64>,
    pub symmetry: SymmetryReport,
    pub equilibrium_residue: f64,
    pub band_labeling: String,
    /// Fraction of grid points whose velocity sign was zeroed by the
    /// tolerance deadband (quadrature quality indicator).
    pub zero_sign_fraction: f64,
    /// Half-space current profile, filled by the half-space path.
    pub halfspace_profile: Option<crate::halfspace::HalfspaceProfile>,
}

/// Build the full-space analytic report on a `g` grid, with the `g/2` grid
/// supplying the Richardson-style error estimate.
pub fn analytic_report<T: Scalar>(
    interaction: &InteractionMatrix<T>,
    layout: &ReservoirLayout<T>,
    dispersion: &DispersionData<T>,
    coarse: &DispersionData<T>,
) -> Result<(LimitReport, CovarianceGrid<T>)> {
    let engine = LimitEngine::new(layout, dispersion)?;
    let engine_coarse = LimitEngine::new(layout, coarse)?;

    let gibbs = layout.temperatures().is_some();
    let current = if gibbs {
        engine.current_gibbs()?
    } else {
        engine.current_general()?
    };
    let current_coarse = if gibbs {
        engine_coarse.current_gibbs()?
    } else {
        engine_coarse.current_general()?
    };
    let error: Vec<f64> = current
        .iter()
        .zip(&current_coarse)
        .map(|(a, b)| (*a - *b).abs().to_f64())
        .collect();

    let c_constants = engine.c_coefficients();
    let symmetry = sc_symmetry_test(dispersion, layout.k());
    let d = dispersion.grid().dim();
    let mut c_l = vec![T::zero(); d.max(layout.k())];
    for c in &c_constants {
        if c.subset.len() == 1 && c.subset[0] == c.axis {
            c_l[c.axis - 1] = T::of(c.value.abs());
        }
    }
    let (shortcut, consistent) = if gibbs && symmetry.any() {
        let s = engine.current_shortcut(&c_l)?;
        let ok = s.iter().zip(&current).zip(&error).all(|((a, b), e)| {
            (*a - *b).abs().to_f64() <= 2.0 * e.max(1e-9)
        });
        (
            Some(s.iter().map(|v| v.to_f64()).collect::<Vec<_>>()),
            Some(ok),
        )
    } else {
        (None, None)
    };

    let covariance = engine.limiting_covariance()?;
    let kinetic = if gibbs {
        engine.kinetic_temperature()?
    } else {
        covariance.kinetic_temperature()
    };
    let closed_form = if (0..layout.k()).all(|a| symmetry.even_axes[a]) {
        engine.kinetic_temperature_closed_form().map(|v| v.to_f64())
    } else {
        None
    };

    let mut zeroed = 0usize;
    let mut counted = 0usize;
    for (_, p) in dispersion.iter_points() {
        for b in &p.bands {
            for j in 0..layout.k() {
                counted += 1;
                if b.signs[j] == 0 {
                    zeroed += 1;
                }
            }
        }
    }

    let report = LimitReport {
        k: layout.k(),
        half_space: layout.is_half_space(),
        grid_per_axis: dispersion.grid().per_axis(),
        coarse_grid_per_axis: coarse.grid().per_axis(),
        current: current.iter().map(|v| v.to_f64()).collect(),
        current_coarse: current_coarse.iter().map(|v| v.to_f64()).collect(),
        current_error_estimate: error,
        current_shortcut: shortcut,
        shortcut_consistent: consistent,
        c_constants,
        kinetic_temperature: kinetic.to_f64(),
        kinetic_temperature_closed_form: closed_form,
        symmetry,
        equilibrium_residue: covariance.equilibrium_residue(interaction),
        band_labeling: "per-theta sorted clusters".into(),
        zero_sign_fraction: if counted > 0 {
            zeroed as f64 / counted as f64
        } else {
            0.0
        },
        halfspace_profile: None,
    };
    Ok((report, covariance))
}
