//! Interaction matrices, Fourier symbols, dispersion bands, and numeric
//! checks of the structural conditions the limit formulas rest on.
//!
//! The symbol of a finite-support interaction `V` is
//! `V̂(θ) = Σ_x e^{i(x,θ)} V(x)` (Hermitian under the symmetry condition
//! `V_lk(-x) = V_kl(x)`), and `Ω(θ) = V̂(θ)^{1/2}` carries the dispersion
//! bands `ω_1 ≤ … ≤ ω_s` with spectral projections `Π_σ` and multiplicities
//! `r_σ`. Bands here are per-θ sorted eigenvalue clusters; no attempt is made
//! to continue labels analytically across crossings.

use crate::{Error, Result, Scalar};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Finite-support map `x ↦ V(x)` of n×n real blocks on `Z^d`.
#[derive(Debug, Clone)]
pub struct InteractionMatrix<T: Scalar> {
    dimension: usize,
    components: usize,
    /// Sorted by offset for deterministic iteration.
    support: Vec<(Vec<i64>, DMatrix<T>)>,
    mirror_symmetric: bool,
}

impl<T: Scalar> InteractionMatrix<T> {
    /// Nearest-neighbor crystal: per component `l`,
    /// `V_ll(0) = 2 d κ_l + m_l²`, `V_ll(±e_i) = -κ_l`, components decoupled.
    pub fn nearest_neighbor(d: usize, n: usize, kappa: &[T], mass: &[T]) -> Result<Self> {
        if d == 0 || n == 0 {
            return Err(Error::InvalidInteraction(
                "dimension and component count must be positive".into(),
            ));
        }
        if kappa.len() != n || mass.len() != n {
            return Err(Error::InvalidInteraction(format!(
                "expected {n} couplings and masses, got {} and {}",
                kappa.len(),
                mass.len()
            )));
        }
        if let Some(k) = kappa.iter().find(|&&k| k <= T::zero()) {
            return Err(Error::InvalidInteraction(format!(
                "couplings must be positive (got {})",
                k.to_f64()
            )));
        }
        if let Some(m) = mass.iter().find(|&&m| m < T::zero()) {
            return Err(Error::InvalidInteraction(format!(
                "masses must be nonnegative (got {})",
                m.to_f64()
            )));
        }

        let mut entries = Vec::new();
        let mut center = DMatrix::zeros(n, n);
        for l in 0..n {
            center[(l, l)] = T::of(2.0 * d as f64) * kappa[l] + mass[l] * mass[l];
        }
        entries.push((vec![0i64; d], center));
        for axis in 0..d {
            for sign in [-1i64, 1] {
                let mut offset = vec![0i64; d];
                offset[axis] = sign;
                let mut block = DMatrix::zeros(n, n);
                for l in 0..n {
                    block[(l, l)] = -kappa[l];
                }
                entries.push((offset, block));
            }
        }
        Self::from_stencil(d, n, entries)
    }

    /// Build from explicit `(offset, block)` pairs, validating the symmetry
    /// condition `V_lk(-x) = V_kl(x)` by enumeration.
    pub fn from_stencil(d: usize, n: usize, entries: Vec<(Vec<i64>, DMatrix<T>)>) -> Result<Self> {
        let mut support: Vec<(Vec<i64>, DMatrix<T>)> = Vec::new();
        for (offset, block) in entries {
            if offset.len() != d {
                return Err(Error::InvalidInteraction(format!(
                    "offset {offset:?} has wrong dimension (expected {d})"
                )));
            }
            if block.nrows() != n || block.ncols() != n {
                return Err(Error::InvalidInteraction(format!(
                    "block at {offset:?} is {}x{}, expected {n}x{n}",
                    block.nrows(),
                    block.ncols()
                )));
            }
            if support.iter().any(|(o, _)| *o == offset) {
                return Err(Error::InvalidInteraction(format!(
                    "duplicate offset {offset:?}"
                )));
            }
            support.push((offset, block));
        }
        support.sort_by(|a, b| a.0.cmp(&b.0));
        let out = Self {
            dimension: d,
            components: n,
            support,
            mirror_symmetric: false,
        };
        out.check_symmetry()?;
        let mut out = out;
        out.mirror_symmetric = out.compute_mirror();
        Ok(out)
    }

    fn check_symmetry(&self) -> Result<()> {
        for (offset, block) in &self.support {
            let neg: Vec<i64> = offset.iter().map(|&x| -x).collect();
            let other = self.block(&neg);
            let mut residue = T::zero();
            for k in 0..self.components {
                for l in 0..self.components {
                    let expected = block[(k, l)];
                    let got = other.map_or(T::zero(), |b| b[(l, k)]);
                    residue = residue.max((expected - got).abs());
                }
            }
            if residue > T::zero() {
                return Err(Error::SymmetryViolation {
                    offset: offset.clone(),
                    residue: residue.to_f64(),
                });
            }
        }
        Ok(())
    }

    fn compute_mirror(&self) -> bool {
        self.support.iter().all(|(offset, block)| {
            let mut mirrored = offset.clone();
            mirrored[0] = -mirrored[0];
            match self.block(&mirrored) {
                Some(b) => b == block,
                None => block.iter().all(|&v| v == T::zero()),
            }
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn mirror_symmetric(&self) -> bool {
        self.mirror_symmetric
    }

    pub fn support(&self) -> impl Iterator<Item = (&[i64], &DMatrix<T>)> {
        self.support.iter().map(|(o, b)| (o.as_slice(), b))
    }

    pub fn block(&self, offset: &[i64]) -> Option<&DMatrix<T>> {
        self.support
            .binary_search_by(|(o, _)| o.as_slice().cmp(offset))
            .ok()
            .map(|i| &self.support[i].1)
    }

    /// Max Chebyshev radius of the support.
    pub fn support_radius(&self) -> i64 {
        self.support
            .iter()
            .flat_map(|(o, _)| o.iter().map(|x| x.abs()))
            .max()
            .unwrap_or(0)
    }

    /// True when every block is diagonal, i.e. the components never couple.
    pub fn decoupled(&self) -> bool {
        self.support.iter().all(|(_, b)| {
            (0..self.components)
                .all(|r| (0..self.components).all(|c| r == c || b[(r, c)] == T::zero()))
        })
    }

    /// Fourier symbol `V̂(θ) = Σ_x e^{i(x,θ)} V(x)`, hermitized against
    /// roundoff skew.
    pub fn symbol(&self, theta: &[T]) -> DMatrix<Complex<T>> {
        let n = self.components;
        let mut acc: DMatrix<Complex<T>> = DMatrix::zeros(n, n);
        for (offset, block) in &self.support {
            let mut phase = T::zero();
            for (x, t) in offset.iter().zip(theta) {
                phase += T::of(*x as f64) * *t;
            }
            let factor = Complex::new(phase.cos(), phase.sin());
            for r in 0..n {
                for c in 0..n {
                    acc[(r, c)] += factor * Complex::new(block[(r, c)], T::zero());
                }
            }
        }
        let adj = acc.adjoint();
        (acc + adj).map(|z| z.scale(T::of(0.5)))
    }

    /// `∂_θl V̂(θ) = Σ_x i x_l e^{i(x,θ)} V(x)` (Hermitian for symmetric V).
    pub fn symbol_derivative(&self, theta: &[T], axis: usize) -> DMatrix<Complex<T>> {
        let n = self.components;
        let mut acc: DMatrix<Complex<T>> = DMatrix::zeros(n, n);
        for (offset, block) in &self.support {
            if offset[axis] == 0 {
                continue;
            }
            let mut phase = T::zero();
            for (x, t) in offset.iter().zip(theta) {
                phase += T::of(*x as f64) * *t;
            }
            // i e^{iφ} = -sin φ + i cos φ
            let factor = Complex::new(-phase.sin(), phase.cos()).scale(T::of(offset[axis] as f64));
            for r in 0..n {
                for c in 0..n {
                    acc[(r, c)] += factor * Complex::new(block[(r, c)], T::zero());
                }
            }
        }
        acc
    }

    /// Real scalar symbol of one component of a decoupled matrix:
    /// `Σ_x cos(x·θ) V_cc(x)`.
    pub fn scalar_symbol(&self, component: usize, theta: &[T]) -> T {
        let mut acc = T::zero();
        for (offset, block) in &self.support {
            let mut phase = T::zero();
            for (x, t) in offset.iter().zip(theta) {
                phase += T::of(*x as f64) * *t;
            }
            acc += phase.cos() * block[(component, component)];
        }
        acc
    }

    /// `∂_θl` of the scalar symbol: `-Σ_x x_l sin(x·θ) V_cc(x)`.
    pub fn scalar_symbol_derivative(&self, component: usize, theta: &[T], axis: usize) -> T {
        let mut acc = T::zero();
        for (offset, block) in &self.support {
            let mut phase = T::zero();
            for (x, t) in offset.iter().zip(theta) {
                phase += T::of(*x as f64) * *t;
            }
            acc -= T::of(offset[axis] as f64) * phase.sin() * block[(component, component)];
        }
        acc
    }
}

/// Uniform quadrature grid on the torus, half-cell shifted so that
/// `θ_j = 2π(i+1/2)/G - π` never hits θ = 0 (where `det V̂` may vanish).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    d: usize,
    g: usize,
}

impl TorusGrid {
    pub fn new(d: usize, g: usize) -> Self {
        assert!(d > 0 && g > 0);
        Self { d, g }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn per_axis(&self) -> usize {
        self.g
    }

    pub fn points(&self) -> usize {
        self.g.pow(self.d as u32)
    }

    pub fn coords(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.d];
        for a in (0..self.d).rev() {
            out[a] = index % self.g;
            index /= self.g;
        }
        out
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().fold(0, |acc, &c| acc * self.g + c)
    }

    pub fn theta<T: Scalar>(&self, index: usize) -> Vec<T> {
        self.coords(index)
            .iter()
            .map(|&i| {
                T::of(2.0) * T::pi() * (T::of(i as f64) + T::of(0.5)) / T::of(self.g as f64)
                    - T::pi()
            })
            .collect()
    }

    /// Grid index of the reflection `θ_axis → -θ_axis` (the shifted grid is
    /// symmetric under it).
    pub fn reflected(&self, index: usize, axis: usize) -> usize {
        let mut c = self.coords(index);
        c[axis] = self.g - 1 - c[axis];
        self.index(&c)
    }

    /// Periodic neighbor one cell along `axis`.
    pub fn neighbor(&self, index: usize, axis: usize, step: i64) -> usize {
        let mut c = self.coords(index);
        c[axis] = (c[axis] as i64 + step).rem_euclid(self.g as i64) as usize;
        self.index(&c)
    }

    /// Midpoint-rule weight for `(2π)^{-d} ∫_{T^d} · dθ`.
    pub fn weight<T: Scalar>(&self) -> T {
        T::one() / T::of(self.points() as f64)
    }
}

/// One dispersion band at a grid point.
#[derive(Debug, Clone)]
pub struct Band<T: Scalar> {
    pub omega: T,
    pub multiplicity: usize,
    pub projector: DMatrix<Complex<T>>,
    /// `∂ω/∂θ_l`, one entry per axis.
    pub velocity: Vec<T>,
    /// `sgn(∂ω/∂θ_l)` with the `vel_tol` deadband mapped to 0.
    pub signs: Vec<i8>,
    /// Finite differencing crossed a degenerate cluster here.
    pub fd_degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct PointDispersion<T: Scalar> {
    /// Sorted eigenfrequencies of `Ω(θ)` before clustering (n entries).
    pub omegas: Vec<T>,
    pub bands: Vec<Band<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VelocityMode {
    /// Pick analytic for decoupled matrices, finite differences otherwise.
    Auto,
    /// Closed-form `∂ω = ∂V̂_cc/(2ω)`; decoupled matrices only.
    Analytic,
    /// Central difference over one grid cell on the periodic grid.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy)]
pub struct SpectralOptions<T: Scalar> {
    /// Eigenvalue clustering tolerance, relative to the largest ω at the point.
    pub cluster_tol: T,
    /// PSD tolerance, relative to the symbol norm: eigenvalues in
    /// `(-psd_tol, 0)` clamp to 0, below is a hard E3 failure.
    pub psd_tol: T,
    /// |velocity| below this maps to sign 0 (zero-velocity sets have measure
    /// zero, so their quadrature weight is harmless).
    pub vel_tol: T,
    pub velocity_mode: VelocityMode,
}

impl<T: Scalar> Default for SpectralOptions<T> {
    fn default() -> Self {
        Self {
            cluster_tol: T::of(1e-9),
            psd_tol: T::of(1e-10),
            vel_tol: T::of(1e-9),
            velocity_mode: VelocityMode::Auto,
        }
    }
}

/// Dispersion bands, projections, velocities and sign fields tabulated on a
/// shifted uniform grid. Immutable after construction; shared freely across
/// threads.
#[derive(Debug, Clone)]
pub struct DispersionData<T: Scalar> {
    grid: TorusGrid,
    components: usize,
    points: Vec<PointDispersion<T>>,
    options: SpectralOptions<T>,
    v_max: T,
    min_symbol_eigenvalue: T,
    min_symbol_eigenvalue_at: usize,
}

/// Sorted, clamped eigenpairs of a Hermitian symbol.
pub(crate) fn sorted_eigen<T: Scalar>(
    symbol: &DMatrix<Complex<T>>,
    psd_tol: T,
    theta: &[T],
) -> Result<(Vec<T>, DMatrix<Complex<T>>, T)> {
    let n = symbol.nrows();
    let scale = symbol.norm().max(T::one());
    let eig = SymmetricEigen::new(symbol.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let min_raw = eig.eigenvalues[order[0]];
    if min_raw < -psd_tol * scale {
        return Err(Error::NotPositive {
            theta: theta.iter().map(|t| t.to_f64()).collect(),
            eigenvalue: min_raw.to_f64(),
            tolerance: (psd_tol * scale).to_f64(),
        });
    }
    let mut omegas = Vec::with_capacity(n);
    let mut basis = DMatrix::zeros(n, n);
    for (slot, &i) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[i].max(T::zero());
        omegas.push(lambda.sqrt());
        basis.set_column(slot, &eig.eigenvectors.column(i));
    }
    Ok((omegas, basis, min_raw))
}

/// Cluster sorted eigenfrequencies into bands and build their projections.
pub fn cluster_bands<T: Scalar>(
    omegas: &[T],
    basis: &DMatrix<Complex<T>>,
    cluster_tol: T,
) -> Vec<Band<T>> {
    let n = omegas.len();
    let tol = cluster_tol * omegas[n - 1].max(T::of(f64::MIN_POSITIVE));
    let mut bands = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && omegas[end] - omegas[end - 1] <= tol {
            end += 1;
        }
        let mut projector: DMatrix<Complex<T>> = DMatrix::zeros(n, n);
        let mut omega = T::zero();
        for i in start..end {
            let q = basis.column(i);
            projector += &q * q.adjoint();
            omega += omegas[i];
        }
        omega /= T::of((end - start) as f64);
        bands.push(Band {
            omega,
            multiplicity: end - start,
            projector,
            velocity: Vec::new(),
            signs: Vec::new(),
            fd_degenerate: false,
        });
        start = end;
    }
    bands
}

/// Spectral decomposition of one Hermitian symbol into clamped, clustered
/// bands. Eigenvalues below `-psd_tol·‖V̂‖` are an E3 failure.
pub fn eigendecompose<T: Scalar>(
    symbol: &DMatrix<Complex<T>>,
    options: &SpectralOptions<T>,
) -> Result<Vec<Band<T>>> {
    let theta: Vec<T> = Vec::new();
    let (omegas, basis, _) = sorted_eigen(symbol, options.psd_tol, &theta)?;
    Ok(cluster_bands(&omegas, &basis, options.cluster_tol))
}

fn sign_of<T: Scalar>(v: T, vel_tol: T) -> i8 {
    if v > vel_tol {
        1
    } else if v < -vel_tol {
        -1
    } else {
        0
    }
}

impl<T: Scalar> DispersionData<T> {
    pub fn build(
        interaction: &InteractionMatrix<T>,
        grid_per_axis: usize,
        options: SpectralOptions<T>,
    ) -> Result<Self> {
        let grid = TorusGrid::new(interaction.dimension(), grid_per_axis);
        let analytic = match options.velocity_mode {
            VelocityMode::Analytic => {
                if !interaction.decoupled() {
                    return Err(Error::NotDecoupled);
                }
                true
            }
            VelocityMode::Auto => interaction.decoupled(),
            VelocityMode::FiniteDifference => false,
        };

        let raw: Vec<(PointDispersion<T>, T)> = (0..grid.points())
            .into_par_iter()
            .map(|idx| {
                let theta = grid.theta::<T>(idx);
                if analytic {
                    Ok(analytic_point(interaction, &theta, &options))
                } else {
                    let symbol = interaction.symbol(&theta);
                    let (omegas, basis, min_raw) =
                        sorted_eigen(&symbol, options.psd_tol, &theta)?;
                    let bands = cluster_bands(&omegas, &basis, options.cluster_tol);
                    Ok((PointDispersion { omegas, bands }, min_raw))
                }
            })
            .collect::<Result<_>>()?;

        let mut points: Vec<PointDispersion<T>> = Vec::with_capacity(raw.len());
        let mut min_eig = T::of(f64::INFINITY);
        let mut min_at = 0;
        for (idx, (p, m)) in raw.into_iter().enumerate() {
            if m < min_eig {
                min_eig = m;
                min_at = idx;
            }
            points.push(p);
        }

        if !analytic {
            // Central differences over one grid cell, per sorted eigenvalue
            // index; per-θ sorted labeling may be one-sided at crossings.
            let h = T::of(2.0) * T::pi() / T::of(grid.per_axis() as f64);
            let omegas: Vec<Vec<T>> = points.iter().map(|p| p.omegas.clone()).collect();
            for idx in 0..grid.points() {
                for axis in 0..grid.dim() {
                    let up = &omegas[grid.neighbor(idx, axis, 1)];
                    let down = &omegas[grid.neighbor(idx, axis, -1)];
                    let point = &mut points[idx];
                    let mut member = 0;
                    for band in &mut point.bands {
                        let mut vel = T::zero();
                        let mut lo = T::of(f64::INFINITY);
                        let mut hi = T::of(f64::NEG_INFINITY);
                        for i in member..member + band.multiplicity {
                            let v = (up[i] - down[i]) / (T::of(2.0) * h);
                            vel += v;
                            lo = lo.min(v);
                            hi = hi.max(v);
                        }
                        vel /= T::of(band.multiplicity as f64);
                        if band.multiplicity > 1 && hi - lo > options.vel_tol {
                            band.fd_degenerate = true;
                        }
                        band.velocity.push(vel);
                        band.signs.push(sign_of(vel, options.vel_tol));
                        member += band.multiplicity;
                    }
                }
            }
        }

        let mut v_max = T::zero();
        for p in &points {
            for b in &p.bands {
                for &v in &b.velocity {
                    v_max = v_max.max(v.abs());
                }
            }
        }

        Ok(Self {
            grid,
            components: interaction.components(),
            points,
            options,
            v_max,
            min_symbol_eigenvalue: min_eig,
            min_symbol_eigenvalue_at: min_at,
        })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn options(&self) -> &SpectralOptions<T> {
        &self.options
    }

    pub fn point(&self, index: usize) -> &PointDispersion<T> {
        &self.points[index]
    }

    pub fn iter_points(&self) -> impl Iterator<Item = (usize, &PointDispersion<T>)> {
        self.points.iter().enumerate()
    }

    /// Largest |group velocity| over the grid; sets the finite-size horizon.
    pub fn max_velocity(&self) -> T {
        self.v_max
    }

    pub fn min_symbol_eigenvalue(&self) -> (T, Vec<T>) {
        (
            self.min_symbol_eigenvalue,
            self.grid.theta(self.min_symbol_eigenvalue_at),
        )
    }
}

/// Per-component closed-form bands of a decoupled matrix, clustered by value.
fn analytic_point<T: Scalar>(
    interaction: &InteractionMatrix<T>,
    theta: &[T],
    options: &SpectralOptions<T>,
) -> (PointDispersion<T>, T) {
    let n = interaction.components();
    let d = interaction.dimension();
    let mut min_raw = T::of(f64::INFINITY);
    let mut entries: Vec<(T, usize, Vec<T>)> = (0..n)
        .map(|c| {
            let val = interaction.scalar_symbol(c, theta);
            min_raw = min_raw.min(val);
            let omega = val.max(T::zero()).sqrt();
            let vel: Vec<T> = (0..d)
                .map(|axis| {
                    let dv = interaction.scalar_symbol_derivative(c, theta, axis);
                    if omega > T::zero() {
                        dv / (T::of(2.0) * omega)
                    } else {
                        T::zero()
                    }
                })
                .collect();
            (omega, c, vel)
        })
        .collect();
    entries.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let omegas: Vec<T> = entries.iter().map(|e| e.0).collect();
    let tol = options.cluster_tol * omegas[n - 1].max(T::of(f64::MIN_POSITIVE));
    let mut bands = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && omegas[end] - omegas[end - 1] <= tol {
            end += 1;
        }
        let mut projector: DMatrix<Complex<T>> = DMatrix::zeros(n, n);
        let mut omega = T::zero();
        let mut velocity = vec![T::zero(); d];
        for e in &entries[start..end] {
            projector[(e.1, e.1)] = Complex::new(T::one(), T::zero());
            omega += e.0;
            for (axis, v) in e.2.iter().enumerate() {
                velocity[axis] += *v;
            }
        }
        let count = T::of((end - start) as f64);
        omega /= count;
        for v in velocity.iter_mut() {
            *v /= count;
        }
        let signs = velocity
            .iter()
            .map(|&v| sign_of(v, options.vel_tol))
            .collect();
        bands.push(Band {
            omega,
            multiplicity: end - start,
            projector,
            velocity,
            signs,
            fd_degenerate: false,
        });
        start = end;
    }
    (PointDispersion { omegas, bands }, min_raw)
}

/// Group-velocity evaluation mode for the standalone query.
#[derive(Debug, Clone, Copy)]
pub enum VelocityQuery<T: Scalar> {
    Analytic,
    FiniteDifference { step: T },
}

/// `∂ω_σ/∂θ_axis` at a single point. Analytic mode requires a decoupled
/// matrix; finite differencing refuses degenerate bands (the derivative of a
/// sorted eigenvalue may be one-sided there).
pub fn group_velocity<T: Scalar>(
    interaction: &InteractionMatrix<T>,
    theta: &[T],
    band: usize,
    axis: usize,
    mode: VelocityQuery<T>,
) -> Result<T> {
    if axis >= interaction.dimension() {
        return Err(Error::AxisOutOfRange {
            axis,
            dimension: interaction.dimension(),
        });
    }
    let options = SpectralOptions::<T>::default();
    match mode {
        VelocityQuery::Analytic => {
            if !interaction.decoupled() {
                return Err(Error::NotDecoupled);
            }
            let (point, _) = analytic_point(interaction, theta, &options);
            let b = point.bands.get(band).ok_or(Error::BandOutOfRange {
                band,
                bands: point.bands.len(),
            })?;
            if b.omega <= T::zero() {
                return Err(Error::DegenerateBand(
                    "zero frequency: group velocity undefined at a critical point".into(),
                ));
            }
            Ok(b.velocity[axis])
        }
        VelocityQuery::FiniteDifference { step } => {
            let symbol = interaction.symbol(theta);
            let (omegas, basis, _) = sorted_eigen(&symbol, options.psd_tol, theta)?;
            let bands = cluster_bands(&omegas, &basis, options.cluster_tol);
            let b = bands.get(band).ok_or(Error::BandOutOfRange {
                band,
                bands: bands.len(),
            })?;
            if b.multiplicity > 1 {
                return Err(Error::DegenerateBand(format!(
                    "band {band} has multiplicity {} at this point",
                    b.multiplicity
                )));
            }
            let member: usize = bands[..band].iter().map(|x| x.multiplicity).sum();
            let mut up = theta.to_vec();
            up[axis] += step;
            let mut down = theta.to_vec();
            down[axis] -= step;
            let (wu, _, _) = sorted_eigen(&interaction.symbol(&up), options.psd_tol, &up)?;
            let (wd, _, _) = sorted_eigen(&interaction.symbol(&down), options.psd_tol, &down)?;
            Ok((wu[member] - wd[member]) / (T::of(2.0) * step))
        }
    }
}

/// Numeric evidence for the conditions behind the limit formulas: E3
/// positivity, the near-singular set `C_0`, integrability of `‖V̂^{-1}‖`
/// (E6 / half-space E6'), and the zero-velocity fractions (E4, sets `C_σ`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    pub grid_per_axis: usize,
    pub e3_ok: bool,
    pub min_symbol_eigenvalue: f64,
    pub min_symbol_eigenvalue_theta: Vec<f64>,
    /// min |det V̂| on the coarse grid and on the doubled grid.
    pub min_abs_det: f64,
    pub min_abs_det_refined: f64,
    /// θ attaining the coarse minimum.
    pub min_det_theta: Vec<f64>,
    /// Refinement halved min|det| — a zero of det V̂ (the set C_0) is likely.
    pub c0_suspected: bool,
    /// `∫_{T^d} ‖V̂^{-1}‖ dθ` by midpoint rule at G and 2G.
    pub e6_integral: f64,
    pub e6_integral_refined: f64,
    pub e6_divergent: bool,
    /// Same with the `sin²(θ_1)` weight (half-space condition).
    pub e6_prime_integral: f64,
    pub e6_prime_integral_refined: f64,
    pub e6_prime_divergent: bool,
    /// Per band index, per axis: fraction of grid points with |∂ω| < vel_tol.
    pub low_velocity_fraction: Vec<Vec<f64>>,
}

const E6_GROWTH_THRESHOLD: f64 = 1.1;

/// Scan eigenvalues on a grid for the E6/E6'/det diagnostics.
fn condition_scan<T: Scalar>(
    interaction: &InteractionMatrix<T>,
    g: usize,
) -> (f64, Vec<f64>, f64, f64) {
    let grid = TorusGrid::new(interaction.dimension(), g);
    let cell: f64 = (2.0 * std::f64::consts::PI / g as f64).powi(interaction.dimension() as i32);
    let partials: Vec<(f64, usize, f64, f64)> = (0..grid.points())
        .into_par_iter()
        .map(|idx| {
            let theta = grid.theta::<T>(idx);
            let evs = interaction.symbol(&theta).symmetric_eigenvalues();
            let mut det = 1.0;
            let mut lam_min = f64::INFINITY;
            for &l in evs.iter() {
                let lf = l.to_f64();
                det *= lf;
                lam_min = lam_min.min(lf.abs());
            }
            let inv_norm = if lam_min > 0.0 { 1.0 / lam_min } else { f64::INFINITY };
            let sin1 = theta[0].to_f64().sin();
            (det.abs(), idx, inv_norm, sin1 * sin1 * inv_norm)
        })
        .collect();
    let mut min_det = f64::INFINITY;
    let mut min_idx = 0;
    let mut e6 = 0.0;
    let mut e6p = 0.0;
    for (det, idx, inv, winv) in partials {
        if det < min_det {
            min_det = det;
            min_idx = idx;
        }
        e6 += inv * cell;
        e6p += winv * cell;
    }
    let theta_min: Vec<f64> = grid
        .theta::<T>(min_idx)
        .iter()
        .map(|t| t.to_f64())
        .collect();
    (min_det, theta_min, e6, e6p)
}

pub fn validate_conditions<T: Scalar>(
    interaction: &InteractionMatrix<T>,
    dispersion: &DispersionData<T>,
) -> ConditionReport {
    let g = dispersion.grid().per_axis();
    let (min_det, min_det_theta, e6, e6p) = condition_scan(interaction, g);
    let (min_det_2, _, e6_2, e6p_2) = condition_scan(interaction, 2 * g);

    let c0_suspected = min_det_2 < 0.5 * min_det;
    let e6_divergent = e6_2 > E6_GROWTH_THRESHOLD * e6;
    let e6_prime_divergent = e6p_2 > E6_GROWTH_THRESHOLD * e6p;
    if e6_divergent {
        log::warn!("E6 integrand grows under grid refinement ({e6:.3e} -> {e6_2:.3e}); the limit covariance may not exist");
    }

    let max_bands = dispersion
        .iter_points()
        .map(|(_, p)| p.bands.len())
        .max()
        .unwrap_or(0);
    let d = dispersion.grid().dim();
    let mut low_counts = vec![vec![0usize; d]; max_bands];
    let mut band_counts = vec![0usize; max_bands];
    for (_, p) in dispersion.iter_points() {
        for (s, b) in p.bands.iter().enumerate() {
            band_counts[s] += 1;
            for axis in 0..d {
                if b.signs[axis] == 0 {
                    low_counts[s][axis] += 1;
                }
            }
        }
    }
    let low_velocity_fraction = low_counts
        .iter()
        .zip(&band_counts)
        .map(|(row, &c)| {
            row.iter()
                .map(|&k| if c > 0 { k as f64 / c as f64 } else { 0.0 })
                .collect()
        })
        .collect();

    let (min_eig, min_eig_theta) = dispersion.min_symbol_eigenvalue();
    ConditionReport {
        grid_per_axis: g,
        e3_ok: min_eig.to_f64() >= -dispersion.options().psd_tol.to_f64(),
        min_symbol_eigenvalue: min_eig.to_f64(),
        min_symbol_eigenvalue_theta: min_eig_theta.iter().map(|t| t.to_f64()).collect(),
        min_abs_det: min_det,
        min_abs_det_refined: min_det_2,
        min_det_theta,
        c0_suspected,
        e6_integral: e6,
        e6_integral_refined: e6_2,
        e6_divergent,
        e6_prime_integral: e6p,
        e6_prime_integral_refined: e6p_2,
        e6_prime_divergent,
        low_velocity_fraction,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn nn1(kappa: f64, mass: f64) -> InteractionMatrix<f64> {
        InteractionMatrix::nearest_neighbor(1, 1, &[kappa], &[mass]).unwrap()
    }

    /// Closed-form oracle for the nearest-neighbor dispersion.
    fn nn_omega(kappa: f64, mass: f64, theta: &[f64]) -> f64 {
        let s: f64 = theta.iter().map(|t| 2.0 * kappa * (1.0 - t.cos())).sum();
        (s + mass * mass).sqrt()
    }

    #[test]
    fn nearest_neighbor_stencils() {
        let v = nn1(1.0, 1.0);
        assert_eq!(v.block(&[0]).unwrap()[(0, 0)], 3.0);
        assert_eq!(v.block(&[1]).unwrap()[(0, 0)], -1.0);
        assert_eq!(v.block(&[-1]).unwrap()[(0, 0)], -1.0);
        assert!(v.block(&[2]).is_none());
        assert!(v.mirror_symmetric());

        let v2 = InteractionMatrix::<f64>::nearest_neighbor(2, 1, &[1.0], &[0.0]).unwrap();
        assert_eq!(v2.block(&[0, 0]).unwrap()[(0, 0)], 4.0);
        for off in [[1, 0], [-1, 0], [0, 1], [0, -1]] {
            assert_eq!(v2.block(&off).unwrap()[(0, 0)], -1.0);
        }

        // decoupled two-component chain: block-diagonal stencils
        let v3 =
            InteractionMatrix::<f64>::nearest_neighbor(1, 2, &[1.0, 2.0], &[1.0, 0.0]).unwrap();
        assert!(v3.decoupled());
        let c = v3.block(&[0]).unwrap();
        assert_eq!(c[(0, 0)], 3.0);
        assert_eq!(c[(1, 1)], 4.0);
        assert_eq!(c[(0, 1)], 0.0);
    }

    #[test]
    fn nearest_neighbor_rejects_bad_parameters() {
        assert!(InteractionMatrix::<f64>::nearest_neighbor(1, 1, &[0.0], &[1.0]).is_err());
        assert!(InteractionMatrix::<f64>::nearest_neighbor(1, 1, &[-1.0], &[1.0]).is_err());
        assert!(InteractionMatrix::<f64>::nearest_neighbor(1, 1, &[1.0], &[-0.5]).is_err());
    }

    #[test]
    fn symbol_values() {
        let v = nn1(1.0, 1.0);
        assert_relative_eq!(v.symbol(&[0.0])[(0, 0)].re, 1.0, epsilon = 1e-14);
        assert_relative_eq!(
            v.symbol(&[std::f64::consts::PI])[(0, 0)].re,
            5.0,
            epsilon = 1e-14
        );
        let v2 = InteractionMatrix::<f64>::nearest_neighbor(2, 1, &[1.0], &[0.0]).unwrap();
        let s = v2.symbol(&[std::f64::consts::PI, std::f64::consts::PI]);
        assert_relative_eq!(s[(0, 0)].re, 8.0, epsilon = 1e-14);
    }

    #[test]
    fn symmetry_violation_detected() {
        // V(1) without matching V(-1)
        let mut block = DMatrix::zeros(1, 1);
        block[(0, 0)] = -1.0;
        let err =
            InteractionMatrix::<f64>::from_stencil(1, 1, vec![(vec![1], block)]).unwrap_err();
        assert!(matches!(err, Error::SymmetryViolation { .. }));
    }

    #[test]
    fn eigendecompose_examples() {
        let opts = SpectralOptions::<f64>::default();
        // scalar V̂ = 5
        let m = DMatrix::from_element(1, 1, Complex::new(5.0, 0.0));
        let bands = eigendecompose(&m, &opts).unwrap();
        assert_eq!(bands.len(), 1);
        assert_relative_eq!(bands[0].omega, 5.0f64.sqrt(), epsilon = 1e-14);
        assert_eq!(bands[0].multiplicity, 1);

        // diag(1,4): two bands with coordinate projectors
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex::new(1.0, 0.0),
            Complex::new(4.0, 0.0),
        ]));
        let bands = eigendecompose(&m, &opts).unwrap();
        assert_eq!(bands.len(), 2);
        assert_relative_eq!(bands[0].omega, 1.0, epsilon = 1e-14);
        assert_relative_eq!(bands[1].omega, 2.0, epsilon = 1e-14);
        assert_relative_eq!(bands[0].projector[(0, 0)].re, 1.0, epsilon = 1e-12);
        assert_relative_eq!(bands[0].projector[(1, 1)].re, 0.0, epsilon = 1e-12);

        // exact degeneracy clusters into one band of multiplicity 2
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex::new(4.0, 0.0),
            Complex::new(4.0, 0.0),
        ]));
        let bands = eigendecompose(&m, &opts).unwrap();
        assert_eq!(bands.len(), 1);
        assert_eq!(bands[0].multiplicity, 2);
        assert_relative_eq!(bands[0].omega, 2.0, epsilon = 1e-14);
        assert_relative_eq!(bands[0].projector[(0, 0)].re, 1.0, epsilon = 1e-12);
        assert_relative_eq!(bands[0].projector[(1, 1)].re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn e3_violation_reported() {
        let m = DMatrix::from_element(1, 1, Complex::new(-1.0, 0.0));
        let err = eigendecompose(&m, &SpectralOptions::<f64>::default()).unwrap_err();
        assert!(matches!(err, Error::NotPositive { .. }));
    }

    #[test]
    fn group_velocity_examples() {
        let v = nn1(1.0, 1.0);
        let theta = [std::f64::consts::FRAC_PI_2];
        let got = group_velocity(&v, &theta, 0, 0, VelocityQuery::Analytic).unwrap();
        assert_relative_eq!(got, 1.0 / 3.0f64.sqrt(), epsilon = 1e-14);
        // ω even in θ: velocity vanishes at 0
        let at0 = group_velocity(&v, &[1e-300], 0, 0, VelocityQuery::Analytic).unwrap();
        assert!(at0.abs() < 1e-12);
    }

    #[test]
    fn finite_difference_second_order() {
        let v = nn1(1.0, 1.0);
        let theta = [0.9];
        let exact = group_velocity(&v, &theta, 0, 0, VelocityQuery::Analytic).unwrap();
        let e1 = (group_velocity(&v, &theta, 0, 0, VelocityQuery::FiniteDifference { step: 0.1 })
            .unwrap()
            - exact)
            .abs();
        let e2 = (group_velocity(
            &v,
            &theta,
            0,
            0,
            VelocityQuery::FiniteDifference { step: 0.05 },
        )
        .unwrap()
            - exact)
            .abs();
        // halving h quarters the error
        assert!(e2 < e1 / 3.0, "e1 = {e1:e}, e2 = {e2:e}");
    }

    #[test]
    fn finite_difference_flags_degenerate_band() {
        let v = InteractionMatrix::<f64>::nearest_neighbor(1, 2, &[1.0, 1.0], &[1.0, 1.0]).unwrap();
        let err = group_velocity(&v, &[0.7], 0, 0, VelocityQuery::FiniteDifference { step: 0.05 })
            .unwrap_err();
        assert!(matches!(err, Error::DegenerateBand(_)));
    }

    #[test]
    fn dispersion_matches_closed_form() {
        let v = nn1(1.0, 1.0);
        let data = DispersionData::build(&v, 64, SpectralOptions::default()).unwrap();
        for (idx, p) in data.iter_points() {
            let theta = data.grid().theta::<f64>(idx);
            assert_relative_eq!(p.bands[0].omega, nn_omega(1.0, 1.0, &theta), epsilon = 1e-12);
            // analytic velocity κ sinθ / ω
            let expect = theta[0].sin() / nn_omega(1.0, 1.0, &theta);
            assert_relative_eq!(p.bands[0].velocity[0], expect, epsilon = 1e-12);
        }
        assert!(data.max_velocity() < 1.0);
    }

    #[test]
    fn dispersion_invariants_hold() {
        // coupled stencil so the eigen path (not the analytic one) is exercised
        let mut center = DMatrix::zeros(2, 2);
        center[(0, 0)] = 5.0;
        center[(1, 1)] = 4.0;
        center[(0, 1)] = 0.5;
        center[(1, 0)] = 0.5;
        let mut hop = DMatrix::zeros(2, 2);
        hop[(0, 0)] = -1.0;
        hop[(1, 1)] = -1.0;
        hop[(0, 1)] = -0.25;
        hop[(1, 0)] = -0.25;
        let v = InteractionMatrix::from_stencil(
            1,
            2,
            vec![(vec![0], center), (vec![1], hop.clone()), (vec![-1], hop)],
        )
        .unwrap();
        assert!(!v.decoupled());
        let data = DispersionData::build(&v, 32, SpectralOptions::default()).unwrap();
        for (idx, p) in data.iter_points() {
            let theta = data.grid().theta::<f64>(idx);
            let symbol = v.symbol(&theta);
            let n = 2;
            let scale = 1.0 + symbol.norm();

            // Ω² = V̂
            let mut omega_sq: DMatrix<Complex<f64>> = DMatrix::zeros(n, n);
            let mut omega_mat: DMatrix<Complex<f64>> = DMatrix::zeros(n, n);
            let mut proj_sum: DMatrix<Complex<f64>> = DMatrix::zeros(n, n);
            let mut mult = 0;
            for b in &p.bands {
                omega_sq += b.projector.map(|z| z * Complex::new(b.omega * b.omega, 0.0));
                omega_mat += b.projector.map(|z| z * Complex::new(b.omega, 0.0));
                proj_sum += &b.projector;
                mult += b.multiplicity;

                // projector algebra
                let idem = (&b.projector * &b.projector) - &b.projector;
                assert!(idem.norm() <= 1e-10, "idempotency residue {}", idem.norm());
                let herm = b.projector.adjoint() - &b.projector;
                assert!(herm.norm() <= 1e-10);
            }
            assert_eq!(mult, n);
            assert!((omega_sq - &symbol).norm() <= 1e-10 * scale);
            assert!((proj_sum - DMatrix::<Complex<f64>>::identity(n, n)).norm() <= 1e-10);

            // Σ ω_σ Π_σ reproduces the Hermitian square root
            let omega_direct = {
                let eig = SymmetricEigen::new(symbol.clone());
                let vals = eig.eigenvalues.map(|l| Complex::new(l.max(0.0).sqrt(), 0.0));
                &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.adjoint()
            };
            assert!((omega_mat - omega_direct).norm() <= 1e-8);

            // realness of V: V̂(-θ) = conj V̂(θ)
            let reflected = data.grid().reflected(idx, 0);
            let sym_neg = v.symbol(&data.grid().theta::<f64>(reflected));
            assert!((sym_neg - symbol.map(|z| z.conj())).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn conditions_nn_massive_chain() {
        let v = nn1(1.0, 1.0);
        let data = DispersionData::build(&v, 64, SpectralOptions::default()).unwrap();
        let report = validate_conditions(&v, &data);
        assert!(report.e3_ok);
        assert!(!report.c0_suspected);
        assert!(!report.e6_divergent);
        // ∫ dθ/(3-2cosθ) = 2π/√5
        assert_relative_eq!(
            report.e6_integral,
            2.0 * std::f64::consts::PI / 5.0f64.sqrt(),
            max_relative = 1e-3
        );
    }

    #[test]
    fn conditions_massless_chain_flags_c0() {
        let v = nn1(1.0, 0.0);
        let data = DispersionData::build(&v, 64, SpectralOptions::default()).unwrap();
        let report = validate_conditions(&v, &data);
        assert!(report.e3_ok);
        assert!(report.c0_suspected, "det V̂ has a zero at θ = 0");
        assert!(report.e6_divergent);
        assert!(report.min_det_theta[0].abs() < 0.1);
        // the e6' weight tames the 1/θ² singularity in d = 1
        assert!(!report.e6_prime_divergent);
    }

    #[test]
    fn conditions_massless_3d_stabilize() {
        let v = InteractionMatrix::<f64>::nearest_neighbor(3, 1, &[1.0], &[0.0]).unwrap();
        let data = DispersionData::build(&v, 12, SpectralOptions::default()).unwrap();
        let report = validate_conditions(&v, &data);
        assert!(report.c0_suspected);
        assert!(!report.e6_divergent, "E6 converges for d >= 3");
    }

    proptest! {
        #[test]
        fn random_stencil_symbol_is_hermitian(
            a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, d0 in 0.5f64..4.0
        ) {
            // symmetrized two-component stencil on Z^1
            let mut center = DMatrix::zeros(2, 2);
            center[(0, 0)] = d0 + 4.0;
            center[(1, 1)] = d0 + 4.0;
            center[(0, 1)] = a;
            center[(1, 0)] = a;
            let mut right = DMatrix::zeros(2, 2);
            right[(0, 0)] = b;
            right[(1, 1)] = b;
            right[(0, 1)] = c;
            let left = right.transpose();
            let v = InteractionMatrix::from_stencil(
                1, 2, vec![(vec![0], center), (vec![1], right), (vec![-1], left)],
            ).unwrap();
            for i in 0..7 {
                let theta = [std::f64::consts::PI * (i as f64 / 3.5 - 1.0) + 0.05];
                let s = v.symbol(&theta);
                prop_assert!((s.adjoint() - &s).norm() < 1e-12);
                let sneg = v.symbol(&[-theta[0]]);
                prop_assert!((sneg - s.map(|z| z.conj())).norm() < 1e-12);
            }
        }
    }
}
