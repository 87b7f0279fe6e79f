//! Harmonic crystal in the half-space `x_1 ≥ 0` with zero boundary
//! condition, solved by the reflection principle: the odd extension of the
//! slab data onto a doubled torus evolves under the full-space propagator,
//! which reproduces the reflected Green function
//! `G_{t,+}(x,x') = G_t(x-x') - G_t(x-x'_-)` exactly when `V(x_-) = V(x)`.
//!
//! The limit objects use the half-space reservoir set (`n_1 = 2` fixed):
//! `Q^+_∞(x,y) = q⁺(x-y) - q⁺(x-y_-) - q⁺(x_- -y) + q⁺(x_- -y_-)` and the
//! current profile `J^l_{+,∞}(x_1)` with the `sin²(θ_1 x_1)` weight.

use crate::lattice::LatticeShape;
use crate::limits::{
    sc_symmetry_test, sign_sums, CovarianceGrid, LimitEngine, LimitReport,
};
use crate::measures::{FieldState, ReservoirLayout};
use crate::spectral::{DispersionData, InteractionMatrix};
use crate::{Error, Result, Scalar};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Half-space evolution on a slab `x_1 ∈ [0, N_1)` (transverse periodic).
/// The doubled torus has fixed planes at `x_1 = 0` and `x_1 = N_1`;
/// observables should only be read in `x_1 ∈ [1, N_1 - support radius)`.
pub struct HalfSpaceEvolver<T: Scalar> {
    slab: LatticeShape,
    doubled: LatticeShape,
    components: usize,
    table: crate::dynamics::SymbolTable<T>,
}

impl<T: Scalar> HalfSpaceEvolver<T> {
    pub fn new(interaction: &InteractionMatrix<T>, slab: &LatticeShape) -> Result<Self> {
        if !interaction.mirror_symmetric() {
            return Err(Error::MirrorSymmetryRequired);
        }
        let mut dims = slab.dims().to_vec();
        dims[0] *= 2;
        let doubled = LatticeShape::new(dims);
        let table = crate::dynamics::SymbolTable::new(interaction, &doubled)?;
        Ok(Self {
            slab: slab.clone(),
            doubled,
            components: interaction.components(),
            table,
        })
    }

    pub fn slab(&self) -> &LatticeShape {
        &self.slab
    }

    /// Odd extension in `x_1`: `Y(2N_1 - x_1) = -Y(x_1)`, fixed planes zero.
    pub fn odd_extend(&self, y: &FieldState<T>) -> Result<FieldState<T>> {
        if y.shape() != &self.slab || y.components() != self.components {
            return Err(Error::ShapeMismatch {
                expected: self.slab.dims().to_vec(),
                got: y.shape().dims().to_vec(),
            });
        }
        let n = self.components;
        let n1 = self.slab.dims()[0];
        let transverse = self.slab.stride(0);
        let mut out = FieldState::zeros(self.doubled.clone(), n);
        for x1 in 0..n1 {
            for s in 0..transverse {
                let src = (x1 * transverse + s) * n;
                let dst = (x1 * transverse + s) * n;
                for c in 0..n {
                    out.u_mut()[dst + c] = y.u()[src + c];
                    out.v_mut()[dst + c] = y.v()[src + c];
                }
                if x1 >= 1 {
                    let mirror = ((2 * n1 - x1) * transverse + s) * n;
                    for c in 0..n {
                        out.u_mut()[mirror + c] = -y.u()[src + c];
                        out.v_mut()[mirror + c] = -y.v()[src + c];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Restriction back to the slab; the boundary plane is zeroed exactly
    /// (it is zero up to roundoff by the odd symmetry).
    pub fn restrict(&self, y: &FieldState<T>) -> Result<FieldState<T>> {
        if y.shape() != &self.doubled {
            return Err(Error::ShapeMismatch {
                expected: self.doubled.dims().to_vec(),
                got: y.shape().dims().to_vec(),
            });
        }
        let n = self.components;
        let n1 = self.slab.dims()[0];
        let transverse = self.slab.stride(0);
        let mut out = FieldState::zeros(self.slab.clone(), n);
        for x1 in 0..n1 {
            for s in 0..transverse {
                let slot = (x1 * transverse + s) * n;
                for c in 0..n {
                    out.u_mut()[slot + c] = y.u()[slot + c];
                    out.v_mut()[slot + c] = y.v()[slot + c];
                }
            }
        }
        out.clear_boundary_plane();
        out.set_half_space(true)
    }

    /// Evolve half-space data by `t`: odd-extend, full-space evolve on the
    /// doubled torus, restrict.
    pub fn evolve(&self, y0: &FieldState<T>, t: T) -> Result<FieldState<T>> {
        self.propagator(t).evolve(y0)
    }

    /// Precompute the doubled-torus propagator for one time (reused across
    /// ensemble members).
    pub fn propagator(&self, t: T) -> HalfSpacePropagator<'_, T> {
        HalfSpacePropagator {
            evolver: self,
            prop: self.table.propagator(t),
        }
    }

    pub fn max_velocity_bound(&self) -> T {
        // crude bound from the doubled-lattice symbol table is not stored;
        // callers use the dispersion grid's max velocity instead
        T::zero()
    }
}

pub struct HalfSpacePropagator<'a, T: Scalar> {
    evolver: &'a HalfSpaceEvolver<T>,
    prop: crate::dynamics::Propagator<'a, T>,
}

impl<'a, T: Scalar> HalfSpacePropagator<'a, T> {
    pub fn evolve(&self, y0: &FieldState<T>) -> Result<FieldState<T>> {
        if !y0.half_space() {
            // accept unflagged data only if the boundary plane is zero
            y0.clone().set_half_space(true)?;
        }
        let extended = self.evolver.odd_extend(y0)?;
        let evolved = self.prop.apply(&extended)?;
        self.evolver.restrict(&evolved)
    }
}

/// Half-space layout constraints: mirror-symmetric interaction and the
/// `n_1 = 2` pattern set.
pub fn validate_halfspace_layout<T: Scalar>(
    layout: &ReservoirLayout<T>,
    interaction: &InteractionMatrix<T>,
) -> Result<()> {
    if !layout.is_half_space() {
        return Err(Error::InvalidConfig(
            "half-space run requires a layout over the n_1 = 2 patterns".into(),
        ));
    }
    if !interaction.mirror_symmetric() {
        return Err(Error::MirrorSymmetryRequired);
    }
    Ok(())
}

/// `Q^+_∞(x,y)` on a site pair from the half-space covariance grid
/// (`q⁺_∞` built with the `n_1 = 2` reservoir set). Returns the real part
/// and the worst imaginary residue of the four window transforms.
pub fn halfspace_pair_covariance<T: Scalar>(
    cov: &CovarianceGrid<T>,
    x: &[i64],
    y: &[i64],
) -> (DMatrix<T>, f64) {
    let minus = |z: &[i64]| {
        let mut m = z.to_vec();
        m[0] = -m[0];
        m
    };
    let diff = |a: &[i64], b: &[i64]| -> Vec<i64> {
        a.iter().zip(b).map(|(p, q)| p - q).collect()
    };
    let (t1, r1) = cov.real_space(&diff(x, y));
    let (t2, r2) = cov.real_space(&diff(x, &minus(y)));
    let (t3, r3) = cov.real_space(&diff(&minus(x), y));
    let (t4, r4) = cov.real_space(&diff(&minus(x), &minus(y)));
    (t1 - t2 - t3 + t4, r1.max(r2).max(r3).max(r4))
}

/// One row of the analytic half-space current profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub x1: i64,
    /// `J^l_{+,∞}(x_1)` per axis (index 0 ↔ axis 1, identically zero).
    pub current: Vec<f64>,
    /// `c_l(x_1)` per axis (sin²-weighted |∂_l ω| integrals).
    pub c_values: Vec<f64>,
    pub error_estimate: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HalfspaceProfile {
    pub entries: Vec<ProfileEntry>,
    /// The x_1 → ∞ asymptote `-c_l 2^{-(k-1)} Σ'(T|_{n_l=2} - T|_{n_l=1})`.
    pub asymptote: Vec<f64>,
}

/// Gibbs half-space current profile by quadrature:
/// `J^l_{+,∞}(x_1) = -4 (2π)^{-d} 2^{-k} Σ_σ ∫ r_σ sin²(θ_1 x_1)
///  (Σ_{n: n_1=2} T_n S^odd_{k,n}) ∂_l ω_σ dθ`, together with the
/// `c_l(x_1)` weights. `J^1 ≡ 0` and everything vanishes for d = 1.
pub fn halfspace_current_profile<T: Scalar>(
    layout: &ReservoirLayout<T>,
    dispersion: &DispersionData<T>,
    x1_values: &[i64],
) -> Result<Vec<(i64, Vec<T>, Vec<T>)>> {
    let temps = layout.temperatures().ok_or_else(|| {
        Error::InvalidConfig("half-space current profile requires a Gibbs layout".into())
    })?;
    if !layout.is_half_space() {
        return Err(Error::InvalidConfig(
            "current profile requires a half-space layout".into(),
        ));
    }
    let grid = dispersion.grid();
    let d = grid.dim();
    let k = layout.k();
    let norm = T::of(0.5).powi(k as i32);
    let weight = grid.weight::<T>();

    let mut out = Vec::with_capacity(x1_values.len());
    for &x1 in x1_values {
        if d == 1 {
            out.push((x1, vec![T::zero(); 1], vec![T::zero(); 1]));
            continue;
        }
        let partial: Vec<(Vec<T>, Vec<T>)> = (0..grid.points())
            .into_par_iter()
            .map(|idx| {
                let theta = grid.theta::<T>(idx);
                let sin2 = {
                    let s = (theta[0] * T::of(x1 as f64)).sin();
                    s * s
                };
                let point = dispersion.point(idx);
                let mut j = vec![T::zero(); d];
                let mut c = vec![T::zero(); d];
                for band in &point.bands {
                    let r = T::of(band.multiplicity as f64);
                    let mut temp_weight = T::zero();
                    for (res, pattern) in layout.patterns().iter().enumerate() {
                        let (_, odd) = sign_sums(&band.signs, pattern);
                        temp_weight += temps[res] * T::of(odd as f64);
                    }
                    for l in 1..d {
                        j[l] += r * sin2 * temp_weight * band.velocity[l];
                        c[l] += r * sin2 * band.velocity[l].abs();
                    }
                }
                (j, c)
            })
            .collect();
        let mut current = vec![T::zero(); d];
        let mut c_vals = vec![T::zero(); d];
        for (j, c) in partial {
            for l in 0..d {
                current[l] += j[l];
                c_vals[l] += c[l];
            }
        }
        for l in 0..d {
            current[l] *= -T::of(4.0) * weight * norm;
            c_vals[l] *= T::of(2.0) * weight;
        }
        out.push((x1, current, c_vals));
    }
    Ok(out)
}

/// Covariance-route half-space current (general spectra, Lemma-level form):
/// `J^l_{+,∞}(x_1) = -2i (2π)^{-d} ∫ sin²(θ_1 x_1)
///  tr[(q̂⁺_∞)^{10} ∂_l V̂] dθ`, `l ≥ 2`.
pub fn halfspace_current_from_covariance<T: Scalar>(
    cov: &CovarianceGrid<T>,
    interaction: &InteractionMatrix<T>,
    axis: usize,
    x1: i64,
) -> T {
    let grid = cov.grid();
    let n = cov.components();
    let mut acc = T::zero();
    for idx in 0..grid.points() {
        let theta = grid.theta::<T>(idx);
        let s = (theta[0] * T::of(x1 as f64)).sin();
        let dsym = interaction.symbol_derivative(&theta, axis);
        let q = cov.at(idx);
        // tr[q^{10} ∂_l V̂]
        let mut tr_im = T::zero();
        for a in 0..n {
            for b in 0..n {
                tr_im += (q[(n + a, b)] * dsym[(b, a)]).im;
            }
        }
        // -2i · (i Im + Re): the real part of the trace integrates to zero by
        // symmetry; the surviving real contribution is 2·Im(tr).
        acc += s * s * tr_im;
    }
    acc * T::of(2.0) * grid.weight::<T>()
}

/// Analytic half-space report: the `current` field carries the x_1 → ∞
/// asymptote, and `halfspace_profile` the finite-x_1 rows from the
/// sin²-weighted quadratures (error estimates from the coarse grid).
pub fn analytic_report_halfspace<T: Scalar>(
    interaction: &InteractionMatrix<T>,
    layout: &ReservoirLayout<T>,
    dispersion: &DispersionData<T>,
    coarse: &DispersionData<T>,
    x1_values: &[i64],
) -> Result<(LimitReport, CovarianceGrid<T>)> {
    validate_halfspace_layout(layout, interaction)?;
    let engine = LimitEngine::new(layout, dispersion)?;
    let covariance = engine.limiting_covariance()?;
    let symmetry = sc_symmetry_test(dispersion, layout.k());
    let d = dispersion.grid().dim();
    let k = layout.k();

    let c_constants = engine.c_coefficients();
    let mut c_l = vec![T::zero(); d];
    for c in &c_constants {
        if c.subset.len() == 1 && c.subset[0] == c.axis {
            c_l[c.axis - 1] = T::of(c.value.abs());
        }
    }

    // x_1 → ∞ asymptote: zero for l = 1 and l > k
    let temps = layout.temperatures().ok_or_else(|| {
        Error::InvalidConfig("half-space report requires a Gibbs layout".into())
    })?;
    let norm_half = T::of(0.5).powi(k as i32 - 1);
    let mut asymptote = vec![T::zero(); d];
    for l in 1..k.min(d) {
        let mut diff = T::zero();
        for (res, pattern) in layout.patterns().iter().enumerate() {
            diff += T::of(pattern.parity(l) as f64) * temps[res];
        }
        asymptote[l] = -c_l[l] * norm_half * diff;
    }

    let profile_fine = halfspace_current_profile(layout, dispersion, x1_values)?;
    let profile_coarse = halfspace_current_profile(layout, coarse, x1_values)?;
    let entries: Vec<ProfileEntry> = profile_fine
        .iter()
        .zip(&profile_coarse)
        .map(|((x1, j, c), (_, jc, _))| ProfileEntry {
            x1: *x1,
            current: j.iter().map(|v| v.to_f64()).collect(),
            c_values: c.iter().map(|v| v.to_f64()).collect(),
            error_estimate: j
                .iter()
                .zip(jc)
                .map(|(a, b)| (*a - *b).abs().to_f64())
                .collect(),
        })
        .collect();

    let kinetic = engine.kinetic_temperature()?;
    let closed_form = if (0..k).all(|a| symmetry.even_axes[a]) {
        engine.kinetic_temperature_closed_form().map(|v| v.to_f64())
    } else {
        None
    };

    let mut zeroed = 0usize;
    let mut counted = 0usize;
    for (_, p) in dispersion.iter_points() {
        for b in &p.bands {
            for j in 0..k {
                counted += 1;
                if b.signs[j] == 0 {
                    zeroed += 1;
                }
            }
        }
    }

    let report = LimitReport {
        k,
        half_space: true,
        grid_per_axis: dispersion.grid().per_axis(),
        coarse_grid_per_axis: coarse.grid().per_axis(),
        current: asymptote.iter().map(|v| v.to_f64()).collect(),
        current_coarse: asymptote.iter().map(|v| v.to_f64()).collect(),
        current_error_estimate: entries
            .last()
            .map(|e| e.error_estimate.clone())
            .unwrap_or_else(|| vec![0.0; d]),
        current_shortcut: None,
        shortcut_consistent: None,
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
        halfspace_profile: Some(HalfspaceProfile {
            entries,
            asymptote: asymptote.iter().map(|v| v.to_f64()).collect(),
        }),
    };
    Ok((report, covariance))
}

/// Empirical current density of a half-space field at hyperplane position
/// `x'` (the cut sits between `x'_axis - 1` and `x'_axis`), with the image
/// interaction `V(x-y) - V(x-y_-)`. A pair (x, y) contributes `V(w)` through
/// the direct loop at `w = x-y` and `-V(w)` through the image loop at
/// `w = x-y_-` (where `y_1 = w_1 - x_1`). The first axis never wraps: pairs
/// leaving `x_1 ∈ [0, N_1)` are outside the half-space.
pub fn halfspace_current_density<T: Scalar>(
    y: &FieldState<T>,
    interaction: &InteractionMatrix<T>,
    axis: usize,
    x_prime: &[usize],
) -> Result<T> {
    let shape = y.shape();
    let d = shape.dim();
    if axis >= d {
        return Err(Error::AxisOutOfRange { axis, dimension: d });
    }
    let n = y.components();
    let n1 = shape.dims()[0] as i64;
    let cut = x_prime[axis] as i64;
    let mut total = T::zero();

    let pair_term = |xsite: usize, ysite: usize, block: &nalgebra::DMatrix<T>| -> T {
        let mut term = T::zero();
        for r in 0..n {
            let vr = y.v()[xsite * n + r];
            for c in 0..n {
                term += vr * block[(r, c)] * y.u()[ysite * n + c];
            }
        }
        term
    };

    let mut x = vec![0usize; d];
    let mut ycoords = vec![0usize; d];
    for (offset, block) in interaction.support() {
        let wa = offset[axis];

        // direct pairs y = x - w: straddle ranges from w_axis
        if wa != 0 {
            let (m_lo, m_hi, sign) = if wa < 0 {
                (wa, -1i64, T::one())
            } else {
                (0i64, wa - 1, -T::one())
            };
            for m in m_lo..=m_hi {
                x.copy_from_slice(x_prime);
                let xa = cut + m;
                if axis == 0 {
                    if xa < 0 || xa >= n1 {
                        continue;
                    }
                    x[0] = xa as usize;
                } else {
                    x[axis] = xa.rem_euclid(shape.dims()[axis] as i64) as usize;
                }
                let y1 = x[0] as i64 - offset[0];
                if y1 < 0 || y1 >= n1 {
                    continue;
                }
                ycoords[0] = y1 as usize;
                for a in 1..d {
                    ycoords[a] =
                        (x[a] as i64 - offset[a]).rem_euclid(shape.dims()[a] as i64) as usize;
                }
                total += sign * pair_term(shape.index(&x), shape.index(&ycoords), block);
            }
        }

        // image pairs y_- = x - w, i.e. y_1 = w_1 - x_1, transverse y = x - w
        if axis >= 1 {
            if wa == 0 {
                continue;
            }
            let (m_lo, m_hi, sign) = if wa < 0 {
                (wa, -1i64, T::one())
            } else {
                (0i64, wa - 1, -T::one())
            };
            for m in m_lo..=m_hi {
                x.copy_from_slice(x_prime);
                x[axis] = (cut + m).rem_euclid(shape.dims()[axis] as i64) as usize;
                let y1 = offset[0] - x[0] as i64;
                if y1 < 0 || y1 >= n1 {
                    continue;
                }
                ycoords[0] = y1 as usize;
                for a in 1..d {
                    ycoords[a] =
                        (x[a] as i64 - offset[a]).rem_euclid(shape.dims()[a] as i64) as usize;
                }
                total -= sign * pair_term(shape.index(&x), shape.index(&ycoords), block);
            }
        } else {
            // axis 0: the image pair's sides depend on x_1 and y_1 = w_1 - x_1
            // separately; both lie within the support radius of the wall.
            let radius = interaction.support_radius();
            for m in -radius..=radius {
                let x1 = cut + m;
                if x1 < 0 || x1 >= n1 {
                    continue;
                }
                let y1 = offset[0] - x1;
                if y1 < 0 || y1 >= n1 {
                    continue;
                }
                let p = y1 - cut;
                let sign = if m <= -1 && p >= 0 {
                    T::one()
                } else if m >= 0 && p <= -1 {
                    -T::one()
                } else {
                    continue;
                };
                x.copy_from_slice(x_prime);
                x[0] = x1 as usize;
                ycoords[0] = y1 as usize;
                for a in 1..d {
                    ycoords[a] =
                        (x[a] as i64 - offset[a]).rem_euclid(shape.dims()[a] as i64) as usize;
                }
                total -= sign * pair_term(shape.index(&x), shape.index(&ycoords), block);
            }
        }
    }
    Ok(total * T::of(0.5))
}

/// Current across the `x_1` cut at `cut`, averaged over all transverse
/// positions (the empirical counterpart of `J^1_{+,∞} ≡ 0`).
pub fn halfspace_longitudinal_current<T: Scalar>(
    y: &FieldState<T>,
    interaction: &InteractionMatrix<T>,
    cut: usize,
) -> Result<T> {
    let shape = y.shape();
    let transverse = shape.stride(0);
    let mut acc = T::zero();
    let mut coords = vec![0usize; shape.dim()];
    for s in 0..transverse {
        let mut rem = s;
        for a in (1..shape.dim()).rev() {
            coords[a] = rem % shape.dims()[a];
            rem /= shape.dims()[a];
        }
        coords[0] = cut;
        acc += halfspace_current_density(y, interaction, 0, &coords)?;
    }
    Ok(acc / T::of(transverse as f64))
}
