//! Exact time evolution on periodic lattices via the Fourier-space
//! propagator, plus energy and empirical energy-current observables.
//!
//! The solution operator acts per discrete frequency as the block matrix
//!
//! ```text
//! Ĝ_t(θ) = [  cos Ωt        sin Ωt · Ω⁻¹ ]
//!          [ -sin Ωt · Ω    cos Ωt       ]      Ω = V̂(θ)^{1/2},
//! ```
//!
//! applied eigenvalue-wise, with `sin(ωt)/ω → t` on zero modes (the free
//! mode evolves as `u + t·v` exactly).

use crate::fft::NdFft;
use crate::lattice::LatticeShape;
use crate::measures::FieldState;
use crate::spectral::{sorted_eigen, InteractionMatrix, SpectralOptions};
use crate::{Error, Result, Scalar};
use nalgebra::DMatrix;
use num_complex::Complex;

/// Frequency below which `sin(ωt)/ω` switches to its limit `t`.
const ZERO_TOL: f64 = 1e-12;

/// Eigendata of the symbol at every lattice frequency of one shape.
/// Building this once amortizes the eigendecompositions over all propagator
/// times and ensemble members.
pub struct SymbolTable<T: Scalar> {
    shape: LatticeShape,
    components: usize,
    omegas: Vec<T>,          // sites × n, sorted per site
    bases: Vec<Complex<T>>,  // sites × n×n, row-major unitary columns
    fft: NdFft<T>,
}

impl<T: Scalar> SymbolTable<T> {
    pub fn new(interaction: &InteractionMatrix<T>, shape: &LatticeShape) -> Result<Self> {
        if interaction.dimension() != shape.dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![interaction.dimension()],
                got: shape.dims().to_vec(),
            });
        }
        let n = interaction.components();
        let psd_tol = SpectralOptions::<T>::default().psd_tol;
        let mut omegas = vec![T::zero(); shape.sites() * n];
        let mut bases = vec![Complex::default(); shape.sites() * n * n];
        for site in shape.iter_sites() {
            let theta = shape.frequency::<T>(&shape.coords(site));
            let symbol = interaction.symbol(&theta);
            let (w, basis, _) = sorted_eigen(&symbol, psd_tol, &theta)?;
            omegas[site * n..(site + 1) * n].copy_from_slice(&w);
            for r in 0..n {
                for c in 0..n {
                    bases[site * n * n + r * n + c] = basis[(r, c)];
                }
            }
        }
        Ok(Self {
            shape: shape.clone(),
            components: n,
            omegas,
            bases,
            fft: NdFft::new(shape),
        })
    }

    pub fn shape(&self) -> &LatticeShape {
        &self.shape
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// Assemble the propagator for one time.
    pub fn propagator(&self, t: T) -> Propagator<'_, T> {
        let n = self.components;
        let m = 2 * n;
        let sites = self.shape.sites();
        let mut blocks = vec![Complex::<T>::default(); sites * m * m];
        let mut cos_d = vec![T::zero(); n];
        let mut sinv_d = vec![T::zero(); n];
        let mut sinw_d = vec![T::zero(); n];
        for site in 0..sites {
            for i in 0..n {
                let w = self.omegas[site * n + i];
                let wt = w * t;
                cos_d[i] = wt.cos();
                if w < T::of(ZERO_TOL) {
                    sinv_d[i] = t; // sin(ωt)/ω → t
                    sinw_d[i] = T::zero(); // sin(ωt)·ω → 0
                } else {
                    sinv_d[i] = wt.sin() / w;
                    sinw_d[i] = wt.sin() * w;
                }
            }
            let base = site * m * m;
            let bb = &self.bases[site * n * n..(site + 1) * n * n];
            for r in 0..n {
                for c in 0..n {
                    let mut cos_e = Complex::<T>::default();
                    let mut sinv_e = Complex::<T>::default();
                    let mut sinw_e = Complex::<T>::default();
                    for i in 0..n {
                        let f = bb[r * n + i] * bb[c * n + i].conj();
                        cos_e += f.scale(cos_d[i]);
                        sinv_e += f.scale(sinv_d[i]);
                        sinw_e += f.scale(sinw_d[i]);
                    }
                    blocks[base + r * m + c] = cos_e;
                    blocks[base + r * m + (n + c)] = sinv_e;
                    blocks[base + (n + r) * m + c] = -sinw_e;
                    blocks[base + (n + r) * m + (n + c)] = cos_e;
                }
            }
        }
        Propagator {
            table: self,
            t,
            blocks,
        }
    }
}

/// The propagator `Ĝ_t` tabulated at every lattice frequency. Immutable;
/// applying it to many fields shares the table.
pub struct Propagator<'a, T: Scalar> {
    table: &'a SymbolTable<T>,
    t: T,
    blocks: Vec<Complex<T>>,
}

impl<'a, T: Scalar> Propagator<'a, T> {
    pub fn time(&self) -> T {
        self.t
    }

    /// `Ĝ_t(θ_k)` at lattice mode `k` (for identity checks).
    pub fn block_at(&self, site: usize) -> DMatrix<Complex<T>> {
        let m = 2 * self.table.components;
        let base = site * m * m;
        DMatrix::from_fn(m, m, |r, c| self.blocks[base + r * m + c])
    }

    /// Evolve: forward transform, multiply blockwise, inverse transform.
    /// Exact up to FFT roundoff for the periodic system.
    pub fn apply(&self, y: &FieldState<T>) -> Result<FieldState<T>> {
        let shape = &self.table.shape;
        if y.shape() != shape || y.components() != self.table.components {
            return Err(Error::ShapeMismatch {
                expected: shape.dims().to_vec(),
                got: y.shape().dims().to_vec(),
            });
        }
        let n = self.table.components;
        let m = 2 * n;
        let sites = shape.sites();

        let mut planes: Vec<Vec<Complex<T>>> =
            (0..m).map(|_| vec![Complex::default(); sites]).collect();
        for site in 0..sites {
            for c in 0..n {
                let slot = site * n + c;
                planes[c][site] = Complex::new(y.u()[slot], T::zero());
                planes[n + c][site] = Complex::new(y.v()[slot], T::zero());
            }
        }
        for plane in planes.iter_mut() {
            self.table.fft.forward(plane, shape);
        }

        let mut scratch = vec![Complex::<T>::default(); m];
        for site in 0..sites {
            let base = site * m * m;
            for (r, slot) in scratch.iter_mut().enumerate() {
                let mut acc = Complex::default();
                for c in 0..m {
                    acc += self.blocks[base + r * m + c] * planes[c][site];
                }
                *slot = acc;
            }
            for (plane, value) in planes.iter_mut().zip(&scratch) {
                plane[site] = *value;
            }
        }

        for plane in planes.iter_mut() {
            self.table.fft.inverse(plane, shape);
        }

        let mut out = FieldState::zeros(shape.clone(), n);
        for site in 0..sites {
            for c in 0..n {
                let slot = site * n + c;
                out.u_mut()[slot] = planes[c][site].re;
                out.v_mut()[slot] = planes[n + c][site].re;
            }
        }
        Ok(out)
    }
}

/// Convenience wrapper: evolve `y0` by time `t`.
pub fn evolve<T: Scalar>(y0: &FieldState<T>, table: &SymbolTable<T>, t: T) -> Result<FieldState<T>> {
    table.propagator(t).apply(y0)
}

/// `(𝒱u)(x) = Σ_w V(w) u(x-w)` with periodic wrap.
pub fn apply_potential<T: Scalar>(
    interaction: &InteractionMatrix<T>,
    shape: &LatticeShape,
    u: &[T],
) -> Vec<T> {
    let n = interaction.components();
    let mut out = vec![T::zero(); u.len()];
    let mut neg = vec![0i64; shape.dim()];
    for (offset, block) in interaction.support() {
        for (slot, value) in neg.iter_mut().enumerate() {
            *value = -offset[slot];
        }
        for site in shape.iter_sites() {
            let coords = shape.coords(site);
            let src = shape.wrapped(&coords, &neg);
            for r in 0..n {
                let mut acc = T::zero();
                for c in 0..n {
                    acc += block[(r, c)] * u[src * n + c];
                }
                out[site * n + r] += acc;
            }
        }
    }
    out
}

/// Hamiltonian `H = ½⟨v,v⟩ + ½⟨u,𝒱u⟩` with the periodic convolution.
pub fn energy<T: Scalar>(y: &FieldState<T>, interaction: &InteractionMatrix<T>) -> T {
    let vu = apply_potential(interaction, y.shape(), y.u());
    let mut kinetic = T::zero();
    for &vi in y.v() {
        kinetic += vi * vi;
    }
    let mut potential = T::zero();
    for (ui, vui) in y.u().iter().zip(&vu) {
        potential += *ui * *vui;
    }
    (kinetic + potential) * T::of(0.5)
}

/// Energy current density across the cut between planes `x_axis = cut-1` and
/// `x_axis = cut`, in the `+e_axis` direction, averaged over the transverse
/// hyperplane. Positive values mean energy flowing toward larger `x_axis`.
///
/// This is the finite-support reduction of the hyperplane double sum
/// `½ Σ_{y'} (Σ_{m≤-1,p≥0} - Σ_{m≥0,p≤-1}) (v(x'+m e_l), V(Δ) u(y'+p e_l))`:
/// only pairs straddling the cut survive, so for every stencil offset `w`
/// with `w_axis ≠ 0` exactly `|w_axis|` planes of sites contribute.
pub fn plane_current<T: Scalar>(
    y: &FieldState<T>,
    interaction: &InteractionMatrix<T>,
    axis: usize,
    cut: usize,
) -> Result<T> {
    let shape = y.shape();
    if axis >= shape.dim() {
        return Err(Error::AxisOutOfRange {
            axis,
            dimension: shape.dim(),
        });
    }
    let n = y.components();
    let sites_per_plane = shape.sites() / shape.dims()[axis];
    let mut total = T::zero();
    let mut neg = vec![0i64; shape.dim()];
    for (offset, block) in interaction.support() {
        let wa = offset[axis];
        if wa == 0 {
            continue;
        }
        for (slot, value) in neg.iter_mut().enumerate() {
            *value = -offset[slot];
        }
        // m ∈ [w_a, -1] for w_a < 0 (plus side), m ∈ [0, w_a-1] minus side
        let (m_lo, m_hi, sign) = if wa < 0 {
            (wa, -1i64, T::one())
        } else {
            (0i64, wa - 1, -T::one())
        };
        for m in m_lo..=m_hi {
            for_plane_sites(shape, axis, cut as i64 + m, |site, coords| {
                let src = shape.wrapped(coords, &neg);
                let mut term = T::zero();
                for r in 0..n {
                    let vr = y.v()[site * n + r];
                    for c in 0..n {
                        term += vr * block[(r, c)] * y.u()[src * n + c];
                    }
                }
                total += sign * term;
            });
        }
    }
    Ok(total * T::of(0.5) / T::of(sites_per_plane as f64))
}

/// Visit every site whose `axis` coordinate equals `plane` (wrapped).
pub(crate) fn for_plane_sites<T>(
    shape: &LatticeShape,
    axis: usize,
    plane: i64,
    mut visit: impl FnMut(usize, &[usize]) -> T,
) {
    let d = shape.dim();
    let p = plane.rem_euclid(shape.dims()[axis] as i64) as usize;
    let stride = shape.stride(axis);
    let outer: usize = shape.dims()[..axis].iter().product();
    let na = shape.dims()[axis];
    let mut coords = vec![0usize; d];
    coords[axis] = p;
    for o in 0..outer {
        let mut rem = o;
        for a in (0..axis).rev() {
            coords[a] = rem % shape.dims()[a];
            rem /= shape.dims()[a];
        }
        let base = (o * na + p) * stride;
        for s in 0..stride {
            let mut rem = s;
            for a in (axis + 1..d).rev() {
                coords[a] = rem % shape.dims()[a];
                rem /= shape.dims()[a];
            }
            visit(base + s, &coords);
        }
    }
}

/// Weighted phase-space norm `Σ_x ⟨x⟩^{2α} (|u|² + |v|²)` with
/// `⟨x⟩ = √(1+|x|²)` from centered coordinates (half-space fields measure
/// axis 1 from the wall).
pub fn weighted_norm<T: Scalar>(y: &FieldState<T>, alpha: T) -> T {
    let shape = y.shape();
    let n = y.components();
    let mut total = T::zero();
    for site in shape.iter_sites() {
        let coords = shape.coords(site);
        let mut centered = shape.centered(&coords);
        if y.half_space() {
            centered[0] = coords[0] as i64;
        }
        let mut dist_sq = T::one();
        for c in centered {
            dist_sq += T::of((c * c) as f64);
        }
        let weight = dist_sq.powf(alpha);
        let mut mag = T::zero();
        for comp in 0..n {
            let slot = site * n + comp;
            mag += y.u()[slot] * y.u()[slot] + y.v()[slot] * y.v()[slot];
        }
        total += weight * mag;
    }
    total
}

/// Finite-size validity horizon: ensemble observables are trusted only for
/// `t ≤ (min_l N_l/2 - a - support radius) / v_max`, beyond which periodic
/// wraparound contaminates the infinite-lattice comparison.
pub fn finite_size_horizon<T: Scalar>(
    shape: &LatticeShape,
    splice_half_width: i64,
    support_radius: i64,
    v_max: T,
) -> T {
    let min_n = *shape.dims().iter().min().unwrap() as f64;
    let room = T::of(min_n / 2.0 - splice_half_width as f64 - support_radius as f64);
    if v_max <= T::zero() {
        T::of(f64::INFINITY)
    } else {
        room / v_max
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{split_seed, GaussianMeasureSpec, Sampler};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn nn_chain(kappa: f64, mass: f64) -> InteractionMatrix<f64> {
        InteractionMatrix::nearest_neighbor(1, 1, &[kappa], &[mass]).unwrap()
    }

    fn random_field(shape: &LatticeShape, seed: u64) -> FieldState<f64> {
        let spec = GaussianMeasureSpec::gibbs(
            Arc::new(InteractionMatrix::nearest_neighbor(
                shape.dim(),
                1,
                &vec![1.0; 1],
                &vec![1.0; 1],
            )
            .unwrap()),
            1.0,
            None,
        )
        .unwrap();
        Sampler::new(&spec, shape).unwrap().sample(seed)
    }

    fn max_abs_diff(a: &FieldState<f64>, b: &FieldState<f64>) -> f64 {
        a.u()
            .iter()
            .zip(b.u())
            .chain(a.v().iter().zip(b.v()))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    fn max_abs(a: &FieldState<f64>) -> f64 {
        a.u()
            .iter()
            .chain(a.v().iter())
            .map(|x| x.abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_time_is_identity() {
        let shape = LatticeShape::new(vec![32]);
        let v = nn_chain(1.0, 1.0);
        let table = SymbolTable::new(&v, &shape).unwrap();
        let y0 = random_field(&shape, 3);
        let y = evolve(&y0, &table, 0.0).unwrap();
        assert!(max_abs_diff(&y, &y0) <= 1e-12 * (1.0 + max_abs(&y0)));
    }

    #[test]
    fn single_mode_oscillates_in_closed_form() {
        let shape = LatticeShape::new(vec![16]);
        let v = nn_chain(1.0, 1.0);
        let table = SymbolTable::new(&v, &shape).unwrap();
        let theta = 2.0 * std::f64::consts::PI * 3.0 / 16.0;
        let omega = (2.0 * (1.0 - theta.cos()) + 1.0).sqrt();
        let (a, b) = (0.7, -0.4);
        let mut y0 = FieldState::zeros(shape.clone(), 1);
        for x in 0..16 {
            y0.u_mut()[x] = a * (theta * x as f64).cos();
            y0.v_mut()[x] = b * (theta * x as f64).cos();
        }
        let t = 2.37;
        let y = evolve(&y0, &table, t).unwrap();
        for x in 0..16 {
            let expect_u =
                (theta * x as f64).cos() * (a * (omega * t).cos() + b * (omega * t).sin() / omega);
            let expect_v =
                (theta * x as f64).cos() * (-a * omega * (omega * t).sin() + b * (omega * t).cos());
            assert_relative_eq!(y.u()[x], expect_u, epsilon = 1e-12);
            assert_relative_eq!(y.v()[x], expect_v, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_mode_evolves_freely() {
        // massless chain: the k = 0 mode is free, u + t·v exactly
        let shape = LatticeShape::new(vec![8]);
        let v = nn_chain(1.0, 0.0);
        let table = SymbolTable::new(&v, &shape).unwrap();
        let mut y0 = FieldState::zeros(shape.clone(), 1);
        for x in 0..8 {
            y0.u_mut()[x] = 0.3;
            y0.v_mut()[x] = -0.2;
        }
        let y = evolve(&y0, &table, 5.0).unwrap();
        for x in 0..8 {
            assert_relative_eq!(y.u()[x], 0.3 - 0.2 * 5.0, epsilon = 1e-12);
            assert_relative_eq!(y.v()[x], -0.2, epsilon = 1e-12);
        }
    }

    #[test]
    fn group_law_reversibility_linearity() {
        let shape = LatticeShape::new(vec![24]);
        let v = nn_chain(1.0, 1.0);
        let table = SymbolTable::new(&v, &shape).unwrap();
        let y0 = random_field(&shape, 11);
        let scale = 1.0 + max_abs(&y0);

        let (t, s) = (3.1, 1.7);
        let via_two = evolve(&evolve(&y0, &table, s).unwrap(), &table, t).unwrap();
        let direct = evolve(&y0, &table, t + s).unwrap();
        assert!(max_abs_diff(&via_two, &direct) <= 1e-9 * scale);

        let back = evolve(&evolve(&y0, &table, t).unwrap(), &table, -t).unwrap();
        assert!(max_abs_diff(&back, &y0) <= 1e-9 * scale);

        let z0 = random_field(&shape, 12);
        let mut combo = y0.clone();
        combo.scale(0.3);
        combo.scaled_add(&z0, -1.2).unwrap();
        let lhs = evolve(&combo, &table, t).unwrap();
        let mut rhs = evolve(&y0, &table, t).unwrap();
        rhs.scale(0.3);
        rhs.scaled_add(&evolve(&z0, &table, t).unwrap(), -1.2).unwrap();
        assert!(max_abs_diff(&lhs, &rhs) <= 1e-10 * scale);
    }

    #[test]
    fn propagator_identities_per_frequency() {
        let shape = LatticeShape::new(vec![12]);
        let v = nn_chain(1.0, 1.0);
        let table = SymbolTable::new(&v, &shape).unwrap();
        let (t, s) = (1.9, 0.6);
        let pt = table.propagator(t);
        let ps = table.propagator(s);
        let pts = table.propagator(t + s);
        let j = DMatrix::from_fn(2, 2, |r, c| {
            Complex::new(
                match (r, c) {
                    (0, 1) => 1.0,
                    (1, 0) => -1.0,
                    _ => 0.0,
                },
                0.0,
            )
        });
        for site in shape.iter_sites() {
            let g0 = table.propagator(0.0).block_at(site);
            assert!((g0 - DMatrix::<Complex<f64>>::identity(2, 2)).norm() <= 1e-12);

            let law = pt.block_at(site) * ps.block_at(site) - pts.block_at(site);
            assert!(law.norm() <= 1e-10, "group law residue {}", law.norm());

            // symplectic: Ĝ* J Ĝ = J (transpose form for real blocks)
            let g = pt.block_at(site);
            let res = g.adjoint() * &j * &g - &j;
            assert!(res.norm() <= 1e-10, "symplectic residue {}", res.norm());
        }
    }

    #[test]
    fn gibbs_is_stationary_per_frequency() {
        let shape = LatticeShape::new(vec![10]);
        let v = Arc::new(nn_chain(1.3, 0.7));
        let spec = GaussianMeasureSpec::gibbs(v.clone(), 2.4, None).unwrap();
        let table = SymbolTable::new(&v, &shape).unwrap();
        let p = table.propagator(3.3);
        for site in shape.iter_sites() {
            let theta = shape.frequency::<f64>(&shape.coords(site));
            let q = spec.eval(&theta).unwrap();
            let g = p.block_at(site);
            let res = &g * &q * g.adjoint() - &q;
            assert!(res.norm() <= 1e-10 * (1.0 + q.norm()));
        }
    }

    #[test]
    fn energy_examples_and_conservation() {
        let shape = LatticeShape::new(vec![64]);
        let v = nn_chain(1.0, 1.0);
        assert_eq!(energy(&FieldState::zeros(shape.clone(), 1), &v), 0.0);

        // single-site displacement: H = V(0)/2
        let mut delta = FieldState::zeros(shape.clone(), 1);
        delta.u_mut()[10] = 1.0;
        assert_relative_eq!(energy(&delta, &v), 1.5, epsilon = 1e-14);

        let table = SymbolTable::new(&v, &shape).unwrap();
        let y0 = random_field(&shape, 21);
        let h0 = energy(&y0, &v);
        for &t in &[1.0, 7.5, 40.0] {
            let ht = energy(&evolve(&y0, &table, t).unwrap(), &v);
            assert!((ht - h0).abs() <= 1e-9 * (1.0 + h0), "t={t}: {ht} vs {h0}");
        }
    }

    #[test]
    fn energy_matches_parseval() {
        let shape = LatticeShape::new(vec![20]);
        let v = nn_chain(1.0, 1.0);
        let y = random_field(&shape, 31);
        let fft = NdFft::<f64>::new(&shape);
        let mut uhat: Vec<Complex<f64>> = y.u().iter().map(|&x| Complex::new(x, 0.0)).collect();
        let mut vhat: Vec<Complex<f64>> = y.v().iter().map(|&x| Complex::new(x, 0.0)).collect();
        fft.forward(&mut uhat, &shape);
        fft.forward(&mut vhat, &shape);
        let mut spectral = 0.0;
        for site in shape.iter_sites() {
            let theta = shape.frequency::<f64>(&shape.coords(site));
            let symbol = v.symbol(&theta)[(0, 0)].re;
            spectral += vhat[site].norm_sqr() + symbol * uhat[site].norm_sqr();
        }
        spectral *= 0.5 / shape.sites() as f64;
        let direct = energy(&y, &v);
        assert_relative_eq!(spectral, direct, max_relative = 1e-9);
    }

    #[test]
    fn current_vanishes_without_velocity() {
        let shape = LatticeShape::new(vec![16]);
        let v = nn_chain(1.0, 1.0);
        let mut y = FieldState::zeros(shape.clone(), 1);
        for (i, x) in y.u_mut().iter_mut().enumerate() {
            *x = (i as f64 * 0.611).sin();
        }
        for cut in 0..16 {
            assert_eq!(plane_current(&y, &v, 0, cut).unwrap(), 0.0);
        }
    }

    #[test]
    fn nn_chain_bond_current_closed_form() {
        // independent expansion of the hyperplane double sum for the nearest
        // neighbor stencil: J(cut) = (κ/2)[v(cut) u(cut-1) - v(cut-1) u(cut)]
        let shape = LatticeShape::new(vec![16]);
        let kappa = 1.4;
        let v = nn_chain(kappa, 0.8);
        let y = random_field(&shape, 41);
        for cut in [0usize, 1, 7, 15] {
            let left = (cut + 16 - 1) % 16;
            let expect = 0.5 * kappa * (y.v()[cut] * y.u()[left] - y.v()[left] * y.u()[cut]);
            assert_relative_eq!(
                plane_current(&y, &v, 0, cut).unwrap(),
                expect,
                epsilon = 1e-13
            );
        }
    }

    #[test]
    fn right_moving_wave_carries_positive_current() {
        let shape = LatticeShape::new(vec![16]);
        let v = nn_chain(1.0, 1.0);
        let theta = 2.0 * std::f64::consts::PI * 2.0 / 16.0;
        let omega = (2.0 * (1.0 - theta.cos()) + 1.0).sqrt();
        let mut y = FieldState::zeros(shape.clone(), 1);
        for x in 0..16 {
            y.u_mut()[x] = (theta * x as f64).cos();
            y.v_mut()[x] = omega * (theta * x as f64).sin();
        }
        let j = plane_current(&y, &v, 0, 8).unwrap();
        assert!(j > 0.0, "rightward wave should carry positive current, got {j}");
    }

    #[test]
    fn uniform_gibbs_current_is_statistically_zero() {
        let shape = LatticeShape::new(vec![64]);
        let v = Arc::new(nn_chain(1.0, 1.0));
        let spec = GaussianMeasureSpec::gibbs(v.clone(), 2.0, None).unwrap();
        let sampler = Sampler::new(&spec, &shape).unwrap();
        let table = SymbolTable::new(&v, &shape).unwrap();
        let prop = table.propagator(10.0);
        let m = 600;
        let mut mean = 0.0;
        let mut mean_sq = 0.0;
        for i in 0..m {
            let y = prop.apply(&sampler.sample(split_seed(17, i))).unwrap();
            let j = plane_current(&y, &v, 0, 32).unwrap();
            mean += j;
            mean_sq += j * j;
        }
        mean /= m as f64;
        mean_sq /= m as f64;
        let se = ((mean_sq - mean * mean) / m as f64).sqrt();
        assert!(mean.abs() <= 4.0 * se, "mean {mean} vs se {se}");
    }

    #[test]
    fn weighted_norm_examples() {
        let shape = LatticeShape::new(vec![9]);
        let v = FieldState::<f64>::zeros(shape.clone(), 1);
        assert_eq!(weighted_norm(&v, -1.0), 0.0);

        let mut unit = FieldState::<f64>::zeros(shape.clone(), 1);
        let center = shape.site_at_centered(&[0]);
        unit.u_mut()[center] = 1.0;
        assert_relative_eq!(weighted_norm(&unit, -2.3), 1.0, epsilon = 1e-14);

        let y = random_field(&shape, 5);
        let plain: f64 = y
            .u()
            .iter()
            .chain(y.v().iter())
            .map(|&x| x * x)
            .sum();
        assert_relative_eq!(weighted_norm(&y, 0.0), plain, epsilon = 1e-12);
    }

    #[test]
    fn leapfrog_cross_check() {
        // reference integrator: velocity Verlet on ü = -𝒱u, dt → 0
        let shape = LatticeShape::new(vec![16]);
        let v = nn_chain(1.0, 1.0);
        let table = SymbolTable::new(&v, &shape).unwrap();
        let y0 = random_field(&shape, 51);
        let t = 1.0;
        let exact = evolve(&y0, &table, t).unwrap();

        let step = |y: &FieldState<f64>, dt: f64| {
            let mut out = y.clone();
            let acc0 = apply_potential(&v, y.shape(), y.u());
            for i in 0..out.u().len() {
                out.u_mut()[i] += dt * y.v()[i] - 0.5 * dt * dt * acc0[i];
            }
            let acc1 = apply_potential(&v, out.shape(), out.u());
            for i in 0..out.v().len() {
                out.v_mut()[i] -= 0.5 * dt * (acc0[i] + acc1[i]);
            }
            out
        };
        let run = |steps: usize| {
            let dt = t / steps as f64;
            let mut y = y0.clone();
            for _ in 0..steps {
                y = step(&y, dt);
            }
            y
        };
        let err_coarse = max_abs_diff(&run(200), &exact);
        let err_fine = max_abs_diff(&run(400), &exact);
        assert!(err_fine < 1e-4, "leapfrog should approach the exact propagator");
        assert!(err_fine < err_coarse / 3.0, "O(dt²) convergence");
    }

    #[test]
    fn horizon_rule() {
        let shape = LatticeShape::new(vec![4096]);
        let t_max = finite_size_horizon(&shape, 2, 1, 0.618);
        assert!(t_max > 1000.0 && t_max < 4000.0);
    }
}
