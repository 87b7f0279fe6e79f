//! Monte Carlo ensemble harness: draw spliced initial data, evolve each
//! member exactly, accumulate covariance/current/kinetic observables with
//! streaming statistics, and compare against the analytic limits.
//!
//! Determinism: member `i` draws with `split_seed(master, i)`; samples are
//! processed in fixed index chunks whose partial moments merge in index
//! order, so results are identical for any worker count.

use crate::dynamics::{finite_size_horizon, plane_current, SymbolTable};
use crate::halfspace::{halfspace_current_density, halfspace_longitudinal_current, HalfSpaceEvolver};
use crate::lattice::LatticeShape;
use crate::measures::{split_seed, FieldState, LayoutSampler, ReservoirLayout};
use crate::spectral::InteractionMatrix;
use crate::{Error, Result, Scalar};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Streaming mean/variance over vectors of observables (Welford components
/// with pairwise merge).
#[derive(Debug, Clone)]
pub struct VecWelford {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl VecWelford {
    pub fn new(len: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    pub fn push(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.mean.len());
        self.count += 1;
        let c = self.count as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(values) {
            let delta = x - *m;
            *m += delta / c;
            *s += delta * (x - *m);
        }
    }

    pub fn merge(a: &Self, b: &Self) -> Self {
        if a.count == 0 {
            return b.clone();
        }
        if b.count == 0 {
            return a.clone();
        }
        let count = a.count + b.count;
        let (na, nb, n) = (a.count as f64, b.count as f64, count as f64);
        let mut mean = vec![0.0; a.mean.len()];
        let mut m2 = vec![0.0; a.mean.len()];
        for i in 0..mean.len() {
            let delta = b.mean[i] - a.mean[i];
            mean[i] = a.mean[i] + delta * nb / n;
            m2[i] = a.m2[i] + b.m2[i] + delta * delta * na * nb / n;
        }
        Self { count, mean, m2 }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.mean[i]
    }

    /// Standard error of the mean (unbiased sample variance / count).
    pub fn se(&self, i: usize) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        (self.m2[i] / (self.count as f64 - 1.0) / self.count as f64).sqrt()
    }
}

/// Covariance probe: offsets around base sites in a centered window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairSpec {
    /// Offsets `z` with `|z_i| ≤ offset_radius` (Chebyshev ball).
    pub offset_radius: i64,
    /// Base sites: centered cube `|c_i| ≤ base_half_width`.
    pub base_half_width: i64,
    /// Add one `Q_t(x,x)` probe deep inside each reservoir orthant.
    pub deep_probes: bool,
}

impl Default for PairSpec {
    fn default() -> Self {
        Self {
            offset_radius: 4,
            base_half_width: 0,
            deep_probes: true,
        }
    }
}

/// Current probes for full-space runs: cut bundles flanking the splice
/// interface, skipping the ramp band `|δ| ≤ a + support radius`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurrentSpec {
    pub axes: Vec<usize>,
    /// Cuts per side of the interface.
    pub bundle: usize,
}

/// Current probes for half-space runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HalfSpaceCurrentSpec {
    /// Longitudinal (axis 1) cut positions; the limit is identically zero.
    pub longitudinal_cuts: Vec<usize>,
    /// Transverse profile axis (0-based; None for d = 1).
    pub profile_axis: Option<usize>,
    /// Wall distances x_1 at which the profile is sampled.
    pub x1_values: Vec<i64>,
    /// Transverse cuts per side of the transverse splice interface.
    pub bundle: usize,
}

#[derive(Debug, Clone)]
pub struct EnsembleConfig<T: Scalar> {
    pub samples: usize,
    pub master_seed: u64,
    pub shape: LatticeShape,
    pub times: Vec<T>,
    pub pairs: Option<PairSpec>,
    pub currents: Option<CurrentSpec>,
    pub halfspace_currents: Option<HalfSpaceCurrentSpec>,
    /// Central window half-width for the mean kinetic energy probe
    /// (`|c_i| < w` sites; None disables).
    pub kinetic_half_width: Option<usize>,
    /// Accumulate moments of a smooth linear functional ⟨Y(t),Ψ⟩ for the
    /// Gaussianity (kurtosis) check.
    pub functional_probe: bool,
    pub override_horizon: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarEstimate {
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixEstimate {
    /// Row-major 2n×2n block `E[Y^i(x) ⊗ Y^j(x+z)]`.
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurrentEstimate {
    pub axis: usize,
    pub cuts: Vec<usize>,
    pub estimate: ScalarEstimate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileEstimate {
    pub axis: usize,
    pub x1: i64,
    pub estimate: ScalarEstimate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KurtosisEstimate {
    pub kurtosis: f64,
    /// Gaussian-null standard error √(24/M).
    pub se: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub samples: usize,
    pub master_seed: u64,
    pub shape: Vec<usize>,
    pub half_space: bool,
    pub times: Vec<f64>,
    pub t_max: f64,
    pub pair_offsets: Vec<Vec<i64>>,
    /// `[time][offset]` covariance blocks `Q_t(x+z, x) = q_t(z)` averaged
    /// over the base window.
    pub covariance: Vec<Vec<MatrixEstimate>>,
    /// `[time][reservoir]` deep `Q_t(x,x)` probes (diagnostic only).
    pub deep_probes: Vec<Vec<MatrixEstimate>>,
    /// `[time][axis-entry]` plane currents.
    pub currents: Vec<Vec<CurrentEstimate>>,
    /// `[time][cut-entry]` half-space longitudinal currents (axis 1).
    pub longitudinal_currents: Vec<Vec<CurrentEstimate>>,
    /// `[time][profile-entry]` half-space transverse profile.
    pub profile_currents: Vec<Vec<ProfileEstimate>>,
    /// `[time][(x1, estimate)]` mean `tr Q_t(x,x)` per wall distance
    /// (half-space covariance-growth diagnostic; never a verdict input).
    pub wall_energy: Vec<Vec<(i64, ScalarEstimate)>>,
    /// `[time]` mean kinetic energy per site over the central window.
    pub kinetic: Vec<Option<ScalarEstimate>>,
    /// `[time]` kurtosis of the functional probe.
    pub kurtosis: Vec<Option<KurtosisEstimate>>,
}

/// Observable layout inside the flat per-sample vector.
struct Layout2 {
    currents: Vec<(usize, Vec<usize>)>, // axis, cuts
    long_cuts: Vec<usize>,
    profile: Vec<(usize, i64, Vec<usize>)>, // axis, x1, transverse cuts
    /// tr Q_t(x,x) vs wall distance (half-space growth diagnostic).
    wall_energy: Vec<i64>,
    kinetic_sites: Vec<usize>,
    functional: Option<Vec<f64>>, // ψ weights per site (components 0 only)
    pairs: Vec<Vec<i64>>,
    base_sites: Vec<usize>,
    deep_sites: Vec<usize>,
    block: usize, // (2n)²
    len: usize,
    current_at: usize,
    long_at: usize,
    profile_at: usize,
    wall_at: usize,
    kinetic_at: usize,
    func_at: usize,
    pairs_at: usize,
    deep_at: usize,
}

fn centered_window(shape: &LatticeShape, half_width: i64, strict: bool) -> Vec<usize> {
    let mut sites = Vec::new();
    for site in shape.iter_sites() {
        let c = shape.centered(&shape.coords(site));
        let inside = c.iter().all(|&x| {
            if strict {
                x.abs() < half_width
            } else {
                x.abs() <= half_width
            }
        });
        if inside {
            sites.push(site);
        }
    }
    sites
}

fn chebyshev_offsets(d: usize, radius: i64) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|v: Vec<i64>| {
                (-radius..=radius).map(move |z| {
                    let mut w = v.clone();
                    w.push(z);
                    w
                })
            })
            .collect();
    }
    out
}

impl Layout2 {
    fn build<T: Scalar>(
        config: &EnsembleConfig<T>,
        layout: &ReservoirLayout<T>,
        interaction: &InteractionMatrix<T>,
        components: usize,
    ) -> Result<Self> {
        let shape = &config.shape;
        let d = shape.dim();
        let gap = layout.half_width() + interaction.support_radius();

        let mut currents = Vec::new();
        if let Some(spec) = &config.currents {
            for &axis in &spec.axes {
                if axis >= d {
                    return Err(Error::AxisOutOfRange { axis, dimension: d });
                }
                let center = shape.dims()[axis] / 2;
                let mut cuts = Vec::new();
                for delta in (gap + 1)..=(gap + spec.bundle as i64) {
                    cuts.push((center as i64 - delta).rem_euclid(shape.dims()[axis] as i64) as usize);
                    cuts.push((center as i64 + delta).rem_euclid(shape.dims()[axis] as i64) as usize);
                }
                cuts.sort_unstable();
                currents.push((axis, cuts));
            }
        }

        let mut long_cuts = Vec::new();
        let mut profile = Vec::new();
        if let Some(spec) = &config.halfspace_currents {
            long_cuts = spec.longitudinal_cuts.clone();
            if let Some(axis) = spec.profile_axis {
                if axis == 0 || axis >= d {
                    return Err(Error::AxisOutOfRange { axis, dimension: d });
                }
                let center = shape.dims()[axis] / 2;
                let mut cuts = Vec::new();
                for delta in (gap + 1)..=(gap + spec.bundle as i64) {
                    cuts.push((center as i64 - delta).rem_euclid(shape.dims()[axis] as i64) as usize);
                    cuts.push((center as i64 + delta).rem_euclid(shape.dims()[axis] as i64) as usize);
                }
                cuts.sort_unstable();
                for &x1 in &spec.x1_values {
                    profile.push((axis, x1, cuts.clone()));
                }
            }
        }

        let wall_energy = if layout.is_half_space() {
            config
                .halfspace_currents
                .as_ref()
                .map(|spec| spec.x1_values.clone())
                .unwrap_or_default()
        } else {
            Vec::new()
        };

        let kinetic_sites = config
            .kinetic_half_width
            .map(|w| centered_window(shape, w as i64, true))
            .unwrap_or_default();

        let functional = if config.functional_probe {
            let width = (*shape.dims().iter().min().unwrap() as f64 / 8.0).clamp(2.0, 8.0);
            let weights: Vec<f64> = shape
                .iter_sites()
                .map(|site| {
                    let c = shape.centered(&shape.coords(site));
                    let r2: f64 = c.iter().map(|&x| (x * x) as f64).sum();
                    (-r2 / (2.0 * width * width)).exp()
                })
                .collect();
            Some(weights)
        } else {
            None
        };

        let (pairs, base_sites) = if let Some(spec) = &config.pairs {
            (
                chebyshev_offsets(d, spec.offset_radius),
                centered_window(shape, spec.base_half_width, false),
            )
        } else {
            (Vec::new(), Vec::new())
        };

        let deep_sites = if config.pairs.as_ref().is_some_and(|p| p.deep_probes) {
            layout
                .patterns()
                .iter()
                .map(|p| {
                    let mut c = vec![0i64; d];
                    for j in 0..layout.k() {
                        c[j] = p.parity(j) as i64 * (shape.dims()[j] as i64 / 4);
                    }
                    shape.site_at_centered(&c)
                })
                .collect()
        } else {
            Vec::new()
        };

        let block = (2 * components) * (2 * components);
        let current_at = 0;
        let long_at = current_at + currents.len();
        let profile_at = long_at + long_cuts.len();
        let wall_at = profile_at + profile.len();
        let kinetic_at = wall_at + wall_energy.len();
        let func_at = kinetic_at + usize::from(!kinetic_sites.is_empty());
        let pairs_at = func_at + if functional.is_some() { 4 } else { 0 };
        let deep_at = pairs_at + pairs.len() * block;
        let len = deep_at + deep_sites.len() * block;

        Ok(Self {
            currents,
            long_cuts,
            profile,
            wall_energy,
            kinetic_sites,
            functional,
            pairs,
            base_sites,
            deep_sites,
            block,
            len,
            current_at,
            long_at,
            profile_at,
            wall_at,
            kinetic_at,
            func_at,
            pairs_at,
            deep_at,
        })
    }

    fn observe<T: Scalar>(
        &self,
        y: &FieldState<T>,
        interaction: &InteractionMatrix<T>,
        out: &mut [f64],
    ) -> Result<()> {
        let shape = y.shape();
        let n = y.components();
        for (slot, (axis, cuts)) in self.currents.iter().enumerate() {
            let mut acc = 0.0;
            for &cut in cuts {
                acc += plane_current(y, interaction, *axis, cut)?.to_f64();
            }
            out[self.current_at + slot] = acc / cuts.len() as f64;
        }
        for (slot, &cut) in self.long_cuts.iter().enumerate() {
            out[self.long_at + slot] =
                halfspace_longitudinal_current(y, interaction, cut)?.to_f64();
        }
        for (slot, (axis, x1, cuts)) in self.profile.iter().enumerate() {
            let mut acc = 0.0;
            let mut count = 0usize;
            // iterate the free axes (all but 0 and the cut axis) directly
            let free: Vec<usize> = (1..shape.dim()).filter(|a| a != axis).collect();
            let free_total: usize = free.iter().map(|&a| shape.dims()[a]).product();
            let mut coords = vec![0usize; shape.dim()];
            for &cut in cuts {
                for mut rest in 0..free_total {
                    coords[0] = *x1 as usize;
                    coords[*axis] = cut;
                    for &a in free.iter().rev() {
                        coords[a] = rest % shape.dims()[a];
                        rest /= shape.dims()[a];
                    }
                    acc += halfspace_current_density(y, interaction, *axis, &coords)?.to_f64();
                    count += 1;
                }
            }
            out[self.profile_at + slot] = acc / count.max(1) as f64;
        }
        for (slot, &x1) in self.wall_energy.iter().enumerate() {
            // mean of |u|² + |v|² over the plane at wall distance x1
            let transverse = shape.stride(0);
            let mut acc = 0.0;
            for sidx in 0..transverse {
                let site = x1 as usize * transverse + sidx;
                for c in 0..n {
                    let u = y.u()[site * n + c].to_f64();
                    let v = y.v()[site * n + c].to_f64();
                    acc += u * u + v * v;
                }
            }
            out[self.wall_at + slot] = acc / transverse as f64;
        }
        if !self.kinetic_sites.is_empty() {
            let mut acc = 0.0;
            for &site in &self.kinetic_sites {
                for c in 0..n {
                    let v = y.v()[site * n + c].to_f64();
                    acc += v * v;
                }
            }
            out[self.kinetic_at] = acc / self.kinetic_sites.len() as f64;
        }
        if let Some(weights) = &self.functional {
            let mut value = 0.0;
            for (site, &w) in weights.iter().enumerate() {
                value += w * (y.u()[site * n].to_f64() + y.v()[site * n].to_f64());
            }
            let v2 = value * value;
            out[self.func_at] = value;
            out[self.func_at + 1] = v2;
            out[self.func_at + 2] = v2 * value;
            out[self.func_at + 3] = v2 * v2;
        }
        for (p, offset) in self.pairs.iter().enumerate() {
            let base = self.pairs_at + p * self.block;
            for slot in out[base..base + self.block].iter_mut() {
                *slot = 0.0;
            }
            for &site in &self.base_sites {
                let coords = shape.coords(site);
                let partner = shape.wrapped(&coords, offset);
                // Q(x, y) with x - y = z: first factor at x = base + z
                accumulate_outer(y, partner, site, &mut out[base..base + self.block]);
            }
            let scale = 1.0 / self.base_sites.len() as f64;
            for slot in out[base..base + self.block].iter_mut() {
                *slot *= scale;
            }
        }
        for (r, &site) in self.deep_sites.iter().enumerate() {
            let base = self.deep_at + r * self.block;
            for slot in out[base..base + self.block].iter_mut() {
                *slot = 0.0;
            }
            accumulate_outer(y, site, site, &mut out[base..base + self.block]);
        }
        Ok(())
    }
}

/// `out += Y(x) ⊗ Y(y)` flattened row-major over the 2n components (u then v).
fn accumulate_outer<T: Scalar>(y: &FieldState<T>, x: usize, partner: usize, out: &mut [f64]) {
    let n = y.components();
    let m = 2 * n;
    let comp = |site: usize, j: usize| -> f64 {
        if j < n {
            y.u()[site * n + j].to_f64()
        } else {
            y.v()[site * n + (j - n)].to_f64()
        }
    };
    for r in 0..m {
        let a = comp(x, r);
        for c in 0..m {
            out[r * m + c] += a * comp(partner, c);
        }
    }
}

/// Run the ensemble. Pass the quadrature grid's max group velocity for the
/// horizon rule; times beyond `t_max` are rejected unless overridden.
pub fn run_ensemble<T: Scalar>(
    interaction: &InteractionMatrix<T>,
    layout: &ReservoirLayout<T>,
    config: &EnsembleConfig<T>,
    max_velocity: T,
) -> Result<EnsembleResult> {
    if config.samples == 0 {
        return Err(Error::InvalidConfig("ensemble needs at least one sample".into()));
    }
    let t_max = finite_size_horizon(
        &config.shape,
        layout.half_width(),
        interaction.support_radius(),
        max_velocity,
    );
    for &t in &config.times {
        if t.to_f64() > t_max.to_f64() && !config.override_horizon {
            return Err(Error::HorizonExceeded {
                t: t.to_f64(),
                t_max: t_max.to_f64(),
            });
        }
    }
    if layout.is_half_space() && config.currents.is_some() {
        return Err(Error::InvalidConfig(
            "full-space current probes on a half-space layout".into(),
        ));
    }

    let n = interaction.components();
    let obs = Layout2::build(config, layout, interaction, n)?;
    let sampler = LayoutSampler::new(layout, &config.shape)?;

    enum Engine<'e, T: Scalar> {
        Periodic(Vec<crate::dynamics::Propagator<'e, T>>),
        Reflected(Vec<crate::halfspace::HalfSpacePropagator<'e, T>>),
    }
    let table;
    let evolver;
    let engine = if layout.is_half_space() {
        evolver = HalfSpaceEvolver::new(interaction, &config.shape)?;
        Engine::Reflected(config.times.iter().map(|&t| evolver.propagator(t)).collect())
    } else {
        table = SymbolTable::new(interaction, &config.shape)?;
        Engine::Periodic(config.times.iter().map(|&t| table.propagator(t)).collect())
    };

    // fixed chunk structure keeps the merge order independent of scheduling
    let chunk_count = config.samples.min(64);
    let chunks: Vec<(usize, usize)> = (0..chunk_count)
        .map(|c| {
            let lo = c * config.samples / chunk_count;
            let hi = (c + 1) * config.samples / chunk_count;
            (lo, hi)
        })
        .collect();

    let partials: Vec<Result<Vec<VecWelford>>> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut acc: Vec<VecWelford> =
                config.times.iter().map(|_| VecWelford::new(obs.len)).collect();
            let mut row = vec![0.0; obs.len];
            for i in lo..hi {
                let y0 = sampler.draw(split_seed(config.master_seed, i as u64))?;
                for (ti, slot) in acc.iter_mut().enumerate() {
                    let yt = match &engine {
                        Engine::Periodic(props) => props[ti].apply(&y0)?,
                        Engine::Reflected(props) => props[ti].evolve(&y0)?,
                    };
                    obs.observe(&yt, interaction, &mut row)?;
                    slot.push(&row);
                }
            }
            Ok(acc)
        })
        .collect();

    let mut merged: Vec<VecWelford> = config.times.iter().map(|_| VecWelford::new(obs.len)).collect();
    for partial in partials {
        let partial = partial?;
        for (m, p) in merged.iter_mut().zip(partial) {
            *m = VecWelford::merge(m, &p);
        }
    }

    let m_samples = config.samples;
    let mut covariance = Vec::new();
    let mut deep = Vec::new();
    let mut currents = Vec::new();
    let mut longitudinal = Vec::new();
    let mut profiles = Vec::new();
    let mut wall_energy = Vec::new();
    let mut kinetic = Vec::new();
    let mut kurtosis = Vec::new();
    for w in &merged {
        let scalar = |i: usize| ScalarEstimate {
            mean: w.mean(i),
            se: w.se(i),
        };
        currents.push(
            obs.currents
                .iter()
                .enumerate()
                .map(|(slot, (axis, cuts))| CurrentEstimate {
                    axis: *axis + 1,
                    cuts: cuts.clone(),
                    estimate: scalar(obs.current_at + slot),
                })
                .collect::<Vec<_>>(),
        );
        longitudinal.push(
            obs.long_cuts
                .iter()
                .enumerate()
                .map(|(slot, &cut)| CurrentEstimate {
                    axis: 1,
                    cuts: vec![cut],
                    estimate: scalar(obs.long_at + slot),
                })
                .collect::<Vec<_>>(),
        );
        profiles.push(
            obs.profile
                .iter()
                .enumerate()
                .map(|(slot, (axis, x1, _))| ProfileEstimate {
                    axis: *axis + 1,
                    x1: *x1,
                    estimate: scalar(obs.profile_at + slot),
                })
                .collect::<Vec<_>>(),
        );
        wall_energy.push(
            obs.wall_energy
                .iter()
                .enumerate()
                .map(|(slot, &x1)| (x1, scalar(obs.wall_at + slot)))
                .collect::<Vec<_>>(),
        );
        kinetic.push(if obs.kinetic_sites.is_empty() {
            None
        } else {
            Some(scalar(obs.kinetic_at))
        });
        kurtosis.push(obs.functional.as_ref().map(|_| {
            let m1 = w.mean(obs.func_at);
            let m2 = w.mean(obs.func_at + 1);
            let m3 = w.mean(obs.func_at + 2);
            let m4 = w.mean(obs.func_at + 3);
            let c2 = m2 - m1 * m1;
            let c4 = m4 - 4.0 * m3 * m1 + 6.0 * m2 * m1 * m1 - 3.0 * m1.powi(4);
            KurtosisEstimate {
                kurtosis: c4 / (c2 * c2),
                se: (24.0 / m_samples as f64).sqrt(),
            }
        }));
        covariance.push(
            (0..obs.pairs.len())
                .map(|p| {
                    let base = obs.pairs_at + p * obs.block;
                    MatrixEstimate {
                        mean: (0..obs.block).map(|i| w.mean(base + i)).collect(),
                        se: (0..obs.block).map(|i| w.se(base + i)).collect(),
                    }
                })
                .collect::<Vec<_>>(),
        );
        deep.push(
            (0..obs.deep_sites.len())
                .map(|r| {
                    let base = obs.deep_at + r * obs.block;
                    MatrixEstimate {
                        mean: (0..obs.block).map(|i| w.mean(base + i)).collect(),
                        se: (0..obs.block).map(|i| w.se(base + i)).collect(),
                    }
                })
                .collect::<Vec<_>>(),
        );
    }

    Ok(EnsembleResult {
        samples: m_samples,
        master_seed: config.master_seed,
        shape: config.shape.dims().to_vec(),
        half_space: layout.is_half_space(),
        times: config.times.iter().map(|t| t.to_f64()).collect(),
        t_max: t_max.to_f64(),
        pair_offsets: obs.pairs.clone(),
        covariance,
        deep_probes: deep,
        currents,
        longitudinal_currents: longitudinal,
        profile_currents: profiles,
        wall_energy,
        kinetic,
        kurtosis,
    })
}

/// Tolerance policy: an estimate passes when
/// `|empirical - analytic| ≤ max(z·SE, rel_tol·|analytic|)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TolerancePolicy {
    pub z: f64,
    pub rel_tol: f64,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        Self { z: 4.0, rel_tol: 0.05 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictRow {
    pub name: String,
    pub empirical: f64,
    pub se: f64,
    pub analytic: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictReport {
    pub policy: TolerancePolicy,
    pub rows: Vec<VerdictRow>,
    pub pass: bool,
}

/// Analytic targets for [`compare`]; observables absent here are skipped.
#[derive(Debug, Clone, Default)]
pub struct AnalyticTargets {
    /// Per axis (1-based label from CurrentEstimate), target current.
    pub current: Option<Vec<f64>>,
    pub kinetic: Option<f64>,
    /// Per pair offset: row-major 2n×2n real covariance block targets.
    pub covariance: Option<Vec<(Vec<i64>, Vec<f64>)>>,
    /// Half-space profile targets per (axis, x1).
    pub profile: Option<Vec<(usize, i64, f64)>>,
    /// Target 0 for half-space longitudinal currents.
    pub longitudinal_zero: bool,
    /// Kurtosis target 3 for the functional probe.
    pub gaussianity: bool,
}

fn judge(policy: &TolerancePolicy, name: String, emp: f64, se: f64, analytic: f64) -> VerdictRow {
    let tolerance = (policy.z * se).max(policy.rel_tol * analytic.abs());
    VerdictRow {
        pass: (emp - analytic).abs() <= tolerance,
        name,
        empirical: emp,
        se,
        analytic,
        tolerance,
    }
}

/// Compare one time slice of the ensemble result against analytic targets.
pub fn compare(
    result: &EnsembleResult,
    time_index: usize,
    targets: &AnalyticTargets,
    policy: TolerancePolicy,
) -> Result<VerdictReport> {
    if time_index >= result.times.len() {
        return Err(Error::ObservableMismatch(format!(
            "time index {time_index} out of range"
        )));
    }
    let t = result.times[time_index];
    let mut rows = Vec::new();

    if let Some(targets_j) = &targets.current {
        let estimates = &result.currents[time_index];
        if estimates.len() != targets_j.len() {
            return Err(Error::ObservableMismatch(format!(
                "expected {} current targets, got {}",
                estimates.len(),
                targets_j.len()
            )));
        }
        for (est, &target) in estimates.iter().zip(targets_j) {
            rows.push(judge(
                &policy,
                format!("J^{}(t={t})", est.axis),
                est.estimate.mean,
                est.estimate.se,
                target,
            ));
        }
    }

    if let Some(target) = targets.kinetic {
        let est = result.kinetic[time_index]
            .as_ref()
            .ok_or_else(|| Error::ObservableMismatch("no kinetic probe in result".into()))?;
        rows.push(judge(
            &policy,
            format!("K(t={t})"),
            est.mean,
            est.se,
            target,
        ));
    }

    if let Some(cov_targets) = &targets.covariance {
        for (offset, block) in cov_targets {
            let idx = result
                .pair_offsets
                .iter()
                .position(|o| o == offset)
                .ok_or_else(|| {
                    Error::ObservableMismatch(format!("offset {offset:?} not probed"))
                })?;
            let est = &result.covariance[time_index][idx];
            for (entry, &target) in block.iter().enumerate() {
                rows.push(judge(
                    &policy,
                    format!("Q(t={t}, z={offset:?})[{entry}]"),
                    est.mean[entry],
                    est.se[entry],
                    target,
                ));
            }
        }
    }

    if let Some(profile_targets) = &targets.profile {
        for (axis, x1, target) in profile_targets {
            let est = result.profile_currents[time_index]
                .iter()
                .find(|p| p.axis == *axis && p.x1 == *x1)
                .ok_or_else(|| {
                    Error::ObservableMismatch(format!("profile (axis {axis}, x1 {x1}) not probed"))
                })?;
            rows.push(judge(
                &policy,
                format!("J^{axis}_+(x1={x1}, t={t})"),
                est.estimate.mean,
                est.estimate.se,
                *target,
            ));
        }
    }

    if targets.longitudinal_zero {
        for est in &result.longitudinal_currents[time_index] {
            rows.push(judge(
                &policy,
                format!("J^1_+(cut={}, t={t})", est.cuts[0]),
                est.estimate.mean,
                est.estimate.se,
                0.0,
            ));
        }
    }

    if targets.gaussianity {
        let est = result.kurtosis[time_index]
            .as_ref()
            .ok_or_else(|| Error::ObservableMismatch("no functional probe in result".into()))?;
        rows.push(judge(
            &policy,
            format!("kurtosis(t={t})"),
            est.kurtosis,
            est.se,
            3.0,
        ));
    }

    let pass = rows.iter().all(|r| r.pass);
    Ok(VerdictReport { policy, rows, pass })
}
