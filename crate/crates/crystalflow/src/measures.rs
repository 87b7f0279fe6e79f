//! Translation-invariant Gaussian measures represented by their spectral
//! densities, exact circulant sampling on finite periodic lattices, and the
//! splicing of independent reservoir fields into one composite initial datum.
//!
//! A measure is specified by a 2n×2n Hermitian PSD block density `q̂(θ)`
//! (blocks `q̂^{ij}`, i,j ∈ {u,v}). Sampling colors real white noise with the
//! Hermitian PSD square root `B(θ_k) = q̂(θ_k)^{1/2}` at the lattice
//! frequencies, so the sampled field is exactly stationary with covariance
//! `E[Y(x) ⊗ Y(y)] = |L|^{-1} Σ_k e^{-i θ_k (x-y)} q̂(θ_k)`.

use crate::fft::NdFft;
use crate::lattice::LatticeShape;
use crate::spectral::InteractionMatrix;
use crate::{Error, Result, Scalar};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::sync::Arc;

/// Derive an independent stream seed from a master seed (SplitMix64
/// finalizer). Distinct indices give statistically independent ChaCha
/// streams; the estimator uses `split_seed(master, sample)` and the sampler
/// uses `split_seed(sample_seed, reservoir)`.
pub fn split_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sign pattern `n = (n_1, …, n_k)`, entries 1 ("-", x_j → -∞) or
/// 2 ("+", x_j → +∞), labeling one of the `2^k` reservoir orthants.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SignPattern(Vec<u8>);

impl SignPattern {
    pub fn new(entries: Vec<u8>) -> Result<Self> {
        if entries.is_empty() || entries.iter().any(|&e| e != 1 && e != 2) {
            return Err(Error::InvalidConfig(format!(
                "sign pattern entries must be 1 or 2, got {entries:?}"
            )));
        }
        Ok(Self(entries))
    }

    /// Parse strings like `"+-"`: `-` is 1, `+` is 2; position j is axis j+1.
    pub fn parse(text: &str) -> Result<Self> {
        let entries = text
            .chars()
            .map(|c| match c {
                '-' => Ok(1),
                '+' => Ok(2),
                other => Err(Error::InvalidConfig(format!(
                    "sign pattern may only contain '+' or '-', got {other:?}"
                ))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(entries)
    }

    /// All `2^k` patterns; `n_1` varies fastest.
    pub fn all(k: usize) -> Vec<Self> {
        (0..1usize << k)
            .map(|bits| Self((0..k).map(|j| 1 + ((bits >> j) & 1) as u8).collect()))
            .collect()
    }

    /// The `2^{k-1}` half-space patterns with `n_1 = 2` fixed.
    pub fn half_space(k: usize) -> Vec<Self> {
        Self::all(k).into_iter().filter(|p| p.0[0] == 2).collect()
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn entries(&self) -> &[u8] {
        &self.0
    }

    /// `(-1)^{n_j}`: -1 for n_j = 1, +1 for n_j = 2.
    pub fn parity(&self, j: usize) -> i32 {
        if self.0[j] == 2 {
            1
        } else {
            -1
        }
    }
}

impl fmt::Display for SignPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &e in &self.0 {
            write!(f, "{}", if e == 2 { '+' } else { '-' })?;
        }
        Ok(())
    }
}

impl fmt::Debug for SignPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Scalar spectral factor `f̂(θ)` on `T^1`, evaluated in closed form.
#[derive(Debug, Clone, Copy)]
pub enum CorrelationFactor<T: Scalar> {
    /// `f(z) = N_0 - |z|` for `|z| ≤ N_0`, else 0;
    /// `f̂(θ) = (1 - cos N_0 θ)/(1 - cos θ) = (sin(N_0θ/2)/sin(θ/2))²`.
    Triangular { n0: u32 },
    /// `f(z) = (a + b|z|) γ^{|z|}` with `γ ∈ (0,1)`, `a > 0`, `b ≥ 0` and
    /// `a ≥ 2bγ/(1-γ²)` (the positivity window).
    Geometric { a: T, b: T, gamma: T },
}

impl<T: Scalar> CorrelationFactor<T> {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CorrelationFactor::Triangular { n0 } => {
                if n0 < 1 {
                    return Err(Error::FactorOutOfRange("triangular requires N_0 >= 1".into()));
                }
            }
            CorrelationFactor::Geometric { a, b, gamma } => {
                if gamma <= T::zero() || gamma >= T::one() {
                    return Err(Error::FactorOutOfRange(format!(
                        "geometric requires gamma in (0,1), got {}",
                        gamma.to_f64()
                    )));
                }
                if a <= T::zero() {
                    return Err(Error::FactorOutOfRange(format!(
                        "geometric requires a > 0, got {}",
                        a.to_f64()
                    )));
                }
                if b < T::zero() {
                    return Err(Error::FactorOutOfRange(format!(
                        "geometric requires b >= 0, got {}",
                        b.to_f64()
                    )));
                }
                let bound = T::of(2.0) * b * gamma / (T::one() - gamma * gamma);
                if a < bound {
                    return Err(Error::FactorOutOfRange(format!(
                        "geometric positivity requires a >= 2 b gamma / (1 - gamma^2) = {}, got a = {}",
                        bound.to_f64(),
                        a.to_f64()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, theta: T) -> T {
        match *self {
            CorrelationFactor::Triangular { n0 } => {
                let half = theta * T::of(0.5);
                let s = half.sin();
                if s.abs() < T::of(1e-9) {
                    T::of((n0 as f64) * (n0 as f64))
                } else {
                    let top = (half * T::of(n0 as f64)).sin();
                    (top / s) * (top / s)
                }
            }
            CorrelationFactor::Geometric { a, b, gamma } => {
                let c = theta.cos();
                let den = T::one() - T::of(2.0) * gamma * c + gamma * gamma;
                a * (T::one() - gamma * gamma) / den
                    + T::of(2.0) * b * gamma * ((T::one() + gamma * gamma) * c - T::of(2.0) * gamma)
                        / (den * den)
            }
        }
    }

    /// Real-space sequence `f(z)`; reference for sampler covariance oracles.
    pub fn real_space(&self, z: i64) -> T {
        match *self {
            CorrelationFactor::Triangular { n0 } => {
                let r = z.unsigned_abs() as f64;
                if r <= n0 as f64 {
                    T::of(n0 as f64 - r)
                } else {
                    T::zero()
                }
            }
            CorrelationFactor::Geometric { a, b, gamma } => {
                let r = T::of(z.unsigned_abs() as f64);
                (a + b * r) * gamma.powf(r)
            }
        }
    }
}

enum Density<T: Scalar> {
    /// Gibbs at temperature T: `q̂^{00} = T V̂^{-1}`, `q̂^{11} = T I`, off-diagonal 0.
    Gibbs {
        interaction: Arc<InteractionMatrix<T>>,
        temperature: T,
    },
    /// Product of scalar factors per axis, one factor for the u block and one
    /// for the v block; off-diagonal blocks vanish.
    Product {
        f00: CorrelationFactor<T>,
        f11: CorrelationFactor<T>,
        components: usize,
        dimension: usize,
    },
    /// Arbitrary 2n×2n Hermitian PSD density (tests, user extensions).
    Custom {
        eval: Arc<dyn Fn(&[T]) -> DMatrix<Complex<T>> + Send + Sync>,
        components: usize,
        label: String,
    },
}

impl<T: Scalar> Clone for Density<T> {
    fn clone(&self) -> Self {
        match self {
            Density::Gibbs {
                interaction,
                temperature,
            } => Density::Gibbs {
                interaction: interaction.clone(),
                temperature: *temperature,
            },
            Density::Product {
                f00,
                f11,
                components,
                dimension,
            } => Density::Product {
                f00: *f00,
                f11: *f11,
                components: *components,
                dimension: *dimension,
            },
            Density::Custom {
                eval,
                components,
                label,
            } => Density::Custom {
                eval: eval.clone(),
                components: *components,
                label: label.clone(),
            },
        }
    }
}

/// A translation-invariant Gaussian measure, represented by its spectral
/// density `q̂(θ)`.
#[derive(Clone)]
pub struct GaussianMeasureSpec<T: Scalar> {
    density: Density<T>,
}

impl<T: Scalar> fmt::Debug for GaussianMeasureSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GaussianMeasureSpec({})", self.label())
    }
}

impl<T: Scalar> GaussianMeasureSpec<T> {
    /// Gibbs measure at temperature `temperature`. The symbol must be
    /// invertible wherever the density is later evaluated; `min_omega` (the
    /// smallest band frequency on the caller's grid) is checked up front so a
    /// singular symbol is reported against the grid that will be used.
    pub fn gibbs(
        interaction: Arc<InteractionMatrix<T>>,
        temperature: T,
        min_omega: Option<(T, Vec<T>)>,
    ) -> Result<Self> {
        if temperature < T::zero() {
            return Err(Error::InvalidConfig(format!(
                "temperature must be nonnegative, got {}",
                temperature.to_f64()
            )));
        }
        if let Some((omega, theta)) = min_omega {
            if omega * omega <= T::of(1e-12) {
                return Err(Error::SingularSymbol {
                    theta: theta.iter().map(|t| t.to_f64()).collect(),
                    eigenvalue: (omega * omega).to_f64(),
                });
            }
        }
        Ok(Self {
            density: Density::Gibbs {
                interaction,
                temperature,
            },
        })
    }

    pub fn product(
        f00: CorrelationFactor<T>,
        f11: CorrelationFactor<T>,
        dimension: usize,
        components: usize,
    ) -> Result<Self> {
        f00.validate()?;
        f11.validate()?;
        Ok(Self {
            density: Density::Product {
                f00,
                f11,
                components,
                dimension,
            },
        })
    }

    pub fn custom(
        label: impl Into<String>,
        components: usize,
        eval: Arc<dyn Fn(&[T]) -> DMatrix<Complex<T>> + Send + Sync>,
    ) -> Self {
        Self {
            density: Density::Custom {
                eval,
                components,
                label: label.into(),
            },
        }
    }

    pub fn label(&self) -> String {
        match &self.density {
            Density::Gibbs { temperature, .. } => format!("gibbs(T={})", temperature.to_f64()),
            Density::Product { .. } => "product-factors".into(),
            Density::Custom { label, .. } => label.clone(),
        }
    }

    pub fn components(&self) -> usize {
        match &self.density {
            Density::Gibbs { interaction, .. } => interaction.components(),
            Density::Product { components, .. } => *components,
            Density::Custom { components, .. } => *components,
        }
    }

    pub fn temperature(&self) -> Option<T> {
        match &self.density {
            Density::Gibbs { temperature, .. } => Some(*temperature),
            _ => None,
        }
    }

    /// Evaluate the 2n×2n block density at `θ`.
    pub fn eval(&self, theta: &[T]) -> Result<DMatrix<Complex<T>>> {
        let n = self.components();
        match &self.density {
            Density::Gibbs {
                interaction,
                temperature,
            } => {
                let symbol = interaction.symbol(theta);
                let eig = SymmetricEigen::new(symbol);
                let scale = eig
                    .eigenvalues
                    .iter()
                    .fold(T::one(), |acc, &l| acc.max(l.abs()));
                let mut q = DMatrix::zeros(2 * n, 2 * n);
                // q00 = T V̂^{-1} through the spectral decomposition
                for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
                    if lambda <= T::of(1e-12) * scale {
                        return Err(Error::SingularSymbol {
                            theta: theta.iter().map(|t| t.to_f64()).collect(),
                            eigenvalue: lambda.to_f64(),
                        });
                    }
                    let col = eig.eigenvectors.column(i);
                    let proj = &col * col.adjoint();
                    let w = *temperature / lambda;
                    for r in 0..n {
                        for c in 0..n {
                            q[(r, c)] += proj[(r, c)].scale(w);
                        }
                    }
                }
                for r in 0..n {
                    q[(n + r, n + r)] = Complex::new(*temperature, T::zero());
                }
                Ok(q)
            }
            Density::Product {
                f00,
                f11,
                components,
                dimension,
            } => {
                if theta.len() != *dimension {
                    return Err(Error::InvalidConfig(format!(
                        "product density is {dimension}-dimensional, got θ of length {}",
                        theta.len()
                    )));
                }
                let mut p00 = T::one();
                let mut p11 = T::one();
                for &t in theta {
                    p00 *= f00.eval(t);
                    p11 *= f11.eval(t);
                }
                let n = *components;
                let mut q = DMatrix::zeros(2 * n, 2 * n);
                for r in 0..n {
                    q[(r, r)] = Complex::new(p00, T::zero());
                    q[(n + r, n + r)] = Complex::new(p11, T::zero());
                }
                Ok(q)
            }
            Density::Custom { eval, .. } => Ok(eval(theta)),
        }
    }
}

/// Displacement/velocity pair `Y = (u, v)` on a finite periodic lattice (or a
/// half-space slab with a zero plane at x_1 = 0). Storage is site-major, one
/// contiguous block of n components per site.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState<T: Scalar> {
    shape: LatticeShape,
    components: usize,
    half_space: bool,
    u: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> FieldState<T> {
    pub fn zeros(shape: LatticeShape, components: usize) -> Self {
        let len = shape.sites() * components;
        Self {
            shape,
            components,
            half_space: false,
            u: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }

    pub fn shape(&self) -> &LatticeShape {
        &self.shape
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn half_space(&self) -> bool {
        self.half_space
    }

    /// Mark as half-space data (zero plane at x_1 = 0); fails if the boundary
    /// plane carries nonzero values.
    pub fn set_half_space(mut self, flag: bool) -> Result<Self> {
        if flag {
            self.check_boundary_zero()?;
        }
        self.half_space = flag;
        Ok(self)
    }

    fn check_boundary_zero(&self) -> Result<()> {
        for site in self.shape.iter_sites() {
            let coords = self.shape.coords(site);
            if coords[0] != 0 {
                continue;
            }
            for c in 0..self.components {
                let slot = self.slot(site, c);
                let mag = self.u[slot].abs().max(self.v[slot].abs());
                if mag > T::zero() {
                    return Err(Error::NonzeroBoundary {
                        site: coords,
                        magnitude: mag.to_f64(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Zero the x_1 = 0 plane in place.
    pub fn clear_boundary_plane(&mut self) {
        for site in self.shape.iter_sites() {
            if self.shape.coords(site)[0] != 0 {
                continue;
            }
            for c in 0..self.components {
                let slot = site * self.components + c;
                self.u[slot] = T::zero();
                self.v[slot] = T::zero();
            }
        }
    }

    #[inline]
    pub fn slot(&self, site: usize, component: usize) -> usize {
        site * self.components + component
    }

    pub fn u(&self) -> &[T] {
        &self.u
    }

    pub fn v(&self) -> &[T] {
        &self.v
    }

    pub fn u_mut(&mut self) -> &mut [T] {
        &mut self.u
    }

    pub fn v_mut(&mut self) -> &mut [T] {
        &mut self.v
    }

    pub fn validate(&self) -> Result<()> {
        for (slot, value) in self.u.iter().chain(self.v.iter()).enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFiniteField {
                    site: self.shape.coords(slot % self.shape.sites()),
                });
            }
        }
        if self.half_space {
            self.check_boundary_zero()?;
        }
        Ok(())
    }

    /// `self += factor * other` (shapes must match).
    pub fn scaled_add(&mut self, other: &Self, factor: T) -> Result<()> {
        if self.shape != other.shape || self.components != other.components {
            return Err(Error::ShapeMismatch {
                expected: self.shape.dims().to_vec(),
                got: other.shape.dims().to_vec(),
            });
        }
        for (a, b) in self.u.iter_mut().zip(&other.u) {
            *a += factor * *b;
        }
        for (a, b) in self.v.iter_mut().zip(&other.v) {
            *a += factor * *b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for a in self.u.iter_mut().chain(self.v.iter_mut()) {
            *a *= factor;
        }
    }
}

/// Splice cutoff profile on the undetermined band `|x| ≤ a`. The tails are
/// fixed by the construction: `ζ_2 = 1` for `x > a`, `ζ_2 = 0` for `x < -a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpliceProfile {
    /// Linear ramp `ζ_2(x) = clamp((x+a)/(2a), 0, 1)`; `ζ_1 = 1 - ζ_2`.
    Ramp,
    /// Hard step at 0 (used when a = 0): `ζ_2 = 1(x ≥ 0)`, `ζ_1 = 1 - ζ_2`.
    Step,
}

/// Reservoir layout: `2^k` (full space) or `2^{k-1}` (half space, n_1 = 2)
/// sign patterns, each carrying a Gaussian measure, plus the splice geometry.
#[derive(Debug, Clone)]
pub struct ReservoirLayout<T: Scalar> {
    k: usize,
    half_width: i64,
    profile: SpliceProfile,
    half_space: bool,
    patterns: Vec<SignPattern>,
    specs: Vec<GaussianMeasureSpec<T>>,
    temperatures: Option<Vec<T>>,
}

impl<T: Scalar> ReservoirLayout<T> {
    /// Gibbs layout over all `2^k` orthants.
    pub fn gibbs(
        interaction: Arc<InteractionMatrix<T>>,
        temperatures: Vec<(SignPattern, T)>,
        half_width: i64,
    ) -> Result<Self> {
        Self::gibbs_inner(interaction, temperatures, half_width, false)
    }

    /// Gibbs layout over the half-space patterns (n_1 = 2 fixed).
    pub fn gibbs_half_space(
        interaction: Arc<InteractionMatrix<T>>,
        temperatures: Vec<(SignPattern, T)>,
        half_width: i64,
    ) -> Result<Self> {
        Self::gibbs_inner(interaction, temperatures, half_width, true)
    }

    fn gibbs_inner(
        interaction: Arc<InteractionMatrix<T>>,
        temperatures: Vec<(SignPattern, T)>,
        half_width: i64,
        half_space: bool,
    ) -> Result<Self> {
        if temperatures.is_empty() {
            return Err(Error::InvalidConfig("no reservoir temperatures given".into()));
        }
        let k = temperatures[0].0.k();
        let expected = if half_space {
            SignPattern::half_space(k)
        } else {
            SignPattern::all(k)
        };
        let mut patterns = Vec::with_capacity(expected.len());
        let mut temps = Vec::with_capacity(expected.len());
        let mut specs = Vec::with_capacity(expected.len());
        for want in &expected {
            let found = temperatures
                .iter()
                .find(|(p, _)| p == want)
                .ok_or_else(|| {
                    Error::InvalidConfig(format!("missing temperature for pattern \"{want}\""))
                })?;
            if found.1 <= T::zero() {
                return Err(Error::InvalidConfig(format!(
                    "temperature for pattern \"{want}\" must be positive, got {}",
                    found.1.to_f64()
                )));
            }
            patterns.push(want.clone());
            temps.push(found.1);
            specs.push(GaussianMeasureSpec::gibbs(
                interaction.clone(),
                found.1,
                None,
            )?);
        }
        if temperatures.len() != expected.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} temperature entries for k = {k}, got {}",
                expected.len(),
                temperatures.len()
            )));
        }
        if half_width < 0 {
            return Err(Error::InvalidConfig("splice half-width must be >= 0".into()));
        }
        Ok(Self {
            k,
            half_width,
            profile: if half_width == 0 {
                SpliceProfile::Step
            } else {
                SpliceProfile::Ramp
            },
            half_space,
            patterns,
            specs,
            temperatures: Some(temps),
        })
    }

    /// Layout from arbitrary per-pattern measures (all of them must share the
    /// component count).
    pub fn from_specs(
        entries: Vec<(SignPattern, GaussianMeasureSpec<T>)>,
        half_width: i64,
        half_space: bool,
    ) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidConfig("no reservoir measures given".into()));
        }
        let k = entries[0].0.k();
        let expected = if half_space {
            SignPattern::half_space(k)
        } else {
            SignPattern::all(k)
        };
        if entries.len() != expected.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} reservoir entries for k = {k}, got {}",
                expected.len(),
                entries.len()
            )));
        }
        let mut patterns = Vec::new();
        let mut specs = Vec::new();
        for want in &expected {
            let found = entries.iter().find(|(p, _)| p == want).ok_or_else(|| {
                Error::InvalidConfig(format!("missing measure for pattern \"{want}\""))
            })?;
            patterns.push(want.clone());
            specs.push(found.1.clone());
        }
        Ok(Self {
            k,
            half_width,
            profile: if half_width == 0 {
                SpliceProfile::Step
            } else {
                SpliceProfile::Ramp
            },
            half_space,
            patterns,
            specs,
            temperatures: None,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn half_width(&self) -> i64 {
        self.half_width
    }

    pub fn is_half_space(&self) -> bool {
        self.half_space
    }

    pub fn reservoirs(&self) -> usize {
        self.patterns.len()
    }

    pub fn patterns(&self) -> &[SignPattern] {
        &self.patterns
    }

    pub fn spec(&self, index: usize) -> &GaussianMeasureSpec<T> {
        &self.specs[index]
    }

    /// Per-pattern temperatures when every reservoir is Gibbs.
    pub fn temperatures(&self) -> Option<&[T]> {
        self.temperatures.as_deref()
    }

    pub fn components(&self) -> usize {
        self.specs[0].components()
    }

    fn zeta2(&self, x: i64) -> T {
        match self.profile {
            SpliceProfile::Step => {
                if x >= 0 {
                    T::one()
                } else {
                    T::zero()
                }
            }
            SpliceProfile::Ramp => {
                let a = T::of(self.half_width as f64);
                let t = (T::of(x as f64) + a) / (T::of(2.0) * a);
                t.clamp(T::zero(), T::one())
            }
        }
    }

    /// Splice weight `ζ̄_n(x̄) = Π_j ζ_{n_j}(x_j)` at centered coordinates.
    /// In the half-space case axis 1 uses the wall distance x_1 directly.
    pub fn weight(&self, pattern: usize, coords: &[i64]) -> T {
        let p = &self.patterns[pattern];
        let mut w = T::one();
        for j in 0..self.k {
            let z2 = self.zeta2(coords[j]);
            w *= if p.entries()[j] == 2 { z2 } else { T::one() - z2 };
        }
        w
    }
}

/// Colored-noise sampler for one measure on one lattice shape. Construction
/// precomputes the Hermitian PSD square roots `B(θ_k)`; `sample` is then pure
/// in the seed and cheap enough to run per ensemble member.
pub struct Sampler<T: Scalar> {
    shape: LatticeShape,
    components: usize,
    // per lattice frequency, row-major 2n×2n
    coloring: Vec<Complex<T>>,
    fft: NdFft<T>,
}

impl<T: Scalar> Sampler<T> {
    pub fn new(spec: &GaussianMeasureSpec<T>, shape: &LatticeShape) -> Result<Self> {
        let n = spec.components();
        let m = 2 * n;
        let mut coloring = vec![Complex::default(); shape.sites() * m * m];
        for site in shape.iter_sites() {
            let theta = shape.frequency::<T>(&shape.coords(site));
            let q = spec.eval(&theta)?;
            let scale = q.norm().max(T::one());
            let eig = SymmetricEigen::new(q);
            let mut b: DMatrix<Complex<T>> = DMatrix::zeros(m, m);
            for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
                if lambda < -T::of(1e-10) * scale {
                    return Err(Error::DensityNotPositive {
                        theta: theta.iter().map(|t| t.to_f64()).collect(),
                        eigenvalue: lambda.to_f64(),
                    });
                }
                let w = lambda.max(T::zero()).sqrt();
                let col = eig.eigenvectors.column(i);
                b += (&col * col.adjoint()).map(|z| z.scale(w));
            }
            let base = site * m * m;
            for r in 0..m {
                for c in 0..m {
                    coloring[base + r * m + c] = b[(r, c)];
                }
            }
        }
        Ok(Self {
            shape: shape.clone(),
            components: n,
            coloring,
            fft: NdFft::new(shape),
        })
    }

    /// Draw one field. Deterministic in `seed`; independent seeds from
    /// [`split_seed`] give independent fields.
    pub fn sample(&self, seed: u64) -> FieldState<T> {
        let n = self.components;
        let m = 2 * n;
        let sites = self.shape.sites();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        // real white noise, site-major, u components then v components
        let mut planes: Vec<Vec<Complex<T>>> = (0..m).map(|_| vec![Complex::default(); sites]).collect();
        for site in 0..sites {
            for plane in planes.iter_mut() {
                plane[site] = Complex::new(T::standard_normal(&mut rng), T::zero());
            }
        }
        for plane in planes.iter_mut() {
            self.fft.forward(plane, &self.shape);
        }

        // color per frequency
        let mut scratch = vec![Complex::<T>::default(); m];
        for site in 0..sites {
            let base = site * m * m;
            for (r, slot) in scratch.iter_mut().enumerate() {
                let mut acc = Complex::default();
                for c in 0..m {
                    acc += self.coloring[base + r * m + c] * planes[c][site];
                }
                *slot = acc;
            }
            for (plane, value) in planes.iter_mut().zip(&scratch) {
                plane[site] = *value;
            }
        }

        for plane in planes.iter_mut() {
            self.fft.inverse(plane, &self.shape);
        }

        let mut field = FieldState::zeros(self.shape.clone(), n);
        let mut residue = T::zero();
        let mut magnitude = T::one();
        for site in 0..sites {
            for c in 0..n {
                let zu = planes[c][site];
                let zv = planes[n + c][site];
                let slot = site * n + c;
                field.u[slot] = zu.re;
                field.v[slot] = zv.re;
                residue = residue.max(zu.im.abs()).max(zv.im.abs());
                magnitude = magnitude.max(zu.re.abs()).max(zv.re.abs());
            }
        }
        let rel = residue / magnitude;
        if rel > T::of(1e-10) {
            log::warn!(
                "sampler imaginary residue {:.3e} relative — spectral density not conjugate-symmetric?",
                rel.to_f64()
            );
        }
        field
    }

    /// Exact covariance of the sampled field at lattice separation `z`:
    /// `|L|^{-1} Σ_k e^{-i θ_k z} q̂(θ_k)` — the target the Monte Carlo
    /// estimates converge to.
    pub fn lattice_covariance(&self, z: &[i64]) -> DMatrix<T> {
        let n = self.components;
        let m = 2 * n;
        let mut acc: DMatrix<Complex<T>> = DMatrix::zeros(m, m);
        for site in self.shape.iter_sites() {
            let theta = self.shape.frequency::<T>(&self.shape.coords(site));
            let mut phase = T::zero();
            for (t, &zi) in theta.iter().zip(z) {
                phase -= *t * T::of(zi as f64);
            }
            let factor = Complex::new(phase.cos(), phase.sin());
            let base = site * m * m;
            // q̂ = B B* reassembled from the stored square root
            for r in 0..m {
                for c in 0..m {
                    let mut q = Complex::default();
                    for l in 0..m {
                        q += self.coloring[base + r * m + l]
                            * self.coloring[base + c * m + l].conj();
                    }
                    acc[(r, c)] += factor * q;
                }
            }
        }
        let scale = T::one() / T::of(self.shape.sites() as f64);
        acc.map(|v| v.re * scale)
    }
}

/// Splice independent reservoir samples into the composite initial datum
/// `Y_0(x) = Σ_n ζ̄_n(x̄) Y_n(x)`. Sites deeper than the splice half-width in
/// every spliced axis carry exactly one sample's value.
pub fn splice<T: Scalar>(
    samples: &[FieldState<T>],
    layout: &ReservoirLayout<T>,
) -> Result<FieldState<T>> {
    if samples.len() != layout.reservoirs() {
        return Err(Error::InvalidConfig(format!(
            "expected {} samples, got {}",
            layout.reservoirs(),
            samples.len()
        )));
    }
    let shape = samples[0].shape().clone();
    let n = samples[0].components();
    for s in samples {
        if s.shape() != &shape || s.components() != n {
            return Err(Error::ShapeMismatch {
                expected: shape.dims().to_vec(),
                got: s.shape().dims().to_vec(),
            });
        }
    }
    if layout.k() > shape.dim() {
        return Err(Error::InvalidConfig(format!(
            "layout splices {} axes but the lattice has {}",
            layout.k(),
            shape.dim()
        )));
    }

    let mut out = FieldState::zeros(shape.clone(), n);
    for site in shape.iter_sites() {
        let coords = shape.coords(site);
        let splice_coords: Vec<i64> = if layout.is_half_space() {
            // axis 1 measures distance from the wall; transverse axes centered
            let mut c = shape.centered(&coords);
            c[0] = coords[0] as i64;
            c
        } else {
            shape.centered(&coords)
        };
        for (r, sample) in samples.iter().enumerate() {
            let w = layout.weight(r, &splice_coords);
            if w == T::zero() {
                continue;
            }
            for comp in 0..n {
                let slot = site * n + comp;
                out.u[slot] += w * sample.u[slot];
                out.v[slot] += w * sample.v[slot];
            }
        }
    }
    Ok(out)
}

/// Sampler bundle for a whole layout: one colored-noise sampler per
/// reservoir, drawn with derived seeds and spliced through precomputed
/// per-site weight tables.
pub struct LayoutSampler<T: Scalar> {
    layout: ReservoirLayout<T>,
    samplers: Vec<Sampler<T>>,
    /// `weights[r][site]`, fixed by the layout and shape.
    weights: Vec<Vec<T>>,
}

impl<T: Scalar> LayoutSampler<T> {
    pub fn new(layout: &ReservoirLayout<T>, shape: &LatticeShape) -> Result<Self> {
        if layout.k() > shape.dim() {
            return Err(Error::InvalidConfig(format!(
                "layout splices {} axes but the lattice has {}",
                layout.k(),
                shape.dim()
            )));
        }
        let samplers = (0..layout.reservoirs())
            .map(|r| Sampler::new(layout.spec(r), shape))
            .collect::<Result<Vec<_>>>()?;
        let mut weights = vec![vec![T::zero(); shape.sites()]; layout.reservoirs()];
        for site in shape.iter_sites() {
            let coords = shape.coords(site);
            let splice_coords: Vec<i64> = if layout.is_half_space() {
                let mut c = shape.centered(&coords);
                c[0] = coords[0] as i64;
                c
            } else {
                shape.centered(&coords)
            };
            for (r, table) in weights.iter_mut().enumerate() {
                table[site] = layout.weight(r, &splice_coords);
            }
        }
        Ok(Self {
            layout: layout.clone(),
            samplers,
            weights,
        })
    }

    pub fn layout(&self) -> &ReservoirLayout<T> {
        &self.layout
    }

    /// One spliced initial datum. Reservoir `r` draws with
    /// `split_seed(sample_seed, r)`. Half-space layouts get the boundary
    /// plane cleared and the flag set.
    pub fn draw(&self, sample_seed: u64) -> Result<FieldState<T>> {
        let n = self.layout.components();
        let shape = self.samplers[0].shape.clone();
        let mut out = FieldState::zeros(shape.clone(), n);
        for (r, sampler) in self.samplers.iter().enumerate() {
            let field = sampler.sample(split_seed(sample_seed, r as u64));
            let table = &self.weights[r];
            for site in 0..shape.sites() {
                let w = table[site];
                if w == T::zero() {
                    continue;
                }
                for c in 0..n {
                    let slot = site * n + c;
                    out.u_mut()[slot] += w * field.u()[slot];
                    out.v_mut()[slot] += w * field.v()[slot];
                }
            }
        }
        if self.layout.is_half_space() {
            out.clear_boundary_plane();
            out = out.set_half_space(true)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn nn_chain(kappa: f64, mass: f64) -> Arc<InteractionMatrix<f64>> {
        Arc::new(InteractionMatrix::nearest_neighbor(1, 1, &[kappa], &[mass]).unwrap())
    }

    #[test]
    fn factor_closed_forms() {
        let tri = CorrelationFactor::<f64>::Triangular { n0: 2 };
        tri.validate().unwrap();
        assert_relative_eq!(tri.eval(std::f64::consts::PI), 0.0, epsilon = 1e-12);
        assert_relative_eq!(tri.eval(1e-12), 4.0, epsilon = 1e-9);

        let geo = CorrelationFactor::<f64>::Geometric {
            a: 1.0,
            b: 0.0,
            gamma: 0.5,
        };
        geo.validate().unwrap();
        // a(1-γ²)/(1-γ)² = 3 at θ = 0
        assert_relative_eq!(geo.eval(0.0), 3.0, epsilon = 1e-12);

        // positivity window: a < 2bγ/(1-γ²) rejected with the inequality named
        let bad = CorrelationFactor::<f64>::Geometric {
            a: 0.1,
            b: 1.0,
            gamma: 0.5,
        };
        let err = bad.validate().unwrap_err();
        assert!(err.to_string().contains("2 b gamma"));
    }

    #[test]
    fn factor_matches_real_space_series() {
        // f̂(θ) = Σ_z e^{izθ} f(z), evaluated by direct summation
        let geo = CorrelationFactor::<f64>::Geometric {
            a: 1.0,
            b: 0.3,
            gamma: 0.6,
        };
        geo.validate().unwrap();
        for &theta in &[0.3, 1.1, 2.9] {
            let mut series = 0.0;
            for z in -200i64..=200 {
                series += geo.real_space(z) * (theta * z as f64).cos();
            }
            assert_relative_eq!(geo.eval(theta), series, epsilon = 1e-10);
        }
    }

    #[test]
    fn gibbs_density_values() {
        let v = nn_chain(1.0, 1.0);
        let spec = GaussianMeasureSpec::gibbs(v, 2.0, None).unwrap();
        let q = spec.eval(&[std::f64::consts::PI]).unwrap();
        assert_relative_eq!(q[(0, 0)].re, 2.0 / 5.0, epsilon = 1e-14);
        assert_relative_eq!(q[(1, 1)].re, 2.0, epsilon = 1e-14);
        assert_relative_eq!(q[(0, 1)].norm(), 0.0, epsilon = 1e-14);

        // q̂^{11}/q̂^{00} = V̂ at every θ; linear in T
        let v = nn_chain(1.0, 1.0);
        for &theta in &[0.4, 1.3, 2.2] {
            let spec = GaussianMeasureSpec::gibbs(v.clone(), 1.7, None).unwrap();
            let q = spec.eval(&[theta]).unwrap();
            let symbol = v.symbol(&[theta])[(0, 0)].re;
            assert_relative_eq!(q[(1, 1)].re / q[(0, 0)].re, symbol, epsilon = 1e-12);
        }
        let zero = GaussianMeasureSpec::gibbs(nn_chain(1.0, 1.0), 0.0, None).unwrap();
        let q = zero.eval(&[1.0]).unwrap();
        assert_eq!(q.norm(), 0.0);
    }

    #[test]
    fn gibbs_rejects_singular_symbol() {
        let v = nn_chain(1.0, 0.0);
        let spec = GaussianMeasureSpec::gibbs(v, 1.0, None).unwrap();
        let err = spec.eval(&[0.0]).unwrap_err();
        match err {
            Error::SingularSymbol { theta, .. } => assert_eq!(theta, vec![0.0]),
            other => panic!("expected SingularSymbol, got {other}"),
        }
    }

    #[test]
    fn sampler_is_deterministic_and_zero_preserving() {
        let shape = LatticeShape::new(vec![16]);
        let spec = GaussianMeasureSpec::gibbs(nn_chain(1.0, 1.0), 1.5, None).unwrap();
        let sampler = Sampler::new(&spec, &shape).unwrap();
        let a = sampler.sample(42);
        let b = sampler.sample(42);
        assert_eq!(a, b);
        let c = sampler.sample(43);
        assert_ne!(a, c);

        let null = GaussianMeasureSpec::gibbs(nn_chain(1.0, 1.0), 0.0, None).unwrap();
        let z = Sampler::new(&null, &shape).unwrap().sample(7);
        assert!(z.u().iter().chain(z.v().iter()).all(|&x| x == 0.0));
    }

    #[test]
    fn sampler_covariance_matches_quadrature() {
        // triangular factor: trig polynomial of degree 2, so the lattice sum
        // equals the continuum integral exactly and (2π)^{-1}∫ f̂ = f(0) = N_0
        let shape = LatticeShape::new(vec![32]);
        let f = CorrelationFactor::<f64>::Triangular { n0: 2 };
        let spec = GaussianMeasureSpec::product(f, f, 1, 1).unwrap();
        let sampler = Sampler::new(&spec, &shape).unwrap();

        let target = 2.0;
        let m = 10_000usize;
        let mut mean = 0.0;
        let mut mean_sq = 0.0;
        for i in 0..m {
            let field = sampler.sample(split_seed(99, i as u64));
            let site = 5;
            let val = field.v()[site] * field.v()[site];
            mean += val;
            mean_sq += val * val;
        }
        mean /= m as f64;
        mean_sq /= m as f64;
        let se = ((mean_sq - mean * mean) / m as f64).sqrt();
        assert!(
            (mean - target).abs() <= 3.0 * se,
            "site variance {mean} vs {target} (se {se})"
        );
    }

    #[test]
    fn sampler_covariance_kernel_is_exact() {
        // E[Y(x) ⊗ Y(y)] of the colored field equals Σ_u b(x-y+u) b(u)^T,
        // which must reproduce |L|^{-1} Σ_k e^{-iθz} q̂(θ_k).
        let shape = LatticeShape::new(vec![12]);
        let geo = CorrelationFactor::<f64>::Geometric {
            a: 1.0,
            b: 0.0,
            gamma: 0.4,
        };
        let spec = GaussianMeasureSpec::product(geo, geo, 1, 1).unwrap();
        let sampler = Sampler::new(&spec, &shape).unwrap();

        // impulse response: color a delta at site 0
        let fft = NdFft::<f64>::new(&shape);
        let mut kernel = vec![Complex::new(0.0, 0.0); 12];
        kernel[0] = Complex::new(1.0, 0.0);
        fft.forward(&mut kernel, &shape);
        for site in shape.iter_sites() {
            // u-block coloring entry (0,0)
            kernel[site] *= sampler.coloring[site * 4];
        }
        fft.inverse(&mut kernel, &shape);
        let b: Vec<f64> = kernel.iter().map(|z| z.re).collect();

        for z in 0..12i64 {
            let mut conv = 0.0;
            for u in 0..12i64 {
                conv += b[((z + u).rem_euclid(12)) as usize] * b[u as usize];
            }
            let expect = sampler.lattice_covariance(&[z])[(0, 0)];
            assert_relative_eq!(conv, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn splice_deep_sites_take_single_reservoir() {
        let shape = LatticeShape::new(vec![32]);
        let v = nn_chain(1.0, 1.0);
        let layout = ReservoirLayout::gibbs(
            v,
            vec![
                (SignPattern::parse("-").unwrap(), 1.0),
                (SignPattern::parse("+").unwrap(), 2.0),
            ],
            2,
        )
        .unwrap();
        let sampler = LayoutSampler::new(&layout, &shape).unwrap();
        let fields: Vec<_> = (0..2).map(|r| sampler.samplers[r].sample(r as u64 + 10)).collect();
        let spliced = splice(&fields, &layout).unwrap();

        // centered coordinate a+5 = 7 → site 16+7 = 23 carries reservoir "+"
        let site = shape.site_at_centered(&[7]);
        assert_eq!(spliced.u()[site], fields[1].u()[site]);
        assert_eq!(spliced.v()[site], fields[1].v()[site]);
        let site = shape.site_at_centered(&[-7]);
        assert_eq!(spliced.u()[site], fields[0].u()[site]);
    }

    #[test]
    fn splice_weights_sum_to_one() {
        // all reservoirs sharing one sample reproduce that sample exactly
        let shape = LatticeShape::new(vec![8, 8]);
        let v = Arc::new(InteractionMatrix::nearest_neighbor(2, 1, &[1.0], &[1.0]).unwrap());
        let layout = ReservoirLayout::gibbs(
            v,
            vec![
                (SignPattern::parse("--").unwrap(), 1.0),
                (SignPattern::parse("+-").unwrap(), 1.0),
                (SignPattern::parse("-+").unwrap(), 1.0),
                (SignPattern::parse("++").unwrap(), 1.0),
            ],
            2,
        )
        .unwrap();
        let sampler = Sampler::new(layout.spec(0), &shape).unwrap();
        let field = sampler.sample(5);
        let copies = vec![field.clone(); 4];
        let spliced = splice(&copies, &layout).unwrap();
        for (a, b) in spliced.u().iter().zip(field.u()) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn splice_locality() {
        let shape = LatticeShape::new(vec![32]);
        let v = nn_chain(1.0, 1.0);
        let layout = ReservoirLayout::gibbs(
            v,
            vec![
                (SignPattern::parse("-").unwrap(), 1.0),
                (SignPattern::parse("+").unwrap(), 2.0),
            ],
            3,
        )
        .unwrap();
        let s = Sampler::new(layout.spec(0), &shape).unwrap();
        let f1 = s.sample(1);
        let f2 = s.sample(2);
        let base = splice(&[f1.clone(), f2.clone()], &layout).unwrap();
        let modified = {
            let mut f1b = f1.clone();
            for x in f1b.u_mut().iter_mut() {
                *x += 1.0;
            }
            splice(&[f1b, f2], &layout).unwrap()
        };
        for site in shape.iter_sites() {
            let c = shape.centered(&shape.coords(site))[0];
            let w1 = layout.weight(0, &[c]);
            let changed = (base.u()[site] - modified.u()[site]).abs() > 0.0;
            assert_eq!(changed, w1 != 0.0, "site {site} (centered {c})");
        }
    }

    #[test]
    fn spliced_covariance_deep_in_reservoir() {
        // Monte Carlo check of the single surviving term of the composite
        // covariance: deep pairs reproduce the reservoir covariance.
        let shape = LatticeShape::new(vec![64]);
        let v = nn_chain(1.0, 1.0);
        let layout = ReservoirLayout::gibbs(
            v,
            vec![
                (SignPattern::parse("-").unwrap(), 1.0),
                (SignPattern::parse("+").unwrap(), 3.0),
            ],
            2,
        )
        .unwrap();
        let ls = LayoutSampler::new(&layout, &shape).unwrap();
        let x = shape.site_at_centered(&[20]);
        let y = shape.site_at_centered(&[21]);
        let m = 4000;
        let mut mean = 0.0;
        let mut mean_sq = 0.0;
        for i in 0..m {
            let f = ls.draw(split_seed(7, i as u64)).unwrap();
            let val = f.v()[x] * f.v()[y];
            mean += val;
            mean_sq += val * val;
        }
        mean /= m as f64;
        mean_sq /= m as f64;
        let se = ((mean_sq - mean * mean) / m as f64).sqrt();
        let expect = ls.samplers[1].lattice_covariance(&[1])[(1, 1)];
        assert!(
            (mean - expect).abs() <= 4.0 * se,
            "deep covariance {mean} vs {expect} (se {se})"
        );
    }

    #[test]
    fn field_validation() {
        let shape = LatticeShape::new(vec![4, 4]);
        let mut f = FieldState::<f64>::zeros(shape, 1);
        f.validate().unwrap();
        f.u_mut()[3] = f64::NAN;
        assert!(matches!(f.validate(), Err(Error::NonFiniteField { .. })));

        let shape = LatticeShape::new(vec![4]);
        let mut f = FieldState::<f64>::zeros(shape, 1);
        f.u_mut()[0] = 1.0; // site with x_1 = 0
        assert!(matches!(
            f.clone().set_half_space(true),
            Err(Error::NonzeroBoundary { .. })
        ));
        f.clear_boundary_plane();
        assert!(f.set_half_space(true).is_ok());
    }

    #[test]
    fn sign_pattern_roundtrip() {
        for k in 1..=3 {
            let all = SignPattern::all(k);
            assert_eq!(all.len(), 1 << k);
            for p in &all {
                assert_eq!(&SignPattern::parse(&p.to_string()).unwrap(), p);
            }
            let hs = SignPattern::half_space(k);
            assert_eq!(hs.len(), 1 << (k - 1));
            assert!(hs.iter().all(|p| p.entries()[0] == 2));
        }
        assert!(SignPattern::parse("+0").is_err());
    }
}
