//! Run configuration: one sectioned TOML file describing the model, the
//! reservoir layout, quadrature grid, ensemble, and outputs. Unknown keys
//! are rejected; the parsed structure re-serializes losslessly and is echoed
//! into every JSON artifact.

use anyhow::{bail, Context};
use crystalflow::estimator::{
    CurrentSpec, EnsembleConfig, HalfSpaceCurrentSpec, PairSpec, TolerancePolicy,
};
use crystalflow::lattice::LatticeShape;
use crystalflow::measures::{ReservoirLayout, SignPattern};
use crystalflow::spectral::InteractionMatrix;
use crystalflow::{Interaction, Real};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub layout: LayoutSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub compare: CompareSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub d: usize,
    pub n: usize,
    #[serde(default)]
    pub kappa: Vec<f64>,
    #[serde(default)]
    pub mass: Vec<f64>,
    #[serde(default)]
    pub stencil: Vec<StencilEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    NearestNeighbor,
    Stencil,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StencilEntry {
    pub offset: Vec<i64>,
    /// n rows of n entries.
    pub block: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSection {
    pub k: usize,
    #[serde(default = "default_half_width")]
    pub a: i64,
    #[serde(default)]
    pub half_space: bool,
    /// Temperatures keyed by sign pattern strings such as "+-"
    /// ('-' is the x_j → -∞ side, position j is axis j+1).
    pub temperatures: BTreeMap<String, f64>,
}

fn default_half_width() -> i64 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    /// Quadrature points per axis (half-cell-shifted uniform grid).
    pub g: usize,
    /// Real-space covariance window `|x_i| ≤ window`.
    pub window: i64,
    /// Half-space profile probes.
    pub x1_values: Vec<i64>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            g: 128,
            window: 8,
            x1_values: vec![1, 2, 4, 8, 16, 32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub samples: usize,
    pub seed: u64,
    pub shape: Vec<usize>,
    pub times: Vec<f64>,
    pub pair_radius: i64,
    pub pair_base_half_width: i64,
    /// Measurement cuts per side of the splice interface.
    pub current_bundle: usize,
    /// Central window half-width for the kinetic-energy probe (0 disables).
    pub kinetic_half_width: usize,
    /// Half-space: longitudinal cut probes (defaults to quarter points).
    pub longitudinal_cuts: Vec<usize>,
    pub workers: usize,
    pub functional_probe: bool,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            samples: 100,
            seed: 1,
            shape: Vec::new(),
            times: Vec::new(),
            pair_radius: 4,
            pair_base_half_width: 0,
            current_bundle: 16,
            kinetic_half_width: 0,
            longitudinal_cuts: Vec::new(),
            workers: 0,
            functional_probe: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            formats: vec!["json".into(), "csv".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub enabled: bool,
    pub z: f64,
    pub rel_tol: f64,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            enabled: true,
            z: 4.0,
            rel_tol: 0.05,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig = toml::from_str(&text).context("parsing config")?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.model.d == 0 || self.model.n == 0 {
            bail!("model.d and model.n must be positive");
        }
        match self.model.kind {
            ModelKind::NearestNeighbor => {
                if self.model.kappa.len() != self.model.n || self.model.mass.len() != self.model.n {
                    bail!(
                        "nearest-neighbor model needs {} kappa and mass entries",
                        self.model.n
                    );
                }
            }
            ModelKind::Stencil => {
                if self.model.stencil.is_empty() {
                    bail!("stencil model needs at least one [[model.stencil]] entry");
                }
            }
        }
        if self.layout.k == 0 || self.layout.k > self.model.d {
            bail!("layout.k must be in 1..=model.d");
        }
        let expected = if self.layout.half_space {
            1usize << (self.layout.k - 1)
        } else {
            1usize << self.layout.k
        };
        if self.layout.temperatures.len() != expected {
            bail!(
                "layout.temperatures needs exactly {expected} entries for k = {}{}",
                self.layout.k,
                if self.layout.half_space { " (half-space)" } else { "" }
            );
        }
        for key in self.layout.temperatures.keys() {
            let p = SignPattern::parse(key)
                .map_err(|e| anyhow::anyhow!("bad temperature key \"{key}\": {e}"))?;
            if p.k() != self.layout.k {
                bail!("temperature key \"{key}\" has length {}, expected {}", p.k(), self.layout.k);
            }
            if self.layout.half_space && p.entries()[0] != 2 {
                bail!("half-space temperature key \"{key}\" must start with '+'");
            }
        }
        if self.grid.g < 2 || self.grid.g % 2 != 0 {
            bail!("grid.g must be even and at least 2 (refinement compares g and g/2)");
        }
        if !self.ensemble.shape.is_empty() && self.ensemble.shape.len() != self.model.d {
            bail!(
                "ensemble.shape has {} axes, model.d = {}",
                self.ensemble.shape.len(),
                self.model.d
            );
        }
        Ok(())
    }

    pub fn interaction(&self) -> anyhow::Result<Arc<Interaction>> {
        let v = match self.model.kind {
            ModelKind::NearestNeighbor => InteractionMatrix::nearest_neighbor(
                self.model.d,
                self.model.n,
                &self.model.kappa,
                &self.model.mass,
            )?,
            ModelKind::Stencil => {
                let entries = self
                    .model
                    .stencil
                    .iter()
                    .map(|e| {
                        let n = self.model.n;
                        if e.block.len() != n || e.block.iter().any(|row| row.len() != n) {
                            bail!("stencil block at {:?} is not {n}x{n}", e.offset);
                        }
                        let block =
                            DMatrix::from_fn(n, n, |r, c| e.block[r][c]);
                        Ok((e.offset.clone(), block))
                    })
                    .collect::<anyhow::Result<Vec<_>>>()?;
                InteractionMatrix::from_stencil(self.model.d, self.model.n, entries)?
            }
        };
        Ok(Arc::new(v))
    }

    pub fn reservoir_layout(&self, interaction: &Arc<Interaction>) -> anyhow::Result<ReservoirLayout<Real>> {
        let temps = self
            .layout
            .temperatures
            .iter()
            .map(|(key, &t)| Ok((SignPattern::parse(key)?, t)))
            .collect::<crystalflow::Result<Vec<_>>>()?;
        let layout = if self.layout.half_space {
            ReservoirLayout::gibbs_half_space(interaction.clone(), temps, self.layout.a)?
        } else {
            ReservoirLayout::gibbs(interaction.clone(), temps, self.layout.a)?
        };
        Ok(layout)
    }

    pub fn lattice_shape(&self) -> anyhow::Result<LatticeShape> {
        if self.ensemble.shape.is_empty() {
            bail!("ensemble.shape is required for this subcommand");
        }
        Ok(LatticeShape::new(self.ensemble.shape.clone()))
    }

    pub fn ensemble_config(
        &self,
        seed_override: Option<u64>,
        override_horizon: bool,
    ) -> anyhow::Result<EnsembleConfig<Real>> {
        let shape = self.lattice_shape()?;
        if self.ensemble.times.is_empty() {
            bail!("ensemble.times must not be empty");
        }
        let (pairs, currents, halfspace_currents, kinetic) = if self.layout.half_space {
            let d = self.model.d;
            let longitudinal = if self.ensemble.longitudinal_cuts.is_empty() {
                let n1 = shape.dims()[0];
                vec![n1 / 4, n1 / 2]
            } else {
                self.ensemble.longitudinal_cuts.clone()
            };
            (
                None,
                None,
                Some(HalfSpaceCurrentSpec {
                    longitudinal_cuts: longitudinal,
                    profile_axis: if d >= 2 { Some(1) } else { None },
                    x1_values: self.grid.x1_values.clone(),
                    bundle: self.ensemble.current_bundle,
                }),
                None,
            )
        } else {
            (
                Some(PairSpec {
                    offset_radius: self.ensemble.pair_radius,
                    base_half_width: self.ensemble.pair_base_half_width,
                    deep_probes: true,
                }),
                Some(CurrentSpec {
                    axes: (0..self.layout.k).collect(),
                    bundle: self.ensemble.current_bundle,
                }),
                None,
                (self.ensemble.kinetic_half_width > 0).then_some(self.ensemble.kinetic_half_width),
            )
        };
        Ok(EnsembleConfig {
            samples: self.ensemble.samples,
            master_seed: seed_override.unwrap_or(self.ensemble.seed),
            shape,
            times: self.ensemble.times.clone(),
            pairs,
            currents,
            halfspace_currents,
            kinetic_half_width: kinetic,
            functional_probe: self.ensemble.functional_probe,
            override_horizon,
        })
    }

    pub fn policy(&self) -> TolerancePolicy {
        TolerancePolicy {
            z: self.compare.z,
            rel_tol: self.compare.rel_tol,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
[model]
kind = "nearest-neighbor"
d = 1
n = 1
kappa = [1.0]
mass = [1.0]

[layout]
k = 1
a = 2
temperatures = { "-" = 1.0, "+" = 2.0 }

[grid]
g = 64

[ensemble]
samples = 8
seed = 7
shape = [256]
times = [32.0]
"#;

    #[test]
    fn parse_roundtrip_is_lossless() {
        let config: RunConfig = toml::from_str(EXAMPLE).unwrap();
        config.validate().unwrap();
        let echoed = toml::to_string(&config).unwrap();
        let back: RunConfig = toml::from_str(&echoed).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = EXAMPLE.replace("a = 2", "a = 2\nbogus_key = 1");
        let err = toml::from_str::<RunConfig>(&bad).unwrap_err().to_string();
        assert!(err.contains("bogus_key"), "error should name the key: {err}");
    }

    #[test]
    fn temperature_keys_validated() {
        let bad = EXAMPLE.replace("{ \"-\" = 1.0, \"+\" = 2.0 }", "{ \"-\" = 1.0, \"x\" = 2.0 }");
        let config: RunConfig = toml::from_str(&bad).unwrap();
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("x"), "{err}");
    }
}
