//! JSON experiment configuration: hierarchy, simulation, sweep grid, methods,
//! fit settings, and downstream options.

use hcl_core::{FitConfig, HierarchySpec, Structure};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HierarchyConfig {
    pub modalities: usize,
    pub ambient_dims: Vec<usize>,
    pub structures: Vec<StructureConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureConfig {
    pub members: Vec<usize>,
    pub dim: usize,
}

impl HierarchyConfig {
    pub fn to_spec(&self) -> anyhow::Result<HierarchySpec> {
        if self.ambient_dims.len() != self.modalities {
            anyhow::bail!(
                "ambient_dims has {} entries for {} modalities",
                self.ambient_dims.len(),
                self.modalities
            );
        }
        let given: Vec<(Structure, usize)> = self
            .structures
            .iter()
            .map(|s| Ok((Structure::new(s.members.clone())?, s.dim)))
            .collect::<Result<_, hcl_core::CoreError>>()?;
        Ok(HierarchySpec::with_structures(&self.ambient_dims, &given)?)
    }

    pub fn from_spec(spec: &HierarchySpec) -> Self {
        HierarchyConfig {
            modalities: spec.modalities(),
            ambient_dims: spec.ambient_dims().to_vec(),
            structures: spec
                .structures()
                .iter()
                .zip(spec.latent_dims())
                .map(|(s, &dim)| StructureConfig {
                    members: s.members().to_vec(),
                    dim,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub sv_range: (f64, f64),
    /// Noise variance c; the noise standard deviation is sqrt(c).
    pub noise_c: f64,
    pub seed: u64,
    pub replications: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepGrid {
    /// Representation-learning sample sizes.
    pub n: Vec<usize>,
    /// Downstream sample size (single value applied at every n).
    #[serde(default)]
    pub m: Option<usize>,
    /// Held-out evaluation sample size (defaults to m).
    #[serde(default)]
    pub m_test: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    NaiveSvd,
    HclSvd,
    HclGd,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::NaiveSvd => "naive-svd",
            Method::HclSvd => "hcl-svd",
            Method::HclGd => "hcl-gd",
        }
    }
}

/// Coefficient specification for downstream simulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaSpec {
    /// Uniform on the unit sphere of R^r.
    Sphere,
    /// Uniform on the unit sphere restricted to the listed structures
    /// (member lists); other blocks are zero.
    SphereOn { structures: Vec<Vec<usize>> },
    /// Explicit per-structure blocks in canonical order; zero blocks allowed.
    Blocks { blocks: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub points: usize,
    /// Grid spans center/span .. center*span, log-spaced.
    pub span: f64,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid { points: 10, span: 10.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DownstreamConfig {
    pub enabled: bool,
    pub beta_spec: BetaSpec,
    pub sigma_xi: f64,
    #[serde(default)]
    pub lambda_grid: LambdaGrid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub hierarchy: HierarchyConfig,
    pub sim: SimConfig,
    pub sweep: SweepGrid,
    pub methods: Vec<Method>,
    #[serde(default = "default_fit")]
    pub fit: FitConfig,
    #[serde(default)]
    pub downstream: Option<DownstreamConfig>,
    pub output: PathBuf,
}

fn default_fit() -> FitConfig {
    FitConfig::default()
}

impl ExperimentConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.sim.replications == 0 {
            anyhow::bail!("replications must be >= 1");
        }
        if self.sweep.n.is_empty() {
            anyhow::bail!("sweep.n must be nonempty");
        }
        if self.methods.is_empty() {
            anyhow::bail!("methods must be nonempty");
        }
        if !(self.sim.sv_range.0 > 0.0 && self.sim.sv_range.0 <= self.sim.sv_range.1) {
            anyhow::bail!("sv_range must satisfy 0 < lo <= hi");
        }
        if self.sim.noise_c < 0.0 {
            anyhow::bail!("noise_c must be >= 0");
        }
        self.fit.validate()?;
        self.hierarchy.to_spec()?;
        if let Some(ds) = &self.downstream {
            if ds.enabled {
                if ds.sigma_xi < 0.0 {
                    anyhow::bail!("sigma_xi must be >= 0");
                }
                if ds.lambda_grid.points == 0 || ds.lambda_grid.span <= 1.0 {
                    anyhow::bail!("lambda_grid needs points >= 1 and span > 1");
                }
                if self.sweep.m.is_none() {
                    anyhow::bail!("downstream enabled but sweep.m missing");
                }
            }
        }
        Ok(())
    }

    pub fn from_file(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> ExperimentConfig {
        ExperimentConfig {
            hierarchy: HierarchyConfig {
                modalities: 3,
                ambient_dims: vec![30, 50, 80],
                structures: vec![
                    StructureConfig { members: vec![1, 2, 3], dim: 2 },
                    StructureConfig { members: vec![1, 2], dim: 2 },
                    StructureConfig { members: vec![1, 3], dim: 2 },
                    StructureConfig { members: vec![2, 3], dim: 2 },
                    StructureConfig { members: vec![1], dim: 2 },
                    StructureConfig { members: vec![2], dim: 2 },
                    StructureConfig { members: vec![3], dim: 2 },
                ],
            },
            sim: SimConfig { sv_range: (0.5, 1.5), noise_c: 10.0, seed: 42, replications: 2 },
            sweep: SweepGrid { n: vec![500], m: None, m_test: None },
            methods: vec![Method::NaiveSvd, Method::HclSvd, Method::HclGd],
            fit: FitConfig::default(),
            downstream: None,
            output: PathBuf::from("/tmp/out"),
        }
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = base_config();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(back.hierarchy.ambient_dims, vec![30, 50, 80]);
        assert_eq!(back.methods.len(), 3);
    }

    #[test]
    fn hierarchy_json_keys_match_schema() {
        let cfg = base_config();
        let v: serde_json::Value = serde_json::to_value(&cfg.hierarchy).unwrap();
        assert!(v.get("modalities").is_some());
        assert!(v.get("ambient_dims").is_some());
        let s = v.get("structures").unwrap().as_array().unwrap();
        assert_eq!(s[0].get("members").unwrap().as_array().unwrap().len(), 3);
        assert_eq!(s[0].get("dim").unwrap().as_u64().unwrap(), 2);
    }

    #[test]
    fn rejects_empty_sweep_and_methods() {
        let mut cfg = base_config();
        cfg.sweep.n.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = base_config();
        cfg.methods.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = base_config();
        cfg.sim.replications = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn spec_round_trip() {
        let cfg = base_config();
        let spec = cfg.hierarchy.to_spec().unwrap();
        assert_eq!(spec.total_latent(), 14);
        let back = HierarchyConfig::from_spec(&spec);
        assert_eq!(back.structures.len(), 7);
        assert_eq!(back.structures[0].members, vec![1, 2, 3]);
    }
}
