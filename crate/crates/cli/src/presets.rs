//! Named experiment presets: desk-scale replicas of the recovery and
//! downstream studies, plus the full-size recovery protocol.

use crate::config::{
    BetaSpec, DownstreamConfig, ExperimentConfig, HierarchyConfig, LambdaGrid, Method, SimConfig,
    StructureConfig, SweepGrid,
};
use hcl_core::{FitConfig, InitKind, StepRule};
use std::path::PathBuf;

pub const PRESET_NAMES: [&str; 3] = [
    "fig-recovery-desk",
    "fig-downstream-desk",
    "paper-scale-recovery",
];

fn full_lattice_config(dims: &[usize], r_s: usize) -> HierarchyConfig {
    let spec = hcl_core::HierarchySpec::full_lattice(dims, hcl_core::RankSpec::Uniform(r_s))
        .expect("preset dimensions satisfy the rank condition");
    HierarchyConfig::from_spec(&spec)
}

fn desk_hierarchy() -> HierarchyConfig {
    full_lattice_config(&[30, 50, 80], 2)
}

/// Desk-scale recovery comparison: three estimators, noise variance 10,
/// twenty replications over n in {1000, 2000, 4000, 8000}.
pub fn fig_recovery_desk(out: PathBuf) -> ExperimentConfig {
    ExperimentConfig {
        hierarchy: desk_hierarchy(),
        sim: SimConfig {
            sv_range: (0.5, 1.5),
            noise_c: 10.0,
            seed: 42,
            replications: 20,
        },
        sweep: SweepGrid { n: vec![1000, 2000, 4000, 8000], m: None, m_test: None },
        methods: vec![Method::NaiveSvd, Method::HclSvd, Method::HclGd],
        fit: FitConfig {
            lambda: 1.0,
            step: StepRule::Spectral,
            max_iters: 1500,
            tol: 1e-9,
            init: InitKind::Structured,
        },
        downstream: None,
        output: out,
    }
}

/// Desk-scale downstream pipeline: low noise, debiased / naive / group-lasso
/// estimators on fresh regression data, prediction on a held-out set.
pub fn fig_downstream_desk(out: PathBuf) -> ExperimentConfig {
    ExperimentConfig {
        hierarchy: desk_hierarchy(),
        sim: SimConfig {
            sv_range: (0.8, 1.8),
            noise_c: 0.1,
            seed: 42,
            replications: 40,
        },
        sweep: SweepGrid { n: vec![1000, 2000, 4000], m: Some(2000), m_test: Some(4000) },
        methods: vec![Method::HclGd],
        fit: FitConfig {
            lambda: 1.0,
            step: StepRule::Spectral,
            max_iters: 1500,
            tol: 1e-9,
            init: InitKind::Structured,
        },
        downstream: Some(DownstreamConfig {
            enabled: true,
            beta_spec: BetaSpec::Sphere,
            sigma_xi: 0.1,
            lambda_grid: LambdaGrid::default(),
        }),
        output: out,
    }
}

/// Full-size recovery protocol: d = (300, 500, 800), r = 70, c = 10,
/// n up to 30000, 100 replications. Long-running; hours of compute.
pub fn paper_scale_recovery(out: PathBuf) -> ExperimentConfig {
    ExperimentConfig {
        hierarchy: full_lattice_config(&[300, 500, 800], 10),
        sim: SimConfig {
            sv_range: (0.5, 1.5),
            noise_c: 10.0,
            seed: 42,
            replications: 100,
        },
        sweep: SweepGrid {
            n: vec![5000, 10_000, 15_000, 20_000, 25_000, 30_000],
            m: None,
            m_test: None,
        },
        methods: vec![Method::NaiveSvd, Method::HclSvd, Method::HclGd],
        fit: FitConfig {
            lambda: 1.0,
            step: StepRule::Spectral,
            max_iters: 1500,
            tol: 1e-9,
            init: InitKind::Structured,
        },
        downstream: None,
        output: out,
    }
}

pub fn by_name(name: &str, out: PathBuf) -> anyhow::Result<ExperimentConfig> {
    match name {
        "fig-recovery-desk" => Ok(fig_recovery_desk(out)),
        "fig-downstream-desk" => Ok(fig_downstream_desk(out)),
        "paper-scale-recovery" => Ok(paper_scale_recovery(out)),
        other => anyhow::bail!(
            "unknown preset '{other}'; available presets: {}",
            PRESET_NAMES.join(", ")
        ),
    }
}
