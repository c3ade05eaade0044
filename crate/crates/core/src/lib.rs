//! Hierarchical contrastive learning for multimodal data with identity link
//! functions: simulation of the hierarchical latent model, estimation of
//! block-structured loading matrices by masked gradient descent on a spectral
//! covariance objective, recovery diagnostics, and downstream debiased /
//! group-lasso regression.

pub mod container;
pub mod downstream;
pub mod error;
pub mod hierarchy;
pub mod linalg;
pub mod metrics;
pub mod simulate;
pub mod spectral;
pub mod train;

pub use error::{CoreError, Result};
pub use hierarchy::{build_hierarchy, BlockLayout, HierarchySpec, RankSpec, Structure};
pub use simulate::{
    derive_rng, generate_ground_truth, sample_haar_orthonormal, sample_unit_sphere,
    simulate_dataset, simulate_downstream, DownstreamDataset, GroundTruth, LatentDist,
    MultimodalDataset,
};
pub use spectral::{
    denoise_covariance, procrustes_align, sample_covariance, sample_covariance_with,
    CovarianceEstimate,
};
pub use train::{
    fit, fit_from_covariance, fit_from_init, init_global, init_structured, loss_covariance,
    loss_gradient, loss_pairwise, FitConfig, FitResult, InitKind, StepRule,
};
pub use metrics::{
    aligned_errors, blockwise_alignment, projection_error, regression_metrics, AlignedError,
    RecoveryReport, RegressionMetrics,
};
pub use downstream::{
    excess_risk, fit_debiased_ols, fit_group_lasso, group_lasso_kkt_residual, prediction_risk,
    recovery_operator, GroupLassoParams, RecoveryOperator, RegressionFit,
};
