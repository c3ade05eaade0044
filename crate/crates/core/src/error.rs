//! Error type shared by all modules of the crate.

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("need at least 2 modalities, got {0}")]
    TooFewModalities(usize),

    #[error("ambient dimension of modality {modality} must be >= 1")]
    EmptyModality { modality: usize },

    #[error("duplicate structure {0:?} in hierarchy")]
    DuplicateStructure(Vec<usize>),

    #[error("structure {structure:?} references modality {modality} outside 1..={m}")]
    InvalidMember { structure: Vec<usize>, modality: usize, m: usize },

    #[error("empty structure in hierarchy")]
    EmptyStructure,

    #[error(
        "rank condition violated for modality {modality}: sum of latent dims over \
         containing structures is {total} > ambient dim {ambient}"
    )]
    RankCondition { modality: usize, total: usize, ambient: usize },

    #[error("total latent dimension must be positive")]
    ZeroTotalRank,

    #[error("per-structure rank list has length {got}, expected {expected}")]
    RankListLength { got: usize, expected: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("matrix violates the structural zero mask (inactive block entry {row},{col} = {value:e})")]
    MaskViolation { row: usize, col: usize, value: f64 },

    #[error("need at least {min} samples, got {got}")]
    NotEnoughSamples { got: usize, min: usize },

    #[error("orthonormal sampling requires dim >= rank, got {dim} x {rank}")]
    HaarShape { dim: usize, rank: usize },

    #[error("invalid singular value range ({lo}, {hi}): need 0 < lo <= hi")]
    InvalidSvRange { lo: f64, hi: f64 },

    #[error("denoising requires r < d, got r = {r}, d = {d}")]
    DenoiseRank { r: usize, d: usize },

    #[error("covariance matrix is asymmetric beyond tolerance (max deviation {max_dev:e})")]
    AsymmetricCovariance { max_dev: f64 },

    #[error("eigenvalue {index} of the denoised covariance is {value:e} <= 0; \
             the signal-to-noise ratio is too low or r is too large")]
    NonpositiveEigenvalue { index: usize, value: f64 },

    #[error("structured initialization supports 2 or 3 modalities, got {0}")]
    UnsupportedModalityCount(usize),

    #[error("structured initialization: truncation rank {rank} exceeds block dimension {dim}")]
    TruncationRank { rank: usize, dim: usize },

    #[error("max_iters must be >= 1")]
    ZeroIterations,

    #[error("invalid fit config: {0}")]
    InvalidConfig(String),

    #[error("gradient descent diverged: loss increased for {0} consecutive iterations")]
    Divergence(usize),

    #[error("loading matrix is rank deficient (sigma_min / sigma_max = {ratio:e})")]
    RankDeficient { ratio: f64 },

    #[error(
        "debiased Gram matrix is singular or indefinite (min eigenvalue {min_eig:e}); \
         sigma_eps_hat_sq is too large relative to the downstream sample size — \
         increase m or shrink the debiasing weight"
    )]
    IndefiniteGram { min_eig: f64 },

    #[error("negative group-lasso penalty {0}")]
    NegativePenalty(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("container format error: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
