//! Data generation: ground-truth loadings, latent variables, multimodal
//! observations under the hierarchical model with identity links, and
//! downstream regression data.

use crate::error::{CoreError, Result};
use crate::hierarchy::HierarchySpec;
use crate::linalg::svd_desc;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// Derives an independent ChaCha12 stream from a master seed and a list of
/// stage/index tags. Each distinct tag list yields an independent stream, so
/// replications and stages can be generated concurrently in any order while
/// staying bitwise reproducible.
pub fn derive_rng(master_seed: u64, tags: &[u64]) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15 ^ master_seed;
    for (i, &t) in tags.iter().enumerate() {
        // splitmix64 absorption of each tag
        h = h.wrapping_add(t).wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        let at = 8 + 8 * (i % 3);
        let mut chunk = [0u8; 8];
        chunk.copy_from_slice(&key[at..at + 8]);
        let merged = u64::from_le_bytes(chunk) ^ z.rotate_left((i as u32 * 7) % 64);
        key[at..at + 8].copy_from_slice(&merged.to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

/// Coordinate distribution for the latent variables. All choices have zero
/// mean and unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentDist {
    Gaussian,
    Rademacher,
    Uniform,
}

impl Default for LatentDist {
    fn default() -> Self {
        LatentDist::Gaussian
    }
}

impl LatentDist {
    fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            LatentDist::Gaussian => StandardNormal.sample(rng),
            LatentDist::Rademacher => {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            // U(-sqrt(3), sqrt(3)) has unit variance
            LatentDist::Uniform => rng.gen_range(-1.0f64..1.0) * 3f64.sqrt(),
        }
    }
}

/// True block loadings, mask-compliant by construction, plus the noise level.
/// `sigma_eps` is the noise standard deviation (sqrt of the paper-style
/// variance parameter c).
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub spec: HierarchySpec,
    pub w: DMatrix<f64>,
    pub sigma_eps: f64,
}

impl GroundTruth {
    pub fn noise_variance(&self) -> f64 {
        self.sigma_eps * self.sigma_eps
    }

    /// Population covariance W W^T + sigma_eps^2 I.
    pub fn population_covariance(&self) -> DMatrix<f64> {
        let d = self.w.nrows();
        &self.w * self.w.transpose() + DMatrix::identity(d, d) * self.noise_variance()
    }
}

/// Sampled multimodal observations; row i of `x` concatenates the modality
/// observations of sample i. True latents are retained for oracle checks.
#[derive(Debug, Clone)]
pub struct MultimodalDataset {
    pub n: usize,
    pub x: DMatrix<f64>,
    pub z: Option<DMatrix<f64>>,
    pub seed_tags: Vec<u64>,
}

/// Fresh downstream regression data: observations, latents, responses, and
/// the generating coefficient.
#[derive(Debug, Clone)]
pub struct DownstreamDataset {
    pub m: usize,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub y: DVector<f64>,
    pub beta_star: DVector<f64>,
    pub sigma_xi: f64,
}

/// Haar-uniform orthonormal matrix: QR of a standard Gaussian matrix with the
/// sign of each diagonal entry of the triangular factor forced positive.
pub fn sample_haar_orthonormal<R: Rng>(dim: usize, rank: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if dim < rank || rank == 0 {
        return Err(CoreError::HaarShape { dim, rank });
    }
    let g = DMatrix::from_fn(dim, rank, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..rank {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col.neg_mut();
        }
    }
    Ok(q)
}

/// Generates ground-truth loadings: each active block is U diag(sigma) V^T
/// with Haar-orthonormal factors and singular values i.i.d. Uniform(lo, hi)
/// sorted descending. Inactive blocks are zero.
pub fn generate_ground_truth<R: Rng>(
    spec: &HierarchySpec,
    sv_range: (f64, f64),
    sigma_eps: f64,
    rng: &mut R,
) -> Result<GroundTruth> {
    let (lo, hi) = sv_range;
    if !(lo > 0.0 && lo <= hi) {
        return Err(CoreError::InvalidSvRange { lo, hi });
    }
    let layout = spec.layout();
    let mut w = DMatrix::zeros(spec.total_ambient(), spec.total_latent());
    for (i, s) in spec.structures().iter().enumerate() {
        let rs = spec.latent_dims()[i];
        if rs == 0 {
            continue;
        }
        for &m in s.members() {
            let dm = spec.ambient_dims()[m - 1];
            let u = sample_haar_orthonormal(dm, rs, rng)?;
            let v = sample_haar_orthonormal(rs, rs, rng)?;
            let mut sv: Vec<f64> = (0..rs).map(|_| rng.gen_range(lo..=hi)).collect();
            sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let block = &u * DMatrix::from_diagonal(&DVector::from_vec(sv)) * v.transpose();
            w.view_mut((layout.rows(m).start, layout.cols(i).start), (dm, rs))
                .copy_from(&block);
        }
    }
    Ok(GroundTruth {
        spec: spec.clone(),
        w,
        sigma_eps,
    })
}

/// Simulates n samples: z_i i.i.d. per-coordinate from `dist`, row i of X
/// equals W z_i + eps_i with eps_i ~ N(0, sigma_eps^2 I).
pub fn simulate_dataset_with<R: Rng>(
    truth: &GroundTruth,
    n: usize,
    dist: LatentDist,
    rng: &mut R,
) -> Result<MultimodalDataset> {
    if n < 2 {
        return Err(CoreError::NotEnoughSamples { got: n, min: 2 });
    }
    let r = truth.w.ncols();
    let d = truth.w.nrows();
    let z = DMatrix::from_fn(n, r, |_, _| dist.sample(rng));
    let mut x = &z * truth.w.transpose();
    if truth.sigma_eps > 0.0 {
        for v in x.iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *v += truth.sigma_eps * e;
        }
    }
    debug_assert_eq!(x.ncols(), d);
    Ok(MultimodalDataset {
        n,
        x,
        z: Some(z),
        seed_tags: Vec::new(),
    })
}

pub fn simulate_dataset<R: Rng>(truth: &GroundTruth, n: usize, rng: &mut R) -> Result<MultimodalDataset> {
    simulate_dataset_with(truth, n, LatentDist::Gaussian, rng)
}

/// Draws a coefficient uniformly from the unit sphere in R^r.
pub fn sample_unit_sphere<R: Rng>(r: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v: DVector<f64> = DVector::from_fn(r, |_, _| StandardNormal.sample(rng));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Simulates fresh downstream data: latents and noise i.i.d. as in
/// `simulate_dataset`, responses y_i = beta_star^T z_i + xi_i.
pub fn simulate_downstream<R: Rng>(
    truth: &GroundTruth,
    beta_star: &DVector<f64>,
    sigma_xi: f64,
    m: usize,
    rng: &mut R,
) -> Result<DownstreamDataset> {
    if m < 2 {
        return Err(CoreError::NotEnoughSamples { got: m, min: 2 });
    }
    let r = truth.w.ncols();
    if beta_star.len() != r {
        return Err(CoreError::DimensionMismatch(format!(
            "beta_star has length {}, expected r = {}",
            beta_star.len(),
            r
        )));
    }
    let data = simulate_dataset(truth, m, rng)?;
    let z = data.z.expect("latents retained by simulate_dataset");
    let mut y = &z * beta_star;
    if sigma_xi > 0.0 {
        for v in y.iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *v += sigma_xi * e;
        }
    }
    Ok(DownstreamDataset {
        m,
        x: data.x,
        z,
        y,
        beta_star: beta_star.clone(),
        sigma_xi,
    })
}

/// Smallest singular value of the stacked loading matrix; positive iff W has
/// full rank r.
pub fn smallest_stacked_singular_value(truth: &GroundTruth) -> f64 {
    let (_, s, _) = svd_desc(&truth.w);
    s[s.len() - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{build_hierarchy, RankSpec};
    use approx::assert_relative_eq;

    #[test]
    fn haar_one_dimensional_is_sign() {
        let mut rng = derive_rng(1, &[0]);
        let mut seen = [false, false];
        for _ in 0..64 {
            let q = sample_haar_orthonormal(1, 1, &mut rng).unwrap();
            let v = q[(0, 0)];
            assert!((v.abs() - 1.0).abs() < 1e-12);
            seen[if v > 0.0 { 0 } else { 1 }] = true;
        }
        assert!(seen[0] && seen[1]);
    }

    #[test]
    fn haar_orthonormal_columns() {
        let mut rng = derive_rng(2, &[0]);
        let q = sample_haar_orthonormal(4, 2, &mut rng).unwrap();
        let gram = q.transpose() * &q;
        assert_relative_eq!(gram, DMatrix::identity(2, 2), epsilon = 1e-12);
        assert!(sample_haar_orthonormal(2, 3, &mut rng).is_err());
    }

    #[test]
    fn haar_mean_entry_unbiased() {
        // Monte Carlo against Haar symmetry: E q_{11} = 0 with sd 1/sqrt(3)
        let mut rng = derive_rng(3, &[0]);
        let trials = 10_000;
        let mut sum = 0.0;
        for _ in 0..trials {
            let q = sample_haar_orthonormal(3, 3, &mut rng).unwrap();
            sum += q[(0, 0)];
        }
        let mean = sum / trials as f64;
        assert!(mean.abs() < 3.0 * (1.0 / 3f64.sqrt()) / 100.0);
    }

    #[test]
    fn ground_truth_masked_and_full_rank() {
        let (spec, layout) = build_hierarchy(&[6, 6, 6], RankSpec::Uniform(1)).unwrap();
        let mut rng = derive_rng(4, &[0]);
        let truth = generate_ground_truth(&spec, (0.5, 1.5), 0.3, &mut rng).unwrap();
        layout.check_mask(&truth.w).unwrap();
        assert!(smallest_stacked_singular_value(&truth) > 0.0);
    }

    #[test]
    fn degenerate_sv_range_gives_unit_singular_values() {
        let (spec, layout) = build_hierarchy(&[5, 5], RankSpec::Uniform(1)).unwrap();
        let mut rng = derive_rng(5, &[0]);
        let truth = generate_ground_truth(&spec, (1.0, 1.0), 0.0, &mut rng).unwrap();
        for (i, s) in spec.structures().iter().enumerate() {
            for &m in s.members() {
                let block = truth
                    .w
                    .view((layout.rows(m).start, layout.cols(i).start), (5, 1));
                assert_relative_eq!(block.norm(), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_reconstruction_is_exact() {
        let (spec, _) = build_hierarchy(&[4, 4], RankSpec::Uniform(1)).unwrap();
        let mut rng = derive_rng(6, &[0]);
        let truth = generate_ground_truth(&spec, (0.5, 1.5), 0.0, &mut rng).unwrap();
        let data = simulate_dataset(&truth, 8, &mut rng).unwrap();
        let z = data.z.as_ref().unwrap();
        let recon = z * truth.w.transpose();
        assert_eq!(recon, data.x);
    }

    #[test]
    fn latent_covariance_near_identity() {
        let (spec, _) = build_hierarchy(&[4, 4, 4], RankSpec::Uniform(1)).unwrap();
        let mut rng = derive_rng(7, &[0]);
        let truth = generate_ground_truth(&spec, (0.5, 1.5), 0.0, &mut rng).unwrap();
        let n = 100_000;
        let data = simulate_dataset(&truth, n, &mut rng).unwrap();
        let z = data.z.unwrap();
        let cov = z.transpose() * &z / (n as f64 - 1.0);
        let tol = 5.0 * (2.0 / n as f64).sqrt();
        for i in 0..cov.nrows() {
            for j in 0..cov.ncols() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (cov[(i, j)] - expect).abs() < tol,
                    "cov({i},{j}) = {} off by more than {tol}",
                    cov[(i, j)]
                );
            }
        }
    }

    #[test]
    fn second_moment_matches_trace_identity() {
        // E ||x||^2 = ||W||_F^2 + d sigma^2, checked at 5% on a paper-style config
        let (spec, _) = build_hierarchy(&[30, 50, 80], RankSpec::Uniform(2)).unwrap();
        let mut rng = derive_rng(8, &[0]);
        let truth = generate_ground_truth(&spec, (0.5, 1.5), 10f64.sqrt(), &mut rng).unwrap();
        let n = 5000;
        let data = simulate_dataset(&truth, n, &mut rng).unwrap();
        let d = truth.w.nrows() as f64;
        let mean_sq: f64 = (0..n).map(|i| data.x.row(i).norm_squared()).sum::<f64>() / n as f64 / d;
        let expect = truth.w.norm_squared() / d + truth.noise_variance();
        assert!((mean_sq - expect).abs() / expect < 0.05);
    }

    #[test]
    fn downstream_noiseless_first_coordinate() {
        let (spec, _) = build_hierarchy(&[4, 4], RankSpec::Uniform(1)).unwrap();
        let mut rng = derive_rng(9, &[0]);
        let truth = generate_ground_truth(&spec, (0.5, 1.5), 0.2, &mut rng).unwrap();
        let mut beta = DVector::zeros(3);
        beta[0] = 1.0;
        let ds = simulate_downstream(&truth, &beta, 0.0, 16, &mut rng).unwrap();
        for i in 0..ds.m {
            assert_eq!(ds.y[i], ds.z[(i, 0)]);
        }
    }

    #[test]
    fn unit_sphere_beta_is_normalized() {
        let mut rng = derive_rng(10, &[0]);
        let b = sample_unit_sphere(70, &mut rng);
        assert!((b.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn downstream_variance_decomposition() {
        let (spec, _) = build_hierarchy(&[4, 4], RankSpec::Uniform(1)).unwrap();
        let mut rng = derive_rng(11, &[0]);
        let truth = generate_ground_truth(&spec, (0.5, 1.5), 0.1, &mut rng).unwrap();
        let beta = sample_unit_sphere(3, &mut rng);
        let m = 100_000;
        let ds = simulate_downstream(&truth, &beta, 0.1, m, &mut rng).unwrap();
        let mean = ds.y.mean();
        let var: f64 = ds.y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m as f64 - 1.0);
        let expect = 1.0 + 0.01;
        assert!((var - expect).abs() / expect < 0.03);
    }

    #[test]
    fn identical_seeds_identical_datasets() {
        let (spec, _) = build_hierarchy(&[5, 5], RankSpec::Uniform(1)).unwrap();
        let gen = |seed| {
            let mut rng = derive_rng(seed, &[3, 7]);
            let truth = generate_ground_truth(&spec, (0.5, 1.5), 0.4, &mut rng).unwrap();
            simulate_dataset(&truth, 32, &mut rng).unwrap()
        };
        let a = gen(99);
        let b = gen(99);
        assert_eq!(a.x, b.x);
        let c = gen(100);
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn derive_rng_streams_are_order_free() {
        let a = derive_rng(5, &[1, 2]).gen::<u64>();
        let b = derive_rng(5, &[2, 1]).gen::<u64>();
        let c = derive_rng(5, &[1, 2]).gen::<u64>();
        assert_eq!(a, c);
        assert_ne!(a, b);
    }
}
