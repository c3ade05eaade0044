//! Covariance estimation, noise-variance estimation and denoising, and
//! orthogonal Procrustes alignment.

use crate::error::{CoreError, Result};
use crate::linalg::{svd_desc, sym_eigen_desc};
use crate::simulate::MultimodalDataset;
use nalgebra::{DMatrix, DVector};

/// Sample covariance with optional noise-variance estimate and denoised
/// matrix. `s_tilde = s_n - sigma_eps_hat_sq * I` exactly when present.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub s_n: DMatrix<f64>,
    pub n: usize,
    pub sigma_eps_hat_sq: Option<f64>,
    pub s_tilde: Option<DMatrix<f64>>,
}

impl CovarianceEstimate {
    /// Wraps a population covariance (no sampling). Denoising a population
    /// matrix of the form W W^T + sigma^2 I recovers sigma^2 and W W^T
    /// exactly.
    pub fn population(s: DMatrix<f64>) -> Self {
        CovarianceEstimate {
            s_n: s,
            n: 0,
            sigma_eps_hat_sq: None,
            s_tilde: None,
        }
    }

    pub fn denoised(&self) -> &DMatrix<f64> {
        self.s_tilde.as_ref().unwrap_or(&self.s_n)
    }
}

/// Uncentered sample covariance S_n = (1/(n-1)) sum_i x_i x_i^T, matching the
/// zero-mean model. Set `center` to subtract the empirical mean first (the
/// centered form is the one under which the pairwise and covariance loss
/// forms agree exactly; see `train::loss_pairwise`).
pub fn sample_covariance_with(data: &MultimodalDataset, center: bool) -> Result<CovarianceEstimate> {
    if data.n < 2 {
        return Err(CoreError::NotEnoughSamples { got: data.n, min: 2 });
    }
    let n = data.n as f64;
    let s_n = if center {
        let mean = data.x.row_mean();
        let mut xc = data.x.clone();
        for mut row in xc.row_iter_mut() {
            row -= &mean;
        }
        xc.transpose() * &xc / (n - 1.0)
    } else {
        data.x.transpose() * &data.x / (n - 1.0)
    };
    Ok(CovarianceEstimate {
        s_n,
        n: data.n,
        sigma_eps_hat_sq: None,
        s_tilde: None,
    })
}

/// Uncentered sample covariance (the pipeline default).
pub fn sample_covariance(data: &MultimodalDataset) -> Result<CovarianceEstimate> {
    sample_covariance_with(data, false)
}

/// Estimates the noise variance as the mean of the trailing d - r eigenvalues
/// of S_n and subtracts it from the diagonal. Trailing eigenvalues of the
/// result may be negative; only the top-r part is consumed downstream.
pub fn denoise_covariance(cov: &CovarianceEstimate, r: usize) -> Result<CovarianceEstimate> {
    let d = cov.s_n.nrows();
    if r >= d {
        return Err(CoreError::DenoiseRank { r, d });
    }
    let (evals, _) = sym_eigen_desc(&cov.s_n);
    let sigma_sq = evals.iter().skip(r).sum::<f64>() / (d - r) as f64;
    let mut s_tilde = cov.s_n.clone();
    for i in 0..d {
        s_tilde[(i, i)] -= sigma_sq;
    }
    Ok(CovarianceEstimate {
        s_n: cov.s_n.clone(),
        n: cov.n,
        sigma_eps_hat_sq: Some(sigma_sq),
        s_tilde: Some(s_tilde),
    })
}

/// Checks symmetry to a relative tolerance of 1e-12.
pub fn check_symmetric(s: &DMatrix<f64>) -> Result<()> {
    if s.nrows() != s.ncols() {
        return Err(CoreError::ShapeMismatch {
            expected: "square".into(),
            got: format!("{}x{}", s.nrows(), s.ncols()),
        });
    }
    let scale = s.norm().max(1.0);
    let mut max_dev = 0.0f64;
    for i in 0..s.nrows() {
        for j in (i + 1)..s.ncols() {
            max_dev = max_dev.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    if max_dev > 1e-12 * scale {
        return Err(CoreError::AsymmetricCovariance { max_dev });
    }
    Ok(())
}

/// Orthogonal Procrustes alignment: H = A B^T from the SVD A diag(s) B^T of
/// V^T W; H minimizes ||V R - W||_F over orthogonal R.
pub fn procrustes_align(v: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if v.shape() != w.shape() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{}x{}", w.nrows(), w.ncols()),
            got: format!("{}x{}", v.nrows(), v.ncols()),
        });
    }
    if v.ncols() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let cross = v.transpose() * w;
    let (a, _, b) = svd_desc(&cross);
    Ok(a * b.transpose())
}

/// Eigenvalues of a symmetric matrix in descending order.
pub fn eigenvalues_desc(s: &DMatrix<f64>) -> DVector<f64> {
    sym_eigen_desc(s).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{build_hierarchy, RankSpec};
    use crate::simulate::{derive_rng, generate_ground_truth, sample_haar_orthonormal, simulate_dataset};
    use approx::assert_relative_eq;

    fn dataset_from_rows(rows: Vec<Vec<f64>>) -> MultimodalDataset {
        let n = rows.len();
        let d = rows[0].len();
        let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        MultimodalDataset { n, x, z: None, seed_tags: vec![] }
    }

    #[test]
    fn replicated_vector_gives_rank_one() {
        let v = vec![1.0, -2.0, 0.5];
        let n = 6;
        let data = dataset_from_rows(vec![v.clone(); n]);
        let cov = sample_covariance(&data).unwrap();
        let norm_sq: f64 = v.iter().map(|x| x * x).sum();
        let expected_trace = n as f64 * norm_sq / (n as f64 - 1.0);
        assert_relative_eq!(cov.s_n.trace(), expected_trace, epsilon = 1e-12);
        let evals = eigenvalues_desc(&cov.s_n);
        assert!(evals[1].abs() < 1e-12);
    }

    #[test]
    fn zero_data_zero_covariance() {
        let data = dataset_from_rows(vec![vec![0.0; 4]; 3]);
        let cov = sample_covariance(&data).unwrap();
        assert_eq!(cov.s_n, DMatrix::zeros(4, 4));
    }

    #[test]
    fn covariance_concentrates_without_noise() {
        let (spec, _) = build_hierarchy(&[4, 4], RankSpec::PerStructure(vec![1, 1, 0])).unwrap();
        let mut rng = derive_rng(21, &[0]);
        let truth = generate_ground_truth(&spec, (0.8, 1.2), 0.0, &mut rng).unwrap();
        let data = simulate_dataset(&truth, 100_000, &mut rng).unwrap();
        let cov = sample_covariance(&data).unwrap();
        let pop = &truth.w * truth.w.transpose();
        assert!((cov.s_n - &pop).norm() / pop.norm() < 0.05);
    }

    #[test]
    fn denoise_population_identity() {
        // S = W W^T + sigma^2 I with rank(WW^T) = r recovers sigma^2 and WW^T
        let (spec, _) = build_hierarchy(&[5, 5], RankSpec::Uniform(1)).unwrap();
        let mut rng = derive_rng(22, &[0]);
        let truth = generate_ground_truth(&spec, (0.5, 1.5), 0.7, &mut rng).unwrap();
        let cov = CovarianceEstimate::population(truth.population_covariance());
        let den = denoise_covariance(&cov, 3).unwrap();
        assert_relative_eq!(den.sigma_eps_hat_sq.unwrap(), 0.49, epsilon = 1e-10);
        let pop = &truth.w * truth.w.transpose();
        assert!((den.s_tilde.as_ref().unwrap() - &pop).norm() <= 1e-10 * pop.norm().max(1.0));
    }

    #[test]
    fn denoise_identity_matrix() {
        let cov = CovarianceEstimate::population(DMatrix::identity(4, 4));
        let den = denoise_covariance(&cov, 2).unwrap();
        assert_relative_eq!(den.sigma_eps_hat_sq.unwrap(), 1.0, epsilon = 1e-14);
        assert!(den.s_tilde.unwrap().norm() < 1e-12);
        assert!(denoise_covariance(&cov, 4).is_err());
    }

    #[test]
    fn procrustes_recovers_rotation() {
        let mut rng = derive_rng(23, &[0]);
        let w = DMatrix::from_fn(6, 2, |_, _| {
            use rand_distr::Distribution;
            rand_distr::StandardNormal.sample(&mut rng)
        });
        let r = sample_haar_orthonormal(2, 2, &mut rng).unwrap();
        let v = &w * &r;
        let h = procrustes_align(&v, &w).unwrap();
        assert_relative_eq!(h, r.transpose(), epsilon = 1e-10);
        assert!((v * h - w).norm() < 1e-10);
    }

    #[test]
    fn procrustes_identity_on_equal_inputs() {
        let mut rng = derive_rng(24, &[0]);
        let w = DMatrix::from_fn(5, 3, |_, _| {
            use rand_distr::Distribution;
            rand_distr::StandardNormal.sample(&mut rng)
        });
        let h = procrustes_align(&w, &w).unwrap();
        assert!((&w * &h - &w).norm() < 1e-10);
        let hh = h.transpose() * &h;
        assert_relative_eq!(hh, DMatrix::identity(3, 3), epsilon = 1e-10);
    }

    #[test]
    fn procrustes_is_optimal_among_random_rotations() {
        let mut rng = derive_rng(25, &[0]);
        use rand_distr::Distribution;
        let v = DMatrix::from_fn(6, 2, |_, _| rand_distr::StandardNormal.sample(&mut rng));
        let w = DMatrix::from_fn(6, 2, |_, _| rand_distr::StandardNormal.sample(&mut rng));
        let h = procrustes_align(&v, &w).unwrap();
        let best = (&v * &h - &w).norm();
        for _ in 0..1000 {
            let r = sample_haar_orthonormal(2, 2, &mut rng).unwrap();
            assert!(best <= (&v * r - &w).norm() + 1e-12);
        }
    }

    #[test]
    fn procrustes_determinant_and_psd_product() {
        let mut rng = derive_rng(26, &[0]);
        use rand_distr::Distribution;
        let v = DMatrix::from_fn(7, 3, |_, _| rand_distr::StandardNormal.sample(&mut rng));
        let w = DMatrix::from_fn(7, 3, |_, _| rand_distr::StandardNormal.sample(&mut rng));
        let h = procrustes_align(&v, &w).unwrap();
        assert_relative_eq!(h.determinant().abs(), 1.0, epsilon = 1e-10);
        // (V H)^T W symmetric PSD: the aligned cross product has no residual rotation
        let p = (&v * &h).transpose() * &w;
        assert_relative_eq!(p.clone(), p.transpose(), epsilon = 1e-9);
        let evals = eigenvalues_desc(&(0.5 * (&p + p.transpose())));
        assert!(evals[evals.len() - 1] > -1e-10);
    }
}
