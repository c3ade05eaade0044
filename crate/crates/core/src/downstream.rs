//! Latent recovery operator, debiased ordinary least squares, group-lasso
//! estimation with debiasing, and the closed-form excess risk.

use crate::error::{CoreError, Result};
use crate::hierarchy::BlockLayout;
use crate::linalg::{svd_desc, sym_eigen_desc};
use crate::simulate::{DownstreamDataset, GroundTruth};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Left inverse C = (V^T V)^{-1} V^T of a full-column-rank loading matrix;
/// rows for structure s are available by block.
#[derive(Debug, Clone)]
pub struct RecoveryOperator {
    pub c_hat: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl RecoveryOperator {
    /// Embeds one sample: z_hat = C x.
    pub fn embed(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c_hat * x
    }

    /// Embeds rows of an n x d matrix into n x r.
    pub fn embed_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x * self.c_hat.transpose()
    }

    /// Rows of C for structure index `i`.
    pub fn structure_rows(&self, layout: &BlockLayout, i: usize) -> DMatrix<f64> {
        let cols = layout.cols(i);
        self.c_hat.rows(cols.start, cols.len()).clone_owned()
    }
}

/// Builds the Moore-Penrose left inverse (V^T V)^{-1} V^T. Errors when the
/// smallest singular value of V is below 1e-8 times the largest.
pub fn recovery_operator(v: &DMatrix<f64>) -> Result<RecoveryOperator> {
    let (_, svals, _) = svd_desc(v);
    let smax = svals[0];
    let smin = svals[svals.len() - 1];
    if !(smin > 1e-8 * smax && smax > 0.0) {
        return Err(CoreError::RankDeficient { ratio: if smax > 0.0 { smin / smax } else { 0.0 } });
    }
    let gram = v.transpose() * v;
    let chol = gram
        .cholesky()
        .ok_or(CoreError::RankDeficient { ratio: smin / smax })?;
    let c_hat = chol.solve(&v.transpose());
    Ok(RecoveryOperator {
        c_hat,
        v: v.clone(),
    })
}

/// Downstream coefficient estimate partitioned into structure blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionFit {
    pub beta: Vec<f64>,
    pub lambda_m: f64,
    pub sigma_eps_hat_sq: f64,
    pub iterations: usize,
    pub final_objective: f64,
    pub converged: bool,
    /// Structure indices with nonzero coefficient blocks.
    pub active_structures: Vec<usize>,
}

impl RegressionFit {
    pub fn beta_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.beta.clone())
    }
}

fn active_set(beta: &DVector<f64>, layout: &BlockLayout) -> Vec<usize> {
    (0..layout.n_structures())
        .filter(|&i| {
            let cols = layout.cols(i);
            !cols.is_empty() && beta.rows(cols.start, cols.len()).norm() > 0.0
        })
        .collect()
}

/// Debiased least squares in closed form: solves
/// ((1/m) Z^T Z - sigma^2 C C^T) beta = (1/m) Z^T y
/// where Z stacks the embeddings C x_i. With sigma^2 = 0 this is plain OLS on
/// the embeddings. Errors when the debiased Gram matrix is not positive
/// definite.
pub fn fit_debiased_ols(
    data: &DownstreamDataset,
    c: &RecoveryOperator,
    sigma_eps_hat_sq: f64,
    layout: &BlockLayout,
) -> Result<RegressionFit> {
    let r = c.c_hat.nrows();
    let m = data.m;
    if m <= r {
        return Err(CoreError::NotEnoughSamples { got: m, min: r + 1 });
    }
    if data.x.ncols() != c.c_hat.ncols() {
        return Err(CoreError::DimensionMismatch(format!(
            "data has d = {}, recovery operator expects {}",
            data.x.ncols(),
            c.c_hat.ncols()
        )));
    }
    let z = c.embed_rows(&data.x);
    let mf = m as f64;
    let gram = z.transpose() * &z / mf - (&c.c_hat * c.c_hat.transpose()) * sigma_eps_hat_sq;
    let rhs = z.transpose() * &data.y / mf;
    let (evals, _) = sym_eigen_desc(&(0.5 * (&gram + gram.transpose())));
    let min_eig = evals[evals.len() - 1];
    if min_eig <= 1e-10 {
        return Err(CoreError::IndefiniteGram { min_eig });
    }
    let chol = gram
        .clone()
        .cholesky()
        .ok_or(CoreError::IndefiniteGram { min_eig })?;
    let beta = chol.solve(&rhs);
    // residual of the normal equations, relative
    let resid = (&gram * &beta - &rhs).norm() / rhs.norm().max(1e-300);
    debug_assert!(resid < 1e-8, "normal equations residual {resid}");
    let obj = objective(&z, &data.y, &c.c_hat, sigma_eps_hat_sq, &beta, 0.0, layout);
    Ok(RegressionFit {
        beta: beta.iter().copied().collect(),
        lambda_m: 0.0,
        sigma_eps_hat_sq,
        iterations: 0,
        final_objective: obj,
        converged: true,
        active_structures: active_set(&beta, layout),
    })
}

fn objective(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    c_hat: &DMatrix<f64>,
    sigma_sq: f64,
    beta: &DVector<f64>,
    lambda_m: f64,
    layout: &BlockLayout,
) -> f64 {
    let m = y.len() as f64;
    let resid = y - z * beta;
    let ctb = c_hat.transpose() * beta;
    let mut obj = resid.norm_squared() / (2.0 * m) - sigma_sq * ctb.norm_squared() / 2.0;
    if lambda_m > 0.0 {
        for i in 0..layout.n_structures() {
            let cols = layout.cols(i);
            if !cols.is_empty() {
                obj += lambda_m * beta.rows(cols.start, cols.len()).norm();
            }
        }
    }
    obj
}

/// Solver knobs for the proximal gradient iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupLassoParams {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for GroupLassoParams {
    fn default() -> Self {
        GroupLassoParams { max_iters: 20_000, tol: 1e-8 }
    }
}

/// Group lasso with debiasing via proximal gradient: smooth gradient
/// (1/m) Z^T (Z beta - y) - sigma^2 C C^T beta, group soft-threshold prox,
/// step 1/L with L = sigma_1((1/m) Z^T Z) + sigma^2 sigma_1(C C^T).
/// Non-convergence returns the best iterate with `converged = false`.
pub fn fit_group_lasso(
    data: &DownstreamDataset,
    c: &RecoveryOperator,
    sigma_eps_hat_sq: f64,
    lambda_m: f64,
    params: GroupLassoParams,
    layout: &BlockLayout,
) -> Result<RegressionFit> {
    if lambda_m < 0.0 {
        return Err(CoreError::NegativePenalty(lambda_m));
    }
    let m = data.m;
    if m < 2 {
        return Err(CoreError::NotEnoughSamples { got: m, min: 2 });
    }
    let z = c.embed_rows(&data.x);
    let mf = m as f64;
    let gram = z.transpose() * &z / mf;
    let debias = (&c.c_hat * c.c_hat.transpose()) * sigma_eps_hat_sq;
    let rhs = z.transpose() * &data.y / mf;
    let (g_evals, _) = sym_eigen_desc(&gram);
    let (d_evals, _) = sym_eigen_desc(&debias);
    let lip = g_evals[0] + d_evals[0].max(0.0) + 1e-12;
    let eta = 1.0 / lip;
    let r = gram.nrows();
    let mut beta = DVector::zeros(r);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=params.max_iters {
        iterations = it;
        let grad = &gram * &beta - &rhs - &debias * &beta;
        let mut next = &beta - grad * eta;
        for i in 0..layout.n_structures() {
            let cols = layout.cols(i);
            if cols.is_empty() {
                continue;
            }
            let norm = next.rows(cols.start, cols.len()).norm();
            let threshold = eta * lambda_m;
            if norm <= threshold {
                for k in cols {
                    next[k] = 0.0;
                }
            } else {
                let scale = 1.0 - threshold / norm;
                for k in cols {
                    next[k] *= scale;
                }
            }
        }
        let delta = (&next - &beta).norm();
        beta = next;
        if delta < params.tol {
            converged = true;
            break;
        }
    }
    let obj = objective(&z, &data.y, &c.c_hat, sigma_eps_hat_sq, &beta, lambda_m, layout);
    Ok(RegressionFit {
        beta: beta.iter().copied().collect(),
        lambda_m,
        sigma_eps_hat_sq,
        iterations,
        final_objective: obj,
        converged,
        active_structures: active_set(&beta, layout),
    })
}

/// KKT residual of a group-lasso solution: max over structures of the
/// subgradient violation. Zero (to tolerance) at an exact solution.
pub fn group_lasso_kkt_residual(
    data: &DownstreamDataset,
    c: &RecoveryOperator,
    sigma_eps_hat_sq: f64,
    lambda_m: f64,
    beta: &DVector<f64>,
    layout: &BlockLayout,
) -> f64 {
    let z = c.embed_rows(&data.x);
    let mf = data.m as f64;
    let grad = z.transpose() * (&z * beta - &data.y) / mf
        - (&c.c_hat * c.c_hat.transpose()) * sigma_eps_hat_sq * beta;
    let mut worst = 0.0f64;
    for i in 0..layout.n_structures() {
        let cols = layout.cols(i);
        if cols.is_empty() {
            continue;
        }
        let g = grad.rows(cols.start, cols.len());
        let b = beta.rows(cols.start, cols.len());
        let v = if b.norm() > 0.0 {
            (g + b * (lambda_m / b.norm())).norm()
        } else {
            (g.norm() - lambda_m).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// Closed-form prediction risk under the linear-Gaussian model:
/// E (y - beta^T C x)^2 = ||beta* - W^T C^T beta||^2
///                      + sigma_eps^2 ||C^T beta||^2 + sigma_xi^2.
pub fn prediction_risk(
    beta: &DVector<f64>,
    c: &RecoveryOperator,
    truth: &GroundTruth,
    beta_star: &DVector<f64>,
    sigma_xi: f64,
) -> Result<f64> {
    let r = truth.w.ncols();
    if beta.len() != r || beta_star.len() != r {
        return Err(CoreError::DimensionMismatch(format!(
            "beta / beta_star must have length r = {r}"
        )));
    }
    let ctb = c.c_hat.transpose() * beta;
    let bias = beta_star - truth.w.transpose() * &ctb;
    Ok(bias.norm_squared() + truth.noise_variance() * ctb.norm_squared() + sigma_xi * sigma_xi)
}

/// Excess risk: prediction risk of (beta, C) minus the risk of the oracle
/// (beta*, C_*) with C_* the recovery operator of the true loadings.
pub fn excess_risk(
    beta: &DVector<f64>,
    c: &RecoveryOperator,
    truth: &GroundTruth,
    beta_star: &DVector<f64>,
    sigma_xi: f64,
) -> Result<f64> {
    let c_star = recovery_operator(&truth.w)?;
    let risk = prediction_risk(beta, c, truth, beta_star, sigma_xi)?;
    let oracle = prediction_risk(beta_star, &c_star, truth, beta_star, sigma_xi)?;
    Ok(risk - oracle)
}
