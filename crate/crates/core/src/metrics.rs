//! Recovery diagnostics (projection errors, Procrustes-aligned errors in
//! spectral / Frobenius / two-infinity norms) and downstream prediction
//! metrics.

use crate::error::{CoreError, Result};
use crate::hierarchy::BlockLayout;
use crate::linalg::{spectral_norm, two_infinity_norm};
use crate::spectral::procrustes_align;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Aligned error of one target in the three norms of interest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignedError {
    pub spectral: f64,
    pub frobenius: f64,
    pub two_infinity: f64,
}

/// Projection and aligned errors, globally and per structure. Structure keys
/// are canonical structure indices into the layout.
#[derive(Debug, Clone, Default)]
pub struct RecoveryReport {
    pub global_err: Option<f64>,
    pub block_err: Vec<(usize, f64)>,
    pub aligned_global: Option<AlignedError>,
    pub aligned_blocks: Vec<(usize, AlignedError)>,
}

fn stack_member_rows(layout: &BlockLayout, v: &DMatrix<f64>, structure_idx: usize) -> DMatrix<f64> {
    let rows = layout.member_rows(structure_idx);
    let cols = layout.cols(structure_idx);
    let mut out = DMatrix::zeros(rows.len(), cols.len());
    for (ri, &rr) in rows.iter().enumerate() {
        for (ci, c) in cols.clone().enumerate() {
            out[(ri, ci)] = v[(rr, c)];
        }
    }
    out
}

fn check_shapes(layout: &BlockLayout, v: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<()> {
    let (d, r) = (layout.total_ambient(), layout.total_latent());
    for (name, m) in [("V", v), ("W", w)] {
        if m.nrows() != d || m.ncols() != r {
            return Err(CoreError::ShapeMismatch {
                expected: format!("{name} of shape {d}x{r}"),
                got: format!("{}x{}", m.nrows(), m.ncols()),
            });
        }
    }
    Ok(())
}

/// Rotation-invariant projection errors: ||V V^T - W W^T||_F globally, and
/// per structure over the stacked rows of the member modalities.
pub fn projection_error(v: &DMatrix<f64>, w: &DMatrix<f64>, layout: &BlockLayout) -> Result<RecoveryReport> {
    check_shapes(layout, v, w)?;
    let global = (v * v.transpose() - w * w.transpose()).norm();
    let mut block_err = Vec::new();
    for i in 0..layout.n_structures() {
        if layout.cols(i).is_empty() {
            continue;
        }
        let vs = stack_member_rows(layout, v, i);
        let ws = stack_member_rows(layout, w, i);
        block_err.push((i, (&vs * vs.transpose() - &ws * ws.transpose()).norm()));
    }
    Ok(RecoveryReport {
        global_err: Some(global),
        block_err,
        aligned_global: None,
        aligned_blocks: Vec::new(),
    })
}

fn aligned_error_of(v: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<AlignedError> {
    let h = procrustes_align(v, w)?;
    let diff = v * h - w;
    Ok(AlignedError {
        spectral: spectral_norm(&diff),
        frobenius: diff.norm(),
        two_infinity: two_infinity_norm(&diff),
    })
}

/// Procrustes-aligned errors: globally (one r x r alignment) and per structure
/// (one r_s x r_s alignment over the stacked member rows — the block-diagonal
/// alignment convention).
pub fn aligned_errors(v: &DMatrix<f64>, w: &DMatrix<f64>, layout: &BlockLayout) -> Result<RecoveryReport> {
    check_shapes(layout, v, w)?;
    let aligned_global = aligned_error_of(v, w)?;
    let mut aligned_blocks = Vec::new();
    for i in 0..layout.n_structures() {
        if layout.cols(i).is_empty() {
            continue;
        }
        let vs = stack_member_rows(layout, v, i);
        let ws = stack_member_rows(layout, w, i);
        aligned_blocks.push((i, aligned_error_of(&vs, &ws)?));
    }
    Ok(RecoveryReport {
        global_err: None,
        block_err: Vec::new(),
        aligned_global: Some(aligned_global),
        aligned_blocks,
    })
}

/// Block-diagonal alignment matrix built from per-structure Procrustes
/// rotations of V_s onto W_s (used to align downstream coefficients).
pub fn blockwise_alignment(v: &DMatrix<f64>, w: &DMatrix<f64>, layout: &BlockLayout) -> Result<DMatrix<f64>> {
    check_shapes(layout, v, w)?;
    let r = layout.total_latent();
    let mut h = DMatrix::zeros(r, r);
    for i in 0..layout.n_structures() {
        let cols = layout.cols(i);
        if cols.is_empty() {
            continue;
        }
        let vs = stack_member_rows(layout, v, i);
        let ws = stack_member_rows(layout, w, i);
        let hs = procrustes_align(&vs, &ws)?;
        for (a, ca) in cols.clone().enumerate() {
            for (b, cb) in cols.clone().enumerate() {
                h[(ca, cb)] = hs[(a, b)];
            }
        }
    }
    Ok(h)
}

/// Downstream prediction metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub rmse: f64,
    /// Symmetric MAPE in percent, 0/0 terms counted as 0.
    pub smape: f64,
    /// None when y has zero variance (undefined).
    pub r2: Option<f64>,
}

/// RMSE, SMAPE (symmetric-denominator convention, 0/0 -> 0), and R^2.
pub fn regression_metrics(y: &DVector<f64>, yhat: &DVector<f64>) -> Result<RegressionMetrics> {
    if y.len() != yhat.len() {
        return Err(CoreError::DimensionMismatch(format!(
            "y has length {}, yhat has length {}",
            y.len(),
            yhat.len()
        )));
    }
    if y.len() < 2 {
        return Err(CoreError::NotEnoughSamples { got: y.len(), min: 2 });
    }
    let m = y.len() as f64;
    let mut sq = 0.0;
    let mut smape = 0.0;
    for i in 0..y.len() {
        let d = y[i] - yhat[i];
        sq += d * d;
        let denom = (y[i].abs() + yhat[i].abs()) / 2.0;
        if denom > 0.0 {
            smape += d.abs() / denom;
        }
    }
    let mean = y.mean();
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let r2 = if ss_tot > 0.0 { Some(1.0 - sq / ss_tot) } else { None };
    Ok(RegressionMetrics {
        rmse: (sq / m).sqrt(),
        smape: 100.0 * smape / m,
        r2,
    })
}
