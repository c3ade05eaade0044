//! Config-driven simulation sweeps: replication cells, method comparisons,
//! downstream estimators, long-format records, aggregation, and file output.

use crate::config::{BetaSpec, ExperimentConfig, Method};
use crate::plot;
use hcl_core::container::format_float;
use hcl_core::*;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

// RNG stage tags. Truth, coefficient, and downstream stages deliberately do
// not depend on n, so sample-size comparisons within a replication are paired.
const STAGE_TRUTH: u64 = 1;
const STAGE_DATA: u64 = 2;
const STAGE_BETA: u64 = 3;
const STAGE_DOWNSTREAM: u64 = 4;
const STAGE_TEST: u64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub replication: usize,
    pub n: usize,
    pub m: Option<usize>,
    pub method: String,
    pub target: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct CellFailure {
    pub replication: usize,
    pub n: usize,
    pub error: String,
}

#[derive(Debug, Default)]
pub struct SweepResult {
    pub records: Vec<Record>,
    pub failures: Vec<CellFailure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub n: usize,
    pub m: Option<usize>,
    pub method: String,
    pub target: String,
    pub metric: String,
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

/// True support of the downstream coefficient under a beta specification.
pub fn oracle_support(spec: &HierarchySpec, beta: &BetaSpec) -> anyhow::Result<Vec<usize>> {
    let out = match beta {
        BetaSpec::Sphere => (0..spec.structures().len())
            .filter(|&i| spec.latent_dims()[i] > 0)
            .collect(),
        BetaSpec::SphereOn { structures } => {
            let mut idxs = Vec::new();
            for members in structures {
                let s = Structure::new(members.clone())?;
                let idx = spec
                    .structures()
                    .iter()
                    .position(|c| c == &s)
                    .ok_or_else(|| anyhow::anyhow!("structure {members:?} not in lattice"))?;
                idxs.push(idx);
            }
            idxs.sort_unstable();
            idxs
        }
        BetaSpec::Blocks { blocks } => {
            if blocks.len() != spec.structures().len() {
                anyhow::bail!(
                    "blocks has {} entries for {} structures",
                    blocks.len(),
                    spec.structures().len()
                );
            }
            (0..blocks.len())
                .filter(|&i| blocks[i].iter().any(|&v| v != 0.0))
                .collect()
        }
    };
    Ok(out)
}

/// Draws or assembles the downstream coefficient in canonical block order.
pub fn draw_beta(
    spec: &HierarchySpec,
    beta: &BetaSpec,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> anyhow::Result<DVector<f64>> {
    let layout = spec.layout();
    let r = spec.total_latent();
    match beta {
        BetaSpec::Sphere => Ok(sample_unit_sphere(r, rng)),
        BetaSpec::SphereOn { .. } => {
            let support = oracle_support(spec, beta)?;
            let dim: usize = support.iter().map(|&i| spec.latent_dims()[i]).sum();
            if dim == 0 {
                anyhow::bail!("beta support has zero total dimension");
            }
            let sub = sample_unit_sphere(dim, rng);
            let mut out = DVector::zeros(r);
            let mut off = 0;
            for &i in &support {
                for c in layout.cols(i) {
                    out[c] = sub[off];
                    off += 1;
                }
            }
            Ok(out)
        }
        BetaSpec::Blocks { blocks } => {
            let mut out = DVector::zeros(r);
            for (i, block) in blocks.iter().enumerate() {
                let cols = layout.cols(i);
                if block.len() != cols.len() {
                    anyhow::bail!(
                        "block {i} has {} entries, structure needs {}",
                        block.len(),
                        cols.len()
                    );
                }
                for (k, c) in cols.enumerate() {
                    out[c] = block[k];
                }
            }
            Ok(out)
        }
    }
}

struct CellContext<'a> {
    config: &'a ExperimentConfig,
    spec: HierarchySpec,
    layout: BlockLayout,
}

fn push_global_err(
    records: &mut Vec<Record>,
    rep: usize,
    n: usize,
    method: &str,
    v: &DMatrix<f64>,
    w: &DMatrix<f64>,
) {
    let err = (v * v.transpose() - w * w.transpose()).norm();
    records.push(Record {
        replication: rep,
        n,
        m: None,
        method: method.into(),
        target: "global".into(),
        metric: "err".into(),
        value: err,
    });
}

fn push_block_recovery(
    records: &mut Vec<Record>,
    layout: &BlockLayout,
    rep: usize,
    n: usize,
    method: &str,
    v: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> anyhow::Result<()> {
    let proj = projection_error(v, w, layout)?;
    for (i, e) in proj.block_err {
        records.push(Record {
            replication: rep,
            n,
            m: None,
            method: method.into(),
            target: layout.spec().structures()[i].to_string(),
            metric: "err".into(),
            value: e,
        });
    }
    let aligned = aligned_errors(v, w, layout)?;
    let g = aligned.aligned_global.unwrap();
    for (name, value) in [
        ("aligned_spectral", g.spectral),
        ("aligned_fro", g.frobenius),
        ("aligned_2inf", g.two_infinity),
    ] {
        records.push(Record {
            replication: rep,
            n,
            m: None,
            method: method.into(),
            target: "global".into(),
            metric: name.into(),
            value,
        });
    }
    for (i, e) in aligned.aligned_blocks {
        let target = layout.spec().structures()[i].to_string();
        for (name, value) in [
            ("aligned_spectral", e.spectral),
            ("aligned_fro", e.frobenius),
            ("aligned_2inf", e.two_infinity),
        ] {
            records.push(Record {
                replication: rep,
                n,
                m: None,
                method: method.into(),
                target: target.clone(),
                metric: name.into(),
                value,
            });
        }
    }
    Ok(())
}

fn prediction_records(
    records: &mut Vec<Record>,
    rep: usize,
    n: usize,
    m: usize,
    method: &str,
    beta: &DVector<f64>,
    fitted: &RegressionFit,
    c: &RecoveryOperator,
    h_align: &DMatrix<f64>,
    truth: &GroundTruth,
    beta_star: &DVector<f64>,
    sigma_xi: f64,
    test: &DownstreamDataset,
) -> anyhow::Result<()> {
    let z_test = c.embed_rows(&test.x);
    let yhat = &z_test * beta;
    let metrics = regression_metrics(&test.y, &yhat)?;
    let mut push = |metric: &str, value: f64| {
        records.push(Record {
            replication: rep,
            n,
            m: Some(m),
            method: method.into(),
            target: "prediction".into(),
            metric: metric.into(),
            value,
        });
    };
    push("rmse", metrics.rmse);
    push("smape", metrics.smape);
    if let Some(r2) = metrics.r2 {
        push("r2", r2);
    }
    let aligned_beta = h_align.transpose() * beta;
    let beta_err = (&aligned_beta - beta_star).norm();
    let excess = excess_risk(beta, c, truth, beta_star, sigma_xi)?;
    records.push(Record {
        replication: rep,
        n,
        m: Some(m),
        method: method.into(),
        target: "coefficient".into(),
        metric: "beta_err".into(),
        value: beta_err,
    });
    records.push(Record {
        replication: rep,
        n,
        m: Some(m),
        method: method.into(),
        target: "coefficient".into(),
        metric: "excess_risk".into(),
        value: excess,
    });
    records.push(Record {
        replication: rep,
        n,
        m: Some(m),
        method: method.into(),
        target: "coefficient".into(),
        metric: "active_count".into(),
        value: fitted.active_structures.len() as f64,
    });
    Ok(())
}

/// Log-spaced penalty grid centered at the data-driven rate
/// std(y) sqrt((r + ln m) / m).
pub fn lambda_grid(y: &DVector<f64>, r: usize, points: usize, span: f64) -> Vec<f64> {
    let m = y.len() as f64;
    let mean = y.mean();
    let sd = (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0)).sqrt();
    let center = sd.max(1e-12) * ((r as f64 + m.ln()) / m).sqrt();
    if points == 1 {
        return vec![center];
    }
    let lo = (center / span).ln();
    let hi = (center * span).ln();
    (0..points)
        .map(|i| (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

/// Validation split, penalty path, and the one-standard-error selection rule:
/// the chosen penalty is the largest one whose validation MSE is within one
/// standard error of the minimum.
pub fn tune_group_lasso(
    ds: &DownstreamDataset,
    c: &RecoveryOperator,
    sigma_sq: f64,
    grid: &[f64],
    layout: &BlockLayout,
) -> anyhow::Result<(f64, RegressionFit)> {
    let m = ds.m;
    let m_val = (m / 5).max(1);
    let m_train = m - m_val;
    let train = DownstreamDataset {
        m: m_train,
        x: ds.x.rows(0, m_train).clone_owned(),
        z: ds.z.rows(0, m_train).clone_owned(),
        y: ds.y.rows(0, m_train).clone_owned(),
        beta_star: ds.beta_star.clone(),
        sigma_xi: ds.sigma_xi,
    };
    let x_val = ds.x.rows(m_train, m_val).clone_owned();
    let y_val = ds.y.rows(m_train, m_val).clone_owned();
    let z_val = c.embed_rows(&x_val);
    let mut stats: Vec<(f64, f64, f64)> = Vec::new(); // (mse, se, lambda)
    for &lam in grid {
        let fit = fit_group_lasso(&train, c, sigma_sq, lam, GroupLassoParams::default(), layout)?;
        let resid = &y_val - &z_val * fit.beta_vector();
        let sq: Vec<f64> = resid.iter().map(|v| v * v).collect();
        let mse = sq.iter().sum::<f64>() / m_val as f64;
        let var = sq.iter().map(|v| (v - mse) * (v - mse)).sum::<f64>() / (m_val as f64 - 1.0).max(1.0);
        let se = (var / m_val as f64).sqrt();
        stats.push((mse, se, lam));
    }
    let (best_mse, best_se, _) = stats
        .iter()
        .cloned()
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal))
        .expect("nonempty grid");
    let threshold = best_mse + best_se;
    let chosen = stats
        .iter()
        .filter(|(mse, _, _)| *mse <= threshold)
        .map(|&(_, _, lam)| lam)
        .fold(f64::NEG_INFINITY, f64::max);
    let refit = fit_group_lasso(ds, c, sigma_sq, chosen, GroupLassoParams::default(), layout)?;
    Ok((chosen, refit))
}

fn run_cell(ctx: &CellContext, rep: usize, n: usize) -> anyhow::Result<Vec<Record>> {
    let config = ctx.config;
    let spec = &ctx.spec;
    let layout = &ctx.layout;
    let seed = config.sim.seed;
    let mut records = Vec::new();

    let mut truth_rng = derive_rng(seed, &[rep as u64, STAGE_TRUTH]);
    let truth = generate_ground_truth(
        spec,
        config.sim.sv_range,
        config.sim.noise_c.sqrt(),
        &mut truth_rng,
    )?;
    let mut data_rng = derive_rng(seed, &[rep as u64, STAGE_DATA, n as u64]);
    let data = simulate_dataset(&truth, n, &mut data_rng)?;
    let cov = sample_covariance(&data)?;
    let den = denoise_covariance(&cov, spec.total_latent())?;
    let sigma_sq = den.sigma_eps_hat_sq.unwrap();
    records.push(Record {
        replication: rep,
        n,
        m: None,
        method: "common".into(),
        target: "noise".into(),
        metric: "sigma_eps_sq".into(),
        value: sigma_sq,
    });
    if config.sim.noise_c > 0.0 {
        records.push(Record {
            replication: rep,
            n,
            m: None,
            method: "common".into(),
            target: "noise".into(),
            metric: "sigma_rel_err".into(),
            value: (sigma_sq - config.sim.noise_c).abs() / config.sim.noise_c,
        });
    }

    let s_tilde = den.denoised().clone();
    let need_gd = config.methods.contains(&Method::HclGd)
        || config.downstream.as_ref().map_or(false, |d| d.enabled);
    let mut gd_fit: Option<FitResult> = None;
    if need_gd {
        let fit = fit_from_covariance(&den, layout, &config.fit)?;
        gd_fit = Some(fit);
    }

    for method in &config.methods {
        match method {
            Method::NaiveSvd => {
                let v = init_global(&s_tilde, spec.total_latent())?;
                // the global projection error is rotation invariant, so it is
                // computed on the raw spectral factor; block metrics use the
                // estimate aligned to the truth by the structured projection
                // V H and then masked, per the evaluation convention
                push_global_err(&mut records, rep, n, method.label(), &v, &truth.w);
                let h = procrustes_align(&v, &truth.w)?;
                let masked = layout.apply_mask(&(&v * h))?;
                push_block_recovery(&mut records, layout, rep, n, method.label(), &masked, &truth.w)?;
            }
            Method::HclSvd => {
                let v0 = init_structured(&den, layout)?;
                push_global_err(&mut records, rep, n, method.label(), &v0, &truth.w);
                push_block_recovery(&mut records, layout, rep, n, method.label(), &v0, &truth.w)?;
            }
            Method::HclGd => {
                let fit = gd_fit.as_ref().expect("gd fit computed above");
                push_global_err(&mut records, rep, n, method.label(), &fit.v, &truth.w);
                push_block_recovery(&mut records, layout, rep, n, method.label(), &fit.v, &truth.w)?;
                records.push(Record {
                    replication: rep,
                    n,
                    m: None,
                    method: method.label().into(),
                    target: "fit".into(),
                    metric: "iterations".into(),
                    value: fit.iters_run as f64,
                });
                records.push(Record {
                    replication: rep,
                    n,
                    m: None,
                    method: method.label().into(),
                    target: "fit".into(),
                    metric: "converged".into(),
                    value: if fit.converged { 1.0 } else { 0.0 },
                });
            }
        }
    }

    if let Some(ds_cfg) = config.downstream.as_ref().filter(|d| d.enabled) {
        let m = ctx
            .config
            .sweep
            .m
            .ok_or_else(|| anyhow::anyhow!("downstream enabled but sweep.m missing"))?;
        let m_test = ctx.config.sweep.m_test.unwrap_or(m);
        let fit = gd_fit.as_ref().expect("gd fit computed above");
        let c = recovery_operator(&fit.v)?;
        let mut beta_rng = derive_rng(seed, &[rep as u64, STAGE_BETA]);
        let beta_star = draw_beta(spec, &ds_cfg.beta_spec, &mut beta_rng)?;
        let mut ds_rng = derive_rng(seed, &[rep as u64, STAGE_DOWNSTREAM]);
        let train = simulate_downstream(&truth, &beta_star, ds_cfg.sigma_xi, m, &mut ds_rng)?;
        let mut test_rng = derive_rng(seed, &[rep as u64, STAGE_TEST]);
        let test = simulate_downstream(&truth, &beta_star, ds_cfg.sigma_xi, m_test, &mut test_rng)?;
        let h_align = blockwise_alignment(&fit.v, &truth.w, layout)?;

        let deb = fit_debiased_ols(&train, &c, fit.sigma_eps_hat_sq, layout)?;
        prediction_records(
            &mut records, rep, n, m, "debiased-ols", &deb.beta_vector(), &deb, &c, &h_align,
            &truth, &beta_star, ds_cfg.sigma_xi, &test,
        )?;
        let naive = fit_debiased_ols(&train, &c, 0.0, layout)?;
        prediction_records(
            &mut records, rep, n, m, "naive-ols", &naive.beta_vector(), &naive, &c, &h_align,
            &truth, &beta_star, ds_cfg.sigma_xi, &test,
        )?;

        let grid = lambda_grid(
            &train.y,
            spec.total_latent(),
            ds_cfg.lambda_grid.points,
            ds_cfg.lambda_grid.span,
        );
        let (lambda, gl) = tune_group_lasso(&train, &c, fit.sigma_eps_hat_sq, &grid, layout)?;
        prediction_records(
            &mut records, rep, n, m, "group-lasso", &gl.beta_vector(), &gl, &c, &h_align,
            &truth, &beta_star, ds_cfg.sigma_xi, &test,
        )?;
        records.push(Record {
            replication: rep,
            n,
            m: Some(m),
            method: "group-lasso".into(),
            target: "coefficient".into(),
            metric: "lambda".into(),
            value: lambda,
        });
        let support = oracle_support(spec, &ds_cfg.beta_spec)?;
        let exact = gl.active_structures == support;
        records.push(Record {
            replication: rep,
            n,
            m: Some(m),
            method: "group-lasso".into(),
            target: "coefficient".into(),
            metric: "support_exact".into(),
            value: if exact { 1.0 } else { 0.0 },
        });
    }

    Ok(records)
}

/// Runs every (replication, n) cell, optionally in parallel. Results are
/// deterministic for any worker count: each cell derives its own RNG streams
/// and the records are assembled in cell order.
pub fn run_sweep(config: &ExperimentConfig, workers: usize) -> anyhow::Result<SweepResult> {
    config.validate()?;
    let spec = config.hierarchy.to_spec()?;
    let layout = spec.layout();
    let ctx = CellContext { config, spec, layout };
    let cells: Vec<(usize, usize)> = (0..config.sim.replications)
        .flat_map(|rep| config.sweep.n.iter().map(move |&n| (rep, n)))
        .collect();
    let outputs: Vec<Result<Vec<Record>, String>> = if workers <= 1 {
        cells
            .iter()
            .map(|&(rep, n)| run_cell(&ctx, rep, n).map_err(|e| format!("{e:#}")))
            .collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| anyhow::anyhow!("worker pool: {e}"))?;
        pool.install(|| {
            cells
                .par_iter()
                .map(|&(rep, n)| run_cell(&ctx, rep, n).map_err(|e| format!("{e:#}")))
                .collect()
        })
    };
    let mut result = SweepResult::default();
    for (idx, out) in outputs.into_iter().enumerate() {
        let (rep, n) = cells[idx];
        match out {
            Ok(mut recs) => result.records.append(&mut recs),
            Err(e) => result.failures.push(CellFailure { replication: rep, n, error: e }),
        }
    }
    sort_records(&mut result.records);
    Ok(result)
}

fn sort_records(records: &mut [Record]) {
    records.sort_by(|a, b| {
        (a.replication, a.n, &a.method, &a.target, &a.metric, a.m)
            .cmp(&(b.replication, b.n, &b.method, &b.target, &b.metric, b.m))
    });
}

/// Mean and standard error per (n, m, method, target, metric) cell.
pub fn aggregate(records: &[Record]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(usize, Option<usize>, String, String, String), Vec<f64>> =
        BTreeMap::new();
    for r in records {
        groups
            .entry((r.n, r.m, r.method.clone(), r.target.clone(), r.metric.clone()))
            .or_default()
            .push(r.value);
    }
    groups
        .into_iter()
        .map(|((n, m, method, target, metric), values)| {
            let count = values.len();
            let mean = values.iter().sum::<f64>() / count as f64;
            let se = if count > 1 {
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (count as f64 - 1.0);
                (var / count as f64).sqrt()
            } else {
                0.0
            };
            Aggregate { n, m, method, target, metric, mean, se, count }
        })
        .collect()
}

pub fn records_to_csv(records: &[Record]) -> String {
    let mut out = String::from("replication,n,m,method,target,metric,value\n");
    for r in records {
        let m = r.m.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.replication,
            r.n,
            m,
            r.method,
            r.target,
            r.metric,
            format_float(r.value)
        ));
    }
    out
}

pub fn aggregates_to_csv(aggs: &[Aggregate]) -> String {
    let mut out = String::from("n,m,method,target,metric,mean,se,count\n");
    for a in aggs {
        let m = a.m.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            a.n,
            m,
            a.method,
            a.target,
            a.metric,
            format_float(a.mean),
            format_float(a.se),
            a.count
        ));
    }
    out
}

/// Writes results.csv, aggregates.csv, config_echo.json, failures.csv (when
/// any), and per-(metric, target) SVG plots into the output directory.
pub fn write_outputs(
    config: &ExperimentConfig,
    result: &SweepResult,
    out_dir: &Path,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut f = std::fs::File::create(out_dir.join("results.csv"))?;
    f.write_all(records_to_csv(&result.records).as_bytes())?;
    let aggs = aggregate(&result.records);
    let mut f = std::fs::File::create(out_dir.join("aggregates.csv"))?;
    f.write_all(aggregates_to_csv(&aggs).as_bytes())?;
    let echo = serde_json::to_string_pretty(config)?;
    std::fs::write(out_dir.join("config_echo.json"), echo)?;
    if !result.failures.is_empty() {
        let mut text = String::from("replication,n,error\n");
        for fail in &result.failures {
            text.push_str(&format!(
                "{},{},{}\n",
                fail.replication,
                fail.n,
                fail.error.replace(['\n', ','], ";")
            ));
        }
        std::fs::write(out_dir.join("failures.csv"), text)?;
    }
    plot::write_plots(&aggs, out_dir)?;
    Ok(())
}
