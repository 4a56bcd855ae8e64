//! Subcommand implementations. Each returns printable output so the binary
//! stays a thin dispatch layer and integration tests can call these
//! directly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use hglmm_core::ebayes;
use hglmm_core::family::Family;
use hglmm_core::hierarchy::NodeId;
use hglmm_core::leaf_fit::LeafBlock;
use hglmm_core::moment_fit::{fit_with, FitOptions};
use hglmm_core::predict::{
    bucketed_error_table, fit_global_baseline, fit_local_baseline, misclassification,
    prediction_loss, Misclassification,
};
use hglmm_core::simulate::{evaluate_against_truth, generate, SimConfig};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::archive::{self, ModelArchive};
use crate::features::FeatureState;
use crate::ingest::{blocks_from_rows, featurize, response_value, Dataset, RowFeatures};
use crate::search::{best_per_grouping, grid_search};

use crate::spec::ModelSpec;
use crate::split::split_rows;
use crate::{CliError, Result};

/// Per-chunk evaluation line of the fit command.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ChunkMetrics {
    pub chunk: String,
    pub n: usize,
    pub misclassification: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub mean_squared_error: Option<f64>,
}

fn chunk_metrics(
    name: &str,
    archive: &ModelArchive,
    rows: &[RowFeatures],
    family: Family,
) -> Result<ChunkMetrics> {
    let mut probs = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    let mut sq = 0.0;
    for row in rows {
        let label_refs: Vec<&str> = row.labels.iter().map(String::as_str).collect();
        let eta = archive.eta(&row.fixed, &row.per_level, &label_refs);
        match family {
            Family::Logistic => {
                probs.push(hglmm_core::family::logistic(eta));
                labels.push(row.y);
            }
            Family::Gaussian => {
                sq += (eta - row.y) * (eta - row.y);
            }
        }
    }
    Ok(match family {
        Family::Logistic => {
            let m = misclassification(&probs, &labels, 0.5).map_err(CliError::Core)?;
            ChunkMetrics {
                chunk: name.into(),
                n: rows.len(),
                misclassification: Some(m.rate),
                ci_low: Some(m.ci_low),
                ci_high: Some(m.ci_high),
                mean_squared_error: None,
            }
        }
        Family::Gaussian => ChunkMetrics {
            chunk: name.into(),
            n: rows.len(),
            misclassification: None,
            ci_low: None,
            ci_high: None,
            mean_squared_error: Some(sq / rows.len().max(1) as f64),
        },
    })
}

fn print_warnings(out: &mut String, warnings: &[String]) {
    if warnings.is_empty() {
        return;
    }
    let _ = writeln!(out, "warnings: {}", warnings.len());
    for w in warnings.iter().take(5) {
        let _ = writeln!(out, "  {w}");
    }
    if warnings.len() > 5 {
        let _ = writeln!(out, "  ... {} more", warnings.len() - 5);
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_fit(
    data_path: &Path,
    spec_path: &Path,
    out_path: &Path,
    ratios: (f64, f64, f64),
    seed: u64,
    jobs: usize,
    threshold_override: Option<f64>,
    baseline_level: Option<&str>,
    report_json: Option<&Path>,
) -> Result<String> {
    let mut spec = ModelSpec::parse_file(spec_path)?;
    if let Some(t) = threshold_override {
        spec.threshold = Some(t);
    }
    let family = spec.family()?;
    let data = Dataset::load(data_path)?;
    if data.n_rows == 0 {
        return Err(CliError::Data("dataset has no rows".into()));
    }
    let (train_rows, dev_rows, test_rows) = split_rows(data.n_rows, ratios, seed)?;
    if train_rows.is_empty() {
        return Err(CliError::Data("training split is empty".into()));
    }

    let train_y: Vec<f64> = train_rows
        .iter()
        .map(|&r| response_value(&spec, &data, r))
        .collect::<Result<_>>()?;
    let state = FeatureState::fit(&spec, &data, &train_rows, &train_y)?;
    let featurized = featurize(&spec, &data, &train_rows, &state)?;
    let (blocks, build) = blocks_from_rows(&featurized.rows, spec.strict_nesting)?;

    let started = Instant::now();
    let options = FitOptions {
        scheme: spec.scheme()?,
        jobs,
        ..FitOptions::default()
    };
    let mut model = fit_with(&blocks, &build.spec, family, &options).map_err(CliError::Core)?;
    let refined = ebayes::refine(&model).map_err(CliError::Core)?;
    model.refined = Some(refined.clone());
    let fit_seconds = started.elapsed().as_secs_f64();

    let archive = archive::to_archive(
        &model,
        &refined,
        &spec,
        &state,
        &build.labels,
        seed,
        fit_seconds,
    );
    archive::save(out_path, &archive)?;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "fit: family={} scheme={} rows={} leaves={} levels={} seconds={:.3}",
        family.name(),
        spec.scheme,
        train_rows.len(),
        blocks.len(),
        build.spec.depth,
        fit_seconds
    );
    let mut chunks = Vec::new();
    for (name, rows_idx) in [
        ("train", &train_rows),
        ("dev", &dev_rows),
        ("test", &test_rows),
    ] {
        if rows_idx.is_empty() {
            continue;
        }
        let rows = featurize(&spec, &data, rows_idx, &state)?.rows;
        let metrics = chunk_metrics(name, &archive, &rows, family)?;
        match family {
            Family::Logistic => {
                let _ = writeln!(
                    out,
                    "{}: n={} misclassification={:.4} ci=[{:.4}, {:.4}]",
                    name,
                    metrics.n,
                    metrics.misclassification.unwrap(),
                    metrics.ci_low.unwrap(),
                    metrics.ci_high.unwrap()
                );
            }
            Family::Gaussian => {
                let _ = writeln!(
                    out,
                    "{}: n={} mse={:.6}",
                    name,
                    metrics.n,
                    metrics.mean_squared_error.unwrap()
                );
            }
        }
        chunks.push(metrics);
    }

    if let Some(level_col) = baseline_level {
        let table = baseline_bucket_table(
            &spec,
            &data,
            &state,
            &train_rows,
            &test_rows,
            level_col,
            family,
        )?;
        out.push_str(&table);
    }

    print_warnings(&mut out, &model.warnings);
    let _ = writeln!(out, "saved model to {}", out_path.display());

    if let Some(json_path) = report_json {
        let report = serde_json::json!({
            "family": family.name(),
            "fit_seconds": fit_seconds,
            "chunks": chunks,
            "warnings": model.warnings.len(),
        });
        std::fs::write(json_path, serde_json::to_vec_pretty(&report).expect("json"))?;
    }
    Ok(out)
}

/// Local-versus-global comparison on the test chunk, bucketed by the number
/// of training observations in each test row's group.
#[allow(clippy::too_many_arguments)]
fn baseline_bucket_table(
    spec: &ModelSpec,
    data: &Dataset,
    state: &FeatureState,
    train_rows: &[usize],
    test_rows: &[usize],
    level_col: &str,
    family: Family,
) -> Result<String> {
    if family != Family::Logistic {
        return Err(CliError::Usage(
            "the local-vs-global error table is defined for the logistic family".into(),
        ));
    }
    if test_rows.is_empty() {
        return Err(CliError::Usage(
            "baseline table needs a nonempty test split".into(),
        ));
    }
    let groups_col = data.string_column(level_col)?;
    let train = featurize(spec, data, train_rows, state)?.rows;
    let test = featurize(spec, data, test_rows, state)?.rows;

    // global fit on the fixed covariates
    let q0 = train[0].fixed.len();
    let x_all = DMatrix::from_fn(train.len(), q0, |r, c| train[r].fixed[c]);
    let y_all = DVector::from_fn(train.len(), |r, _| train[r].y);
    let beta_global = fit_global_baseline(&x_all, &y_all, family).map_err(CliError::Core)?;

    // local fits per group at the chosen column
    let mut rows_of_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (k, &row) in train_rows.iter().enumerate() {
        rows_of_group
            .entry(groups_col[row].as_str())
            .or_default()
            .push(k);
    }
    let group_names: Vec<&str> = rows_of_group.keys().cloned().collect();
    let group_blocks: Vec<(DMatrix<f64>, DVector<f64>)> = group_names
        .iter()
        .map(|g| {
            let idxs = &rows_of_group[g];
            (
                DMatrix::from_fn(idxs.len(), q0, |r, c| train[idxs[r]].fixed[c]),
                DVector::from_fn(idxs.len(), |r, _| train[idxs[r]].y),
            )
        })
        .collect();
    let locals = fit_local_baseline(&group_blocks, family).map_err(CliError::Core)?;
    let local_of: BTreeMap<&str, &DVector<f64>> =
        group_names.iter().cloned().zip(locals.iter()).collect();
    let train_count_of: BTreeMap<&str, usize> = group_names
        .iter()
        .map(|g| (*g, rows_of_group[g].len()))
        .collect();

    let mut obs = Vec::new();
    for (k, &row) in test_rows.iter().enumerate() {
        let g = groups_col[row].as_str();
        let Some(local_beta) = local_of.get(g) else {
            continue; // group unseen in training
        };
        let size = train_count_of[g];
        let x = DVector::from_row_slice(&test[k].fixed);
        let y = test[k].y;
        let wrong = |beta: &DVector<f64>| -> bool {
            (hglmm_core::family::logistic(x.dot(beta)) >= 0.5) != (y == 1.0)
        };
        obs.push((size, wrong(local_beta), wrong(&beta_global)));
    }

    let table = bucketed_error_table(&obs);
    let mut out = String::new();
    let _ = writeln!(out, "local vs global by {level_col} training count:");
    let _ = writeln!(
        out,
        "{:>12} {:>6} {:>12} {:>12} {:>8}",
        "bucket", "n", "local%", "global%", "diff%"
    );
    for row in &table {
        let _ = writeln!(
            out,
            "{:>12} {:>6} {:>6.2} ({:.2}) {:>6.2} ({:.2}) {:>8.2}",
            format!("({},{}]", row.bucket.0, row.bucket.1),
            row.n,
            row.local_error * 100.0,
            row.local_se * 100.0,
            row.global_error * 100.0,
            row.global_se * 100.0,
            (row.local_error - row.global_error) * 100.0
        );
    }
    Ok(out)
}

pub fn cmd_predict(model_path: &Path, data_path: &Path, out_path: &Path) -> Result<String> {
    let archive = archive::load(model_path)?;
    let family = archive.family()?;
    let spec = archive.header.model_spec.clone();
    let data = Dataset::load(data_path)?;
    let rows_idx: Vec<usize> = (0..data.n_rows).collect();
    let rows = featurize(&spec, &data, &rows_idx, &archive.header.feature_state)?.rows;

    let mut out = String::from("row,eta,mu");
    if family == Family::Logistic {
        out.push_str(",class");
    }
    out.push('\n');
    for (k, row) in rows.iter().enumerate() {
        let label_refs: Vec<&str> = row.labels.iter().map(String::as_str).collect();
        let eta = archive.eta(&row.fixed, &row.per_level, &label_refs);
        let mu = family.mean(eta);
        match family {
            Family::Logistic => {
                let class = if mu >= 0.5 { 1 } else { 0 };
                let _ = writeln!(out, "{},{},{},{}", k + 1, eta, mu, class);
            }
            Family::Gaussian => {
                let _ = writeln!(out, "{},{},{}", k + 1, eta, mu);
            }
        }
    }
    std::fs::write(out_path, &out)?;
    Ok(format!(
        "scored {} rows -> {}\n",
        rows.len(),
        out_path.display()
    ))
}

pub fn cmd_evaluate(model_path: &Path, data_path: &Path) -> Result<String> {
    let archive = archive::load(model_path)?;
    let family = archive.family()?;
    let spec = archive.header.model_spec.clone();
    let data = Dataset::load(data_path)?;
    let rows_idx: Vec<usize> = (0..data.n_rows).collect();
    let started = Instant::now();
    let rows = featurize(&spec, &data, &rows_idx, &archive.header.feature_state)?.rows;
    let metrics = chunk_metrics("eval", &archive, &rows, family)?;
    let seconds = started.elapsed().as_secs_f64();
    let mut out = String::new();
    match family {
        Family::Logistic => {
            let _ = writeln!(
                out,
                "n={} misclassification={:.4} ci=[{:.4}, {:.4}] seconds={:.3}",
                metrics.n,
                metrics.misclassification.unwrap(),
                metrics.ci_low.unwrap(),
                metrics.ci_high.unwrap(),
                seconds
            );
        }
        Family::Gaussian => {
            let _ = writeln!(
                out,
                "n={} mse={:.6} seconds={:.3}",
                metrics.n,
                metrics.mean_squared_error.unwrap(),
                seconds
            );
        }
    }
    Ok(out)
}

/// One row of the simulation benchmark output.
#[derive(Debug, Clone)]
pub struct SimRow {
    pub family: String,
    pub n: usize,
    pub replicate: u64,
    pub method: String,
    pub seconds: f64,
    pub fixed_loss: Option<f64>,
    pub cov_loss: Vec<f64>,
    pub ranef_loss: Vec<f64>,
    pub pred_loss: Option<f64>,
    pub misclassification: Option<Misclassification>,
    /// Generated leaves that received no samples (hierarchical rows only).
    pub empty_leaves: Option<usize>,
}

impl SimRow {
    pub fn csv_header() -> &'static str {
        "family,n,replicate,method,seconds,fixed_loss,cov_loss_1,cov_loss_2,ranef_loss_1,ranef_loss_2,pred_loss,misclass,misclass_lo,misclass_hi,empty_leaves"
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let lvl = |v: &Vec<f64>, k: usize| v.get(k).map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.family,
            self.n,
            self.replicate,
            self.method,
            self.seconds,
            opt(self.fixed_loss),
            lvl(&self.cov_loss, 0),
            lvl(&self.cov_loss, 1),
            lvl(&self.ranef_loss, 0),
            lvl(&self.ranef_loss, 1),
            opt(self.pred_loss),
            opt(self.misclassification.map(|m| m.rate)),
            opt(self.misclassification.map(|m| m.ci_low)),
            opt(self.misclassification.map(|m| m.ci_high)),
            self.empty_leaves.map(|v| v.to_string()).unwrap_or_default(),
        )
    }
}

/// Run one simulation replicate: generate, fit, refine, score, and
/// optionally score the global and local baselines on the same draw.
pub fn simulate_replicate(
    cfg: &SimConfig,
    scheme: hglmm_core::WeightScheme,
    baselines: bool,
) -> Result<Vec<SimRow>> {
    let dataset = generate(cfg).map_err(CliError::Core)?;
    let mut rows = Vec::new();

    let started = Instant::now();
    let options = FitOptions {
        scheme,
        ..FitOptions::default()
    };
    let model = fit_with(&dataset.blocks, &dataset.build.spec, cfg.family, &options)
        .map_err(CliError::Core)?;
    let refined = ebayes::refine(&model).map_err(CliError::Core)?;
    let seconds = started.elapsed().as_secs_f64();
    let mut report = evaluate_against_truth(&dataset, &model, &refined).map_err(CliError::Core)?;
    report.wall_clock_seconds = seconds;
    rows.push(SimRow {
        family: cfg.family.name().into(),
        n: cfg.n,
        replicate: cfg.replicate,
        method: "hierarchical".into(),
        seconds,
        fixed_loss: report.fixed_effect_loss,
        cov_loss: report.covariance_loss.clone(),
        ranef_loss: report.random_effect_loss.clone(),
        pred_loss: report.prediction_loss,
        misclassification: report.misclassification,
        empty_leaves: Some(dataset.empty_leaves),
    });

    if baselines {
        rows.push(baseline_row(cfg, &dataset, true)?);
        rows.push(baseline_row(cfg, &dataset, false)?);
    }
    Ok(rows)
}

/// Global (pooled) or local (per-leaf) baseline on a simulated draw, scored
/// by prediction loss against the true means.
fn baseline_row(
    cfg: &SimConfig,
    dataset: &hglmm_core::simulate::SimDataset,
    global: bool,
) -> Result<SimRow> {
    let q0 = cfg.q0;
    let q_shared = cfg.q1.max(cfg.q2);
    let width = q0 + q_shared;
    // unique covariate columns: fixed block plus the shared predictors,
    // which live in the level-1 block up to q1 and in the level-2 block past
    // it
    let unique = |block: &LeafBlock| -> DMatrix<f64> {
        DMatrix::from_fn(block.n(), width, |r, c| {
            if c < q0 + cfg.q1 {
                block.x[(r, c)]
            } else {
                block.x[(r, cfg.q1 + c)]
            }
        })
    };

    let started = Instant::now();
    let mut est_mu = Vec::new();
    let mut true_mu = Vec::new();
    let mut labels = Vec::new();
    if global {
        let total: usize = dataset.blocks.iter().map(|b| b.n()).sum();
        let mut x = DMatrix::<f64>::zeros(total, width);
        let mut y = DVector::<f64>::zeros(total);
        let mut at = 0;
        for block in &dataset.blocks {
            x.rows_mut(at, block.n()).copy_from(&unique(block));
            y.rows_mut(at, block.n()).copy_from(&block.y);
            at += block.n();
        }
        let beta = fit_global_baseline(&x, &y, cfg.family).map_err(CliError::Core)?;
        for (block, mu_block) in dataset.blocks.iter().zip(&dataset.mu) {
            let xb = unique(block) * &beta;
            for r in 0..block.n() {
                est_mu.push(cfg.family.mean(xb[r]));
                true_mu.push(mu_block[r]);
                labels.push(block.y[r]);
            }
        }
    } else {
        let blocks: Vec<(DMatrix<f64>, DVector<f64>)> = dataset
            .blocks
            .iter()
            .map(|b| (unique(b), b.y.clone()))
            .collect();
        let betas = fit_local_baseline(&blocks, cfg.family).map_err(CliError::Core)?;
        for ((block, mu_block), beta) in dataset.blocks.iter().zip(&dataset.mu).zip(&betas) {
            let xb = unique(block) * beta;
            for r in 0..block.n() {
                est_mu.push(cfg.family.mean(xb[r]));
                true_mu.push(mu_block[r]);
                labels.push(block.y[r]);
            }
        }
    }
    let seconds = started.elapsed().as_secs_f64();
    let (pred, _) = prediction_loss(&true_mu, &est_mu, cfg.family, cfg.phi.max(1e-300))
        .map_err(CliError::Core)?;
    let miscls = match cfg.family {
        Family::Logistic => Some(misclassification(&est_mu, &labels, 0.5).map_err(CliError::Core)?),
        Family::Gaussian => None,
    };
    Ok(SimRow {
        family: cfg.family.name().into(),
        n: cfg.n,
        replicate: cfg.replicate,
        method: if global { "global" } else { "local" }.into(),
        seconds,
        fixed_loss: None,
        cov_loss: Vec::new(),
        ranef_loss: Vec::new(),
        pred_loss: Some(pred),
        misclassification: miscls,
        empty_leaves: None,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    if values.is_empty() {
        f64::NAN
    } else {
        values[values.len() / 2]
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_simulate(
    family: Family,
    n_list: &[usize],
    replicates: u64,
    seed: u64,
    cfg_base: &SimConfig,
    scheme_name: &str,
    jobs: usize,
    baselines: bool,
    out_path: Option<&Path>,
    dump_path: Option<&Path>,
) -> Result<String> {
    let scheme = match scheme_name {
        "identity" => hglmm_core::WeightScheme::Identity,
        "semi_weighted" => hglmm_core::WeightScheme::semi_weighted(),
        other => return Err(CliError::Usage(format!("unknown weight scheme '{other}'"))),
    };

    if let Some(path) = dump_path {
        let mut cfg = cfg_base.clone();
        cfg.family = family;
        cfg.n = *n_list.first().unwrap_or(&cfg.n);
        cfg.seed = seed;
        let ds = generate(&cfg).map_err(CliError::Core)?;
        std::fs::write(path, crate::ingest::dump_simulated_csv(&ds))?;
    }

    let mut tasks = Vec::new();
    for &n in n_list {
        for rep in 0..replicates {
            let mut cfg = cfg_base.clone();
            cfg.family = family;
            cfg.n = n;
            cfg.seed = seed;
            cfg.replicate = rep;
            tasks.push(cfg);
        }
    }
    let run = |cfg: &SimConfig| simulate_replicate(cfg, scheme.clone(), baselines);
    let results: Vec<Result<Vec<SimRow>>> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::Usage(format!("worker pool: {e}")))?;
        pool.install(|| tasks.par_iter().map(run).collect())
    } else {
        tasks.iter().map(run).collect()
    };

    let mut all_rows = Vec::new();
    for r in results {
        all_rows.extend(r?);
    }

    if let Some(path) = out_path {
        let mut csv = String::from(SimRow::csv_header());
        csv.push('\n');
        for row in &all_rows {
            csv.push_str(&row.to_csv());
            csv.push('\n');
        }
        std::fs::write(path, csv)?;
    }

    // median-over-replicates summary per n, hierarchical method
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>9} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>9}",
        "n", "fixed", "cov1", "cov2", "ranef1", "ranef2", "pred", "seconds"
    );
    for &n in n_list {
        let of = |f: &dyn Fn(&SimRow) -> Option<f64>| -> f64 {
            let mut vals: Vec<f64> = all_rows
                .iter()
                .filter(|r| r.n == n && r.method == "hierarchical")
                .filter_map(f)
                .collect();
            median(&mut vals)
        };
        let _ = writeln!(
            out,
            "{:>9} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.6} {:>9.3}",
            n,
            of(&|r| r.fixed_loss),
            of(&|r| r.cov_loss.first().copied()),
            of(&|r| r.cov_loss.get(1).copied()),
            of(&|r| r.ranef_loss.first().copied()),
            of(&|r| r.ranef_loss.get(1).copied()),
            of(&|r| r.pred_loss),
            of(&|r| Some(r.seconds)),
        );
        if baselines {
            for method in ["global", "local"] {
                let mut preds: Vec<f64> = all_rows
                    .iter()
                    .filter(|r| r.n == n && r.method == method)
                    .filter_map(|r| r.pred_loss)
                    .collect();
                let mut secs: Vec<f64> = all_rows
                    .iter()
                    .filter(|r| r.n == n && r.method == method)
                    .map(|r| r.seconds)
                    .collect();
                let _ = writeln!(
                    out,
                    "{:>9} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10.6} {:>9.3}  [{method}]",
                    n,
                    "-",
                    "-",
                    "-",
                    "-",
                    "-",
                    median(&mut preds),
                    median(&mut secs),
                );
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_search(
    data_path: &Path,
    spec_path: &Path,
    levels: &[String],
    candidates: &[String],
    max_depth: usize,
    ratios: (f64, f64, f64),
    seed: u64,
    jobs: usize,
    out_path: Option<&Path>,
) -> Result<String> {
    let spec = ModelSpec::parse_file(spec_path)?;
    let data = Dataset::load(data_path)?;
    let (train_rows, dev_rows, _) = split_rows(data.n_rows, ratios, seed)?;
    let train_y: Vec<f64> = train_rows
        .iter()
        .map(|&r| response_value(&spec, &data, r))
        .collect::<Result<_>>()?;
    let state = FeatureState::fit(&spec, &data, &train_rows, &train_y)?;

    let outcomes = grid_search(
        &spec,
        &data,
        &state,
        levels,
        candidates,
        max_depth,
        &train_rows,
        &dev_rows,
        jobs,
    )?;

    if let Some(path) = out_path {
        let mut csv = String::from("rank,model,levels,ranef_params,dev_error,status\n");
        for (rank, o) in outcomes.iter().enumerate() {
            let (err, status) = match &o.dev_error {
                Ok(e) => (e.to_string(), "ok".to_string()),
                Err(msg) => (String::new(), format!("failed: {msg}")),
            };
            let _ = writeln!(
                csv,
                "{},\"{}\",{},{},{},\"{}\"",
                rank + 1,
                o.cell.describe(),
                o.cell.levels.len(),
                o.ranef_params,
                err,
                status
            );
        }
        std::fs::write(path, csv)?;
    }

    let mut out = String::new();
    let total = outcomes.len();
    let failures = outcomes.iter().filter(|o| o.dev_error.is_err()).count();
    let _ = writeln!(out, "searched {total} models ({failures} failed)");
    for depth in [1usize, 2] {
        let best = best_per_grouping(&outcomes, depth);
        if best.is_empty() {
            continue;
        }
        let _ = writeln!(out, "best {depth}-level model per grouping:");
        for o in best {
            let _ = writeln!(
                out,
                "  {:<55} dev_error={:.4}",
                o.cell.describe(),
                o.dev_error.as_ref().unwrap()
            );
        }
    }
    if let Some(best) = outcomes.iter().find(|o| o.dev_error.is_ok()) {
        let _ = writeln!(
            out,
            "selected: {} (dev_error={:.4})",
            best.cell.describe(),
            best.dev_error.as_ref().unwrap()
        );
    }
    Ok(out)
}

pub fn cmd_report(model_path: &Path, level: usize, feature: &str, top: usize) -> Result<String> {
    let archive = archive::load(model_path)?;
    if level < 1 || level > archive.header.depth {
        return Err(CliError::Usage(format!(
            "level {level} outside 1..={}",
            archive.header.depth
        )));
    }
    let spec = &archive.header.model_spec;
    let tokens = &spec.levels[level - 1].1;
    let names = spec.expanded_names(tokens);
    let covariate = match feature.parse::<usize>() {
        Ok(idx) => idx,
        Err(_) => names.iter().position(|n| n == feature).ok_or_else(|| {
            CliError::Usage(format!(
                "feature '{feature}' not found at level {level}; available: {}",
                names.join(", ")
            ))
        })?,
    };
    if covariate >= archive.header.feature_dims[level] {
        return Err(CliError::Usage(format!(
            "covariate index {covariate} outside the level's {} features",
            archive.header.feature_dims[level]
        )));
    }

    let mut rows: Vec<(NodeId, String, usize, f64, f64)> = archive
        .header
        .nodes
        .iter()
        .filter(|n| n.path.len() == level)
        .map(|n| {
            let node = NodeId(n.path.clone());
            let effect = archive.u_hat[&node][covariate];
            let sd = archive.posterior_cov[&node][(covariate, covariate)]
                .max(0.0)
                .sqrt();
            (
                node,
                n.label.clone().unwrap_or_default(),
                n.count,
                effect,
                sd,
            )
        })
        .collect();
    rows.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    rows.truncate(top);

    let mut out = String::new();
    let _ = writeln!(
        out,
        "level {level} effects for '{}' (top {} by observation count):",
        names
            .get(covariate)
            .cloned()
            .unwrap_or_else(|| covariate.to_string()),
        rows.len()
    );
    let _ = writeln!(
        out,
        "{:>10} {:<24} {:>8} {:>12} {:>12}",
        "node", "label", "count", "effect", "posterior_sd"
    );
    for (node, label, count, effect, sd) in &rows {
        let _ = writeln!(
            out,
            "{:>10} {:<24} {:>8} {:>12.5} {:>12.5}",
            node.to_string(),
            label,
            count,
            effect,
            sd
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sim_row_csv_shape() {
        let row = SimRow {
            family: "logistic".into(),
            n: 1000,
            replicate: 2,
            method: "hierarchical".into(),
            seconds: 0.5,
            fixed_loss: Some(0.1),
            cov_loss: vec![1.0, 2.0],
            ranef_loss: vec![3.0, 4.0],
            pred_loss: Some(0.01),
            misclassification: None,
            empty_leaves: Some(3),
        };
        let line = row.to_csv();
        assert_eq!(
            line.split(',').count(),
            SimRow::csv_header().split(',').count()
        );
        assert!(line.starts_with("logistic,1000,2,hierarchical,0.5,0.1,1,2,3,4,0.01"));
    }
}
