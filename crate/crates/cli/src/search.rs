//! Exhaustive model-selection search over grouping levels and random-effect
//! predictor subsets, ranked by held-out error.

use hglmm_core::family::Family;
use hglmm_core::moment_fit::{fit_with, FitOptions};
use rayon::prelude::*;

use crate::features::FeatureState;
use crate::ingest::{blocks_from_rows, featurize, Dataset};
use crate::spec::ModelSpec;
use crate::{CliError, Result};

/// One model cell of the search: grouping columns outermost first, and the
/// random-effect tokens per level. Every cell keeps the intercept in each
/// level's feature list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchCell {
    pub levels: Vec<(String, Vec<String>)>,
}

impl SearchCell {
    pub fn describe(&self) -> String {
        self.levels
            .iter()
            .map(|(g, feats)| format!("({} | {g})", feats.join("+")))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Enumerate every 1-level cell (each level times each predictor subset,
/// intercept always included) and every nested 2-level cell (ordered level
/// pairs times subset pairs). For `k` candidates over `L` levels this yields
/// `L * 2^k` one-level and `C(L,2) * 2^k * 2^k` two-level cells.
pub fn enumerate_cells(
    levels: &[String],
    candidates: &[String],
    max_depth: usize,
) -> Vec<SearchCell> {
    let subsets: Vec<Vec<String>> = (0..(1u64 << candidates.len()))
        .map(|mask| {
            let mut feats = vec!["1".to_string()];
            for (k, cand) in candidates.iter().enumerate() {
                if mask & (1 << k) != 0 {
                    feats.push(cand.clone());
                }
            }
            feats
        })
        .collect();

    let mut cells = Vec::new();
    for level in levels {
        for subset in &subsets {
            cells.push(SearchCell {
                levels: vec![(level.clone(), subset.clone())],
            });
        }
    }
    if max_depth >= 2 {
        for i in 0..levels.len() {
            for j in (i + 1)..levels.len() {
                for s1 in &subsets {
                    for s2 in &subsets {
                        cells.push(SearchCell {
                            levels: vec![
                                (levels[i].clone(), s1.clone()),
                                (levels[j].clone(), s2.clone()),
                            ],
                        });
                    }
                }
            }
        }
    }
    cells
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub cell: SearchCell,
    /// Development-set misclassification (logistic) or mean squared error
    /// (Gaussian); `Err` carries the failure message.
    pub dev_error: std::result::Result<f64, String>,
    /// Count of random-effect parameters, the first tie breaker.
    pub ranef_params: usize,
    /// Enumeration index, the final tie breaker.
    pub index: usize,
}

/// Fit one cell on the training rows and score it on the development rows.
fn score_cell(
    base: &ModelSpec,
    cell: &SearchCell,
    data: &Dataset,
    state: &FeatureState,
    train_rows: &[usize],
    dev_rows: &[usize],
) -> Result<f64> {
    let mut spec = base.clone();
    spec.levels = cell.levels.clone();
    let family = spec.family()?;

    let train = featurize(&spec, data, train_rows, state)?;
    let (blocks, build) = blocks_from_rows(&train.rows, spec.strict_nesting)?;
    let options = FitOptions {
        scheme: spec.scheme()?,
        ..FitOptions::default()
    };
    let model = fit_with(&blocks, &build.spec, family, &options)?;
    let refined = hglmm_core::ebayes::refine(&model)?;

    let dev = featurize(&spec, data, dev_rows, state)?;
    let mut err_count = 0usize;
    let mut sq_err = 0.0f64;
    for row in &dev.rows {
        let labels: Vec<&str> = row.labels.iter().map(String::as_str).collect();
        let node = build.resolve(&labels);
        let mut eta = 0.0;
        for (k, v) in row.fixed.iter().enumerate() {
            eta += v * model.beta_bar[k];
        }
        for l in 1..=node.depth() {
            let anc = node.ancestor(l).map_err(CliError::Core)?;
            if let Some(u) = refined.u_hat.get(&anc) {
                for (k, v) in row.per_level[l - 1].iter().enumerate() {
                    eta += v * u[k];
                }
            }
        }
        match family {
            Family::Logistic => {
                let p = hglmm_core::family::logistic(eta);
                if (p >= 0.5) != (row.y == 1.0) {
                    err_count += 1;
                }
            }
            Family::Gaussian => {
                sq_err += (eta - row.y) * (eta - row.y);
            }
        }
    }
    let n = dev.rows.len().max(1) as f64;
    Ok(match family {
        Family::Logistic => err_count as f64 / n,
        Family::Gaussian => sq_err / n,
    })
}

/// Run the full search. Individual cell failures are recorded and the search
/// continues. Results come back ranked: error ascending, then fewer
/// random-effect parameters, then enumeration order.
#[allow(clippy::too_many_arguments)]
pub fn grid_search(
    base: &ModelSpec,
    data: &Dataset,
    state: &FeatureState,
    levels: &[String],
    candidates: &[String],
    max_depth: usize,
    train_rows: &[usize],
    dev_rows: &[usize],
    jobs: usize,
) -> Result<Vec<SearchOutcome>> {
    if dev_rows.is_empty() {
        return Err(CliError::Usage("development set is empty".into()));
    }
    let cells = enumerate_cells(levels, candidates, max_depth);
    let run_one = |(index, cell): (usize, &SearchCell)| -> SearchOutcome {
        let dev_error =
            score_cell(base, cell, data, state, train_rows, dev_rows).map_err(|e| e.to_string());
        let ranef_params: usize = cell
            .levels
            .iter()
            .map(|(_, tokens)| base.expanded_names(tokens).len())
            .sum();
        SearchOutcome {
            cell: cell.clone(),
            dev_error,
            ranef_params,
            index,
        }
    };
    let mut outcomes: Vec<SearchOutcome> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::Usage(format!("worker pool: {e}")))?;
        pool.install(|| {
            cells
                .par_iter()
                .enumerate()
                .map(run_one)
                .collect::<Vec<_>>()
        })
    } else {
        cells.iter().enumerate().map(run_one).collect()
    };

    rank_outcomes(&mut outcomes);
    Ok(outcomes)
}

/// Rank search outcomes in place: dev error ascending, ties broken by fewer
/// random-effect parameters, then by enumeration order. Failed cells sink to
/// the bottom.
pub fn rank_outcomes(outcomes: &mut [SearchOutcome]) {
    outcomes.sort_by(|a, b| {
        let ka = a.dev_error.as_ref().ok();
        let kb = b.dev_error.as_ref().ok();
        match (ka, kb) {
            (Some(x), Some(y)) => x
                .partial_cmp(y)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.ranef_params.cmp(&b.ranef_params))
                .then(a.index.cmp(&b.index)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => a.index.cmp(&b.index),
        }
    });
}

/// Best outcome per grouping choice, preserving rank order: the shape of the
/// per-grouping summary tables.
pub fn best_per_grouping(outcomes: &[SearchOutcome], depth: usize) -> Vec<&SearchOutcome> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for outcome in outcomes {
        if outcome.cell.levels.len() != depth || outcome.dev_error.is_err() {
            continue;
        }
        let key: Vec<String> = outcome.cell.levels.iter().map(|(g, _)| g.clone()).collect();
        if seen.insert(key) {
            out.push(outcome);
        }
    }
    out
}
