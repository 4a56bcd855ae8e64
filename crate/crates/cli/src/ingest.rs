//! CSV ingestion: raw column storage, featurization against a model spec,
//! and assembly of per-leaf blocks for fitting.

use std::collections::BTreeMap;
use std::path::Path;

use hglmm_core::hierarchy::{build_hierarchy, HierarchyBuild, NodeId};
use hglmm_core::leaf_fit::LeafBlock;
use nalgebra::{DMatrix, DVector};

use crate::features::FeatureState;
use crate::spec::ModelSpec;
use crate::{CliError, Result};

/// Raw CSV contents, column major, all cells kept as strings.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub headers: Vec<String>,
    columns: Vec<Vec<String>>,
    index: BTreeMap<String, usize>,
    pub n_rows: usize,
}

impl Dataset {
    pub fn load(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        Self::from_csv_str(&text)
    }

    pub fn from_csv_str(text: &str) -> Result<Dataset> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| CliError::Data(format!("csv header: {e}")))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut columns: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
        for (row_idx, record) in reader.records().enumerate() {
            let record =
                record.map_err(|e| CliError::Data(format!("csv row {}: {e}", row_idx + 1)))?;
            if record.len() != headers.len() {
                return Err(CliError::Data(format!(
                    "csv row {}: {} fields, expected {}",
                    row_idx + 1,
                    record.len(),
                    headers.len()
                )));
            }
            for (col, cell) in record.iter().enumerate() {
                columns[col].push(cell.to_string());
            }
        }
        let n_rows = columns.first().map(|c| c.len()).unwrap_or(0);
        let index = headers
            .iter()
            .enumerate()
            .map(|(k, h)| (h.clone(), k))
            .collect();
        Ok(Dataset {
            headers,
            columns,
            index,
            n_rows,
        })
    }

    pub fn string_column(&self, name: &str) -> Result<&Vec<String>> {
        let idx = self
            .index
            .get(name)
            .ok_or_else(|| CliError::Data(format!("column '{name}' not found")))?;
        Ok(&self.columns[*idx])
    }

    pub fn numeric_cell(&self, name: &str, row: usize) -> Result<f64> {
        let raw = &self.string_column(name)?[row];
        raw.trim().parse::<f64>().map_err(|_| {
            CliError::Data(format!(
                "row {}: column '{name}' has non-numeric value '{raw}'",
                row + 1
            ))
        })
    }
}

/// Fully featurized observation.
#[derive(Debug, Clone)]
pub struct RowFeatures {
    pub fixed: Vec<f64>,
    pub per_level: Vec<Vec<f64>>,
    pub labels: Vec<String>,
    pub y: f64,
}

pub struct Featurized {
    pub rows: Vec<RowFeatures>,
    pub warnings: Vec<String>,
}

/// Response value with the spec's binarization applied.
pub fn response_value(spec: &ModelSpec, data: &Dataset, row: usize) -> Result<f64> {
    let score = data.numeric_cell(&spec.response, row)?;
    Ok(match spec.threshold {
        Some(t) => {
            if score >= t {
                1.0
            } else {
                0.0
            }
        }
        None => score,
    })
}

fn token_values(
    spec: &ModelSpec,
    state: &FeatureState,
    data: &Dataset,
    row: usize,
    token: &str,
    warnings: &mut Vec<String>,
) -> Result<Vec<f64>> {
    if token == "1" {
        return Ok(vec![1.0]);
    }
    if let Some(def) = spec.features.get(token) {
        let (vals, warn) = state.row_values(token, def, data, row)?;
        if let Some(w) = warn {
            warnings.push(w);
        }
        return Ok(vals);
    }
    Ok(vec![data.numeric_cell(token, row)?])
}

/// Featurize a subset of rows against learned feature state.
pub fn featurize(
    spec: &ModelSpec,
    data: &Dataset,
    rows: &[usize],
    state: &FeatureState,
) -> Result<Featurized> {
    let mut out = Vec::with_capacity(rows.len());
    let mut warnings = Vec::new();
    for &row in rows {
        if row >= data.n_rows {
            return Err(CliError::Usage(format!("row index {row} out of range")));
        }
        let mut fixed = Vec::new();
        for token in &spec.fixed {
            fixed.extend(token_values(spec, state, data, row, token, &mut warnings)?);
        }
        let mut per_level = Vec::with_capacity(spec.levels.len());
        let mut labels = Vec::with_capacity(spec.levels.len());
        for (group_col, tokens) in &spec.levels {
            labels.push(data.string_column(group_col)?[row].clone());
            let mut lvl = Vec::new();
            for token in tokens {
                lvl.extend(token_values(spec, state, data, row, token, &mut warnings)?);
            }
            per_level.push(lvl);
        }
        let y = response_value(spec, data, row)?;
        out.push(RowFeatures {
            fixed,
            per_level,
            labels,
            y,
        });
    }
    Ok(Featurized {
        rows: out,
        warnings,
    })
}

/// Assemble featurized rows into per-leaf blocks plus the hierarchy built
/// from their grouping labels.
pub fn blocks_from_rows(
    rows: &[RowFeatures],
    strict_nesting: bool,
) -> Result<(Vec<LeafBlock>, HierarchyBuild)> {
    if rows.is_empty() {
        return Err(CliError::Data("no rows to assemble".into()));
    }
    let q0 = rows[0].fixed.len();
    let level_dims: Vec<usize> = rows[0].per_level.iter().map(|v| v.len()).collect();
    let mut dims = vec![q0];
    dims.extend(&level_dims);
    let label_rows: Vec<Vec<String>> = rows.iter().map(|r| r.labels.clone()).collect();
    let build = build_hierarchy(&label_rows, &dims, strict_nesting)?;

    let p: usize = dims.iter().sum();
    let mut by_leaf: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
    for (idx, leaf) in build.leaf_of_row.iter().enumerate() {
        by_leaf.entry(leaf.clone()).or_default().push(idx);
    }
    let mut blocks = Vec::with_capacity(by_leaf.len());
    for (leaf, idxs) in by_leaf {
        let x = DMatrix::from_fn(idxs.len(), p, |r, c| {
            let row = &rows[idxs[r]];
            if c < q0 {
                row.fixed[c]
            } else {
                let mut offset = q0;
                for (l, &w) in level_dims.iter().enumerate() {
                    if c < offset + w {
                        return row.per_level[l][c - offset];
                    }
                    offset += w;
                }
                unreachable!("column {c} beyond feature width {p}")
            }
        });
        let y = DVector::from_fn(idxs.len(), |r, _| rows[idxs[r]].y);
        blocks.push(LeafBlock::new(leaf, x, y).map_err(CliError::Core)?);
    }
    Ok((blocks, build))
}

/// One-call ingestion of a whole CSV: learn feature statistics on all rows,
/// featurize, and assemble blocks.
pub fn ingest(path: &Path, spec: &ModelSpec) -> Result<(Vec<LeafBlock>, HierarchyBuild)> {
    let data = Dataset::load(path)?;
    ingest_dataset(&data, spec)
}

pub fn ingest_dataset(
    data: &Dataset,
    spec: &ModelSpec,
) -> Result<(Vec<LeafBlock>, HierarchyBuild)> {
    let all: Vec<usize> = (0..data.n_rows).collect();
    let y: Vec<f64> = all
        .iter()
        .map(|&r| response_value(spec, data, r))
        .collect::<Result<_>>()?;
    let state = FeatureState::fit(spec, data, &all, &y)?;
    let featurized = featurize(spec, data, &all, &state)?;
    blocks_from_rows(&featurized.rows, spec.strict_nesting)
}

/// Render a simulated dataset in the CSV schema the ingester reads: grouping
/// labels, fixed predictors, shared random-effect predictors, response.
pub fn dump_simulated_csv(ds: &hglmm_core::simulate::SimDataset) -> String {
    let q0 = ds.params.beta.len();
    let q1 = ds.params.sigma1.nrows();
    let q2 = ds.params.sigma2.nrows();
    let q_shared = q1.max(q2);
    let mut out = String::new();
    out.push_str("g1,g2");
    for k in 0..q0 {
        out.push_str(&format!(",x{}", k + 1));
    }
    for k in 0..q_shared {
        out.push_str(&format!(",z{}", k + 1));
    }
    out.push_str(",y\n");
    for block in &ds.blocks {
        let leaf = &block.leaf;
        let group = leaf.ancestor(1).expect("leaf depth 2");
        let g_label = &ds.build.labels[&group];
        let l_label = &ds.build.labels[leaf];
        for r in 0..block.n() {
            out.push_str(g_label);
            out.push(',');
            out.push_str(l_label);
            for c in 0..q0 {
                out.push_str(&format!(",{}", block.x[(r, c)]));
            }
            for k in 0..q_shared {
                // shared predictors live in whichever level block is wide
                // enough to hold them
                let v = if k < q1 {
                    block.x[(r, q0 + k)]
                } else {
                    block.x[(r, q0 + q1 + k)]
                };
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{}\n", block.y[r]));
        }
    }
    out
}

/// Model spec matching [`dump_simulated_csv`]'s schema.
pub fn simulated_spec(family: hglmm_core::Family, q0: usize, q1: usize, q2: usize) -> ModelSpec {
    let fixed: Vec<String> = (1..=q0).map(|k| format!("x{k}")).collect();
    let z1: Vec<String> = (1..=q1).map(|k| format!("z{k}")).collect();
    let z2: Vec<String> = (1..=q2).map(|k| format!("z{k}")).collect();
    ModelSpec {
        response: "y".into(),
        family_name: family.name().into(),
        scheme: "semi_weighted".into(),
        threshold: None,
        fixed,
        levels: vec![("g1".into(), z1), ("g2".into(), z2)],
        features: BTreeMap::new(),
        strict_nesting: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hglmm_core::Family;

    #[test]
    fn toy_csv_maps_rows_to_leaves() {
        let data =
            Dataset::from_csv_str("g,sub,x,y\nA,p,1.0,2.0\nA,q,0.5,1.0\nB,p,-1.0,0.0\n").unwrap();
        let spec = ModelSpec::parse(
            "response = y\nfamily = gaussian\nfixed = x\nlevel = g : 1\nlevel = sub : 1",
        )
        .unwrap();
        let (blocks, build) = ingest_dataset(&data, &spec).unwrap();
        assert_eq!(blocks.len(), 3);
        assert_eq!(build.spec.level_sets[1].len(), 2);
        assert_eq!(build.spec.level_sets[2].len(), 3);
        let total: usize = blocks.iter().map(|b| b.n()).sum();
        assert_eq!(total, 3);
        // X layout: [x | 1 | 1]
        assert_eq!(blocks[0].x.ncols(), 3);
        assert_eq!(blocks[0].x[(0, 1)], 1.0);
    }

    #[test]
    fn ragged_and_non_numeric_rows_error_with_row_number() {
        let ragged = Dataset::from_csv_str("a,b\n1,2\n3\n");
        match ragged {
            Err(CliError::Data(msg)) => assert!(msg.contains("row 2"), "{msg}"),
            other => panic!("expected data error, got {other:?}"),
        }
        let data = Dataset::from_csv_str("a,b\n1,x\n").unwrap();
        match data.numeric_cell("b", 0) {
            Err(CliError::Data(msg)) => assert!(msg.contains("row 1"), "{msg}"),
            other => panic!("expected data error, got {other:?}"),
        }
        assert!(matches!(
            data.numeric_cell("missing", 0),
            Err(CliError::Data(_))
        ));
    }

    #[test]
    fn simulate_dump_ingest_round_trip_is_bitwise() {
        let cfg = hglmm_core::simulate::SimConfig {
            n: 300,
            groups: 4,
            leaves: 12,
            q0: 2,
            q1: 2,
            q2: 2,
            family: Family::Gaussian,
            seed: 77,
            replicate: 0,
            t_dof: 4.0,
            wishart_dof: 10.0,
            wishart_scale: 0.1,
            pareto_scale: 1.0,
            pareto_shape: 1.0,
            phi: 1.0,
        };
        let ds = hglmm_core::simulate::generate(&cfg).unwrap();
        let csv = dump_simulated_csv(&ds);
        let data = Dataset::from_csv_str(&csv).unwrap();
        let spec = simulated_spec(Family::Gaussian, 2, 2, 2);
        let (blocks, build) = ingest_dataset(&data, &spec).unwrap();
        assert_eq!(blocks.len(), ds.blocks.len());
        for (a, b) in blocks.iter().zip(&ds.blocks) {
            assert_eq!(a.leaf, b.leaf);
            assert_eq!(a.x, b.x);
            assert_eq!(a.y, b.y);
        }
        assert_eq!(build.spec.level_sets, ds.build.spec.level_sets);
    }
}
