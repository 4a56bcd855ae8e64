//! Engineered predictor construction. Statistics are learned from training
//! rows only and carried in a `FeatureState` so held-out data and archived
//! models score new rows with the same values.

use std::collections::{BTreeMap, BTreeSet};

use crate::ingest::Dataset;
use crate::spec::{FeatureDef, ModelSpec};
use crate::{CliError, Result};

/// Age bin upper bounds; bins are (0,26], (26,32], (32,38], (38,47], (47,101].
pub const AGE_BIN_EDGES: [(f64, f64); 5] = [
    (0.0, 26.0),
    (26.0, 32.0),
    (32.0, 38.0),
    (38.0, 47.0),
    (47.0, 101.0),
];

pub const AGE_BIN_LABELS: [&str; 5] = ["0_26", "26_32", "32_38", "38_47", "47_101"];

pub const CONTINENTS: [&str; 6] = [
    "Africa",
    "Asia",
    "Europe",
    "North America",
    "Oceania",
    "South America",
];

/// Learned statistics of one engineered feature.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub enum FeatureStat {
    AgeBins,
    Continent,
    PositiveShare {
        /// user -> (positive count, total count) over training rows
        user_stats: BTreeMap<String, (u64, u64)>,
    },
    CategoryShare {
        /// user -> total training rows
        user_totals: BTreeMap<String, u64>,
        /// "user\u{1f}category" -> training rows of that user in the category
        user_group_counts: BTreeMap<String, u64>,
        /// distinct categories in training
        groups: BTreeSet<String>,
    },
}

/// All learned feature statistics, keyed by feature name.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct FeatureState {
    pub stats: BTreeMap<String, FeatureStat>,
}

fn pair_key(user: &str, group: &str) -> String {
    format!("{user}\u{1f}{group}")
}

fn is_missing(raw: &str) -> bool {
    let t = raw.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("null")
}

impl FeatureState {
    /// Learn every declared feature's statistics from the given training
    /// rows. The binarized response drives the positive-share counts.
    pub fn fit(
        spec: &ModelSpec,
        data: &Dataset,
        train_rows: &[usize],
        binary_response: &[f64],
    ) -> Result<FeatureState> {
        if train_rows.len() != binary_response.len() {
            return Err(CliError::Usage(
                "training rows and responses must align".into(),
            ));
        }
        let mut stats = BTreeMap::new();
        for (name, def) in &spec.features {
            let stat = match def {
                FeatureDef::AgeBins { .. } => FeatureStat::AgeBins,
                FeatureDef::Continent { .. } => FeatureStat::Continent,
                FeatureDef::PositiveShare { user } => {
                    let users = data.string_column(user)?;
                    let mut user_stats: BTreeMap<String, (u64, u64)> = BTreeMap::new();
                    for (&row, &y) in train_rows.iter().zip(binary_response) {
                        let entry = user_stats.entry(users[row].clone()).or_insert((0, 0));
                        entry.1 += 1;
                        if y == 1.0 {
                            entry.0 += 1;
                        }
                    }
                    FeatureStat::PositiveShare { user_stats }
                }
                FeatureDef::CategoryShare { user, group } => {
                    let users = data.string_column(user)?;
                    let cats = data.string_column(group)?;
                    let mut user_totals: BTreeMap<String, u64> = BTreeMap::new();
                    let mut user_group_counts: BTreeMap<String, u64> = BTreeMap::new();
                    let mut groups = BTreeSet::new();
                    for &row in train_rows {
                        *user_totals.entry(users[row].clone()).or_insert(0) += 1;
                        *user_group_counts
                            .entry(pair_key(&users[row], &cats[row]))
                            .or_insert(0) += 1;
                        groups.insert(cats[row].clone());
                    }
                    FeatureStat::CategoryShare {
                        user_totals,
                        user_group_counts,
                        groups,
                    }
                }
            };
            stats.insert(name.clone(), stat);
        }
        Ok(FeatureState { stats })
    }

    /// Materialize one feature's columns for one row. Returns the values and
    /// a warning when the raw value fell outside the known categories.
    pub fn row_values(
        &self,
        name: &str,
        def: &FeatureDef,
        data: &Dataset,
        row: usize,
    ) -> Result<(Vec<f64>, Option<String>)> {
        match def {
            FeatureDef::AgeBins { column } => {
                let raw = &data.string_column(column)?[row];
                let mut out = vec![0.0; 5];
                if is_missing(raw) {
                    return Ok((out, None));
                }
                let age: f64 = raw.trim().parse().map_err(|_| {
                    CliError::Data(format!(
                        "row {}: column '{column}' has non-numeric age '{raw}'",
                        row + 1
                    ))
                })?;
                let mut hit = false;
                for (k, &(lo, hi)) in AGE_BIN_EDGES.iter().enumerate() {
                    if age > lo && age <= hi {
                        out[k] = 1.0;
                        hit = true;
                        break;
                    }
                }
                let warn = if hit {
                    None
                } else {
                    Some(format!("row {}: age {age} outside every bin", row + 1))
                };
                Ok((out, warn))
            }
            FeatureDef::Continent { column } => {
                let raw = &data.string_column(column)?[row];
                let mut out = vec![0.0; 6];
                if is_missing(raw) {
                    return Ok((out, None));
                }
                let normalized = raw.trim().to_lowercase().replace('_', " ");
                match CONTINENTS
                    .iter()
                    .position(|c| c.to_lowercase() == normalized)
                {
                    Some(k) => {
                        out[k] = 1.0;
                        Ok((out, None))
                    }
                    None => Ok((
                        out,
                        Some(format!("row {}: unknown continent '{raw}'", row + 1)),
                    )),
                }
            }
            FeatureDef::PositiveShare { user } => {
                let stat = self.stats.get(name).ok_or_else(|| {
                    CliError::Usage(format!("feature '{name}' has no learned state"))
                })?;
                let FeatureStat::PositiveShare { user_stats } = stat else {
                    return Err(CliError::Usage(format!("feature '{name}' state mismatch")));
                };
                let u = &data.string_column(user)?[row];
                let (p, n) = user_stats.get(u).copied().unwrap_or((0, 0));
                Ok((vec![((p as f64 + 1.0) / (n as f64 + 2.0)).ln()], None))
            }
            FeatureDef::CategoryShare { user, group } => {
                let stat = self.stats.get(name).ok_or_else(|| {
                    CliError::Usage(format!("feature '{name}' has no learned state"))
                })?;
                let FeatureStat::CategoryShare {
                    user_totals,
                    user_group_counts,
                    groups,
                } = stat
                else {
                    return Err(CliError::Usage(format!("feature '{name}' state mismatch")));
                };
                let u = &data.string_column(user)?[row];
                let c = &data.string_column(group)?[row];
                let n = user_totals.get(u).copied().unwrap_or(0);
                let k = user_group_counts.get(&pair_key(u, c)).copied().unwrap_or(0);
                let m = groups.len().max(1);
                Ok((vec![((k as f64 + 1.0) / (n as f64 + m as f64)).ln()], None))
            }
        }
    }
}
