//! Model specification file: a line-based key = value format describing the
//! response, the families of predictors, and the grouping levels.
//!
//! ```text
//! # comments and blank lines are ignored
//! response = liked
//! family = logistic
//! scheme = semi_weighted
//! threshold = 8                    # optional response binarization
//! fixed = 1, age, geo, prev, dist
//! level = subgenre : 1, dist, age
//! level = author : 1, age, geo
//! feature age = age_bins(age_years)
//! feature geo = continent(location)
//! feature prev = positive_share(user_id)
//! feature dist = category_share(user_id, subgenre)
//! ```
//!
//! Tokens in `fixed` and `level` lists are the literal `1` (intercept), a
//! declared feature name (expanding to that feature's columns), or a numeric
//! CSV column.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use hglmm_core::Family;

use crate::{CliError, Result};

/// Engineered predictor kinds.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FeatureDef {
    /// Five indicator columns for the age ranges (0,26], (26,32], (32,38],
    /// (38,47], (47,101]; missing values leave all five at zero.
    AgeBins { column: String },
    /// Six indicator columns for the continents; unknown labels leave all
    /// six at zero.
    Continent { column: String },
    /// Smoothed log share of positive responses per user:
    /// `log((p+1)/(n+2))` over training rows.
    PositiveShare { user: String },
    /// Smoothed log share of a user's ratings falling in the row's category:
    /// `log((k+1)/(n+m))` over training rows, `m` = number of categories.
    CategoryShare { user: String, group: String },
}

impl FeatureDef {
    /// Expanded column names for a feature declared under `name`.
    pub fn column_names(&self, name: &str) -> Vec<String> {
        match self {
            FeatureDef::AgeBins { .. } => crate::features::AGE_BIN_LABELS
                .iter()
                .map(|b| format!("{name}_{b}"))
                .collect(),
            FeatureDef::Continent { .. } => crate::features::CONTINENTS
                .iter()
                .map(|c| format!("{name}_{}", c.replace(' ', "_").to_lowercase()))
                .collect(),
            FeatureDef::PositiveShare { .. } | FeatureDef::CategoryShare { .. } => {
                vec![name.to_string()]
            }
        }
    }
}

/// Parsed model specification.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ModelSpec {
    pub response: String,
    pub family_name: String,
    pub scheme: String,
    /// Binarization threshold; scores at or above it count as positive.
    pub threshold: Option<f64>,
    pub fixed: Vec<String>,
    /// `(grouping column, feature tokens)` outermost level first.
    pub levels: Vec<(String, Vec<String>)>,
    pub features: BTreeMap<String, FeatureDef>,
    #[serde(default)]
    pub strict_nesting: bool,
}

impl ModelSpec {
    pub fn family(&self) -> Result<Family> {
        self.family_name.parse::<Family>().map_err(CliError::Core)
    }

    pub fn scheme(&self) -> Result<hglmm_core::WeightScheme> {
        match self.scheme.as_str() {
            "identity" => Ok(hglmm_core::WeightScheme::Identity),
            "semi_weighted" | "" => Ok(hglmm_core::WeightScheme::semi_weighted()),
            other => Err(CliError::Usage(format!("unknown weight scheme '{other}'"))),
        }
    }

    /// Expanded column names of one token list.
    pub fn expanded_names(&self, tokens: &[String]) -> Vec<String> {
        let mut out = Vec::new();
        for token in tokens {
            if token == "1" {
                out.push("1".to_string());
            } else if let Some(def) = self.features.get(token) {
                out.extend(def.column_names(token));
            } else {
                out.push(token.clone());
            }
        }
        out
    }

    pub fn parse_file(path: &Path) -> Result<ModelSpec> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read spec {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<ModelSpec> {
        let mut response = None;
        let mut family_name = None;
        let mut scheme = "semi_weighted".to_string();
        let mut threshold = None;
        let mut fixed = Vec::new();
        let mut levels = Vec::new();
        let mut features = BTreeMap::new();
        let mut strict_nesting = false;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("spec line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "response" => response = Some(value.to_string()),
                "family" => family_name = Some(value.to_string()),
                "scheme" => scheme = value.to_string(),
                "threshold" => {
                    let t: f64 = value.parse().map_err(|_| {
                        CliError::Usage(format!(
                            "spec line {}: bad threshold '{value}'",
                            lineno + 1
                        ))
                    })?;
                    threshold = Some(t);
                }
                "strict_nesting" => strict_nesting = value == "true",
                "fixed" => fixed = split_tokens(value),
                "level" => {
                    let (group, feats) = value.split_once(':').ok_or_else(|| {
                        CliError::Usage(format!(
                            "spec line {}: level needs 'group : tokens'",
                            lineno + 1
                        ))
                    })?;
                    levels.push((group.trim().to_string(), split_tokens(feats)));
                }
                other if other.starts_with("feature ") => {
                    let name = other.trim_start_matches("feature ").trim().to_string();
                    features.insert(name, parse_feature(value, lineno + 1)?);
                }
                other => {
                    return Err(CliError::Usage(format!(
                        "spec line {}: unknown key '{other}'",
                        lineno + 1
                    )))
                }
            }
        }

        let spec = ModelSpec {
            response: response
                .ok_or_else(|| CliError::Usage("spec is missing 'response'".into()))?,
            family_name: family_name
                .ok_or_else(|| CliError::Usage("spec is missing 'family'".into()))?,
            scheme,
            threshold,
            fixed,
            levels,
            features,
            strict_nesting,
        };
        if spec.fixed.is_empty() {
            return Err(CliError::Usage(
                "spec declares no fixed-effect tokens".into(),
            ));
        }
        if spec.levels.is_empty() {
            return Err(CliError::Usage("spec declares no grouping levels".into()));
        }
        spec.family()?;
        spec.scheme()?;
        Ok(spec)
    }

    /// Render back to the spec file syntax.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "response = {}", self.response);
        let _ = writeln!(out, "family = {}", self.family_name);
        let _ = writeln!(out, "scheme = {}", self.scheme);
        if let Some(t) = self.threshold {
            let _ = writeln!(out, "threshold = {t}");
        }
        if self.strict_nesting {
            let _ = writeln!(out, "strict_nesting = true");
        }
        let _ = writeln!(out, "fixed = {}", self.fixed.join(", "));
        for (group, feats) in &self.levels {
            let _ = writeln!(out, "level = {} : {}", group, feats.join(", "));
        }
        for (name, def) in &self.features {
            let rendered = match def {
                FeatureDef::AgeBins { column } => format!("age_bins({column})"),
                FeatureDef::Continent { column } => format!("continent({column})"),
                FeatureDef::PositiveShare { user } => format!("positive_share({user})"),
                FeatureDef::CategoryShare { user, group } => {
                    format!("category_share({user}, {group})")
                }
            };
            let _ = writeln!(out, "feature {name} = {rendered}");
        }
        out
    }
}

fn split_tokens(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

fn parse_feature(value: &str, lineno: usize) -> Result<FeatureDef> {
    let open = value.find('(');
    let close = value.rfind(')');
    let (kind, args) = match (open, close) {
        (Some(o), Some(c)) if c > o => (value[..o].trim(), split_tokens(&value[o + 1..c])),
        _ => {
            return Err(CliError::Usage(format!(
                "spec line {lineno}: feature needs the form kind(args)"
            )))
        }
    };
    let arity = |n: usize| -> Result<()> {
        if args.len() != n {
            Err(CliError::Usage(format!(
                "spec line {lineno}: {kind} takes {n} argument(s), got {}",
                args.len()
            )))
        } else {
            Ok(())
        }
    };
    match kind {
        "age_bins" => {
            arity(1)?;
            Ok(FeatureDef::AgeBins {
                column: args[0].clone(),
            })
        }
        "continent" => {
            arity(1)?;
            Ok(FeatureDef::Continent {
                column: args[0].clone(),
            })
        }
        "positive_share" => {
            arity(1)?;
            Ok(FeatureDef::PositiveShare {
                user: args[0].clone(),
            })
        }
        "category_share" => {
            arity(2)?;
            Ok(FeatureDef::CategoryShare {
                user: args[0].clone(),
                group: args[1].clone(),
            })
        }
        other => Err(CliError::Usage(format!(
            "spec line {lineno}: unknown feature kind '{other}'"
        ))),
    }
}
