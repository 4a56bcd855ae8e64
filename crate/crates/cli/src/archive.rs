//! Single-file model container: a JSON header describing the model shape,
//! labels, and learned feature statistics, followed by a little-endian
//! IEEE-754 binary section holding every numeric array. Prediction always
//! goes through the in-memory [`ModelArchive`], so a saved and reloaded
//! model scores rows through exactly the same numbers.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use hglmm_core::ebayes::RefinedEstimates;
use hglmm_core::hierarchy::NodeId;
use hglmm_core::moment_fit::FittedModel;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::features::FeatureState;
use crate::spec::ModelSpec;
use crate::{CliError, Result};

const MAGIC: &[u8; 4] = b"HGLM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeRecord {
    pub path: Vec<u32>,
    /// Raw grouping label; absent for the root.
    pub label: Option<String>,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub format_version: u32,
    pub family: String,
    pub scheme: String,
    pub feature_dims: Vec<usize>,
    pub depth: usize,
    pub model_spec: ModelSpec,
    pub feature_state: FeatureState,
    /// Level-major, path-ordered node list; the root comes first.
    pub nodes: Vec<NodeRecord>,
    pub seed: u64,
    pub fit_seconds: f64,
}

/// In-memory form of a stored model: everything prediction needs.
#[derive(Debug, Clone)]
pub struct ModelArchive {
    pub header: ArchiveHeader,
    pub beta_bar: DVector<f64>,
    pub phi_bar: f64,
    pub sigma_bars: Vec<DMatrix<f64>>,
    pub u_hat: BTreeMap<NodeId, DVector<f64>>,
    pub posterior_cov: BTreeMap<NodeId, DMatrix<f64>>,
    /// (parent, label) -> child index, rebuilt from the node list.
    pub child_index: BTreeMap<(NodeId, String), u32>,
}

impl ModelArchive {
    pub fn family(&self) -> Result<hglmm_core::Family> {
        self.header.family.parse().map_err(CliError::Core)
    }

    /// Deepest node whose label path is known.
    pub fn resolve(&self, labels: &[&str]) -> NodeId {
        let mut node = NodeId::root();
        for &label in labels {
            match self.child_index.get(&(node.clone(), label.to_string())) {
                Some(&j) => node = node.child(j),
                None => break,
            }
        }
        node
    }

    /// Linear predictor for one featurized row.
    pub fn eta(&self, fixed: &[f64], per_level: &[Vec<f64>], labels: &[&str]) -> f64 {
        let node = self.resolve(labels);
        let mut eta = 0.0;
        for (k, v) in fixed.iter().enumerate() {
            eta += v * self.beta_bar[k];
        }
        for l in 1..=node.depth() {
            let anc = node.ancestor(l).expect("depth bounded");
            if let Some(u) = self.u_hat.get(&anc) {
                for (k, v) in per_level[l - 1].iter().enumerate() {
                    eta += v * u[k];
                }
            }
        }
        eta
    }

    pub fn node_count(&self, node: &NodeId) -> usize {
        self.header
            .nodes
            .iter()
            .find(|n| n.path == node.0)
            .map(|n| n.count)
            .unwrap_or(0)
    }
}

/// Build the in-memory archive from a fitted, refined model.
pub fn to_archive(
    model: &FittedModel,
    refined: &RefinedEstimates,
    model_spec: &ModelSpec,
    feature_state: &FeatureState,
    labels: &BTreeMap<NodeId, String>,
    seed: u64,
    fit_seconds: f64,
) -> ModelArchive {
    let spec = &model.spec;
    let mut nodes = Vec::new();
    for level in &spec.level_sets {
        for node in level {
            nodes.push(NodeRecord {
                path: node.0.clone(),
                label: labels.get(node).cloned(),
                count: model.count(node),
            });
        }
    }
    let mut u_hat = BTreeMap::new();
    let mut posterior_cov = BTreeMap::new();
    let mut child_index = BTreeMap::new();
    for record in &nodes {
        let node = NodeId(record.path.clone());
        if node.is_root() {
            continue;
        }
        if let (Some(parent), Some(label)) = (node.parent(), record.label.clone()) {
            child_index.insert((parent, label), *node.0.last().expect("non-root"));
        }
        let q = spec.feature_dims[node.depth()];
        u_hat.insert(
            node.clone(),
            refined
                .u_hat
                .get(&node)
                .cloned()
                .unwrap_or_else(|| DVector::zeros(q)),
        );
        posterior_cov.insert(
            node.clone(),
            refined
                .posterior_cov
                .get(&node)
                .cloned()
                .unwrap_or_else(|| DMatrix::zeros(q, q)),
        );
    }
    ModelArchive {
        header: ArchiveHeader {
            format_version: FORMAT_VERSION,
            family: model.family.name().to_string(),
            scheme: model_spec.scheme.clone(),
            feature_dims: spec.feature_dims.clone(),
            depth: spec.depth,
            model_spec: model_spec.clone(),
            feature_state: feature_state.clone(),
            nodes,
            seed,
            fit_seconds,
        },
        beta_bar: model.beta_bar.clone(),
        phi_bar: model.phi_bar,
        sigma_bars: model.sigma_bars.clone(),
        u_hat,
        posterior_cov,
        child_index,
    }
}

/// Serialize the archive. Numeric arrays go to the binary section in node
/// order: fixed effects, dispersion, level covariances, then each non-root
/// node's effect and posterior covariance.
pub fn save(path: &Path, archive: &ModelArchive) -> Result<()> {
    let header_bytes = serde_json::to_vec(&archive.header)
        .map_err(|e| CliError::Data(format!("archive header encode: {e}")))?;

    let mut numbers: Vec<f64> = Vec::new();
    numbers.extend(archive.beta_bar.iter());
    numbers.push(archive.phi_bar);
    for sigma in &archive.sigma_bars {
        numbers.extend(sigma.iter());
    }
    for record in &archive.header.nodes {
        let node = NodeId(record.path.clone());
        if node.is_root() {
            continue;
        }
        numbers.extend(archive.u_hat[&node].iter());
        numbers.extend(archive.posterior_cov[&node].iter());
    }

    let mut file = std::fs::File::create(path)?;
    file.write_all(MAGIC)?;
    file.write_all(&FORMAT_VERSION.to_le_bytes())?;
    file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    file.write_all(&header_bytes)?;
    for v in &numbers {
        file.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Load an archive, verifying the magic and format version.
pub fn load(path: &Path) -> Result<ModelArchive> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)
        .map_err(|e| CliError::Data(format!("archive too short: {e}")))?;
    if &magic != MAGIC {
        return Err(CliError::Data(format!(
            "{} is not a model archive",
            path.display()
        )));
    }
    let mut version_bytes = [0u8; 4];
    file.read_exact(&mut version_bytes)?;
    let version = u32::from_le_bytes(version_bytes);
    if version != FORMAT_VERSION {
        return Err(CliError::ArchiveVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)?;
    let header: ArchiveHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| CliError::Data(format!("archive header decode: {e}")))?;

    let mut rest = Vec::new();
    file.read_to_end(&mut rest)?;
    if rest.len() % 8 != 0 {
        return Err(CliError::Data("archive numeric section truncated".into()));
    }
    let numbers: Vec<f64> = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();

    let dims = header.feature_dims.clone();
    let q0 = dims[0];
    let mut cursor = 0usize;
    let mut take = |n: usize| -> Result<&[f64]> {
        if cursor + n > numbers.len() {
            return Err(CliError::Data("archive numeric section truncated".into()));
        }
        let s = &numbers[cursor..cursor + n];
        cursor += n;
        Ok(s)
    };

    let beta_bar = DVector::from_row_slice(take(q0)?);
    let phi_bar = take(1)?[0];
    let mut sigma_bars = Vec::with_capacity(header.depth);
    for &q in dims.iter().take(header.depth + 1).skip(1) {
        sigma_bars.push(DMatrix::from_column_slice(q, q, take(q * q)?));
    }
    let mut u_hat = BTreeMap::new();
    let mut posterior_cov = BTreeMap::new();
    let mut child_index = BTreeMap::new();
    for record in &header.nodes {
        let node = NodeId(record.path.clone());
        if node.is_root() {
            continue;
        }
        if let (Some(parent), Some(label)) = (node.parent(), record.label.clone()) {
            child_index.insert((parent, label), *node.0.last().expect("non-root"));
        }
        let q = dims[node.depth()];
        u_hat.insert(node.clone(), DVector::from_row_slice(take(q)?));
        posterior_cov.insert(node, DMatrix::from_column_slice(q, q, take(q * q)?));
    }
    if cursor != numbers.len() {
        return Err(CliError::Data(format!(
            "archive numeric section has {} trailing values",
            numbers.len() - cursor
        )));
    }

    Ok(ModelArchive {
        header,
        beta_bar,
        phi_bar,
        sigma_bars,
        u_hat,
        posterior_cov,
        child_index,
    })
}
