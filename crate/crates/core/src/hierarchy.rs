//! The depth-`d` grouping tree: node labels, level sets, ancestor queries,
//! and construction from raw per-observation label tuples.
//!
//! Nodes are labeled by strings of 1-based child indices; the root carries
//! the empty string. All leaves sit at depth `d`, and the tree is data
//! driven: a node exists exactly when some observation passes through it.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Tree node label: the sequence of child indices on the path from the root.
/// The root is the empty path.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct NodeId(pub Vec<u32>);

impl NodeId {
    pub fn root() -> NodeId {
        NodeId(Vec::new())
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    /// Ancestor at depth `k`: the length-`k` prefix of the path. The depth-
    /// `|i|` ancestor of `i` is `i` itself.
    pub fn ancestor(&self, k: usize) -> Result<NodeId> {
        if k > self.depth() {
            return Err(Error::Usage(format!(
                "ancestor depth {k} exceeds node depth {}",
                self.depth()
            )));
        }
        Ok(NodeId(self.0[..k].to_vec()))
    }

    pub fn parent(&self) -> Option<NodeId> {
        if self.is_root() {
            None
        } else {
            Some(NodeId(self.0[..self.depth() - 1].to_vec()))
        }
    }

    pub fn child(&self, index: u32) -> NodeId {
        let mut path = self.0.clone();
        path.push(index);
        NodeId(path)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_root() {
            write!(f, "*")
        } else {
            let parts: Vec<String> = self.0.iter().map(|j| j.to_string()).collect();
            write!(f, "{}", parts.join("."))
        }
    }
}

/// Shape of the grouping tree together with the per-level feature dimensions.
#[derive(Debug, Clone)]
pub struct HierarchySpec {
    /// Depth of every leaf.
    pub depth: usize,
    /// Child count for every internal node (root included).
    pub children: BTreeMap<NodeId, u32>,
    /// Nodes at each depth, `level_sets[l]` sorted ascending; index 0 is the
    /// root alone.
    pub level_sets: Vec<Vec<NodeId>>,
    /// Feature dimensions q_0..q_d: fixed-effect width, then one random
    /// effect width per level.
    pub feature_dims: Vec<usize>,
}

impl HierarchySpec {
    /// Cumulative effect dimension p_l = q_0 + ... + q_l.
    pub fn cumulative_dim(&self, level: usize) -> usize {
        self.feature_dims[..=level].iter().sum()
    }

    pub fn leaf_dim(&self) -> usize {
        self.cumulative_dim(self.depth)
    }

    pub fn num_children(&self, node: &NodeId) -> u32 {
        self.children.get(node).copied().unwrap_or(0)
    }

    /// Check the structural invariants: leaf depths, level-set counts against
    /// child counts, positive dimensions.
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::Data("hierarchy depth must be at least 1".into()));
        }
        if self.feature_dims.len() != self.depth + 1 {
            return Err(Error::Data(format!(
                "expected {} feature dimensions, got {}",
                self.depth + 1,
                self.feature_dims.len()
            )));
        }
        if self.feature_dims.contains(&0) {
            return Err(Error::Data("feature dimensions must be positive".into()));
        }
        if self.level_sets.len() != self.depth + 1 {
            return Err(Error::Data("level set count does not match depth".into()));
        }
        for l in 1..=self.depth {
            let expected: u64 = self.level_sets[l - 1]
                .iter()
                .map(|i| u64::from(self.num_children(i)))
                .sum();
            if expected != self.level_sets[l].len() as u64 {
                return Err(Error::Data(format!(
                    "level {l} has {} nodes but parents declare {expected} children",
                    self.level_sets[l].len()
                )));
            }
        }
        Ok(())
    }
}

/// Result of building a hierarchy from raw label tuples: the tree shape, the
/// leaf each observation row maps to, and the label dictionary for resolving
/// new data against the tree.
#[derive(Debug, Clone)]
pub struct HierarchyBuild {
    pub spec: HierarchySpec,
    /// Leaf node of each input row, in input order.
    pub leaf_of_row: Vec<NodeId>,
    /// Original label of every non-root node.
    pub labels: BTreeMap<NodeId, String>,
    /// Child lookup: (parent, raw label) -> child index.
    pub child_index: BTreeMap<(NodeId, String), u32>,
}

impl HierarchyBuild {
    /// Resolve a label path against the tree, returning the deepest node
    /// whose path of labels is known. Unseen labels truncate the path.
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
}

/// Build the tree from per-observation label tuples (one label per level,
/// outermost first). Children are numbered by first appearance in the input
/// stream, so the assignment is a pure function of row order.
///
/// Labels are parent-scoped: the same raw label under two different parents
/// yields two distinct nodes. With `strict_nesting` the same situation is
/// instead reported as a data error naming the offending label.
pub fn build_hierarchy(
    rows: &[Vec<String>],
    feature_dims: &[usize],
    strict_nesting: bool,
) -> Result<HierarchyBuild> {
    if rows.is_empty() {
        return Err(Error::Data(
            "no observations to build a hierarchy from".into(),
        ));
    }
    let depth = rows[0].len();
    if depth == 0 {
        return Err(Error::Data("observations carry no grouping labels".into()));
    }
    if feature_dims.len() != depth + 1 {
        return Err(Error::Data(format!(
            "expected {} feature dimensions for depth {depth}, got {}",
            depth + 1,
            feature_dims.len()
        )));
    }

    let mut children: BTreeMap<NodeId, u32> = BTreeMap::new();
    let mut child_index: BTreeMap<(NodeId, String), u32> = BTreeMap::new();
    let mut labels: BTreeMap<NodeId, String> = BTreeMap::new();
    // With strict nesting, remember which parent first claimed each
    // (level, label) pair.
    let mut first_parent: BTreeMap<(usize, String), NodeId> = BTreeMap::new();
    let mut leaf_of_row = Vec::with_capacity(rows.len());

    for (row_idx, row) in rows.iter().enumerate() {
        if row.len() != depth {
            return Err(Error::Data(format!(
                "row {row_idx} has {} grouping labels, expected {depth}",
                row.len()
            )));
        }
        let mut node = NodeId::root();
        for (level, label) in row.iter().enumerate() {
            if strict_nesting {
                match first_parent.get(&(level, label.clone())) {
                    Some(parent) if *parent != node => {
                        return Err(Error::Data(format!(
                            "label '{label}' at level {} appears under both '{parent}' and '{node}'",
                            level + 1
                        )));
                    }
                    Some(_) => {}
                    None => {
                        first_parent.insert((level, label.clone()), node.clone());
                    }
                }
            }
            let key = (node.clone(), label.clone());
            let j = match child_index.get(&key) {
                Some(&j) => j,
                None => {
                    let count = children.entry(node.clone()).or_insert(0);
                    *count += 1;
                    let j = *count;
                    child_index.insert(key, j);
                    labels.insert(node.child(j), label.clone());
                    j
                }
            };
            node = node.child(j);
        }
        leaf_of_row.push(node);
    }

    let mut level_sets: Vec<Vec<NodeId>> = vec![vec![NodeId::root()]];
    for l in 1..=depth {
        let mut level: Vec<NodeId> = Vec::new();
        for parent in &level_sets[l - 1] {
            let m = children.get(parent).copied().unwrap_or(0);
            for j in 1..=m {
                level.push(parent.child(j));
            }
        }
        level.sort();
        level_sets.push(level);
    }

    let spec = HierarchySpec {
        depth,
        children,
        level_sets,
        feature_dims: feature_dims.to_vec(),
    };
    spec.validate()?;

    Ok(HierarchyBuild {
        spec,
        leaf_of_row,
        labels,
        child_index,
    })
}
