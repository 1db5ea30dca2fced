//! Serializable split tree whose leaves are either archetypes (with per-outcome
//! predictions) or part of the basin of ignorance.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EstimateTable, Partition, IGNORANCE};
use crate::reward;

/// Current JSON format version.
pub const FORMAT_VERSION: u32 = 1;

/// Child reference of a branch node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "lowercase")]
pub enum NodeRef {
    Branch(usize),
    Leaf(usize),
}

/// Rows with `x[variable] <= threshold` go left, the rest go right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchNode {
    pub variable: usize,
    pub threshold: f64,
    pub left: NodeRef,
    pub right: NodeRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub ignorance: bool,
    /// [`IGNORANCE`] for ignorance leaves, otherwise the archetype label.
    pub label: usize,
    /// Per-outcome group mean; absent for ignorance leaves.
    pub prediction: Option<Vec<f64>>,
    /// Number of training types in the leaf.
    pub count: usize,
    /// Training weight mass in the leaf.
    pub mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitRule {
    /// `S` equally spaced values strictly inside the range of the variable.
    #[default]
    Equal,
    /// `S` interior quantiles of the variable.
    Quantile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeMeta {
    pub format_version: u32,
    /// Maximum number of split layers `L`.
    pub depth: usize,
    /// Scalar ignorance cost; `None` when a per-type cost map was used.
    pub sigma2: Option<f64>,
    pub groups: usize,
    pub splits: usize,
    pub min_leaf: usize,
    pub split_rule: SplitRule,
    /// Empirical reward of the fitted partition.
    pub objective: f64,
    /// Optimization error certificate.
    pub epsilon: f64,
    pub covariate_names: Vec<String>,
    pub outcome_names: Vec<String>,
}

/// Depth-`L` binary split tree. The root is `nodes[0]` when there is at least
/// one branch node, otherwise the single leaf `leaves[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub meta: TreeMeta,
    pub nodes: Vec<BranchNode>,
    pub leaves: Vec<Leaf>,
}

impl TreeModel {
    pub fn root(&self) -> NodeRef {
        if self.nodes.is_empty() {
            NodeRef::Leaf(0)
        } else {
            NodeRef::Branch(0)
        }
    }

    /// Index of the leaf that `covariates` falls into.
    pub fn leaf_index(&self, covariates: &[f64]) -> usize {
        let mut at = self.root();
        loop {
            match at {
                NodeRef::Leaf(i) => return i,
                NodeRef::Branch(i) => {
                    let node = &self.nodes[i];
                    at = if covariates[node.variable] <= node.threshold {
                        node.left
                    } else {
                        node.right
                    };
                }
            }
        }
    }

    pub fn leaf_for(&self, covariates: &[f64]) -> &Leaf {
        &self.leaves[self.leaf_index(covariates)]
    }

    /// Per-outcome prediction, or `None` inside the basin of ignorance.
    pub fn predict(&self, covariates: &[f64]) -> Option<&[f64]> {
        self.leaf_for(covariates).prediction.as_deref()
    }

    /// Routes every row of `table` and returns the induced partition.
    pub fn partition(&self, table: &EstimateTable) -> Partition {
        let labels = table
            .rows()
            .iter()
            .map(|r| self.leaf_for(&r.covariates).label)
            .collect();
        Partition::new(labels, self.meta.groups).expect("validated leaf labels are within 1..=G")
    }

    pub fn num_archetype_leaves(&self) -> usize {
        self.leaves.iter().filter(|l| !l.ignorance).count()
    }

    /// Variables used by branch nodes.
    pub fn split_variables(&self) -> BTreeSet<usize> {
        self.nodes.iter().map(|n| n.variable).collect()
    }

    /// Structural invariants. An empty vector means the model is valid.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        let meta = &self.meta;
        if meta.format_version != FORMAT_VERSION {
            violations.push(format!("format_version {}", meta.format_version));
        }
        if meta.groups < 2 {
            violations.push(format!("groups = {} < 2", meta.groups));
        }
        if self.leaves.is_empty() {
            violations.push("tree has no leaves".into());
            return violations;
        }
        if self.nodes.is_empty() && self.leaves.len() != 1 {
            violations.push("leaf-only tree must have exactly one leaf".into());
        }

        // Reachability: every node and leaf visited exactly once from the root.
        let mut node_seen = vec![false; self.nodes.len()];
        let mut leaf_seen = vec![false; self.leaves.len()];
        let mut stack = vec![(self.root(), 0usize)];
        while let Some((at, level)) = stack.pop() {
            match at {
                NodeRef::Leaf(i) => {
                    if i >= self.leaves.len() {
                        violations.push(format!("leaf reference {i} out of range"));
                    } else if std::mem::replace(&mut leaf_seen[i], true) {
                        violations.push(format!("leaf {i} referenced more than once"));
                    }
                }
                NodeRef::Branch(i) => {
                    if i >= self.nodes.len() {
                        violations.push(format!("node reference {i} out of range"));
                        continue;
                    }
                    if std::mem::replace(&mut node_seen[i], true) {
                        violations.push(format!("node {i} referenced more than once"));
                        continue;
                    }
                    if level + 1 > meta.depth {
                        violations.push(format!("node {i} exceeds depth {}", meta.depth));
                    }
                    let node = &self.nodes[i];
                    if !node.threshold.is_finite() {
                        violations.push(format!("node {i} has a non-finite threshold"));
                    }
                    if node.variable >= meta.covariate_names.len() {
                        violations.push(format!(
                            "node {i} splits on variable {} of {}",
                            node.variable,
                            meta.covariate_names.len()
                        ));
                    }
                    stack.push((node.right, level + 1));
                    stack.push((node.left, level + 1));
                }
            }
        }
        if let Some(i) = node_seen.iter().position(|s| !s) {
            violations.push(format!("node {i} unreachable"));
        }
        if let Some(i) = leaf_seen.iter().position(|s| !s) {
            violations.push(format!("leaf {i} unreachable"));
        }

        let q = meta.outcome_names.len();
        let mut labels = BTreeSet::new();
        for (i, leaf) in self.leaves.iter().enumerate() {
            if leaf.ignorance {
                if leaf.label != IGNORANCE {
                    violations.push(format!("ignorance leaf {i} has label {}", leaf.label));
                }
                if leaf.prediction.is_some() {
                    violations.push(format!("ignorance leaf {i} carries a prediction"));
                }
            } else {
                if leaf.label <= IGNORANCE || leaf.label > meta.groups {
                    violations.push(format!(
                        "archetype leaf {i} has label {} outside 2..={}",
                        leaf.label, meta.groups
                    ));
                }
                if !labels.insert(leaf.label) {
                    violations.push(format!("archetype label {} used twice", leaf.label));
                }
                match &leaf.prediction {
                    None => violations.push(format!("archetype leaf {i} has no prediction")),
                    Some(p) if p.len() != q => violations.push(format!(
                        "archetype leaf {i} has {} predictions for {q} outcomes",
                        p.len()
                    )),
                    Some(p) if p.iter().any(|v| !v.is_finite()) => {
                        violations.push(format!("archetype leaf {i} has a non-finite prediction"))
                    }
                    Some(_) => {}
                }
            }
        }
        if labels.len() + 1 > meta.groups {
            violations.push(format!(
                "{} archetype leaves exceed G - 1 = {}",
                labels.len(),
                meta.groups - 1
            ));
        }
        violations
    }

    /// [`TreeModel::validate`] plus the requirement that every archetype
    /// leaf predicts the weighted group mean of its members in `table`.
    pub fn validate_against(&self, table: &EstimateTable) -> Vec<String> {
        let mut violations = self.validate();
        if !violations.is_empty() {
            return violations;
        }
        if table.num_covariates() != self.meta.covariate_names.len() {
            violations.push("covariate dimension mismatch".into());
            return violations;
        }
        let part = self.partition(table);
        let means = reward::group_means(table, &part);
        let mut counts = vec![0usize; self.leaves.len()];
        for row in table.rows() {
            counts[self.leaf_index(&row.covariates)] += 1;
        }
        for (i, leaf) in self.leaves.iter().enumerate() {
            if counts[i] != leaf.count {
                violations.push(format!(
                    "leaf {i} records {} members but routes {}",
                    leaf.count, counts[i]
                ));
            }
            let Some(pred) = &leaf.prediction else { continue };
            match means.get(&leaf.label) {
                Some(mean) => {
                    for (a, b) in pred.iter().zip(mean) {
                        if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                            violations.push(format!(
                                "leaf {i} predicts {a} but its group mean is {b}"
                            ));
                        }
                    }
                }
                None if counts[i] == 0 => {}
                None => violations.push(format!("leaf {i} has no group mean")),
            }
        }
        violations
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and validates a model.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("meta")
            .and_then(|m| m.get("format_version"))
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::InvalidTree("missing meta.format_version".into()))?;
        if found != u64::from(FORMAT_VERSION) {
            return Err(Error::VersionMismatch {
                found: found as u32,
                expected: FORMAT_VERSION,
            });
        }
        let model: TreeModel = serde_json::from_value(value)?;
        let violations = model.validate();
        if !violations.is_empty() {
            return Err(Error::InvalidTree(violations.join("; ")));
        }
        Ok(model)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn stump() -> TreeModel {
        TreeModel {
            meta: TreeMeta {
                format_version: FORMAT_VERSION,
                depth: 1,
                sigma2: Some(1.5),
                groups: 3,
                splits: 1,
                min_leaf: 1,
                split_rule: SplitRule::Equal,
                objective: -0.25,
                epsilon: 0.0,
                covariate_names: vec!["x".into()],
                outcome_names: vec!["y".into()],
            },
            nodes: vec![BranchNode {
                variable: 0,
                threshold: 0.5,
                left: NodeRef::Leaf(0),
                right: NodeRef::Leaf(1),
            }],
            leaves: vec![
                Leaf {
                    ignorance: false,
                    label: 2,
                    prediction: Some(vec![0.1 + 0.2]),
                    count: 3,
                    mass: 0.75,
                },
                Leaf {
                    ignorance: true,
                    label: IGNORANCE,
                    prediction: None,
                    count: 1,
                    mass: 0.25,
                },
            ],
        }
    }

    #[test]
    fn stump_is_valid_and_routes() {
        let t = stump();
        assert!(t.validate().is_empty());
        assert_eq!(t.predict(&[0.5]), Some(&[0.1 + 0.2][..]));
        assert_eq!(t.predict(&[0.6]), None);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let t = stump();
        let back = TreeModel::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
        assert_eq!(
            back.leaves[0].prediction.as_ref().unwrap()[0].to_bits(),
            (0.1f64 + 0.2).to_bits()
        );
    }

    #[test]
    fn duplicate_archetype_label_rejected_on_load() {
        let mut t = stump();
        t.leaves[1] = Leaf {
            ignorance: false,
            label: 2,
            prediction: Some(vec![1.0]),
            count: 1,
            mass: 0.25,
        };
        let err = TreeModel::from_json(&serde_json::to_string(&t).unwrap()).unwrap_err();
        assert!(matches!(err, Error::InvalidTree(_)), "{err}");
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut t = stump();
        t.meta.format_version = 7;
        let err = TreeModel::from_json(&serde_json::to_string(&t).unwrap()).unwrap_err();
        assert!(matches!(err, Error::VersionMismatch { found: 7, .. }));
        assert!(TreeModel::from_json("{not json").is_err());
    }

    #[test]
    fn too_many_archetypes_and_depth_violations() {
        let mut t = stump();
        t.meta.groups = 2;
        t.leaves[1] = Leaf {
            ignorance: false,
            label: 3,
            prediction: Some(vec![1.0]),
            count: 1,
            mass: 0.25,
        };
        assert!(!t.validate().is_empty());

        let mut t = stump();
        t.meta.depth = 0;
        assert!(t.validate().iter().any(|v| v.contains("depth")));
    }
}
