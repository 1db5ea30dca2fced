//! Tree search: the exact recursive helper, the greedy archetype-constrained
//! fit with its optimization-error certificate, and a brute-force oracle.
//!
//! The search class is the set of full-depth split trees whose thresholds are
//! drawn, at every node, from `S` candidates computed on the types reaching
//! that node. A candidate split may leave one side empty; that is how
//! shallower trees are represented. Each leaf is an archetype or part of the
//! basin of ignorance, and a leaf with `0 < count <= min_leaf` types can only
//! be ignorance. Loss ties prefer the lowest `(variable, split)` pair and then
//! the archetype label.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EstimateTable, Partition, IGNORANCE};
use crate::reward::{self, empirical_reward, GroupStats, RewardBreakdown, RewardParams, Sigma2};
use crate::tree_model::{BranchNode, Leaf, NodeRef, SplitRule, TreeMeta, TreeModel, FORMAT_VERSION};

/// Largest configuration count the brute-force oracle will enumerate.
pub const ENUMERATION_LIMIT: f64 = 1e7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Number of split layers `L`; a full tree has `2^L` leaves.
    pub depth: usize,
    /// Candidate thresholds per variable and node, `S`.
    pub splits: usize,
    /// Archetype leaves need strictly more than this many types; 0 disables
    /// the rule.
    pub min_leaf: usize,
    /// `G`: the ignorance label plus at most `G − 1` archetypes.
    pub groups: usize,
    pub sigma2: Sigma2,
    pub split_rule: SplitRule,
    /// Variables eligible for splitting; `None` means all of them.
    pub allowed_vars: Option<Vec<usize>>,
}

impl SearchConfig {
    pub fn new(depth: usize, splits: usize, groups: usize, sigma2: impl Into<Sigma2>) -> Self {
        Self {
            depth,
            splits,
            min_leaf: 1,
            groups,
            sigma2: sigma2.into(),
            split_rule: SplitRule::Equal,
            allowed_vars: None,
        }
    }

    pub fn with_min_leaf(mut self, min_leaf: usize) -> Self {
        self.min_leaf = min_leaf;
        self
    }

    pub fn with_split_rule(mut self, rule: SplitRule) -> Self {
        self.split_rule = rule;
        self
    }

    pub fn validate(&self, table: &EstimateTable) -> Result<()> {
        if self.depth == 0 || self.splits == 0 {
            return Err(Error::Invalid("depth and splits must be positive".into()));
        }
        if self.groups < 2 {
            return Err(Error::Invalid(format!("G must be at least 2, got {}", self.groups)));
        }
        if self.depth > 20 {
            return Err(Error::Invalid(format!("depth {} is too large", self.depth)));
        }
        self.sigma2.validate(table.len())?;
        if let Some(vars) = &self.allowed_vars {
            if vars.is_empty() {
                return Err(Error::Invalid("no variables allowed for splitting".into()));
            }
            if let Some(v) = vars.iter().find(|v| **v >= table.num_covariates()) {
                return Err(Error::Invalid(format!("split variable {v} out of range")));
            }
        }
        Ok(())
    }

    fn vars(&self, r: usize) -> Vec<usize> {
        match &self.allowed_vars {
            Some(v) => v.clone(),
            None => (0..r).collect(),
        }
    }

    fn reward_params(&self) -> RewardParams {
        RewardParams {
            sigma2: self.sigma2.clone(),
            groups: self.groups,
        }
    }
}

/// Number of candidate evaluations the helper performs for `depth` layers
/// with `splits · vars` candidates per node.
pub fn helper_evaluation_count(depth: usize, splits: usize, vars: usize) -> u64 {
    let per_node = (splits * vars) as u64;
    (0..depth).fold(0u64, |c, _| per_node * (1 + 2 * c))
}

/// Axis-aligned region `lower < x <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl CovariateBox {
    pub fn unbounded(r: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; r],
            upper: vec![f64::INFINITY; r],
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| v > lo && v <= hi)
    }

    /// Row indices of `table` inside the box.
    pub fn members(&self, table: &EstimateTable) -> Vec<usize> {
        (0..table.len())
            .filter(|&i| self.contains(&table.row(i).covariates))
            .collect()
    }
}

/// Candidate thresholds for `var` over the types in `scope`, ascending.
pub fn candidate_thresholds(
    table: &EstimateTable,
    scope: &[usize],
    var: usize,
    splits: usize,
    rule: SplitRule,
) -> Vec<f64> {
    if scope.is_empty() {
        return vec![0.0; splits];
    }
    let values = scope.iter().map(|&i| table.row(i).covariates[var]);
    match rule {
        SplitRule::Equal => {
            let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
            let step = (hi - lo) / (splits + 1) as f64;
            (1..=splits).map(|k| lo + k as f64 * step).collect()
        }
        SplitRule::Quantile => {
            let mut v: Vec<f64> = values.collect();
            v.sort_by(f64::total_cmp);
            (1..=splits)
                .map(|k| quantile_sorted(&v, k as f64 / (splits + 1) as f64))
                .collect()
        }
    }
}

/// Linear-interpolation sample quantile of sorted data.
fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Per-leaf summary from the helper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelperLeaf {
    pub count: usize,
    pub mass: f64,
    /// `Δ̂` of the leaf as one group; zero when empty.
    pub delta: f64,
    /// `Σ σ²(x) p(x)` over the leaf.
    pub ignorance_cost: f64,
    pub archetype: bool,
    /// The leaf would be a cheaper archetype but is too small.
    pub forced_ignorance: bool,
}

/// One branch of the helper's chosen tree, in preorder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStep {
    pub variable: usize,
    pub split_index: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone)]
pub struct HelperResult {
    /// Optimal loss `E*` over the search class without an archetype cap.
    pub loss: f64,
    pub splits: Vec<SplitStep>,
    /// Leaves in left-to-right order.
    pub leaves: Vec<HelperLeaf>,
    pub evaluations: u64,
    shape: Shape,
}

impl HelperResult {
    pub fn forced_ignorance(&self) -> usize {
        self.leaves.iter().filter(|l| l.forced_ignorance).count()
    }
}

#[derive(Debug, Clone)]
enum Shape {
    Leaf(Vec<usize>),
    Split {
        step: SplitStep,
        left: Box<Shape>,
        right: Box<Shape>,
    },
}

impl Shape {
    fn leaves<'a>(&'a self, out: &mut Vec<&'a [usize]>) {
        match self {
            Shape::Leaf(m) => out.push(m),
            Shape::Split { left, right, .. } => {
                left.leaves(out);
                right.leaves(out);
            }
        }
    }

    fn steps(&self, out: &mut Vec<SplitStep>) {
        if let Shape::Split { step, left, right } = self {
            out.push(step.clone());
            left.steps(out);
            right.steps(out);
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            Shape::Leaf(m) => m.is_empty(),
            Shape::Split { left, right, .. } => left.is_empty() && right.is_empty(),
        }
    }

    fn num_leaves(&self) -> usize {
        match self {
            Shape::Leaf(_) => 1,
            Shape::Split { left, right, .. } => left.num_leaves() + right.num_leaves(),
        }
    }
}

fn split_scope(table: &EstimateTable, scope: &[usize], var: usize, t: f64) -> (Vec<usize>, Vec<usize>) {
    scope
        .iter()
        .partition(|&&i| table.row(i).covariates[var] <= t)
}

fn leaf_summary(table: &EstimateTable, members: &[usize], cfg: &SearchConfig) -> HelperLeaf {
    let mut stats = GroupStats::new(table.num_outcomes());
    for &i in members {
        stats.add(table, i, &cfg.sigma2);
    }
    let delta = stats.delta();
    let cheaper = stats.count > 0 && delta <= stats.ignorance_cost;
    let feasible = stats.count > cfg.min_leaf;
    HelperLeaf {
        count: stats.count,
        mass: stats.mass,
        delta,
        ignorance_cost: stats.ignorance_cost,
        archetype: cheaper && feasible,
        forced_ignorance: cheaper && !feasible,
    }
}

impl HelperLeaf {
    fn loss(&self) -> f64 {
        if self.archetype {
            self.delta
        } else {
            self.ignorance_cost
        }
    }
}

struct Solved {
    loss: f64,
    shape: Shape,
    leaves: Vec<HelperLeaf>,
    evaluations: u64,
}

/// Exact minimization over the search class restricted to `scope`.
fn solve(table: &EstimateTable, cfg: &SearchConfig, vars: &[usize], scope: &[usize], level: usize) -> Solved {
    if level == 0 {
        let leaf = leaf_summary(table, scope, cfg);
        return Solved {
            loss: leaf.loss(),
            shape: Shape::Leaf(scope.to_vec()),
            leaves: vec![leaf],
            evaluations: 0,
        };
    }
    let candidates: Vec<(usize, usize, f64)> = vars
        .iter()
        .flat_map(|&j| {
            candidate_thresholds(table, scope, j, cfg.splits, cfg.split_rule)
                .into_iter()
                .enumerate()
                .map(move |(k, t)| (j, k, t))
        })
        .collect();

    let evaluate = |&(j, k, t): &(usize, usize, f64)| {
        let (l, r) = split_scope(table, scope, j, t);
        let left = solve(table, cfg, vars, &l, level - 1);
        let right = solve(table, cfg, vars, &r, level - 1);
        let mut leaves = left.leaves;
        leaves.extend(right.leaves);
        Solved {
            loss: left.loss + right.loss,
            shape: Shape::Split {
                step: SplitStep {
                    variable: j,
                    split_index: k,
                    threshold: t,
                },
                left: Box::new(left.shape),
                right: Box::new(right.shape),
            },
            leaves,
            evaluations: 1 + left.evaluations + right.evaluations,
        }
    };
    // Small scopes are cheaper sequentially; the reduction below is ordered
    // either way, so the result does not depend on the choice.
    let results: Vec<Solved> = if scope.len() * candidates.len() >= 4096 {
        candidates.par_iter().map(evaluate).collect()
    } else {
        candidates.iter().map(evaluate).collect()
    };

    let evaluations = results.iter().map(|s| s.evaluations).sum();
    let mut best: Option<Solved> = None;
    for s in results {
        if best.as_ref().is_none_or(|b| s.loss < b.loss) {
            best = Some(s);
        }
    }
    let mut best = best.expect("at least one candidate split");
    best.evaluations = evaluations;
    best
}

/// Exact helper search on the types inside `scope`.
pub fn helper_tree(table: &EstimateTable, config: &SearchConfig, scope: &CovariateBox) -> Result<HelperResult> {
    config.validate(table)?;
    let members = scope.members(table);
    if members.is_empty() {
        return Err(Error::Invalid("scope contains no types".into()));
    }
    Ok(run_helper(table, config, &members))
}

fn run_helper(table: &EstimateTable, config: &SearchConfig, members: &[usize]) -> HelperResult {
    let vars = config.vars(table.num_covariates());
    let s = solve(table, config, &vars, members, config.depth);
    let mut splits = Vec::new();
    s.shape.steps(&mut splits);
    HelperResult {
        loss: s.loss,
        splits,
        leaves: s.leaves,
        evaluations: s.evaluations,
        shape: s.shape,
    }
}

/// Output of a tree fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub tree: TreeModel,
    /// Partition of the fitting table induced by `tree`.
    pub partition: Partition,
    pub breakdown: RewardBreakdown,
    /// `Ê − E*`; zero when the helper's assignment was kept as is.
    pub epsilon: f64,
    /// `E*`, the helper's uncapped optimum.
    pub helper_loss: f64,
    pub evaluations: u64,
    /// Leaves that would have been archetypes but hold too few types.
    pub forced_ignorance: usize,
    /// Archetype leaves sent to ignorance to respect the cap of `G − 1`.
    pub truncated: usize,
}

/// Greedy archetype-constrained fit.
///
/// Runs the helper, keeps its leaf labels, and when more than `G − 1` leaves
/// are archetypes keeps the `G − 1` with the smallest `Δ̂ − L̂` (ties by leaf
/// order). Surviving archetypes are labelled `2, 3, …` from left to right.
pub fn fit_gaware_tree(table: &EstimateTable, config: &SearchConfig) -> Result<FitResult> {
    config.validate(table)?;
    let members: Vec<usize> = (0..table.len()).collect();
    if table.len() <= config.min_leaf {
        // Too few types for any archetype: a single ignorance leaf.
        let leaf = leaf_summary(table, &members, config);
        let shape = Shape::Leaf(members);
        let (tree, partition, breakdown) = assemble(table, config, &shape, &[false], 0.0)?;
        return Ok(FitResult {
            helper_loss: leaf.ignorance_cost,
            tree,
            partition,
            breakdown,
            epsilon: 0.0,
            evaluations: 0,
            forced_ignorance: usize::from(leaf.forced_ignorance),
            truncated: 0,
        });
    }

    let helper = run_helper(table, config, &members);
    let mut keep: Vec<bool> = helper.leaves.iter().map(|l| l.archetype).collect();
    let cap = config.groups - 1;
    let mut truncated = 0;
    let archetypes: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
    if archetypes.len() > cap {
        let mut ranked = archetypes;
        ranked.sort_by(|&a, &b| {
            let ga = helper.leaves[a].delta - helper.leaves[a].ignorance_cost;
            let gb = helper.leaves[b].delta - helper.leaves[b].ignorance_cost;
            ga.total_cmp(&gb).then(a.cmp(&b))
        });
        for &i in &ranked[cap..] {
            keep[i] = false;
            truncated += 1;
        }
    }

    let (mut tree, partition, breakdown) = assemble(table, config, &helper.shape, &keep, 0.0)?;
    let epsilon = if truncated == 0 {
        0.0
    } else {
        (-breakdown.total - helper.loss).max(0.0)
    };
    tree.meta.epsilon = epsilon;
    Ok(FitResult {
        tree,
        partition,
        breakdown,
        epsilon,
        helper_loss: helper.loss,
        evaluations: helper.evaluations,
        forced_ignorance: helper.forced_ignorance(),
        truncated,
    })
}

/// Builds the serializable model, partition and reward for a shape whose
/// leaves (left to right) are archetypes where `archetype[i]` is set.
fn assemble(
    table: &EstimateTable,
    cfg: &SearchConfig,
    shape: &Shape,
    archetype: &[bool],
    epsilon: f64,
) -> Result<(TreeModel, Partition, RewardBreakdown)> {
    let mut leaf_sets = Vec::new();
    shape.leaves(&mut leaf_sets);
    debug_assert_eq!(leaf_sets.len(), archetype.len());

    let mut labels = vec![IGNORANCE; table.len()];
    let mut leaf_label = vec![IGNORANCE; leaf_sets.len()];
    let mut next = IGNORANCE + 1;
    for (i, set) in leaf_sets.iter().enumerate() {
        if archetype[i] && !set.is_empty() {
            leaf_label[i] = next;
            for &m in *set {
                labels[m] = next;
            }
            next += 1;
        }
    }
    let partition = Partition::new(labels, cfg.groups)?;
    let breakdown = empirical_reward(table, &partition, &cfg.reward_params())?;
    let means = reward::group_means(table, &partition);

    let mut nodes = Vec::new();
    let mut leaves = Vec::new();
    let mut cursor = 0usize;
    let root = emit(table, shape, &leaf_label, &means, &mut cursor, &mut nodes, &mut leaves);
    if let NodeRef::Leaf(_) = root {
        debug_assert!(nodes.is_empty());
    }
    let tree = TreeModel {
        meta: TreeMeta {
            format_version: FORMAT_VERSION,
            depth: cfg.depth,
            sigma2: cfg.sigma2.scalar(),
            groups: cfg.groups,
            splits: cfg.splits,
            min_leaf: cfg.min_leaf,
            split_rule: cfg.split_rule,
            objective: breakdown.total,
            epsilon,
            covariate_names: table.covariate_names().to_vec(),
            outcome_names: table.outcome_names().to_vec(),
        },
        nodes,
        leaves,
    };
    Ok((tree, partition, breakdown))
}

/// Appends `shape` in preorder. Subtrees reached by no type collapse to a
/// single empty ignorance leaf.
fn emit(
    table: &EstimateTable,
    shape: &Shape,
    leaf_label: &[usize],
    means: &std::collections::BTreeMap<usize, Vec<f64>>,
    cursor: &mut usize,
    nodes: &mut Vec<BranchNode>,
    leaves: &mut Vec<Leaf>,
) -> NodeRef {
    let collapse = match shape {
        Shape::Leaf(_) => false,
        Shape::Split { .. } => shape.is_empty(),
    };
    if collapse {
        *cursor += shape.num_leaves();
        leaves.push(Leaf {
            ignorance: true,
            label: IGNORANCE,
            prediction: None,
            count: 0,
            mass: 0.0,
        });
        return NodeRef::Leaf(leaves.len() - 1);
    }
    match shape {
        Shape::Leaf(members) => {
            let label = leaf_label[*cursor];
            *cursor += 1;
            leaves.push(Leaf {
                ignorance: label == IGNORANCE,
                label,
                prediction: (label != IGNORANCE).then(|| means[&label].clone()),
                count: members.len(),
                mass: members.iter().map(|&i| table.row(i).weight).sum(),
            });
            NodeRef::Leaf(leaves.len() - 1)
        }
        Shape::Split { step, left, right } => {
            let at = nodes.len();
            nodes.push(BranchNode {
                variable: step.variable,
                threshold: step.threshold,
                left: NodeRef::Leaf(usize::MAX),
                right: NodeRef::Leaf(usize::MAX),
            });
            let l = emit(table, left, leaf_label, means, cursor, nodes, leaves);
            let r = emit(table, right, leaf_label, means, cursor, nodes, leaves);
            nodes[at].left = l;
            nodes[at].right = r;
            NodeRef::Branch(at)
        }
    }
}

/// Size of the brute-force enumeration for `config` on `table`.
pub fn enumeration_size(table: &EstimateTable, config: &SearchConfig) -> f64 {
    let per_node = (config.splits * config.vars(table.num_covariates()).len()) as f64;
    let leaves = 2f64.powi(config.depth as i32);
    per_node.powf(leaves - 1.0) * 2f64.powf(leaves)
}

fn all_shapes(table: &EstimateTable, cfg: &SearchConfig, vars: &[usize], scope: &[usize], level: usize) -> Vec<Shape> {
    if level == 0 {
        return vec![Shape::Leaf(scope.to_vec())];
    }
    let mut out = Vec::new();
    for &j in vars {
        for (k, t) in candidate_thresholds(table, scope, j, cfg.splits, cfg.split_rule)
            .into_iter()
            .enumerate()
        {
            let (l, r) = split_scope(table, scope, j, t);
            let lefts = all_shapes(table, cfg, vars, &l, level - 1);
            let rights = all_shapes(table, cfg, vars, &r, level - 1);
            for a in &lefts {
                for b in &rights {
                    out.push(Shape::Split {
                        step: SplitStep {
                            variable: j,
                            split_index: k,
                            threshold: t,
                        },
                        left: Box::new(a.clone()),
                        right: Box::new(b.clone()),
                    });
                }
            }
        }
    }
    out
}

/// Exhaustive search over every tree in the class and every leaf labelling
/// with at most `G − 1` archetypes. Each leaf's `Δ̂` is computed directly
/// from its members. Refuses when [`enumeration_size`] exceeds
/// [`ENUMERATION_LIMIT`].
pub fn brute_force_fit(table: &EstimateTable, config: &SearchConfig) -> Result<FitResult> {
    config.validate(table)?;
    let estimate = enumeration_size(table, config);
    if estimate > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            estimate,
            limit: ENUMERATION_LIMIT,
        });
    }
    let q = table.num_outcomes();
    let vars = config.vars(table.num_covariates());
    let members: Vec<usize> = (0..table.len()).collect();
    let shapes = all_shapes(table, config, &vars, &members, config.depth);
    let cap = config.groups - 1;

    let mut best: Option<(f64, usize, Vec<bool>)> = None;
    for (si, shape) in shapes.iter().enumerate() {
        let mut sets = Vec::new();
        shape.leaves(&mut sets);
        let costs: Vec<(f64, f64, bool)> = sets
            .iter()
            .map(|set| {
                let delta: f64 = reward::delta_of_members(table, set, q).iter().sum();
                let ign: f64 = set
                    .iter()
                    .map(|&i| config.sigma2.at(i) * table.row(i).weight)
                    .sum();
                (delta, ign, set.len() > config.min_leaf)
            })
            .collect();
        let n = sets.len();
        for mask in 0u64..(1u64 << n) {
            if mask.count_ones() as usize > cap {
                continue;
            }
            if (0..n).any(|i| mask >> i & 1 == 1 && !costs[i].2) {
                continue;
            }
            let loss: f64 = (0..n)
                .map(|i| if mask >> i & 1 == 1 { costs[i].0 } else { costs[i].1 })
                .sum();
            let value = -loss;
            if best.as_ref().is_none_or(|(b, _, _)| value > *b) {
                best = Some((value, si, (0..n).map(|i| mask >> i & 1 == 1).collect()));
            }
        }
    }
    let (value, si, keep) = best.expect("the all-ignorance labelling is always feasible");
    let (tree, partition, breakdown) = assemble(table, config, &shapes[si], &keep, 0.0)?;
    debug_assert!((breakdown.total - value).abs() <= 1e-9 * value.abs().max(1.0));
    Ok(FitResult {
        helper_loss: -value,
        tree,
        partition,
        breakdown,
        epsilon: 0.0,
        evaluations: shapes.len() as u64,
        forced_ignorance: 0,
        truncated: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TypeRow;

    fn table_1d(xs: &[f64], phi: &[f64], eta: f64) -> EstimateTable {
        let rows = xs
            .iter()
            .zip(phi)
            .enumerate()
            .map(|(i, (x, p))| TypeRow {
                type_id: format!("t{i:03}"),
                covariates: vec![*x],
                weight: 1.0,
                phi_hat: vec![*p],
                eta2_hat: vec![eta],
            })
            .collect();
        EstimateTable::new(rows, vec!["y".into()], vec!["x".into()]).unwrap()
    }

    #[test]
    fn equal_thresholds_exclude_endpoints() {
        let t = table_1d(&[0.0, 1.0, 4.0], &[0.0; 3], 0.0);
        let th = candidate_thresholds(&t, &[0, 1, 2], 0, 3, SplitRule::Equal);
        assert_eq!(th, vec![1.0, 2.0, 3.0]);
        let th = candidate_thresholds(&t, &[0, 1, 2], 0, 1, SplitRule::Quantile);
        assert_eq!(th, vec![1.0]);
        let th = candidate_thresholds(&t, &[2], 0, 2, SplitRule::Equal);
        assert_eq!(th, vec![4.0, 4.0]);
    }

    #[test]
    fn separable_clusters_have_zero_loss() {
        let t = table_1d(&[0.0, 0.1, 0.2, 1.0, 1.1, 1.2], &[1.0, 1.0, 1.0, 5.0, 5.0, 5.0], 0.0);
        let cfg = SearchConfig::new(1, 1, 3, 1e6);
        let h = helper_tree(&t, &cfg, &CovariateBox::unbounded(1)).unwrap();
        assert!(h.loss.abs() < 1e-12);
        assert!(h.leaves.iter().all(|l| l.archetype));
        let fit = fit_gaware_tree(&t, &cfg).unwrap();
        assert_eq!(fit.tree.num_archetype_leaves(), 2);
        assert_eq!(fit.epsilon, 0.0);
        assert!(fit.tree.validate_against(&t).is_empty());
    }

    #[test]
    fn outlier_side_goes_to_ignorance() {
        let t = table_1d(
            &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            &[0.1, -0.1, 0.2, 0.0, -0.2, 40.0],
            0.0,
        );
        let cfg = SearchConfig::new(1, 4, 3, 0.5);
        let fit = fit_gaware_tree(&t, &cfg).unwrap();
        let outlier = t.index_of("t005").unwrap();
        assert!(!fit.partition.is_predicted(outlier));
        let bf = brute_force_fit(&t, &cfg).unwrap();
        assert!((bf.breakdown.total - fit.breakdown.total).abs() < 1e-12);
    }

    #[test]
    fn min_leaf_forces_small_leaves_to_ignorance() {
        let t = table_1d(&[0.0, 1.0, 2.0, 10.0], &[0.0, 0.0, 0.0, 3.0], 0.0);
        let cfg = SearchConfig::new(1, 1, 3, 1e3).with_min_leaf(1);
        let fit = fit_gaware_tree(&t, &cfg).unwrap();
        assert_eq!(fit.forced_ignorance, 1);
        assert!(!fit.partition.is_predicted(3));
        assert!(fit.partition.is_predicted(0));
    }

    #[test]
    fn table_not_larger_than_min_leaf_is_all_ignorance() {
        let t = table_1d(&[0.0, 1.0], &[1.0, 1.0], 0.0);
        let cfg = SearchConfig::new(2, 2, 5, 10.0).with_min_leaf(2);
        let fit = fit_gaware_tree(&t, &cfg).unwrap();
        assert_eq!(fit.breakdown.ignorance_mass, 1.0);
        assert_eq!(fit.tree.leaves.len(), 1);
        assert!(fit.tree.validate().is_empty());
    }

    #[test]
    fn evaluation_count_formula() {
        assert_eq!(helper_evaluation_count(1, 3, 2), 6);
        assert_eq!(helper_evaluation_count(2, 3, 2), 6 * 13);
        let t = table_1d(&[0.0, 1.0, 2.0, 3.0, 4.0], &[0.0, 1.0, 0.0, 1.0, 0.0], 0.1);
        for depth in 1..=3 {
            let cfg = SearchConfig::new(depth, 2, 9, 0.3);
            let h = helper_tree(&t, &cfg, &CovariateBox::unbounded(1)).unwrap();
            assert_eq!(h.evaluations, helper_evaluation_count(depth, 2, 1));
        }
    }

    #[test]
    fn truncation_keeps_best_leaves_and_reports_gap() {
        let t = table_1d(
            &[0.0, 0.1, 1.0, 1.1, 2.0, 2.1, 3.0, 3.1],
            &[0.0, 0.0, 5.0, 5.0, 10.0, 10.0, 15.0, 15.1],
            0.0,
        );
        let cfg = SearchConfig::new(2, 1, 3, 100.0);
        let fit = fit_gaware_tree(&t, &cfg).unwrap();
        assert_eq!(fit.truncated, 2);
        assert_eq!(fit.tree.num_archetype_leaves(), 2);
        assert!(fit.epsilon > 0.0);
        assert!((fit.epsilon - (-fit.breakdown.total - fit.helper_loss)).abs() < 1e-12);
        assert!(fit.tree.validate_against(&t).is_empty());
    }

    #[test]
    fn enumeration_guard() {
        let xs: Vec<f64> = (0..20).map(f64::from).collect();
        let t = table_1d(&xs, &xs, 0.0);
        let cfg = SearchConfig::new(4, 10, 3, 1.0);
        assert!(matches!(
            brute_force_fit(&t, &cfg),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn single_type_brute_force() {
        let t = table_1d(&[1.0], &[2.0], 0.0);
        let cfg = SearchConfig::new(1, 1, 2, 1.0).with_min_leaf(0);
        assert_eq!(brute_force_fit(&t, &cfg).unwrap().breakdown.total, 0.0);
        assert_eq!(fit_gaware_tree(&t, &cfg).unwrap().breakdown.total, 0.0);
        let cfg = SearchConfig::new(1, 1, 2, 1.0);
        let fit = brute_force_fit(&t, &cfg).unwrap();
        assert_eq!(fit.breakdown.total, -1.0);
        assert!(fit.tree.validate().is_empty());
    }
}
