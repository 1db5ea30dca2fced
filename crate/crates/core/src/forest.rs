//! Bagged generalizability-aware trees.
//!
//! Each tree is fitted on a bootstrap resample of the table's rows using a
//! random subset of `m` split variables. A type's score is the share of trees
//! that predict it rather than abstain, and its prediction is the average of
//! those trees' leaf predictions.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EstimateTable, TypeRow};
use crate::reward::Sigma2;
use crate::rng;
use crate::tree::{fit_gaware_tree, SearchConfig};
use crate::tree_model::TreeModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestOptions {
    /// Number of trees `M`.
    pub trees: usize,
    /// Variables drawn per tree, `m`.
    pub vars: usize,
    pub seed: u64,
    /// Resample rows per tree. Turning this off fits every tree on the full
    /// table, a diagnostic mode in which `vars` may equal `r`.
    pub bootstrap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestTree {
    pub tree: TreeModel,
    /// Sorted variable subset the tree may split on.
    pub vars: Vec<usize>,
    /// Seed of the tree's resample and variable draw.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub options: ForestOptions,
    pub trees: Vec<ForestTree>,
}

/// Score and prediction of one type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestPrediction {
    pub type_id: String,
    /// Share of trees that predict the type.
    pub score: f64,
    /// Mean leaf prediction of those trees; `None` when the score is zero.
    pub prediction: Option<Vec<f64>>,
}

/// Row indices of the resample and the sorted variable subset for one tree.
fn draws(n: usize, r: usize, opts: &ForestOptions, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut g = rng::rng(seed);
    let rows = if opts.bootstrap {
        (0..n).map(|_| g.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut vars = sample(&mut g, r, opts.vars).into_vec();
    vars.sort_unstable();
    (rows, vars)
}

fn resample(table: &EstimateTable, rows: &[usize], sigma2: &Sigma2) -> Result<(EstimateTable, Sigma2)> {
    let picked: Vec<TypeRow> = rows
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let mut row = table.row(i).clone();
            row.type_id = format!("{}#{k:07}", row.type_id);
            row
        })
        .collect();
    let origin: HashMap<String, usize> = picked
        .iter()
        .zip(rows)
        .map(|(r, &i)| (r.type_id.clone(), i))
        .collect();
    let boot = EstimateTable::new(
        picked,
        table.outcome_names().to_vec(),
        table.covariate_names().to_vec(),
    )?;
    let sigma2 = match sigma2 {
        Sigma2::Scalar(s) => Sigma2::Scalar(*s),
        Sigma2::PerType(v) => Sigma2::PerType(
            boot.rows()
                .iter()
                .map(|r| v[origin[&r.type_id]])
                .collect(),
        ),
    };
    Ok((boot, sigma2))
}

/// Fits `M` trees; deterministic given `opts.seed`.
pub fn fit_forest(table: &EstimateTable, config: &SearchConfig, opts: &ForestOptions) -> Result<ForestModel> {
    config.validate(table)?;
    let r = table.num_covariates();
    if opts.trees == 0 {
        return Err(Error::Invalid("a forest needs at least one tree".into()));
    }
    let max_vars = if opts.bootstrap { r.saturating_sub(1) } else { r };
    if opts.vars == 0 || opts.vars > max_vars {
        return Err(Error::Invalid(format!(
            "variables per tree must be in 1..={max_vars} for {r} covariates, got {}",
            opts.vars
        )));
    }
    let trees = (0..opts.trees)
        .into_par_iter()
        .map(|t| {
            let seed = rng::derive(opts.seed, 41, t as u64);
            let (rows, vars) = draws(table.len(), r, opts, seed);
            let (boot, sigma2) = if opts.bootstrap {
                resample(table, &rows, &config.sigma2)?
            } else {
                (table.clone(), config.sigma2.clone())
            };
            let cfg = SearchConfig {
                sigma2,
                allowed_vars: Some(vars.clone()),
                ..config.clone()
            };
            let fit = fit_gaware_tree(&boot, &cfg)?;
            Ok(ForestTree {
                tree: fit.tree,
                vars,
                seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForestModel {
        options: *opts,
        trees,
    })
}

impl ForestModel {
    /// Row indices drawn for tree `t` when fitted on a table of `n` rows.
    pub fn in_bag(&self, t: usize, n: usize, r: usize) -> Vec<usize> {
        draws(n, r, &self.options, self.trees[t].seed).0
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: ForestModel = serde_json::from_str(text)?;
        for (i, t) in model.trees.iter().enumerate() {
            let v = t.tree.validate();
            if !v.is_empty() {
                return Err(Error::InvalidTree(format!("tree {i}: {}", v.join("; "))));
            }
        }
        Ok(model)
    }
}

fn aggregate<'a>(row: &TypeRow, trees: impl Iterator<Item = &'a TreeModel>) -> ForestPrediction {
    let q = row.phi_hat.len();
    let mut total = 0usize;
    let mut hits = 0usize;
    let mut sum = vec![0.0; q];
    for tree in trees {
        total += 1;
        if let Some(p) = tree.predict(&row.covariates) {
            hits += 1;
            for (s, v) in sum.iter_mut().zip(p) {
                *s += v;
            }
        }
    }
    ForestPrediction {
        type_id: row.type_id.clone(),
        score: if total == 0 { f64::NAN } else { hits as f64 / total as f64 },
        prediction: (hits > 0).then(|| sum.iter().map(|s| s / hits as f64).collect()),
    }
}

/// Per-type scores and aggregated predictions, in row order.
pub fn predict_with_scores(model: &ForestModel, table: &EstimateTable) -> Result<Vec<ForestPrediction>> {
    if let Some(t) = model.trees.first() {
        if t.tree.meta.covariate_names.len() != table.num_covariates() {
            return Err(Error::Invalid("covariate dimension differs from training".into()));
        }
    }
    Ok(table
        .rows()
        .iter()
        .map(|row| aggregate(row, model.trees.iter().map(|t| &t.tree)))
        .collect())
}

/// Out-of-bag scores on the training table: each type is scored only by
/// trees whose resample left it out. Score is NaN when no such tree exists.
pub fn oob_scores(model: &ForestModel, table: &EstimateTable) -> Vec<ForestPrediction> {
    let n = table.len();
    let r = table.num_covariates();
    let mut out_of_bag = vec![vec![true; n]; model.trees.len()];
    for (t, flags) in out_of_bag.iter_mut().enumerate() {
        for i in model.in_bag(t, n, r) {
            flags[i] = false;
        }
    }
    table
        .rows()
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let trees = model
                .trees
                .iter()
                .enumerate()
                .filter(|(t, _)| out_of_bag[*t][i])
                .map(|(_, t)| &t.tree);
            aggregate(row, trees)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> EstimateTable {
        let rows = (0..30)
            .map(|i| TypeRow {
                type_id: format!("t{i:03}"),
                covariates: vec![i as f64, ((i * 7) % 30) as f64],
                weight: 1.0,
                phi_hat: vec![if i < 15 { 0.0 } else { 2.0 } + 0.01 * i as f64],
                eta2_hat: vec![0.01],
            })
            .collect();
        EstimateTable::new(rows, vec!["y".into()], vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn trees_split_only_on_their_variable() {
        let t = table();
        let cfg = SearchConfig::new(2, 3, 5, 1.0);
        let opts = ForestOptions {
            trees: 6,
            vars: 1,
            seed: 3,
            bootstrap: true,
        };
        let f = fit_forest(&t, &cfg, &opts).unwrap();
        for tree in &f.trees {
            assert_eq!(tree.vars.len(), 1);
            assert!(tree.tree.split_variables().is_subset(&tree.vars.iter().copied().collect()));
        }
        let again = fit_forest(&t, &cfg, &opts).unwrap();
        assert_eq!(f, again);
        let other = fit_forest(&t, &cfg, &ForestOptions { seed: 4, ..opts }).unwrap();
        assert_ne!(f.in_bag(0, 30, 2), other.in_bag(0, 30, 2));
    }

    #[test]
    fn scores_are_multiples_of_one_over_m() {
        let t = table();
        let cfg = SearchConfig::new(2, 3, 5, 0.05);
        let opts = ForestOptions {
            trees: 8,
            vars: 1,
            seed: 11,
            bootstrap: true,
        };
        let f = fit_forest(&t, &cfg, &opts).unwrap();
        for p in predict_with_scores(&f, &t).unwrap() {
            assert!((0.0..=1.0).contains(&p.score));
            let k = p.score * 8.0;
            assert!((k - k.round()).abs() < 1e-12);
            assert_eq!(p.prediction.is_some(), p.score > 0.0);
        }
        let json = f.to_json().unwrap();
        assert_eq!(ForestModel::from_json(&json).unwrap(), f);
    }

    #[test]
    fn single_full_data_tree_matches_direct_fit() {
        let t = table();
        let cfg = SearchConfig::new(2, 3, 5, 0.5);
        let opts = ForestOptions {
            trees: 1,
            vars: 2,
            seed: 0,
            bootstrap: false,
        };
        let f = fit_forest(&t, &cfg, &opts).unwrap();
        let direct = fit_gaware_tree(&t, &cfg).unwrap();
        assert_eq!(f.trees[0].tree, direct.tree);
        for (p, row) in predict_with_scores(&f, &t).unwrap().iter().zip(t.rows()) {
            assert_eq!(p.prediction.as_deref(), direct.tree.predict(&row.covariates));
        }
    }

    #[test]
    fn rejects_bad_variable_counts() {
        let t = table();
        let cfg = SearchConfig::new(1, 2, 3, 1.0);
        let opts = ForestOptions {
            trees: 2,
            vars: 2,
            seed: 0,
            bootstrap: true,
        };
        assert!(fit_forest(&t, &cfg, &opts).is_err());
    }
}
