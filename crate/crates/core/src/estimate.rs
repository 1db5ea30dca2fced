//! Estimate tables from unit-level experimental data.
//!
//! Every builder first forms a per-unit pseudo-outcome whose mean is the
//! conditional treatment effect, then aggregates units into types:
//!
//! * inverse propensity weighting, `Ỹ = D·Y/o − (1−D)·Y/(1−o)`;
//! * the doubly robust version with outcome models cross-fitted within each
//!   environment;
//! * matching, which groups each unit with its nearest neighbours;
//! * a parametric variant with per-unit squared residuals as variances.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EstimateTable, RawStudy, TypeRow};
use crate::regression::{sq_dist, ConstantMean, FittedRegression, RegressionOracle};
use crate::rng;

/// How units are grouped into types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TypeKey {
    /// Units sharing an environment and an exact covariate vector.
    #[default]
    EnvAndCovariates,
    /// Every unit is its own type.
    Unit,
}

/// Source of `η̂²` in the IPW and doubly robust builders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// `Σ(Ỹ − φ̂)² / (s(s−1))` within each type; needs `s ≥ 2`.
    #[default]
    PerType,
    /// Sample variance of `Ỹ` across the type's environment, divided by `s`.
    PooledWithinEnv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct BuildOptions {
    pub key: TypeKey,
    pub variance: VarianceMode,
    /// Seed for fold assignment and sample splitting.
    pub seed: u64,
}

/// Pseudo-outcome construction.
#[derive(Clone, Copy)]
pub enum Estimator<'a> {
    Ipw,
    DoublyRobust {
        oracle: &'a dyn RegressionOracle,
        folds: usize,
    },
    /// Doubly robust outcomes with per-unit squared residual variances,
    /// optionally smoothed by regressing them on covariates.
    Parametric {
        oracle: &'a dyn RegressionOracle,
        folds: usize,
        model_variance: bool,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildDiagnostics {
    /// Outcome or variance fits replaced by a training mean.
    pub fallback_fits: usize,
    /// Negative fitted variances floored at zero.
    pub negative_variances_floored: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Built {
    pub table: EstimateTable,
    pub diagnostics: BuildDiagnostics,
}

/// Two tables over the same types from disjoint halves of every type's units.
#[derive(Debug, Clone)]
pub struct SplitPair {
    pub main: EstimateTable,
    pub holdout: EstimateTable,
    /// Types dropped because they have fewer than four units.
    pub excluded: Vec<String>,
    pub diagnostics: BuildDiagnostics,
}

/// IPW pseudo-outcome of one unit and outcome.
#[inline]
pub fn ipw_outcome(y: f64, treated: bool, o: f64) -> f64 {
    let d = f64::from(u8::from(treated));
    d * y / o - (1.0 - d) * y / (1.0 - o)
}

/// Doubly robust pseudo-outcome of one unit and outcome.
#[inline]
pub fn dr_outcome(y: f64, treated: bool, o: f64, m1: f64, m0: f64) -> f64 {
    let d = f64::from(u8::from(treated));
    d * (y - m1) / o - (1.0 - d) * (y - m0) / (1.0 - o) + (m1 - m0)
}

/// Type structure of a study.
struct Cells {
    unit_type: Vec<usize>,
    ids: Vec<String>,
    covariates: Vec<Vec<f64>>,
    env: Vec<String>,
}

fn key_bits(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| if *v == 0.0 { 0 } else { v.to_bits() }).collect()
}

fn cells(study: &RawStudy, key: TypeKey) -> Cells {
    let prefix = match key {
        TypeKey::EnvAndCovariates => "t",
        TypeKey::Unit => "u",
    };
    let mut index: HashMap<(String, Vec<u64>), usize> = HashMap::new();
    let mut out = Cells {
        unit_type: Vec::with_capacity(study.len()),
        ids: Vec::new(),
        covariates: Vec::new(),
        env: Vec::new(),
    };
    for (i, u) in study.units.iter().enumerate() {
        let t = match key {
            TypeKey::Unit => {
                out.ids.push(String::new());
                out.covariates.push(u.covariates.clone());
                out.env.push(u.env.clone());
                i
            }
            TypeKey::EnvAndCovariates => {
                let k = (u.env.clone(), key_bits(&u.covariates));
                let next = out.ids.len();
                let t = *index.entry(k).or_insert(next);
                if t == next {
                    out.ids.push(String::new());
                    out.covariates.push(u.covariates.clone());
                    out.env.push(u.env.clone());
                }
                t
            }
        };
        out.unit_type.push(t);
    }
    let width = out.ids.len().to_string().len().max(7);
    for (t, id) in out.ids.iter_mut().enumerate() {
        *id = format!("{prefix}{:0width$}", t + 1);
    }
    out
}

/// Type id of every unit under `key`, as used by the builders.
pub fn unit_type_ids(study: &RawStudy, key: TypeKey) -> Vec<String> {
    let c = cells(study, key);
    c.unit_type.iter().map(|&t| c.ids[t].clone()).collect()
}

/// Per-unit pseudo-outcomes and, for the parametric estimator, per-unit
/// variances, over the units in `subset`.
struct Pseudo {
    y: Vec<Vec<f64>>,
    unit_var: Option<Vec<Vec<f64>>>,
}

/// Units of `subset` grouped by environment, in ascending environment order.
fn by_env(study: &RawStudy, subset: &[usize]) -> BTreeMap<String, Vec<usize>> {
    let mut m: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (pos, &i) in subset.iter().enumerate() {
        m.entry(study.units[i].env.clone()).or_default().push(pos);
    }
    m
}

/// Fold of every position in `members`: seeded shuffle, then round robin.
pub(crate) fn assign_folds(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng(seed));
    let mut fold = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        fold[i] = rank % folds;
    }
    fold
}

/// Cross-fitted `(m̂₁, m̂₀)` per subset position and outcome.
type OutcomeModels = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn cross_fit(
    study: &RawStudy,
    subset: &[usize],
    oracle: &dyn RegressionOracle,
    folds: usize,
    seed: u64,
    diag: &mut BuildDiagnostics,
) -> Result<OutcomeModels> {
    if folds < 2 {
        return Err(Error::Invalid(format!("need at least 2 folds, got {folds}")));
    }
    let q = study.num_outcomes();
    let envs = by_env(study, subset);
    for (env, members) in &envs {
        if members.len() < folds {
            return Err(Error::Invalid(format!(
                "environment '{env}' has {} units, fewer than {folds} folds",
                members.len()
            )));
        }
    }
    let env_list: Vec<(usize, (&String, &Vec<usize>))> = envs.iter().enumerate().collect();
    let per_env: Vec<(Vec<(usize, Vec<f64>, Vec<f64>)>, Vec<String>)> = env_list
        .par_iter()
        .map(|(e_idx, (env, members))| {
            let fold = assign_folds(members.len(), folds, rng::derive(seed, 11, *e_idx as u64));
            let mut warnings = Vec::new();
            let mut out: Vec<(usize, Vec<f64>, Vec<f64>)> = members
                .iter()
                .map(|&p| (p, vec![0.0; q], vec![0.0; q]))
                .collect();
            for f in 0..folds {
                let train: Vec<usize> = (0..members.len()).filter(|&m| fold[m] != f).collect();
                for qi in 0..q {
                    for arm in [true, false] {
                        let rows: Vec<usize> = train
                            .iter()
                            .copied()
                            .filter(|&m| study.units[subset[members[m]]].treated == arm)
                            .collect();
                        let x: Vec<Vec<f64>> = rows
                            .iter()
                            .map(|&m| study.units[subset[members[m]]].covariates.clone())
                            .collect();
                        let y: Vec<f64> = rows
                            .iter()
                            .map(|&m| study.units[subset[members[m]]].y[qi])
                            .collect();
                        let model: Box<dyn FittedRegression> = match oracle.fit(&x, &y) {
                            Ok(m) => m,
                            Err(e) => {
                                // Training mean of the arm, or of the whole
                                // training fold when the arm is empty.
                                let all: Vec<f64> = train
                                    .iter()
                                    .map(|&m| study.units[subset[members[m]]].y[qi])
                                    .collect();
                                let pool = if y.is_empty() { &all } else { &y };
                                warnings.push(format!(
                                    "env '{env}' fold {f} outcome {qi} {} arm: {e}; using training mean",
                                    if arm { "treated" } else { "control" }
                                ));
                                ConstantMean.fit(&[], pool)?
                            }
                        };
                        for m in (0..members.len()).filter(|&m| fold[m] == f) {
                            let pred = model.predict(&study.units[subset[members[m]]].covariates);
                            if arm {
                                out[m].1[qi] = pred;
                            } else {
                                out[m].2[qi] = pred;
                            }
                        }
                    }
                }
            }
            Ok((out, warnings))
        })
        .collect::<Result<_>>()?;

    let mut m1 = vec![Vec::new(); subset.len()];
    let mut m0 = vec![Vec::new(); subset.len()];
    for (rows, warnings) in per_env {
        diag.fallback_fits += warnings.len();
        diag.warnings.extend(warnings);
        for (p, a, b) in rows {
            m1[p] = a;
            m0[p] = b;
        }
    }
    Ok((m1, m0))
}

fn pseudo_outcomes(
    study: &RawStudy,
    subset: &[usize],
    estimator: Estimator<'_>,
    seed: u64,
    diag: &mut BuildDiagnostics,
) -> Result<Pseudo> {
    let units = || subset.iter().map(|&i| &study.units[i]);
    match estimator {
        Estimator::Ipw => Ok(Pseudo {
            y: units()
                .map(|u| u.y.iter().map(|y| ipw_outcome(*y, u.treated, u.propensity)).collect())
                .collect(),
            unit_var: None,
        }),
        Estimator::DoublyRobust { oracle, folds } => {
            let (m1, m0) = cross_fit(study, subset, oracle, folds, seed, diag)?;
            Ok(Pseudo {
                y: dr_all(study, subset, &m1, &m0),
                unit_var: None,
            })
        }
        Estimator::Parametric {
            oracle,
            folds,
            model_variance,
        } => {
            let (m1, m0) = cross_fit(study, subset, oracle, folds, seed, diag)?;
            let y = dr_all(study, subset, &m1, &m0);
            let mut var: Vec<Vec<f64>> = units()
                .enumerate()
                .map(|(p, u)| {
                    let d = f64::from(u8::from(u.treated));
                    (0..u.y.len())
                        .map(|qi| {
                            let r = d * (u.y[qi] - m1[p][qi]) / u.propensity
                                - (1.0 - d) * (u.y[qi] - m0[p][qi]) / (1.0 - u.propensity);
                            r * r
                        })
                        .collect()
                })
                .collect();
            if model_variance {
                smooth_variances(study, subset, oracle, &mut var, diag)?;
            }
            Ok(Pseudo {
                y,
                unit_var: Some(var),
            })
        }
    }
}

fn dr_all(study: &RawStudy, subset: &[usize], m1: &[Vec<f64>], m0: &[Vec<f64>]) -> Vec<Vec<f64>> {
    subset
        .iter()
        .enumerate()
        .map(|(p, &i)| {
            let u = &study.units[i];
            (0..u.y.len())
                .map(|qi| dr_outcome(u.y[qi], u.treated, u.propensity, m1[p][qi], m0[p][qi]))
                .collect()
        })
        .collect()
}

/// Replaces per-unit squared residuals by their regression on covariates
/// within each environment, floored at zero.
fn smooth_variances(
    study: &RawStudy,
    subset: &[usize],
    oracle: &dyn RegressionOracle,
    var: &mut [Vec<f64>],
    diag: &mut BuildDiagnostics,
) -> Result<()> {
    let q = study.num_outcomes();
    for (env, members) in by_env(study, subset) {
        let x: Vec<Vec<f64>> = members
            .iter()
            .map(|&p| study.units[subset[p]].covariates.clone())
            .collect();
        for qi in 0..q {
            let y: Vec<f64> = members.iter().map(|&p| var[p][qi]).collect();
            let model = match oracle.fit(&x, &y) {
                Ok(m) => m,
                Err(e) => {
                    diag.fallback_fits += 1;
                    diag.warnings
                        .push(format!("variance model for env '{env}' outcome {qi}: {e}; using mean"));
                    ConstantMean.fit(&x, &y)?
                }
            };
            for (k, &p) in members.iter().enumerate() {
                let v = model.predict(&x[k]);
                var[p][qi] = if v < 0.0 {
                    diag.negative_variances_floored += 1;
                    0.0
                } else {
                    v
                };
            }
        }
    }
    Ok(())
}

/// Aggregates pseudo-outcomes of `subset` into one row per type.
/// `weights[t]`, when given, overrides the share of units.
fn aggregate(
    study: &RawStudy,
    subset: &[usize],
    pseudo: &Pseudo,
    cells: &Cells,
    mode: VarianceMode,
    weights: Option<&[f64]>,
) -> Result<Vec<TypeRow>> {
    let q = study.num_outcomes();
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (p, &i) in subset.iter().enumerate() {
        members.entry(cells.unit_type[i]).or_default().push(p);
    }

    // Pooled environment variances of the pseudo-outcome.
    let mut env_var: HashMap<&str, Vec<f64>> = HashMap::new();
    if pseudo.unit_var.is_none() && mode == VarianceMode::PooledWithinEnv {
        for (env, pos) in by_env(study, subset) {
            if pos.len() < 2 {
                return Err(Error::InsufficientUnits {
                    required: 2,
                    types: vec![format!("environment '{env}'")],
                });
            }
            let v = (0..q)
                .map(|qi| sample_var(pos.iter().map(|&p| pseudo.y[p][qi])))
                .collect();
            let key = study.units[subset[pos[0]]].env.as_str();
            env_var.insert(key, v);
        }
    }

    if pseudo.unit_var.is_none() && mode == VarianceMode::PerType {
        let short: Vec<String> = members
            .iter()
            .filter(|(_, m)| m.len() < 2)
            .map(|(t, _)| cells.ids[*t].clone())
            .collect();
        if !short.is_empty() {
            return Err(Error::InsufficientUnits {
                required: 2,
                types: short,
            });
        }
    }

    let n = subset.len() as f64;
    let rows = members
        .iter()
        .map(|(&t, pos)| {
            let s = pos.len() as f64;
            let phi_hat: Vec<f64> = (0..q)
                .map(|qi| pos.iter().map(|&p| pseudo.y[p][qi]).sum::<f64>() / s)
                .collect();
            let eta2_hat = (0..q)
                .map(|qi| match (&pseudo.unit_var, mode) {
                    (Some(v), _) => pos.iter().map(|&p| v[p][qi]).sum::<f64>() / s / s,
                    (None, VarianceMode::PerType) => {
                        pos.iter()
                            .map(|&p| (pseudo.y[p][qi] - phi_hat[qi]).powi(2))
                            .sum::<f64>()
                            / (s * (s - 1.0))
                    }
                    (None, VarianceMode::PooledWithinEnv) => env_var[cells.env[t].as_str()][qi] / s,
                })
                .collect();
            TypeRow {
                type_id: cells.ids[t].clone(),
                covariates: cells.covariates[t].clone(),
                weight: weights.map_or(s / n, |w| w[t]),
                phi_hat,
                eta2_hat,
            }
        })
        .collect();
    Ok(rows)
}

fn sample_var(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let m = values.clone().sum::<f64>() / n;
    values.map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
}

fn finish(rows: Vec<TypeRow>, study: &RawStudy, diag: &BuildDiagnostics) -> Result<EstimateTable> {
    let mut table = EstimateTable::new(rows, study.outcome_names.clone(), study.covariate_names.clone())?;
    table.add_warnings(diag.warnings.iter().cloned());
    Ok(table)
}

/// Builds an estimate table from every unit of `study`.
pub fn build_table(study: &RawStudy, estimator: Estimator<'_>, opts: &BuildOptions) -> Result<Built> {
    let subset: Vec<usize> = (0..study.len()).collect();
    let cells = cells(study, opts.key);
    let mut diagnostics = BuildDiagnostics::default();
    let pseudo = pseudo_outcomes(study, &subset, estimator, opts.seed, &mut diagnostics)?;
    let rows = aggregate(study, &subset, &pseudo, &cells, opts.variance, None)?;
    if diagnostics.negative_variances_floored > 0 {
        diagnostics.warnings.push(format!(
            "{} negative fitted variances floored at zero",
            diagnostics.negative_variances_floored
        ));
    }
    let table = finish(rows, study, &diagnostics)?;
    Ok(Built { table, diagnostics })
}

/// IPW estimates per type.
pub fn ipw_pseudo_outcomes(study: &RawStudy, opts: &BuildOptions) -> Result<EstimateTable> {
    Ok(build_table(study, Estimator::Ipw, opts)?.table)
}

/// Doubly robust estimates per type with outcome models cross-fitted over
/// `folds` folds inside each environment.
pub fn dr_pseudo_outcomes(
    study: &RawStudy,
    oracle: &dyn RegressionOracle,
    folds: usize,
    opts: &BuildOptions,
) -> Result<Built> {
    build_table(study, Estimator::DoublyRobust { oracle, folds }, opts)
}

/// Doubly robust estimates with parametric per-unit variances.
pub fn parametric_variance_table(
    study: &RawStudy,
    oracle: &dyn RegressionOracle,
    folds: usize,
    model_variance: bool,
    opts: &BuildOptions,
) -> Result<Built> {
    build_table(
        study,
        Estimator::Parametric {
            oracle,
            folds,
            model_variance,
        },
        opts,
    )
}

/// Groups of unit positions formed by nearest-neighbour matching inside one
/// environment. `points` are in input order.
pub fn match_groups(points: &[Vec<f64>], lambda: usize) -> Vec<Vec<usize>> {
    let n = points.len();
    if n <= lambda {
        return vec![(0..n).collect()];
    }
    let mut done = vec![false; n];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut leftover = Vec::new();
    for i in 0..n {
        if done[i] {
            continue;
        }
        done[i] = true;
        let mut cand: Vec<(f64, usize)> = (0..n)
            .filter(|&j| !done[j])
            .map(|j| (sq_dist(&points[i], &points[j]), j))
            .collect();
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let zeros = cand.iter().take_while(|c| c.0 == 0.0).count();
        let take = zeros.max(lambda).min(cand.len());
        let mut g = vec![i];
        for &(_, j) in &cand[..take] {
            done[j] = true;
            g.push(j);
        }
        if g.len() == 1 {
            leftover.push(i);
        } else {
            groups.push(g);
        }
    }
    // A final unit with nobody left joins the group holding its nearest unit.
    for i in leftover {
        let (gi, _) = groups
            .iter()
            .enumerate()
            .flat_map(|(gi, g)| g.iter().map(move |&j| (gi, j)))
            .min_by(|a, b| {
                sq_dist(&points[i], &points[a.1])
                    .total_cmp(&sq_dist(&points[i], &points[b.1]))
                    .then(a.0.cmp(&b.0))
            })
            .expect("at least one group exists when n > lambda");
        groups[gi].push(i);
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    groups
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Doubly robust estimates on matched groups of `lambda + 1` nearby units.
pub fn matched_variance_table(
    study: &RawStudy,
    oracle: &dyn RegressionOracle,
    folds: usize,
    lambda: usize,
    seed: u64,
) -> Result<Built> {
    if lambda == 0 {
        return Err(Error::Invalid("match size must be at least 1".into()));
    }
    let subset: Vec<usize> = (0..study.len()).collect();
    let mut diagnostics = BuildDiagnostics::default();
    let pseudo = pseudo_outcomes(
        study,
        &subset,
        Estimator::DoublyRobust { oracle, folds },
        seed,
        &mut diagnostics,
    )?;
    let q = study.num_outcomes();
    let r = study.covariate_names.len();
    let n = study.len() as f64;
    let mut rows = Vec::new();
    for (env, members) in by_env(study, &subset) {
        if members.len() < lambda + 1 {
            diagnostics.warnings.push(format!(
                "environment '{env}' has {} units, fewer than match size + 1; emitted as one group",
                members.len()
            ));
        }
        let points: Vec<Vec<f64>> = members
            .iter()
            .map(|&p| study.units[p].covariates.clone())
            .collect();
        for g in match_groups(&points, lambda) {
            let units: Vec<usize> = g.iter().map(|&k| members[k]).collect();
            let s = units.len() as f64;
            let covariates = (0..r)
                .map(|j| median(units.iter().map(|&p| study.units[p].covariates[j]).collect()))
                .collect();
            let phi_hat: Vec<f64> = (0..q)
                .map(|qi| units.iter().map(|&p| pseudo.y[p][qi]).sum::<f64>() / s)
                .collect();
            let eta2_hat = (0..q)
                .map(|qi| {
                    if units.len() < 2 {
                        0.0
                    } else {
                        sample_var(units.iter().map(|&p| pseudo.y[p][qi])) / s
                    }
                })
                .collect();
            if units.len() < 2 {
                diagnostics
                    .warnings
                    .push(format!("environment '{env}' group of one unit has zero variance"));
            }
            rows.push(TypeRow {
                type_id: String::new(),
                covariates,
                weight: s / n,
                phi_hat,
                eta2_hat,
            });
        }
    }
    let width = rows.len().to_string().len().max(7);
    for (k, row) in rows.iter_mut().enumerate() {
        row.type_id = format!("m{:0width$}", k + 1);
    }
    let table = finish(rows, study, &diagnostics)?;
    Ok(Built { table, diagnostics })
}

/// Splits every type's units into two halves and builds one table per half.
/// Both tables carry the full-sample weights of the retained types.
pub fn split_for_inference(
    study: &RawStudy,
    estimator: Estimator<'_>,
    opts: &BuildOptions,
) -> Result<SplitPair> {
    let cells = cells(study, opts.key);
    let mut by_type: Vec<Vec<usize>> = vec![Vec::new(); cells.ids.len()];
    for (i, &t) in cells.unit_type.iter().enumerate() {
        by_type[t].push(i);
    }
    let mut excluded = Vec::new();
    let mut main = Vec::new();
    let mut holdout = Vec::new();
    let mut kept_units = 0usize;
    for (t, units) in by_type.iter().enumerate() {
        if units.len() < 4 {
            excluded.push(cells.ids[t].clone());
            continue;
        }
        kept_units += units.len();
        let mut shuffled = units.clone();
        shuffled.shuffle(&mut rng::child(opts.seed, 23, t as u64));
        let half = units.len().div_ceil(2);
        let (a, b) = shuffled.split_at(half);
        main.extend_from_slice(a);
        holdout.extend_from_slice(b);
    }
    if main.is_empty() {
        return Err(Error::InsufficientUnits {
            required: 4,
            types: excluded,
        });
    }
    main.sort_unstable();
    holdout.sort_unstable();
    let weights: Vec<f64> = by_type
        .iter()
        .map(|u| u.len() as f64 / kept_units as f64)
        .collect();

    let mut diagnostics = BuildDiagnostics::default();
    if !excluded.is_empty() {
        diagnostics.warnings.push(format!(
            "{} types with fewer than 4 units excluded from both halves",
            excluded.len()
        ));
    }
    let mut side = |subset: &[usize], stream: u64| -> Result<EstimateTable> {
        let pseudo = pseudo_outcomes(
            study,
            subset,
            estimator,
            rng::derive(opts.seed, stream, 0),
            &mut diagnostics,
        )?;
        let rows = aggregate(study, subset, &pseudo, &cells, opts.variance, Some(&weights))?;
        EstimateTable::new(rows, study.outcome_names.clone(), study.covariate_names.clone())
    };
    let mut main_t = side(&main, 31)?;
    let mut hold_t = side(&holdout, 37)?;
    main_t.add_warnings(diagnostics.warnings.iter().cloned());
    hold_t.add_warnings(diagnostics.warnings.iter().cloned());
    Ok(SplitPair {
        main: main_t,
        holdout: hold_t,
        excluded,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Unit;
    use crate::regression::ZeroRegression;

    fn unit(y: f64, treated: bool, env: &str, x: f64) -> Unit {
        Unit {
            y: vec![y],
            treated,
            propensity: 0.5,
            covariates: vec![x],
            env: env.into(),
        }
    }

    fn study(units: Vec<Unit>) -> RawStudy {
        RawStudy::new(units, vec!["y".into()], vec!["x".into()]).unwrap()
    }

    #[test]
    fn ipw_hand_example() {
        let s = study(vec![unit(2.0, true, "a", 0.0), unit(1.0, false, "a", 0.0)]);
        let t = ipw_pseudo_outcomes(&s, &BuildOptions::default()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.row(0).phi_hat, vec![1.0]);
        assert_eq!(t.row(0).eta2_hat, vec![9.0]);
        assert_eq!(t.row(0).weight, 1.0);
    }

    #[test]
    fn ipw_zero_outcomes() {
        let s = study(vec![unit(0.0, true, "a", 0.0), unit(0.0, false, "a", 0.0)]);
        let t = ipw_pseudo_outcomes(&s, &BuildOptions::default()).unwrap();
        assert_eq!(t.row(0).phi_hat, vec![0.0]);
        assert_eq!(t.row(0).eta2_hat, vec![0.0]);
    }

    #[test]
    fn single_unit_type_reported() {
        let s = study(vec![
            unit(2.0, true, "a", 0.0),
            unit(1.0, false, "a", 0.0),
            unit(1.0, false, "a", 1.0),
        ]);
        let err = ipw_pseudo_outcomes(&s, &BuildOptions::default()).unwrap_err();
        match err {
            Error::InsufficientUnits { types, .. } => assert_eq!(types, vec!["t0000002"]),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn pooled_mode_allows_unit_types() {
        let s = study(vec![
            unit(2.0, true, "a", 0.0),
            unit(1.0, false, "a", 1.0),
            unit(3.0, true, "a", 2.0),
        ]);
        let opts = BuildOptions {
            key: TypeKey::Unit,
            variance: VarianceMode::PooledWithinEnv,
            seed: 0,
        };
        let t = ipw_pseudo_outcomes(&s, &opts).unwrap();
        assert_eq!(t.len(), 3);
        // Pseudo-outcomes 4, -2, 6: sample variance 52/3.
        for row in t.rows() {
            assert!((row.eta2_hat[0] - 52.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matching_exact_ties() {
        let pts = vec![vec![0.0], vec![5.0], vec![0.0], vec![5.0]];
        let g = match_groups(&pts, 1);
        assert_eq!(g, vec![vec![0, 2], vec![1, 3]]);
    }

    #[test]
    fn matching_collinear() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let g = match_groups(&pts, 2);
        assert_eq!(g, vec![vec![0, 1, 2], vec![3, 4, 5]]);
    }

    #[test]
    fn matching_zero_ties_exceed_lambda() {
        let pts = vec![vec![1.0], vec![1.0], vec![1.0], vec![9.0], vec![9.5]];
        let g = match_groups(&pts, 1);
        assert_eq!(g, vec![vec![0, 1, 2], vec![3, 4]]);
    }

    #[test]
    fn matching_leftover_joins_nearest_group() {
        let pts = vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0], vec![2.0]];
        let g = match_groups(&pts, 1);
        assert_eq!(g, vec![vec![0, 1, 4], vec![2, 3]]);
    }

    #[test]
    fn matched_table_medians_and_zero_variance() {
        let units = (0..6)
            .map(|i| Unit {
                y: vec![if i < 3 { 1.0 } else { 2.0 }],
                treated: true,
                propensity: 0.5,
                covariates: vec![i as f64],
                env: "e".into(),
            })
            .collect();
        let s = study(units);
        let b = matched_variance_table(&s, &ZeroRegression, 2, 2, 1).unwrap();
        assert_eq!(b.table.len(), 2);
        assert_eq!(b.table.row(0).covariates, vec![1.0]);
        assert_eq!(b.table.row(1).covariates, vec![4.0]);
        assert!(b.table.rows().iter().all(|r| r.eta2_hat[0] == 0.0));
        assert_eq!(b.table.row(0).weight, 0.5);
    }

    #[test]
    fn split_halves() {
        let mut units = Vec::new();
        for i in 0..4 {
            units.push(unit(i as f64, i % 2 == 0, "a", 0.0));
        }
        for i in 0..3 {
            units.push(unit(i as f64, i % 2 == 0, "a", 1.0));
        }
        let s = study(units);
        let opts = BuildOptions {
            seed: 9,
            ..BuildOptions::default()
        };
        let a = split_for_inference(&s, Estimator::Ipw, &opts).unwrap();
        let b = split_for_inference(&s, Estimator::Ipw, &opts).unwrap();
        assert_eq!(a.excluded, vec!["t0000002"]);
        assert_eq!(a.main, b.main);
        assert_eq!(a.holdout, b.holdout);
        assert!(a.main.same_types(&a.holdout));
        assert_eq!(a.main.row(0).weight, a.holdout.row(0).weight);
    }
}
