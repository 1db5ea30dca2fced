//! Debiased empirical reward of a partition, its per-group pieces, the
//! population reward used as a regret oracle, and the `σ²` frontier.
//!
//! For a partition `α` with group means `φ̂*(g)` the per-group loss is
//!
//! ```text
//! Δ̂(g) = Σ_{α(x)=g} p(x) [ (φ̂*(g) − φ̂(x))² − η̂²(x) ]
//! ```
//!
//! summed over outcomes, and the reward is
//! `Ŵ = −[ Σ_{g>1} Δ̂(g) + Σ_{α(x)=1} σ²(x) p(x) ]`. Negative `Δ̂` values are
//! legal and never clipped.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EstimateTable, Partition, IGNORANCE};

/// Cost of abstaining, per unit of weight mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Sigma2 {
    Scalar(f64),
    /// One cost per table row, in row order.
    PerType(Vec<f64>),
}

impl Sigma2 {
    pub fn validate(&self, n_rows: usize) -> Result<()> {
        match self {
            Sigma2::Scalar(s) if !s.is_finite() || *s < 0.0 => {
                Err(Error::Invalid(format!("sigma2 must be finite and >= 0, got {s}")))
            }
            Sigma2::PerType(v) if v.len() != n_rows => Err(Error::Invalid(format!(
                "per-type sigma2 has {} entries for {n_rows} types",
                v.len()
            ))),
            Sigma2::PerType(v) => match v.iter().find(|s| !s.is_finite() || **s < 0.0) {
                Some(s) => Err(Error::Invalid(format!("per-type sigma2 entry {s} invalid"))),
                None => Ok(()),
            },
            Sigma2::Scalar(_) => Ok(()),
        }
    }

    /// Ignorance cost `σ²(x)` for row `i`.
    #[inline]
    pub fn at(&self, i: usize) -> f64 {
        match self {
            Sigma2::Scalar(s) => *s,
            Sigma2::PerType(v) => v[i],
        }
    }

    pub fn scalar(&self) -> Option<f64> {
        match self {
            Sigma2::Scalar(s) => Some(*s),
            Sigma2::PerType(_) => None,
        }
    }
}

impl From<f64> for Sigma2 {
    fn from(s: f64) -> Self {
        Sigma2::Scalar(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub sigma2: Sigma2,
    pub groups: usize,
}

impl RewardParams {
    pub fn new(sigma2: impl Into<Sigma2>, groups: usize) -> Self {
        Self {
            sigma2: sigma2.into(),
            groups,
        }
    }
}

/// The objective and the pieces it is assembled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// `Δ̂(g)` for every non-empty archetype `g > 1`, summed over outcomes.
    pub delta_by_group: BTreeMap<usize, f64>,
    /// Per-outcome `Δ̂_q(g)`; one map per outcome.
    pub per_outcome: Vec<BTreeMap<usize, f64>>,
    /// `Σ_{α(x)=1} p(x)`.
    pub ignorance_mass: f64,
    /// `Σ_{α(x)=1} σ²(x) p(x)`.
    pub ignorance_cost: f64,
    /// Estimated approximation error on the predicted set, `Σ_g Δ̂(g)`.
    pub r_hat: f64,
    /// `Ŵ`.
    pub total: f64,
    /// `Ŵ / Q`, the outcome-averaged objective.
    pub normalized_total: f64,
}

impl RewardBreakdown {
    /// Mass of the predicted set, `1 − ignorance_mass`.
    pub fn predicted_mass(&self) -> f64 {
        1.0 - self.ignorance_mass
    }

    pub fn num_archetypes(&self) -> usize {
        self.delta_by_group.len()
    }
}

/// Weighted per-outcome mean `φ̂*(g)` of every non-empty archetype.
pub fn group_means(table: &EstimateTable, part: &Partition) -> BTreeMap<usize, Vec<f64>> {
    let q = table.num_outcomes();
    let mut acc: BTreeMap<usize, (f64, Vec<f64>)> = BTreeMap::new();
    for (row, &g) in table.rows().iter().zip(part.labels()) {
        if g == IGNORANCE {
            continue;
        }
        let entry = acc.entry(g).or_insert_with(|| (0.0, vec![0.0; q]));
        entry.0 += row.weight;
        for (s, phi) in entry.1.iter_mut().zip(&row.phi_hat) {
            *s += row.weight * phi;
        }
    }
    acc.into_iter()
        .map(|(g, (mass, sums))| {
            let means = sums
                .into_iter()
                .map(|s| if mass > 0.0 { s / mass } else { 0.0 })
                .collect();
            (g, means)
        })
        .collect()
}

/// Per-outcome `Δ̂_q(g)` for one group. Empty groups give zeros.
pub fn group_delta_per_outcome(table: &EstimateTable, part: &Partition, g: usize) -> Vec<f64> {
    let q = table.num_outcomes();
    let members: Vec<usize> = (0..table.len()).filter(|&i| part.label(i) == g).collect();
    delta_of_members(table, &members, q)
}

/// `Δ̂(g)`, summed over outcomes. `g` must be an archetype label.
pub fn group_delta(table: &EstimateTable, part: &Partition, g: usize) -> f64 {
    debug_assert!(g > IGNORANCE, "group_delta is defined for archetypes only");
    group_delta_per_outcome(table, part, g).iter().sum()
}

/// Two-pass `Δ̂` over an explicit member list: group mean first, then the
/// debiased squared deviations.
pub(crate) fn delta_of_members(table: &EstimateTable, members: &[usize], q: usize) -> Vec<f64> {
    let mass: f64 = members.iter().map(|&i| table.row(i).weight).sum();
    (0..q)
        .map(|k| {
            if members.is_empty() {
                return 0.0;
            }
            let mean = members
                .iter()
                .map(|&i| table.row(i).weight * table.row(i).phi_hat[k])
                .sum::<f64>()
                / mass;
            members
                .iter()
                .map(|&i| {
                    let row = table.row(i);
                    let dev = mean - row.phi_hat[k];
                    row.weight * (dev * dev - row.eta2_hat[k])
                })
                .sum()
        })
        .collect()
}

/// Debiased empirical reward `Ŵ` of `part`.
pub fn empirical_reward(
    table: &EstimateTable,
    part: &Partition,
    params: &RewardParams,
) -> Result<RewardBreakdown> {
    part.check_covers(table)?;
    params.sigma2.validate(table.len())?;
    if let Some(l) = part.labels().iter().find(|l| **l > params.groups) {
        return Err(Error::Invalid(format!(
            "label {l} exceeds G = {}",
            params.groups
        )));
    }
    let q = table.num_outcomes();

    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut ignorance_mass = 0.0;
    let mut ignorance_cost = 0.0;
    for (i, &g) in part.labels().iter().enumerate() {
        if g == IGNORANCE {
            let w = table.row(i).weight;
            ignorance_mass += w;
            ignorance_cost += params.sigma2.at(i) * w;
        } else {
            members.entry(g).or_default().push(i);
        }
    }

    let mut per_outcome = vec![BTreeMap::new(); q];
    let mut delta_by_group = BTreeMap::new();
    for (&g, idx) in &members {
        let deltas = delta_of_members(table, idx, q);
        for (k, d) in deltas.iter().enumerate() {
            per_outcome[k].insert(g, *d);
        }
        delta_by_group.insert(g, deltas.iter().sum::<f64>());
    }
    let r_hat: f64 = delta_by_group.values().sum();
    let total = -(r_hat + ignorance_cost);
    Ok(RewardBreakdown {
        delta_by_group,
        per_outcome,
        ignorance_mass,
        ignorance_cost,
        r_hat,
        total,
        normalized_total: total / q as f64,
    })
}

/// Population reward `W_φ(π; φ̄)` under squared loss.
///
/// `truth[i]` and `predictions[i]` are per-outcome vectors for row `i`;
/// predictions of ignorance rows are not read.
pub fn population_reward(
    truth: &[Vec<f64>],
    weights: &[f64],
    part: &Partition,
    predictions: &[Vec<f64>],
    sigma2: &Sigma2,
) -> f64 {
    let mut loss = 0.0;
    for (i, (phi, w)) in truth.iter().zip(weights).enumerate() {
        if part.is_predicted(i) {
            let sq: f64 = predictions[i]
                .iter()
                .zip(phi)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            loss += w * sq;
        } else {
            loss += w * sigma2.at(i);
        }
    }
    -loss
}

/// Realized audience loss for one draw of new evidence: predicted rows use
/// `predictions`, ignorance rows use `phi_new`. Its expectation over `phi_new`
/// with mean `truth` and variance `σ²` is `−W_φ`.
pub fn audience_loss(
    truth: &[Vec<f64>],
    weights: &[f64],
    part: &Partition,
    predictions: &[Vec<f64>],
    phi_new: &[Vec<f64>],
) -> f64 {
    truth
        .iter()
        .zip(weights)
        .enumerate()
        .map(|(i, (phi, w))| {
            let used = if part.is_predicted(i) {
                &predictions[i]
            } else {
                &phi_new[i]
            };
            w * phi
                .iter()
                .zip(used)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum()
}

/// Population group means `φ̄*_α(x)` of the truth, broadcast to rows. Rows in
/// the basin of ignorance get zeros.
pub fn population_group_means(
    truth: &[Vec<f64>],
    weights: &[f64],
    part: &Partition,
) -> Vec<Vec<f64>> {
    let q = truth.first().map_or(0, Vec::len);
    let mut acc: BTreeMap<usize, (f64, Vec<f64>)> = BTreeMap::new();
    for (i, (phi, w)) in truth.iter().zip(weights).enumerate() {
        let g = part.label(i);
        if g == IGNORANCE {
            continue;
        }
        let e = acc.entry(g).or_insert_with(|| (0.0, vec![0.0; q]));
        e.0 += w;
        for (s, v) in e.1.iter_mut().zip(phi) {
            *s += w * v;
        }
    }
    (0..truth.len())
        .map(|i| match acc.get(&part.label(i)) {
            Some((m, s)) if part.is_predicted(i) => s.iter().map(|v| v / m).collect(),
            _ => vec![0.0; q],
        })
        .collect()
}

/// One point of the `σ²` frontier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub sigma2: f64,
    pub basin_mass: f64,
    pub r_hat: f64,
    pub w_hat: f64,
    pub n_archetypes: usize,
    /// Fitter error at this grid point; the numeric fields are NaN when set.
    pub error: Option<String>,
}

/// Fits one partition per grid value with `fit` and tabulates abstention mass
/// against tolerated approximation error. Fitter errors are recorded per
/// point and the sweep continues.
pub fn sigma_frontier<F>(
    table: &EstimateTable,
    grid: &[f64],
    groups: usize,
    fit: F,
) -> Result<Vec<FrontierRow>>
where
    F: Fn(f64) -> Result<Partition> + Sync,
{
    if grid.is_empty() {
        return Err(Error::Invalid("sigma2 grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Invalid("sigma2 grid must be ascending".into()));
    }
    use rayon::prelude::*;
    let rows = grid
        .par_iter()
        .map(|&s| {
            let outcome = fit(s).and_then(|part| {
                empirical_reward(table, &part, &RewardParams::new(s, groups))
            });
            match outcome {
                Ok(b) => FrontierRow {
                    sigma2: s,
                    basin_mass: b.ignorance_mass,
                    r_hat: b.r_hat,
                    w_hat: b.total,
                    n_archetypes: b.num_archetypes(),
                    error: None,
                },
                Err(e) => FrontierRow {
                    sigma2: s,
                    basin_mass: f64::NAN,
                    r_hat: f64::NAN,
                    w_hat: f64::NAN,
                    n_archetypes: 0,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(rows)
}

/// Sufficient statistics of a set of rows; `Δ̂` and the ignorance cost follow
/// in one pass without recomputing the mean.
#[derive(Debug, Clone, Default)]
pub(crate) struct GroupStats {
    pub count: usize,
    pub mass: f64,
    pub ignorance_cost: f64,
    sum_wphi: Vec<f64>,
    sum_wphi2: Vec<f64>,
    sum_weta: Vec<f64>,
}

impl GroupStats {
    pub fn new(q: usize) -> Self {
        Self {
            sum_wphi: vec![0.0; q],
            sum_wphi2: vec![0.0; q],
            sum_weta: vec![0.0; q],
            ..Self::default()
        }
    }

    #[inline]
    pub fn add(&mut self, table: &EstimateTable, i: usize, sigma2: &Sigma2) {
        let row = table.row(i);
        let w = row.weight;
        self.count += 1;
        self.mass += w;
        self.ignorance_cost += w * sigma2.at(i);
        for k in 0..self.sum_wphi.len() {
            let phi = row.phi_hat[k];
            self.sum_wphi[k] += w * phi;
            self.sum_wphi2[k] += w * phi * phi;
            self.sum_weta[k] += w * row.eta2_hat[k];
        }
    }

    /// `Δ̂` of the set, summed over outcomes.
    pub fn delta(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        (0..self.sum_wphi.len())
            .map(|k| {
                self.sum_wphi2[k] - self.sum_wphi[k] * self.sum_wphi[k] / self.mass
                    - self.sum_weta[k]
            })
            .sum()
    }
}
