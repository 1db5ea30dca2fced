//! Monte Carlo benchmark on a synthetic study with a contaminated region.
//!
//! Types live in several environments, each with a fixed treatment effect.
//! In the last environment, types above a consumption cutoff form the basin:
//! their effects are drawn from a Cauchy law around that environment's mean.
//! Methods are scored on the types that are truly outside the basin.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Instant;

use rand::Rng as _;
use rand_distr::{Cauchy, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{ipw_pseudo_outcomes, unit_type_ids, BuildOptions, TypeKey, VarianceMode};
use crate::model::{EstimateTable, RawStudy, Unit};
use crate::rng;
use crate::tree::{fit_gaware_tree, SearchConfig};
use crate::tree_model::TreeModel;

/// Penalty standing in for "never abstain".
pub const PLAIN_SIGMA2: f64 = 1e9;
/// Cauchy draws are clipped to this magnitude.
pub const CAUCHY_CLIP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_types: usize,
    pub units_per_type: usize,
    /// Share of all types that fall in the basin.
    pub basin_fraction: f64,
    /// Treatment effect of each environment; the last one hosts the basin.
    pub archetype_means: Vec<f64>,
    /// Location of the basin's Cauchy law; defaults to the last environment's mean.
    pub basin_center: Option<f64>,
    /// Cauchy scale `s`.
    pub scale: f64,
    pub noise_var: f64,
    pub treatment_prob: f64,
    pub reps: usize,
    pub seed: u64,
    pub depth: usize,
    pub splits: usize,
    pub min_leaf: usize,
    pub groups: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_types: 2000,
            units_per_type: 2,
            basin_fraction: 0.04,
            archetype_means: vec![0.3, 0.3, 0.3, 0.3, 0.3, 0.0],
            basin_center: None,
            scale: 1.0,
            noise_var: 1.0,
            treatment_prob: 0.5,
            reps: 50,
            seed: 2024,
            depth: 2,
            splits: 5,
            min_leaf: 20,
            groups: 5,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let envs = self.archetype_means.len();
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if envs == 0 {
            return bad("at least one environment is needed");
        }
        if self.n_types == 0 || self.reps == 0 {
            return bad("n_types and reps must be positive");
        }
        if self.units_per_type < 2 {
            return bad("per-type variances need at least 2 units per type");
        }
        if !(self.basin_fraction > 0.0 && self.basin_fraction < 1.0) {
            return bad("basin fraction must lie in (0, 1)");
        }
        if self.basin_fraction * envs as f64 >= 1.0 {
            return bad("basin fraction exceeds the share of the last environment");
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return bad("Cauchy scale must be positive");
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return bad("noise variance must be finite and non-negative");
        }
        if !(self.treatment_prob > 0.0 && self.treatment_prob < 1.0) {
            return bad("treatment probability must lie in (0, 1)");
        }
        if self.archetype_means.iter().chain(&self.basin_center).any(|m| !m.is_finite()) {
            return bad("archetype means must be finite");
        }
        Ok(())
    }

    pub fn search(&self, sigma2: f64) -> SearchConfig {
        SearchConfig::new(self.depth, self.splits, self.groups, sigma2).with_min_leaf(self.min_leaf)
    }

    fn center(&self) -> f64 {
        self.basin_center
            .unwrap_or(*self.archetype_means.last().expect("validated"))
    }

    /// Consumption above which a type in the last environment is in the basin.
    pub fn basin_cutoff(&self) -> f64 {
        1.0 - self.basin_fraction * self.archetype_means.len() as f64
    }

    /// Exact sampling variance of a type's IPW mean given its effect.
    pub fn ipw_variance(&self, phi: f64) -> f64 {
        let (o, v) = (self.treatment_prob, self.noise_var);
        ((phi * phi + v) / o + v / (1.0 - o) - phi * phi) / self.units_per_type as f64
    }
}

/// One simulated study with its ground truth.
#[derive(Debug, Clone)]
pub struct SimData {
    pub study: RawStudy,
    /// True effect of each type, keyed by type id.
    pub truth: BTreeMap<String, f64>,
    pub basin: BTreeSet<String>,
    /// Number of Cauchy draws that hit the clip.
    pub clipped: usize,
}

/// Draws a study. Uniform and Cauchy draws do not depend on the scale, so
/// studies from the same seed at different scales share their randomness.
pub fn generate_dgp(config: &SimConfig, seed: u64) -> Result<SimData> {
    config.validate()?;
    let envs = config.archetype_means.len();
    let cutoff = config.basin_cutoff();
    let center = config.center();
    let cauchy = Cauchy::new(0.0, 1.0).expect("unit scale");
    let sd = config.noise_var.sqrt();
    let mut g = rng::rng(seed);
    let mut units = Vec::with_capacity(config.n_types * config.units_per_type);
    let mut effects = Vec::with_capacity(config.n_types);
    let mut in_basin = Vec::with_capacity(config.n_types);
    let mut clipped = 0;
    for t in 0..config.n_types {
        let env = t % envs;
        let consumption: f64 = g.random();
        let assets = 0.5 * consumption + 0.5 * g.random::<f64>();
        let c: f64 = cauchy.sample(&mut g);
        let basin = env == envs - 1 && consumption > cutoff;
        let phi = if basin {
            let raw = center + config.scale * c;
            if raw.abs() > CAUCHY_CLIP {
                clipped += 1;
            }
            raw.clamp(-CAUCHY_CLIP, CAUCHY_CLIP)
        } else {
            config.archetype_means[env]
        };
        for _ in 0..config.units_per_type {
            let treated = g.random::<f64>() < config.treatment_prob;
            let eps: f64 = g.sample(StandardNormal);
            let y = if treated { phi } else { 0.0 } + sd * eps;
            units.push(Unit {
                y: vec![y],
                treated,
                propensity: config.treatment_prob,
                covariates: vec![env as f64, consumption, assets],
                env: format!("env{env}"),
            });
        }
        effects.push(phi);
        in_basin.push(basin);
    }
    let study = RawStudy::new(
        units,
        vec!["outcome".into()],
        vec!["country".into(), "consumption".into(), "assets".into()],
    )?;
    let ids = unit_type_ids(&study, TypeKey::EnvAndCovariates);
    let mut truth = BTreeMap::new();
    let mut basin = BTreeSet::new();
    for t in 0..config.n_types {
        let id = &ids[t * config.units_per_type];
        truth.insert(id.clone(), effects[t]);
        if in_basin[t] {
            basin.insert(id.clone());
        }
    }
    Ok(SimData {
        study,
        truth,
        basin,
        clipped,
    })
}

/// Per-type variance used by a shrinkage baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceSource {
    /// The data-generating sampling variance.
    Known,
    /// The table's `η̂²`.
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Method {
    Gaware { sigma2: f64 },
    PlainTree,
    Shrinkage { variance: VarianceSource },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Gaware { .. } => "gaware",
            Method::PlainTree => "plain_tree",
            Method::Shrinkage {
                variance: VarianceSource::Known,
            } => "shrinkage_known",
            Method::Shrinkage {
                variance: VarianceSource::Estimated,
            } => "shrinkage_estimated",
        }
    }

    pub fn sigma2(&self) -> Option<f64> {
        match self {
            Method::Gaware { sigma2 } => Some(*sigma2),
            _ => None,
        }
    }

    /// G-Aware over `grid`, the plain tree and both shrinkage variants.
    pub fn standard_set(grid: &[f64]) -> Vec<Method> {
        let mut m: Vec<Method> = grid.iter().map(|&s| Method::Gaware { sigma2: s }).collect();
        m.push(Method::PlainTree);
        m.push(Method::Shrinkage {
            variance: VarianceSource::Known,
        });
        m.push(Method::Shrinkage {
            variance: VarianceSource::Estimated,
        });
        m
    }
}

/// Posterior-mean shrinkage of each type's estimate toward the mean of its
/// tree leaf. Within a leaf, the prior variance is the weighted variance of
/// `φ̂` less the weighted mean of `eta2`, floored at zero.
pub fn shrinkage_baseline(table: &EstimateTable, tree: &TreeModel, eta2: &[f64]) -> Vec<f64> {
    let mut leaves: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, row) in table.rows().iter().enumerate() {
        leaves.entry(tree.leaf_index(&row.covariates)).or_default().push(i);
    }
    let mut out = vec![0.0; table.len()];
    for members in leaves.values() {
        let rows = table.rows();
        let mass: f64 = members.iter().map(|&i| rows[i].weight).sum();
        let mean = members.iter().map(|&i| rows[i].weight * rows[i].phi_hat[0]).sum::<f64>() / mass;
        let spread = members
            .iter()
            .map(|&i| rows[i].weight * (rows[i].phi_hat[0] - mean).powi(2))
            .sum::<f64>()
            / mass;
        let noise = members.iter().map(|&i| rows[i].weight * eta2[i]).sum::<f64>() / mass;
        let tau2 = (spread - noise).max(0.0);
        for &i in members {
            let phi = rows[i].phi_hat[0];
            out[i] = if eta2[i] == 0.0 {
                phi
            } else {
                mean + tau2 / (tau2 + eta2[i]) * (phi - mean)
            };
        }
    }
    out
}

/// Scores of one method on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub sigma2: Option<f64>,
    pub scale: f64,
    pub rep: usize,
    /// Mean squared error against the true effect over truly generalizable
    /// types that receive a prediction; `None` when there are none.
    pub error: Option<f64>,
    /// Same set, measured against the type's own estimate instead of the truth.
    pub pseudo_error: Option<f64>,
    /// Share of truly generalizable types that receive a prediction.
    pub coverage: f64,
    pub recall: f64,
    pub precision: f64,
    /// Share of types left unpredicted.
    pub basin_size: f64,
    pub runtime_ms: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: SimConfig,
    pub scales: Vec<f64>,
    pub rows: Vec<BenchRow>,
    pub clipped: usize,
}

/// Squared error over `(prediction, truth)` pairs, accumulated type by type.
pub fn error_by_type(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    for &(p, t) in pairs {
        sum += (p - t) * (p - t);
    }
    Some(sum / pairs.len() as f64)
}

/// The same quantity from per-prediction moments: `Σ c·m² − 2mΣt + Σt²`.
pub fn error_by_moments(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let mut moments: HashMap<u64, (f64, f64, f64)> = HashMap::new();
    for &(p, t) in pairs {
        let m = moments.entry(p.to_bits()).or_default();
        m.0 += 1.0;
        m.1 += t;
        m.2 += t * t;
    }
    let mut keys: Vec<u64> = moments.keys().copied().collect();
    keys.sort_unstable();
    let total: f64 = keys
        .iter()
        .map(|k| {
            let (c, s1, s2) = moments[k];
            let m = f64::from_bits(*k);
            (c * m * m - 2.0 * m * s1 + s2).max(0.0)
        })
        .sum();
    Some(total / pairs.len() as f64)
}

fn score(
    method: &Method,
    scale: f64,
    rep: usize,
    data: &SimData,
    table: &EstimateTable,
    predictions: &[Option<f64>],
) -> BenchRow {
    let mut truth_pairs = Vec::new();
    let mut pseudo_pairs = Vec::new();
    let (mut generalizable, mut hits, mut abstained) = (0usize, 0usize, 0usize);
    for (row, pred) in table.rows().iter().zip(predictions) {
        let in_basin = data.basin.contains(&row.type_id);
        if pred.is_none() {
            abstained += 1;
            hits += usize::from(in_basin);
        }
        if !in_basin {
            generalizable += 1;
            if let Some(p) = pred {
                truth_pairs.push((*p, data.truth[&row.type_id]));
                pseudo_pairs.push((*p, row.phi_hat[0]));
            }
        }
    }
    let basin = data.basin.len();
    BenchRow {
        method: method.name().into(),
        sigma2: method.sigma2(),
        scale,
        rep,
        error: error_by_type(&truth_pairs),
        pseudo_error: error_by_type(&pseudo_pairs),
        coverage: if generalizable == 0 {
            0.0
        } else {
            truth_pairs.len() as f64 / generalizable as f64
        },
        recall: if basin == 0 { 0.0 } else { hits as f64 / basin as f64 },
        precision: if abstained == 0 {
            0.0
        } else {
            hits as f64 / abstained as f64
        },
        basin_size: abstained as f64 / table.len() as f64,
        runtime_ms: 0.0,
        failure: None,
    }
}

fn failed(method: &Method, scale: f64, rep: usize, e: &Error) -> BenchRow {
    BenchRow {
        method: method.name().into(),
        sigma2: method.sigma2(),
        scale,
        rep,
        error: None,
        pseudo_error: None,
        coverage: 0.0,
        recall: 0.0,
        precision: 0.0,
        basin_size: 0.0,
        runtime_ms: 0.0,
        failure: Some(e.to_string()),
    }
}

fn tree_predictions(table: &EstimateTable, tree: &TreeModel) -> Vec<Option<f64>> {
    table
        .rows()
        .iter()
        .map(|r| tree.predict(&r.covariates).map(|p| p[0]))
        .collect()
}

/// Seed of replication `rep`; shared by all scales.
pub fn replication_seed(master: u64, rep: usize) -> u64 {
    rng::derive(master, 61, rep as u64)
}

/// Runs every method on one replication at one scale.
pub fn run_replication(config: &SimConfig, methods: &[Method], rep: usize) -> Result<(Vec<BenchRow>, usize)> {
    let seed = replication_seed(config.seed, rep);
    let data = generate_dgp(config, seed)?;
    let opts = BuildOptions {
        key: TypeKey::EnvAndCovariates,
        variance: VarianceMode::PerType,
        seed,
    };
    let table = ipw_pseudo_outcomes(&data.study, &opts)?;
    let mut plain: Option<std::result::Result<TreeModel, String>> = None;
    let mut plain_tree = || -> std::result::Result<TreeModel, String> {
        plain
            .get_or_insert_with(|| {
                fit_gaware_tree(&table, &config.search(PLAIN_SIGMA2))
                    .map(|f| f.tree)
                    .map_err(|e| e.to_string())
            })
            .clone()
    };
    let mut rows = Vec::with_capacity(methods.len());
    for method in methods {
        let start = Instant::now();
        let preds: Result<Vec<Option<f64>>> = match method {
            Method::Gaware { sigma2 } => {
                fit_gaware_tree(&table, &config.search(*sigma2)).map(|f| tree_predictions(&table, &f.tree))
            }
            Method::PlainTree => plain_tree()
                .map(|t| tree_predictions(&table, &t))
                .map_err(Error::Invalid),
            Method::Shrinkage { variance } => plain_tree().map_err(Error::Invalid).map(|t| {
                let eta2: Vec<f64> = match variance {
                    VarianceSource::Known => table
                        .rows()
                        .iter()
                        .map(|r| config.ipw_variance(data.truth[&r.type_id]))
                        .collect(),
                    VarianceSource::Estimated => table.rows().iter().map(|r| r.eta2_hat[0]).collect(),
                };
                shrinkage_baseline(&table, &t, &eta2).into_iter().map(Some).collect()
            }),
        };
        let mut row = match preds {
            Ok(p) => score(method, config.scale, rep, &data, &table, &p),
            Err(e) => failed(method, config.scale, rep, &e),
        };
        row.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
        rows.push(row);
    }
    Ok((rows, data.clipped))
}

/// Runs `config.reps` replications at each scale. Replication `k` uses the
/// same seed at every scale. Rows come back ordered by scale, then
/// replication, then method.
pub fn run_benchmark(config: &SimConfig, scales: &[f64], methods: &[Method]) -> Result<BenchReport> {
    if methods.is_empty() {
        return Err(Error::Invalid("no methods to benchmark".into()));
    }
    if scales.is_empty() {
        return Err(Error::Invalid("no scales to benchmark".into()));
    }
    for &s in scales {
        SimConfig {
            scale: s,
            ..config.clone()
        }
        .validate()?;
    }
    let jobs: Vec<(f64, usize)> = scales
        .iter()
        .flat_map(|&s| (0..config.reps).map(move |r| (s, r)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(scale, rep)| {
            let cfg = SimConfig {
                scale,
                ..config.clone()
            };
            run_replication(&cfg, methods, rep)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(jobs.len() * methods.len());
    let mut clipped = 0;
    for (r, c) in results {
        rows.extend(r);
        clipped += c;
    }
    Ok(BenchReport {
        config: config.clone(),
        scales: scales.to_vec(),
        rows,
        clipped,
    })
}

/// Median of finite values; `None` when there are none.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Medians of one method at one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub sigma2: Option<f64>,
    pub scale: f64,
    pub error: Option<f64>,
    pub pseudo_error: Option<f64>,
    pub coverage: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub basin_size: Option<f64>,
    pub reps: usize,
    pub failures: usize,
}

/// Best G-Aware error at penalties up to `max_sigma2` against the plain tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Headline {
    pub scale: f64,
    pub best_sigma2: Option<f64>,
    pub best_gaware_error: Option<f64>,
    pub worst_gaware_error: Option<f64>,
    pub plain_tree_error: Option<f64>,
    /// `best_gaware_error / plain_tree_error`.
    pub ratio: Option<f64>,
    /// Lowest median basin recall over those penalties.
    pub min_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub headlines: Vec<Headline>,
    pub clipped: usize,
}

fn same_method(row: &BenchRow, method: &str, sigma2: Option<f64>) -> bool {
    row.method == method && row.sigma2.map(f64::to_bits) == sigma2.map(f64::to_bits)
}

/// Per (method, scale) medians over replications, plus one headline per scale.
pub fn summarize(report: &BenchReport, max_sigma2: f64) -> Summary {
    let mut keys: Vec<(String, Option<f64>)> = Vec::new();
    for r in &report.rows {
        if !keys.iter().any(|(m, s)| same_method(r, m, *s)) {
            keys.push((r.method.clone(), r.sigma2));
        }
    }
    let mut rows = Vec::new();
    for &scale in &report.scales {
        for (method, sigma2) in &keys {
            let sel: Vec<&BenchRow> = report
                .rows
                .iter()
                .filter(|r| r.scale.to_bits() == scale.to_bits() && same_method(r, method, *sigma2))
                .collect();
            let ok: Vec<&&BenchRow> = sel.iter().filter(|r| r.failure.is_none()).collect();
            rows.push(SummaryRow {
                method: method.clone(),
                sigma2: *sigma2,
                scale,
                error: median(ok.iter().filter_map(|r| r.error)),
                pseudo_error: median(ok.iter().filter_map(|r| r.pseudo_error)),
                coverage: median(ok.iter().map(|r| r.coverage)),
                recall: median(ok.iter().map(|r| r.recall)),
                precision: median(ok.iter().map(|r| r.precision)),
                basin_size: median(ok.iter().map(|r| r.basin_size)),
                reps: ok.len(),
                failures: sel.len() - ok.len(),
            });
        }
    }
    let headlines = report
        .scales
        .iter()
        .map(|&scale| {
            let at = |r: &&SummaryRow| r.scale.to_bits() == scale.to_bits();
            let gaware: Vec<&SummaryRow> = rows
                .iter()
                .filter(at)
                .filter(|r| r.method == "gaware" && r.sigma2.is_some_and(|s| s <= max_sigma2))
                .collect();
            let best = gaware
                .iter()
                .filter(|r| r.error.is_some())
                .min_by(|a, b| a.error.unwrap().total_cmp(&b.error.unwrap()));
            let worst = gaware.iter().filter_map(|r| r.error).max_by(f64::total_cmp);
            let plain = rows
                .iter()
                .filter(at)
                .find(|r| r.method == "plain_tree")
                .and_then(|r| r.error);
            let best_error = best.and_then(|r| r.error);
            Headline {
                scale,
                best_sigma2: best.and_then(|r| r.sigma2),
                best_gaware_error: best_error,
                worst_gaware_error: worst,
                plain_tree_error: plain,
                ratio: best_error.zip(plain).map(|(b, p)| b / p),
                min_recall: gaware.iter().filter_map(|r| r.recall).min_by(f64::total_cmp),
            }
        })
        .collect();
    Summary {
        rows,
        headlines,
        clipped: report.clipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TypeRow;
    use crate::tree_model::{Leaf, TreeMeta};

    fn small() -> SimConfig {
        SimConfig {
            n_types: 600,
            reps: 3,
            ..SimConfig::default()
        }
    }

    #[test]
    fn same_seed_same_draws() {
        let c = small();
        let a = generate_dgp(&c, 7).unwrap();
        let b = generate_dgp(&c, 7).unwrap();
        assert_eq!(a.study, b.study);
        assert_eq!(a.truth, b.truth);
        assert_ne!(generate_dgp(&c, 8).unwrap().study, a.study);
    }

    #[test]
    fn tiny_scale_puts_basin_at_its_center() {
        let c = SimConfig {
            scale: 1e-6,
            ..small()
        };
        let d = generate_dgp(&c, 1).unwrap();
        assert!(!d.basin.is_empty());
        for id in &d.basin {
            assert!(d.truth[id].abs() < 1e-3, "{}", d.truth[id]);
        }
    }

    #[test]
    fn basin_share_is_near_target() {
        let c = SimConfig {
            n_types: 6000,
            ..small()
        };
        let d = generate_dgp(&c, 3).unwrap();
        let share = d.basin.len() as f64 / 6000.0;
        // binomial sd is about 0.0025
        assert!((share - 0.04).abs() < 0.01, "{share}");
    }

    #[test]
    fn shrinkage_limits_and_hand_example() {
        let rows = vec![
            TypeRow {
                type_id: "a".into(),
                covariates: vec![0.0],
                weight: 0.5,
                phi_hat: vec![0.0],
                eta2_hat: vec![1.0],
            },
            TypeRow {
                type_id: "b".into(),
                covariates: vec![1.0],
                weight: 0.5,
                phi_hat: vec![4.0],
                eta2_hat: vec![1.0],
            },
        ];
        let table = EstimateTable::new(rows, vec!["y".into()], vec!["x".into()]).unwrap();
        let tree = TreeModel {
            meta: TreeMeta {
                format_version: crate::tree_model::FORMAT_VERSION,
                depth: 0,
                sigma2: Some(1.0),
                groups: 2,
                splits: 0,
                min_leaf: 1,
                split_rule: Default::default(),
                objective: 0.0,
                epsilon: 0.0,
                covariate_names: vec!["x".into()],
                outcome_names: vec!["y".into()],
            },
            nodes: vec![],
            leaves: vec![Leaf {
                ignorance: false,
                label: 2,
                prediction: Some(vec![2.0]),
                count: 2,
                mass: 1.0,
            }],
        };
        // leaf mean 2, spread 4, prior variance 4 - 1 = 3, weight 3/4
        let p = shrinkage_baseline(&table, &tree, &[1.0, 1.0]);
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 3.5).abs() < 1e-12, "{p:?}");
        assert_eq!(shrinkage_baseline(&table, &tree, &[0.0, 0.0]), vec![0.0, 4.0]);
        // noise swamps the spread: full shrinkage
        assert_eq!(shrinkage_baseline(&table, &tree, &[10.0, 10.0]), vec![2.0, 2.0]);
    }

    #[test]
    fn error_routes_agree() {
        let pairs: Vec<(f64, f64)> = (0..200)
            .map(|i| ((i % 3) as f64 * 0.7, (i as f64 * 0.37).sin() * 5.0))
            .collect();
        let a = error_by_type(&pairs).unwrap();
        let b = error_by_moments(&pairs).unwrap();
        assert!((a - b).abs() <= 1e-10 * a.max(1.0));
        assert_eq!(error_by_type(&[]), None);
    }

    #[test]
    fn plain_tree_matches_huge_penalty() {
        let c = small();
        let methods = [Method::PlainTree, Method::Gaware { sigma2: PLAIN_SIGMA2 }];
        let rep = run_benchmark(&c, &[2.0], &methods).unwrap();
        for pair in rep.rows.chunks(2) {
            assert_eq!(pair[0].error, pair[1].error);
            assert_eq!(pair[0].basin_size, pair[1].basin_size);
        }
    }

    #[test]
    fn summary_is_reproducible() {
        let c = small();
        let methods = Method::standard_set(&[0.5, 2.0]);
        let a = summarize(&run_benchmark(&c, &[0.1, 3.0], &methods).unwrap(), 2.0);
        let b = summarize(&run_benchmark(&c, &[0.1, 3.0], &methods).unwrap(), 2.0);
        assert_eq!(a, b);
        assert_eq!(a.headlines.len(), 2);
        for r in &a.rows {
            assert!(r.error.is_none_or(|e| e >= 0.0));
            assert!(r.recall.is_none_or(|v| (0.0..=1.0).contains(&v)));
        }
    }
}
