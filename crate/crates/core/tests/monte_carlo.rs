//! Monte Carlo checks of estimators, inference and forests against known
//! data-generating processes. Seeds are fixed; tolerances are 3 MC standard
//! errors unless stated.

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use gaware::estimate::{
    build_table, dr_pseudo_outcomes, ipw_pseudo_outcomes, parametric_variance_table, split_for_inference,
    BuildOptions, Estimator, TypeKey, VarianceMode,
};
use gaware::forest::{fit_forest, predict_with_scores, ForestOptions};
use gaware::inference::{fit_out_of_sample, prune_partition_set, Centering};
use gaware::regression::{FittedRegression, RegressionOracle, RidgeCv, ZeroRegression};
use gaware::simbench::{generate_dgp, run_benchmark, summarize, Method, SimConfig};
use gaware::{EstimateTable, Partition, RawStudy, Result, SearchConfig, TypeRow, Unit, IGNORANCE};

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn sample_var(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// `types` types in one environment, `units` units each, covariate `x = t / types`,
/// control outcome `4x + N(0, 1)`, effect `1 + x`.
fn linear_study(g: &mut ChaCha8Rng, types: usize, units: usize) -> RawStudy {
    let mut all = Vec::with_capacity(types * units);
    for t in 0..types {
        let x = t as f64 / types as f64;
        for _ in 0..units {
            let treated = g.random_bool(0.5);
            let z: f64 = StandardNormal.sample(g);
            let y0 = 4.0 * x + z;
            all.push(Unit {
                y: vec![if treated { y0 + 1.0 + x } else { y0 }],
                treated,
                propensity: 0.5,
                covariates: vec![x],
                env: "e".into(),
            });
        }
    }
    RawStudy::new(all, vec!["y".into()], vec!["x".into()]).unwrap()
}

fn opts(seed: u64) -> BuildOptions {
    BuildOptions {
        key: TypeKey::EnvAndCovariates,
        variance: VarianceMode::PerType,
        seed,
    }
}

/// Per-type MC draws of `(φ̂, η̂²)` from `build`, `reps` replications.
fn draws<F>(reps: usize, types: usize, units: usize, build: F) -> Vec<Vec<(f64, f64)>>
where
    F: Fn(&RawStudy, u64) -> EstimateTable + Sync,
{
    let per_rep: Vec<Vec<(f64, f64)>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut g = ChaCha8Rng::seed_from_u64(rep as u64);
            let study = linear_study(&mut g, types, units);
            let t = build(&study, rep as u64);
            t.rows().iter().map(|r| (r.phi_hat[0], r.eta2_hat[0])).collect()
        })
        .collect();
    (0..types).map(|t| per_rep.iter().map(|r| r[t]).collect()).collect()
}

#[test]
fn ipw_estimates_and_variances_are_unbiased() {
    let types = 5;
    let by_type = draws(10_000, types, 6, |s, seed| ipw_pseudo_outcomes(s, &opts(seed)).unwrap());
    for (t, d) in by_type.iter().enumerate() {
        let truth = 1.0 + t as f64 / types as f64;
        let phi: Vec<f64> = d.iter().map(|p| p.0).collect();
        let (m, se) = mean_se(&phi);
        assert!((m - truth).abs() <= 3.0 * se, "type {t}: mean {m} vs {truth} (se {se})");
        // η̂² is unbiased for the sampling variance of φ̂
        let eta: Vec<f64> = d.iter().map(|p| p.1).collect();
        let (e, se_e) = mean_se(&eta);
        let v = sample_var(&phi);
        let se_v = v * (2.0 / (phi.len() as f64 - 1.0)).sqrt();
        let tol = 3.0 * (se_e * se_e + se_v * se_v).sqrt();
        assert!((e - v).abs() <= tol, "type {t}: mean eta2 {e} vs MC variance {v} (tol {tol})");
    }
}

#[test]
fn doubly_robust_with_zero_oracle_is_ipw() {
    let mut g = ChaCha8Rng::seed_from_u64(3);
    let study = linear_study(&mut g, 10, 5);
    let ipw = ipw_pseudo_outcomes(&study, &opts(1)).unwrap();
    let dr = dr_pseudo_outcomes(&study, &ZeroRegression, 3, &opts(1)).unwrap().table;
    for (a, b) in ipw.rows().iter().zip(dr.rows()) {
        assert_eq!(a.phi_hat, b.phi_hat);
        assert_eq!(a.eta2_hat, b.eta2_hat);
    }
}

#[test]
fn doubly_robust_reduces_variance_and_parametric_variance_is_calibrated() {
    let (types, units, reps) = (20, 20, 400);
    let ridge = RidgeCv::default();
    let ipw = draws(reps, types, units, |s, seed| ipw_pseudo_outcomes(s, &opts(seed)).unwrap());
    let dr = draws(reps, types, units, |s, seed| {
        dr_pseudo_outcomes(s, &ridge, 5, &opts(seed)).unwrap().table
    });
    let param = draws(reps, types, units, |s, seed| {
        parametric_variance_table(s, &ridge, 5, false, &opts(seed)).unwrap().table
    });
    let avg_var = |d: &Vec<Vec<(f64, f64)>>| {
        d.iter().map(|t| sample_var(&t.iter().map(|p| p.0).collect::<Vec<_>>())).sum::<f64>() / types as f64
    };
    let (v_ipw, v_dr) = (avg_var(&ipw), avg_var(&dr));
    assert!(v_dr < 0.5 * v_ipw, "DR variance {v_dr} vs IPW {v_ipw}");
    let v_param = avg_var(&param);
    let eta = param.iter().flat_map(|t| t.iter().map(|p| p.1)).sum::<f64>() / (types * reps) as f64;
    assert!((eta / v_param - 1.0).abs() < 0.10, "parametric eta2 {eta} vs MC variance {v_param}");
}

/// Records every training set and every query point of its fits.
#[derive(Default)]
struct Recorder {
    fits: Mutex<Vec<(BTreeSet<u64>, Arc<Mutex<Vec<u64>>>)>>,
}

struct Recorded {
    queries: Arc<Mutex<Vec<u64>>>,
}

impl FittedRegression for Recorded {
    fn predict(&self, x: &[f64]) -> f64 {
        self.queries.lock().unwrap().push(x[0].to_bits());
        0.0
    }
}

impl RegressionOracle for Recorder {
    fn fit(&self, x: &[Vec<f64>], _y: &[f64]) -> Result<Box<dyn FittedRegression>> {
        let queries = Arc::new(Mutex::new(Vec::new()));
        let train = x.iter().map(|v| v[0].to_bits()).collect();
        self.fits.lock().unwrap().push((train, queries.clone()));
        Ok(Box::new(Recorded { queries }))
    }
}

#[test]
fn cross_fitting_never_predicts_a_training_unit() {
    let mut g = ChaCha8Rng::seed_from_u64(4);
    let units: Vec<Unit> = (0..60)
        .map(|i| Unit {
            y: vec![g.random()],
            treated: i % 3 != 0,
            propensity: 0.6,
            covariates: vec![i as f64 + 0.5],
            env: if i < 30 { "a".into() } else { "b".into() },
        })
        .collect();
    let study = RawStudy::new(units, vec!["y".into()], vec!["x".into()]).unwrap();
    let rec = Recorder::default();
    let o = BuildOptions {
        key: TypeKey::Unit,
        variance: VarianceMode::PooledWithinEnv,
        seed: 8,
    };
    build_table(&study, Estimator::DoublyRobust { oracle: &rec, folds: 4 }, &o).unwrap();
    let fits = rec.fits.into_inner().unwrap();
    // 2 environments x 4 folds x 2 arms
    assert_eq!(fits.len(), 16);
    let mut queried = std::collections::BTreeMap::<u64, usize>::new();
    for (train, queries) in &fits {
        for q in queries.lock().unwrap().iter() {
            assert!(!train.contains(q), "unit predicted by a model trained on it");
            *queried.entry(*q).or_default() += 1;
        }
    }
    assert_eq!(queried.len(), 60);
    assert!(queried.values().all(|&c| c == 2), "each unit gets one prediction per arm");
}

#[test]
fn split_halves_are_uncorrelated() {
    let reps = 2000;
    let pairs: Vec<(f64, f64)> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut g = ChaCha8Rng::seed_from_u64(50_000 + rep as u64);
            let study = linear_study(&mut g, 3, 8);
            let s = split_for_inference(&study, Estimator::Ipw, &opts(rep as u64)).unwrap();
            (s.main.row(1).phi_hat[0], s.holdout.row(1).phi_hat[0])
        })
        .collect();
    let (a, b): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let (ma, mb) = (a.iter().sum::<f64>() / reps as f64, b.iter().sum::<f64>() / reps as f64);
    let cov = pairs.iter().map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (reps - 1) as f64;
    let rho = cov / (sample_var(&a) * sample_var(&b)).sqrt();
    assert!(rho.abs() < 3.0 / (reps as f64).sqrt(), "correlation {rho}");
}

/// Gaussian estimates on an evenly spaced grid; `phi(u)` for `u ∈ (0, 1)`.
fn gaussian(g: &mut ChaCha8Rng, n: usize, phi: impl Fn(f64) -> f64) -> EstimateTable {
    let rows = (0..n)
        .map(|i| {
            let u = (i as f64 + 0.5) / n as f64;
            let z: f64 = StandardNormal.sample(g);
            let chi: f64 = (0..3).map(|_| -> f64 { StandardNormal.sample(g) }).map(|z| z * z).sum();
            TypeRow {
                type_id: format!("x{i:05}"),
                covariates: vec![u],
                weight: 1.0,
                phi_hat: vec![phi(u) + z],
                eta2_hat: vec![chi / 3.0],
            }
        })
        .collect();
    EstimateTable::new(rows, vec!["y".into()], vec!["u".into()]).unwrap()
}

fn step(u: f64) -> f64 {
    if u <= 0.5 {
        0.0
    } else {
        1.0
    }
}

#[test]
fn out_of_sample_partition_is_consistent() {
    let n = 2000;
    let cfg = SearchConfig::new(1, 1, 3, 1.0);
    let hits = (0..100)
        .into_par_iter()
        .filter(|&rep| {
            let mut g = ChaCha8Rng::seed_from_u64(60_000 + rep as u64);
            let main = gaussian(&mut g, n, step);
            let holdout = gaussian(&mut g, n, step);
            let o = fit_out_of_sample(&main, &holdout, &cfg).unwrap();
            // two archetypes split exactly at the step
            let (left, right) = (o.partition.label(0), o.partition.label(n - 1));
            left != IGNORANCE
                && right != IGNORANCE
                && left != right
                && (0..n).all(|i| o.partition.label(i) == if 2 * i < n { left } else { right })
        })
        .count();
    assert!(hits >= 90, "recovered the true partition in {hits}/100");
}

#[test]
fn power_grows_with_the_number_of_types() {
    let cfg = SearchConfig::new(1, 1, 3, 0.1);
    let alternative = |u: f64| 0.2 * step(u);
    let rate = |n: usize| {
        let alpha = Partition::new((0..n).map(|i| if 2 * i < n { 2 } else { IGNORANCE }).collect(), 3).unwrap();
        (0..200)
            .into_par_iter()
            .filter(|&rep| {
                let mut g = ChaCha8Rng::seed_from_u64(70_000 + (n * 1000 + rep) as u64);
                let main = gaussian(&mut g, n, alternative);
                let holdout = gaussian(&mut g, n, alternative);
                let r = prune_partition_set(&main, &holdout, &[("a".into(), alpha.clone())], 0.1, &cfg, Centering::Global)
                    .unwrap();
                !r.reports[0].retained
            })
            .count() as f64
            / 200.0
    };
    let rates: Vec<f64> = [250, 1000, 4000].into_iter().map(rate).collect();
    assert!(rates[0] < rates[1] && rates[1] < rates[2], "rejection rates {rates:?}");
    assert!(rates[2] > 0.8, "rejection rates {rates:?}");
}

#[test]
fn basin_recovered_with_three_archetypes() {
    let config = SimConfig {
        groups: 4,
        ..SimConfig::default()
    };
    let report = run_benchmark(&config, &[3.0], &[Method::Gaware { sigma2: 2.0 }]).unwrap();
    let recall = summarize(&report, 2.0).rows[0].recall.unwrap();
    assert!(recall >= 0.9, "median recall {recall}");
}

#[test]
fn simulated_estimates_match_known_moments() {
    let config = SimConfig::default();
    let data = generate_dgp(&config, 11).unwrap();
    let table = ipw_pseudo_outcomes(&data.study, &opts(0)).unwrap();
    let phi: Vec<f64> = table
        .rows()
        .iter()
        .filter(|r| !data.basin.contains(&r.type_id) && r.covariates[0] < 5.0)
        .map(|r| r.phi_hat[0])
        .collect();
    let (m, se) = mean_se(&phi);
    assert!((m - 0.3).abs() <= 3.0 * se, "non-basin mean {m} (se {se})");
    // sample variance against the exact IPW sampling variance
    let v = sample_var(&phi);
    let dev: Vec<f64> = phi.iter().map(|p| (p - m).powi(2)).collect();
    let m4 = dev.iter().map(|d| d * d).sum::<f64>() / dev.len() as f64;
    let se_v = ((m4 - v * v) / dev.len() as f64).sqrt();
    let want = config.ipw_variance(0.3);
    assert!((v - want).abs() <= 3.0 * se_v, "variance {v} vs {want} (se {se_v})");
}

/// Left 80% of `x0` homogeneous, right 20% wildly heterogeneous; `x1` is noise.
fn basin_table(g: &mut ChaCha8Rng, n: usize) -> (EstimateTable, Vec<f64>) {
    let mut truth = Vec::with_capacity(n);
    let rows = (0..n)
        .map(|i| {
            let (x0, x1): (f64, f64) = (g.random(), g.random());
            let phi = if x0 > 0.8 { if g.random_bool(0.5) { 5.0 } else { -5.0 } } else { 1.0 };
            truth.push(phi);
            let z: f64 = StandardNormal.sample(g);
            TypeRow {
                type_id: format!("x{i:04}"),
                covariates: vec![x0, x1],
                weight: 1.0,
                phi_hat: vec![phi + 0.1 * z],
                eta2_hat: vec![0.01],
            }
        })
        .collect();
    (EstimateTable::new(rows, vec!["y".into()], vec!["x0".into(), "x1".into()]).unwrap(), truth)
}

#[test]
fn forest_scores_separate_basin_and_averaging_helps() {
    let mut g = ChaCha8Rng::seed_from_u64(90);
    let (table, truth) = basin_table(&mut g, 400);
    let opts = ForestOptions {
        trees: 50,
        vars: 1,
        seed: 5,
        bootstrap: true,
    };
    let model = fit_forest(&table, &SearchConfig::new(2, 4, 5, 1.0), &opts).unwrap();
    let preds = predict_with_scores(&model, &table).unwrap();
    let basin: Vec<f64> = (0..400).filter(|&i| table.row(i).covariates[0] > 0.8).map(|i| preds[i].score).collect();
    let rest: Vec<f64> = (0..400).filter(|&i| table.row(i).covariates[0] <= 0.8).map(|i| preds[i].score).collect();
    let ordered = rest.iter().flat_map(|a| basin.iter().map(move |b| a > b)).filter(|&x| x).count();
    let share = ordered as f64 / (rest.len() * basin.len()) as f64;
    assert!(share >= 0.95, "score separation {share}");

    // squared error of the averaged prediction never exceeds the trees' mean error
    for (i, p) in preds.iter().enumerate() {
        let Some(avg) = &p.prediction else { continue };
        let per_tree: Vec<f64> = model
            .trees
            .iter()
            .filter_map(|t| t.tree.predict(&table.row(i).covariates).map(|v| (v[0] - truth[i]).powi(2)))
            .collect();
        let mean_err = per_tree.iter().sum::<f64>() / per_tree.len() as f64;
        assert!((avg[0] - truth[i]).powi(2) <= mean_err + 1e-12);
    }
}
