//! Split-sample test of whether a candidate partition attains the largest
//! reward, and Bonferroni pruning of a candidate set.
//!
//! A partition `α̂ᵒ` is fitted on the holdout half. On the main half the
//! statistic `T̂ = Ŵ(α̂ᵒ) − Ŵ(α)` is compared with `Φ⁻¹(1−γ*)·v̂/√|X|`, where
//! `v̂²` is the plug-in variance upper bound built from the per-type terms
//!
//! ```text
//! Y_x = (1{α̂ᵒ>1} − 1{α>1})(φ̂² − η̂²) − φ̂·(2φ̂*_{α̂ᵒ}·1{α̂ᵒ>1} − 2φ̂*_α·1{α>1})
//! ```
//!
//! summed over outcomes, with in-sample group means.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EstimateTable, Partition, IGNORANCE};
use crate::normal;
use crate::reward::{empirical_reward, group_means, RewardParams, Sigma2};
use crate::tree::{fit_gaware_tree, FitResult, SearchConfig};

/// Variance estimates below this are treated as zero.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

/// Centering of `Y_x` in the variance bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// One `p²`-weighted mean over all types.
    #[default]
    Global,
    /// Separate `p²`-weighted means within each group of `α̂ᵒ`; never larger
    /// than the global version.
    PerGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub candidate: String,
    pub t_hat: f64,
    pub v2_hat: f64,
    /// `Φ⁻¹(1−γ*)·√v̂²`.
    pub critical: f64,
    pub gamma_star: f64,
    pub retained: bool,
    /// `v̂²` below [`DEGENERATE_VARIANCE`]; such candidates are retained.
    pub degenerate: bool,
    /// One-sided p-value `1 − Φ(√|X|·T̂/v̂)`; NaN when degenerate.
    pub p_value: f64,
}

fn params(alpha: &Partition, alpha_o: &Partition, sigma2: &Sigma2) -> RewardParams {
    RewardParams {
        sigma2: sigma2.clone(),
        groups: alpha.groups().max(alpha_o.groups()),
    }
}

fn check(main: &EstimateTable, alpha: &Partition, alpha_o: &Partition) -> Result<()> {
    if alpha.len() != main.len() || alpha_o.len() != main.len() {
        return Err(Error::Invalid(format!(
            "partitions have {} and {} labels for {} types",
            alpha.len(),
            alpha_o.len(),
            main.len()
        )));
    }
    Ok(())
}

/// `T̂ = Ŵ(α̂ᵒ) − Ŵ(α)` on the main-half estimates.
pub fn test_statistic(
    main: &EstimateTable,
    alpha: &Partition,
    alpha_o: &Partition,
    sigma2: &Sigma2,
) -> Result<f64> {
    check(main, alpha, alpha_o)?;
    let p = params(alpha, alpha_o, sigma2);
    Ok(empirical_reward(main, alpha_o, &p)?.total - empirical_reward(main, alpha, &p)?.total)
}

/// Per-type terms `Y_x`, in row order.
pub fn y_terms(main: &EstimateTable, alpha: &Partition, alpha_o: &Partition) -> Result<Vec<f64>> {
    check(main, alpha, alpha_o)?;
    let mean_a = group_means(main, alpha);
    let mean_o = group_means(main, alpha_o);
    let y = main
        .rows()
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let (la, lo) = (alpha.label(i), alpha_o.label(i));
            let ha = f64::from(u8::from(la != IGNORANCE));
            let ho = f64::from(u8::from(lo != IGNORANCE));
            (0..main.num_outcomes())
                .map(|k| {
                    let phi = row.phi_hat[k];
                    let ga = mean_a.get(&la).map_or(0.0, |m| m[k]);
                    let go = mean_o.get(&lo).map_or(0.0, |m| m[k]);
                    (ho - ha) * (phi * phi - row.eta2_hat[k])
                        - phi * (2.0 * go * ho - 2.0 * ga * ha)
                })
                .sum()
        })
        .collect();
    Ok(y)
}

/// Plug-in variance upper bound `v̂² = |X|·Σ p²(Y_x − ȳ)²`.
pub fn variance_bound(
    main: &EstimateTable,
    alpha: &Partition,
    alpha_o: &Partition,
    centering: Centering,
) -> Result<f64> {
    let y = y_terms(main, alpha, alpha_o)?;
    let p2: Vec<f64> = main.weights().map(|w| w * w).collect();
    let center: Vec<f64> = match centering {
        Centering::Global => {
            let s: f64 = p2.iter().sum();
            let m = p2.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / s;
            vec![m; y.len()]
        }
        Centering::PerGroup => {
            let mut acc: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
            for (i, (a, b)) in p2.iter().zip(&y).enumerate() {
                let e = acc.entry(alpha_o.label(i)).or_default();
                e.0 += a;
                e.1 += a * b;
            }
            (0..y.len())
                .map(|i| {
                    let (s, t) = acc[&alpha_o.label(i)];
                    t / s
                })
                .collect()
        }
    };
    let n = main.len() as f64;
    Ok(n * p2
        .iter()
        .zip(&y)
        .zip(&center)
        .map(|((a, b), c)| a * (b - c) * (b - c))
        .sum::<f64>())
}

/// Tests one candidate at level `gamma_star`.
pub fn test_candidate(
    main: &EstimateTable,
    candidate: &str,
    alpha: &Partition,
    alpha_o: &Partition,
    sigma2: &Sigma2,
    gamma_star: f64,
    centering: Centering,
) -> Result<TestReport> {
    if !(gamma_star > 0.0 && gamma_star < 1.0) {
        return Err(Error::Invalid(format!("level {gamma_star} outside (0, 1)")));
    }
    let t_hat = test_statistic(main, alpha, alpha_o, sigma2)?;
    let v2_hat = variance_bound(main, alpha, alpha_o, centering)?;
    let degenerate = v2_hat < DEGENERATE_VARIANCE;
    let critical = normal::quantile(1.0 - gamma_star) * v2_hat.sqrt();
    let root_n = (main.len() as f64).sqrt();
    let retained = degenerate || t_hat <= critical / root_n;
    let p_value = if degenerate {
        f64::NAN
    } else {
        1.0 - normal::cdf(root_n * t_hat / v2_hat.sqrt())
    };
    Ok(TestReport {
        candidate: candidate.to_string(),
        t_hat,
        v2_hat,
        critical,
        gamma_star,
        retained,
        degenerate,
        p_value,
    })
}

/// Out-of-sample partition and its provenance.
#[derive(Debug, Clone)]
pub struct OutOfSample {
    pub fit: FitResult,
    /// The fitted tree applied to the main-half types.
    pub partition: Partition,
    pub warnings: Vec<String>,
}

/// Fits `α̂ᵒ` on the holdout half only.
pub fn fit_out_of_sample(
    main: &EstimateTable,
    holdout: &EstimateTable,
    config: &SearchConfig,
) -> Result<OutOfSample> {
    if !main.same_types(holdout) {
        return Err(Error::Invalid("main and holdout tables list different types".into()));
    }
    let mut warnings = Vec::new();
    if main
        .rows()
        .iter()
        .zip(holdout.rows())
        .all(|(a, b)| a.phi_hat == b.phi_hat && a.eta2_hat == b.eta2_hat)
    {
        warnings.push("non-independent halves: holdout estimates equal main estimates".into());
    }
    let fit = fit_gaware_tree(holdout, config)?;
    let partition = fit.tree.partition(main);
    Ok(OutOfSample {
        fit,
        partition,
        warnings,
    })
}

#[derive(Debug, Clone)]
pub struct PruneResult {
    pub alpha_o: OutOfSample,
    /// One report per candidate, in input order.
    pub reports: Vec<TestReport>,
    /// Ids of retained candidates, in input order.
    pub retained: Vec<String>,
}

/// Tests every candidate at `γ/|candidates|` and keeps those not rejected.
pub fn prune_partition_set(
    main: &EstimateTable,
    holdout: &EstimateTable,
    candidates: &[(String, Partition)],
    gamma: f64,
    config: &SearchConfig,
    centering: Centering,
) -> Result<PruneResult> {
    if candidates.is_empty() {
        return Err(Error::Invalid("no candidate partitions".into()));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Invalid(format!("gamma {gamma} outside (0, 1)")));
    }
    let alpha_o = fit_out_of_sample(main, holdout, config)?;
    let gamma_star = gamma / candidates.len() as f64;
    let reports = candidates
        .par_iter()
        .map(|(id, alpha)| {
            test_candidate(
                main,
                id,
                alpha,
                &alpha_o.partition,
                &config.sigma2,
                gamma_star,
                centering,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let retained = reports
        .iter()
        .filter(|r| r.retained)
        .map(|r| r.candidate.clone())
        .collect();
    Ok(PruneResult {
        alpha_o,
        reports,
        retained,
    })
}
