//! Shared data model: per-type estimate tables and partitions of types into
//! archetypes and the basin of ignorance.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label reserved for the basin of ignorance.
pub const IGNORANCE: usize = 1;

/// Weight ratio above which ingestion records a warning.
pub const WEIGHT_RATIO_WARNING: f64 = 1e6;

/// One observation type: covariates, target weight and per-outcome estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeRow {
    pub type_id: String,
    pub covariates: Vec<f64>,
    /// Target weight `p(x)`.
    pub weight: f64,
    /// Unbiased effect estimate per outcome.
    pub phi_hat: Vec<f64>,
    /// Estimated sampling variance of `phi_hat`, per outcome.
    pub eta2_hat: Vec<f64>,
}

/// Notes recorded while constructing a table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    /// Sum of the raw weights; every weight was divided by it.
    pub renormalization_factor: f64,
    pub warnings: Vec<String>,
}

/// Validated collection of [`TypeRow`]s, sorted by ascending type id, with
/// weights summing to one.
#[derive(Debug, Clone)]
pub struct EstimateTable {
    rows: Vec<TypeRow>,
    outcome_names: Vec<String>,
    covariate_names: Vec<String>,
    provenance: Provenance,
}

impl PartialEq for EstimateTable {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.outcome_names == other.outcome_names
            && self.covariate_names == other.covariate_names
    }
}

impl EstimateTable {
    /// Validates `rows` and renormalizes weights to sum to one.
    ///
    /// Row numbers in errors are 1-based positions in `rows`.
    pub fn new(
        mut rows: Vec<TypeRow>,
        outcome_names: Vec<String>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let q = outcome_names.len();
        let r = covariate_names.len();
        if q == 0 {
            return Err(Error::Invalid("at least one outcome is required".into()));
        }
        if r == 0 {
            return Err(Error::Invalid("at least one covariate is required".into()));
        }
        if rows.is_empty() {
            return Err(Error::Invalid("estimate table has no rows".into()));
        }

        let mut seen = HashSet::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            let fail = |message: String| Error::InvalidRow {
                row: i + 1,
                message,
            };
            if !seen.insert(row.type_id.as_str()) {
                return Err(fail(format!("duplicate type_id '{}'", row.type_id)));
            }
            if !row.weight.is_finite() {
                return Err(fail("non-finite weight".into()));
            }
            if row.weight <= 0.0 {
                return Err(fail(format!("weight must be positive, got {}", row.weight)));
            }
            if row.phi_hat.len() != q || row.eta2_hat.len() != q {
                return Err(fail(format!(
                    "expected {q} estimates and {q} variances, got {} and {}",
                    row.phi_hat.len(),
                    row.eta2_hat.len()
                )));
            }
            if row.covariates.len() != r {
                return Err(fail(format!(
                    "expected {r} covariates, got {}",
                    row.covariates.len()
                )));
            }
            if let Some(v) = row.phi_hat.iter().find(|v| !v.is_finite()) {
                return Err(fail(format!("non-finite estimate {v}")));
            }
            if let Some(v) = row.eta2_hat.iter().find(|v| !v.is_finite()) {
                return Err(fail(format!("non-finite variance {v}")));
            }
            if let Some(v) = row.eta2_hat.iter().find(|v| **v < 0.0) {
                return Err(fail(format!("negative variance {v}")));
            }
            if let Some(v) = row.covariates.iter().find(|v| !v.is_finite()) {
                return Err(fail(format!("non-finite covariate {v}")));
            }
        }

        let total: f64 = rows.iter().map(|r| r.weight).sum();
        let (lo, hi) = rows.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), r| {
            (lo.min(r.weight), hi.max(r.weight))
        });
        let mut provenance = Provenance {
            renormalization_factor: total,
            warnings: Vec::new(),
        };
        if hi / lo > WEIGHT_RATIO_WARNING {
            provenance.warnings.push(format!(
                "max/min weight ratio {:.3e} exceeds {:.0e}",
                hi / lo,
                WEIGHT_RATIO_WARNING
            ));
        }
        for row in &mut rows {
            row.weight /= total;
        }
        rows.sort_by(|a, b| a.type_id.cmp(&b.type_id));

        Ok(Self {
            rows,
            outcome_names,
            covariate_names,
            provenance,
        })
    }

    pub(crate) fn add_warnings(&mut self, warnings: impl IntoIterator<Item = String>) {
        self.provenance.warnings.extend(warnings);
    }

    pub fn rows(&self) -> &[TypeRow] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &TypeRow {
        &self.rows[i]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Number of outcomes `Q`.
    pub fn num_outcomes(&self) -> usize {
        self.outcome_names.len()
    }

    /// Covariate dimension `r`.
    pub fn num_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn outcome_names(&self) -> &[String] {
        &self.outcome_names
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r.weight)
    }

    pub fn index_of(&self, type_id: &str) -> Option<usize> {
        self.rows
            .binary_search_by(|r| r.type_id.as_str().cmp(type_id))
            .ok()
    }

    /// True when both tables list the same type ids in the same order.
    pub fn same_types(&self, other: &EstimateTable) -> bool {
        self.rows.len() == other.rows.len()
            && self
                .rows
                .iter()
                .zip(&other.rows)
                .all(|(a, b)| a.type_id == b.type_id)
    }
}

/// One experimental unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    /// Outcome vector of length `Q`.
    pub y: Vec<f64>,
    pub treated: bool,
    /// Known treatment probability `o`, strictly inside `(0, 1)`.
    pub propensity: f64,
    pub covariates: Vec<f64>,
    /// Environment (study or site) identifier.
    pub env: String,
}

/// Unit-level experimental data from one or more environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawStudy {
    pub units: Vec<Unit>,
    pub outcome_names: Vec<String>,
    pub covariate_names: Vec<String>,
}

impl RawStudy {
    /// Validates shapes, finiteness and propensities. Row numbers in errors
    /// are 1-based unit positions.
    pub fn new(
        units: Vec<Unit>,
        outcome_names: Vec<String>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let q = outcome_names.len();
        let r = covariate_names.len();
        if q == 0 || r == 0 {
            return Err(Error::Invalid(
                "at least one outcome and one covariate are required".into(),
            ));
        }
        if units.is_empty() {
            return Err(Error::Invalid("study has no units".into()));
        }
        for (i, u) in units.iter().enumerate() {
            let fail = |message: String| Error::InvalidRow {
                row: i + 1,
                message,
            };
            if u.y.len() != q {
                return Err(fail(format!("expected {q} outcomes, got {}", u.y.len())));
            }
            if u.covariates.len() != r {
                return Err(fail(format!(
                    "expected {r} covariates, got {}",
                    u.covariates.len()
                )));
            }
            if !(u.propensity > 0.0 && u.propensity < 1.0) {
                return Err(fail(format!(
                    "propensity {} outside (0, 1)",
                    u.propensity
                )));
            }
            if u.y.iter().chain(&u.covariates).any(|v| !v.is_finite()) {
                return Err(fail("non-finite value".into()));
            }
        }
        Ok(Self {
            units,
            outcome_names,
            covariate_names,
        })
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn num_outcomes(&self) -> usize {
        self.outcome_names.len()
    }

    /// Distinct environment ids in ascending order.
    pub fn environments(&self) -> Vec<String> {
        let mut envs: Vec<String> = self.units.iter().map(|u| u.env.clone()).collect();
        envs.sort();
        envs.dedup();
        envs
    }
}

/// Assignment of every row of a table to a label in `1..=groups`; label
/// [`IGNORANCE`] is the basin of ignorance and larger labels are archetypes.
///
/// Labels are stored in the row order of the table the partition was built
/// for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    labels: Vec<usize>,
    groups: usize,
}

impl Partition {
    pub fn new(labels: Vec<usize>, groups: usize) -> Result<Self> {
        if groups < 2 {
            return Err(Error::Invalid(format!("G must be at least 2, got {groups}")));
        }
        if let Some((i, l)) = labels
            .iter()
            .enumerate()
            .find(|(_, l)| **l == 0 || **l > groups)
        {
            return Err(Error::Invalid(format!(
                "label {l} at position {i} outside 1..={groups}"
            )));
        }
        Ok(Self { labels, groups })
    }

    pub fn all_ignorance(n: usize, groups: usize) -> Self {
        Self {
            labels: vec![IGNORANCE; n],
            groups: groups.max(2),
        }
    }

    /// Every row in a single archetype (label 2).
    pub fn single_archetype(n: usize, groups: usize) -> Self {
        Self {
            labels: vec![2; n],
            groups: groups.max(2),
        }
    }

    /// Builds a partition from a type id → label map covering `table`.
    pub fn from_map(
        table: &EstimateTable,
        map: &BTreeMap<String, usize>,
        groups: usize,
    ) -> Result<Self> {
        let labels = table
            .rows()
            .iter()
            .map(|r| {
                map.get(&r.type_id).copied().ok_or_else(|| {
                    Error::Invalid(format!("type '{}' has no label", r.type_id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(labels, groups)
    }

    pub fn to_map(&self, table: &EstimateTable) -> BTreeMap<String, usize> {
        table
            .rows()
            .iter()
            .zip(&self.labels)
            .map(|(r, l)| (r.type_id.clone(), *l))
            .collect()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `π(x)`: whether row `i` receives a prediction.
    pub fn is_predicted(&self, i: usize) -> bool {
        self.labels[i] != IGNORANCE
    }

    /// Distinct archetype labels that have at least one member.
    pub fn archetypes(&self) -> Vec<usize> {
        let mut seen: Vec<usize> = self
            .labels
            .iter()
            .copied()
            .filter(|l| *l != IGNORANCE)
            .collect();
        seen.sort_unstable();
        seen.dedup();
        seen
    }

    pub(crate) fn check_covers(&self, table: &EstimateTable) -> Result<()> {
        if self.labels.len() != table.len() {
            return Err(Error::Invalid(format!(
                "partition has {} labels but the table has {} rows",
                self.labels.len(),
                table.len()
            )));
        }
        Ok(())
    }
}
