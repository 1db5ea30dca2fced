//! Generalizability-aware prediction.
//!
//! Types of observations (sites, subgroups, units) come with noisy effect
//! estimates. A depth-limited tree groups them into archetypes, each predicted
//! by its weighted mean, and sends types whose effects cannot be extrapolated
//! to a basin of ignorance where no prediction is made. The objective trades
//! approximation error against a per-unit abstention cost `σ²`.

pub mod error;
pub mod estimate;
pub mod forest;
pub mod inference;
pub mod io;
pub mod model;
pub mod normal;
pub mod regression;
pub mod reward;
pub mod rng;
pub mod simbench;
pub mod tree;
pub mod tree_model;

pub use error::{Error, Result};
pub use model::{EstimateTable, Partition, RawStudy, TypeRow, Unit, IGNORANCE};
pub use reward::{empirical_reward, RewardBreakdown, RewardParams, Sigma2};
pub use tree::{brute_force_fit, fit_gaware_tree, helper_tree, FitResult, SearchConfig};
pub use tree_model::{SplitRule, TreeModel};
