//! Online familywise error rate control with adaptive-discard procedures.
//!
//! [`engine`] holds the budget state machine for plain and exhaustive
//! ADDIS, [`policy`] the concrete level rules built on it, [`oracle`] exact
//! global-null FWER for short runs, and [`montecarlo`] / [`simulation`] the
//! simulation lab. [`dataset`] applies procedures to real p-value files.

pub mod config;
pub mod dataset;
pub mod engine;
pub mod gamma;
pub mod graph;
pub mod montecarlo;
pub mod numfmt;
pub mod oracle;
pub mod policy;
pub mod simulation;

pub use config::{ConfigError, PolicyConfig, Procedure, StepRule};
pub use dataset::{
    apply_profile, load_pvalues, parse_alpha_grid, ColumnSpec, DatasetError, LoadOptions, PValueDataset,
    RejectionProfile,
};
pub use engine::{
    BudgetState, Constraint, EngineError, Mode, StateSnapshot, StepOutcome, StepParams, Violation,
    BUDGET_TOLERANCE,
};
pub use gamma::{GammaSequence, GammaSpec};
pub use graph::{GraphWeights, WeightsSpec};
pub use montecarlo::{mc_estimate, simulate, McEstimate, McError, McRow, PValueSource, Trial, TrialOutcome};
pub use numfmt::sig17;
pub use oracle::{exact_fwer_global_null, OracleError, MAX_EXACT_STEPS};
pub use policy::{graph_recursion_levels, run_procedure, FnRule, LevelRule, LevelTracker, Policy, RunError, Trace};
pub use simulation::{generate_trial, run_grid, ExperimentGrid, GaussianSetup, GridResults};
