//! Designing period-prevalent cohort studies: choosing the mix of incident
//! and prevalent subjects that minimises the variance of Kaplan–Meier
//! estimates or maximises the power of proportional-hazards tests.

// NaN must fail these guards, hence the negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cohort;
pub mod config;
pub mod distributions;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod minimize;
pub mod objective;
pub mod optimizer;
pub mod presets;
pub mod quadrature;
pub mod reproduce;
pub mod serde_ext;
pub mod simulate;
pub mod stats;

pub use cohort::{truncation_denominator, CohortFunctions, StudyDesign};
pub use config::{ConfigDocument, ConfigFormat};
pub use distributions::{DistributionSpec, RandomStream};
pub use error::{Error, Result};
pub use estimators::{
    cox_score_test, km_fit, weighted_logrank, SubjectKind, SubjectRecord, SurvivalCurve,
};
pub use inference::{
    cox_criterion, logrank_criterion, theoretical_power, InferenceDecision, InferenceOptions,
    PowerEffect,
};
pub use objective::{
    objective_k, orthogonality_residual, variance_at, Objective, ResidualMode, VarianceCurve,
};
pub use optimizer::{are, optimize_curve, optimize_fixed_time, Boundary, OptimizationResult};
pub use simulate::{generate_cohort, Experiment, SimulationPlan, SimulationReport};
