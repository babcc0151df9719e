//! Optimal cohorts for testing: the all-or-nothing criterion for weighted
//! log-rank and Cox score tests, expected failure counts and power.
//!
//! The squared drift of the score statistic is bounded by `a + b pi`, linear
//! in the incident proportion, so the optimum is always an endpoint.

use serde::{Deserialize, Serialize};

use crate::cohort::{CohortFunctions, StudyDesign};
use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::quadrature::Integrator;
use crate::stats::{norm_cdf, norm_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceOptions {
    /// Multiply both criterion integrals by the dropout survival function.
    #[serde(default = "yes")]
    pub apply_dropout: bool,
}

fn yes() -> bool {
    true
}

impl Default for InferenceOptions {
    fn default() -> Self {
        InferenceOptions {
            apply_dropout: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HazardSpec {
    Constant {
        log_hr: f64,
    },
    /// A time-varying log hazard ratio, identified by a label.
    Function {
        label: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceDecision {
    /// `∫ (log φ)^2 D_P` per subject at `pi = 0`.
    pub a_prevalent: f64,
    /// `∫ (log φ)^2 D_I` at `pi = 1`.
    pub incident_side: f64,
    pub b_incident_minus_prevalent: f64,
    pub pi_opt: f64,
    /// `n ∫ D` at `pi_opt`, unweighted.
    pub expected_failures_at_opt: f64,
    pub theoretical_power: Option<f64>,
    pub hazard_spec: HazardSpec,
    pub apply_dropout: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerEffect {
    pub log_hr: f64,
    /// Variance of the predictor; 0.25 for an even binary split.
    #[serde(default = "quarter")]
    pub predictor_variance: f64,
    /// Squared multiple correlation with adjustment covariates.
    #[serde(default)]
    pub r_squared: f64,
}

fn quarter() -> f64 {
    0.25
}

impl PowerEffect {
    pub fn binary(log_hr: f64) -> Self {
        PowerEffect {
            log_hr,
            predictor_variance: 0.25,
            r_squared: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.log_hr.is_finite() {
            return Err(Error::config("log_hr must be finite"));
        }
        if !(self.predictor_variance >= 0.0 && self.predictor_variance.is_finite()) {
            return Err(Error::config("predictor_variance must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.r_squared) {
            return Err(Error::config("r_squared must lie in [0, 1)"));
        }
        Ok(())
    }
}

fn criterion_cohort(design: &StudyDesign, opts: InferenceOptions) -> Result<CohortFunctions> {
    let mut d = design.clone();
    if !opts.apply_dropout {
        d.dropout = None;
    }
    CohortFunctions::new(&d)
}

/// Proposition-style criterion for the weighted log-rank test with log
/// hazard ratio `log_hr(t)`.
pub fn logrank_criterion(
    design: &StudyDesign,
    log_hr: impl Fn(f64) -> f64,
    hazard_spec: HazardSpec,
    opts: InferenceOptions,
) -> Result<InferenceDecision> {
    let cohort = criterion_cohort(design, opts)?;
    let q = Integrator::with_tolerances(1e-14, 1e-11);
    let tau = design.tau;
    let breaks = cohort.breakpoints();
    let side = |pi: f64| {
        let est = q.integrate(
            |t| {
                let l = log_hr(t);
                l * l * cohort.d_total(pi, t)
            },
            0.0,
            tau,
            breaks,
        );
        if est.value.is_finite() {
            Ok(est.value)
        } else {
            Err(Error::Numerical("criterion integral is not finite".into()))
        }
    };
    let a = side(0.0)?;
    let incident = side(1.0)?;
    let b = incident - a;
    let pi_opt = if b > 0.0 { 1.0 } else { 0.0 };
    let (p, i) = cohort.failure_probabilities(pi_opt);
    Ok(InferenceDecision {
        a_prevalent: a,
        incident_side: incident,
        b_incident_minus_prevalent: b,
        pi_opt,
        expected_failures_at_opt: cohort.n() * (p + i),
        theoretical_power: None,
        hazard_spec,
        apply_dropout: opts.apply_dropout,
    })
}

/// Criterion for the Cox score test: the log-rank criterion with a constant
/// hazard ratio, which reduces to comparing expected failure counts.
pub fn cox_criterion(design: &StudyDesign, opts: InferenceOptions) -> Result<InferenceDecision> {
    logrank_criterion(design, |_| 1.0, HazardSpec::Constant { log_hr: 1.0 }, opts)
}

/// Cox criterion plus the theoretical power at the chosen endpoint.
pub fn cox_decision_with_power(
    design: &StudyDesign,
    effect: PowerEffect,
    alpha: f64,
    opts: InferenceOptions,
) -> Result<InferenceDecision> {
    let mut decision = cox_criterion(design, opts)?;
    decision.hazard_spec = HazardSpec::Constant {
        log_hr: effect.log_hr,
    };
    let mut d = design.clone();
    if !opts.apply_dropout {
        d.dropout = None;
    }
    decision.theoretical_power = Some(theoretical_power(&d, decision.pi_opt, effect, alpha)?);
    Ok(decision)
}

/// Two-sided power of the Cox score test from the drift
/// `mu = sqrt(n β² σ² (1 − ρ²) ∫ D)`.
pub fn theoretical_power(
    design: &StudyDesign,
    pi: f64,
    effect: PowerEffect,
    alpha: f64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    crate::objective::check_pi(pi)?;
    effect.validate()?;
    let cohort = CohortFunctions::new(design)?;
    let (p, i) = cohort.failure_probabilities(pi);
    let mu2 = cohort.n()
        * effect.log_hr.powi(2)
        * effect.predictor_variance
        * (1.0 - effect.r_squared)
        * (p + i);
    Ok(two_sided_power(mu2.sqrt(), alpha))
}

pub fn two_sided_power(mu: f64, alpha: f64) -> f64 {
    let z = norm_quantile(1.0 - alpha / 2.0);
    norm_cdf(mu - z) + norm_cdf(-mu - z)
}

/// One-sided power of `Z = (S^_1(t) − S^_2(t)) / sqrt(Var_1 + Var_2)` against
/// `S_1(t) > S_2(t)`, with each group at its own `pi_incident`.
pub fn fixed_time_z_power(
    group1: &StudyDesign,
    group2: &StudyDesign,
    t: f64,
    alpha: f64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if !(t > 0.0 && t <= group1.tau.min(group2.tau)) {
        return Err(Error::config(format!("t must lie in (0, tau], got {t}")));
    }
    let v1 = Objective::new(group1)?.variance_at(group1.pi_incident, t);
    let v2 = Objective::new(group2)?.variance_at(group2.pi_incident, t);
    if !(v1 + v2).is_finite() {
        return Err(Error::Infeasible(format!(
            "variance of the survival estimate at t = {t} is infinite in at least one group; {}",
            crate::error::NARROW_TAU_GUIDANCE
        )));
    }
    let diff = group1.survival.sf(t) - group2.survival.sf(t);
    let z = norm_quantile(1.0 - alpha);
    if v1 + v2 == 0.0 {
        return Ok(if diff > 0.0 { 1.0 } else { alpha });
    }
    Ok(norm_cdf(diff / (v1 + v2).sqrt() - z))
}
