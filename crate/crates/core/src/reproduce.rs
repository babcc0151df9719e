//! Runners for the built-in validation studies, shared by the command line
//! and the test suites.

use serde::Serialize;

use crate::error::Result;
use crate::inference::{cox_criterion, InferenceDecision};
use crate::objective::Objective;
use crate::optimizer::{optimize_curve_with, OptimizationResult, DEFAULT_COMPARISONS};
use crate::presets;
use crate::simulate::{
    run_empirical_are, run_empirical_power, run_failure_counts, run_risk_and_variance, Experiment,
    SimulationPlan, SimulationReport,
};

#[derive(Debug, Clone, Serialize)]
pub struct OptimumRow {
    pub label: String,
    pub theta: f64,
    pub optimum: OptimizationResult,
    /// Empirical ARE report; absent when no replications were requested.
    pub empirical: Option<SimulationReport>,
}

impl OptimumRow {
    pub fn empirical_are(&self, pi: f64) -> Option<f64> {
        self.empirical
            .as_ref()?
            .rows_for("are")
            .find(|r| r.pi_incident == pi)
            .map(|r| r.empirical)
    }
}

fn optimum_rows(
    designs: Vec<(String, crate::cohort::StudyDesign)>,
    reps: u64,
    seed: u64,
) -> Result<Vec<OptimumRow>> {
    let mut rows = Vec::new();
    for (label, design) in designs {
        let optimum = optimize_curve_with(&Objective::new(&design)?, &DEFAULT_COMPARISONS)?;
        let empirical = if reps > 0 {
            let mut plan = SimulationPlan::new(
                design.with_pi(optimum.pi_opt),
                Experiment::EmpiricalAre,
                reps,
                seed,
            );
            plan.pis = vec![optimum.pi_opt];
            Some(run_empirical_are(&plan, &DEFAULT_COMPARISONS)?)
        } else {
            None
        };
        rows.push(OptimumRow {
            label,
            theta: design.theta,
            optimum,
            empirical,
        });
    }
    Ok(rows)
}

/// Optimal mix across window lengths, uniform weight.
pub fn table1(reps: u64, seed: u64) -> Result<Vec<OptimumRow>> {
    let designs = presets::table1()
        .into_iter()
        .map(|d| (format!("theta={}", d.theta), d))
        .collect();
    optimum_rows(designs, reps, seed)
}

/// Optimal mix under three weight functions.
pub fn fig2(reps: u64, seed: u64) -> Result<Vec<OptimumRow>> {
    let designs = presets::fig2()
        .into_iter()
        .map(|(l, d)| (l.to_string(), d))
        .collect();
    optimum_rows(designs, reps, seed)
}

#[derive(Debug, Clone, Serialize)]
pub struct PowerSweepRow {
    pub theta: f64,
    pub c: f64,
    pub decision: InferenceDecision,
    pub power: Option<SimulationReport>,
}

impl PowerSweepRow {
    /// Empirical rejection rates in the order of the simulated proportions.
    pub fn rates(&self) -> Vec<(f64, f64)> {
        self.power
            .as_ref()
            .map(|r| {
                r.rows_for("rejection_rate")
                    .map(|x| (x.pi_incident, x.empirical))
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// Criterion and empirical power across incident censoring shapes.
pub fn fig3(reps: u64, seed: u64) -> Result<Vec<PowerSweepRow>> {
    let mut rows = Vec::new();
    for (theta, cs) in presets::fig3_grid() {
        for c in cs {
            let design = presets::fig3_design(theta, c);
            let decision = cox_criterion(&design, Default::default())?;
            let power = if reps > 0 {
                let mut plan = SimulationPlan::new(design, Experiment::EmpiricalPower, reps, seed);
                plan.power_effect = Some(presets::fig3_power());
                Some(run_empirical_power(&plan)?)
            } else {
                None
            };
            rows.push(PowerSweepRow {
                theta,
                c,
                decision,
                power,
            });
        }
    }
    Ok(rows)
}

/// Risk sets and KM variance against theory.
pub fn fig_s1(reps: u64, seed: u64) -> Result<SimulationReport> {
    let mut plan = SimulationPlan::new(
        presets::fig_s1(),
        Experiment::RiskAndVariance,
        reps.max(1),
        seed,
    );
    plan.pis = presets::FIG_S1_PIS.to_vec();
    plan.grid = presets::fig_s1_grid();
    run_risk_and_variance(&plan)
}

/// Failure counts by type for several distribution combinations.
pub fn fig_s2(reps: u64, seed: u64) -> Result<Vec<(String, SimulationReport)>> {
    presets::fig_s2()
        .into_iter()
        .map(|(label, design)| {
            let plan = SimulationPlan::new(design, Experiment::FailureCounts, reps.max(1), seed);
            Ok((label.to_string(), run_failure_counts(&plan)?))
        })
        .collect()
}
