//! Choosing the mixing proportion: bounded minimization of `n K(pi)` (or of
//! a fixed-time variance) with explicit endpoint comparison.

use serde::{Deserialize, Serialize};

use crate::cohort::StudyDesign;
use crate::error::{Error, Result};
use crate::minimize::brent_bounded;
use crate::objective::{check_pi, FixedTimeKernel, Objective, ResidualMode};

/// Absolute tolerance on the optimal proportion.
pub const PI_TOLERANCE: f64 = 1e-6;

/// Comparison proportions reported alongside every optimum: the even mix,
/// all incident and all prevalent.
pub const DEFAULT_COMPARISONS: [f64; 3] = [0.5, 1.0, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Interior,
    AllPrevalent,
    AllIncident,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreEntry {
    pub pi: f64,
    #[serde(with = "crate::serde_ext::float")]
    pub are: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub pi_opt: f64,
    /// `n K(pi_opt)`, or `n Var` for fixed-time problems.
    pub objective_value: f64,
    pub boundary: Boundary,
    pub residual_at_opt: f64,
    pub are_table: Vec<AreEntry>,
}

impl OptimizationResult {
    /// `pi_opt` as displayed: two decimals.
    pub fn pi_opt_display(&self) -> String {
        format!("{:.2}", self.pi_opt)
    }

    pub fn are_against(&self, pi: f64) -> Option<f64> {
        self.are_table.iter().find(|e| e.pi == pi).map(|e| e.are)
    }
}

/// Minimizes `f` over `[0, 1]`. `f` may be infinite; when `f(0.5)` is infinite
/// the whole open interval is (interior finiteness does not depend on `pi`).
fn minimize_unit(f: impl Fn(f64) -> f64) -> Result<(f64, f64, Boundary)> {
    let f0 = f(0.0);
    let f1 = f(1.0);
    let mid = f(0.5);
    if !mid.is_finite() {
        return match (f0.is_finite(), f1.is_finite()) {
            (false, false) => Err(Error::infeasible()),
            (true, false) => Ok((0.0, f0, Boundary::AllPrevalent)),
            (false, true) => Ok((1.0, f1, Boundary::AllIncident)),
            (true, true) if f0 <= f1 => Ok((0.0, f0, Boundary::AllPrevalent)),
            _ => Ok((1.0, f1, Boundary::AllIncident)),
        };
    }
    let m = brent_bounded(&f, 0.0, 1.0, PI_TOLERANCE, 500);
    let (mut x, mut value, mut boundary) = (m.x, m.value, Boundary::Interior);
    if mid < value {
        x = 0.5;
        value = mid;
    }
    if f0 <= value {
        (x, value, boundary) = (0.0, f0, Boundary::AllPrevalent);
    }
    if f1 < value {
        (x, value, boundary) = (1.0, f1, Boundary::AllIncident);
    }
    Ok((x, value, boundary))
}

fn ratio(num: f64, den: f64) -> Result<f64> {
    match (num.is_finite(), den.is_finite()) {
        (false, false) => Err(Error::UndefinedComparison(
            "both designs have infinite variance".into(),
        )),
        (true, false) => Ok(0.0),
        (false, true) => Ok(f64::INFINITY),
        (true, true) if den == 0.0 && num == 0.0 => Ok(1.0),
        (true, true) if den == 0.0 => Ok(f64::INFINITY),
        (true, true) => Ok(num / den),
    }
}

/// `n K(pi)` with quadrature failures surfaced once the search is over.
struct ScaledObjective<'a> {
    objective: &'a Objective,
    failure: std::cell::RefCell<Option<Error>>,
}

impl ScaledObjective<'_> {
    fn eval(&self, pi: f64) -> f64 {
        let n = self.objective.cohort().n();
        match self.objective.k(pi) {
            Ok(k) => n * k,
            Err(e) => {
                self.failure.borrow_mut().get_or_insert(e);
                f64::INFINITY
            }
        }
    }
}

/// Minimizes the weighted total variance over the whole curve.
pub fn optimize_curve(design: &StudyDesign) -> Result<OptimizationResult> {
    optimize_curve_with(&Objective::new(design)?, &DEFAULT_COMPARISONS)
}

pub fn optimize_curve_with(
    objective: &Objective,
    comparisons: &[f64],
) -> Result<OptimizationResult> {
    for &pi in comparisons {
        check_pi(pi)?;
    }
    let scaled = ScaledObjective {
        objective,
        failure: Default::default(),
    };
    let found = minimize_unit(|pi| scaled.eval(pi));
    if let Some(e) = scaled.failure.into_inner() {
        return Err(e);
    }
    let (pi_opt, value, boundary) = found?;
    let n = objective.cohort().n();
    let mut are_table = Vec::with_capacity(comparisons.len());
    for &pi in comparisons {
        are_table.push(AreEntry {
            pi,
            are: ratio(n * objective.k(pi)?, value)?,
        });
    }
    Ok(OptimizationResult {
        pi_opt,
        objective_value: value,
        boundary,
        residual_at_opt: interior_residual(objective, pi_opt, ResidualMode::Curve),
        are_table,
    })
}

fn interior_residual(objective: &Objective, pi: f64, mode: ResidualMode) -> f64 {
    if pi > 0.0 && pi < 1.0 {
        objective.residual(pi, mode)
    } else {
        0.0
    }
}

/// Minimizes the variance of the survival estimate at a single time `t`.
pub fn optimize_fixed_time(design: &StudyDesign, t: f64) -> Result<OptimizationResult> {
    optimize_fixed_time_with(
        &Objective::new(design)?,
        t,
        FixedTimeKernel::Plain,
        &DEFAULT_COMPARISONS,
    )
}

pub fn optimize_fixed_time_with(
    objective: &Objective,
    t: f64,
    kernel: FixedTimeKernel,
    comparisons: &[f64],
) -> Result<OptimizationResult> {
    let tau = objective.design().tau;
    if !(t > 0.0 && t <= tau) {
        return Err(Error::config(format!("t must lie in (0, tau], got {t}")));
    }
    for &pi in comparisons {
        check_pi(pi)?;
    }
    let n = objective.cohort().n();
    let f = |pi: f64| n * objective.fixed_time_functional(pi, t, kernel);
    let (pi_opt, value, boundary) = minimize_unit(f)?;
    let mut are_table = Vec::with_capacity(comparisons.len());
    for &pi in comparisons {
        are_table.push(AreEntry {
            pi,
            are: ratio(f(pi), value)?,
        });
    }
    let mode = match kernel {
        FixedTimeKernel::Plain => ResidualMode::FixedTime { t },
        FixedTimeKernel::WeightTail => ResidualMode::Curve,
    };
    Ok(OptimizationResult {
        pi_opt,
        objective_value: value,
        boundary,
        residual_at_opt: interior_residual(objective, pi_opt, mode),
        are_table,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupMix {
    /// One proportion for both groups, minimizing the summed variance.
    Shared,
    /// Each group gets its own proportion.
    Separate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoGroupResult {
    pub mode: GroupMix,
    pub pi_group1: f64,
    pub pi_group2: f64,
    /// `n (Var_1 + Var_2)` at the chosen proportions.
    pub objective_value: f64,
}

/// Two-group fixed-time design for comparing `S_1(t)` and `S_2(t)`.
pub fn optimize_fixed_time_two_group(
    group1: &StudyDesign,
    group2: &StudyDesign,
    t: f64,
    mode: GroupMix,
) -> Result<TwoGroupResult> {
    let o1 = Objective::new(group1)?;
    let o2 = Objective::new(group2)?;
    let tau = group1.tau.min(group2.tau);
    if !(t > 0.0 && t <= tau) {
        return Err(Error::config(format!("t must lie in (0, tau], got {t}")));
    }
    match mode {
        GroupMix::Shared => {
            let n = o1.cohort().n();
            let (pi, value, _) =
                minimize_unit(|pi| n * (o1.variance_at(pi, t) + o2.variance_at(pi, t)))?;
            Ok(TwoGroupResult {
                mode,
                pi_group1: pi,
                pi_group2: pi,
                objective_value: value,
            })
        }
        GroupMix::Separate => {
            let r1 = optimize_fixed_time_with(&o1, t, FixedTimeKernel::Plain, &[])?;
            let r2 = optimize_fixed_time_with(&o2, t, FixedTimeKernel::Plain, &[])?;
            let n = o1.cohort().n();
            let value = n * (o1.variance_at(r1.pi_opt, t) + o2.variance_at(r2.pi_opt, t));
            Ok(TwoGroupResult {
                mode,
                pi_group1: r1.pi_opt,
                pi_group2: r2.pi_opt,
                objective_value: value,
            })
        }
    }
}

/// `ARE(pi_a, pi_b) = K(pi_b) / K(pi_a)`.
pub fn are(design: &StudyDesign, pi_a: f64, pi_b: f64) -> Result<f64> {
    check_pi(pi_a)?;
    check_pi(pi_b)?;
    let obj = Objective::new(design)?;
    ratio(obj.k(pi_b)?, obj.k(pi_a)?)
}

/// Variance ratio at a fixed time, `Var(t; pi_b) / Var(t; pi_a)`.
pub fn are_fixed_time(design: &StudyDesign, t: f64, pi_a: f64, pi_b: f64) -> Result<f64> {
    check_pi(pi_a)?;
    check_pi(pi_b)?;
    let obj = Objective::new(design)?;
    ratio(obj.variance_at(pi_b, t), obj.variance_at(pi_a, t))
}
