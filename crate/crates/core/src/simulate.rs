//! Monte Carlo generation of period-prevalent cohorts and the validation
//! experiments that compare empirical quantities with theory.
//!
//! Each replication draws from its own stream, derived from the plan seed and
//! the replication index, and results are reduced in replication order, so
//! reports do not depend on the number of threads.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{CohortFunctions, StudyDesign};
use crate::distributions::{DistributionSpec, RandomStream};
use crate::error::{Error, Result};
use crate::estimators::{cox_score_statistic, km_fit, SubjectKind, SubjectRecord};
use crate::objective::Objective;
use crate::serde_ext::fmt_float;
use crate::stats::chi2_1_sf;

/// Acceptance probability below which rejection sampling is refused.
pub const MIN_ACCEPTANCE: f64 = 1e-6;
/// Cap on rejection draws for one cohort.
pub const MAX_REJECTION_DRAWS: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    RiskAndVariance,
    FailureCounts,
    EmpiricalAre,
    EmpiricalPower,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::RiskAndVariance => "risk_and_variance",
            Experiment::FailureCounts => "failure_counts",
            Experiment::EmpiricalAre => "empirical_are",
            Experiment::EmpiricalPower => "empirical_power",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSimulation {
    /// Log hazard ratio of group 2 against group 1.
    pub beta: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Subjects per group; each group is mixed at the same proportion.
    pub group_sizes: [u64; 2],
    /// Incident proportions to simulate.
    #[serde(default = "default_power_pis")]
    pub pis: Vec<f64>,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_power_pis() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationPlan {
    pub design: StudyDesign,
    pub replications: u64,
    pub seed: u64,
    pub experiment: Experiment,
    #[serde(default)]
    pub power_effect: Option<PowerSimulation>,
    /// Output grid; defaults to [`default_grid`].
    #[serde(default)]
    pub grid: Vec<f64>,
    /// Proportions for the risk, failure-count and ARE experiments; the
    /// first one is the reference for ARE. Defaults to the design's own.
    #[serde(default)]
    pub pis: Vec<f64>,
}

impl SimulationPlan {
    pub fn new(design: StudyDesign, experiment: Experiment, replications: u64, seed: u64) -> Self {
        SimulationPlan {
            design,
            replications,
            seed,
            experiment,
            power_effect: None,
            grid: Vec::new(),
            pis: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.design.validate()?;
        if self.replications == 0 {
            return Err(Error::config("replications must be at least 1"));
        }
        for &t in &self.grid {
            if !(0.0..=self.design.tau).contains(&t) {
                return Err(Error::config(format!(
                    "grid time {t} lies outside [0, tau]"
                )));
            }
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("grid must be strictly increasing"));
        }
        for &pi in &self.pis {
            crate::objective::check_pi(pi)?;
        }
        if self.experiment == Experiment::EmpiricalPower {
            let p = self
                .power_effect
                .as_ref()
                .ok_or_else(|| Error::config("empirical_power needs power_effect"))?;
            if !p.beta.is_finite() {
                return Err(Error::config("beta must be finite"));
            }
            if !(p.alpha > 0.0 && p.alpha < 1.0) {
                return Err(Error::config("alpha must lie in (0, 1)"));
            }
            if p.group_sizes.contains(&0) {
                return Err(Error::config("group sizes must be positive"));
            }
            for &pi in &p.pis {
                crate::objective::check_pi(pi)?;
            }
        }
        Ok(())
    }

    pub fn grid_or_default(&self) -> Vec<f64> {
        if self.grid.is_empty() {
            default_grid(self.design.tau)
        } else {
            self.grid.clone()
        }
    }

    pub fn pis_or_default(&self) -> Vec<f64> {
        if self.pis.is_empty() {
            vec![self.design.pi_incident]
        } else {
            self.pis.clone()
        }
    }
}

/// `tau/100, 2 tau/100, ..., 99 tau/100`: interior points only, since the
/// variance is zero at the origin and the incident risk set can vanish
/// exactly at `tau`.
pub fn default_grid(tau: f64) -> Vec<f64> {
    (1..100).map(|k| tau * k as f64 / 100.0).collect()
}

/// Draws cohorts for one design, caching the truncation probability.
#[derive(Debug, Clone)]
pub struct CohortGenerator {
    design: StudyDesign,
    acceptance: f64,
}

impl CohortGenerator {
    pub fn new(design: &StudyDesign) -> Result<Self> {
        let cohort = CohortFunctions::new(design)?;
        let acceptance = cohort.denominator();
        if acceptance < MIN_ACCEPTANCE {
            return Err(Error::DegenerateDesign(format!(
                "prevalent acceptance probability {acceptance:e} is below {MIN_ACCEPTANCE:e}"
            )));
        }
        Ok(CohortGenerator {
            design: design.clone(),
            acceptance,
        })
    }

    pub fn acceptance(&self) -> f64 {
        self.acceptance
    }

    pub fn incident_count(&self) -> u64 {
        (self.design.n as f64 * self.design.pi_incident).round() as u64
    }

    /// One cohort: `round(n pi)` incident subjects then the prevalent ones.
    /// Follow-up ends at `tau`, the end of the assessment interval.
    pub fn generate(&self, rng: &mut RandomStream) -> Result<Vec<SubjectRecord>> {
        let d = &self.design;
        let n_inc = self.incident_count();
        let n_prev = d.n - n_inc;
        let mut out = Vec::with_capacity(d.n as usize);
        for _ in 0..n_inc {
            let t_star = d.survival.draw(rng);
            let mut censor = (d.incident_entry.draw(rng) * d.theta).min(d.tau);
            if let Some(dropout) = d.dropout {
                censor = censor.min(dropout.draw(rng));
            }
            out.push(SubjectRecord {
                entry: 0.0,
                time: t_star.min(censor),
                event: t_star <= censor,
                kind: SubjectKind::Incident,
                covariates: Vec::new(),
            });
        }
        let mut draws = 0u64;
        for _ in 0..n_prev {
            let (a, t_star) = loop {
                draws += 1;
                if draws > MAX_REJECTION_DRAWS {
                    return Err(Error::DegenerateDesign(format!(
                        "rejection sampling exceeded {MAX_REJECTION_DRAWS} draws"
                    )));
                }
                let a = d.arrival.draw(rng);
                let t = d.survival.draw(rng);
                if a <= t && a < d.tau {
                    break (a, t);
                }
            };
            let mut censor = (a + d.theta).min(d.tau);
            if let Some(dropout) = d.dropout {
                // Dropout before entry leaves an empty observation window.
                censor = censor.min(dropout.draw(rng).max(a));
            }
            out.push(SubjectRecord {
                entry: a,
                time: t_star.min(censor),
                event: t_star <= censor,
                kind: SubjectKind::Prevalent,
                covariates: Vec::new(),
            });
        }
        Ok(out)
    }
}

pub fn generate_cohort(design: &StudyDesign, rng: &mut RandomStream) -> Result<Vec<SubjectRecord>> {
    CohortGenerator::new(design)?.generate(rng)
}

/// The random stream of replication `rep` in arm `arm` (the position of the
/// proportion in the plan). Each replication depends on nothing else.
pub fn replication_stream(seed: u64, arm: usize, rep: u64) -> RandomStream {
    RandomStream::new(seed, ((arm as u64) << 40) | rep)
}

/// Runs `f` for every replication in parallel and returns results in
/// replication order.
fn replicate<T: Send>(
    plan_seed: u64,
    arm: usize,
    reps: u64,
    f: impl Fn(&mut RandomStream) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    (0..reps)
        .into_par_iter()
        .map(|rep| f(&mut replication_stream(plan_seed, arm, rep)))
        .collect()
}

/// Running mean and variance, fed in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (x - self.mean);
    }

    fn variance(&self) -> f64 {
        if self.n > 1.0 {
            self.m2 / (self.n - 1.0)
        } else {
            f64::NAN
        }
    }

    fn se(&self) -> f64 {
        (self.variance() / self.n).sqrt()
    }

    /// Standard error of the sample variance, from the fourth moment.
    fn variance_se(&self, fourth: f64) -> f64 {
        let v = self.variance();
        ((fourth - v * v * (self.n - 3.0) / (self.n - 1.0)) / self.n)
            .max(0.0)
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub pi_incident: f64,
    /// Grid time, or a label-free row (`None`) for whole-interval summaries.
    pub t: Option<f64>,
    pub quantity: String,
    #[serde(with = "crate::serde_ext::float")]
    pub empirical: f64,
    #[serde(with = "crate::serde_ext::float")]
    pub theoretical: f64,
    #[serde(with = "crate::serde_ext::float")]
    pub se: f64,
    /// Mean theoretical risk set at `t`, when meaningful.
    #[serde(with = "crate::serde_ext::float_opt", default)]
    pub expected_risk: Option<f64>,
}

impl ReportRow {
    /// `(empirical − theoretical) / se`.
    pub fn standardized_deviation(&self) -> f64 {
        (self.empirical - self.theoretical) / self.se
    }

    pub fn relative_deviation(&self) -> f64 {
        (self.empirical - self.theoretical).abs() / self.theoretical.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub experiment: Experiment,
    pub seed: u64,
    pub replications: u64,
    pub rows: Vec<ReportRow>,
}

impl SimulationReport {
    pub fn rows_for<'a>(&'a self, quantity: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| r.quantity == quantity)
    }

    pub fn max_standardized_deviation(&self, quantity: &str) -> f64 {
        self.rows_for(quantity)
            .map(|r| r.standardized_deviation().abs())
            .filter(|z| z.is_finite())
            .fold(0.0, f64::max)
    }

    /// Long-format CSV: one row per (experiment, pi, t, quantity).
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "experiment,pi_incident,t,quantity,empirical,theoretical,se"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.experiment,
                r.pi_incident,
                r.t.map_or(String::new(), |t| t.to_string()),
                r.quantity,
                fmt_float(r.empirical),
                fmt_float(r.theoretical),
                fmt_float(r.se)
            )?;
        }
        Ok(())
    }

    /// Human-readable block for `summary.txt`.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "experiment: {}\nseed: {}\nreplications: {}\n",
            self.experiment.as_str(),
            self.seed,
            self.replications
        );
        let mut quantities: Vec<&str> = self.rows.iter().map(|r| r.quantity.as_str()).collect();
        quantities.dedup();
        quantities.sort_unstable();
        quantities.dedup();
        for q in quantities {
            let rows: Vec<&ReportRow> = self.rows_for(q).collect();
            if rows.iter().all(|r| r.t.is_none()) {
                for r in rows {
                    s.push_str(&format!(
                        "  pi={:.2} {q}: empirical={} theoretical={} se={}\n",
                        r.pi_incident,
                        fmt_float(round6(r.empirical)),
                        fmt_float(round6(r.theoretical)),
                        fmt_float(round6(r.se))
                    ));
                }
            } else {
                s.push_str(&format!(
                    "  {q}: max |emp - theory| / se = {:.3} over {} points\n",
                    self.max_standardized_deviation(q),
                    rows.len()
                ));
            }
        }
        s
    }
}

fn round6(x: f64) -> f64 {
    if x.is_finite() {
        (x * 1e6).round() / 1e6
    } else {
        x
    }
}

fn row(
    exp: Experiment,
    pi: f64,
    t: Option<f64>,
    quantity: &str,
    emp: f64,
    theory: f64,
    se: f64,
) -> ReportRow {
    ReportRow {
        experiment: exp.as_str().into(),
        pi_incident: pi,
        t,
        quantity: quantity.into(),
        empirical: emp,
        theoretical: theory,
        se,
        expected_risk: None,
    }
}

/// Per-replication risk-set counts by type and KM estimates at grid times.
struct GridObservation {
    prevalent: Vec<f64>,
    incident: Vec<f64>,
    estimate: Vec<f64>,
    greenwood: Vec<f64>,
}

fn observe_grid(records: &[SubjectRecord], grid: &[f64]) -> Result<GridObservation> {
    let count = |kind: SubjectKind| -> Vec<f64> {
        let mut entries: Vec<f64> = records
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| r.entry)
            .collect();
        let mut exits: Vec<f64> = records
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| r.time)
            .collect();
        entries.sort_by(f64::total_cmp);
        exits.sort_by(f64::total_cmp);
        grid.iter()
            .map(|&t| {
                (entries.partition_point(|&e| e <= t) - exits.partition_point(|&x| x < t)) as f64
            })
            .collect()
    };
    let curve = km_fit(records)?;
    Ok(GridObservation {
        prevalent: count(SubjectKind::Prevalent),
        incident: count(SubjectKind::Incident),
        estimate: grid.iter().map(|&t| curve.estimate_at(t)).collect(),
        greenwood: grid.iter().map(|&t| curve.variance_at(t)).collect(),
    })
}

fn observe_arm(
    plan: &SimulationPlan,
    arm: usize,
    pi: f64,
    grid: &[f64],
) -> Result<Vec<GridObservation>> {
    let generator = CohortGenerator::new(&plan.design.with_pi(pi))?;
    replicate(plan.seed, arm, plan.replications, |rng| {
        observe_grid(&generator.generate(rng)?, grid)
    })
}

/// Empirical mean risk sets by type and the empirical variance of the KM
/// estimate, against the asymptotic formulas.
pub fn run_risk_and_variance(plan: &SimulationPlan) -> Result<SimulationReport> {
    plan.validate()?;
    let grid = plan.grid_or_default();
    let exp = Experiment::RiskAndVariance;
    let mut rows = Vec::new();
    for (arm, pi) in plan.pis_or_default().into_iter().enumerate() {
        let design = plan.design.with_pi(pi);
        let objective = Objective::new(&design)?;
        let cohort = objective.cohort();
        let n_inc = (design.n as f64 * pi).round();
        let n_prev = design.n as f64 - n_inc;
        let obs = observe_arm(plan, arm, pi, &grid)?;
        for (k, &t) in grid.iter().enumerate() {
            let mut yp = Moments::default();
            let mut yi = Moments::default();
            let mut est = Moments::default();
            let mut gw = Moments::default();
            for o in &obs {
                yp.push(o.prevalent[k]);
                yi.push(o.incident[k]);
                est.push(o.estimate[k]);
                gw.push(o.greenwood[k]);
            }
            let fourth = obs
                .iter()
                .map(|o| (o.estimate[k] - est.mean).powi(4))
                .sum::<f64>()
                / est.n;
            // Theory per fixed type counts: round(n pi) incident subjects.
            let theory_p = if n_prev > 0.0 {
                cohort.y_prevalent(0.0, t) / design.n as f64 * n_prev
            } else {
                0.0
            };
            let theory_i = if n_inc > 0.0 {
                cohort.y_incident(1.0, t) / design.n as f64 * n_inc
            } else {
                0.0
            };
            let expected = Some(theory_p + theory_i);
            let var_theory = objective.variance_at(pi, t);
            for (q, m, th, se) in [
                ("y_prevalent", yp.mean, theory_p, yp.se()),
                ("y_incident", yi.mean, theory_i, yi.se()),
                (
                    "km_variance",
                    est.variance(),
                    var_theory,
                    est.variance_se(fourth),
                ),
                ("greenwood_mean", gw.mean, var_theory, gw.se()),
            ] {
                let mut r = row(exp, pi, Some(t), q, m, th, se);
                r.expected_risk = expected;
                rows.push(r);
            }
        }
    }
    Ok(SimulationReport {
        experiment: exp,
        seed: plan.seed,
        replications: plan.replications,
        rows,
    })
}

/// Mean observed failures by type, counting failures at times `<= tau`.
pub fn run_failure_counts(plan: &SimulationPlan) -> Result<SimulationReport> {
    plan.validate()?;
    let exp = Experiment::FailureCounts;
    let tau = plan.design.tau;
    let mut rows = Vec::new();
    for (arm, pi) in plan.pis_or_default().into_iter().enumerate() {
        let design = plan.design.with_pi(pi);
        let generator = CohortGenerator::new(&design)?;
        let cohort = CohortFunctions::new(&design)?;
        let n_inc = generator.incident_count() as f64;
        let n_prev = design.n as f64 - n_inc;
        let (per_prev, _) = cohort.failure_probabilities(0.0);
        let (_, per_inc) = cohort.failure_probabilities(1.0);
        let counts = replicate(plan.seed, arm, plan.replications, |rng| {
            let records = generator.generate(rng)?;
            let mut c = [0.0; 2];
            for r in records.iter().filter(|r| r.event && r.time <= tau) {
                c[usize::from(r.kind == SubjectKind::Incident)] += 1.0;
            }
            Ok(c)
        })?;
        let mut m = [Moments::default(); 2];
        for c in &counts {
            m[0].push(c[0]);
            m[1].push(c[1]);
        }
        rows.push(row(
            exp,
            pi,
            Some(tau),
            "prevalent_failures",
            m[0].mean,
            n_prev * per_prev,
            m[0].se(),
        ));
        rows.push(row(
            exp,
            pi,
            Some(tau),
            "incident_failures",
            m[1].mean,
            n_inc * per_inc,
            m[1].se(),
        ));
    }
    Ok(SimulationReport {
        experiment: exp,
        seed: plan.seed,
        replications: plan.replications,
        rows,
    })
}

/// Weighted average of the empirical KM variance over the grid for each
/// proportion, and its ratio to the reference (first) proportion.
pub fn run_empirical_are(
    plan: &SimulationPlan,
    comparison_pis: &[f64],
) -> Result<SimulationReport> {
    plan.validate()?;
    let grid = plan.grid_or_default();
    let exp = Experiment::EmpiricalAre;
    let weight = plan.design.weight_spec();
    let w: Vec<f64> = grid.iter().map(|&t| weight.pdf(t)).collect();
    let w_total: f64 = w.iter().sum();
    let reference = plan.pis_or_default()[0];
    let objective = Objective::new(&plan.design)?;

    let weighted = |arm: usize, pi: f64| -> Result<f64> {
        let obs = observe_arm(plan, arm, pi, &grid)?;
        let mut total = 0.0;
        for (k, wk) in w.iter().enumerate() {
            if *wk <= 0.0 {
                continue;
            }
            // Nobody at risk in any replication: the estimate is undefined.
            if obs.iter().all(|o| o.prevalent[k] + o.incident[k] == 0.0) {
                return Ok(f64::INFINITY);
            }
            let mut m = Moments::default();
            for o in &obs {
                m.push(o.estimate[k]);
            }
            total += wk * m.variance();
        }
        Ok(total / w_total)
    };

    let k_ref = weighted(0, reference)?;
    let mut rows = vec![row(
        exp,
        reference,
        None,
        "weighted_variance",
        k_ref,
        objective.k(reference)?,
        f64::NAN,
    )];
    for (j, &pi) in comparison_pis.iter().enumerate() {
        crate::objective::check_pi(pi)?;
        let k = weighted(j + 1, pi)?;
        let theory = ratio_or_inf(objective.k(pi)?, objective.k(reference)?);
        rows.push(row(
            exp,
            pi,
            None,
            "weighted_variance",
            k,
            objective.k(pi)?,
            f64::NAN,
        ));
        rows.push(row(
            exp,
            pi,
            None,
            "are",
            ratio_or_inf(k, k_ref),
            theory,
            f64::NAN,
        ));
    }
    Ok(SimulationReport {
        experiment: exp,
        seed: plan.seed,
        replications: plan.replications,
        rows,
    })
}

fn ratio_or_inf(num: f64, den: f64) -> f64 {
    if num.is_infinite() {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Group-2 survival `S(t)^{exp(beta)}` for families closed under powers.
pub fn proportional_hazards_survival(
    survival: &DistributionSpec,
    beta: f64,
) -> Result<DistributionSpec> {
    let c = beta.exp();
    match *survival {
        DistributionSpec::Exponential { mean } => {
            Ok(DistributionSpec::Exponential { mean: mean / c })
        }
        DistributionSpec::Weibull { shape, scale } => Ok(DistributionSpec::Weibull {
            shape,
            scale: scale * c.powf(-1.0 / shape),
        }),
        other => Err(Error::config(format!(
            "proportional-hazards groups need exponential or Weibull survival, got {other:?}"
        ))),
    }
}

/// Rejection rate of the Cox score test for a two-group comparison.
pub fn run_empirical_power(plan: &SimulationPlan) -> Result<SimulationReport> {
    plan.validate()?;
    let exp = Experiment::EmpiricalPower;
    let effect = plan.power_effect.as_ref().expect("validated");
    let mut rows = Vec::new();
    for (arm, &pi) in effect.pis.iter().enumerate() {
        let g1 = plan.design.with_pi(pi).with_n(effect.group_sizes[0]);
        let mut g2 = plan.design.with_pi(pi).with_n(effect.group_sizes[1]);
        g2.survival = proportional_hazards_survival(&plan.design.survival, effect.beta)?;
        let gen1 = CohortGenerator::new(&g1)?;
        let gen2 = CohortGenerator::new(&g2)?;
        let rejections = replicate(plan.seed, arm, plan.replications, |rng| {
            let mut records = gen1.generate(rng)?;
            for r in &mut records {
                r.covariates = vec![0.0];
            }
            let mut second = gen2.generate(rng)?;
            for r in &mut second {
                r.covariates = vec![1.0];
            }
            records.append(&mut second);
            Ok(match cox_score_statistic(&records, 0) {
                Ok(stat) => f64::from(u8::from(chi2_1_sf(stat) < effect.alpha)),
                Err(Error::Untestable(_)) => 0.0,
                Err(e) => return Err(e),
            })
        })?;
        let mut m = Moments::default();
        for r in rejections {
            m.push(r);
        }
        // Drift from the expected failures pooled over both groups.
        let failures: f64 = [&g1, &g2]
            .iter()
            .map(|g| {
                let c = CohortFunctions::new(g)?;
                let (p, i) = c.failure_probabilities(pi);
                Ok(c.n() * (p + i))
            })
            .sum::<Result<f64>>()?;
        let total = (effect.group_sizes[0] + effect.group_sizes[1]) as f64;
        let p1 = effect.group_sizes[1] as f64 / total;
        let mu = (effect.beta.powi(2) * p1 * (1.0 - p1) * failures).sqrt();
        let theory = crate::inference::two_sided_power(mu, effect.alpha);
        rows.push(row(exp, pi, None, "rejection_rate", m.mean, theory, m.se()));
    }
    Ok(SimulationReport {
        experiment: exp,
        seed: plan.seed,
        replications: plan.replications,
        rows,
    })
}

/// Dispatches on the plan's experiment. Empirical ARE compares against the
/// remaining entries of `pis`.
pub fn run(plan: &SimulationPlan) -> Result<SimulationReport> {
    match plan.experiment {
        Experiment::RiskAndVariance => run_risk_and_variance(plan),
        Experiment::FailureCounts => run_failure_counts(plan),
        Experiment::EmpiricalPower => run_empirical_power(plan),
        Experiment::EmpiricalAre => {
            let pis = plan.pis_or_default();
            let mut p = plan.clone();
            p.pis = vec![pis[0]];
            run_empirical_are(&p, &pis[1..])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn section_311(pi: f64) -> StudyDesign {
        StudyDesign {
            theta: 7.5,
            tau: 10.0,
            n: 1000,
            pi_incident: pi,
            survival: DistributionSpec::Exponential { mean: 10.0 },
            arrival: DistributionSpec::Exponential { mean: 10.0 },
            incident_entry: DistributionSpec::Uniform {
                lower: 0.0,
                upper: 1.0,
            },
            weight: None,
            dropout: None,
        }
    }

    #[test]
    fn all_incident_cohort() {
        let recs = generate_cohort(&section_311(1.0), &mut RandomStream::new(1, 0)).unwrap();
        assert_eq!(recs.len(), 1000);
        assert!(recs
            .iter()
            .all(|r| r.kind == SubjectKind::Incident && r.entry == 0.0));
    }

    #[test]
    fn fixed_type_counts() {
        let recs = generate_cohort(&section_311(0.25), &mut RandomStream::new(1, 0)).unwrap();
        assert_eq!(
            recs.iter()
                .filter(|r| r.kind == SubjectKind::Incident)
                .count(),
            250
        );
        assert!(recs.iter().all(|r| r.entry <= r.time && r.entry < 10.0));
    }

    #[test]
    fn survival_beyond_tau_never_fails() {
        let mut d = section_311(0.5);
        d.survival = DistributionSpec::PointMass { value: 100.0 };
        let recs = generate_cohort(&d, &mut RandomStream::new(3, 0)).unwrap();
        assert!(recs.iter().all(|r| !r.event));
    }

    #[test]
    fn tiny_acceptance_is_degenerate() {
        let mut d = section_311(0.5);
        d.survival = DistributionSpec::Exponential { mean: 0.01 };
        d.arrival = DistributionSpec::Uniform {
            lower: 0.5,
            upper: 1.0,
        };
        assert!(matches!(
            generate_cohort(&d, &mut RandomStream::new(1, 0)),
            Err(Error::DegenerateDesign(_))
        ));
    }

    #[test]
    fn single_subject_mean_risk_at_origin_is_pi() {
        let mut plan = SimulationPlan::new(
            section_311(1.0).with_n(1),
            Experiment::RiskAndVariance,
            50,
            9,
        );
        plan.grid = vec![0.0, 1.0];
        let report = run_risk_and_variance(&plan).unwrap();
        let y0 = report
            .rows
            .iter()
            .find(|r| r.quantity == "y_incident" && r.t == Some(0.0))
            .unwrap();
        assert_eq!(y0.empirical, 1.0);
    }

    #[test]
    fn report_is_independent_of_thread_count() {
        let mut plan = SimulationPlan::new(
            section_311(0.5).with_n(200),
            Experiment::FailureCounts,
            64,
            5,
        );
        plan.pis = vec![0.3, 0.7];
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run(&plan))
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| run(&plan))
            .unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn proportional_hazards_transform() {
        let s = DistributionSpec::Weibull {
            shape: 0.75,
            scale: 4.25,
        };
        let g2 = proportional_hazards_survival(&s, 0.3).unwrap();
        for t in [0.5, 2.0, 7.0] {
            let expected = s.sf(t).powf(0.3f64.exp());
            assert!((g2.sf(t) - expected).abs() < 1e-14);
        }
        assert!(proportional_hazards_survival(
            &DistributionSpec::Uniform {
                lower: 0.0,
                upper: 1.0
            },
            0.3
        )
        .is_err());
    }

    #[test]
    fn csv_has_long_format_header() {
        let mut plan = SimulationPlan::new(
            section_311(0.5).with_n(100),
            Experiment::FailureCounts,
            4,
            1,
        );
        plan.pis = vec![0.5];
        let mut buf = Vec::new();
        run(&plan).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("experiment,pi_incident,t,quantity,empirical,theoretical,se\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
