use prevmix_core::config::EstimationSection;
use prevmix_core::inference::cox_decision_with_power;
use prevmix_core::objective::FixedTimeKernel;
use prevmix_core::optimizer::{optimize_curve_with, optimize_fixed_time_with};
use prevmix_core::serde_ext::fmt_float;
use prevmix_core::simulate;
use prevmix_core::{
    cox_criterion, ConfigDocument, ConfigFormat, Error, InferenceDecision, Objective,
    OptimizationResult,
};

use crate::{header, Failure, Report};

/// Points in the reported variance curves when the config gives no grid.
const CURVE_POINTS: usize = 101;

pub(crate) fn fixed(x: f64, digits: usize) -> String {
    if x.is_finite() {
        format!("{x:.digits$}")
    } else {
        fmt_float(x)
    }
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| Failure::Io(e.to_string()))?;
    Ok(buf)
}

fn json_bytes(value: &impl serde::Serialize) -> Result<Vec<u8>, Failure> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn echo_config(report: &mut Report, doc: &ConfigDocument) -> Result<(), Failure> {
    report.file("config.toml", doc.emit(ConfigFormat::Toml)?.into_bytes());
    Ok(())
}

pub(crate) fn curve_grid(tau: f64, section: &EstimationSection) -> Vec<f64> {
    if section.curve_grid.is_empty() {
        let last = CURVE_POINTS - 1;
        (0..CURVE_POINTS)
            .map(|k| {
                if k == last {
                    tau
                } else {
                    tau * k as f64 / last as f64
                }
            })
            .collect()
    } else {
        section.curve_grid.clone()
    }
}

/// Summary lines for an optimization result.
pub(crate) fn describe_optimum(report: &mut Report, result: &OptimizationResult) {
    report.line(format!("pi_opt={}", result.pi_opt_display()));
    report.line(format!("pi_opt_exact={}", fixed(result.pi_opt, 6)));
    report.line(format!(
        "cohort={:.0}% incident / {:.0}% prevalent",
        100.0 * result.pi_opt,
        100.0 * (1.0 - result.pi_opt)
    ));
    report.line(format!(
        "boundary={}",
        serde_json::to_value(result.boundary)
            .unwrap()
            .as_str()
            .unwrap_or("")
    ));
    report.line(format!("objective={}", fixed(result.objective_value, 6)));
    for e in &result.are_table {
        report.line(format!("are_vs_{}={}", e.pi, fixed(e.are, 3)));
    }
}

pub(crate) fn are_table_csv(result: &OptimizationResult) -> Vec<u8> {
    let mut s = String::from("pi_incident,are\n");
    for e in &result.are_table {
        s.push_str(&format!("{},{}\n", e.pi, fmt_float(e.are)));
    }
    s.into_bytes()
}

pub fn optimize_estimation(doc: &ConfigDocument, seed: u64) -> Result<Report, Failure> {
    let section = doc.estimation.clone().unwrap_or_default();
    let objective = Objective::new(&doc.design)?;
    let result = match section.fixed_time {
        Some(t) => {
            optimize_fixed_time_with(&objective, t, FixedTimeKernel::Plain, &section.comparisons)?
        }
        None => optimize_curve_with(&objective, &section.comparisons)?,
    };
    let detail = section
        .fixed_time
        .map_or_else(String::new, |t| format!("fixed_time={t}"));
    let mut report = Report::new(header("optimize-estimation", &detail, seed));
    describe_optimum(&mut report, &result);

    let grid = curve_grid(doc.design.tau, &section);
    let at_opt = objective.variance_curve(result.pi_opt, &grid);
    let even = objective.variance_curve(0.5, &grid);
    report.file("variance_pi_opt.csv", csv_bytes(|b| at_opt.write_csv(b))?);
    report.file("variance_even_mix.csv", csv_bytes(|b| even.write_csv(b))?);
    report.file("are_table.csv", are_table_csv(&result));
    report.file("result.json", json_bytes(&result)?);
    echo_config(&mut report, doc)?;
    Ok(report)
}

pub(crate) fn describe_decision(report: &mut Report, d: &InferenceDecision) {
    report.line(format!(
        "b={}, pi_opt={}",
        fixed(d.b_incident_minus_prevalent, 2),
        d.pi_opt
    ));
    report.line(format!(
        "b_exact={}",
        fixed(d.b_incident_minus_prevalent, 6)
    ));
    let cohort = if d.pi_opt == 1.0 {
        "100% incident"
    } else {
        "100% prevalent"
    };
    report.line(format!("cohort={cohort}"));
    report.line(format!(
        "expected_failures={}",
        fixed(d.expected_failures_at_opt, 1)
    ));
    if let Some(p) = d.theoretical_power {
        report.line(format!("theoretical_power={}", fixed(p, 4)));
    }
    report.line(format!("dropout_in_criterion={}", d.apply_dropout));
}

pub(crate) fn decision_csv(d: &InferenceDecision) -> Vec<u8> {
    let mut s = String::from("quantity,value\n");
    let rows = [
        ("prevalent_side", d.a_prevalent),
        ("incident_side", d.incident_side),
        ("b", d.b_incident_minus_prevalent),
        ("pi_opt", d.pi_opt),
        ("expected_failures", d.expected_failures_at_opt),
    ];
    for (q, v) in rows {
        s.push_str(&format!("{q},{}\n", fmt_float(v)));
    }
    if let Some(p) = d.theoretical_power {
        s.push_str(&format!("theoretical_power,{}\n", fmt_float(p)));
    }
    s.into_bytes()
}

pub fn optimize_inference(doc: &ConfigDocument, seed: u64) -> Result<Report, Failure> {
    let decision = match &doc.inference {
        Some(i) => cox_decision_with_power(&doc.design, i.effect, i.alpha, i.options())?,
        None => cox_criterion(&doc.design, Default::default())?,
    };
    let mut report = Report::new(header("optimize-inference", "", seed));
    describe_decision(&mut report, &decision);
    report.file("decision.csv", decision_csv(&decision));
    report.file("decision.json", json_bytes(&decision)?);
    echo_config(&mut report, doc)?;
    Ok(report)
}

/// Runs the `[simulation]` section of a config.
pub fn validate_config(
    doc: &ConfigDocument,
    seed: Option<u64>,
    reps: Option<u64>,
) -> Result<Report, Failure> {
    if doc.simulation.is_none() {
        return Err(Error::Config(
            "config has no [simulation] section; add one or use --reproduce".into(),
        )
        .into());
    }
    let mut plan = doc.simulation_plan(crate::DEFAULT_SEED)?;
    if let Some(s) = seed {
        plan.seed = s;
    }
    if let Some(r) = reps {
        plan.replications = r;
    }
    let sim = simulate::run(&plan)?;
    let detail = format!(
        "experiment={} reps={}",
        plan.experiment.as_str(),
        plan.replications
    );
    let mut report = Report::new(header("validate", &detail, plan.seed));
    report.summary.push_str(&sim.summary());
    report.file("simulation.csv", csv_bytes(|b| sim.write_csv(b))?);
    echo_config(&mut report, doc)?;
    Ok(report)
}
