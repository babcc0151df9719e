use prevmix_core::optimizer::optimize_curve_with;
use prevmix_core::reproduce::{self, OptimumRow, PowerSweepRow};
use prevmix_core::serde_ext::fmt_float;
use prevmix_core::simulate::run_failure_counts;
use prevmix_core::{
    inference::cox_decision_with_power, presets as core_presets, Experiment, InferenceOptions,
    Objective, SimulationPlan, SimulationReport,
};

use crate::commands::{are_table_csv, decision_csv, describe_decision, describe_optimum, fixed};
use crate::{header, Failure, Preset, Report};

/// Replications used when `--reps` is not given.
pub fn default_reps(preset: Preset) -> u64 {
    match preset {
        Preset::Table1 | Preset::Fig2 => 2_000,
        Preset::Fig3 | Preset::FigS1 | Preset::FigS2 => 10_000,
        Preset::Waitlist => 1_000,
    }
}

/// Concatenates long-format reports under one header.
fn long_csv(reports: &[&SimulationReport]) -> Result<Vec<u8>, Failure> {
    let mut out = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        let mut buf = Vec::new();
        r.write_csv(&mut buf)
            .map_err(|e| Failure::Io(e.to_string()))?;
        let body = if i == 0 {
            &buf[..]
        } else {
            &buf[buf.iter().position(|&b| b == b'\n').map_or(0, |p| p + 1)..]
        };
        out.extend_from_slice(body);
    }
    Ok(out)
}

fn optimum_report(report: &mut Report, rows: &[OptimumRow]) -> Result<(), Failure> {
    let comparisons = prevmix_core::optimizer::DEFAULT_COMPARISONS;
    let mut csv = String::from("label,theta,pi_opt,boundary,objective");
    for pi in comparisons {
        csv.push_str(&format!(",are_vs_{pi}"));
    }
    for pi in comparisons {
        csv.push_str(&format!(",empirical_are_vs_{pi}"));
    }
    csv.push('\n');
    report.line(format!(
        "{:<10} {:>6} {:>7}  theoretical ARE vs 0.5 / 1 / 0   empirical",
        "label", "theta", "pi_opt"
    ));
    for row in rows {
        let o = &row.optimum;
        let theory: Vec<String> = comparisons
            .iter()
            .map(|&p| fixed(o.are_against(p).unwrap_or(f64::NAN), 3))
            .collect();
        let empirical: Vec<String> = comparisons
            .iter()
            .map(|&p| fixed(row.empirical_are(p).unwrap_or(f64::NAN), 3))
            .collect();
        report.line(format!(
            "{:<10} {:>6} {:>7}  {:<30} {}",
            row.label,
            row.theta,
            o.pi_opt_display(),
            theory.join(" / "),
            empirical.join(" / ")
        ));
        csv.push_str(&format!(
            "{},{},{},{},{}",
            row.label,
            row.theta,
            fmt_float(o.pi_opt),
            serde_json::to_value(o.boundary)
                .unwrap()
                .as_str()
                .unwrap_or(""),
            fmt_float(o.objective_value)
        ));
        for p in comparisons {
            csv.push_str(&format!(
                ",{}",
                fmt_float(o.are_against(p).unwrap_or(f64::NAN))
            ));
        }
        for p in comparisons {
            csv.push_str(&format!(
                ",{}",
                fmt_float(row.empirical_are(p).unwrap_or(f64::NAN))
            ));
        }
        csv.push('\n');
    }
    report.file("optimum.csv", csv.into_bytes());
    let reports: Vec<&SimulationReport> =
        rows.iter().filter_map(|r| r.empirical.as_ref()).collect();
    if !reports.is_empty() {
        report.file("simulation.csv", long_csv(&reports)?);
    }
    Ok(())
}

fn power_report(report: &mut Report, rows: &[PowerSweepRow]) -> Result<(), Failure> {
    let mut criterion = String::from("theta,c,prevalent_side,incident_side,b,pi_opt\n");
    let mut power = String::from("theta,c,pi_incident,empirical,theoretical,se\n");
    for row in rows {
        let d = &row.decision;
        criterion.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.theta,
            row.c,
            fmt_float(d.a_prevalent),
            fmt_float(d.incident_side),
            fmt_float(d.b_incident_minus_prevalent),
            d.pi_opt
        ));
        let rates: Vec<String> = row
            .rates()
            .iter()
            .map(|(pi, r)| format!("{pi}:{}", fixed(*r, 3)))
            .collect();
        report.line(format!(
            "theta={} c={} b={} pi_opt={} power {}",
            row.theta,
            row.c,
            fixed(d.b_incident_minus_prevalent, 4),
            d.pi_opt,
            rates.join(" ")
        ));
        if let Some(sim) = &row.power {
            for r in sim.rows_for("rejection_rate") {
                power.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    row.theta,
                    row.c,
                    r.pi_incident,
                    fmt_float(r.empirical),
                    fmt_float(r.theoretical),
                    fmt_float(r.se)
                ));
            }
        }
    }
    report.file("criterion.csv", criterion.into_bytes());
    if rows.iter().any(|r| r.power.is_some()) {
        report.file("power.csv", power.into_bytes());
    }
    Ok(())
}

fn waitlist(report: &mut Report, reps: u64, seed: u64) -> Result<(), Failure> {
    let design = core_presets::waitlist();
    let objective = Objective::new(&design)?;
    let optimum = optimize_curve_with(&objective, &prevmix_core::optimizer::DEFAULT_COMPARISONS)?;
    report.line("[estimation]");
    describe_optimum(report, &optimum);
    report.file("are_table.csv", are_table_csv(&optimum));

    let effect = core_presets::waitlist_effect();
    for (label, apply_dropout) in [("inference", false), ("inference_dropout_adjusted", true)] {
        let decision =
            cox_decision_with_power(&design, effect, 0.05, InferenceOptions { apply_dropout })?;
        report.line(format!("[{label}]"));
        describe_decision(report, &decision);
        report.file(format!("{label}.csv"), decision_csv(&decision));
    }
    if reps > 0 {
        let plan = SimulationPlan::new(
            design.with_pi(optimum.pi_opt),
            Experiment::FailureCounts,
            reps,
            seed,
        );
        let sim = run_failure_counts(&plan)?;
        report.line("[failure counts at pi_opt]");
        report.summary.push_str(&sim.summary());
        report.file("simulation.csv", long_csv(&[&sim])?);
    }
    Ok(())
}

/// Runs a built-in validation study.
pub fn reproduce(preset: Preset, reps: Option<u64>, seed: u64) -> Result<Report, Failure> {
    let reps = reps.unwrap_or_else(|| default_reps(preset));
    let detail = format!("reproduce={} reps={reps}", preset.name());
    let mut report = Report::new(header("validate", &detail, seed));
    match preset {
        Preset::Table1 => optimum_report(&mut report, &reproduce::table1(reps, seed)?)?,
        Preset::Fig2 => optimum_report(&mut report, &reproduce::fig2(reps, seed)?)?,
        Preset::Fig3 => power_report(&mut report, &reproduce::fig3(reps, seed)?)?,
        Preset::FigS1 => {
            let sim = reproduce::fig_s1(reps, seed)?;
            report.summary.push_str(&sim.summary());
            report.file("simulation.csv", long_csv(&[&sim])?);
        }
        Preset::FigS2 => {
            for (label, sim) in reproduce::fig_s2(reps, seed)? {
                report.line(format!("[{label}]"));
                report.summary.push_str(&sim.summary());
                report.file(format!("simulation_{label}.csv"), long_csv(&[&sim])?);
            }
        }
        Preset::Waitlist => waitlist(&mut report, reps, seed)?,
    }
    Ok(report)
}
