//! Finite-sample estimators with delayed entry: product-limit survival with
//! Greenwood variance, the Cox score test and the weighted log-rank test.
//!
//! A subject is at risk at `t` when `entry <= t <= time`. Events sort before
//! censorings at tied times.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{chi2_1_sf, norm_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectKind {
    Prevalent,
    Incident,
}

impl SubjectKind {
    fn as_str(self) -> &'static str {
        match self {
            SubjectKind::Prevalent => "prevalent",
            SubjectKind::Incident => "incident",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub entry: f64,
    pub time: f64,
    pub event: bool,
    pub kind: SubjectKind,
    #[serde(default)]
    pub covariates: Vec<f64>,
}

impl SubjectRecord {
    pub fn at_risk(&self, t: f64) -> bool {
        self.entry <= t && t <= self.time
    }
}

fn check_records(records: &[SubjectRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Data("no records".into()));
    }
    for (i, r) in records.iter().enumerate() {
        if !(r.entry.is_finite() && r.time.is_finite()) || r.entry < 0.0 {
            return Err(Error::Data(format!(
                "record {i}: entry and time must be finite and nonnegative"
            )));
        }
        if r.entry > r.time {
            return Err(Error::Data(format!(
                "record {i}: entry {} exceeds time {}",
                r.entry, r.time
            )));
        }
    }
    Ok(())
}

/// Counts of subjects at risk, answered by binary search over sorted entry
/// and exit times.
struct RiskCounter {
    entries: Vec<f64>,
    exits: Vec<f64>,
}

impl RiskCounter {
    fn new<'a>(records: impl Iterator<Item = &'a SubjectRecord>) -> Self {
        let (mut entries, mut exits): (Vec<f64>, Vec<f64>) =
            records.map(|r| (r.entry, r.time)).unzip();
        entries.sort_by(f64::total_cmp);
        exits.sort_by(f64::total_cmp);
        RiskCounter { entries, exits }
    }

    /// `#{entry <= t} - #{time < t}`.
    fn at(&self, t: f64) -> usize {
        let entered = self.entries.partition_point(|&e| e <= t);
        let left = self.exits.partition_point(|&x| x < t);
        entered - left
    }
}

/// Distinct event times with their event counts, ascending.
fn event_table(records: &[SubjectRecord]) -> Vec<(f64, usize)> {
    let mut times: Vec<f64> = records.iter().filter(|r| r.event).map(|r| r.time).collect();
    times.sort_by(f64::total_cmp);
    let mut table: Vec<(f64, usize)> = Vec::new();
    for t in times {
        match table.last_mut() {
            Some((last, d)) if *last == t => *d += 1,
            _ => table.push((t, 1)),
        }
    }
    table
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub event_times: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
    pub estimates: Vec<f64>,
    pub greenwood_variance: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    /// Largest time at which anyone is under observation.
    pub last_observed: f64,
    /// Intervals inside the follow-up range where nobody is at risk; the
    /// estimate after such a gap is conditional on surviving it.
    pub empty_risk_intervals: Vec<(f64, f64)>,
}

impl SurvivalCurve {
    fn index_at(&self, t: f64) -> Option<usize> {
        self.event_times.partition_point(|&x| x <= t).checked_sub(1)
    }

    /// Right-continuous step estimate; carried forward past the last event.
    pub fn estimate_at(&self, t: f64) -> f64 {
        self.index_at(t).map_or(1.0, |i| self.estimates[i])
    }

    pub fn variance_at(&self, t: f64) -> f64 {
        self.index_at(t).map_or(0.0, |i| self.greenwood_variance[i])
    }

    /// Whether `t` lies beyond the last time with a positive risk set.
    pub fn is_extrapolated(&self, t: f64) -> bool {
        t > self.last_observed
    }
}

/// 95% pointwise intervals on the complementary log-log scale.
const CI_LEVEL: f64 = 0.95;

/// Product-limit estimator for left-truncated, right-censored data.
pub fn km_fit(records: &[SubjectRecord]) -> Result<SurvivalCurve> {
    check_records(records)?;
    let risk = RiskCounter::new(records.iter());
    let z = norm_quantile(0.5 + CI_LEVEL / 2.0);
    let table = event_table(records);
    let n = table.len();
    let mut curve = SurvivalCurve {
        event_times: Vec::with_capacity(n),
        at_risk: Vec::with_capacity(n),
        events: Vec::with_capacity(n),
        estimates: Vec::with_capacity(n),
        greenwood_variance: Vec::with_capacity(n),
        ci_low: Vec::with_capacity(n),
        ci_high: Vec::with_capacity(n),
        last_observed: records
            .iter()
            .map(|r| r.time)
            .fold(f64::NEG_INFINITY, f64::max),
        empty_risk_intervals: empty_intervals(records),
    };
    let mut s = 1.0;
    let mut greenwood_sum = 0.0;
    for (t, d) in table {
        let y = risk.at(t);
        s *= 1.0 - d as f64 / y as f64;
        if y > d {
            greenwood_sum += d as f64 / (y as f64 * (y - d) as f64);
        }
        let (var, lo, hi) = if s <= 0.0 {
            s = 0.0;
            (0.0, 0.0, 0.0)
        } else if s >= 1.0 {
            (0.0, 1.0, 1.0)
        } else {
            let log_s = s.ln();
            let se = greenwood_sum.sqrt() / log_s.abs();
            (
                s * s * greenwood_sum,
                s.powf((z * se).exp()),
                s.powf((-z * se).exp()),
            )
        };
        curve.event_times.push(t);
        curve.at_risk.push(y);
        curve.events.push(d);
        curve.estimates.push(s);
        curve.greenwood_variance.push(var);
        curve.ci_low.push(lo);
        curve.ci_high.push(hi);
    }
    Ok(curve)
}

fn empty_intervals(records: &[SubjectRecord]) -> Vec<(f64, f64)> {
    let mut spans: Vec<(f64, f64)> = records.iter().map(|r| (r.entry, r.time)).collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::new();
    let mut reach = spans[0].1;
    for &(a, b) in &spans[1..] {
        if a > reach {
            out.push((reach, a));
        }
        reach = reach.max(b);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTest {
    pub score_statistic: f64,
    #[serde(with = "crate::serde_ext::float")]
    pub hazard_ratio_estimate: f64,
    pub p_value: f64,
}

fn covariate(r: &SubjectRecord, index: usize) -> Result<f64> {
    r.covariates
        .get(index)
        .copied()
        .ok_or_else(|| Error::Data(format!("record has no covariate {index}")))
}

/// Risk-set sums `Σ w`, `Σ w x`, `Σ w x²` with `w = exp(beta x)`, swept over
/// event times in ascending order.
fn sweep_sums(
    records: &[SubjectRecord],
    x: &[f64],
    beta: f64,
    mut visit: impl FnMut(f64, &[usize], [f64; 3]),
) {
    let mut by_entry: Vec<usize> = (0..records.len()).collect();
    by_entry.sort_by(|&a, &b| records[a].entry.total_cmp(&records[b].entry));
    let mut by_exit = by_entry.clone();
    by_exit.sort_by(|&a, &b| records[a].time.total_cmp(&records[b].time));
    let mut events: Vec<usize> = (0..records.len()).filter(|&i| records[i].event).collect();
    events.sort_by(|&a, &b| records[a].time.total_cmp(&records[b].time));

    let (mut p_in, mut p_out) = (0, 0);
    let mut sums = [0.0; 3];
    let mut k = 0;
    while k < events.len() {
        let t = records[events[k]].time;
        let mut end = k;
        while end < events.len() && records[events[end]].time == t {
            end += 1;
        }
        while p_in < by_entry.len() && records[by_entry[p_in]].entry <= t {
            let i = by_entry[p_in];
            let w = (beta * x[i]).exp();
            sums[0] += w;
            sums[1] += w * x[i];
            sums[2] += w * x[i] * x[i];
            p_in += 1;
        }
        while p_out < by_exit.len() && records[by_exit[p_out]].time < t {
            let i = by_exit[p_out];
            // Only subtract subjects that were added: everyone exiting before
            // t with entry <= time <= t has entry <= t.
            let w = (beta * x[i]).exp();
            sums[0] -= w;
            sums[1] -= w * x[i];
            sums[2] -= w * x[i] * x[i];
            p_out += 1;
        }
        visit(t, &events[k..end], sums);
        k = end;
    }
}

/// Score statistic `U^2 / I` at `beta = 0` with Breslow ties.
pub fn cox_score_statistic(records: &[SubjectRecord], covariate_index: usize) -> Result<f64> {
    check_records(records)?;
    let x = records
        .iter()
        .map(|r| covariate(r, covariate_index))
        .collect::<Result<Vec<_>>>()?;
    let center = x.iter().sum::<f64>() / x.len() as f64;
    let x: Vec<f64> = x.iter().map(|v| v - center).collect();
    let (u, info, events) = score_and_information(records, &x, 0.0);
    if events == 0 {
        return Err(Error::Untestable("no events".into()));
    }
    if !(info > 1e-12 * events as f64) {
        return Err(Error::Untestable(
            "covariate is constant within every risk set at event times".into(),
        ));
    }
    Ok(u * u / info)
}

fn score_and_information(records: &[SubjectRecord], x: &[f64], beta: f64) -> (f64, f64, usize) {
    let (mut u, mut info, mut events) = (0.0, 0.0, 0);
    sweep_sums(records, x, beta, |_, failing, [s0, s1, s2]| {
        let d = failing.len() as f64;
        let mean = s1 / s0;
        let var = (s2 / s0 - mean * mean).max(0.0);
        u += failing.iter().map(|&i| x[i]).sum::<f64>() - d * mean;
        info += d * var;
        events += failing.len();
    });
    (u, info, events)
}

fn log_partial_likelihood(records: &[SubjectRecord], x: &[f64], beta: f64) -> f64 {
    let mut l = 0.0;
    sweep_sums(records, x, beta, |_, failing, [s0, _, _]| {
        l += failing.iter().map(|&i| beta * x[i]).sum::<f64>() - failing.len() as f64 * s0.ln();
    });
    l
}

/// Cox score test plus the partial-likelihood hazard ratio estimate.
pub fn cox_score_test(records: &[SubjectRecord], covariate_index: usize) -> Result<ScoreTest> {
    let score_statistic = cox_score_statistic(records, covariate_index)?;
    let raw = records
        .iter()
        .map(|r| covariate(r, covariate_index))
        .collect::<Result<Vec<_>>>()?;
    let center = raw.iter().sum::<f64>() / raw.len() as f64;
    let x: Vec<f64> = raw.iter().map(|v| v - center).collect();

    let mut beta = 0.0;
    let mut l = log_partial_likelihood(records, &x, beta);
    let mut converged = false;
    for _ in 0..60 {
        let (u, info, _) = score_and_information(records, &x, beta);
        if u.abs() < 1e-10 * (1.0 + info) {
            converged = true;
            break;
        }
        if info <= 0.0 {
            break;
        }
        let mut step = u / info;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate = beta + step;
            let lc = log_partial_likelihood(records, &x, candidate);
            if lc.is_finite() && lc >= l {
                beta = candidate;
                l = lc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || step.abs() < 1e-12 {
            converged = step.abs() < 1e-12;
            break;
        }
    }
    // A non-converging maximization means a monotone likelihood: the
    // estimate diverges in the direction of the score.
    let hazard_ratio_estimate = if converged || beta.abs() < 30.0 {
        beta.exp()
    } else if beta > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(ScoreTest {
        score_statistic,
        hazard_ratio_estimate,
        p_value: chi2_1_sf(score_statistic),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogrankTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// Weighted log-rank test comparing the group with a nonzero indicator in
/// covariate `group_index` against the rest; `weight(t)` multiplies each
/// event time's observed-minus-expected term.
pub fn weighted_logrank(
    records: &[SubjectRecord],
    group_index: usize,
    weight: impl Fn(f64) -> f64,
) -> Result<LogrankTest> {
    check_records(records)?;
    let g = records
        .iter()
        .map(|r| covariate(r, group_index).map(|v| if v != 0.0 { 1.0 } else { 0.0 }))
        .collect::<Result<Vec<_>>>()?;
    if g.iter().all(|&v| v == 1.0) || g.iter().all(|&v| v == 0.0) {
        return Err(Error::Untestable("both groups must be present".into()));
    }
    let (mut num, mut var, mut events) = (0.0, 0.0, 0);
    sweep_sums(records, &g, 0.0, |t, failing, [y, y1, _]| {
        let d = failing.len() as f64;
        let o1: f64 = failing.iter().map(|&i| g[i]).sum();
        let w = weight(t);
        let p1 = y1 / y;
        num += w * (o1 - d * p1);
        if y > 1.0 {
            var += w * w * d * p1 * (1.0 - p1) * (y - d) / (y - 1.0);
        }
        events += failing.len();
    });
    if events == 0 {
        return Err(Error::Untestable("no events".into()));
    }
    if !(var > 0.0) {
        return Err(Error::Untestable("log-rank variance is zero".into()));
    }
    let statistic = num * num / var;
    Ok(LogrankTest {
        statistic,
        p_value: chi2_1_sf(statistic),
    })
}

/// Writes records as `entry,time,event,kind,cov1,...`.
pub fn write_records_csv<W: Write>(records: &[SubjectRecord], out: W) -> Result<()> {
    let width = records
        .iter()
        .map(|r| r.covariates.len())
        .max()
        .unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "entry".to_string(),
        "time".into(),
        "event".into(),
        "kind".into(),
    ];
    header.extend((1..=width).map(|k| format!("cov{k}")));
    let io = |e: csv::Error| Error::Data(e.to_string());
    w.write_record(&header).map_err(io)?;
    for r in records {
        let mut row = vec![
            r.entry.to_string(),
            r.time.to_string(),
            u8::from(r.event).to_string(),
            r.kind.as_str().into(),
        ];
        row.extend(
            (0..width).map(|k| r.covariates.get(k).map_or(String::new(), |v| v.to_string())),
        );
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Data(e.to_string()))
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<SubjectRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr
        .headers()
        .map_err(|e| Error::Data(e.to_string()))?
        .clone();
    let expected = ["entry", "time", "event", "kind"];
    if header.len() < 4 || header.iter().take(4).ne(expected) {
        return Err(Error::Data(format!(
            "header must start with {}",
            expected.join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::Data(e.to_string()))?;
        let num = |k: usize| -> Result<f64> {
            row[k]
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("row {}: bad number {:?}", line + 1, &row[k])))
        };
        let event = match row[2].trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(Error::Data(format!(
                    "row {}: bad event flag {other:?}",
                    line + 1
                )))
            }
        };
        let kind = match row[3].trim() {
            "prevalent" => SubjectKind::Prevalent,
            "incident" => SubjectKind::Incident,
            other => return Err(Error::Data(format!("row {}: bad kind {other:?}", line + 1))),
        };
        let covariates = (4..row.len())
            .filter(|&k| !row[k].trim().is_empty())
            .map(num)
            .collect::<Result<_>>()?;
        out.push(SubjectRecord {
            entry: num(0)?,
            time: num(1)?,
            event,
            kind,
            covariates,
        });
    }
    check_records(&out)?;
    Ok(out)
}
