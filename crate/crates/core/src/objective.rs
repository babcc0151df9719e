//! Asymptotic Kaplan–Meier variance and the weighted total-variance
//! objective `K(pi)`.
//!
//! `K(pi) = ∫_0^tau W(t) Var[S^(t); pi] dt` is evaluated two ways:
//!
//! * reduced: swapping the order of integration gives
//!   `K = ∫_0^tau f(r) / (Y(r) S(r)) * Ω(r) dr` with the weight tail
//!   `Ω(r) = ∫_r^tau W(t) S(t)^2 dt`, tabulated once per design;
//! * nested: the inner antiderivative is accumulated on a 2001-point grid and
//!   `W(t) S(t)^2` is integrated against it.
//!
//! Variances are infinite once the expected risk set has been exhausted
//! (fewer than [`EPS_RISK`] subjects) at a time after which failures can
//! still occur. An exhaustion point at `tau` itself only makes `Var(tau)`
//! infinite, which carries no weight in `K`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::cohort::{CohortFunctions, StudyDesign};
use crate::distributions::DistributionSpec;
use crate::error::{Error, Result};
use crate::quadrature::{kronrod21, Integrator};

/// Expected number of subjects below which a risk set counts as empty.
pub const EPS_RISK: f64 = 1e-8;

/// Exhaustion points within this fraction of `tau` of the evaluation time
/// are treated as lying at that time.
const EXHAUSTION_RESOLUTION: f64 = 1e-9;

const GRID_SEGMENTS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    /// Orthogonality of `gamma` and `psi` over `[0, t]`.
    FixedTime { t: f64 },
    /// Orthogonality of `W` and `V` over `[0, tau]`.
    Curve,
}

/// Kernel applied to `f / (Y S)` in the fixed-time functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedTimeKernel {
    /// `S(t)^2 ∫_0^t f/(Y S) dr`, the plain variance.
    Plain,
    /// `∫_0^t f/(Y S) Ω(r) dr`; at `t = tau` this is `K` itself.
    WeightTail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceCurve {
    pub pi: f64,
    pub grid: Vec<f64>,
    #[serde(with = "crate::serde_ext::float_vec")]
    pub values: Vec<f64>,
}

impl VarianceCurve {
    /// Two-column CSV: time and variance scaled by 1000.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "time,variance_x1000")?;
        for (t, v) in self.grid.iter().zip(&self.values) {
            writeln!(out, "{},{}", t, crate::serde_ext::fmt_float(v * 1000.0))?;
        }
        Ok(())
    }
}

/// Everything needed to evaluate variances and `K` for one design, for any
/// mixing proportion.
#[derive(Debug, Clone)]
pub struct Objective {
    cohort: CohortFunctions,
    weight: DistributionSpec,
    nodes: Vec<f64>,
    tail: Vec<f64>,
    quad: Integrator,
}

impl Objective {
    pub fn new(design: &StudyDesign) -> Result<Self> {
        let cohort = CohortFunctions::new(design)?;
        Ok(Self::from_cohort(cohort))
    }

    pub fn from_cohort(cohort: CohortFunctions) -> Self {
        let design = cohort.design();
        let tau = design.tau;
        let weight = design.weight_spec();
        let mut nodes: Vec<f64> = (0..=GRID_SEGMENTS)
            .map(|k| tau * k as f64 / GRID_SEGMENTS as f64)
            .collect();
        nodes.extend_from_slice(cohort.breakpoints());
        nodes.sort_by(f64::total_cmp);
        nodes.dedup_by(|a, b| (*a - *b).abs() <= 1e-13 * tau);
        *nodes.last_mut().expect("grid is nonempty") = tau;

        let fine = Integrator::with_tolerances(1e-300, 1e-13);
        let survival = design.survival;
        let mut tail = vec![0.0; nodes.len()];
        for k in (0..nodes.len() - 1).rev() {
            let piece = fine
                .integrate(
                    |t| weight.pdf(t) * survival.sf(t).powi(2),
                    nodes[k],
                    nodes[k + 1],
                    &[],
                )
                .value;
            tail[k] = tail[k + 1] + piece;
        }
        Objective {
            cohort,
            weight,
            nodes,
            tail,
            quad: Integrator::with_tolerances(1e-300, 1e-10),
        }
    }

    pub fn cohort(&self) -> &CohortFunctions {
        &self.cohort
    }

    pub fn design(&self) -> &StudyDesign {
        self.cohort.design()
    }

    fn tau(&self) -> f64 {
        self.design().tau
    }

    /// `Ω(r) = ∫_r^tau W(t) S(t)^2 dt`.
    pub fn weight_tail(&self, r: f64) -> f64 {
        let tau = self.tau();
        if r >= tau {
            return 0.0;
        }
        let r = r.max(0.0);
        let k = self.nodes.partition_point(|&x| x <= r).saturating_sub(1);
        let right = self.nodes[k + 1];
        let survival = self.design().survival;
        let w = self.weight;
        let (piece, _) = kronrod21(&|t: f64| w.pdf(t) * survival.sf(t).powi(2), r, right);
        self.tail[k + 1] + piece
    }

    /// `f(r) / (Y(r) S(r))`.
    pub fn hazard_over_risk(&self, pi: f64, r: f64) -> f64 {
        let f = self.design().survival.pdf(r);
        if f == 0.0 {
            return 0.0;
        }
        let y = self.cohort.y_total(pi, r);
        if y <= 0.0 {
            return f64::INFINITY;
        }
        f / (y * self.design().survival.sf(r))
    }

    /// First time in `[0, tau]` where the expected risk set drops to
    /// [`EPS_RISK`] or below.
    pub fn risk_exhaustion(&self, pi: f64) -> Option<f64> {
        let y = |r: f64| self.cohort.y_total(pi, r);
        if y(0.0) <= EPS_RISK {
            return Some(0.0);
        }
        let mut prev = 0.0;
        for &r in &self.nodes[1..] {
            if y(r) <= EPS_RISK {
                let (mut lo, mut hi) = (prev, r);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if y(mid) <= EPS_RISK {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Some(hi);
            }
            prev = r;
        }
        None
    }

    /// Whether `∫_0^t f/(Y S)` diverges because the risk set empties before `t`.
    pub fn diverges_by(&self, pi: f64, t: f64) -> bool {
        let Some(r0) = self.risk_exhaustion(pi) else {
            return false;
        };
        let reached = if r0 == 0.0 {
            t > 0.0
        } else {
            r0 < t - EXHAUSTION_RESOLUTION * self.tau()
        };
        let survival = self.design().survival;
        reached && survival.cdf(t) > survival.cdf(r0)
    }

    /// `Var[S^(t); pi] ≈ S(t)^2 ∫_0^t f(r) / (Y(r) S(r)) dr`.
    pub fn variance_at(&self, pi: f64, t: f64) -> f64 {
        self.fixed_time_functional(pi, t, FixedTimeKernel::Plain)
    }

    pub fn fixed_time_functional(&self, pi: f64, t: f64, kernel: FixedTimeKernel) -> f64 {
        let t = t.min(self.tau());
        if t <= 0.0 {
            return 0.0;
        }
        if self.diverges_by(pi, t) {
            return f64::INFINITY;
        }
        let est = match kernel {
            FixedTimeKernel::Plain => self.quad.integrate(
                |r| self.hazard_over_risk(pi, r),
                0.0,
                t,
                self.cohort.breakpoints(),
            ),
            FixedTimeKernel::WeightTail => self.quad.integrate(
                |r| self.weighted_integrand(pi, r),
                0.0,
                t,
                self.cohort.breakpoints(),
            ),
        };
        if !est.converged || !est.value.is_finite() {
            return f64::INFINITY;
        }
        match kernel {
            FixedTimeKernel::Plain => self.design().survival.sf(t).powi(2) * est.value,
            FixedTimeKernel::WeightTail => est.value,
        }
    }

    fn weighted_integrand(&self, pi: f64, r: f64) -> f64 {
        let omega = self.weight_tail(r);
        if omega == 0.0 {
            return 0.0;
        }
        self.hazard_over_risk(pi, r) * omega
    }

    pub fn variance_curve(&self, pi: f64, grid: &[f64]) -> VarianceCurve {
        VarianceCurve {
            pi,
            grid: grid.to_vec(),
            values: grid.iter().map(|&t| self.variance_at(pi, t)).collect(),
        }
    }

    /// `K(pi)` through the reduced single integral.
    pub fn k(&self, pi: f64) -> Result<f64> {
        if self.diverges_by(pi, self.tau()) {
            return Ok(f64::INFINITY);
        }
        let est = self.quad.integrate(
            |r| self.weighted_integrand(pi, r),
            0.0,
            self.tau(),
            self.cohort.breakpoints(),
        );
        if !est.converged {
            return Err(Error::Numerical(format!(
                "objective quadrature did not converge at pi = {pi} (estimate {:e} ± {:e})",
                est.value, est.abs_error
            )));
        }
        Ok(est.value)
    }

    /// `K(pi)` through the nested grid: accumulate `∫_0^t f/(Y S)` on the
    /// grid and integrate `W(t) S(t)^2` against it segment by segment.
    pub fn k_nested(&self, pi: f64) -> Result<f64> {
        if self.diverges_by(pi, self.tau()) {
            return Ok(f64::INFINITY);
        }
        let survival = self.design().survival;
        let w = self.weight;
        let g = |r: f64| self.hazard_over_risk(pi, r);
        let inner = Integrator::with_tolerances(1e-300, 1e-12);
        let mut cumulative = 0.0;
        let mut total = 0.0;
        let last = self.nodes.len() - 2;
        for (k, seg) in self.nodes.windows(2).enumerate() {
            let (a, b) = (seg[0], seg[1]);
            let outer = |t: f64| {
                let ws = w.pdf(t) * survival.sf(t).powi(2);
                if ws == 0.0 {
                    return 0.0;
                }
                ws * (cumulative + kronrod21(&g, a, t).0)
            };
            total += kronrod21(&outer, a, b).0;
            if k < last {
                cumulative += inner.integrate(g, a, b, &[]).value;
            }
        }
        if !total.is_finite() {
            return Err(Error::Numerical(format!(
                "nested objective is not finite at pi = {pi}"
            )));
        }
        Ok(total)
    }

    /// Orthogonality residual; equals `-(1/n) dVar/dpi` (fixed time) or
    /// `-(1/n) dK/dpi` (curve).
    pub fn residual(&self, pi: f64, mode: ResidualMode) -> f64 {
        let gamma_psi = |r: f64| {
            let f = self.design().survival.pdf(r);
            if f == 0.0 {
                return 0.0;
            }
            let y = self.cohort.y_total(pi, r);
            f * self.cohort.dropout_sf(r) * self.cohort.psi(r) / (y * y)
        };
        let breaks = self.cohort.breakpoints();
        match mode {
            ResidualMode::FixedTime { t } => {
                let t = t.min(self.tau());
                let est = self.quad.integrate(gamma_psi, 0.0, t, breaks);
                self.design().survival.sf(t).powi(2) * est.value
            }
            ResidualMode::Curve => {
                let est = self.quad.integrate(
                    |r| {
                        let omega = self.weight_tail(r);
                        if omega == 0.0 {
                            0.0
                        } else {
                            gamma_psi(r) * omega
                        }
                    },
                    0.0,
                    self.tau(),
                    breaks,
                );
                est.value
            }
        }
    }
}

/// Asymptotic variance of the survival estimate at `t` under the design's
/// own mixing proportion.
pub fn variance_at(design: &StudyDesign, t: f64) -> Result<f64> {
    if !(0.0..=design.tau).contains(&t) {
        return Err(Error::config(format!("t must lie in [0, tau], got {t}")));
    }
    Ok(Objective::new(design)?.variance_at(design.pi_incident, t))
}

pub fn objective_k(design: &StudyDesign, pi: f64) -> Result<f64> {
    check_pi(pi)?;
    Objective::new(design)?.k(pi)
}

pub fn orthogonality_residual(design: &StudyDesign, pi: f64, mode: ResidualMode) -> Result<f64> {
    check_pi(pi)?;
    Ok(Objective::new(design)?.residual(pi, mode))
}

pub(crate) fn check_pi(pi: f64) -> Result<()> {
    if (0.0..=1.0).contains(&pi) {
        Ok(())
    } else {
        Err(Error::config(format!("pi must lie in [0, 1], got {pi}")))
    }
}
