//! Study design data model and the expected at-risk / failure functions of a
//! period-prevalent cohort.
//!
//! Time `t` is measured from the initiating event. A prevalent subject with
//! underlying entry `A*` is under observation on `[A*, A* + theta)` and is
//! sampled only when `A* <= T*` and `A* < tau`; an incident subject is
//! observed from 0 until `U* theta`. Optional dropout is an independent
//! censoring time on the same clock that may precede study entry.

use serde::{Deserialize, Serialize};

use crate::distributions::DistributionSpec;
use crate::error::{Error, Result};
use crate::quadrature::Integrator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyDesign {
    /// Length of the active study window.
    pub theta: f64,
    /// Upper end of the assessment interval `[0, tau]`.
    pub tau: f64,
    /// Total sample size.
    pub n: u64,
    /// Proportion of incident subjects.
    pub pi_incident: f64,
    pub survival: DistributionSpec,
    /// Law of the underlying prevalent entry time `A*`.
    pub arrival: DistributionSpec,
    /// Law of `U*`, the fraction of the window an incident subject is followed.
    pub incident_entry: DistributionSpec,
    /// Weight over `[0, tau]`; uniform when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<DistributionSpec>,
    /// Non-administrative censoring on the event-time clock.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout: Option<DistributionSpec>,
}

fn same_bound(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1.0)
}

impl StudyDesign {
    pub fn weight_spec(&self) -> DistributionSpec {
        self.weight.unwrap_or(DistributionSpec::Uniform {
            lower: 0.0,
            upper: self.tau,
        })
    }

    pub fn with_pi(&self, pi: f64) -> StudyDesign {
        StudyDesign {
            pi_incident: pi,
            ..self.clone()
        }
    }

    pub fn with_n(&self, n: u64) -> StudyDesign {
        StudyDesign { n, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return Err(Error::config(format!(
                "theta must be positive, got {}",
                self.theta
            )));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.n == 0 {
            return Err(Error::config("n must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.pi_incident) {
            return Err(Error::config(format!(
                "pi_incident must lie in [0, 1], got {}",
                self.pi_incident
            )));
        }
        let named = [
            ("survival", Some(self.survival)),
            ("arrival", Some(self.arrival)),
            ("incident_entry", Some(self.incident_entry)),
            ("weight", self.weight),
            ("dropout", self.dropout),
        ];
        for (name, spec) in named {
            if let Some(spec) = spec {
                spec.validate()
                    .map_err(|e| Error::config(format!("{name}: {e}")))?;
            }
        }
        for (name, spec) in [
            ("survival", Some(self.survival)),
            ("arrival", Some(self.arrival)),
            ("dropout", self.dropout),
        ] {
            if let Some(spec) = spec {
                if spec.support().0 < 0.0 {
                    return Err(Error::config(format!(
                        "{name} must be supported on nonnegative reals"
                    )));
                }
            }
        }
        if let DistributionSpec::PointMass { value } = self.survival {
            if value <= self.tau {
                return Err(Error::config(
                    "a point-mass survival law must lie beyond tau (it has no density inside the assessment interval)",
                ));
            }
        }
        let (g_lo, g_hi) = self.incident_entry.support();
        if g_lo < 0.0 || g_hi > 1.0 {
            return Err(Error::config("incident_entry must be supported on [0, 1]"));
        }
        match self.weight_spec() {
            DistributionSpec::Uniform { lower, upper }
            | DistributionSpec::FourParamBeta { lower, upper, .. }
                if same_bound(lower, 0.0) && same_bound(upper, self.tau) => {}
            other => {
                return Err(Error::config(format!(
                    "weight must be uniform or four-parameter beta on [0, tau], got {other:?}"
                )))
            }
        }
        Ok(())
    }

    /// Points in `(0, tau)` where the cohort integrands may be non-smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts = vec![self.theta];
        let (a_lo, a_hi) = self.arrival.support();
        pts.extend([a_lo, a_hi, a_lo + self.theta, a_hi + self.theta]);
        let (g_lo, g_hi) = self.incident_entry.support();
        pts.extend([g_lo * self.theta, g_hi * self.theta]);
        pts.extend(self.survival.kinks_within(0.0, self.tau));
        pts.extend(self.arrival.kinks_within(0.0, self.tau));
        if let Some(d) = self.dropout {
            let (d_lo, d_hi) = d.support();
            pts.extend([d_lo, d_hi]);
        }
        let mut inside: Vec<f64> = pts
            .into_iter()
            .filter(|&x| x.is_finite() && x > 0.0 && x < self.tau)
            .collect();
        inside.sort_by(f64::total_cmp);
        inside.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * self.tau);
        inside
    }
}

/// `∫_0^tau S(t) dH(t)`: probability that an underlying prevalent subject
/// survives to entry with entry before `tau`.
pub fn truncation_denominator(design: &StudyDesign) -> Result<f64> {
    design.validate()?;
    compute_denominator(design)
}

fn compute_denominator(design: &StudyDesign) -> Result<f64> {
    let q = Integrator::with_tolerances(1e-14, 1e-12);
    let breaks = design.breakpoints();
    let den = design
        .arrival
        .expect_over(0.0, design.tau, &q, &breaks, |t| design.survival.sf(t));
    if !(den >= 1e-12) {
        return Err(Error::DegenerateDesign(format!(
            "truncation denominator is {den:e}; no prevalent subject can be observed"
        )));
    }
    Ok(den)
}

/// Evaluable at-risk and failure functions for one design. The mixing
/// proportion is a parameter of every method so a single instance serves an
/// entire optimization.
#[derive(Debug, Clone)]
pub struct CohortFunctions {
    design: StudyDesign,
    denominator: f64,
    breaks: Vec<f64>,
}

impl CohortFunctions {
    pub fn new(design: &StudyDesign) -> Result<Self> {
        design.validate()?;
        let denominator = compute_denominator(design)?;
        Ok(CohortFunctions {
            design: design.clone(),
            denominator,
            breaks: design.breakpoints(),
        })
    }

    pub fn design(&self) -> &StudyDesign {
        &self.design
    }

    pub fn denominator(&self) -> f64 {
        self.denominator
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    pub fn n(&self) -> f64 {
        self.design.n as f64
    }

    /// `(H(t) - H(t - theta)) / denominator`: entry-window probability of a
    /// sampled prevalent subject, before survival and dropout.
    pub fn prevalent_window(&self, t: f64) -> f64 {
        let h = &self.design.arrival;
        (h.cdf(t) - h.cdf(t - self.design.theta)) / self.denominator
    }

    /// `1 - G(t / theta)`.
    pub fn incident_window(&self, t: f64) -> f64 {
        1.0 - self.design.incident_entry.cdf(t / self.design.theta)
    }

    pub fn dropout_sf(&self, t: f64) -> f64 {
        self.design.dropout.map_or(1.0, |d| d.sf(t))
    }

    /// `psi(t)`: incident minus prevalent at-risk probability per unit of
    /// survival (dropout not included).
    pub fn psi(&self, t: f64) -> f64 {
        self.incident_window(t) - self.prevalent_window(t)
    }

    pub fn y_prevalent(&self, pi: f64, t: f64) -> f64 {
        self.n()
            * (1.0 - pi)
            * self.design.survival.sf(t)
            * self.prevalent_window(t)
            * self.dropout_sf(t)
    }

    pub fn y_incident(&self, pi: f64, t: f64) -> f64 {
        self.n() * pi * self.design.survival.sf(t) * self.incident_window(t) * self.dropout_sf(t)
    }

    pub fn y_total(&self, pi: f64, t: f64) -> f64 {
        self.y_prevalent(pi, t) + self.y_incident(pi, t)
    }

    /// Per-subject failure density contributed by prevalent subjects.
    pub fn d_prevalent(&self, pi: f64, t: f64) -> f64 {
        (1.0 - pi) * self.design.survival.pdf(t) * self.prevalent_window(t) * self.dropout_sf(t)
    }

    pub fn d_incident(&self, pi: f64, t: f64) -> f64 {
        pi * self.design.survival.pdf(t) * self.incident_window(t) * self.dropout_sf(t)
    }

    pub fn d_total(&self, pi: f64, t: f64) -> f64 {
        self.d_prevalent(pi, t) + self.d_incident(pi, t)
    }

    /// `(∫_0^tau D_P, ∫_0^tau D_I)` per subject.
    pub fn failure_probabilities(&self, pi: f64) -> (f64, f64) {
        let q = Integrator::with_tolerances(1e-13, 1e-11);
        let tau = self.design.tau;
        let p = q
            .integrate(|t| self.d_prevalent(pi, t), 0.0, tau, &self.breaks)
            .value;
        let i = q
            .integrate(|t| self.d_incident(pi, t), 0.0, tau, &self.breaks)
            .value;
        (p, i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn section_311(theta: f64, pi: f64) -> StudyDesign {
        StudyDesign {
            theta,
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
    fn denominator_examples() {
        let mut d = section_311(7.5, 0.25);
        d.tau = 1e6;
        assert_relative_eq!(truncation_denominator(&d).unwrap(), 0.5, epsilon = 1e-10);
        let d = section_311(7.5, 0.25);
        // closed form: (1/2)(1 - e^{-2})
        assert_relative_eq!(
            truncation_denominator(&d).unwrap(),
            0.5 * (1.0 - (-2f64).exp()),
            epsilon = 1e-12
        );
        let mut d = section_311(7.5, 0.25);
        d.arrival = DistributionSpec::PointMass { value: 2.0 };
        assert_relative_eq!(
            truncation_denominator(&d).unwrap(),
            (-0.2f64).exp(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn denominator_degenerate_when_arrival_beyond_tau() {
        let mut d = section_311(7.5, 0.25);
        d.arrival = DistributionSpec::Uniform {
            lower: 11.0,
            upper: 12.0,
        };
        assert!(matches!(
            truncation_denominator(&d),
            Err(Error::DegenerateDesign(_))
        ));
    }

    #[test]
    fn at_risk_examples() {
        let c = CohortFunctions::new(&section_311(7.5, 0.25)).unwrap();
        assert_eq!(c.y_prevalent(0.25, 0.0), 0.0);
        assert_eq!(c.y_prevalent(1.0, 4.0), 0.0);
        assert_relative_eq!(c.y_incident(0.25, 0.0), 250.0);
        assert_eq!(c.y_incident(0.0, 3.0), 0.0);
        assert_eq!(c.y_incident(0.25, 7.5), 0.0);
        assert_relative_eq!(c.y_total(0.25, 0.0), 250.0);
        // direct evaluation of the closed formula at t = 5
        let den = 0.5 * (1.0 - (-2f64).exp());
        let expected = 1000.0 * 0.75 * (-0.5f64).exp() * (1.0 - (-0.5f64).exp()) / den;
        assert_relative_eq!(c.y_prevalent(0.25, 5.0), expected, epsilon = 1e-9);
    }

    #[test]
    fn additivity_on_grid() {
        let c = CohortFunctions::new(&section_311(5.0, 0.5)).unwrap();
        for k in 0..100 {
            let t = 10.0 * k as f64 / 99.0;
            assert_relative_eq!(
                c.y_total(0.5, t),
                c.y_prevalent(0.5, t) + c.y_incident(0.5, t)
            );
            assert_relative_eq!(
                c.d_total(0.5, t),
                c.d_prevalent(0.5, t) + c.d_incident(0.5, t)
            );
        }
    }

    #[test]
    fn point_mass_entry_follows_everyone_for_theta() {
        let mut d = section_311(5.0, 1.0);
        d.incident_entry = DistributionSpec::PointMass { value: 1.0 };
        let c = CohortFunctions::new(&d).unwrap();
        let (_, inc) = c.failure_probabilities(1.0);
        assert_relative_eq!(inc, d.survival.cdf(5.0), epsilon = 1e-10);
        assert_eq!(c.d_prevalent(1.0, 0.0), 0.0);
    }

    #[test]
    fn dropout_scales_everything() {
        let mut d = section_311(5.0, 0.4);
        d.dropout = Some(DistributionSpec::Exponential { mean: 8.0 });
        let with = CohortFunctions::new(&d).unwrap();
        let without = CohortFunctions::new(&section_311(5.0, 0.4)).unwrap();
        for t in [0.5, 2.0, 4.0, 9.0] {
            let s = (-t / 8.0f64).exp();
            assert_relative_eq!(
                with.y_total(0.4, t),
                s * without.y_total(0.4, t),
                max_relative = 1e-12
            );
            assert_relative_eq!(
                with.d_total(0.4, t),
                s * without.d_total(0.4, t),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn validation_rejects_bad_designs() {
        let mut d = section_311(5.0, 1.2);
        assert!(d.validate().is_err());
        d.pi_incident = 0.5;
        d.incident_entry = DistributionSpec::Uniform {
            lower: 0.0,
            upper: 2.0,
        };
        assert!(d.validate().is_err());
        d.incident_entry = DistributionSpec::Uniform {
            lower: 0.0,
            upper: 1.0,
        };
        d.weight = Some(DistributionSpec::Uniform {
            lower: 0.0,
            upper: 5.0,
        });
        assert!(d.validate().is_err());
        d.weight = Some(DistributionSpec::FourParamBeta {
            shape1: 1.0,
            shape2: 4.0,
            lower: 0.0,
            upper: 10.0,
        });
        assert!(d.validate().is_ok());
        d.survival = DistributionSpec::PointMass { value: 3.0 };
        assert!(d.validate().is_err());
    }
}
