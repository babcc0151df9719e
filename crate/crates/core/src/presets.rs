//! Built-in parameter sets for the validation studies.

use crate::cohort::StudyDesign;
use crate::distributions::DistributionSpec;
use crate::inference::PowerEffect;
use crate::simulate::PowerSimulation;

pub const PRESET_NAMES: [&str; 6] = ["table1", "fig2", "fig3", "figS1", "figS2", "waitlist"];

/// Exponential(mean 10) survival and arrival, uniform `U*`, `tau = 10`,
/// `n = 1000`: about half of underlying prevalent subjects are truncated.
pub fn exponential_design(theta: f64, pi: f64) -> StudyDesign {
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

/// Active-window lengths swept with a uniform weight.
pub const WINDOW_SWEEP: [f64; 5] = [1.0, 2.5, 5.0, 10.0, 15.0];

pub fn table1() -> Vec<StudyDesign> {
    WINDOW_SWEEP
        .iter()
        .map(|&theta| exponential_design(theta, 0.5))
        .collect()
}

/// Early-, late- and flat-weighted objectives on a five-unit window.
pub fn fig2() -> Vec<(&'static str, StudyDesign)> {
    let with_weight = |w: Option<DistributionSpec>| {
        let mut d = exponential_design(5.0, 0.5);
        d.weight = w;
        d
    };
    vec![
        (
            "beta_1_4",
            with_weight(Some(DistributionSpec::FourParamBeta {
                shape1: 1.0,
                shape2: 4.0,
                lower: 0.0,
                upper: 10.0,
            })),
        ),
        (
            "beta_4_1",
            with_weight(Some(DistributionSpec::FourParamBeta {
                shape1: 4.0,
                shape2: 1.0,
                lower: 0.0,
                upper: 10.0,
            })),
        ),
        ("uniform", with_weight(None)),
    ]
}

/// Incident-censoring shapes `c` of `U* ~ Beta(c, 1)` per window length.
pub fn fig3_grid() -> Vec<(f64, Vec<f64>)> {
    vec![
        (7.5, vec![1.0, 2.0, 5.0, 10.0, 20.0]),
        (5.0, vec![1.0, 2.0, 4.0, 15.0, 40.0]),
    ]
}

pub fn fig3_design(theta: f64, c: f64) -> StudyDesign {
    let mut d = exponential_design(theta, 0.5);
    d.incident_entry = DistributionSpec::Beta {
        shape1: c,
        shape2: 1.0,
    };
    d
}

/// Two groups of 500, log hazard ratio 0.3.
pub fn fig3_power() -> PowerSimulation {
    PowerSimulation {
        beta: 0.3,
        alpha: 0.05,
        group_sizes: [500, 500],
        pis: vec![0.0, 0.25, 0.5, 0.75, 1.0],
    }
}

pub const FIG_S1_PIS: [f64; 3] = [0.25, 0.5, 0.75];

pub fn fig_s1() -> StudyDesign {
    exponential_design(7.5, 0.5)
}

pub fn fig_s1_grid() -> Vec<f64> {
    (1..=20).map(|k| 0.5 * k as f64).collect()
}

/// Survival × arrival × censoring combinations for failure counts.
pub fn fig_s2() -> Vec<(&'static str, StudyDesign)> {
    let mut a = exponential_design(7.5, 0.5);
    a.incident_entry = DistributionSpec::Beta {
        shape1: 2.0,
        shape2: 1.0,
    };

    let mut b = exponential_design(7.5, 0.5);
    b.survival = DistributionSpec::Weibull {
        shape: 1.5,
        scale: 8.0,
    };
    b.arrival = DistributionSpec::Weibull {
        shape: 1.4,
        scale: 6.0,
    };

    let mut c = exponential_design(5.0, 0.5);
    c.survival = DistributionSpec::Weibull {
        shape: 0.75,
        scale: 6.0,
    };
    c.incident_entry = DistributionSpec::Beta {
        shape1: 0.5,
        shape2: 1.0,
    };

    let mut d = exponential_design(5.0, 0.3);
    d.survival = DistributionSpec::Lognormal {
        log_mean: 1.8,
        log_sd: 0.8,
    };
    d.arrival = DistributionSpec::Weibull {
        shape: 1.4,
        scale: 4.25,
    };
    d.dropout = Some(DistributionSpec::Exponential { mean: 15.0 });

    vec![
        ("exp_exp_uniform", exponential_design(7.5, 0.5)),
        ("exp_exp_beta21", a),
        ("weibull_weibull_uniform", b),
        ("weibull_exp_beta051", c),
        ("lognormal_weibull_uniform_dropout", d),
    ]
}

/// Waitlist analog: Weibull(0.75, 4.25) time to event, Weibull(1.40, 4.25)
/// prevalent arrival, three-unit window, exponential dropout with mean 5.
pub fn waitlist() -> StudyDesign {
    StudyDesign {
        theta: 3.0,
        tau: 10.0,
        n: 5000,
        pi_incident: 0.5,
        survival: DistributionSpec::Weibull {
            shape: 0.75,
            scale: 4.25,
        },
        arrival: DistributionSpec::Weibull {
            shape: 1.40,
            scale: 4.25,
        },
        incident_entry: DistributionSpec::Uniform {
            lower: 0.0,
            upper: 1.0,
        },
        weight: None,
        dropout: Some(DistributionSpec::Exponential { mean: 5.0 }),
    }
}

/// Effect used for the waitlist power readout (a modest age effect).
pub fn waitlist_effect() -> PowerEffect {
    PowerEffect {
        log_hr: 0.1,
        predictor_variance: 1.0,
        r_squared: 0.0,
    }
}
