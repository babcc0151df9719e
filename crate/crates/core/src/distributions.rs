//! Parametric families for survival, arrival, incident-entry, weight and
//! dropout laws.
//!
//! Every family exposes density, distribution and survival functions, a
//! quantile and inverse-CDF sampling. The distribution function evaluated
//! below the support (in particular at negative arguments) is 0, so
//! `H(t - theta)` can be evaluated for `t < theta` without special casing.

use rand::Rng;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, inv_beta_reg, ln_beta};

use crate::stats::{norm_cdf, norm_quantile, norm_sf};

use crate::error::{Error, Result};
use crate::quadrature::Integrator;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    Exponential {
        mean: f64,
    },
    Weibull {
        shape: f64,
        scale: f64,
    },
    Lognormal {
        log_mean: f64,
        log_sd: f64,
    },
    Uniform {
        lower: f64,
        upper: f64,
    },
    Beta {
        shape1: f64,
        shape2: f64,
    },
    /// Beta law rescaled to `[lower, upper]`.
    FourParamBeta {
        shape1: f64,
        shape2: f64,
        lower: f64,
        upper: f64,
    },
    /// Degenerate law. It has no density; `pdf` returns 0 everywhere.
    PointMass {
        value: f64,
    },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!(
            "{name} must be a positive finite number, got {v}"
        )))
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be finite, got {v}")))
    }
}

fn bounds(lower: f64, upper: f64) -> Result<()> {
    finite("lower", lower)?;
    finite("upper", upper)?;
    if lower < upper {
        Ok(())
    } else {
        Err(Error::config(format!(
            "lower ({lower}) must be below upper ({upper})"
        )))
    }
}

fn beta_pdf_unit(a: f64, b: f64, x: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    if x == 0.0 {
        return match a.partial_cmp(&1.0) {
            Some(std::cmp::Ordering::Less) => f64::INFINITY,
            Some(std::cmp::Ordering::Equal) => b,
            _ => 0.0,
        };
    }
    if x == 1.0 {
        return match b.partial_cmp(&1.0) {
            Some(std::cmp::Ordering::Less) => f64::INFINITY,
            Some(std::cmp::Ordering::Equal) => a,
            _ => 0.0,
        };
    }
    ((a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_beta(a, b)).exp()
}

fn beta_cdf_unit(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        beta_reg(a, b, x)
    }
}

/// Beta quantile: closed forms for the one-parameter power laws, otherwise
/// the incomplete-beta inverse polished by safeguarded Newton steps.
fn beta_quantile_unit(a: f64, b: f64, p: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    if b == 1.0 {
        return p.powf(1.0 / a);
    }
    if a == 1.0 {
        return -((-p).ln_1p() / b).exp_m1();
    }
    let start = inv_beta_reg(a, b, p).clamp(0.0, 1.0);
    polish_quantile(
        |x| beta_cdf_unit(a, b, x),
        |x| beta_pdf_unit(a, b, x),
        p,
        start,
        0.0,
        1.0,
    )
}

/// Refines `x` so that `cdf(x) = p` using Newton steps kept inside a
/// shrinking bracket; falls back to bisection when a step leaves it.
fn polish_quantile(
    cdf: impl Fn(f64) -> f64,
    pdf: impl Fn(f64) -> f64,
    p: f64,
    start: f64,
    mut lo: f64,
    mut hi: f64,
) -> f64 {
    let mut x = start.clamp(lo, hi);
    if !x.is_finite() {
        x = if lo.is_finite() {
            lo.max(0.0) + 1.0
        } else {
            0.0
        };
    }
    // finite bracket around the start before any Newton steps
    let mut step = x.abs().max(1.0);
    for _ in 0..2100 {
        if hi.is_finite() {
            break;
        }
        let probe = x + step;
        if cdf(probe) >= p {
            hi = probe;
        } else {
            lo = lo.max(probe);
            step *= 2.0;
        }
    }
    step = x.abs().max(1.0);
    for _ in 0..2100 {
        if lo.is_finite() {
            break;
        }
        let probe = x - step;
        if cdf(probe) <= p {
            lo = probe;
        } else {
            hi = hi.min(probe);
            step *= 2.0;
        }
    }
    for _ in 0..300 {
        let err = cdf(x) - p;
        if err == 0.0 {
            return x;
        }
        if err > 0.0 {
            hi = hi.min(x);
        } else {
            lo = lo.max(x);
        }
        let d = pdf(x);
        let mut next = if d.is_finite() && d > 0.0 {
            x - err / d
        } else {
            f64::NAN
        };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1e-300) {
            return next;
        }
        x = next;
        if hi - lo <= 1e-15 * hi.abs().max(1e-300) {
            break;
        }
    }
    x
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DistributionSpec::Exponential { mean } => positive("mean", mean),
            DistributionSpec::Weibull { shape, scale } => {
                positive("shape", shape)?;
                positive("scale", scale)
            }
            DistributionSpec::Lognormal { log_mean, log_sd } => {
                finite("log_mean", log_mean)?;
                positive("log_sd", log_sd)
            }
            DistributionSpec::Uniform { lower, upper } => bounds(lower, upper),
            DistributionSpec::Beta { shape1, shape2 } => {
                positive("shape1", shape1)?;
                positive("shape2", shape2)
            }
            DistributionSpec::FourParamBeta {
                shape1,
                shape2,
                lower,
                upper,
            } => {
                positive("shape1", shape1)?;
                positive("shape2", shape2)?;
                bounds(lower, upper)
            }
            DistributionSpec::PointMass { value } => {
                if value.is_finite() && value >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::config(format!(
                        "point-mass value must be a nonnegative finite number, got {value}"
                    )))
                }
            }
        }
    }

    /// Closed support interval `[lo, hi]` (hi may be infinite).
    pub fn support(&self) -> (f64, f64) {
        match *self {
            DistributionSpec::Exponential { .. }
            | DistributionSpec::Weibull { .. }
            | DistributionSpec::Lognormal { .. } => (0.0, f64::INFINITY),
            DistributionSpec::Uniform { lower, upper }
            | DistributionSpec::FourParamBeta { lower, upper, .. } => (lower, upper),
            DistributionSpec::Beta { .. } => (0.0, 1.0),
            DistributionSpec::PointMass { value } => (value, value),
        }
    }

    pub fn is_point_mass(&self) -> bool {
        matches!(self, DistributionSpec::PointMass { .. })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            DistributionSpec::Exponential { mean } => {
                if x < 0.0 {
                    0.0
                } else {
                    (-x / mean).exp() / mean
                }
            }
            DistributionSpec::Weibull { shape, scale } => {
                if x < 0.0 {
                    return 0.0;
                }
                if x == 0.0 {
                    return match shape.partial_cmp(&1.0) {
                        Some(std::cmp::Ordering::Less) => f64::INFINITY,
                        Some(std::cmp::Ordering::Equal) => 1.0 / scale,
                        _ => 0.0,
                    };
                }
                let z = x / scale;
                let zk = z.powf(shape);
                shape / scale * zk / z * (-zk).exp()
            }
            DistributionSpec::Lognormal { log_mean, log_sd } => {
                if x <= 0.0 {
                    return 0.0;
                }
                let z = (x.ln() - log_mean) / log_sd;
                (-0.5 * z * z).exp() / (x * log_sd * (2.0 * std::f64::consts::PI).sqrt())
            }
            DistributionSpec::Uniform { lower, upper } => {
                if x < lower || x > upper {
                    0.0
                } else {
                    1.0 / (upper - lower)
                }
            }
            DistributionSpec::Beta { shape1, shape2 } => beta_pdf_unit(shape1, shape2, x),
            DistributionSpec::FourParamBeta {
                shape1,
                shape2,
                lower,
                upper,
            } => {
                let w = upper - lower;
                beta_pdf_unit(shape1, shape2, (x - lower) / w) / w
            }
            DistributionSpec::PointMass { .. } => 0.0,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        match *self {
            DistributionSpec::Exponential { mean } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-x / mean).exp_m1()
                }
            }
            DistributionSpec::Weibull { shape, scale } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-(x / scale).powf(shape)).exp_m1()
                }
            }
            DistributionSpec::Lognormal { log_mean, log_sd } => {
                if x <= 0.0 {
                    0.0
                } else {
                    norm_cdf((x.ln() - log_mean) / log_sd)
                }
            }
            DistributionSpec::Uniform { lower, upper } => {
                ((x - lower) / (upper - lower)).clamp(0.0, 1.0)
            }
            DistributionSpec::Beta { shape1, shape2 } => beta_cdf_unit(shape1, shape2, x),
            DistributionSpec::FourParamBeta {
                shape1,
                shape2,
                lower,
                upper,
            } => beta_cdf_unit(shape1, shape2, (x - lower) / (upper - lower)),
            DistributionSpec::PointMass { value } => {
                if x >= value {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `1 - cdf(x)`, computed without cancellation where the family allows.
    pub fn sf(&self, x: f64) -> f64 {
        match *self {
            DistributionSpec::Exponential { mean } => {
                if x <= 0.0 {
                    1.0
                } else {
                    (-x / mean).exp()
                }
            }
            DistributionSpec::Weibull { shape, scale } => {
                if x <= 0.0 {
                    1.0
                } else {
                    (-(x / scale).powf(shape)).exp()
                }
            }
            DistributionSpec::Lognormal { log_mean, log_sd } => {
                if x <= 0.0 {
                    1.0
                } else {
                    norm_sf((x.ln() - log_mean) / log_sd)
                }
            }
            DistributionSpec::Beta { shape1, shape2 } => {
                if x <= 0.0 {
                    1.0
                } else if x >= 1.0 {
                    0.0
                } else {
                    beta_reg(shape2, shape1, 1.0 - x)
                }
            }
            _ => 1.0 - self.cdf(x),
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::config(format!(
                "probability must lie in [0, 1], got {p}"
            )));
        }
        Ok(self.quantile_unchecked(p))
    }

    fn quantile_unchecked(&self, p: f64) -> f64 {
        match *self {
            DistributionSpec::Exponential { mean } => {
                if p >= 1.0 {
                    f64::INFINITY
                } else {
                    -mean * (-p).ln_1p()
                }
            }
            DistributionSpec::Weibull { shape, scale } => {
                if p >= 1.0 {
                    f64::INFINITY
                } else {
                    scale * (-(-p).ln_1p()).powf(1.0 / shape)
                }
            }
            DistributionSpec::Lognormal { log_mean, log_sd } => {
                if p <= 0.0 {
                    return 0.0;
                }
                if p >= 1.0 {
                    return f64::INFINITY;
                }
                let start = (log_mean + log_sd * norm_quantile(p)).exp();
                polish_quantile(
                    |x| self.cdf(x),
                    |x| self.pdf(x),
                    p,
                    start,
                    0.0,
                    f64::INFINITY,
                )
            }
            DistributionSpec::Uniform { lower, upper } => lower + p * (upper - lower),
            DistributionSpec::Beta { shape1, shape2 } => beta_quantile_unit(shape1, shape2, p),
            DistributionSpec::FourParamBeta {
                shape1,
                shape2,
                lower,
                upper,
            } => lower + (upper - lower) * beta_quantile_unit(shape1, shape2, p),
            DistributionSpec::PointMass { value } => value,
        }
    }

    /// One inverse-CDF draw. The spec must already be valid.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.quantile_unchecked(u)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Result<Vec<f64>> {
        self.validate()?;
        Ok((0..count).map(|_| self.draw(rng)).collect())
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DistributionSpec::Exponential { mean } => mean,
            DistributionSpec::Weibull { shape, scale } => {
                scale * statrs::function::gamma::gamma(1.0 + 1.0 / shape)
            }
            DistributionSpec::Lognormal { log_mean, log_sd } => {
                (log_mean + 0.5 * log_sd * log_sd).exp()
            }
            DistributionSpec::Uniform { lower, upper } => 0.5 * (lower + upper),
            DistributionSpec::Beta { shape1, shape2 } => shape1 / (shape1 + shape2),
            DistributionSpec::FourParamBeta {
                shape1,
                shape2,
                lower,
                upper,
            } => lower + (upper - lower) * shape1 / (shape1 + shape2),
            DistributionSpec::PointMass { value } => value,
        }
    }

    /// Points inside `(a, b)` where the density may fail to be smooth.
    /// Support bounds plus a few quantiles inside `(a, b)`. The quantiles
    /// keep adaptive integration from stepping over the bulk of the mass when
    /// the interval is long relative to the distribution's scale.
    pub fn kinks_within(&self, a: f64, b: f64) -> Vec<f64> {
        let (lo, hi) = self.support();
        let mut pts = vec![lo, hi];
        if !self.is_point_mass() {
            pts.extend(SCALE_LEVELS.iter().filter_map(|&p| self.quantile(p).ok()));
        }
        pts.retain(|&x| x.is_finite() && x > a && x < b);
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// `∫ g dF` over `[a, b)`, i.e. a Lebesgue–Stieltjes integral that also
    /// covers point masses.
    pub fn expect_over(
        &self,
        a: f64,
        b: f64,
        integrator: &Integrator,
        extra_breaks: &[f64],
        g: impl Fn(f64) -> f64,
    ) -> f64 {
        if let DistributionSpec::PointMass { value } = *self {
            return if value >= a && value < b {
                g(value)
            } else {
                0.0
            };
        }
        let mut breaks = self.kinks_within(a, b);
        breaks.extend(extra_breaks.iter().copied().filter(|&x| x > a && x < b));
        integrator
            .integrate(|x| g(x) * self.pdf(x), a, b, &breaks)
            .value
    }
}

const SCALE_LEVELS: [f64; 7] = [0.1, 0.5, 0.9, 0.99, 0.999, 1.0 - 1e-6, 1.0 - 1e-10];

/// A reproducible random stream: one per replication, derived from a base
/// seed and a stream index so that replications never share state.
#[derive(Debug, Clone)]
pub struct RandomStream(ChaCha8Rng);

impl RandomStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RandomStream(rng)
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
