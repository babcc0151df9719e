//! The configuration document shared by the command line and the HTTP
//! service. TOML or JSON; unknown keys are rejected and every distribution
//! is validated on load.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::StudyDesign;
use crate::error::{Error, Result};
use crate::inference::{InferenceOptions, PowerEffect};
use crate::simulate::{Experiment, PowerSimulation, SimulationPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub design: StudyDesign,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimation: Option<EstimationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference: Option<InferenceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationSection {
    /// Proportions compared with the optimum in the ARE table.
    #[serde(default = "default_comparisons")]
    pub comparisons: Vec<f64>,
    /// Optimize the variance at this single time instead of the curve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_time: Option<f64>,
    /// Grid for the reported variance curves; defaults to 101 points.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub curve_grid: Vec<f64>,
}

fn default_comparisons() -> Vec<f64> {
    crate::optimizer::DEFAULT_COMPARISONS.to_vec()
}

impl Default for EstimationSection {
    fn default() -> Self {
        EstimationSection {
            comparisons: default_comparisons(),
            fixed_time: None,
            curve_grid: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceSection {
    pub effect: PowerEffect,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "yes")]
    pub apply_dropout: bool,
}

fn default_alpha() -> f64 {
    0.05
}

fn yes() -> bool {
    true
}

impl InferenceSection {
    pub fn options(&self) -> InferenceOptions {
        InferenceOptions {
            apply_dropout: self.apply_dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub experiment: Experiment,
    #[serde(default = "default_replications")]
    pub replications: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pis: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_effect: Option<PowerSimulation>,
}

fn default_replications() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Toml,
    Json,
}

impl ConfigFormat {
    /// JSON for `.json` paths, TOML otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => ConfigFormat::Json,
            _ => ConfigFormat::Toml,
        }
    }
}

impl ConfigDocument {
    pub fn new(design: StudyDesign) -> Self {
        ConfigDocument {
            design,
            estimation: None,
            inference: None,
            simulation: None,
            output: None,
        }
    }

    pub fn parse(text: &str, format: ConfigFormat) -> Result<Self> {
        let doc: ConfigDocument = match format {
            ConfigFormat::Toml => toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?,
            ConfigFormat::Json => {
                serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
            }
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, ConfigFormat::from_path(path))
    }

    pub fn emit(&self, format: ConfigFormat) -> Result<String> {
        match format {
            ConfigFormat::Toml => {
                toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
            }
            ConfigFormat::Json => {
                serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.design.validate()?;
        if let Some(e) = &self.estimation {
            for &pi in &e.comparisons {
                crate::objective::check_pi(pi)?;
            }
            if let Some(t) = e.fixed_time {
                if !(t > 0.0 && t <= self.design.tau) {
                    return Err(Error::config(format!(
                        "fixed_time must lie in (0, tau], got {t}"
                    )));
                }
            }
        }
        if let Some(i) = &self.inference {
            if !(i.alpha > 0.0 && i.alpha < 1.0) {
                return Err(Error::config("alpha must lie in (0, 1)"));
            }
        }
        if self.simulation.is_some() {
            self.simulation_plan(0)?.validate()?;
        }
        Ok(())
    }

    /// The simulation plan, with `seed` used when the document has none.
    pub fn simulation_plan(&self, seed: u64) -> Result<SimulationPlan> {
        let s = self
            .simulation
            .as_ref()
            .ok_or_else(|| Error::config("config has no [simulation] section"))?;
        Ok(SimulationPlan {
            design: self.design.clone(),
            replications: s.replications,
            seed: s.seed.unwrap_or(seed),
            experiment: s.experiment,
            power_effect: s.power_effect.clone(),
            grid: s.grid.clone(),
            pis: s.pis.clone(),
        })
    }
}
