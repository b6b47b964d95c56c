use std::path::{Path, PathBuf};

use alpha_merton::market::{Market, Validate};
use alpha_merton::sim::SimConfig;
use alpha_merton::Interpretation;
use serde::{Deserialize, Serialize};

use crate::Failure;

fn default_a0() -> f64 {
    1.0
}

fn default_deltas() -> Vec<f64> {
    vec![-0.5, -0.25, 0.0, 0.25, 0.5]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Write every path of each verified ensemble as CSV.
    #[serde(default)]
    pub ensemble_csv: bool,
    /// Write the per-time mean/variance summary of each ensemble.
    #[serde(default)]
    pub ensemble_summary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub market: Market,
    pub rho: f64,
    pub alphas: Vec<f64>,
    #[serde(default = "default_a0")]
    pub a0: f64,
    #[serde(default)]
    pub sim: Option<SimConfig>,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default = "default_deltas")]
    pub perturbation_deltas: Vec<f64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::validation(format!("invalid config {}: {e}", path.display())))
    }

    /// Checks everything that can be checked without solving or simulating.
    pub fn validate(&self) -> Result<(), Failure> {
        let violations = self.market.validate();
        if !violations.is_empty() {
            let lines: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(Failure::validation(format!("invalid market: {}", lines.join("; "))));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Failure::validation("rho must be strictly positive"));
        }
        if !(self.a0 > 0.0 && self.a0.is_finite()) {
            return Err(Failure::validation("a0 must be strictly positive"));
        }
        if self.alphas.is_empty() {
            return Err(Failure::validation("alphas must not be empty"));
        }
        self.interpretations()?;
        if let Some(sim) = &self.sim {
            sim.validate().map_err(Failure::from_core)?;
        }
        if !self.perturbation_deltas.contains(&0.0) {
            return Err(Failure::validation("perturbation_deltas must include 0"));
        }
        Ok(())
    }

    pub fn interpretations(&self) -> Result<Vec<Interpretation>, Failure> {
        self.alphas
            .iter()
            .map(|&a| Interpretation::new(a).map_err(Failure::from_core))
            .collect()
    }

    pub fn require_sim(&self) -> Result<&SimConfig, Failure> {
        self.sim
            .as_ref()
            .ok_or_else(|| Failure::validation("config has no sim block"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SINGLE: &str = r#"{
        "market": {"type": "constant_vol", "mu": [0.08], "gamma": [[0.2]], "r": 0.03},
        "rho": 0.1,
        "alphas": [0, 0.5, 1],
        "sim": {"horizon": 50, "dt": 0.25, "n_paths": 1000, "seed": 42}
    }"#;

    #[test]
    fn parses_with_defaults() {
        let c: ExperimentConfig = serde_json::from_str(SINGLE).unwrap();
        assert_eq!(c.a0, 1.0);
        assert_eq!(c.sim.unwrap().save_every, 1);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn seed_is_required() {
        let no_seed = SINGLE.replace(", \"seed\": 42", "");
        assert!(serde_json::from_str::<ExperimentConfig>(&no_seed).is_err());
    }

    #[test]
    fn bad_correlation_is_a_validation_error() {
        let text = r#"{
            "market": {"type": "heston", "mu": 0.06, "r": 0.02, "kappa": 2, "long_run_mean": 0.04,
                       "xi": 0.3, "rho_corr": 2, "v0": 0.04},
            "rho": 0.1, "alphas": [0]
        }"#;
        let c: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(c.validate().unwrap_err().code, crate::EXIT_VALIDATION);
    }
}
