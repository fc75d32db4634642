//! JSON problem files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CostSpec, ModelParams, ReactionLaw};
use crate::simulator::SimConfig;
use crate::solver::SolverConfig;

/// A complete problem description. Unknown keys are rejected at every level.
///
/// ```json
/// {
///   "model": {"mu": 0.1, "sigma": 0.3, "r": 0.06, "rho": 1.4},
///   "reaction": {"t": {"point": 1.0}, "sigma_shift": {"point": 0.1}},
///   "cost": {"K": 0.5}
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub model: ModelParams,
    #[serde(default)]
    pub reaction: ReactionLaw,
    pub cost: CostSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sim: SimConfig,
}

impl ProblemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ProblemConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.reaction.validate(&self.model)?;
        self.cost.validate()?;
        self.solver.validate()?;
        self.sim.validate()
    }
}
