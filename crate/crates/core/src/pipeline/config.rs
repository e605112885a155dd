use serde::{Deserialize, Serialize};

use crate::dist::ModelKind;
use crate::error::{Error, Result};
use crate::hyptest::HypothesisSpec;
use crate::metric::{LevelGrid, DEFAULT_PROBES_PER_DIM};
use crate::seqtest::EValueConfig;

/// The four slots of a check plus run parameters. Field names double as
/// config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecipeConfig {
    pub model: ModelKind,
    pub metric: String,
    pub hypothesis: HypothesisSpec,
    pub testing: String,
    pub alpha: f64,
    pub levels: LevelGrid,
    pub bins: Option<usize>,
    pub evalue: Option<EValueConfig>,
    pub seed: u64,
    /// Half-plane directions per dimension.
    pub probes_per_dim: usize,
}

impl Default for RecipeConfig {
    fn default() -> Self {
        RecipeConfig {
            model: ModelKind::Gaussian,
            metric: "coverage".into(),
            hypothesis: HypothesisSpec::two_sided(),
            testing: "binom_bonferroni".into(),
            alpha: 0.05,
            levels: LevelGrid::default_grid(),
            bins: None,
            evalue: None,
            seed: 0,
            probes_per_dim: DEFAULT_PROBES_PER_DIM,
        }
    }
}

impl RecipeConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The monitor configuration, falling back to `λ = 0.9`, `p_alt = λ − 0.1`
    /// at the recipe's α.
    pub fn evalue_or_default(&self) -> Result<EValueConfig> {
        match self.evalue {
            Some(e) => EValueConfig::new(e.level, e.p_alt, e.alpha),
            None => EValueConfig::with_default_alt(0.9, self.alpha),
        }
    }
}
