use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ssmimpute::design::ModelSpec;
use ssmimpute::imputers::{ImputationConfig, Method};
use ssmimpute::missingness::{Mechanism, MechanismSpec};
use ssmimpute::simulation::{GridSpec, ScenarioKind, ScenarioSpec};
use ssmimpute::{Error, Result};

/// Everything a command needs, read from one JSON document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: Option<ModelSpec>,
    /// Further declarations ranked against `model` by `fit`.
    #[serde(default)]
    pub candidates: Vec<ModelSpec>,
    #[serde(default)]
    pub imputation: ImputationConfig,
    #[serde(default)]
    pub scenario: Option<ScenarioSpec>,
    #[serde(default)]
    pub mechanism: Option<MechanismSpec>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub method: Option<Method>,
    /// Exposure columns of the data file; the first regressor when empty.
    #[serde(default)]
    pub exposures: Vec<String>,
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Overrides the seed of every block.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// Push a seed into every seeded block.
    pub fn apply_seed(&mut self, seed: Option<u64>) {
        let Some(seed) = seed.or(self.seed) else { return };
        self.seed = Some(seed);
        self.imputation.seed = seed;
        if let Some(sc) = &mut self.scenario {
            sc.seed = seed;
        }
        if let Some(ms) = &mut self.mechanism {
            ms.seed = seed;
        }
        if let Some(g) = &mut self.grid {
            g.seed = seed;
        }
    }

    /// Check every block that does not need data.
    pub fn validate(&self) -> Result<()> {
        self.imputation.validate()?;
        if let Some(sc) = &self.scenario {
            sc.validate()?;
        }
        if let Some(ms) = &self.mechanism {
            ms.validate()?;
        }
        if let Some(g) = &self.grid {
            g.validate()?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the effective configuration, ignoring file locations.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.data = None;
        canonical.out = None;
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Replication count and series length of the default benchmark.
pub const DESK_SCALE: (usize, usize) = (100, 500);
pub const FULL_SCALE: (usize, usize) = (500, 1000);

/// Both scenarios at 50% MCAR for every method.
pub fn default_grid(seed: u64) -> GridSpec {
    let (reps, length) = DESK_SCALE;
    GridSpec {
        scenarios: vec![
            ScenarioSpec::new(ScenarioKind::Stationary, length, 0),
            ScenarioSpec::new(ScenarioKind::Nonstationary, length, 0),
        ],
        mechanisms: vec![Mechanism::Mcar],
        rates: vec![0.5],
        methods: Method::ALL.to_vec(),
        reps,
        seed,
        imputation: ImputationConfig::default(),
        mechanism_slope: 1.0,
        change_point_window: 0.05,
    }
}

/// Switch a grid to the large replication count and series length.
pub fn full_scale(mut grid: GridSpec) -> GridSpec {
    let (reps, length) = FULL_SCALE;
    grid.reps = reps;
    for sc in &mut grid.scenarios {
        sc.length = length;
    }
    grid
}
