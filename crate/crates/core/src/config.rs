//! Experiment configuration files (JSON) and the bundled example configs.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::LevyModel;
use crate::integrands::IntegrandSpec;
use crate::martingale::FiniteVariationSpec;
use crate::reflection::MinimumScheme;
use crate::verify::{Experiment, StorageSpec, TestSpec};

/// Environment variable consulted for the seed when neither the command
/// line nor the config sets one.
pub const SEED_ENV: &str = "LEVY_STORAGE_SEED";
pub const DEFAULT_SEED: u64 = 1;

fn default_true() -> bool {
    true
}
fn default_z() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReflectionSection {
    /// Reflect at 0; otherwise `Z = X̃ + Y` with `y` below.
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default)]
    pub z0: f64,
    #[serde(default)]
    pub scheme: MinimumScheme,
    #[serde(default)]
    pub y: Option<FiniteVariationSpec>,
}

impl Default for ReflectionSection {
    fn default() -> Self {
        Self {
            enabled: true,
            z0: 0.0,
            scheme: MinimumScheme::default(),
            y: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestsSection {
    pub replications: usize,
    /// Defaults to the horizon alone.
    #[serde(default)]
    pub checkpoints: Vec<f64>,
    #[serde(default = "default_z")]
    pub z: f64,
    pub run: Vec<TestSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Write the paths of replication 0 next to the report.
    #[serde(default)]
    pub dump_paths: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: LevyModel,
    /// Defaults to `I ≡ (1, ..., 1)`.
    #[serde(default)]
    pub integrand: Option<IntegrandSpec>,
    #[serde(default)]
    pub reflection: ReflectionSection,
    pub horizon: f64,
    pub grid: GridSection,
    pub tests: TestsSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replications: Option<usize>,
    pub horizon: Option<f64>,
    pub dt: Option<f64>,
}

impl ConfigFile {
    /// Parses and schema-checks a config; errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Seed precedence: override, config, environment, default.
    pub fn resolve_seed(&self, overrides: &Overrides) -> Result<u64> {
        if let Some(s) = overrides.seed.or(self.seed) {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
            Err(_) => Ok(DEFAULT_SEED),
        }
    }

    /// Applies the overrides and builds a validated experiment. A shorter
    /// horizon drops the checkpoints beyond it (keeping the horizon itself
    /// if none remain).
    pub fn to_experiment(&self, overrides: &Overrides) -> Result<Experiment> {
        let horizon = overrides.horizon.unwrap_or(self.horizon);
        let mut checkpoints = if self.tests.checkpoints.is_empty() {
            vec![horizon]
        } else {
            self.tests.checkpoints.clone()
        };
        if overrides.horizon.is_some() {
            checkpoints.retain(|&t| t <= horizon);
            if checkpoints.is_empty() {
                checkpoints.push(horizon);
            }
        }
        let r = &self.reflection;
        let storage = if r.enabled {
            if r.y.is_some() {
                return Err(Error::Config("reflection.y is only used when reflection.enabled is false".into()));
            }
            StorageSpec::Reflected {
                z0: r.z0,
                scheme: r.scheme,
            }
        } else {
            StorageSpec::Explicit(r.y.clone().unwrap_or_else(|| FiniteVariationSpec::constant(r.z0)))
        };
        let exp = Experiment {
            model: self.model.clone(),
            integrand: self
                .integrand
                .clone()
                .unwrap_or_else(|| IntegrandSpec::constant(vec![1.0; self.model.dim()])),
            storage,
            horizon,
            dt: overrides.dt.unwrap_or(self.grid.dt),
            checkpoints,
            replications: overrides.replications.unwrap_or(self.tests.replications),
            base_seed: self.resolve_seed(overrides)?,
            z: self.tests.z,
            tests: self.tests.run.clone(),
        };
        exp.validate()?;
        Ok(exp)
    }
}

/// A bundled example config.
#[derive(Debug, Clone, Copy)]
pub struct Fixture {
    pub name: &'static str,
    pub description: &'static str,
    pub json: &'static str,
}

impl Fixture {
    pub fn config(&self) -> Result<ConfigFile> {
        ConfigFile::from_json(self.json)
    }
}

pub const FIXTURES: &[Fixture] = &[
    Fixture {
        name: "mm1_pk",
        description: "M/M/1 workload CP(0.5, Exp(1)) - t, reflected: (1/t)∫e^-Z ds -> 2/3",
        json: include_str!("../fixtures/mm1_pk.json"),
    },
    Fixture {
        name: "reflected_brownian",
        description: "reflected Brownian motion, drift -1, variance 1: (1/t)∫e^-Z ds -> 2/3",
        json: include_str!("../fixtures/reflected_brownian.json"),
    },
    Fixture {
        name: "transient",
        description: "transient workload CP(1.5, Exp(1)) - t: (1/t)∫e^-Z ds -> 0",
        json: include_str!("../fixtures/transient.json"),
    },
    Fixture {
        name: "modulated_strong_law",
        description: "two-state Markov-modulated input: X̃(t)/t -> -0.2 and the reflected limit 0.2",
        json: include_str!("../fixtures/modulated_strong_law.json"),
    },
    Fixture {
        name: "pasta",
        description: "Poisson(1) observer of a reflected workload: arrival and time averages of e^-Z agree",
        json: include_str!("../fixtures/pasta.json"),
    },
    Fixture {
        name: "mm1_martingale",
        description: "M/M/1 workload: E M(t) = 0, E M(t)^2 = E∫e^-2Z A ds, with a corrupted-term control",
        json: include_str!("../fixtures/mm1_martingale.json"),
    },
    Fixture {
        name: "mm1_rate_decay",
        description: "M/M/1 workload: median |M(t)|/t decays like t^-1/2",
        json: include_str!("../fixtures/mm1_rate_decay.json"),
    },
    Fixture {
        name: "compensation",
        description: "compound Poisson input: ∫A(s-)dX - EX(1)∫A ds = o(t) for constant and sinusoidal A",
        json: include_str!("../fixtures/compensation.json"),
    },
    Fixture {
        name: "zero_model",
        description: "zero Lévy process: every martingale term vanishes",
        json: include_str!("../fixtures/zero_model.json"),
    },
];

pub fn fixture(name: &str) -> Result<&'static Fixture> {
    FIXTURES
        .iter()
        .find(|f| f.name == name)
        .ok_or_else(|| Error::Config(format!("unknown fixture {name:?}")))
}
