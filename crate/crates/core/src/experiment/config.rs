use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dynamics::PolicyKind;
use crate::error::{Error, Result};
use crate::gatekeeper::{MCConfig, Thresholds};
use crate::world::SimConfig;

/// A full experiment as read from a JSON document. Every field is optional in
/// the file; missing fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub n_worlds: usize,
    /// Egos (lowest ids first) under gatekeeper control.
    pub n_online: usize,
    /// Fixed policy for every ego in a baseline run.
    pub baseline_policy: Option<PolicyKind>,
    /// Gatekeepers estimate and log risk but never switch policy.
    pub observe_only: bool,
    pub base_seed: u64,
    pub rho_star: f64,
    pub mc: MCConfig,
    /// Resample count for bootstrap intervals; normal intervals when absent.
    pub bootstrap_resamples: Option<usize>,
    #[serde(flatten)]
    pub world: SimConfig,

    // Execution settings. Not echoed into outputs so results do not depend on them.
    #[serde(skip_serializing)]
    pub workers: usize,
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    #[serde(skip_serializing)]
    pub dump_trajectories: bool,
    #[serde(skip_serializing)]
    pub dump_risk: bool,
}

const EXECUTION_KEYS: [&str; 4] = ["workers", "output_dir", "dump_trajectories", "dump_risk"];

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_worlds: 1200,
            n_online: 12,
            baseline_policy: None,
            observe_only: false,
            base_seed: 0,
            rho_star: 2.0,
            mc: MCConfig::default(),
            bootstrap_resamples: None,
            world: SimConfig::default(),
            workers: 0,
            output_dir: PathBuf::from("out"),
            dump_trajectories: false,
            dump_risk: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::parse(text, Path::new("<inline>"))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        let json = |source| Error::Json {
            path: path.to_path_buf(),
            source,
        };
        let raw: Value = serde_json::from_str(text).map_err(json)?;
        let known = serde_json::to_value(Self::default()).expect("default config serializes");
        let mut unknown = Vec::new();
        unknown_keys(&raw, &known, "", &mut unknown);
        unknown.retain(|k| !EXECUTION_KEYS.contains(&k.as_str()));
        if !unknown.is_empty() {
            return Err(Error::Config(format!(
                "{}: unknown field(s): {}",
                path.display(),
                unknown.join(", ")
            )));
        }
        let config: Self = serde_json::from_value(raw).map_err(json)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim_config().validate()?;
        self.mc.validate().map_err(|e| Error::Config(e.to_string()))?;
        Thresholds::new(self.rho_star).map_err(|e| Error::Config(e.to_string()))?;
        if self.n_worlds == 0 {
            return Err(Error::Config("n_worlds must be at least 1".into()));
        }
        if self.n_online > self.world.n_ego {
            return Err(Error::Config(format!(
                "n_online ({}) exceeds n_ego ({})",
                self.n_online, self.world.n_ego
            )));
        }
        match self.baseline_policy {
            Some(PolicyKind::Alter) => {
                return Err(Error::Config("baseline_policy must be defensive or hotshot".into()));
            }
            Some(_) if self.n_online > 0 => {
                return Err(Error::Config("baseline runs must have n_online = 0".into()));
            }
            _ => {}
        }
        if self.bootstrap_resamples == Some(0) {
            return Err(Error::Config("bootstrap_resamples must be positive".into()));
        }
        Ok(())
    }

    /// World settings with the ego starting policy resolved.
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            ego_policy: self.baseline_policy.unwrap_or(PolicyKind::Hotshot),
            ..self.world.clone()
        }
    }

    pub fn thresholds(&self) -> Result<Thresholds> {
        Thresholds::new(self.rho_star)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn unknown_keys(raw: &Value, known: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Value::Object(raw), Value::Object(known)) = (raw, known) else {
        return;
    };
    for (key, value) in raw {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match known.get(key) {
            Some(k) => unknown_keys(value, k, &path, out),
            None => out.push(path),
        }
    }
}
