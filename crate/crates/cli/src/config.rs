//! Run configuration: one JSON document whose sections mirror the library
//! configs. Missing keys take defaults, unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use viewnav::seed::derive;
use viewnav::{ClassBins, ConfidenceField, EpisodeConfig, PoseGrid, Provenance, TrainConfig, WorldConfig};

use crate::CliError;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

pub const POLICY_NAMES: [&str; 5] = ["static", "random", "classifier", "regression", "oracle"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub world: WorldSection,
    pub field: FieldSpec,
    pub labels: LabelSection,
    pub train: RegressorSection,
    pub classifier: ClassifierSection,
    pub episode: EpisodeConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            world: WorldSection::default(),
            field: FieldSpec::Preset("car".into()),
            labels: LabelSection::default(),
            train: RegressorSection::default(),
            classifier: ClassifierSection::default(),
            episode: EpisodeConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSection {
    pub n_angles: usize,
    pub n_radii: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub obs_dim: usize,
    pub obs_noise_sigma: f64,
}

impl Default for WorldSection {
    fn default() -> Self {
        let g = PoseGrid::standard();
        Self {
            n_angles: g.n_angles,
            n_radii: g.n_radii,
            r_min: g.r_min,
            r_max: g.r_max,
            obs_dim: WorldConfig::DEFAULT_OBS_DIM,
            obs_noise_sigma: 0.0,
        }
    }
}

/// Either a preset name (`"car"`, `"person"`) or explicit field parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldSpec {
    Preset(String),
    Params(ConfidenceField),
}

impl Serialize for FieldSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            FieldSpec::Preset(name) => s.serialize_str(name),
            FieldSpec::Params(field) => field.serialize(s),
        }
    }
}

// Dispatching by hand keeps serde's "unknown field" messages, which an
// untagged enum would swallow.
impl<'de> Deserialize<'de> for FieldSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(d)?;
        match value {
            serde_json::Value::String(name) => Ok(FieldSpec::Preset(name)),
            other => serde_json::from_value(other)
                .map(FieldSpec::Params)
                .map_err(|e| serde::de::Error::custom(format!("field: {e}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelSection {
    pub p_thres: f64,
    pub radial_weight: f64,
}

impl Default for LabelSection {
    fn default() -> Self {
        Self {
            p_thres: 0.9,
            radial_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressorSection {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub include_unreachable: bool,
    pub val_fraction: f64,
}

impl Default for RegressorSection {
    fn default() -> Self {
        let fit = TrainConfig::default();
        Self {
            hidden: vec![64, 64],
            epochs: fit.epochs,
            batch_size: fit.batch_size,
            lr: fit.lr,
            include_unreachable: fit.include_unreachable,
            val_fraction: fit.val_fraction,
        }
    }
}

impl RegressorSection {
    pub fn fit(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            include_unreachable: self.include_unreachable,
            val_fraction: self.val_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSection {
    pub hidden: Vec<usize>,
    pub bins: ClassBins,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub include_unreachable: bool,
    pub val_fraction: f64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let r = RegressorSection::default();
        Self {
            hidden: r.hidden,
            bins: ClassBins::default(),
            epochs: r.epochs,
            batch_size: r.batch_size,
            lr: r.lr,
            include_unreachable: r.include_unreachable,
            val_fraction: r.val_fraction,
        }
    }
}

impl ClassifierSection {
    pub fn fit(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            include_unreachable: self.include_unreachable,
            val_fraction: self.val_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub n_trials: usize,
    pub policies: Vec<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_trials: 100,
            policies: ["static", "random", "classifier", "regression"].map(String::from).to_vec(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every section before any work starts.
    pub fn validate(&self) -> Result<(), String> {
        self.world_config().map_err(|e| format!("world: {e}"))?;
        self.field().map_err(|e| format!("field: {e}"))?;
        viewnav::labels::validate_threshold(self.labels.p_thres).map_err(|e| format!("labels: {e}"))?;
        if self.labels.radial_weight.is_nan() || self.labels.radial_weight <= 0.0 {
            return Err("labels: radial_weight must be positive".into());
        }
        for (name, fit, hidden) in [
            ("train", self.train.fit(), &self.train.hidden),
            ("classifier", self.classifier.fit(), &self.classifier.hidden),
        ] {
            fit.validate().map_err(|e| format!("{name}: {e}"))?;
            if hidden.contains(&0) {
                return Err(format!("{name}: hidden layer widths must be positive"));
            }
        }
        self.classifier.bins.validate().map_err(|e| format!("classifier: {e}"))?;
        self.episode.validate().map_err(|e| format!("episode: {e}"))?;
        if self.eval.n_trials == 0 {
            return Err("eval: n_trials must be at least 1".into());
        }
        if self.eval.policies.is_empty() {
            return Err("eval: policies must not be empty".into());
        }
        for (k, name) in self.eval.policies.iter().enumerate() {
            if !POLICY_NAMES.contains(&name.as_str()) {
                return Err(format!(
                    "eval: unknown policy `{name}`, expected one of {}",
                    POLICY_NAMES.join(", ")
                ));
            }
            if self.eval.policies[..k].contains(name) {
                return Err(format!("eval: policy `{name}` listed twice"));
            }
        }
        Ok(())
    }

    pub fn world_config(&self) -> viewnav::Result<WorldConfig> {
        let w = &self.world;
        let grid = PoseGrid::new(w.n_angles, w.n_radii, w.r_min, w.r_max)?;
        WorldConfig::new(grid, w.obs_dim, w.obs_noise_sigma, self.seeds().encoder)
    }

    pub fn field(&self) -> viewnav::Result<ConfidenceField> {
        match &self.field {
            FieldSpec::Preset(name) => ConfidenceField::preset(name).ok_or_else(|| {
                viewnav::Error::InvalidConfig(format!("unknown preset `{name}`, expected car or person"))
            }),
            FieldSpec::Params(field) => {
                field.validate()?;
                Ok(field.clone())
            }
        }
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::from_master(self.seed)
    }

    /// SHA-256 of the effective configuration (defaults filled in, seed
    /// included, output directory excluded).
    pub fn hash(&self) -> String {
        let canonical = RunConfig {
            out: None,
            ..self.clone()
        };
        let text = serde_json::to_string(&canonical).expect("config serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            schema_version: CONFIG_SCHEMA_VERSION,
            config_hash: self.hash(),
            master_seed: self.seed,
        }
    }
}

/// Seeds of the randomized stages, derived from the master seed. Evaluation
/// derives its per-episode seeds from the master seed directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub encoder: u64,
    pub observation_noise: u64,
    pub regressor: u64,
    pub classifier: u64,
    pub episode: u64,
}

impl Seeds {
    pub fn from_master(master: u64) -> Self {
        Self {
            encoder: derive(master, "encoder", &[]),
            observation_noise: derive(master, "observation-noise", &[]),
            regressor: derive(master, "regressor", &[]),
            classifier: derive(master, "classifier", &[]),
            episode: derive(master, "episode", &[]),
        }
    }
}
