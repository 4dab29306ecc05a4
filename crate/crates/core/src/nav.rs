//! Navigation proposal regressor: observation → normalized (rotation,
//! translation) pair through a tanh MLP with a sigmoid output, trained on
//! the squared l2 error against normalized labels.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::Provenance;
use crate::labels::{denormalize, Dataset, DatasetRecord};
use crate::mlp::{fit, AdamState, Mlp, Schedule};
use crate::policy::Proposal;
use crate::seed;
use crate::world::{Observation, PoseGrid};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Squared l2 distance between prediction and target.
pub fn loss(pred: [f64; 2], target: [f64; 2]) -> f64 {
    pred.iter().zip(&target).map(|(p, t)| (p - t) * (p - t)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NavNet {
    mlp: Mlp,
}

impl NavNet {
    pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        Self::from_mlp(Mlp::init(layer_sizes, seed)?)
    }

    pub fn from_mlp(mlp: Mlp) -> Result<Self> {
        if mlp.output_dim() != 2 {
            return Err(Error::InvalidShape(format!(
                "navigation network needs 2 outputs, got {}",
                mlp.output_dim()
            )));
        }
        Ok(Self { mlp })
    }

    pub fn default_sizes(obs_dim: usize) -> Vec<usize> {
        let mut sizes = vec![obs_dim];
        sizes.extend(Self::DEFAULT_HIDDEN);
        sizes.push(2);
        sizes
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn forward(&self, obs: &Observation) -> Result<[f64; 2]> {
        let z = self.mlp.logits(&obs.features)?;
        Ok([sigmoid(z[0]), sigmoid(z[1])])
    }

    /// Gradient of `loss(forward(obs), target)` with respect to every
    /// parameter, in the network's flat parameter order.
    pub fn backward(&self, obs: &Observation, target: [f64; 2]) -> Result<Vec<f64>> {
        let trace = self.mlp.trace(&obs.features)?;
        let mut dz = [0.0; 2];
        output_delta(trace.output(), target, &mut dz);
        let mut grad = vec![0.0; self.mlp.n_params()];
        self.mlp.backprop(&trace, &dz, &mut grad);
        Ok(grad)
    }

    pub fn adam_step(&mut self, grads: &[f64], state: &mut AdamState) {
        state.step(self.mlp.params_mut(), grads);
    }

    /// Forward pass mapped back to a signed rotation and radial move.
    pub fn predict_proposal(&self, obs: &Observation, grid: &PoseGrid) -> Result<Proposal> {
        Ok(denormalize(self.forward(obs)?, grid))
    }
}

/// Sample loss and `dL/dz` for the sigmoid head.
fn output_delta(z: &[f64], target: [f64; 2], dz: &mut [f64]) -> f64 {
    let mut total = 0.0;
    for k in 0..2 {
        let p = sigmoid(z[k]);
        let e = p - target[k];
        total += e * e;
        dz[k] = 2.0 * e * p * (1.0 - p);
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub include_unreachable: bool,
    /// Fraction of records held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            lr: AdamState::DEFAULT_LR,
            include_unreachable: true,
            val_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidConfig("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    /// Mean loss over the training records after the last update.
    pub final_train_loss: f64,
    pub final_val_loss: Option<f64>,
    pub epochs_run: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
}

/// Records used for training and validation after filtering and the
/// seeded hold-out split.
pub(crate) fn split_records<'a>(
    dataset: &'a Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Vec<&'a DatasetRecord>, Vec<&'a DatasetRecord>)> {
    cfg.validate()?;
    let mut records: Vec<&DatasetRecord> = dataset
        .records
        .iter()
        .filter(|r| cfg.include_unreachable || r.label.reachable)
        .collect();
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n_val = (records.len() as f64 * cfg.val_fraction).floor() as usize;
    if n_val == 0 {
        return Ok((records, Vec::new()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "validation-split", &[]));
    records.shuffle(&mut rng);
    let val = records.split_off(records.len() - n_val);
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((records, val))
}

pub fn mean_loss(net: &NavNet, records: &[&DatasetRecord]) -> Result<f64> {
    let mut total = 0.0;
    for r in records {
        total += loss(net.forward(&r.observation)?, r.label_norm);
    }
    Ok(total / records.len() as f64)
}

/// Shuffled mini-batch Adam on the normalized labels. Deterministic given
/// the dataset, configuration and seed.
pub fn train(mut net: NavNet, dataset: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<(NavNet, TrainReport)> {
    let (train_set, val_set) = split_records(dataset, cfg, seed)?;
    if let Some(bad) = train_set.iter().find(|r| r.observation.len() != net.mlp.input_dim()) {
        return Err(Error::DimensionMismatch {
            expected: net.mlp.input_dim(),
            got: bad.observation.len(),
        });
    }
    let schedule = Schedule {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        seed: seed::derive(seed, "shuffle", &[]),
    };
    let epoch_losses = fit(
        &mut net.mlp,
        train_set.len(),
        |i| &train_set[i].observation.features,
        |i, z, dz| output_delta(z, train_set[i].label_norm, dz),
        &schedule,
    );
    let final_train_loss = mean_loss(&net, &train_set)?;
    let final_val_loss = if val_set.is_empty() {
        None
    } else {
        Some(mean_loss(&net, &val_set)?)
    };
    let report = TrainReport {
        epochs_run: epoch_losses.len(),
        epoch_losses,
        final_train_loss,
        final_val_loss,
        n_train: train_set.len(),
        n_val: val_set.len(),
        seed,
    };
    Ok((net, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Activations {
    pub hidden: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationRanges {
    pub dtheta: [f64; 2],
    pub dr: [f64; 2],
}

impl NormalizationRanges {
    pub fn for_grid(grid: &PoseGrid) -> Self {
        let span = grid.radial_span();
        Self {
            dtheta: [-PI, PI],
            dr: [-span, span],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NavModelFile {
    pub schema_version: u32,
    pub layer_sizes: Vec<usize>,
    pub activations: Activations,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    pub normalization: NormalizationRanges,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl NavModelFile {
    pub fn from_net(net: &NavNet, grid: &PoseGrid, provenance: Option<Provenance>) -> Self {
        let (weights, biases) = net.mlp.layers();
        Self {
            schema_version: MODEL_SCHEMA_VERSION,
            layer_sizes: net.mlp.sizes().to_vec(),
            activations: Activations {
                hidden: "tanh".into(),
                output: "sigmoid".into(),
            },
            weights,
            biases,
            normalization: NormalizationRanges::for_grid(grid),
            provenance,
        }
    }

    pub fn to_net(&self) -> Result<NavNet> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::InvalidShape(format!(
                "unsupported model schema_version {}",
                self.schema_version
            )));
        }
        if self.activations.hidden != "tanh" || self.activations.output != "sigmoid" {
            return Err(Error::InvalidShape(format!(
                "unsupported activations {}/{}",
                self.activations.hidden, self.activations.output
            )));
        }
        NavNet::from_mlp(Mlp::from_layers(&self.layer_sizes, &self.weights, &self.biases)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::io(path, e.into()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::schema(path, e.line(), e.to_string()))
}
