//! Navigation policies compared by the evaluation harness.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::Provenance;
use crate::labels::{Dataset, NavigationLabel};
use crate::mlp::{fit, Mlp, Schedule};
use crate::nav::{read_json, split_records, write_json, Activations, NavNet, TrainConfig};
use crate::seed;
use crate::world::{Observation, Pose, PoseGrid};

/// Signed rotation about the object and radial move.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub dtheta: f64,
    pub dr: f64,
}

impl Proposal {
    pub const ZERO: Proposal = Proposal { dtheta: 0.0, dr: 0.0 };

    pub fn new(dtheta: f64, dr: f64) -> Self {
        Self { dtheta, dr }
    }

    pub fn within(&self, grid: &PoseGrid) -> bool {
        self.dtheta.abs() <= PI && self.dr.abs() <= grid.radial_span()
    }
}

/// What a policy sees at decision time. Learned policies use only the
/// observation; the oracle reads the pose.
#[derive(Debug, Clone, Copy)]
pub struct PolicyInput<'a> {
    pub observation: &'a Observation,
    pub pose: Pose,
}

pub trait Policy: Send + Sync {
    fn name(&self) -> &str;

    fn propose(&self, input: &PolicyInput<'_>, rng: &mut ChaCha8Rng) -> Result<Proposal>;
}

/// Never moves.
#[derive(Debug, Clone, Copy, Default)]
pub struct StaticPolicy;

impl Policy for StaticPolicy {
    fn name(&self) -> &str {
        "static"
    }

    fn propose(&self, _: &PolicyInput<'_>, _: &mut ChaCha8Rng) -> Result<Proposal> {
        Ok(Proposal::ZERO)
    }
}

/// Uniform proposals over the full proposal range.
#[derive(Debug, Clone, Copy)]
pub struct RandomPolicy {
    radial_span: f64,
}

impl RandomPolicy {
    pub fn new(grid: &PoseGrid) -> Self {
        Self {
            radial_span: grid.radial_span(),
        }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn propose(&self, _: &PolicyInput<'_>, rng: &mut ChaCha8Rng) -> Result<Proposal> {
        let dtheta = rng.random_range(-PI..=PI);
        let dr = if self.radial_span > 0.0 {
            rng.random_range(-self.radial_span..=self.radial_span)
        } else {
            0.0
        };
        Ok(Proposal::new(dtheta, dr))
    }
}

/// Wraps the trained regressor.
#[derive(Debug, Clone)]
pub struct RegressionPolicy {
    net: NavNet,
    grid: PoseGrid,
}

impl RegressionPolicy {
    pub fn new(net: NavNet, grid: PoseGrid) -> Self {
        Self { net, grid }
    }
}

impl Policy for RegressionPolicy {
    fn name(&self) -> &str {
        "regression"
    }

    fn propose(&self, input: &PolicyInput<'_>, _: &mut ChaCha8Rng) -> Result<Proposal> {
        self.net.predict_proposal(input.observation, &self.grid)
    }
}

/// Replays the stored ground-truth label of the nearest grid pose.
#[derive(Debug, Clone)]
pub struct OraclePolicy {
    dataset: Arc<Dataset>,
}

impl OraclePolicy {
    pub fn new(dataset: Arc<Dataset>) -> Self {
        Self { dataset }
    }
}

impl Policy for OraclePolicy {
    fn name(&self) -> &str {
        "oracle"
    }

    fn propose(&self, input: &PolicyInput<'_>, _: &mut ChaCha8Rng) -> Result<Proposal> {
        let idx = self.dataset.world.grid.snap(input.pose);
        Ok(self
            .dataset
            .record_at(idx)
            .map(|r| r.label.proposal())
            .unwrap_or(Proposal::ZERO))
    }
}

/// Bin edges for the sign × magnitude direction classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassBins {
    pub theta_zero: f64,
    pub theta_small: f64,
    pub r_zero: f64,
    pub r_small: f64,
}

impl Default for ClassBins {
    fn default() -> Self {
        Self {
            theta_zero: 0.05,
            theta_small: 0.5,
            r_zero: 0.5,
            r_small: 5.0,
        }
    }
}

impl ClassBins {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.theta_zero && self.theta_zero < self.theta_small)
            || !(0.0 <= self.r_zero && self.r_zero < self.r_small)
        {
            return Err(Error::InvalidConfig(
                "class bins need 0 <= zero < small on both axes".into(),
            ));
        }
        Ok(())
    }
}

fn bin(value: f64, zero: f64, small: f64) -> i8 {
    let magnitude = if value.abs() <= zero {
        0
    } else if value.abs() <= small {
        1
    } else {
        2
    };
    if value < 0.0 {
        -magnitude
    } else {
        magnitude
    }
}

fn bin_midpoint(b: i8, zero: f64, small: f64, max: f64) -> f64 {
    let m = match b.abs() {
        0 => 0.0,
        1 => 0.5 * (zero + small),
        _ => 0.5 * (small + max),
    };
    m * f64::from(b.signum())
}

/// One of the 5 × 5 direction classes; each bin is in `-2..=2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DirectionClass {
    pub theta_bin: i8,
    pub r_bin: i8,
}

impl DirectionClass {
    pub const COUNT: usize = 25;

    pub fn index(&self) -> usize {
        ((self.theta_bin + 2) as usize) * 5 + (self.r_bin + 2) as usize
    }

    pub fn from_index(i: usize) -> Self {
        assert!(i < Self::COUNT);
        Self {
            theta_bin: (i / 5) as i8 - 2,
            r_bin: (i % 5) as i8 - 2,
        }
    }
}

pub fn quantize_label(label: &NavigationLabel, bins: &ClassBins) -> DirectionClass {
    DirectionClass {
        theta_bin: bin(label.dtheta, bins.theta_zero, bins.theta_small),
        r_bin: bin(label.dr, bins.r_zero, bins.r_small),
    }
}

/// Mean label of every class over `labels`; empty classes fall back to the
/// bin midpoints.
pub fn class_centroids<'a>(
    labels: impl IntoIterator<Item = &'a NavigationLabel>,
    bins: &ClassBins,
    grid: &PoseGrid,
) -> Vec<Proposal> {
    let mut sums = vec![(0.0, 0.0, 0usize); DirectionClass::COUNT];
    for label in labels {
        let s = &mut sums[quantize_label(label, bins).index()];
        s.0 += label.dtheta;
        s.1 += label.dr;
        s.2 += 1;
    }
    sums.iter()
        .enumerate()
        .map(|(i, &(t, r, n))| {
            if n > 0 {
                Proposal::new(t / n as f64, r / n as f64)
            } else {
                let c = DirectionClass::from_index(i);
                Proposal::new(
                    bin_midpoint(c.theta_bin, bins.theta_zero, bins.theta_small, PI),
                    bin_midpoint(c.r_bin, bins.r_zero, bins.r_small, grid.radial_span()),
                )
            }
        })
        .collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// First index of the largest value.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Direction classifier: same MLP family as the regressor with a 25-way
/// softmax head; proposes the centroid of its most likely class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierPolicy {
    mlp: Mlp,
    bins: ClassBins,
    centroids: Vec<Proposal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub n_train: usize,
    pub seed: u64,
}

impl ClassifierPolicy {
    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn centroids(&self) -> &[Proposal] {
        &self.centroids
    }

    pub fn probabilities(&self, obs: &Observation) -> Result<Vec<f64>> {
        Ok(softmax(&self.mlp.logits(&obs.features)?))
    }

    pub fn classify(&self, obs: &Observation) -> Result<DirectionClass> {
        Ok(DirectionClass::from_index(argmax(&self.mlp.logits(&obs.features)?)))
    }
}

impl Policy for ClassifierPolicy {
    fn name(&self) -> &str {
        "classifier"
    }

    fn propose(&self, input: &PolicyInput<'_>, _: &mut ChaCha8Rng) -> Result<Proposal> {
        Ok(self.centroids[self.classify(input.observation)?.index()])
    }
}

/// Trains the direction classifier with cross-entropy on quantized labels.
/// `hidden` lists the hidden-layer widths.
pub fn train_classifier(
    dataset: &Dataset,
    hidden: &[usize],
    cfg: &TrainConfig,
    bins: &ClassBins,
    seed: u64,
) -> Result<(ClassifierPolicy, ClassifierReport)> {
    bins.validate()?;
    let (train_set, _) = split_records(dataset, cfg, seed)?;
    let mut sizes = vec![dataset.world.obs_dim];
    sizes.extend_from_slice(hidden);
    sizes.push(DirectionClass::COUNT);
    let mut mlp = Mlp::init(&sizes, seed::derive(seed, "classifier-init", &[]))?;
    if let Some(bad) = train_set.iter().find(|r| r.observation.len() != mlp.input_dim()) {
        return Err(Error::DimensionMismatch {
            expected: mlp.input_dim(),
            got: bad.observation.len(),
        });
    }
    let classes: Vec<usize> = train_set
        .iter()
        .map(|r| quantize_label(&r.label, bins).index())
        .collect();
    let schedule = Schedule {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        seed: seed::derive(seed, "classifier-shuffle", &[]),
    };
    let epoch_losses = fit(
        &mut mlp,
        train_set.len(),
        |i| &train_set[i].observation.features,
        |i, z, dz| {
            let probs = softmax(z);
            dz.copy_from_slice(&probs);
            dz[classes[i]] -= 1.0;
            -probs[classes[i]].max(f64::MIN_POSITIVE).ln()
        },
        &schedule,
    );
    let centroids = class_centroids(train_set.iter().map(|r| &r.label), bins, &dataset.world.grid);
    let policy = ClassifierPolicy {
        mlp,
        bins: *bins,
        centroids,
    };
    let mut correct = 0;
    for (r, &c) in train_set.iter().zip(&classes) {
        if policy.classify(&r.observation)?.index() == c {
            correct += 1;
        }
    }
    let report = ClassifierReport {
        epoch_losses,
        train_accuracy: correct as f64 / train_set.len() as f64,
        n_train: train_set.len(),
        seed,
    };
    Ok((policy, report))
}

pub const CLASSIFIER_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierModelFile {
    pub schema_version: u32,
    pub layer_sizes: Vec<usize>,
    pub activations: Activations,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    pub bins: ClassBins,
    /// `[dtheta, dr]` per class, indexed `(theta_bin + 2) * 5 + (r_bin + 2)`.
    pub centroids: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl ClassifierModelFile {
    pub fn from_policy(policy: &ClassifierPolicy, provenance: Option<Provenance>) -> Self {
        let (weights, biases) = policy.mlp.layers();
        Self {
            schema_version: CLASSIFIER_SCHEMA_VERSION,
            layer_sizes: policy.mlp.sizes().to_vec(),
            activations: Activations {
                hidden: "tanh".into(),
                output: "softmax".into(),
            },
            weights,
            biases,
            bins: policy.bins,
            centroids: policy.centroids.iter().map(|p| [p.dtheta, p.dr]).collect(),
            provenance,
        }
    }

    pub fn to_policy(&self) -> Result<ClassifierPolicy> {
        if self.schema_version != CLASSIFIER_SCHEMA_VERSION {
            return Err(Error::InvalidShape(format!(
                "unsupported classifier schema_version {}",
                self.schema_version
            )));
        }
        if self.activations.hidden != "tanh" || self.activations.output != "softmax" {
            return Err(Error::InvalidShape("classifier activations must be tanh/softmax".into()));
        }
        let mlp = Mlp::from_layers(&self.layer_sizes, &self.weights, &self.biases)?;
        if mlp.output_dim() != DirectionClass::COUNT || self.centroids.len() != DirectionClass::COUNT {
            return Err(Error::InvalidShape(format!(
                "classifier needs {} outputs and centroids",
                DirectionClass::COUNT
            )));
        }
        self.bins.validate()?;
        Ok(ClassifierPolicy {
            mlp,
            bins: self.bins,
            centroids: self.centroids.iter().map(|c| Proposal::new(c[0], c[1])).collect(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ConfidenceField;
    use crate::labels::generate_dataset;
    use crate::world::WorldConfig;
    use rand::SeedableRng;

    fn label(dtheta: f64, dr: f64) -> NavigationLabel {
        NavigationLabel { dtheta, dr, reachable: true }
    }

    fn obs(d: usize) -> Observation {
        Observation { features: vec![0.25; d] }
    }

    #[test]
    fn static_never_moves() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let o = obs(4);
        let input = PolicyInput { observation: &o, pose: Pose::new(1.0, 2.0) };
        for _ in 0..10 {
            assert_eq!(StaticPolicy.propose(&input, &mut rng).unwrap(), Proposal::ZERO);
        }
    }

    #[test]
    fn random_is_seeded_and_bounded() {
        let grid = PoseGrid::standard();
        let policy = RandomPolicy::new(&grid);
        let o = obs(4);
        let input = PolicyInput { observation: &o, pose: Pose::new(0.0, 5.0) };
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5).map(|_| policy.propose(&input, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut sum = 0.0;
        for _ in 0..10_000 {
            let p = policy.propose(&input, &mut rng).unwrap();
            assert!(p.within(&grid));
            sum += p.dtheta;
        }
        assert!((sum / 10_000.0).abs() < 0.1);
    }

    #[test]
    fn quantization_examples() {
        let bins = ClassBins::default();
        assert_eq!(quantize_label(&label(0.40, 0.0), &bins), DirectionClass { theta_bin: 1, r_bin: 0 });
        assert_eq!(quantize_label(&label(0.0, 0.0), &bins), DirectionClass { theta_bin: 0, r_bin: 0 });
        assert_eq!(quantize_label(&label(-2.0, -30.0), &bins), DirectionClass { theta_bin: -2, r_bin: -2 });
        assert_eq!(quantize_label(&label(0.05, 5.0), &bins), DirectionClass { theta_bin: 0, r_bin: 1 });
        for i in 0..25 {
            assert_eq!(DirectionClass::from_index(i).index(), i);
        }
    }

    #[test]
    fn centroid_is_class_mean() {
        let bins = ClassBins::default();
        let grid = PoseGrid::standard();
        let labels = [label(0.2, 0.0), label(0.4, 0.0)];
        let c = class_centroids(&labels, &bins, &grid);
        let k = DirectionClass { theta_bin: 1, r_bin: 0 }.index();
        assert!((c[k].dtheta - 0.3).abs() < 1e-15);
        assert_eq!(c[k].dr, 0.0);
        // empty class (-2, +2): bin midpoints
        let e = c[DirectionClass { theta_bin: -2, r_bin: 2 }.index()];
        assert!((e.dtheta + 0.5 * (0.5 + PI)).abs() < 1e-15);
        assert!((e.dr - 0.5 * (5.0 + 59.0)).abs() < 1e-12);
    }

    #[test]
    fn softmax_normalizes_and_argmax_is_shift_invariant() {
        let z = [0.3, -1.0, 2.5, 2.4, 0.0];
        let p = softmax(&z);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let shifted: Vec<f64> = z.iter().map(|v| v + 1234.5).collect();
        assert_eq!(argmax(&z), argmax(&shifted));
        assert_eq!(argmax(&softmax(&shifted)), 2);
    }

    #[test]
    fn single_class_dataset() {
        let world = WorldConfig::new(PoseGrid::new(6, 3, 1.0, 10.0).unwrap(), 8, 0.0, 1).unwrap();
        let mut ds = generate_dataset(&world, &ConfidenceField::car(), 0.9, 1.0, 0).unwrap();
        let bins = ClassBins::default();
        let keep = quantize_label(&ds.records[5].label, &bins);
        ds.records.retain(|r| quantize_label(&r.label, &bins) == keep);
        let cfg = TrainConfig { epochs: 30, ..TrainConfig::default() };
        let (policy, report) = train_classifier(&ds, &[16], &cfg, &bins, 4).unwrap();
        assert_eq!(report.train_accuracy, 1.0);
        for r in &ds.records {
            assert_eq!(policy.classify(&r.observation).unwrap(), keep);
            let probs = policy.probabilities(&r.observation).unwrap();
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn classifier_requires_data() {
        let world = WorldConfig::new(PoseGrid::new(6, 3, 1.0, 10.0).unwrap(), 8, 0.0, 1).unwrap();
        let mut ds = generate_dataset(&world, &ConfidenceField::car(), 0.9, 1.0, 0).unwrap();
        ds.records.clear();
        let r = train_classifier(&ds, &[4], &TrainConfig::default(), &ClassBins::default(), 0);
        assert!(matches!(r, Err(Error::EmptyDataset)));
    }

    #[test]
    fn oracle_replays_stored_labels() {
        let world = WorldConfig::new(PoseGrid::new(10, 4, 1.0, 10.0).unwrap(), 4, 0.0, 1).unwrap();
        let ds = Arc::new(generate_dataset(&world, &ConfidenceField::car(), 0.9, 1.0, 0).unwrap());
        let oracle = OraclePolicy::new(ds.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let o = obs(4);
        for rec in &ds.records {
            let input = PolicyInput { observation: &o, pose: rec.pose };
            assert_eq!(oracle.propose(&input, &mut rng).unwrap(), rec.label.proposal());
        }
        // off-grid radius is clamped before lookup
        let input = PolicyInput { observation: &o, pose: Pose::new(0.0, 500.0) };
        let far = ds.record_at(crate::world::GridIndex::new(0, 3)).unwrap();
        assert_eq!(oracle.propose(&input, &mut rng).unwrap(), far.label.proposal());
    }

    #[test]
    fn classifier_file_round_trip() {
        let world = WorldConfig::new(PoseGrid::new(6, 3, 1.0, 10.0).unwrap(), 8, 0.0, 1).unwrap();
        let ds = generate_dataset(&world, &ConfidenceField::car(), 0.9, 1.0, 0).unwrap();
        let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
        let (policy, _) = train_classifier(&ds, &[6], &cfg, &ClassBins::default(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cls.json");
        ClassifierModelFile::from_policy(&policy, None).write(&path).unwrap();
        let back = ClassifierModelFile::read(&path).unwrap().to_policy().unwrap();
        assert_eq!(back, policy);
    }
}
