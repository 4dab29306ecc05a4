//! Active-perception simulation toolkit.
//!
//! A parametric detector-confidence manifold over a polar pose grid stands in
//! for an object detector. From it the crate builds nearest-above-threshold
//! navigation labels, trains a small proposal regressor on synthetic
//! observations, runs the detect / propose / traverse loop and scores
//! competing navigation policies.

// Validation is written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod episode;
pub mod error;
pub mod eval;
pub mod field;
pub mod format;
pub mod labels;
pub mod mlp;
pub mod nav;
pub mod policy;
pub mod seed;
pub mod world;

pub use episode::{measure, run_episode, EpisodeConfig, EpisodeRecord, EpisodeStep};
pub use error::{Error, Result};
pub use eval::{evaluate, improvement_rate, sample_initial_poses, success_rate, EvalConfig, Report};
pub use field::{AngularLobe, ConfidenceField, ManifoldTable};
pub use format::Provenance;
pub use labels::{
    denormalize, generate_dataset, label_from_target, nearest_above, normalize, read_dataset, write_dataset,
    Dataset, DatasetRecord, NavigationLabel, Target,
};
pub use mlp::{AdamState, Mlp};
pub use nav::{loss, train, NavModelFile, NavNet, TrainConfig, TrainReport};
pub use policy::{
    train_classifier, ClassBins, ClassifierModelFile, ClassifierPolicy, DirectionClass, OraclePolicy, Policy,
    PolicyInput, Proposal, RandomPolicy, RegressionPolicy, StaticPolicy,
};
pub use world::{trajectory, Encoder, GridIndex, Observation, Pose, PoseGrid, WorldConfig};

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
    }};
}
#[cfg(test)]
pub(crate) use assert_close;
