//! The detect → propose → traverse loop for a single episode.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ConfidenceField;
use crate::labels::validate_threshold;
use crate::policy::{Policy, PolicyInput, Proposal};
use crate::seed;
use crate::world::{trajectory, Encoder, Pose, WorldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub p_thres: f64,
    pub n_intermediate: usize,
    pub max_steps: usize,
    /// Std of additive Gaussian noise on every confidence measurement.
    pub sigma_meas: f64,
    /// Stop traversing as soon as a waypoint reaches `p_thres`.
    pub early_stop: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            p_thres: 0.9,
            n_intermediate: 4,
            max_steps: 1,
            sigma_meas: 0.0,
            early_stop: false,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        validate_threshold(self.p_thres)?;
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be at least 1".into()));
        }
        if !(self.sigma_meas >= 0.0) || !self.sigma_meas.is_finite() {
            return Err(Error::InvalidConfig("sigma_meas must be a finite value >= 0".into()));
        }
        Ok(())
    }
}

/// Detector confidence with optional measurement noise, clamped to [0, 1].
pub fn measure(field: &ConfidenceField, pose: Pose, sigma_meas: f64, rng: &mut ChaCha8Rng) -> f64 {
    let p = field.confidence(pose);
    if sigma_meas == 0.0 {
        return p;
    }
    let noise = Normal::new(0.0, sigma_meas).expect("sigma validated");
    (p + noise.sample(rng)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub start: Pose,
    pub proposal: Proposal,
    pub waypoints: Vec<Pose>,
    pub measurements: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub policy: String,
    pub seed: u64,
    pub init_pose: Pose,
    pub p_init: f64,
    pub steps: Vec<EpisodeStep>,
    /// Highest measurement after the initial one (`p_init` when navigation
    /// never triggered).
    pub p_final: f64,
    pub best_pose: Pose,
    pub success: bool,
}

impl EpisodeRecord {
    pub fn n_measurements(&self) -> usize {
        1 + self.steps.iter().map(|s| s.measurements.len()).sum::<usize>()
    }
}

/// Runs one episode. Waypoints that do not beat the best snapshot so far are
/// recorded but discarded; with `max_steps > 1` the next proposal starts from
/// the best snapshot.
pub fn run_episode(
    world: &WorldConfig,
    encoder: &Encoder,
    field: &ConfidenceField,
    policy: &dyn Policy,
    init_pose: Pose,
    cfg: &EpisodeConfig,
    episode_seed: u64,
) -> Result<EpisodeRecord> {
    cfg.validate()?;
    let grid = &world.grid;
    let mut meas_rng = ChaCha8Rng::seed_from_u64(seed::derive(episode_seed, "measure", &[]));
    let mut policy_rng = ChaCha8Rng::seed_from_u64(seed::derive(episode_seed, "policy", &[]));

    let init_pose = grid.clamp(init_pose);
    let p_init = measure(field, init_pose, cfg.sigma_meas, &mut meas_rng);
    let mut record = EpisodeRecord {
        policy: policy.name().to_string(),
        seed: episode_seed,
        init_pose,
        p_init,
        steps: Vec::new(),
        p_final: p_init,
        best_pose: init_pose,
        success: false,
    };
    if p_init >= cfg.p_thres {
        return Ok(record);
    }

    let mut best = (init_pose, p_init);
    let mut post_max = f64::NEG_INFINITY;
    let mut current = init_pose;
    for step in 0..cfg.max_steps {
        let obs_seed = seed::derive(episode_seed, "observe", &[step as u64]);
        let observation = encoder.encode(world, current, obs_seed);
        let input = PolicyInput {
            observation: &observation,
            pose: current,
        };
        let proposal = policy.propose(&input, &mut policy_rng)?;
        let mut waypoints = trajectory(grid, current, proposal, cfg.n_intermediate);
        let mut measurements = Vec::with_capacity(waypoints.len());
        for wp in &waypoints {
            let p = measure(field, *wp, cfg.sigma_meas, &mut meas_rng);
            measurements.push(p);
            post_max = post_max.max(p);
            if p > best.1 {
                best = (*wp, p);
            }
            if cfg.early_stop && p >= cfg.p_thres {
                break;
            }
        }
        waypoints.truncate(measurements.len());
        record.steps.push(EpisodeStep {
            start: current,
            proposal,
            waypoints,
            measurements,
        });
        if best.1 >= cfg.p_thres {
            break;
        }
        current = best.0;
    }
    record.p_final = post_max;
    record.best_pose = best.0;
    record.success = record.p_final > record.p_init;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::StaticPolicy;
    use crate::world::PoseGrid;
    use std::f64::consts::FRAC_PI_2;

    struct Fixed(Proposal);

    impl Policy for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }

        fn propose(&self, _: &PolicyInput<'_>, _: &mut ChaCha8Rng) -> Result<Proposal> {
            Ok(self.0)
        }
    }

    fn setup() -> (WorldConfig, Encoder, ConfidenceField) {
        let world = WorldConfig::new(PoseGrid::standard(), 8, 0.0, 1).unwrap();
        let encoder = world.encoder();
        (world, encoder, ConfidenceField::car())
    }

    #[test]
    fn noiseless_measurement_is_exact() {
        let field = ConfidenceField::car();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pose = Pose::new(1.0, 12.0);
        assert_eq!(measure(&field, pose, 0.0, &mut rng), field.confidence(pose));
    }

    #[test]
    fn noisy_measurement_is_clamped_and_repeatable() {
        let field = ConfidenceField::car();
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        for k in 0..500 {
            let pose = Pose::new(k as f64 * 0.1, 1.0 + (k % 60) as f64);
            let m = measure(&field, pose, 0.5, &mut a);
            assert!((0.0..=1.0).contains(&m));
            assert_eq!(m, measure(&field, pose, 0.5, &mut b));
        }
    }

    #[test]
    fn static_policy_keeps_confidence() {
        let (world, enc, field) = setup();
        let rec = run_episode(&world, &enc, &field, &StaticPolicy, Pose::new(0.3, 40.0), &EpisodeConfig::default(), 1)
            .unwrap();
        assert_eq!(rec.p_final, rec.p_init);
        assert!(!rec.success);
        assert_eq!(rec.n_measurements(), 6);
    }

    #[test]
    fn fig3_proposal_measures_five_waypoints() {
        let (world, enc, field) = setup();
        let rec = run_episode(
            &world,
            &enc,
            &field,
            &Fixed(Proposal::new(0.40, 0.0)),
            Pose::new(0.0, 10.0),
            &EpisodeConfig::default(),
            3,
        )
        .unwrap();
        assert_eq!(rec.steps.len(), 1);
        let step = &rec.steps[0];
        assert_eq!(step.measurements.len(), 5);
        for (k, wp) in step.waypoints.iter().enumerate() {
            assert!((wp.theta - 0.08 * (k + 1) as f64).abs() < 1e-12);
            assert_eq!(step.measurements[k], field.confidence(*wp));
        }
        let max = step.measurements.iter().copied().fold(f64::MIN, f64::max);
        assert_eq!(rec.p_final, max);
        assert_eq!(rec.success, max > rec.p_init);
    }

    #[test]
    fn already_confident_start_does_not_navigate() {
        let (world, enc, field) = setup();
        let rec = run_episode(
            &world,
            &enc,
            &field,
            &Fixed(Proposal::new(1.0, 5.0)),
            Pose::new(FRAC_PI_2, 1.0),
            &EpisodeConfig::default(),
            0,
        )
        .unwrap();
        assert!(rec.steps.is_empty());
        assert_eq!(rec.n_measurements(), 1);
        assert!(!rec.success);
    }

    #[test]
    fn best_snapshot_discards_worse_waypoints() {
        let (world, enc, field) = setup();
        // move from the end-on lobe outward and across: confidence dips first
        let rec = run_episode(
            &world,
            &enc,
            &field,
            &Fixed(Proposal::new(-FRAC_PI_2, 20.0)),
            Pose::new(0.0, 5.0),
            &EpisodeConfig::default(),
            0,
        )
        .unwrap();
        let m = &rec.steps[0].measurements;
        let mut running = rec.p_init;
        for (wp, p) in rec.steps[0].waypoints.iter().zip(m) {
            if *p > running {
                running = *p;
                assert_eq!(field.confidence(*wp), *p);
            }
        }
        assert_eq!(field.confidence(rec.best_pose), running.max(rec.p_init));
    }

    #[test]
    fn multi_step_restarts_from_best() {
        let (world, enc, field) = setup();
        let cfg = EpisodeConfig {
            max_steps: 3,
            ..EpisodeConfig::default()
        };
        let rec = run_episode(&world, &enc, &field, &Fixed(Proposal::new(0.1, -1.0)), Pose::new(1.0, 50.0), &cfg, 0)
            .unwrap();
        assert_eq!(rec.steps.len(), 3);
        assert_eq!(rec.steps[1].start, rec.steps[0].waypoints[4]);
    }

    #[test]
    fn early_stop_truncates_trajectory() {
        let (world, enc, field) = setup();
        let cfg = EpisodeConfig {
            early_stop: true,
            ..EpisodeConfig::default()
        };
        // straight inward on the broadside bearing crosses the threshold early
        let rec = run_episode(&world, &enc, &field, &Fixed(Proposal::new(0.0, -30.0)), Pose::new(FRAC_PI_2, 31.0), &cfg, 0)
            .unwrap();
        let step = &rec.steps[0];
        assert!(step.measurements.len() < 5);
        assert!(*step.measurements.last().unwrap() >= 0.9);
        assert_eq!(step.waypoints.len(), step.measurements.len());
    }

    #[test]
    fn episodes_are_deterministic() {
        let (world, enc, field) = setup();
        let cfg = EpisodeConfig {
            sigma_meas: 0.05,
            ..EpisodeConfig::default()
        };
        let policy = crate::policy::RandomPolicy::new(&world.grid);
        let a = run_episode(&world, &enc, &field, &policy, Pose::new(2.0, 30.0), &cfg, 17).unwrap();
        let b = run_episode(&world, &enc, &field, &policy, Pose::new(2.0, 30.0), &cfg, 17).unwrap();
        assert_eq!(a, b);
    }
}
