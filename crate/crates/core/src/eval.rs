//! Paired multi-policy evaluation: every policy starts from the same
//! randomized below-threshold poses; success and improvement rates are
//! aggregated per policy.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::episode::{run_episode, EpisodeConfig, EpisodeRecord};
use crate::error::{Error, Result};
use crate::field::ConfidenceField;
use crate::format::{round_sig, Provenance};
use crate::nav::{read_json, write_json};
use crate::policy::Policy;
use crate::seed;
use crate::world::{GridIndex, Pose, PoseGrid, WorldConfig};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const PROTOCOL: &str = "paired: every policy runs from the same initial pose for a given trial index; \
initial poses are drawn uniformly from grid poses with confidence below p_thres";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_trials: usize,
    pub seed: u64,
    pub episode: EpisodeConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_trials: 100,
            seed: 0,
            episode: EpisodeConfig::default(),
        }
    }
}

/// Grid points whose confidence is below `p_thres`.
pub fn below_threshold(field: &ConfidenceField, grid: &PoseGrid, p_thres: f64) -> Vec<GridIndex> {
    grid.indices()
        .filter(|&idx| field.confidence(grid.pose(idx)) < p_thres)
        .collect()
}

/// Draws `n` candidates uniformly with replacement.
pub fn sample_from(candidates: &[GridIndex], n: usize, seed: u64) -> Vec<GridIndex> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "initial-poses", &[]));
    (0..n)
        .map(|_| candidates[rng.random_range(0..candidates.len())])
        .collect()
}

pub fn sample_initial_poses(
    world: &WorldConfig,
    field: &ConfidenceField,
    p_thres: f64,
    n_trials: usize,
    seed: u64,
) -> Result<Vec<Pose>> {
    let grid = &world.grid;
    let candidates = below_threshold(field, grid, p_thres);
    if candidates.is_empty() {
        return Err(Error::NoValidPose { p_thres });
    }
    Ok(sample_from(&candidates, n_trials, seed)
        .into_iter()
        .map(|idx| grid.pose(idx))
        .collect())
}

/// Percentage of successful episodes.
pub fn success_rate(records: &[EpisodeRecord]) -> Result<f64> {
    let outcomes: Vec<(f64, f64, bool)> = records.iter().map(|r| (r.p_init, r.p_final, r.success)).collect();
    rates(&outcomes).map(|r| r.0)
}

/// Mean relative confidence gain (percent) over successful episodes; 0.0
/// when none succeeded.
pub fn improvement_rate(records: &[EpisodeRecord]) -> Result<f64> {
    let outcomes: Vec<(f64, f64, bool)> = records.iter().map(|r| (r.p_init, r.p_final, r.success)).collect();
    rates(&outcomes).map(|r| r.1)
}

/// Smallest initial confidence used as the denominator of a relative gain.
const MIN_BASELINE: f64 = 1e-6;

fn rates(outcomes: &[(f64, f64, bool)]) -> Result<(f64, f64)> {
    if outcomes.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let mut n_success = 0usize;
    let mut gain_sum = 0.0;
    for &(p_init, p_final, success) in outcomes {
        if success {
            n_success += 1;
            gain_sum += 100.0 * (p_final - p_init) / p_init.max(MIN_BASELINE);
        }
    }
    let success = 100.0 * n_success as f64 / outcomes.len() as f64;
    let improvement = if n_success == 0 {
        0.0
    } else {
        gain_sum / n_success as f64
    };
    Ok((success, improvement))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: String,
    pub success_rate: f64,
    pub improvement_rate: f64,
    pub n_trials: usize,
    pub n_success: usize,
    pub mean_p_init: f64,
    pub mean_p_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub policy: String,
    pub trial: usize,
    pub seed: u64,
    pub init_pose: Pose,
    pub p_init: f64,
    pub p_final: f64,
    pub best_pose: Pose,
    pub success: bool,
}

impl From<(usize, &EpisodeRecord)> for EpisodeSummary {
    fn from((trial, r): (usize, &EpisodeRecord)) -> Self {
        Self {
            policy: r.policy.clone(),
            trial,
            seed: r.seed,
            init_pose: r.init_pose,
            p_init: r.p_init,
            p_final: r.p_final,
            best_pose: r.best_pose,
            success: r.success,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub protocol: String,
    pub master_seed: u64,
    pub n_trials: usize,
    pub p_thres: f64,
    pub policies: Vec<PolicySummary>,
    pub episodes: Vec<EpisodeSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl Report {
    pub fn summary(&self, policy: &str) -> Option<&PolicySummary> {
        self.policies.iter().find(|s| s.policy == policy)
    }

    /// Recomputes every policy summary from the stored episode summaries.
    pub fn recompute(&self) -> Result<Vec<PolicySummary>> {
        self.policies
            .iter()
            .map(|s| {
                let outcomes: Vec<(f64, f64, bool)> = self
                    .episodes
                    .iter()
                    .filter(|e| e.policy == s.policy)
                    .map(|e| (e.p_init, e.p_final, e.success))
                    .collect();
                summarize(&s.policy, &outcomes)
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("policy,success_rate,improvement_rate,n_trials\n");
        for s in &self.policies {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                s.policy,
                round_sig(s.success_rate),
                round_sig(s.improvement_rate),
                s.n_trials
            );
        }
        out
    }

    pub fn write(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        write_json(json_path, self)?;
        std::fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

fn summarize(policy: &str, outcomes: &[(f64, f64, bool)]) -> Result<PolicySummary> {
    let (success_rate, improvement_rate) = rates(outcomes)?;
    let n = outcomes.len() as f64;
    Ok(PolicySummary {
        policy: policy.to_string(),
        success_rate,
        improvement_rate,
        n_trials: outcomes.len(),
        n_success: outcomes.iter().filter(|o| o.2).count(),
        mean_p_init: outcomes.iter().map(|o| o.0).sum::<f64>() / n,
        mean_p_final: outcomes.iter().map(|o| o.1).sum::<f64>() / n,
    })
}

/// Seed of one (trial, policy) episode. Depends only on the master seed,
/// the trial index and the policy name.
pub fn episode_seed(master: u64, trial: usize, policy: &str) -> u64 {
    seed::derive(master, &format!("episode/{policy}"), &[trial as u64])
}

/// Runs every policy from the same initial poses. `jobs` bounds the worker
/// threads; results do not depend on it.
pub fn evaluate_from(
    world: &WorldConfig,
    field: &ConfidenceField,
    policies: &[Arc<dyn Policy>],
    initial: &[Pose],
    cfg: &EvalConfig,
    jobs: usize,
) -> Result<Report> {
    cfg.episode.validate()?;
    if initial.is_empty() {
        return Err(Error::InvalidConfig("n_trials must be at least 1".into()));
    }
    let encoder = world.encoder();
    let tasks: Vec<(usize, usize)> = (0..policies.len())
        .flat_map(|p| (0..initial.len()).map(move |t| (p, t)))
        .collect();
    let run = || {
        tasks
            .par_iter()
            .map(|&(p, t)| {
                let policy = policies[p].as_ref();
                let seed = episode_seed(cfg.seed, t, policy.name());
                run_episode(world, &encoder, field, policy, initial[t], &cfg.episode, seed)
            })
            .collect::<Result<Vec<_>>>()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {jobs} workers: {e}")))?;
    let records = pool.install(run)?;

    let mut summaries = Vec::with_capacity(policies.len());
    let mut episodes = Vec::with_capacity(records.len());
    for (p, chunk) in records.chunks(initial.len()).enumerate() {
        let outcomes: Vec<(f64, f64, bool)> = chunk.iter().map(|r| (r.p_init, r.p_final, r.success)).collect();
        summaries.push(summarize(policies[p].name(), &outcomes)?);
        episodes.extend(chunk.iter().enumerate().map(EpisodeSummary::from));
    }
    Ok(Report {
        schema_version: REPORT_SCHEMA_VERSION,
        protocol: PROTOCOL.to_string(),
        master_seed: cfg.seed,
        n_trials: initial.len(),
        p_thres: cfg.episode.p_thres,
        policies: summaries,
        episodes,
        provenance: None,
    })
}

/// Samples `cfg.n_trials` initial poses and evaluates every policy on them.
pub fn evaluate(
    world: &WorldConfig,
    field: &ConfidenceField,
    policies: &[Arc<dyn Policy>],
    cfg: &EvalConfig,
    jobs: usize,
) -> Result<Report> {
    if cfg.n_trials == 0 {
        return Err(Error::InvalidConfig("n_trials must be at least 1".into()));
    }
    let initial = sample_initial_poses(world, field, cfg.episode.p_thres, cfg.n_trials, cfg.seed)?;
    evaluate_from(world, field, policies, &initial, cfg, jobs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::AngularLobe;
    use crate::policy::{RandomPolicy, StaticPolicy};

    fn outcome(p_init: f64, p_final: f64) -> EpisodeRecord {
        EpisodeRecord {
            policy: "x".into(),
            seed: 0,
            init_pose: Pose::new(0.0, 1.0),
            p_init,
            steps: Vec::new(),
            p_final,
            best_pose: Pose::new(0.0, 1.0),
            success: p_final > p_init,
        }
    }

    #[test]
    fn success_rate_arithmetic() {
        let recs = [outcome(0.2, 0.3), outcome(0.2, 0.1), outcome(0.5, 0.6), outcome(0.1, 0.9)];
        assert_eq!(success_rate(&recs).unwrap(), 75.0);
    }

    #[test]
    fn improvement_rate_over_successes_only() {
        let recs = [outcome(0.4, 0.6), outcome(0.5, 0.85), outcome(0.5, 0.2)];
        assert!((improvement_rate(&recs).unwrap() - 60.0).abs() < 1e-12);
        let failures = [outcome(0.5, 0.5), outcome(0.4, 0.1)];
        assert_eq!(improvement_rate(&failures).unwrap(), 0.0);
        assert!(matches!(success_rate(&[]), Err(Error::EmptyRecords)));
    }

    #[test]
    fn sampled_poses_are_below_threshold_and_seeded() {
        let world = WorldConfig::new(PoseGrid::standard(), 8, 0.0, 0).unwrap();
        let car = ConfidenceField::car();
        let a = sample_initial_poses(&world, &car, 0.9, 200, 4).unwrap();
        assert!(a.iter().all(|p| car.confidence(*p) < 0.9));
        assert_eq!(a, sample_initial_poses(&world, &car, 0.9, 200, 4).unwrap());
        assert_ne!(a, sample_initial_poses(&world, &car, 0.9, 200, 5).unwrap());
    }

    #[test]
    fn saturated_field_has_no_start_pose() {
        let world = WorldConfig::new(PoseGrid::new(6, 2, 1.0, 2.0).unwrap(), 4, 0.0, 0).unwrap();
        let f = ConfidenceField::new(vec![AngularLobe::new(0.0, 1e6, 0.0)], 1.0, 1.0, 0.95).unwrap();
        assert!(matches!(sample_initial_poses(&world, &f, 0.9, 3, 0), Err(Error::NoValidPose { .. })));
    }

    #[test]
    fn sampler_is_uniform_when_every_pose_qualifies() {
        // every pose below threshold: chi-squared over the 24 cells
        let grid = PoseGrid::new(8, 3, 1.0, 3.0).unwrap();
        let world = WorldConfig::new(grid, 4, 0.0, 0).unwrap();
        let f = ConfidenceField::new(vec![AngularLobe::new(0.0, 1.0, 0.5)], 10.0, 1.0, 0.0).unwrap();
        let poses = sample_initial_poses(&world, &f, 0.99, 10_000, 21).unwrap();
        let mut counts = vec![0usize; grid.len()];
        for p in poses {
            counts[grid.flat(grid.snap(p))] += 1;
        }
        let expected = 10_000.0 / 24.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 23 dof; the 0.999 quantile is 49.7
        assert!(chi2 < 49.7, "chi2 = {chi2}");
    }

    #[test]
    fn static_scores_zero_and_reports_are_reproducible() {
        let world = WorldConfig::new(PoseGrid::standard(), 8, 0.0, 0).unwrap();
        let car = ConfidenceField::car();
        let policies: Vec<Arc<dyn Policy>> = vec![Arc::new(StaticPolicy), Arc::new(RandomPolicy::new(&world.grid))];
        let cfg = EvalConfig {
            n_trials: 40,
            seed: 9,
            ..EvalConfig::default()
        };
        let a = evaluate(&world, &car, &policies, &cfg, 1).unwrap();
        let b = evaluate(&world, &car, &policies, &cfg, 3).unwrap();
        assert_eq!(a, b);
        let s = a.summary("static").unwrap();
        assert_eq!((s.success_rate, s.improvement_rate), (0.0, 0.0));
        assert_eq!(a.recompute().unwrap(), a.policies);
        // paired starts
        for t in 0..40 {
            assert_eq!(a.episodes[t].init_pose, a.episodes[40 + t].init_pose);
        }
    }

    #[test]
    fn adding_a_policy_leaves_others_unchanged() {
        let world = WorldConfig::new(PoseGrid::standard(), 8, 0.0, 0).unwrap();
        let car = ConfidenceField::car();
        let random: Arc<dyn Policy> = Arc::new(RandomPolicy::new(&world.grid));
        let cfg = EvalConfig {
            n_trials: 20,
            seed: 2,
            ..EvalConfig::default()
        };
        let alone = evaluate(&world, &car, std::slice::from_ref(&random), &cfg, 1).unwrap();
        let both = evaluate(&world, &car, &[Arc::new(StaticPolicy), random], &cfg, 1).unwrap();
        assert_eq!(alone.summary("random"), both.summary("random"));
    }

    #[test]
    fn report_files() {
        let world = WorldConfig::new(PoseGrid::standard(), 8, 0.0, 0).unwrap();
        let policies: Vec<Arc<dyn Policy>> = vec![Arc::new(StaticPolicy)];
        let cfg = EvalConfig { n_trials: 3, ..EvalConfig::default() };
        let report = evaluate(&world, &ConfidenceField::car(), &policies, &cfg, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (json, csv) = (dir.path().join("r.json"), dir.path().join("r.csv"));
        report.write(&json, &csv).unwrap();
        assert_eq!(Report::read(&json).unwrap(), report);
        let text = std::fs::read_to_string(csv).unwrap();
        assert_eq!(text, "policy,success_rate,improvement_rate,n_trials\nstatic,0,0,3\n");
    }
}
