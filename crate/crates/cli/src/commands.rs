//! Subcommands. Each one reads its inputs, runs one stage of the pipeline and
//! writes its artifacts into the output directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use viewnav::episode::EpisodeRecord;
use viewnav::eval::{evaluate, EvalConfig, Report};
use viewnav::policy::ClassifierReport;
use viewnav::{
    generate_dataset, read_dataset, run_episode, train, train_classifier, write_dataset, ClassifierModelFile,
    ClassifierPolicy, ConfidenceField, Dataset, NavModelFile, NavNet, OraclePolicy, Policy, Pose, PoseGrid,
    Provenance, RandomPolicy, RegressionPolicy, StaticPolicy, TrainReport, WorldConfig,
};

use crate::config::RunConfig;
use crate::CliError;

pub const MANIFOLD_CSV: &str = "manifold.csv";
pub const MANIFOLD_META: &str = "manifold.meta.json";
pub const DATASET: &str = "dataset.jsonl";
pub const REGRESSOR: &str = "regressor.json";
pub const CLASSIFIER: &str = "classifier.json";
pub const TRAIN_REPORT: &str = "train_report.json";
pub const EPISODE: &str = "episode.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

/// Resolved configuration shared by every command.
pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
    pub jobs: usize,
    world: WorldConfig,
    field: ConfidenceField,
}

impl Context {
    pub fn new(config: RunConfig, out: PathBuf, jobs: usize) -> Result<Self, CliError> {
        let world = config.world_config()?;
        let field = config.field()?;
        std::fs::create_dir_all(&out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
        Ok(Self {
            config,
            out,
            jobs,
            world,
            field,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn provenance(&self) -> Provenance {
        self.config.provenance()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldMeta {
    pub provenance: Provenance,
    pub grid: PoseGrid,
    pub field: ConfidenceField,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSummary {
    pub provenance: Provenance,
    pub regressor: TrainReport,
    pub classifier: ClassifierReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EpisodeOutput {
    pub provenance: Provenance,
    #[serde(flatten)]
    pub record: EpisodeRecord,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingInput {
            path: path.to_path_buf(),
            what: what.to_string(),
        })
    }
}

pub fn manifold(ctx: &Context) -> Result<String, CliError> {
    let table = ctx.field.export_manifold(&ctx.world.grid);
    let csv = ctx.path(MANIFOLD_CSV);
    table.write_csv(&csv)?;
    let meta = ManifoldMeta {
        provenance: ctx.provenance(),
        grid: ctx.world.grid,
        field: ctx.field.clone(),
    };
    write_json(&ctx.path(MANIFOLD_META), &meta)?;
    Ok(format!("wrote {} ({} rows)", csv.display(), table.values.len()))
}

pub fn labels(ctx: &Context) -> Result<String, CliError> {
    let labels = &ctx.config.labels;
    let mut dataset = generate_dataset(
        &ctx.world,
        &ctx.field,
        labels.p_thres,
        labels.radial_weight,
        ctx.config.seeds().observation_noise,
    )?;
    dataset.provenance = Some(ctx.provenance());
    let path = ctx.path(DATASET);
    write_dataset(&dataset, &path)?;
    let reachable = dataset.records.iter().filter(|r| r.label.reachable).count();
    Ok(format!(
        "wrote {} ({} records, {} reachable)",
        path.display(),
        dataset.len(),
        reachable
    ))
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    require(path, "dataset (run `viewnav labels` first)")?;
    Ok(read_dataset(path)?)
}

pub fn train_models(ctx: &Context, dataset_path: &Path) -> Result<String, CliError> {
    let dataset = load_dataset(dataset_path)?;
    if dataset.is_empty() {
        return Err(CliError::EmptyDataset(format!("{} has no records", dataset_path.display())));
    }
    let seeds = ctx.config.seeds();
    let grid = dataset.world.grid;

    let reg = &ctx.config.train;
    let mut sizes = vec![dataset.world.obs_dim];
    sizes.extend_from_slice(&reg.hidden);
    sizes.push(2);
    let net = NavNet::init(&sizes, seeds.regressor)?;
    let (net, reg_report) = train(net, &dataset, &reg.fit(), seeds.regressor)?;
    NavModelFile::from_net(&net, &grid, Some(ctx.provenance())).write(&ctx.path(REGRESSOR))?;

    let cls = &ctx.config.classifier;
    let (policy, cls_report) = train_classifier(&dataset, &cls.hidden, &cls.fit(), &cls.bins, seeds.classifier)?;
    ClassifierModelFile::from_policy(&policy, Some(ctx.provenance())).write(&ctx.path(CLASSIFIER))?;

    let msg = format!(
        "regressor loss {:.6} after {} epochs; classifier accuracy {:.4}",
        reg_report.final_train_loss, reg_report.epochs_run, cls_report.train_accuracy
    );
    let summary = TrainSummary {
        provenance: ctx.provenance(),
        regressor: reg_report,
        classifier: cls_report,
    };
    write_json(&ctx.path(TRAIN_REPORT), &summary)?;
    Ok(msg)
}

/// Where the model-backed policies find their inputs.
pub struct Inputs {
    pub models: PathBuf,
    pub dataset: PathBuf,
}

fn load_regressor(path: &Path, grid: &PoseGrid) -> Result<RegressionPolicy, CliError> {
    require(path, "regressor model (run `viewnav train` first)")?;
    let net = NavModelFile::read(path)?.to_net()?;
    Ok(RegressionPolicy::new(net, *grid))
}

fn load_classifier(path: &Path) -> Result<ClassifierPolicy, CliError> {
    require(path, "classifier model (run `viewnav train` first)")?;
    Ok(ClassifierModelFile::read(path)?.to_policy()?)
}

pub fn build_policy(ctx: &Context, name: &str, inputs: &Inputs) -> Result<Arc<dyn Policy>, CliError> {
    let grid = ctx.world.grid;
    let policy: Arc<dyn Policy> = match name {
        "static" => Arc::new(StaticPolicy),
        "random" => Arc::new(RandomPolicy::new(&grid)),
        "regression" => Arc::new(load_regressor(&inputs.models.join(REGRESSOR), &grid)?),
        "classifier" => Arc::new(load_classifier(&inputs.models.join(CLASSIFIER))?),
        "oracle" => {
            let dataset = load_dataset(&inputs.dataset)?;
            if dataset.world.grid != grid {
                return Err(CliError::Schema(format!(
                    "{} was generated on a different grid",
                    inputs.dataset.display()
                )));
            }
            Arc::new(OraclePolicy::new(Arc::new(dataset)))
        }
        other => return Err(CliError::Config(format!("unknown policy `{other}`"))),
    };
    Ok(policy)
}

pub fn episode(ctx: &Context, policy: &str, pose: Pose, inputs: &Inputs) -> Result<String, CliError> {
    let policy = build_policy(ctx, policy, inputs)?;
    let encoder = ctx.world.encoder();
    let record = run_episode(
        &ctx.world,
        &encoder,
        &ctx.field,
        policy.as_ref(),
        pose,
        &ctx.config.episode,
        ctx.config.seeds().episode,
    )?;
    let msg = format!(
        "{}: p_init {:.4} -> p_final {:.4} ({})",
        record.policy,
        record.p_init,
        record.p_final,
        if record.success { "success" } else { "no improvement" }
    );
    let path = ctx.path(EPISODE);
    write_json(
        &path,
        &EpisodeOutput {
            provenance: ctx.provenance(),
            record,
        },
    )?;
    Ok(msg)
}

pub fn eval(ctx: &Context, inputs: &Inputs) -> Result<String, CliError> {
    let policies = ctx
        .config
        .eval
        .policies
        .iter()
        .map(|name| build_policy(ctx, name, inputs))
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = EvalConfig {
        n_trials: ctx.config.eval.n_trials,
        seed: ctx.config.seed,
        episode: ctx.config.episode,
    };
    let mut report: Report = evaluate(&ctx.world, &ctx.field, &policies, &cfg, ctx.jobs)?;
    report.provenance = Some(ctx.provenance());
    report.write(&ctx.path(REPORT_JSON), &ctx.path(REPORT_CSV))?;
    let lines: Vec<String> = report
        .policies
        .iter()
        .map(|s| format!("{:<10} success {:6.2}%  improvement {:7.2}%", s.policy, s.success_rate, s.improvement_rate))
        .collect();
    Ok(lines.join("\n"))
}
