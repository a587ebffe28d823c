//! Command implementations behind the `bridgekit` binary. Each command owns
//! one run directory and leaves the resolved config next to its artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use crate::config::ExperimentConfig;
use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::eval::{energy_report, joint_cloud, sliced_w2_report, MetricReport};
use crate::export::{cloud_from_csv, cloud_to_csv, tapes_from_ndjson, tapes_to_ndjson};
use crate::model::{estimate_endpoint_stats, Checkpoint, Model, Precondition, Role, Scheme};
use crate::sample::{cdbm_sample_many, ode_sample_many, replay, TimestepPlan};
use crate::schedule::ScheduleSpec;
use crate::train::{train_loop, Objective, TrainSettings, Window};
use crate::verify;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Pretrain,
    Distill,
    Cbt,
    Sample,
    Eval,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Pretrain => "pretrain",
            Command::Distill => "distill",
            Command::Cbt => "cbt",
            Command::Sample => "sample",
            Command::Eval => "eval",
            Command::Verify => "verify",
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub steps: Option<u64>,
    pub dataset: Option<String>,
    pub nfe: Option<usize>,
    /// tapes to replay instead of drawing fresh noise (`sample` only)
    pub replay: Option<PathBuf>,
    /// criteria to run (`verify` only); empty means all
    pub criteria: Vec<u32>,
}

pub fn resolve(mut cfg: ExperimentConfig, o: &Overrides) -> Result<ExperimentConfig> {
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = o.steps {
        cfg.train.steps = steps;
    }
    if let Some(id) = &o.dataset {
        cfg.dataset = DatasetSpec::from_id(id)?;
    }
    if let Some(nfe) = o.nfe {
        cfg.sample.nfe = nfe;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn default_out(cmd: Command) -> PathBuf {
    Path::new("runs").join(cmd.name())
}

/// Loads the config, applies overrides, runs `cmd` and returns the run
/// directory. On failure `error.json` is written into the run directory
/// when it can be created.
pub fn execute(cmd: Command, config: &Path, o: &Overrides) -> Result<PathBuf> {
    let out = o.out.clone().unwrap_or_else(|| default_out(cmd));
    let result = fs::create_dir_all(&out)
        .map_err(Error::from)
        .and_then(|_| ExperimentConfig::load(config))
        .and_then(|cfg| resolve(cfg, o))
        .and_then(|cfg| run_in(cmd, &cfg, &out, o));
    if let Err(e) = &result {
        let _ = write_error(&out, e);
    }
    result.map(|_| out)
}

pub fn write_error(dir: &Path, e: &Error) -> Result<()> {
    let record = json!({ "error": e.kind(), "message": e.to_string() });
    fs::write(dir.join("error.json"), serde_json::to_string_pretty(&record)? + "\n")?;
    Ok(())
}

/// Runs `cmd` for an already resolved config.
pub fn run_in(cmd: Command, cfg: &ExperimentConfig, out: &Path, o: &Overrides) -> Result<()> {
    let _ = fs::remove_file(out.join("error.json"));
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let mut log = fs::File::create(out.join("log.ndjson"))?;
    match cmd {
        Command::Pretrain => cmd_train(cfg, Objective::Dbsm, out, &mut log),
        Command::Distill => cmd_train(cfg, Objective::Cbd, out, &mut log),
        Command::Cbt => cmd_train(cfg, Objective::Cbt, out, &mut log),
        Command::Sample => cmd_sample(cfg, out, o.replay.as_deref(), &mut log),
        Command::Eval => cmd_eval(cfg, out, &mut log),
        Command::Verify => cmd_verify(cfg, out, &o.criteria, &mut log),
    }
}

fn train_settings(cfg: &ExperimentConfig, objective: Objective) -> TrainSettings {
    let t = &cfg.train;
    TrainSettings {
        objective,
        steps: t.steps,
        batch_size: t.batch_size,
        lr: t.lr,
        seed: cfg.seed,
        schedule: t.schedule,
        weighting: t.weighting,
        metric: t.metric,
        dbsm_weighting: t.dbsm_weighting,
        log_every: t.log_every,
    }
}

fn load_model(path: &Path) -> Result<Model> {
    if !path.exists() {
        return Err(Error::Checkpoint(format!("missing checkpoint {}", path.display())));
    }
    Model::from_checkpoint(&Checkpoint::load(path)?)
}

fn check_compatible(cfg: &ExperimentConfig, spec: &ScheduleSpec, m: &Model, what: &str) -> Result<()> {
    if m.spec.as_preset() != spec.as_preset() {
        return Err(Error::Config(format!("{what} was trained with schedule `{}`", m.spec.id())));
    }
    if m.dim() != cfg.dataset.dim() {
        return Err(Error::DimensionMismatch { expected: cfg.dataset.dim(), got: m.dim() });
    }
    Ok(())
}

/// The same network read as a consistency function.
fn as_consistency(m: &Model, window: &Window) -> Result<Model> {
    let p = m.precond;
    m.with_precondition(Precondition::new(p.scheme, Role::Consistency, p.stats, window.eps)?)
}

fn fresh_model(cfg: &ExperimentConfig, spec: &ScheduleSpec, role: Role, window: &Window) -> Result<Model> {
    let scheme = cfg.model.scheme;
    let stats = match scheme {
        Scheme::EdmStyle => Some(estimate_endpoint_stats(&cfg.dataset.sample_n(cfg.seed, cfg.model.stats_samples))?),
        _ => None,
    };
    let shift = if role == Role::Consistency { window.eps } else { 0.0 };
    let pre = Precondition::new(scheme, role, stats, shift)?;
    Model::new(spec.clone(), pre, cfg.dataset.dim(), &cfg.model.hidden, cfg.seed)
}

fn metrics_csv(rows: &[MetricReport]) -> String {
    let mut out = String::from("metric,value,n_samples,n_projections,seed\n");
    for r in rows {
        let proj = r.n_projections.map(|p| p.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{:?},{},{},{}\n", r.metric, r.value, r.n_samples, proj, r.seed));
    }
    out
}

fn log_event(log: &mut dyn Write, value: serde_json::Value) -> Result<()> {
    writeln!(log, "{}", serde_json::to_string(&value)?)?;
    Ok(())
}

fn cmd_train(cfg: &ExperimentConfig, objective: Objective, out: &Path, log: &mut fs::File) -> Result<()> {
    let spec = cfg.spec()?;
    let window = cfg.window(&spec);
    let teacher = match objective {
        Objective::Cbd => {
            let path = cfg.train.teacher.as_ref().ok_or_else(|| {
                Error::Config("distillation needs train.teacher pointing at a pretrain checkpoint".into())
            })?;
            let t = load_model(path)?;
            check_compatible(cfg, &spec, &t, "the teacher")?;
            if t.precond.role != Role::DataPredictor {
                return Err(Error::Checkpoint("the teacher must be a data predictor".into()));
            }
            Some(t)
        }
        _ => None,
    };
    let mut model = match (objective, &cfg.train.init, &teacher) {
        (Objective::Dbsm, Some(path), _) => load_model(path)?,
        (Objective::Dbsm, None, _) => fresh_model(cfg, &spec, Role::DataPredictor, &window)?,
        (_, Some(path), _) => as_consistency(&load_model(path)?, &window)?,
        (_, None, Some(t)) => as_consistency(t, &window)?,
        (_, None, None) => fresh_model(cfg, &spec, Role::Consistency, &window)?,
    };
    check_compatible(cfg, &spec, &model, "the initial checkpoint")?;
    let settings = train_settings(cfg, objective);
    let report = train_loop(
        &mut model,
        teacher.as_ref().map(|t| t as &dyn crate::bridge::DataPredictor),
        &cfg.dataset,
        &settings,
        &window,
        Some(log),
    )?;
    model.to_checkpoint(cfg.seed, report.steps)?.save(&out.join("checkpoint.json"))?;
    let rows = if report.steps > 0 {
        vec![MetricReport {
            metric: "train_loss_final".into(),
            value: report.last_loss,
            n_samples: settings.batch_size,
            n_projections: None,
            seed: cfg.seed,
        }]
    } else {
        vec![]
    };
    fs::write(out.join("metrics.csv"), metrics_csv(&rows))?;
    Ok(())
}

/// Held-out pairs used by `sample` and `eval`.
fn held_out(cfg: &ExperimentConfig, n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    cfg.dataset.held_out(cfg.seed, n).into_iter().map(|p| (p.x, p.y)).unzip()
}

fn score(cfg: &ExperimentConfig, samples: &[Vec<f64>]) -> Result<Vec<MetricReport>> {
    let (xs, ys) = held_out(cfg, samples.len());
    let truth = joint_cloud(&xs, &ys);
    let cloud = joint_cloud(samples, &ys);
    Ok(vec![
        sliced_w2_report(&cloud, &truth, cfg.eval.n_projections, cfg.seed)?,
        energy_report(&cloud, &truth, cfg.seed)?,
    ])
}

fn cmd_sample(cfg: &ExperimentConfig, out: &Path, replay_from: Option<&Path>, log: &mut fs::File) -> Result<()> {
    let spec = cfg.spec()?;
    let window = cfg.window(&spec);
    let path = cfg
        .sample
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("sampling needs sample.checkpoint".into()))?;
    let model = load_model(path)?;
    check_compatible(cfg, &spec, &model, "the checkpoint")?;
    let start = Instant::now();
    let samples = match (model.precond.role, replay_from) {
        (Role::Consistency, Some(tape_path)) => {
            let tapes = tapes_from_ndjson(&fs::read_to_string(tape_path)?)?;
            let xs = tapes.iter().map(|t| replay(&model, &spec, &window, t)).collect::<Result<Vec<_>>>()?;
            fs::write(out.join("tapes.ndjson"), tapes_to_ndjson(&tapes)?)?;
            xs
        }
        (Role::Consistency, None) => {
            let (_, ys) = held_out(cfg, cfg.sample.n);
            let plan = TimestepPlan::new(&spec, &window, cfg.sample.nfe, cfg.sample.plan)?;
            let (xs, tapes): (Vec<_>, Vec<_>) =
                cdbm_sample_many(&model, &spec, &window, &ys, &plan, cfg.seed)?.into_iter().unzip();
            fs::write(out.join("tapes.ndjson"), tapes_to_ndjson(&tapes)?)?;
            xs
        }
        (Role::DataPredictor, Some(_)) => {
            return Err(Error::Config("replay needs a consistency checkpoint".into()));
        }
        (Role::DataPredictor, None) => {
            let (_, ys) = held_out(cfg, cfg.sample.n);
            ode_sample_many(&model, &spec, &window, &ys, cfg.sample.ode_steps, cfg.sample.solver, cfg.seed)?
        }
    };
    log_event(log, json!({ "event": "sampled", "n": samples.len(), "wallclock_s": start.elapsed().as_secs_f64() }))?;
    fs::write(out.join("samples.csv"), cloud_to_csv(&samples, "x"))?;
    fs::write(out.join("metrics.csv"), metrics_csv(&score(cfg, &samples)?))?;
    Ok(())
}

fn cmd_eval(cfg: &ExperimentConfig, out: &Path, log: &mut fs::File) -> Result<()> {
    let path = cfg.eval.samples.clone().unwrap_or_else(|| out.join("samples.csv"));
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read samples {}: {e}", path.display())))?;
    let samples = cloud_from_csv(&text)?;
    if samples.first().is_some_and(|p| p.len() != cfg.dataset.dim()) {
        return Err(Error::DimensionMismatch { expected: cfg.dataset.dim(), got: samples[0].len() });
    }
    let rows = score(cfg, &samples)?;
    for r in &rows {
        log_event(log, json!({ "event": "metric", "metric": r.metric, "value": r.value }))?;
    }
    if path != out.join("samples.csv") {
        fs::write(out.join("samples.csv"), cloud_to_csv(&samples, "x"))?;
    }
    fs::write(out.join("metrics.csv"), metrics_csv(&rows))?;
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cmd_verify(cfg: &ExperimentConfig, out: &Path, only: &[u32], log: &mut fs::File) -> Result<()> {
    let ids: Vec<u32> = if only.is_empty() { verify::CRITERIA.iter().map(|c| c.0).collect() } else { only.to_vec() };
    let mut csv = String::from("id,name,passed,elapsed_s,budget_s,detail\n");
    let mut failed = Vec::new();
    for id in ids {
        let r = verify::run(id, cfg.seed)?;
        println!("{}", r.line());
        log_event(log, serde_json::to_value(&r)?)?;
        csv.push_str(&format!(
            "{},{},{},{:?},{},{}\n",
            r.id,
            csv_field(&r.name),
            r.passed,
            r.elapsed_s,
            r.budget_s.map(|b| format!("{b:?}")).unwrap_or_default(),
            csv_field(&r.detail)
        ));
        if !r.passed {
            failed.push(r.id.to_string());
        }
    }
    fs::write(out.join("metrics.csv"), csv)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::VerificationFailed(format!("criteria {} failed", failed.join(", "))))
    }
}
