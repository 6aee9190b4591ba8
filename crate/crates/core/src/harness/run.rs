use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::models::ModelBundle;
use crate::objectives::Method;
use crate::trainer::{evaluate, train};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Outcome of one (configuration, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub method: String,
    /// Sweep axis and value, when the run came from a sweep.
    pub axis: Option<String>,
    pub value: Option<f64>,
    pub seed: u64,
    pub id_accuracy: f64,
    pub ood_accuracy: f64,
    pub final_penalty: f64,
    pub eps1: Option<f64>,
    pub eps2: Option<f64>,
    pub wall_seconds: f64,
    pub tool_version: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Retrain even when a finished record exists.
    pub force: bool,
    /// Worker threads; 0 lets the pool pick.
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { force: false, jobs: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Number of equal-width environments.
    Split,
    Lambda,
    /// Hidden width of the domain regressors.
    PenaltyWidth,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Split => "split",
            SweepAxis::Lambda => "lambda",
            SweepAxis::PenaltyWidth => "penalty_width",
        }
    }

    fn check_method(self, m: Method) -> Result<()> {
        let ok = match self {
            SweepAxis::Split => m.uses_envs(),
            SweepAxis::Lambda => matches!(m, Method::Cil | Method::Rex | Method::Irmv1),
            SweepAxis::PenaltyWidth => m == Method::Cil,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("a {} sweep does not apply to {}", self.name(), m.name())))
        }
    }

    /// Copy of `base` with the axis set to `value`.
    pub fn apply(self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        let count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 && value <= usize::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(Error::validation(format!("{} needs positive integers, got {value}", self.name())))
            }
        };
        match self {
            SweepAxis::Split => cfg.method.split = Some(count()?),
            SweepAxis::Lambda => cfg.method.lambda = value,
            SweepAxis::PenaltyWidth => cfg.model.penalty_hidden = count()?,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "split" => Ok(SweepAxis::Split),
            "lambda" => Ok(SweepAxis::Lambda),
            "penalty_width" | "penalty-width" => Ok(SweepAxis::PenaltyWidth),
            _ => Err(Error::validation(format!("unknown sweep axis `{s}`"))),
        }
    }
}

struct Job {
    cfg: ExperimentConfig,
    seed: u64,
    axis: Option<(SweepAxis, f64)>,
}

/// Runs every seed of `cfg`, reusing finished runs unless `opts.force`.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    cfg.dataset.check_files()?;
    let jobs = cfg
        .seeds
        .iter()
        .map(|&seed| Job {
            cfg: cfg.clone(),
            seed,
            axis: None,
        })
        .collect();
    execute(jobs, opts)
}

/// Runs the Cartesian product of `values` and the configured seeds.
pub fn sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[f64], opts: &RunOptions) -> Result<Vec<RunRecord>> {
    base.validate()?;
    if values.is_empty() {
        return Err(Error::validation("sweep needs at least one value"));
    }
    axis.check_method(base.method.method)?;
    base.dataset.check_files()?;
    let mut jobs = Vec::new();
    for &v in values {
        let cfg = axis.apply(base, v)?;
        for &seed in &cfg.seeds {
            jobs.push(Job {
                cfg: cfg.clone(),
                seed,
                axis: Some((axis, v)),
            });
        }
    }
    execute(jobs, opts)
}

fn execute(jobs: Vec<Job>, opts: &RunOptions) -> Result<Vec<RunRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::validation(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<RunRecord>> = pool.install(|| jobs.par_iter().map(|j| run_one(j, opts.force)).collect());
    // finished runs are already on disk, so report the first failure only
    // after every job has had its chance
    results.into_iter().collect()
}

pub fn seed_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.run_root().join(format!("seed-{seed}"))
}

pub fn read_record(path: &Path) -> Result<RunRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn run_one(job: &Job, force: bool) -> Result<RunRecord> {
    let dir = seed_dir(&job.cfg, job.seed);
    let record_path = dir.join("record.json");
    if !force && record_path.exists() {
        return read_record(&record_path);
    }
    let root = job.cfg.run_root();
    std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;

    let splits = job.cfg.dataset.materialize(job.seed)?;
    let spec = job.cfg.model.bundle_spec(&splits.train)?;
    let init = ModelBundle::init(&spec, job.seed)?;
    let mut tcfg = job.cfg.train.clone();
    tcfg.seed = job.seed;
    let (model, history) = match train(&splits.train, &init, &job.cfg.method, &tcfg) {
        Ok(out) => out,
        Err(Error::Divergence { step, message, snapshot }) => {
            let failed = root.join(format!("seed-{}.diverged", job.seed));
            std::fs::create_dir_all(&failed).map_err(|e| Error::io(&failed, e))?;
            snapshot.save_json(&failed.join("model.json"))?;
            return Err(Error::Divergence { step, message, snapshot });
        }
        Err(e) => return Err(e),
    };
    let id = evaluate(&model, &splits.id_test)?;
    let ood = evaluate(&model, &splits.ood_test)?;
    let record = RunRecord {
        config_hash: job.cfg.hash(),
        method: job.cfg.method.method.name().to_string(),
        axis: job.axis.map(|(a, _)| a.name().to_string()),
        value: job.axis.map(|(_, v)| v),
        seed: job.seed,
        id_accuracy: id.accuracy,
        ood_accuracy: ood.accuracy,
        final_penalty: history.final_penalty(),
        eps1: history.eps1,
        eps2: history.eps2,
        wall_seconds: history.wall_seconds,
        tool_version: TOOL_VERSION.to_string(),
    };

    // build everything in a private directory, then publish it in one rename
    let tmp = root.join(format!(".tmp-seed-{}-{}", job.seed, std::process::id()));
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    history.write_jsonl(&tmp.join("history.jsonl"))?;
    model.save_json(&tmp.join("model.json"))?;
    write_file(&tmp.join("config.toml"), job.cfg.to_toml()?.as_bytes())?;
    write_file(&tmp.join("record.json"), serde_json::to_string_pretty(&record)?.as_bytes())?;
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    std::fs::rename(&tmp, &dir).map_err(|e| Error::io(&dir, e))?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{DatasetSpec, LogitBenchmark};
    use crate::objectives::PenaltySpec;
    use crate::trainer::TrainConfig;

    fn tiny(out: &Path, method: PenaltySpec) -> ExperimentConfig {
        ExperimentConfig {
            name: "tiny".into(),
            seeds: vec![0, 1],
            output: out.to_path_buf(),
            dataset: DatasetSpec::Logit(LogitBenchmark {
                n_train: 120,
                n_test: 80,
                ..LogitBenchmark::linear()
            }),
            method,
            train: TrainConfig {
                steps: 30,
                penalty_step: 10,
                ..TrainConfig::default()
            },
            model: Default::default(),
        }
    }

    #[test]
    fn rerun_reloads_and_force_retrains() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path(), PenaltySpec::new(Method::Cil, 10.0));
        let first = run(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(first.len(), 2);
        let rec_path = seed_dir(&cfg, 0).join("record.json");
        let stamp = std::fs::metadata(&rec_path).unwrap().modified().unwrap();
        let again = run(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(again, first);
        assert_eq!(std::fs::metadata(&rec_path).unwrap().modified().unwrap(), stamp);
        for name in ["history.jsonl", "model.json", "config.toml"] {
            assert!(seed_dir(&cfg, 1).join(name).exists(), "{name}");
        }
        let forced = run(&cfg, &RunOptions { force: true, jobs: 2 }).unwrap();
        for (a, b) in forced.iter().zip(&first) {
            assert_eq!((a.id_accuracy, a.ood_accuracy, a.final_penalty), (b.id_accuracy, b.ood_accuracy, b.final_penalty));
        }
        let leftovers = std::fs::read_dir(cfg.run_root())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with(".tmp"))
            .count();
        assert_eq!(leftovers, 0);
    }

    #[test]
    fn sweep_validates_axis_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let cil = tiny(dir.path(), PenaltySpec::new(Method::Cil, 10.0));
        assert!(matches!(sweep(&cil, SweepAxis::Split, &[2.0], &RunOptions::default()), Err(Error::Validation(_))));
        let rex = tiny(dir.path(), PenaltySpec::new(Method::Rex, 10.0).with_split(2));
        assert!(matches!(sweep(&rex, SweepAxis::Split, &[], &RunOptions::default()), Err(Error::Validation(_))));
        assert!(sweep(&rex, SweepAxis::Split, &[2.5], &RunOptions::default()).is_err());
        let erm = tiny(dir.path(), PenaltySpec::new(Method::Erm, 0.0));
        assert!(sweep(&erm, SweepAxis::Lambda, &[1.0], &RunOptions::default()).is_err());
        assert_eq!("penalty-width".parse::<SweepAxis>().unwrap(), SweepAxis::PenaltyWidth);
    }

    #[test]
    fn sweep_runs_product_of_values_and_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let rex = tiny(dir.path(), PenaltySpec::new(Method::Rex, 10.0).with_split(2));
        let recs = sweep(&rex, SweepAxis::Split, &[2.0, 4.0], &RunOptions::default()).unwrap();
        assert_eq!(recs.len(), 4);
        assert_eq!(recs.iter().filter(|r| r.value == Some(4.0)).count(), 2);
        assert!(recs.iter().all(|r| r.axis.as_deref() == Some("split")));
        assert_ne!(recs[0].config_hash, recs[2].config_hash);
    }
}
