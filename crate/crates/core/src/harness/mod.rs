//! Experiment orchestration: TOML configs, multi-seed runs and sweeps with
//! on-disk records, result tables, dataset generation and the Monte-Carlo
//! theory runs.

mod config;
mod report;
mod run;

pub use config::{
    parse_toml, read_toml, resolve_data_path, CmnistBenchmark, CsvBenchmark, DatasetSpec, ExperimentConfig,
    LogitBenchmark, ModelConfig, Splits, DATA_DIR_ENV,
};
pub use report::{
    collect_records, mean_std, read_records_csv, render, render_markdown, render_plotdata, report, sort_records,
    summarize, write_records_csv, GroupSummary, ReportFormat,
};
pub use run::{read_record, run, seed_dir, sweep, RunOptions, RunRecord, SweepAxis, TOOL_VERSION};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::save_snapshot;
use crate::error::Result;
use crate::theorycheck::{simulate_rex_choice, Prop1Config, RexChoiceReport};

/// Input of `cil gen`: one dataset block, the seed and where to write.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    #[serde(default)]
    pub seed: u64,
    pub output: PathBuf,
    pub dataset: DatasetSpec,
}

/// Writes `train`, `id_test` and `ood_test` snapshots under `cfg.output`.
pub fn generate(cfg: &GenConfig) -> Result<Vec<PathBuf>> {
    cfg.dataset.check_files()?;
    let s = cfg.dataset.materialize(cfg.seed)?;
    let mut dirs = Vec::new();
    for (name, ds) in [("train", &s.train), ("id_test", &s.id_test), ("ood_test", &s.ood_test)] {
        let dir = cfg.output.join(name);
        save_snapshot(ds, &dir)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Input of `cil theory prop1`: one `[[run]]` table per configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prop1File {
    /// CSV destination; printed to stdout when absent.
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub run: Vec<Prop1Config>,
}

impl Prop1File {
    pub fn load(path: &Path) -> Result<Self> {
        let f: Self = read_toml(path)?;
        for c in &f.run {
            c.validate()?;
        }
        Ok(f)
    }

    pub fn simulate(&self) -> Result<Vec<(Prop1Config, RexChoiceReport)>> {
        self.run.iter().map(|c| Ok((c.clone(), simulate_rex_choice(c)?))).collect()
    }
}
