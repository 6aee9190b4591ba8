//! A config-driven experiment: run two seeds, rerun (served from disk),
//! sweep the penalty weight, and print the report table.

use cil::harness::{self, ExperimentConfig, ReportFormat, RunOptions, SweepAxis};

const CONFIG: &str = r#"
name = "harness-demo"
seeds = [0, 1]
output = "PLACEHOLDER"

[dataset]
kind = "logit"
n_train = 1000
n_test = 1000

[method]
method = "cil"
lambda = 10000.0

[train]
steps = 800
penalty_step = 300
batch_size = 256
"#;

fn main() -> cil::Result<()> {
    let out = std::env::temp_dir().join(format!("cil-harness-{}", std::process::id()));
    let mut cfg = ExperimentConfig::from_toml_str(CONFIG)?;
    cfg.output = out.clone();
    println!("config hash {}", cfg.hash());

    let opts = RunOptions::default();
    let first = harness::run(&cfg, &opts)?;
    let again = harness::run(&cfg, &opts)?;
    println!("rerun served from disk: {}", first == again);

    harness::sweep(&cfg, SweepAxis::Lambda, &[0.0, 1e3], &opts)?;
    print!("{}", harness::report(&out, ReportFormat::Markdown)?);
    println!("records under {}", out.display());
    Ok(())
}
