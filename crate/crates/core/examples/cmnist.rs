//! Continuously colored digits. Needs the MNIST IDX files: pass their
//! directory as the first argument or set CIL_DATA_DIR.
//!
//! `cargo run --release --example cmnist -- /data/mnist [limit]`

use std::path::PathBuf;

use cil::datagen::{colorize_mnist, load_idx, CmnistConfig, Schedule};
use cil::harness::{ModelConfig, DATA_DIR_ENV};
use cil::models::ModelBundle;
use cil::objectives::{Method, PenaltySpec};
use cil::trainer::{evaluate, train, TrainConfig};

fn main() -> cil::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(dir) = args.next().map(PathBuf::from).or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)) else {
        eprintln!("no MNIST directory given and {DATA_DIR_ENV} is unset");
        std::process::exit(4);
    };
    let limit: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let train_raw = load_idx(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))?.take(limit);
    let test_raw = load_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))?;

    let base = CmnistConfig::default();
    let tr = colorize_mnist(&train_raw, &CmnistConfig { seed: 0, ..base.clone() })?;
    let id = colorize_mnist(&test_raw, &CmnistConfig { seed: 2, ..base.clone() })?;
    // color mostly disagrees with the class at test time
    let ood = colorize_mnist(&test_raw, &CmnistConfig { schedule: Schedule::Constant { p: 0.1 }, seed: 1, ..base })?;

    let model_cfg = ModelConfig {
        phi_hidden: vec![64],
        feature_dim: 32,
        penalty_hidden: 64,
    };
    let init = ModelBundle::init(&model_cfg.bundle_spec(&tr)?, 0)?;
    let cfg = TrainConfig {
        steps: 1000,
        batch_size: 512,
        ..TrainConfig::default()
    };
    for spec in [
        PenaltySpec::new(Method::Erm, 0.0),
        PenaltySpec::new(Method::Irmv1, 8000.0).with_split(4),
        PenaltySpec::new(Method::Cil, 8000.0),
    ] {
        let (model, _) = train(&tr, &init, &spec, &cfg)?;
        println!(
            "{}: id {:.2}% ood {:.2}%",
            spec.method.name(),
            100.0 * evaluate(&model, &id)?.accuracy,
            100.0 * evaluate(&model, &ood)?.accuracy
        );
    }
    Ok(())
}
