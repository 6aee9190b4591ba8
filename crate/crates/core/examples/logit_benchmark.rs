//! ERM against CIL on the synthetic logit benchmark.
//!
//! `cargo run --release --example logit_benchmark [linear|sine] [seeds]`

use cil::harness::{LogitBenchmark, ModelConfig};
use cil::models::ModelBundle;
use cil::objectives::{Method, PenaltySpec};
use cil::trainer::{evaluate, train, TrainConfig};

fn main() -> cil::Result<()> {
    let mut args = std::env::args().skip(1);
    let bench = match args.next().as_deref() {
        Some("sine") => LogitBenchmark::sine(),
        _ => LogitBenchmark::linear(),
    };
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let data = cil::harness::DatasetSpec::Logit(bench);

    for spec in [PenaltySpec::new(Method::Erm, 0.0), PenaltySpec::new(Method::Cil, 1e4)] {
        let mut ood = Vec::new();
        for seed in 0..seeds {
            let s = data.materialize(seed)?;
            let init = ModelBundle::init(&ModelConfig::default().bundle_spec(&s.train)?, seed)?;
            let cfg = TrainConfig {
                batch_size: 256,
                seed,
                ..TrainConfig::default()
            };
            let (model, _) = train(&s.train, &init, &spec, &cfg)?;
            let (id, o) = (evaluate(&model, &s.id_test)?.accuracy, evaluate(&model, &s.ood_test)?.accuracy);
            println!("{} seed {seed}: id {:.2}% ood {:.2}%", spec.method.name(), 100.0 * id, 100.0 * o);
            ood.push(o);
        }
        let (m, sd) = cil::harness::mean_std(&ood);
        println!("{} mean OOD {:.2} ({:.2})\n", spec.method.name(), 100.0 * m, 100.0 * sd);
    }
    Ok(())
}
