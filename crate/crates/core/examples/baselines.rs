//! Every method on one seed of the linear logit benchmark, with the last
//! logged penalty of each run.

use cil::harness::{DatasetSpec, LogitBenchmark, ModelConfig};
use cil::models::ModelBundle;
use cil::objectives::{Method, PenaltySpec};
use cil::trainer::{evaluate, train, TrainConfig};

fn main() -> cil::Result<()> {
    let s = DatasetSpec::Logit(LogitBenchmark::linear()).materialize(0)?;
    let init = ModelBundle::init(&ModelConfig::default().bundle_spec(&s.train)?, 0)?;
    let cfg = TrainConfig {
        batch_size: 256,
        ..TrainConfig::default()
    };
    let specs = [
        PenaltySpec::new(Method::Erm, 0.0),
        PenaltySpec::new(Method::Irmv1, 1e4).with_split(4),
        PenaltySpec::new(Method::Rex, 1e4).with_split(8),
        PenaltySpec::new(Method::GroupDro, 0.0).with_split(4),
        PenaltySpec::new(Method::Cil, 1e4),
    ];
    println!("{:<9} {:>8} {:>8} {:>12}", "method", "id %", "ood %", "penalty");
    for spec in &specs {
        let (model, hist) = train(&s.train, &init, spec, &cfg)?;
        println!(
            "{:<9} {:>8.2} {:>8.2} {:>12.4e}",
            spec.method.name(),
            100.0 * evaluate(&model, &s.id_test)?.accuracy,
            100.0 * evaluate(&model, &s.ood_test)?.accuracy,
            hist.final_penalty()
        );
    }
    Ok(())
}
