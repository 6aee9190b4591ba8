//! REx on the sine benchmark as the number of discretized environments grows.
//! Too few bins hide the shift, too many leave each bin with a handful of
//! samples and a noisy risk estimate.

use cil::harness::{DatasetSpec, LogitBenchmark, ModelConfig};
use cil::models::ModelBundle;
use cil::objectives::{Method, PenaltySpec};
use cil::trainer::{evaluate, train, TrainConfig};

fn main() -> cil::Result<()> {
    let data = DatasetSpec::Logit(LogitBenchmark::sine());
    let seeds = [0, 1, 2];
    let splits: Vec<(u64, cil::harness::Splits)> = seeds.iter().map(|&s| Ok((s, data.materialize(s)?))).collect::<cil::Result<_>>()?;
    for m in [2, 4, 8, 16, 100] {
        let spec = PenaltySpec::new(Method::Rex, 1e4).with_split(m);
        let mut ood = Vec::new();
        for (seed, s) in &splits {
            let init = ModelBundle::init(&ModelConfig::default().bundle_spec(&s.train)?, *seed)?;
            let cfg = TrainConfig {
                batch_size: 256,
                seed: *seed,
                ..TrainConfig::default()
            };
            let (model, _) = train(&s.train, &init, &spec, &cfg)?;
            ood.push(evaluate(&model, &s.ood_test)?.accuracy);
        }
        let (mean, sd) = cil::harness::mean_std(&ood);
        println!("M = {m:>3}: OOD {:.2} ({:.2})", 100.0 * mean, 100.0 * sd);
    }
    Ok(())
}
