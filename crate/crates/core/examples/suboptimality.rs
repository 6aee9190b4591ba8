//! Train CIL, then probe how far the final point is from a local saddle:
//! eps1 is the improvement a short descent on (featurizer, classifier, h)
//! finds, eps2 the improvement a short ascent on g finds. With g frozen
//! and a large penalty weight, the featurizer can push its features away from
//! what g has fit, so eps1 is large even when training has settled.

use cil::harness::{DatasetSpec, LogitBenchmark, ModelConfig};
use cil::models::ModelBundle;
use cil::objectives::{Method, PenaltySpec};
use cil::trainer::{estimate_suboptimality, standardized_t, train, TrainConfig};

fn main() -> cil::Result<()> {
    let s = DatasetSpec::Logit(LogitBenchmark::linear()).materialize(0)?;
    let init = ModelBundle::init(&ModelConfig::default().bundle_spec(&s.train)?, 0)?;
    let cfg = TrainConfig {
        batch_size: 256,
        probes: 4,
        ..TrainConfig::default()
    };
    let (model, hist) = train(&s.train, &init, &PenaltySpec::new(Method::Cil, 1e4), &cfg)?;
    println!("recorded during training: eps1 {:?} eps2 {:?}", hist.eps1, hist.eps2);
    // training regressed on the z-scored index, so probe on the same scale
    let (e1, e2) = estimate_suboptimality(&model, &standardized_t(&s.train), 1e4, 8, &cfg)?;
    println!("8 fresh probes: eps1 {e1:.3e} eps2 {e2:.3e}");
    Ok(())
}
