use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::datagen::{gen_logit, LogitConfig};
use crate::models::{BundleSpec, MlpSpec};
use crate::ndmath::sigmoid;

fn logit_data(n: usize, seed: u64) -> Dataset {
    gen_logit(&LogitConfig {
        n,
        seed,
        ..LogitConfig::default()
    })
    .unwrap()
}

fn bundle_for(data: &Dataset, seed: u64) -> ModelBundle {
    ModelBundle::init(&BundleSpec::standard(data.x.cols(), 2, 1, &[8], 4, 8), seed).unwrap()
}

fn short(steps: usize, penalty_step: usize) -> TrainConfig {
    TrainConfig {
        lr: 1e-2,
        olr: 1e-2,
        steps,
        penalty_step,
        ..TrainConfig::default()
    }
}

#[test]
fn config_validation() {
    assert!(TrainConfig { lr: 0.0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { penalty_step: 10, steps: 5, ..TrainConfig::default() }.validate().is_err());
    let parsed: TrainConfig = serde_json::from_str(r#"{"lr":0.1,"optimizer":"sgd"}"#).unwrap();
    assert_eq!(parsed.optimizer, OptimizerKind::Sgd);
    assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rate":0.1}"#).is_err());
}

#[test]
fn cil_without_penalty_tracks_erm_bitwise() {
    let data = logit_data(200, 1);
    let b = bundle_for(&data, 2);
    for batch_size in [0, 64] {
        let cfg = TrainConfig { batch_size, ..short(30, 30) };
        let (cil, hc) = sgda_train(&data, &b, 1e4, &cfg).unwrap();
        let (erm, he) = sgd_train(&data, &b, &PenaltySpec::new(Method::Erm, 0.0), None, &cfg).unwrap();
        assert_eq!(cil.phi, erm.phi);
        assert_eq!(cil.w, erm.w);
        for (a, b) in hc.records.iter().zip(&he.records) {
            assert_eq!(a.erm.to_bits(), b.erm.to_bits());
            assert_eq!(a.grad_norm.to_bits(), b.grad_norm.to_bits());
        }
    }
}

#[test]
fn penalty_changes_trajectory_after_warmup() {
    let data = logit_data(200, 1);
    let b = bundle_for(&data, 2);
    let (a, _) = sgda_train(&data, &b, 10.0, &short(20, 10)).unwrap();
    let (e, _) = sgda_train(&data, &b, 0.0, &short(20, 10)).unwrap();
    assert_ne!(a.phi, e.phi);
}

#[test]
fn deterministic_history() {
    let data = logit_data(150, 3);
    let b = bundle_for(&data, 4);
    let cfg = TrainConfig { batch_size: 32, ..short(25, 5) };
    let (m1, h1) = sgda_train(&data, &b, 100.0, &cfg).unwrap();
    let (m2, h2) = sgda_train(&data, &b, 100.0, &cfg).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(h1.records, h2.records);
    assert_eq!(h1.records.len(), 25);
}

#[test]
fn single_sample_sgd_step_matches_hand_gradient() {
    // Φ identity-like linear map, linear heads, one record.
    let spec = BundleSpec {
        phi: MlpSpec::linear(2, 2),
        w: MlpSpec::linear(2, 1),
        h: MlpSpec::linear(2, 1),
        g: MlpSpec::linear(4, 1),
        classes: 2,
    };
    let b = ModelBundle::init(&spec, 5).unwrap();
    let x = [0.7, -1.3];
    let (y, t) = (1usize, 0.4);
    let data = Dataset::new(
        "one",
        Tensor::matrix(1, 2, x.to_vec()).unwrap(),
        vec![y],
        Tensor::column(&[t]).unwrap(),
        2,
        None,
        None,
    )
    .unwrap();
    let (lr, olr, lambda) = (0.05, 0.2, 3.0);
    let cfg = TrainConfig {
        lr,
        olr,
        steps: 1,
        penalty_step: 0,
        optimizer: OptimizerKind::Sgd,
        update_rule: UpdateRule::FullObjective,
        standardize_t: false,
        ..TrainConfig::default()
    };
    let (after, _) = sgda_train(&data, &b, lambda, &cfg).unwrap();

    let z: Vec<f64> = (0..2)
        .map(|j| b.phi.layers[0].bias.data()[j] + (0..2).map(|i| x[i] * b.phi.layers[0].weight.get(i, j)).sum::<f64>())
        .collect();
    let zy = [z[0], z[1], 0.0, 1.0];
    let gw = &b.g.layers[0];
    let g_pred = gw.bias.data()[0] + (0..4).map(|i| zy[i] * gw.weight.get(i, 0)).sum::<f64>();
    // g moves first: d/dθ (g − t)² = 2(g − t)·input
    let dg = 2.0 * (g_pred - t);
    for i in 0..4 {
        let expect = gw.weight.get(i, 0) - olr * dg * zy[i];
        assert!((after.g.layers[0].weight.get(i, 0) - expect).abs() < 1e-14);
    }
    let g_new = after.g.layers[0].bias.data()[0] + (0..4).map(|i| zy[i] * after.g.layers[0].weight.get(i, 0)).sum::<f64>();

    let hw = &b.h.layers[0];
    let h_pred = hw.bias.data()[0] + (0..2).map(|i| z[i] * hw.weight.get(i, 0)).sum::<f64>();
    let ww = &b.w.layers[0];
    let logit = ww.bias.data()[0] + (0..2).map(|i| z[i] * ww.weight.get(i, 0)).sum::<f64>();
    let dlogit = sigmoid(logit) - y as f64;
    // w: only the classification loss depends on it
    for i in 0..2 {
        let expect = ww.weight.get(i, 0) - lr * dlogit * z[i];
        assert!((after.w.layers[0].weight.get(i, 0) - expect).abs() < 1e-14);
    }
    // h: its own regression loss at rate olr
    let expect_hb = hw.bias.data()[0] - olr * 2.0 * (h_pred - t);
    assert!((after.h.layers[0].bias.data()[0] - expect_hb).abs() < 1e-14);
    // Φ bias: dℓ/dz + λ(dh_term/dz − dg_term/dz) with the updated g
    for j in 0..2 {
        let dz = dlogit * ww.weight.get(j, 0) + lambda * (2.0 * (h_pred - t) * hw.weight.get(j, 0) - 2.0 * (g_new - t) * after.g.layers[0].weight.get(j, 0));
        let expect = b.phi.layers[0].bias.data()[j] - lr * dz;
        assert!((after.phi.layers[0].bias.data()[j] - expect).abs() < 1e-13, "{j}");
    }
}

#[test]
fn erm_fits_noiseless_separable_data() {
    let data = gen_logit(&LogitConfig {
        n: 400,
        p_v: 1.0,
        sigma: 0.05,
        d_s: 2,
        seed: 8,
        ..LogitConfig::default()
    })
    .unwrap();
    let b = bundle_for(&data, 1);
    let (m, _) = sgd_train(&data, &b, &PenaltySpec::new(Method::Erm, 0.0), None, &short(300, 0)).unwrap();
    assert_eq!(evaluate(&m, &data).unwrap().accuracy, 1.0);
}

#[test]
fn rex_single_env_is_erm() {
    let data = logit_data(120, 2);
    let b = bundle_for(&data, 3);
    let cfg = short(20, 0);
    let spec = PenaltySpec::new(Method::Rex, 50.0).with_split(1);
    let (r, _) = train(&data, &b, &spec, &cfg).unwrap();
    let (e, _) = train(&data, &b, &PenaltySpec::new(Method::Erm, 0.0), &cfg).unwrap();
    assert_eq!(r.phi, e.phi);
    assert_eq!(r.w, e.w);
}

#[test]
fn groupdro_moves_mass_to_harder_env() {
    // env 1 has flipped labels on half its rows, so its loss stays higher
    let mut data = logit_data(300, 5);
    for i in 0..data.len() {
        if data.t_scalar(i) >= 50.0 && i % 2 == 0 {
            data.y[i] = 1 - data.y[i];
        }
    }
    let b = bundle_for(&data, 6);
    let spec = PenaltySpec {
        eta_q: 0.5,
        ..PenaltySpec::new(Method::GroupDro, 0.0).with_split(2)
    };
    let (_, h) = train(&data, &b, &spec, &short(60, 0)).unwrap();
    let q = h.q.unwrap();
    assert!(q[1] > 0.6, "{q:?}");
}

#[test]
fn convex_probe_is_monotone() {
    let data = logit_data(200, 9);
    let spec = BundleSpec {
        phi: MlpSpec::linear(data.x.cols(), 3),
        ..BundleSpec::standard(data.x.cols(), 2, 1, &[], 3, 4)
    };
    // linear featurizer and head: a smooth loss, so small full-batch
    // gradient steps cannot increase it
    let b = ModelBundle::init(&spec, 1).unwrap();
    let cfg = TrainConfig {
        lr: 1e-3,
        optimizer: OptimizerKind::Sgd,
        ..short(100, 0)
    };
    let (_, h) = sgd_train(&data, &b, &PenaltySpec::new(Method::Erm, 0.0), None, &cfg).unwrap();
    for w in h.records.windows(2) {
        assert!(w[1].erm <= w[0].erm + 1e-12);
    }
}

#[test]
fn evaluate_constant_and_perfect_predictors() {
    let data = logit_data(100, 1);
    let mut b = bundle_for(&data, 1);
    b.w.params_mut().for_each(|p| p.data_mut().fill(0.0));
    let balanced = data.subset(&{
        let ones: Vec<usize> = (0..data.len()).filter(|&i| data.y[i] == 1).take(20).collect();
        let zeros: Vec<usize> = (0..data.len()).filter(|&i| data.y[i] == 0).take(20).collect();
        [ones, zeros].concat()
    });
    let m = evaluate(&b, &balanced).unwrap();
    assert_eq!(m.accuracy, 0.5);
    assert!((m.loss - std::f64::consts::LN_2).abs() < 1e-12);
    assert!(evaluate(&b, &data.subset(&[])).is_err());
}

#[test]
fn evaluate_matches_row_loop() {
    let data = logit_data(1000, 4);
    let b = bundle_for(&data, 9);
    let m = evaluate(&b, &data).unwrap();
    let mut correct = 0;
    for i in 0..data.len() {
        let row = Tensor::matrix(1, data.x.cols(), data.x.row(i).to_vec()).unwrap();
        let z = b.w.apply(&b.phi.apply(&row).unwrap()).unwrap().item();
        if usize::from(z > 0.0) == data.y[i] {
            correct += 1;
        }
    }
    assert_eq!(m.accuracy, correct as f64 / 1000.0);
}

#[test]
fn suboptimality_at_exact_saddle_is_zero() {
    // zero bundle; labels balanced and t centered within each class, so every
    // gradient vanishes exactly
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 40;
    let x: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let t: Vec<f64> = (0..n).map(|i| if (i / 2) % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let data = Dataset::new("saddle", Tensor::matrix(n, 3, x).unwrap(), y, Tensor::column(&t).unwrap(), 2, None, None).unwrap();
    let b = ModelBundle::zeros(&BundleSpec::standard(3, 2, 1, &[4], 3, 4)).unwrap();
    let (e1, e2) = estimate_suboptimality(&b, &data, 10.0, 1, &TrainConfig::default()).unwrap();
    assert!(e1 < 1e-6 && e2 < 1e-6, "{e1} {e2}");
    assert!(estimate_suboptimality(&b, &data, 10.0, 0, &TrainConfig::default()).is_err());
}

#[test]
fn suboptimality_fresh_bundle_has_room() {
    let data = logit_data(200, 2);
    let b = bundle_for(&data, 2);
    let cfg = TrainConfig { olr: 1e-2, ..TrainConfig::default() };
    let (_, e2) = estimate_suboptimality(&b, &data, 1.0, 2, &cfg).unwrap();
    assert!(e2 > 1.0, "{e2}");
}

#[test]
fn divergence_returns_last_finite_state() {
    let data = logit_data(50, 2);
    let b = bundle_for(&data, 2);
    let cfg = TrainConfig {
        lr: 1e200,
        olr: 1e200,
        optimizer: OptimizerKind::Sgd,
        ..short(10, 0)
    };
    match sgda_train(&data, &b, 1.0, &cfg) {
        Err(Error::Divergence { snapshot, .. }) => assert!(snapshot.all_finite()),
        other => panic!("expected divergence, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn history_jsonl_roundtrip() {
    let data = logit_data(60, 2);
    let b = bundle_for(&data, 2);
    let (_, h) = sgda_train(&data, &b, 5.0, &short(5, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("h.jsonl");
    h.write_jsonl(&p).unwrap();
    assert_eq!(RunHistory::read_jsonl(&p).unwrap(), h.records);
}
