use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::models::{BundleSpec, Part, Trainable};
use crate::ndmath::check_gradients_multi;

fn toy_batch(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let t: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    Dataset::new(
        "toy",
        Tensor::matrix(n, 3, x).unwrap(),
        y,
        Tensor::column(&t).unwrap(),
        2,
        None,
        None,
    )
    .unwrap()
}

fn toy_bundle(seed: u64) -> ModelBundle {
    ModelBundle::init(&BundleSpec::standard(3, 2, 1, &[4], 3, 4), seed).unwrap()
}

fn scalar(tape: &mut Tape, v: f64) -> Var {
    tape.constant(Tensor::scalar(v))
}

#[test]
fn uninformative_logits_give_ln2() {
    let mut b = toy_bundle(0);
    b.w.params_mut().for_each(|p| p.data_mut().fill(0.0));
    let batch = toy_batch(10, 0);
    let mut tape = Tape::new();
    let vars = b.bind(&mut tape, Trainable::ALL);
    let l = erm_loss(&mut tape, &b, &vars, &batch).unwrap();
    assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn erm_matches_bce_of_forward_bundle() {
    let b = toy_bundle(3);
    let batch = toy_batch(8, 1);
    let mut tape = Tape::new();
    let vars = b.bind(&mut tape, Trainable::NONE);
    let l = erm_loss(&mut tape, &b, &vars, &batch).unwrap();
    let out = forward_bundle(&mut tape, &b, &vars, &batch.x, &batch.y).unwrap();
    let l2 = tape.bce_with_logits(out.logits, &batch.labels_f64()).unwrap();
    assert_eq!(tape.value(l).item(), tape.value(l2).item());
}

#[test]
fn empty_batch_rejected() {
    let b = toy_bundle(0);
    let batch = toy_batch(4, 0).subset(&[]);
    let mut tape = Tape::new();
    let vars = b.bind(&mut tape, Trainable::ALL);
    assert!(erm_loss(&mut tape, &b, &vars, &batch).is_err());
    assert!(cil_losses(&mut tape, &b, &vars, &batch, 1.0, UpdateRule::HTermOnly).is_err());
    let full = toy_batch(4, 0);
    assert!(rex_loss(&mut tape, &b, &vars, &full, &[vec![], vec![]], 1.0).is_err());
}

#[test]
fn rex_two_env_hand_value() {
    // variance of [0, 2] is 1 under the population convention
    let mut tape = Tape::new();
    let a = scalar(&mut tape, 0.0);
    let b = scalar(&mut tape, 2.0);
    let s = sum_vars(&mut tape, &[a, b]).unwrap();
    assert_eq!(tape.value(s).item(), 2.0);

    let bundle = toy_bundle(1);
    let batch = toy_batch(12, 2);
    let envs = vec![(0..6).collect::<Vec<_>>(), (6..12).collect()];
    let mut tape = Tape::new();
    let vars = bundle.bind(&mut tape, Trainable::ALL);
    let r = rex_loss(&mut tape, &bundle, &vars, &batch, &envs, 1.0).unwrap();
    let (r0, r1) = (r.risks[0], r.risks[1]);
    let var = ((r0 - r1) / 2.0).powi(2);
    assert!((r.penalty - var).abs() < 1e-14);
    assert!((tape.value(r.total).item() - (r0 + r1 + var)).abs() < 1e-14);
}

#[test]
fn rex_identical_envs_and_single_env() {
    let bundle = toy_bundle(1);
    let batch = toy_batch(6, 2);
    // the same rows in both envs
    let envs = vec![vec![0, 1, 2], vec![0, 1, 2], vec![]];
    let mut tape = Tape::new();
    let vars = bundle.bind(&mut tape, Trainable::ALL);
    let r = rex_loss(&mut tape, &bundle, &vars, &batch, &envs, 5.0).unwrap();
    assert_eq!(r.penalty, 0.0);
    assert_eq!(r.skipped, 1);
    assert!((tape.value(r.total).item() - 2.0 * r.risks[0]).abs() < 1e-15);

    let one = vec![(0..6).collect::<Vec<_>>()];
    let r1 = rex_loss(&mut tape, &bundle, &vars, &batch, &one, 5.0).unwrap();
    let e = erm_loss(&mut tape, &bundle, &vars, &batch).unwrap();
    assert_eq!(tape.value(r1.total).item(), tape.value(e).item());
}

#[test]
fn irm_penalty_matches_closed_form_and_grows_with_lambda() {
    let bundle = toy_bundle(4);
    let batch = toy_batch(10, 5);
    let envs = vec![(0..5).collect::<Vec<_>>(), (5..10).collect()];
    let logits = bundle.w.apply(&bundle.phi.apply(&batch.x).unwrap()).unwrap();
    let mut expect = 0.0;
    for idx in &envs {
        let g: f64 = idx
            .iter()
            .map(|&i| {
                let z = logits.data()[i];
                (crate::ndmath::sigmoid(z) - batch.y[i] as f64) * z
            })
            .sum::<f64>()
            / idx.len() as f64;
        expect += g * g;
    }
    let mut tape = Tape::new();
    let vars = bundle.bind(&mut tape, Trainable::ALL);
    let lo = irmv1_loss(&mut tape, &bundle, &vars, &batch, &envs, 1.0).unwrap();
    let hi = irmv1_loss(&mut tape, &bundle, &vars, &batch, &envs, 100.0).unwrap();
    assert!((lo.penalty - expect).abs() < 1e-14);
    assert!(tape.value(hi.total).item() > tape.value(lo.total).item());
}

#[test]
fn irm_penalty_zero_at_zero_logits() {
    let mut bundle = toy_bundle(4);
    bundle.w.params_mut().for_each(|p| p.data_mut().fill(0.0));
    let batch = toy_batch(10, 5);
    let mut tape = Tape::new();
    let vars = bundle.bind(&mut tape, Trainable::ALL);
    let r = irmv1_loss(&mut tape, &bundle, &vars, &batch, &[(0..10).collect()], 3.0).unwrap();
    assert_eq!(r.penalty, 0.0);
}

#[test]
fn groupdro_hand_values() {
    let q = groupdro_update(&[0.5, 0.5], &[1.0, 3.0], 1.0).unwrap();
    assert!((q[0] - 0.119_202_922_022_117_57).abs() < 1e-12);
    assert!((q[1] - 0.880_797_077_977_882_4).abs() < 1e-12);
    assert_eq!(groupdro_update(&[0.3, 0.7], &[2.0, 2.0], 1.0).unwrap(), vec![0.3, 0.7]);
    assert_eq!(groupdro_update(&[0.3, 0.7], &[1.0, 5.0], 0.0).unwrap(), vec![0.3, 0.7]);
    assert!(groupdro_update(&[0.3, 0.3], &[1.0, 5.0], 1.0).is_err());
}

#[test]
fn groupdro_empty_env_keeps_mass() {
    let bundle = toy_bundle(1);
    let batch = toy_batch(6, 2);
    let envs = vec![vec![0, 1, 2], vec![], vec![3, 4, 5]];
    let mut tape = Tape::new();
    let vars = bundle.bind(&mut tape, Trainable::ALL);
    let (obj, q) = groupdro_loss(&mut tape, &bundle, &vars, &batch, &envs, &[0.25, 0.5, 0.25], 0.5).unwrap();
    assert_eq!(q[1], 0.5);
    assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let w0 = q[0] / (q[0] + q[2]);
    let expect = w0 * obj.risks[0] + (1.0 - w0) * obj.risks[1];
    assert!((tape.value(obj.total).item() - expect).abs() < 1e-14);
}

#[test]
fn cil_lambda_zero_is_erm_node() {
    let bundle = toy_bundle(2);
    let batch = toy_batch(7, 3);
    let mut tape = Tape::new();
    let vars = bundle.bind(&mut tape, Trainable::ALL);
    let c = cil_losses(&mut tape, &bundle, &vars, &batch, 0.0, UpdateRule::FullObjective).unwrap();
    assert_eq!(c.main, c.erm);
}

#[test]
fn cil_gap_zero_when_g_ignores_label() {
    let mut bundle = toy_bundle(2);
    // make g(z, y) = h(z): copy h's weights into g and zero the label rows
    let feat = bundle.phi.spec.output();
    let hw = bundle.h.layers[0].weight.clone();
    let gw = &mut bundle.g.layers[0].weight;
    let cols = gw.cols();
    gw.data_mut().fill(0.0);
    gw.data_mut()[..feat * cols].copy_from_slice(hw.data());
    bundle.g.layers[0].bias = bundle.h.layers[0].bias.clone();
    bundle.g.layers[1] = bundle.h.layers[1].clone();
    let batch = toy_batch(9, 4);
    let mut tape = Tape::new();
    let vars = bundle.bind(&mut tape, Trainable::ALL);
    let c = cil_losses(&mut tape, &bundle, &vars, &batch, 10.0, UpdateRule::FullObjective).unwrap();
    assert_eq!(c.penalty_gap, 0.0);
    let c1 = cil_losses(&mut tape, &bundle, &vars, &batch, 10.0, UpdateRule::HTermOnly).unwrap();
    let expect = tape.value(c1.erm).item() + 10.0 * tape.value(c1.h_term).item();
    assert!((tape.value(c1.main).item() - expect).abs() < 1e-12);
}

#[test]
fn penalty_spec_validation() {
    assert!(PenaltySpec::new(Method::Rex, 1.0).validate().is_err());
    assert!(PenaltySpec::new(Method::Rex, 1.0).with_split(4).validate().is_ok());
    assert!(PenaltySpec::new(Method::Cil, 1.0).with_split(4).validate().is_err());
    assert!(PenaltySpec::new(Method::Erm, -1.0).validate().is_err());
    let parsed: PenaltySpec = serde_json::from_str(r#"{"method":"groupdro","split":3}"#).unwrap();
    assert_eq!(parsed.eta_q, 0.01);
    assert!(serde_json::from_str::<PenaltySpec>(r#"{"method":"vrex"}"#).is_err());
}

/// Max relative error between taped and central-difference gradients of an
/// objective with respect to every bundle parameter.
/// Parameters (biases included) are redrawn uniformly so no ReLU sits at a kink.
fn grad_error(bundle: &ModelBundle, objective: impl Fn(&mut Tape, &BundleVars) -> Result<Var>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(bundle.param_count() as u64);
    let points: Vec<Tensor> = bundle
        .flat_params()
        .iter()
        .map(|p| {
            let data = (0..p.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Tensor::new(p.shape().to_vec(), data).unwrap()
        })
        .collect();
    check_gradients_multi(
        |tape, leaves| {
            let vars = BundleVars::from_flat(bundle, leaves)?;
            objective(tape, &vars)
        },
        &points,
        1e-6,
    )
    .unwrap()
}

#[test]
fn objective_gradients_match_finite_differences() {
    let batch = toy_batch(12, 9);
    let envs = vec![(0..4).collect::<Vec<_>>(), (4..9).collect(), (9..12).collect()];
    for seed in 0..3 {
        let b = toy_bundle(seed);
        let errs = [
            grad_error(&b, |t, v| erm_loss(t, &b, v, &batch)),
            grad_error(&b, |t, v| Ok(rex_loss(t, &b, v, &batch, &envs, 2.0)?.total)),
            grad_error(&b, |t, v| Ok(irmv1_loss(t, &b, v, &batch, &envs, 2.0)?.total)),
            // the weights are held fixed within a step, so check with η = 0
            grad_error(&b, |t, v| Ok(groupdro_loss(t, &b, v, &batch, &envs, &[0.2, 0.3, 0.5], 0.0)?.0.total)),
            grad_error(&b, |t, v| Ok(cil_losses(t, &b, v, &batch, 3.0, UpdateRule::FullObjective)?.main)),
        ];
        for (k, e) in errs.iter().enumerate() {
            assert!(*e < 1e-4, "objective {k} seed {seed}: {e}");
        }
    }
}

#[test]
fn softmax_irm_gradient() {
    let spec = BundleSpec::standard(3, 3, 1, &[4], 3, 4);
    let b = ModelBundle::init(&spec, 7).unwrap();
    let mut batch = toy_batch(9, 1);
    batch.y = (0..9).map(|i| i % 3).collect();
    batch.meta.classes = 3;
    let envs = vec![(0..5).collect::<Vec<_>>(), (5..9).collect()];
    let e = grad_error(&b, |t, v| Ok(irmv1_loss(t, &b, v, &batch, &envs, 2.0)?.total));
    assert!(e < 1e-4, "{e}");
    assert!(b.part(Part::W).spec.output() == 3);
}

proptest! {
    #[test]
    fn penalty_nonnegative(seed in any::<u64>(), nz in 1usize..5, ny in 1usize..4, nt in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = TabularDist::random(&mut rng, nz, ny, nt).unwrap();
        prop_assert!(cil_penalty_oracle(&d) >= -1e-12);
    }

    #[test]
    fn penalty_vanishes_under_conditional_independence(seed in any::<u64>(), nz in 1usize..5, ny in 1usize..4, nt in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = TabularDist::random_conditionally_independent(&mut rng, nz, ny, nt).unwrap();
        prop_assert!(cil_penalty_oracle(&d).abs() < 1e-10);
    }

    #[test]
    fn oracle_beats_perturbed_predictors(seed in any::<u64>(), cell in 0usize..6, delta in -1.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = TabularDist::random(&mut rng, 3, 2, 4).unwrap();
        let (h, g) = conditional_mean_oracle(&d).filled();
        let mut g2 = g.clone();
        g2[cell] += delta;
        let mut h2 = h.clone();
        h2[cell % 3] += delta;
        prop_assert!(d.g_loss(&g) <= d.g_loss(&g2) + 1e-15);
        prop_assert!(d.h_loss(&h) <= d.h_loss(&h2) + 1e-15);
    }
}

