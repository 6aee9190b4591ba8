//! Optimization loops: gradient descent-ascent for CIL and plain descent for
//! the baselines, with penalty warmup, evaluation and saddle diagnostics.

mod history;
mod optim;

pub use history::{RunHistory, StepRecord};
pub use optim::{Optimizer, OptimizerKind};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::models::{one_hot, BundleVars, ModelBundle, Part, Trainable};
use crate::ndmath::{Gradients, Tape, Tensor, Var};
use crate::objectives::{
    cil_losses, classification_loss, erm_loss, groupdro_loss, irmv1_loss, predict_logits, rex_loss, Method,
    PenaltySpec, UpdateRule,
};
use crate::splitter::{equal_split, EnvAssignment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Rate for the featurizer and classifier.
    pub lr: f64,
    /// Rate for the domain regressors `h` and `g`.
    pub olr: f64,
    pub steps: usize,
    /// Steps run with the penalty switched off.
    pub penalty_step: usize,
    /// Rows per step; 0 means the full dataset.
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub update_rule: UpdateRule,
    /// Seeds batch order.
    pub seed: u64,
    /// Restarts used for the suboptimality estimate; 0 skips it.
    pub probes: usize,
    /// Regress `h` and `g` onto the z-scored domain index instead of raw `t`.
    pub standardize_t: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            olr: 1e-3,
            steps: 1500,
            penalty_step: 500,
            batch_size: 0,
            optimizer: OptimizerKind::Adam,
            update_rule: UpdateRule::default(),
            seed: 0,
            probes: 0,
            standardize_t: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::schema("train.lr", "must be > 0"));
        }
        if !(self.olr > 0.0) || !self.olr.is_finite() {
            return Err(Error::schema("train.olr", "must be > 0"));
        }
        if self.penalty_step > self.steps {
            return Err(Error::schema("train.penalty_step", "must not exceed steps"));
        }
        Ok(())
    }
}

/// Yields index batches: the whole dataset, or reshuffled minibatches.
struct Sampler {
    n: usize,
    size: usize,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Sampler {
    fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        let size = if batch_size == 0 || batch_size >= n { n } else { batch_size };
        Self {
            n,
            size,
            order: (0..n).collect(),
            pos: n,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn full(&self) -> bool {
        self.size == self.n
    }

    fn next(&mut self) -> Vec<usize> {
        if self.pos + self.size > self.n {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + self.size].to_vec();
        self.pos += self.size;
        out
    }
}

enum Batch<'a> {
    Full(&'a Dataset),
    Sub(Dataset, Vec<usize>),
}

impl Batch<'_> {
    fn data(&self) -> &Dataset {
        match self {
            Batch::Full(d) => d,
            Batch::Sub(d, _) => d,
        }
    }
}

fn draw<'a>(sampler: &mut Sampler, data: &'a Dataset) -> Batch<'a> {
    if sampler.full() {
        Batch::Full(data)
    } else {
        let idx = sampler.next();
        Batch::Sub(data.subset(&idx), idx)
    }
}

fn part_grads(bundle: &ModelBundle, vars: &BundleVars, grads: &Gradients, part: Part) -> Vec<Tensor> {
    vars.part(part).grads(grads, bundle.part(part))
}

fn sq_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum()
}

fn diverged(step: usize, what: &str, last_good: &ModelBundle) -> Error {
    Error::Divergence {
        step,
        message: format!("{what} became non-finite"),
        snapshot: Box::new(last_good.clone()),
    }
}

struct PartOptimizers {
    phi: Optimizer,
    w: Optimizer,
    h: Optimizer,
    g: Optimizer,
}

impl PartOptimizers {
    fn new(cfg: &TrainConfig) -> Self {
        Self {
            phi: Optimizer::new(cfg.optimizer, cfg.lr),
            w: Optimizer::new(cfg.optimizer, cfg.lr),
            h: Optimizer::new(cfg.optimizer, cfg.olr),
            g: Optimizer::new(cfg.optimizer, cfg.olr),
        }
    }

    fn step(&mut self, bundle: &mut ModelBundle, part: Part, grads: &[Tensor]) {
        let opt = match part {
            Part::Phi => &mut self.phi,
            Part::W => &mut self.w,
            Part::H => &mut self.h,
            Part::G => &mut self.g,
        };
        opt.step(bundle.part_mut(part).params_mut(), grads);
    }
}

/// `mean ‖g(Φ(x), y) − t‖²` with only `g` differentiable.
fn g_objective(tape: &mut Tape, bundle: &ModelBundle, vars: &BundleVars, batch: &Dataset) -> Result<Var> {
    let input = tape.constant(batch.x.clone());
    let z = bundle.phi.forward(tape, &vars.phi, input)?;
    let onehot = tape.constant(one_hot(&batch.y, bundle.classes));
    let zy = tape.concat_cols(z, onehot)?;
    let t_g = bundle.g.forward(tape, &vars.g, zy)?;
    let t = tape.constant(batch.t.clone());
    tape.mse_rows(t_g, t)
}

/// Gradient descent-ascent for CIL.
///
/// Each step first moves `g` to reduce its regression loss (the ascent half of
/// the min-max, since `g` enters the objective with a minus sign), then moves
/// `(w, Φ)` on the update-rule loss and `h` on its own regression loss. Before
/// `penalty_step` the descent loss is exactly the classification loss.
pub fn sgda_train(
    data: &Dataset,
    bundle: &ModelBundle,
    lambda: f64,
    cfg: &TrainConfig,
) -> Result<(ModelBundle, RunHistory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    let start = Instant::now();
    let scaled;
    let data = if cfg.standardize_t {
        scaled = standardized_t(data);
        &scaled
    } else {
        data
    };
    let mut model = bundle.clone();
    let mut opts = PartOptimizers::new(cfg);
    let mut sampler = Sampler::new(data.len(), cfg.batch_size, cfg.seed);
    let mut records = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let lam = if step < cfg.penalty_step { 0.0 } else { lambda };
        let batch = draw(&mut sampler, data);
        let batch = batch.data();
        let last_good = model.clone();

        // ascent: g fits E[t | Φ(x), y]
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, Trainable { g: true, ..Trainable::NONE });
        let g_term = g_objective(&mut tape, &model, &vars, batch)?;
        let g_loss = tape.value(g_term).item();
        if !g_loss.is_finite() {
            return Err(diverged(step, "g loss", &last_good));
        }
        let grads = tape.backward(g_term)?;
        let g_grads = part_grads(&model, &vars, &grads, Part::G);
        opts.step(&mut model, Part::G, &g_grads);

        // descent
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, Trainable { g: false, ..Trainable::ALL });
        let c = cil_losses(&mut tape, &model, &vars, batch, lam, cfg.update_rule)?;
        let erm = tape.value(c.erm).item();
        let h_loss = tape.value(c.h_term).item();
        let main = tape.value(c.main).item();
        if !(erm.is_finite() && h_loss.is_finite() && main.is_finite()) {
            return Err(diverged(step, "descent loss", &last_good));
        }
        let grads = tape.backward(c.main)?;
        let phi_grads = part_grads(&model, &vars, &grads, Part::Phi);
        let w_grads = part_grads(&model, &vars, &grads, Part::W);
        // h follows its own regression loss. Once the penalty is on, the main
        // loss already carries λ·∇h_term, which saves a second sweep.
        let h_grads = if lam != 0.0 {
            let inv = 1.0 / lam;
            part_grads(&model, &vars, &grads, Part::H)
                .into_iter()
                .map(|g| g.map(|v| v * inv))
                .collect()
        } else {
            part_grads(&model, &vars, &tape.backward(c.h_term)?, Part::H)
        };
        opts.step(&mut model, Part::Phi, &phi_grads);
        opts.step(&mut model, Part::W, &w_grads);
        opts.step(&mut model, Part::H, &h_grads);
        if !model.all_finite() {
            return Err(diverged(step, "parameters", &last_good));
        }

        records.push(StepRecord {
            step,
            erm,
            penalty: h_loss - g_loss,
            h_loss: Some(h_loss),
            g_loss: Some(g_loss),
            grad_norm: (sq_norm(&phi_grads) + sq_norm(&w_grads)).sqrt(),
            penalty_grad_norm: Some((sq_norm(&h_grads) + sq_norm(&g_grads)).sqrt()),
        });
    }

    let (eps1, eps2) = if cfg.probes > 0 {
        let (a, b) = estimate_suboptimality(&model, data, lambda, cfg.probes, cfg)?;
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    Ok((
        model,
        RunHistory {
            records,
            eps1,
            eps2,
            q: None,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Copy of `data` with each domain column shifted and scaled to zero mean and
/// unit variance (constant columns are only centered).
pub fn standardized_t(data: &Dataset) -> Dataset {
    let mut out = data.clone();
    let (n, k) = (data.t.rows(), data.t.cols());
    for j in 0..k {
        let mean = (0..n).map(|i| data.t.get(i, j)).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (data.t.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        let col = out.t.data_mut();
        for i in 0..n {
            col[i * k + j] = (col[i * k + j] - mean) / sd;
        }
    }
    out
}

/// Environment ids grouped by position within the batch.
fn batch_groups(envs: &EnvAssignment, rows: Option<&[usize]>) -> Vec<Vec<usize>> {
    match rows {
        None => envs.groups(),
        Some(rows) => {
            let mut out = vec![Vec::new(); envs.m];
            for (pos, &i) in rows.iter().enumerate() {
                out[envs.env[i]].push(pos);
            }
            out
        }
    }
}

/// Descent on ERM or one of the environment-based objectives.
///
/// `envs` is required for IRMv1, REx and GroupDRO and indexes rows of `data`.
/// Before `penalty_step` the penalty weight is zero and GroupDRO's weights
/// stay frozen.
pub fn sgd_train(
    data: &Dataset,
    bundle: &ModelBundle,
    spec: &PenaltySpec,
    envs: Option<&EnvAssignment>,
    cfg: &TrainConfig,
) -> Result<(ModelBundle, RunHistory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    if spec.method == Method::Cil {
        return Err(Error::validation("CIL trains with sgda_train"));
    }
    let envs = match (spec.method.uses_envs(), envs) {
        (true, Some(e)) if e.env.len() == data.len() => Some(e),
        (true, Some(_)) => return Err(Error::validation("environment assignment does not match the dataset")),
        (true, None) => return Err(Error::validation(format!("{} needs environments", spec.method.name()))),
        (false, _) => None,
    };
    let start = Instant::now();
    let mut model = bundle.clone();
    let mut opts = PartOptimizers::new(cfg);
    let mut sampler = Sampler::new(data.len(), cfg.batch_size, cfg.seed);
    let mut records = Vec::with_capacity(cfg.steps);
    let mut q = envs.map(|e| vec![1.0 / e.m as f64; e.m]);
    let full_groups = envs.map(|e| batch_groups(e, None));

    for step in 0..cfg.steps {
        let active = step >= cfg.penalty_step;
        let lam = if active { spec.lambda } else { 0.0 };
        let batch = draw(&mut sampler, data);
        let groups = match (&batch, envs) {
            (_, None) => None,
            (Batch::Full(_), Some(_)) => full_groups.clone(),
            (Batch::Sub(_, rows), Some(e)) => Some(batch_groups(e, Some(rows))),
        };
        let batch = batch.data();
        let last_good = model.clone();

        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, Trainable { phi: true, w: true, ..Trainable::NONE });
        let (root, erm, penalty) = match spec.method {
            Method::Erm => {
                let l = erm_loss(&mut tape, &model, &vars, batch)?;
                (l, tape.value(l).item(), 0.0)
            }
            Method::Rex | Method::Irmv1 => {
                let groups = groups.as_deref().expect("checked above");
                let obj = if spec.method == Method::Rex {
                    rex_loss(&mut tape, &model, &vars, batch, groups, lam)?
                } else {
                    irmv1_loss(&mut tape, &model, &vars, batch, groups, lam)?
                };
                (obj.total, mean_risk(&obj.risks, groups), obj.penalty)
            }
            Method::GroupDro => {
                let groups = groups.as_deref().expect("checked above");
                let eta = if active { spec.eta_q } else { 0.0 };
                let weights = q.as_deref().expect("checked above");
                let (obj, q_new) = groupdro_loss(&mut tape, &model, &vars, batch, groups, weights, eta)?;
                q = Some(q_new);
                (obj.total, mean_risk(&obj.risks, groups), obj.penalty)
            }
            Method::Cil => unreachable!(),
        };
        let total = tape.value(root).item();
        if !(total.is_finite() && erm.is_finite() && penalty.is_finite()) {
            return Err(diverged(step, "loss", &last_good));
        }
        let grads = tape.backward(root)?;
        let phi_grads = part_grads(&model, &vars, &grads, Part::Phi);
        let w_grads = part_grads(&model, &vars, &grads, Part::W);
        opts.step(&mut model, Part::Phi, &phi_grads);
        opts.step(&mut model, Part::W, &w_grads);
        if !model.all_finite() {
            return Err(diverged(step, "parameters", &last_good));
        }
        records.push(StepRecord {
            step,
            erm,
            penalty,
            h_loss: None,
            g_loss: None,
            grad_norm: (sq_norm(&phi_grads) + sq_norm(&w_grads)).sqrt(),
            penalty_grad_norm: None,
        });
    }
    Ok((
        model,
        RunHistory {
            records,
            eps1: None,
            eps2: None,
            q,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Sample-weighted mean of per-environment risks, i.e. the pooled ERM loss.
fn mean_risk(risks: &[f64], groups: &[Vec<usize>]) -> f64 {
    let sizes: Vec<usize> = groups.iter().map(Vec::len).filter(|&n| n > 0).collect();
    let n: usize = sizes.iter().sum();
    risks.iter().zip(&sizes).map(|(r, &s)| r * s as f64).sum::<f64>() / n as f64
}

/// Trains with whichever loop the method needs, splitting environments with
/// equal-width bins when the method uses them.
pub fn train(
    data: &Dataset,
    bundle: &ModelBundle,
    spec: &PenaltySpec,
    cfg: &TrainConfig,
) -> Result<(ModelBundle, RunHistory)> {
    spec.validate()?;
    match spec.method {
        Method::Cil => sgda_train(data, bundle, spec.lambda, cfg),
        m if m.uses_envs() => {
            let envs = equal_split(data, spec.split.expect("validated"))?;
            sgd_train(data, bundle, spec, Some(&envs), cfg)
        }
        _ => sgd_train(data, bundle, spec, None, cfg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub loss: f64,
}

/// Predicted class per row; ties go to the lower class index.
pub fn predict(bundle: &ModelBundle, x: &Tensor) -> Result<Vec<usize>> {
    let logits = bundle.w.apply(&bundle.phi.apply(x)?)?;
    let k = logits.cols();
    Ok((0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            if k == 1 {
                usize::from(row[0] > 0.0)
            } else {
                let mut best = 0;
                for j in 1..k {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            }
        })
        .collect())
}

pub fn evaluate(bundle: &ModelBundle, data: &Dataset) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::validation("evaluation set is empty"));
    }
    let pred = predict(bundle, &data.x)?;
    let correct = pred.iter().zip(&data.y).filter(|(p, y)| p == y).count();
    let mut tape = Tape::new();
    let vars = bundle.bind(&mut tape, Trainable::NONE);
    let logits = predict_logits(&mut tape, bundle, &vars, &data.x)?;
    let loss = classification_loss(&mut tape, logits, &data.y)?;
    Ok(Metrics {
        accuracy: correct as f64 / data.len() as f64,
        loss: tape.value(loss).item(),
    })
}

const PROBE_STEPS: usize = 50;

/// Full CIL objective `ℓ + λ(h_term − g_term)` on `data`.
fn cil_value(bundle: &ModelBundle, data: &Dataset, lambda: f64) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let vars = bundle.bind(&mut tape, Trainable::NONE);
    let c = cil_losses(&mut tape, bundle, &vars, data, lambda, UpdateRule::FullObjective)?;
    Ok((tape.value(c.main).item(), tape.value(c.g_term).item()))
}

/// Estimates how far `bundle` is from a saddle point of the CIL objective.
///
/// `ε2` is the largest decrease of `g`'s regression loss found by `probes`
/// short optimization restarts on `g` alone; `ε1` is the largest decrease of
/// the full objective found by restarts on `(Φ, w, h)` with `g` frozen. Restart
/// `k > 0` starts from a small seeded perturbation. Both are clamped at zero.
pub fn estimate_suboptimality(
    bundle: &ModelBundle,
    data: &Dataset,
    lambda: f64,
    probes: usize,
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    if probes == 0 {
        return Err(Error::validation("probes must be at least 1"));
    }
    let (q0, g0) = cil_value(bundle, data, lambda)?;
    let mut eps1 = 0.0_f64;
    let mut eps2 = 0.0_f64;
    for k in 0..probes {
        let start = perturbed(bundle, k, cfg.seed);

        let mut model = start.clone();
        let mut opt = Optimizer::new(cfg.optimizer, cfg.olr);
        for _ in 0..PROBE_STEPS {
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, Trainable { g: true, ..Trainable::NONE });
            let root = g_objective(&mut tape, &model, &vars, data)?;
            let grads = part_grads(&model, &vars, &tape.backward(root)?, Part::G);
            opt.step(model.g.params_mut(), &grads);
        }
        let g1 = cil_value(&model, data, lambda)?.1;
        if g1.is_finite() {
            eps2 = eps2.max(g0 - g1);
        }

        let mut model = start;
        let mut opts = PartOptimizers::new(cfg);
        for _ in 0..PROBE_STEPS {
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, Trainable { g: false, ..Trainable::ALL });
            let c = cil_losses(&mut tape, &model, &vars, data, lambda, UpdateRule::FullObjective)?;
            let grads = tape.backward(c.main)?;
            for part in [Part::Phi, Part::W, Part::H] {
                let g = part_grads(&model, &vars, &grads, part);
                opts.step(&mut model, part, &g);
            }
        }
        let q1 = cil_value(&model, data, lambda)?.0;
        if q1.is_finite() {
            eps1 = eps1.max(q0 - q1);
        }
    }
    Ok((eps1.max(0.0), eps2.max(0.0)))
}

fn perturbed(bundle: &ModelBundle, k: usize, seed: u64) -> ModelBundle {
    use rand::Rng;
    let mut out = bundle.clone();
    if k == 0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    for part in Part::ALL {
        for p in out.part_mut(part).params_mut() {
            for v in p.data_mut() {
                *v += rng.gen_range(-1e-3..1e-3);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests;
