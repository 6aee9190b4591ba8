//! Training objectives: ERM, IRMv1, REx, GroupDRO and the CIL min-max losses,
//! plus exact oracles over finite joint tables.

mod tabular;

pub use tabular::{cil_penalty_oracle, conditional_mean_oracle, ConditionalMeans, TabularDist};

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::models::{forward_bundle, one_hot, BundleVars, ModelBundle};
use crate::ndmath::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Erm,
    Irmv1,
    Rex,
    GroupDro,
    Cil,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Irmv1 => "irmv1",
            Method::Rex => "rex",
            Method::GroupDro => "groupdro",
            Method::Cil => "cil",
        }
    }

    /// Whether the method needs discrete environments.
    pub fn uses_envs(self) -> bool {
        matches!(self, Method::Irmv1 | Method::Rex | Method::GroupDro)
    }
}

/// How the featurizer and classifier descend in CIL.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// Descend on `ℓ + λ·h_term`; `g` only acts through its own ascent step.
    /// Kept for comparison: on the logit benchmarks it trails ERM.
    #[serde(alias = "algorithm1")]
    HTermOnly,
    /// Descend on `ℓ + λ·(h_term − g_term)` with `g` frozen.
    #[default]
    FullObjective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySpec {
    pub method: Method,
    #[serde(default)]
    pub lambda: f64,
    /// Number of equal-width environments for env-based methods.
    #[serde(default)]
    pub split: Option<usize>,
    #[serde(default = "default_eta_q")]
    pub eta_q: f64,
}

fn default_eta_q() -> f64 {
    0.01
}

impl PenaltySpec {
    pub fn new(method: Method, lambda: f64) -> Self {
        Self {
            method,
            lambda,
            split: None,
            eta_q: default_eta_q(),
        }
    }

    pub fn with_split(mut self, m: usize) -> Self {
        self.split = Some(m);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::schema("method.lambda", "must be finite and >= 0"));
        }
        if !(self.eta_q > 0.0) {
            return Err(Error::schema("method.eta_q", "must be > 0"));
        }
        match (self.method.uses_envs(), self.split) {
            (true, None) => Err(Error::schema("method.split", format!("{} needs a split count", self.method.name()))),
            (true, Some(0)) => Err(Error::schema("method.split", "must be >= 1")),
            (false, Some(_)) => Err(Error::schema("method.split", format!("{} does not use environments", self.method.name()))),
            _ => Ok(()),
        }
    }
}

/// `Φ` then `w` on `x`.
pub fn predict_logits(tape: &mut Tape, bundle: &ModelBundle, vars: &BundleVars, x: &Tensor) -> Result<Var> {
    let input = tape.constant(x.clone());
    let z = bundle.phi.forward(tape, &vars.phi, input)?;
    bundle.w.forward(tape, &vars.w, z)
}

/// Mean cross-entropy: logistic for one logit column, softmax otherwise.
pub fn classification_loss(tape: &mut Tape, logits: Var, y: &[usize]) -> Result<Var> {
    if y.is_empty() {
        return Err(Error::validation("loss on empty batch"));
    }
    if tape.value(logits).cols() == 1 {
        let labels: Vec<f64> = y.iter().map(|&c| c as f64).collect();
        tape.bce_with_logits(logits, &labels)
    } else {
        tape.softmax_cross_entropy(logits, y)
    }
}

pub fn erm_loss(tape: &mut Tape, bundle: &ModelBundle, vars: &BundleVars, batch: &Dataset) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::validation("erm_loss on empty batch"));
    }
    let logits = predict_logits(tape, bundle, vars, &batch.x)?;
    classification_loss(tape, logits, &batch.y)
}

/// Result of an environment-based objective.
#[derive(Debug, Clone)]
pub struct EnvObjective {
    pub total: Var,
    /// Per-environment mean losses, nonempty environments only.
    pub risks: Vec<f64>,
    /// Unweighted penalty value.
    pub penalty: f64,
    /// Number of empty environments left out.
    pub skipped: usize,
}

struct EnvRisks {
    logits: Var,
    risks: Vec<Var>,
    members: Vec<Vec<usize>>,
    skipped: usize,
}

fn env_risks(
    tape: &mut Tape,
    bundle: &ModelBundle,
    vars: &BundleVars,
    batch: &Dataset,
    envs: &[Vec<usize>],
) -> Result<EnvRisks> {
    let members: Vec<Vec<usize>> = envs.iter().filter(|e| !e.is_empty()).cloned().collect();
    if members.is_empty() {
        return Err(Error::validation("every environment is empty"));
    }
    let logits = predict_logits(tape, bundle, vars, &batch.x)?;
    let mut risks = Vec::with_capacity(members.len());
    for idx in &members {
        let sub = tape.select_rows(logits, idx)?;
        let y: Vec<usize> = idx.iter().map(|&i| batch.y[i]).collect();
        risks.push(classification_loss(tape, sub, &y)?);
    }
    Ok(EnvRisks {
        logits,
        risks,
        members,
        skipped: envs.len() - envs.iter().filter(|e| !e.is_empty()).count(),
    })
}

fn sum_vars(tape: &mut Tape, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(acc)
}

/// `Σ_e R^e + λ·Var_e(R^e)` with the population variance over nonempty environments.
pub fn rex_loss(
    tape: &mut Tape,
    bundle: &ModelBundle,
    vars: &BundleVars,
    batch: &Dataset,
    envs: &[Vec<usize>],
    lambda: f64,
) -> Result<EnvObjective> {
    let er = env_risks(tape, bundle, vars, batch, envs)?;
    let k = er.risks.len() as f64;
    let total_risk = sum_vars(tape, &er.risks)?;
    let mean = tape.scale(total_risk, 1.0 / k);
    let sq: Vec<Var> = er
        .risks
        .iter()
        .map(|&r| {
            let d = tape.sub(r, mean)?;
            Ok(tape.square(d))
        })
        .collect::<Result<_>>()?;
    let sq_sum = sum_vars(tape, &sq)?;
    let variance = tape.scale(sq_sum, 1.0 / k);
    let weighted = tape.scale(variance, lambda);
    let total = tape.add(total_risk, weighted)?;
    Ok(EnvObjective {
        total,
        risks: er.risks.iter().map(|&r| tape.value(r).item()).collect(),
        penalty: tape.value(variance).item(),
        skipped: er.skipped,
    })
}

/// `Σ_e R^e + λ·Σ_e (∂R^e(s·logits)/∂s |_{s=1})²`.
///
/// The multiplier derivative has the closed form `mean((σ(z) − y)·z)` for a
/// single logit and `mean(Σ_k (p_k − y_k)·z_k)` for softmax, and is built from
/// tape primitives so it stays differentiable.
pub fn irmv1_loss(
    tape: &mut Tape,
    bundle: &ModelBundle,
    vars: &BundleVars,
    batch: &Dataset,
    envs: &[Vec<usize>],
    lambda: f64,
) -> Result<EnvObjective> {
    let er = env_risks(tape, bundle, vars, batch, envs)?;
    let binary = tape.value(er.logits).cols() == 1;
    let mut penalties = Vec::with_capacity(er.members.len());
    for idx in &er.members {
        let z = tape.select_rows(er.logits, idx)?;
        let y: Vec<usize> = idx.iter().map(|&i| batch.y[i]).collect();
        let (p, target) = if binary {
            let labels: Vec<f64> = y.iter().map(|&c| c as f64).collect();
            (tape.sigmoid(z), Tensor::column(&labels)?)
        } else {
            let k = tape.value(z).cols();
            (tape.softmax_rows(z)?, one_hot(&y, k))
        };
        let target = tape.constant(target);
        let resid = tape.sub(p, target)?;
        let prod = tape.mul(resid, z)?;
        let summed = tape.sum(prod);
        let grad = tape.scale(summed, 1.0 / idx.len() as f64);
        penalties.push(tape.square(grad));
    }
    let total_risk = sum_vars(tape, &er.risks)?;
    let penalty = sum_vars(tape, &penalties)?;
    let weighted = tape.scale(penalty, lambda);
    let total = tape.add(total_risk, weighted)?;
    Ok(EnvObjective {
        total,
        risks: er.risks.iter().map(|&r| tape.value(r).item()).collect(),
        penalty: tape.value(penalty).item(),
        skipped: er.skipped,
    })
}

/// Exponentiated-gradient step on the group weights, `q_e ∝ q_e·exp(η·R^e)`.
pub fn groupdro_update(q: &[f64], risks: &[f64], eta: f64) -> Result<Vec<f64>> {
    if q.len() != risks.len() {
        return Err(Error::Dimension {
            op: "groupdro_update",
            left: vec![q.len()],
            right: vec![risks.len()],
        });
    }
    if q.iter().any(|&v| !(v >= 0.0)) || (q.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::validation("group weights must be a probability vector"));
    }
    // shift by the max for stability; the normalization cancels it
    let top = risks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = q.iter().zip(risks).map(|(&w, &r)| w * (eta * (r - top)).exp()).collect();
    let z: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / z).collect())
}

/// Weighted risk `Σ_e q'_e·R^e` after updating `q`, which has one entry per
/// environment. Empty environments keep their mass and sit out the update;
/// the loss renormalizes over the nonempty ones.
pub fn groupdro_loss(
    tape: &mut Tape,
    bundle: &ModelBundle,
    vars: &BundleVars,
    batch: &Dataset,
    envs: &[Vec<usize>],
    q: &[f64],
    eta: f64,
) -> Result<(EnvObjective, Vec<f64>)> {
    if q.len() != envs.len() {
        return Err(Error::Dimension {
            op: "groupdro_loss",
            left: vec![q.len()],
            right: vec![envs.len()],
        });
    }
    let er = env_risks(tape, bundle, vars, batch, envs)?;
    let risks: Vec<f64> = er.risks.iter().map(|&r| tape.value(r).item()).collect();
    let live: Vec<usize> = (0..envs.len()).filter(|&e| !envs[e].is_empty()).collect();
    let live_mass: f64 = live.iter().map(|&e| q[e]).sum();
    let mut q_new = q.to_vec();
    if live_mass > 0.0 {
        let sub: Vec<f64> = live.iter().map(|&e| q[e] / live_mass).collect();
        for (&e, w) in live.iter().zip(groupdro_update(&sub, &risks, eta)?) {
            q_new[e] = w * live_mass;
        }
    }
    let norm: f64 = live.iter().map(|&e| q_new[e]).sum();
    let weighted: Vec<Var> = er
        .risks
        .iter()
        .zip(&live)
        .map(|(&r, &e)| {
            let w = if norm > 0.0 { q_new[e] / norm } else { 1.0 / live.len() as f64 };
            tape.scale(r, w)
        })
        .collect();
    let total = sum_vars(tape, &weighted)?;
    let worst = risks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((
        EnvObjective {
            total,
            risks,
            penalty: worst,
            skipped: er.skipped,
        },
        q_new,
    ))
}

/// Taped pieces of the CIL objective on one batch.
#[derive(Debug, Clone, Copy)]
pub struct CilLosses {
    pub erm: Var,
    /// `mean ‖h(Φ(x)) − t‖²`
    pub h_term: Var,
    /// `mean ‖g(Φ(x), y) − t‖²`
    pub g_term: Var,
    /// Descent loss for `(w, Φ)` under the chosen rule.
    pub main: Var,
    /// `h_term − g_term`, for diagnostics.
    pub penalty_gap: f64,
}

/// Builds the CIL losses. Whether `g` (or anything else) receives gradients is
/// decided by how `vars` were bound. With `lambda == 0` the descent loss is the
/// ERM node itself, so its gradients match plain ERM bit for bit.
pub fn cil_losses(
    tape: &mut Tape,
    bundle: &ModelBundle,
    vars: &BundleVars,
    batch: &Dataset,
    lambda: f64,
    rule: UpdateRule,
) -> Result<CilLosses> {
    if batch.is_empty() {
        return Err(Error::validation("cil_losses on empty batch"));
    }
    let out = forward_bundle(tape, bundle, vars, &batch.x, &batch.y)?;
    let erm = classification_loss(tape, out.logits, &batch.y)?;
    let t = tape.constant(batch.t.clone());
    let h_term = tape.mse_rows(out.t_h, t)?;
    let g_term = tape.mse_rows(out.t_g, t)?;
    let main = if lambda == 0.0 {
        erm
    } else {
        let pen = match rule {
            UpdateRule::HTermOnly => h_term,
            UpdateRule::FullObjective => tape.sub(h_term, g_term)?,
        };
        let weighted = tape.scale(pen, lambda);
        tape.add(erm, weighted)?
    };
    let penalty_gap = tape.value(h_term).item() - tape.value(g_term).item();
    Ok(CilLosses {
        erm,
        h_term,
        g_term,
        main,
        penalty_gap,
    })
}

#[cfg(test)]
mod tests;
