//! Monte-Carlo check of when risk-variance penalties pick the spurious mask.
//!
//! Two candidate feature masks compete. The invariant mask has the same
//! expected risk `r_bar + delta` in every environment; the spurious mask has
//! per-environment expected risks drawn from `N(r_bar, sigma_r²)`. Each
//! sample's loss deviates from its environment's expectation by
//! `N(0, σ_Φ²)`, with `σ_Φ ~ Exp(lambda_exp)` drawn per mask and trial. The
//! empirical objective is
//!
//! ```text
//! L̂(Φ) = Σ_t R̂ᵗ + λ · Σ_t (R̂ᵗ − mean_t R̂ᵗ)²
//! ```
//!
//! and a trial fails when `L̂(invariant) > L̂(spurious)`.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prop1Config {
    /// Total sample count, split equally across environments.
    pub n: usize,
    pub envs: usize,
    /// Cross-environment standard deviation of the spurious mask's risk.
    pub sigma_r: f64,
    /// Rate of the exponential prior on each mask's per-sample noise scale.
    pub lambda_exp: f64,
    /// Expected-risk gap by which the invariant mask trails the spurious one.
    pub delta: f64,
    pub lambda_rex: f64,
    pub trials: usize,
    pub seed: u64,
    #[serde(default = "default_r_bar")]
    pub r_bar: f64,
    /// Use this noise scale for both masks instead of drawing them.
    #[serde(default)]
    pub shared_sigma: Option<f64>,
}

fn default_r_bar() -> f64 {
    1.0
}

impl Prop1Config {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n", self.n as f64),
            ("envs", self.envs as f64),
            ("lambda_exp", self.lambda_exp),
            ("lambda_rex", self.lambda_rex),
            ("trials", self.trials as f64),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::schema(field, format!("must be positive, got {v}")));
            }
        }
        for (field, v) in [("sigma_r", self.sigma_r), ("delta", self.delta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::schema(field, format!("must be non-negative, got {v}")));
            }
        }
        if let Some(s) = self.shared_sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::schema("shared_sigma", format!("must be non-negative, got {s}")));
            }
        }
        if self.n % self.envs != 0 {
            return Err(Error::validation(format!(
                "n = {} is not divisible by envs = {}",
                self.n, self.envs
            )));
        }
        Ok(())
    }

    pub fn per_env(&self) -> usize {
        self.n / self.envs
    }

    /// Smallest environment count at which the penalty is expected to be
    /// dominated by estimation noise often enough for a 1/4 failure rate:
    /// `sigma_r · √n / (delta · z)` with `z` the upper-quartile gap of two
    /// independent noise scales.
    pub fn failure_threshold(&self) -> Result<f64> {
        let z = g_inverse(0.75, self.lambda_exp)?;
        Ok(self.sigma_r * (self.n as f64).sqrt() / (self.delta * z))
    }
}

/// Inverse of `G(z) = 1 − ½·exp(−λz)` on `z > 0`, the distribution function
/// of the difference of two i.i.d. `Exp(λ)` variables restricted to the
/// positive half-line. Valid for `q ∈ (1/2, 1)`.
pub fn g_inverse(q: f64, lambda_exp: f64) -> Result<f64> {
    if !(lambda_exp > 0.0 && lambda_exp.is_finite()) {
        return Err(Error::Domain(format!("rate must be positive, got {lambda_exp}")));
    }
    if !(q > 0.5 && q < 1.0) {
        return Err(Error::Domain(format!(
            "G takes values in (1/2, 1) on z > 0; cannot invert at {q}"
        )));
    }
    Ok(-(2.0 * (1.0 - q)).ln() / lambda_exp)
}

/// Raw draws of one mask in one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskDraw {
    pub sigma: f64,
    /// Expected risk per environment.
    pub env_risk: Vec<f64>,
    /// Mean per-sample deviation per environment, so `R̂ᵗ = Rᵗ + noise[t]`.
    pub noise: Vec<f64>,
}

impl MaskDraw {
    pub fn empirical_risks(&self) -> Vec<f64> {
        self.env_risk.iter().zip(&self.noise).map(|(r, e)| r + e).collect()
    }

    /// `L̂` computed directly from the empirical risks.
    pub fn rex_loss(&self, lambda: f64) -> f64 {
        let emp = self.empirical_risks();
        let mean = emp.iter().sum::<f64>() / emp.len() as f64;
        let spread: f64 = emp.iter().map(|r| (r - mean).powi(2)).sum();
        emp.iter().sum::<f64>() + lambda * spread
    }

    pub fn expected_total(&self) -> f64 {
        self.env_risk.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialDraw {
    pub invariant: MaskDraw,
    pub spurious: MaskDraw,
}

/// Terms of `L̂ − Σ_t Rᵗ`. With `d_t = Rᵗ − R̂ᵗ`, `D = mean_t d_t` and
/// `c_t = Rᵗ − mean_t Rᵗ`:
///
/// ```text
/// a0 = λ Σ c_t²      a1 = Σ d_t        a2 = λ Σ d_t²     a3 = λ |T| D²
/// a4 = 2λ D Σ d_t    a5 = 2λ Σ d_t c_t a6 = 2λ D Σ c_t
/// L̂ − Σ Rᵗ = a0 − a1 + a2 + a3 − a4 − a5 + a6
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Terms {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub a5: f64,
    pub a6: f64,
}

impl Terms {
    pub fn total(&self) -> f64 {
        self.a0 - self.a1 + self.a2 + self.a3 - self.a4 - self.a5 + self.a6
    }
}

pub fn decompose_terms(draw: &MaskDraw, lambda: f64) -> Terms {
    let k = draw.env_risk.len() as f64;
    let r_mean = draw.expected_total() / k;
    let d: Vec<f64> = draw.noise.iter().map(|e| -e).collect();
    let dd = d.iter().sum::<f64>() / k;
    let c: Vec<f64> = draw.env_risk.iter().map(|r| r - r_mean).collect();
    let sum_d: f64 = d.iter().sum();
    Terms {
        a0: lambda * c.iter().map(|v| v * v).sum::<f64>(),
        a1: sum_d,
        a2: lambda * d.iter().map(|v| v * v).sum::<f64>(),
        a3: lambda * k * dd * dd,
        a4: 2.0 * lambda * dd * sum_d,
        a5: 2.0 * lambda * d.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>(),
        a6: 2.0 * lambda * dd * c.iter().sum::<f64>(),
    }
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn draw_mask(rng: &mut ChaCha8Rng, sigma: f64, env_risk: Vec<f64>, per_env: usize) -> MaskDraw {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let noise = env_risk
        .iter()
        .map(|_| {
            let s: f64 = (0..per_env).map(|_| unit.sample(rng)).sum();
            sigma * s / per_env as f64
        })
        .collect();
    MaskDraw { sigma, env_risk, noise }
}

/// Draws trial `trial` of `cfg`. The noise scales are drawn first, so runs
/// that differ only in `envs` share them trial by trial.
pub fn draw_trial(cfg: &Prop1Config, trial: usize) -> Result<TrialDraw> {
    cfg.validate()?;
    let mut rng = trial_rng(cfg.seed, trial);
    let exp = Exp::new(cfg.lambda_exp).map_err(|e| Error::Domain(e.to_string()))?;
    let (sv, ss) = match cfg.shared_sigma {
        Some(s) => (s, s),
        None => (exp.sample(&mut rng), exp.sample(&mut rng)),
    };
    let k = cfg.envs;
    let spread = Normal::new(0.0, 1.0).expect("unit normal");
    let spurious_risk: Vec<f64> = (0..k).map(|_| cfg.r_bar + cfg.sigma_r * spread.sample(&mut rng)).collect();
    let invariant_risk = vec![cfg.r_bar + cfg.delta; k];
    let invariant = draw_mask(&mut rng, sv, invariant_risk, cfg.per_env());
    let spurious = draw_mask(&mut rng, ss, spurious_risk, cfg.per_env());
    Ok(TrialDraw { invariant, spurious })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialLosses {
    pub invariant: f64,
    pub spurious: f64,
    pub sigma_invariant: f64,
    pub sigma_spurious: f64,
}

impl TrialLosses {
    pub fn failed(&self) -> bool {
        self.invariant > self.spurious
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RexChoiceReport {
    pub failures: usize,
    pub trials: usize,
    pub rate: f64,
    pub std_err: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub losses: Vec<TrialLosses>,
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

pub fn simulate_rex_choice(cfg: &Prop1Config) -> Result<RexChoiceReport> {
    cfg.validate()?;
    let mut losses = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let d = draw_trial(cfg, trial)?;
        losses.push(TrialLosses {
            invariant: d.invariant.rex_loss(cfg.lambda_rex),
            spurious: d.spurious.rex_loss(cfg.lambda_rex),
            sigma_invariant: d.invariant.sigma,
            sigma_spurious: d.spurious.sigma,
        });
    }
    let failures = losses.iter().filter(|l| l.failed()).count();
    let rate = failures as f64 / cfg.trials as f64;
    let (ci_low, ci_high) = wilson_interval(failures, cfg.trials, Z95);
    Ok(RexChoiceReport {
        failures,
        trials: cfg.trials,
        rate,
        std_err: (rate * (1.0 - rate) / cfg.trials as f64).sqrt(),
        ci_low,
        ci_high,
        losses,
    })
}

/// Mean of `Σ_t (R̂ᵗ − Rᵗ)²` for the invariant mask at each environment count,
/// with `n` held fixed. Each count reuses the same trial seeds.
pub fn estimation_error_scaling(cfg: &Prop1Config, env_counts: &[usize]) -> Result<Vec<(usize, f64)>> {
    env_counts
        .iter()
        .map(|&k| {
            let c = Prop1Config { envs: k, ..cfg.clone() };
            c.validate()?;
            let mut acc = 0.0;
            for trial in 0..c.trials {
                let d = draw_trial(&c, trial)?;
                acc += d.invariant.noise.iter().map(|e| e * e).sum::<f64>();
            }
            Ok((k, acc / c.trials as f64))
        })
        .collect()
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return Err(Error::validation("log-log fit needs at least two positive points"));
    }
    let m = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::validation("log-log fit needs distinct x values"));
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Serialize)]
struct CsvRow {
    n: usize,
    envs: usize,
    sigma_r: f64,
    lambda_exp: f64,
    delta: f64,
    lambda_rex: f64,
    trials: usize,
    seed: u64,
    failure_rate: f64,
    ci_low: f64,
    ci_high: f64,
}

/// Writes one CSV row per `(config, report)` pair.
pub fn write_csv(path: &Path, rows: &[(Prop1Config, RexChoiceReport)]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(file, rows)
}

pub fn write_csv_to<W: Write>(w: W, rows: &[(Prop1Config, RexChoiceReport)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (c, r) in rows {
        out.serialize(CsvRow {
            n: c.n,
            envs: c.envs,
            sigma_r: c.sigma_r,
            lambda_exp: c.lambda_exp,
            delta: c.delta,
            lambda_rex: c.lambda_rex,
            trials: c.trials,
            seed: c.seed,
            failure_rate: r.rate,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
        })?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Configuration sitting exactly at the failure threshold with one sample
/// per environment.
pub fn threshold_config(n: usize, trials: usize, seed: u64) -> Prop1Config {
    let delta = 0.01;
    let lambda_exp = 1.0;
    let z = std::f64::consts::LN_2 / lambda_exp;
    Prop1Config {
        n,
        envs: n,
        // makes failure_threshold() == n
        sigma_r: (n as f64).sqrt() * delta * z,
        lambda_exp,
        delta,
        lambda_rex: 1.0,
        trials,
        seed,
        r_bar: default_r_bar(),
        shared_sigma: None,
    }
}
