//! Synthetic binary task with a stable invariant block and a spurious block
//! whose agreement with the label drifts along the domain index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, Schedule};
use crate::error::{Error, Result};
use crate::ndmath::Tensor;

/// Whether the spurious coordinates share one agreement draw per sample or
/// draw independently per coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpuriousFlip {
    #[default]
    PerDim,
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogitConfig {
    pub n: usize,
    /// Probability that the invariant block agrees with the label.
    pub p_v: f64,
    pub schedule: Schedule,
    pub sigma: f64,
    /// Width of the invariant block.
    pub d_v: usize,
    /// Width of the spurious block.
    pub d_s: usize,
    pub t_range: [f64; 2],
    pub spurious_flip: SpuriousFlip,
    pub seed: u64,
}

impl Default for LogitConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            p_v: 0.9,
            schedule: Schedule::default_linear(),
            sigma: 1.0,
            d_v: 2,
            d_s: 20,
            t_range: [0.0, 100.0],
            spurious_flip: SpuriousFlip::PerDim,
            seed: 0,
        }
    }
}

impl LogitConfig {
    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::validation("logit: n must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.p_v) {
            return Err(Error::validation(format!("logit: p_v = {} is not a probability", self.p_v)));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::validation(format!("logit: sigma = {} must be > 0", self.sigma)));
        }
        if !(self.t_range[0] <= self.t_range[1]) {
            return Err(Error::validation("logit: t_range must be ordered"));
        }
        Ok(())
    }
}

/// Draws the dataset. Per sample: `t ~ U(t_range)`, `y ~ Bernoulli(0.5)`,
/// signed label `s = 2y - 1`; the invariant block is `N(+s, σ²)` with
/// probability `p_v` and `N(-s, σ²)` otherwise; each spurious coordinate is
/// `N(+s, σ²)` with probability `p_s(t)` and `N(-s, σ²)` otherwise.
/// Features are laid out as `[x_v, x_s]`.
pub fn gen_logit(cfg: &LogitConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.sigma).map_err(|e| Error::validation(e.to_string()))?;
    let d = cfg.d_v + cfg.d_s;
    let mut x = Vec::with_capacity(cfg.n * d);
    let mut y = Vec::with_capacity(cfg.n);
    let mut t = Vec::with_capacity(cfg.n);
    let [lo, hi] = cfg.t_range;
    for _ in 0..cfg.n {
        let ti = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let label = usize::from(rng.gen_bool(0.5));
        let s = if label == 1 { 1.0 } else { -1.0 };
        let v_sign = if rng.gen_bool(cfg.p_v) { s } else { -s };
        for _ in 0..cfg.d_v {
            x.push(v_sign + noise.sample(&mut rng));
        }
        let p = cfg.schedule.p_s(ti);
        let joint = if rng.gen_bool(p) { s } else { -s };
        for _ in 0..cfg.d_s {
            let sign = match cfg.spurious_flip {
                SpuriousFlip::Joint => joint,
                SpuriousFlip::PerDim => {
                    if rng.gen_bool(p) {
                        s
                    } else {
                        -s
                    }
                }
            };
            x.push(sign + noise.sample(&mut rng));
        }
        y.push(label);
        t.push(ti);
    }
    Dataset::new(
        "logit",
        Tensor::matrix(cfg.n, d, x)?,
        y,
        Tensor::matrix(cfg.n, 1, t)?,
        2,
        Some(cfg.seed),
        Some(cfg.schedule.describe()),
    )
}
