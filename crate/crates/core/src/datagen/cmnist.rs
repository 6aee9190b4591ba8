//! Continuous colored MNIST: digit shape is the invariant signal, color the
//! spurious one, and each sample carries an integer time index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, RawDigits, Schedule};
use crate::error::{Error, Result};
use crate::ndmath::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CmnistConfig {
    /// Probability the (noisy) class label agrees with the digit's class.
    pub p_v: f64,
    /// Color-class agreement as a function of the time index.
    pub schedule: Schedule,
    /// Time indices are drawn uniformly from `1..=domains`.
    pub domains: u32,
    /// Keep every other row and column (28×28 → 14×14).
    pub downsample: bool,
    pub seed: u64,
}

impl Default for CmnistConfig {
    fn default() -> Self {
        Self {
            p_v: 0.75,
            schedule: Schedule::two_block(512, 0.9, 0.8),
            domains: 1024,
            downsample: true,
            seed: 0,
        }
    }
}

pub fn colorize_mnist(raw: &RawDigits, cfg: &CmnistConfig) -> Result<Dataset> {
    if raw.is_empty() {
        return Err(Error::validation("colorize_mnist: empty digit set"));
    }
    if cfg.domains < 2 {
        return Err(Error::validation("colorize_mnist: need at least 2 domains"));
    }
    if !(0.0..=1.0).contains(&cfg.p_v) {
        return Err(Error::validation("colorize_mnist: p_v is not a probability"));
    }
    let step = if cfg.downsample { 2 } else { 1 };
    let (rows, cols) = (raw.rows.div_ceil(step), raw.cols.div_ceil(step));
    let plane = rows * cols;
    let d = 2 * plane;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = raw.len();
    let mut x = vec![0.0; n * d];
    let mut y = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    for i in 0..n {
        let digit_class = usize::from(raw.labels[i] >= 5);
        let label = if rng.gen_bool(cfg.p_v) { digit_class } else { 1 - digit_class };
        let ti = f64::from(rng.gen_range(1..=cfg.domains));
        let color = if rng.gen_bool(cfg.schedule.p_s(ti)) { label } else { 1 - label };
        let img = raw.image(i);
        let out = &mut x[i * d + color * plane..i * d + (color + 1) * plane];
        for r in 0..rows {
            for c in 0..cols {
                out[r * cols + c] = img[(r * step) * raw.cols + c * step];
            }
        }
        y.push(label);
        t.push(ti);
    }
    Dataset::new(
        "cmnist",
        Tensor::matrix(n, d, x)?,
        y,
        Tensor::matrix(n, 1, t)?,
        2,
        Some(cfg.seed),
        Some(cfg.schedule.describe()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_digits(n: usize) -> RawDigits {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        RawDigits {
            rows: 4,
            cols: 4,
            pixels: (0..n * 16).map(|_| rng.gen_range(0.1..1.0)).collect(),
            labels: (0..n).map(|i| (i % 10) as u8).collect(),
        }
    }

    fn color_of(ds: &Dataset, i: usize) -> usize {
        let plane = ds.x.cols() / 2;
        let row = ds.x.row(i);
        usize::from(row[plane..].iter().any(|&v| v != 0.0))
    }

    #[test]
    fn fully_spurious_limit() {
        let raw = synthetic_digits(400);
        let cfg = CmnistConfig {
            p_v: 1.0,
            schedule: Schedule::Constant { p: 1.0 },
            ..CmnistConfig::default()
        };
        let ds = colorize_mnist(&raw, &cfg).unwrap();
        for i in 0..ds.len() {
            assert_eq!(color_of(&ds, i), ds.y[i]);
            assert_eq!(ds.y[i], usize::from(raw.labels[i] >= 5));
        }
        assert_eq!(ds.x.cols(), 2 * 2 * 2);
    }

    #[test]
    fn one_channel_is_zero() {
        let ds = colorize_mnist(&synthetic_digits(50), &CmnistConfig::default()).unwrap();
        let plane = ds.x.cols() / 2;
        for i in 0..ds.len() {
            let row = ds.x.row(i);
            let a = row[..plane].iter().any(|&v| v != 0.0);
            let b = row[plane..].iter().any(|&v| v != 0.0);
            assert!(a ^ b);
        }
        assert!(ds.t.data().iter().all(|&t| (1.0..=1024.0).contains(&t) && t.fract() == 0.0));
    }

    #[test]
    fn rejects_empty_and_single_domain() {
        let empty = RawDigits {
            rows: 2,
            cols: 2,
            pixels: vec![],
            labels: vec![],
        };
        assert!(colorize_mnist(&empty, &CmnistConfig::default()).is_err());
        let cfg = CmnistConfig {
            domains: 1,
            ..CmnistConfig::default()
        };
        assert!(colorize_mnist(&synthetic_digits(3), &cfg).is_err());
    }
}
