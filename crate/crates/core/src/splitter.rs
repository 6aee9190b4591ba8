//! Discretization of a scalar domain index into `M` categorical environments.

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvAssignment {
    /// Environment id per sample, in `0..m`.
    pub env: Vec<usize>,
    /// `m + 1` bin edges. Equal-width edges are strictly increasing whenever the
    /// domain has positive range; quantile edges may repeat under heavy ties.
    pub edges: Vec<f64>,
    pub m: usize,
    /// Ids of bins that received no samples. They keep their numbers.
    pub empty: Vec<usize>,
}

impl EnvAssignment {
    /// Sample indices per environment, empty environments included.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.m];
        for (i, &e) in self.env.iter().enumerate() {
            out[e].push(i);
        }
        out
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.m];
        for &e in &self.env {
            c[e] += 1;
        }
        c
    }

    /// Single environment holding every sample.
    pub fn single(n: usize) -> Self {
        Self {
            env: vec![0; n],
            edges: vec![f64::NEG_INFINITY, f64::INFINITY],
            m: 1,
            empty: if n == 0 { vec![0] } else { Vec::new() },
        }
    }

    fn finish(env: Vec<usize>, edges: Vec<f64>, m: usize) -> Self {
        let mut a = Self { env, edges, m, empty: Vec::new() };
        a.empty = a.counts().iter().enumerate().filter(|(_, &c)| c == 0).map(|(i, _)| i).collect();
        a
    }
}

fn scalar_domain(ds: &Dataset, m: usize) -> Result<Vec<f64>> {
    if m < 1 {
        return Err(Error::validation("environment count must be at least 1"));
    }
    if ds.meta.d_t != 1 {
        return Err(Error::validation(format!(
            "splitting needs a scalar domain index, got d_t = {}",
            ds.meta.d_t
        )));
    }
    if ds.is_empty() {
        return Err(Error::validation("cannot split an empty dataset"));
    }
    Ok(ds.t.data().to_vec())
}

/// Bin of `t` among `m` equal-width bins over `[lo, hi]`, last bin right-closed.
pub fn equal_bin(t: f64, lo: f64, hi: f64, m: usize) -> usize {
    let range = hi - lo;
    if range <= 0.0 {
        return 0;
    }
    let u = ((t - lo) / range).clamp(0.0, 1.0);
    ((u * m as f64).floor() as usize).min(m - 1)
}

/// `m` equal-width bins over `[min t, max t]`.
pub fn equal_split(ds: &Dataset, m: usize) -> Result<EnvAssignment> {
    let t = scalar_domain(ds, m)?;
    let lo = t.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(equal_split_with_range(&t, m, lo, hi))
}

/// Equal-width binning over an explicit range (values outside are clamped into
/// the end bins).
pub fn equal_split_with_range(t: &[f64], m: usize, lo: f64, hi: f64) -> EnvAssignment {
    let edges = (0..=m).map(|k| lo + (hi - lo) * k as f64 / m as f64).collect();
    let env = t.iter().map(|&v| equal_bin(v, lo, hi, m)).collect();
    EnvAssignment::finish(env, edges, m)
}

/// `m` bins holding equal counts within one. Ties in `t` are broken by sample
/// index so the result is deterministic; samples with equal `t` may therefore
/// straddle a boundary.
pub fn quantile_split(ds: &Dataset, m: usize) -> Result<EnvAssignment> {
    let t = scalar_domain(ds, m)?;
    let n = t.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| t[a].total_cmp(&t[b]).then(a.cmp(&b)));
    let mut env = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        env[i] = rank * m / n;
    }
    let mut edges = Vec::with_capacity(m + 1);
    edges.push(t[order[0]]);
    for k in 1..m {
        // first rank belonging to bin k
        let r = (k * n).div_ceil(m);
        edges.push(if r < n { t[order[r]] } else { t[order[n - 1]] });
    }
    edges.push(t[order[n - 1]]);
    Ok(EnvAssignment::finish(env, edges, m))
}
