//! Exact conditional means and the CIL penalty for finite joint tables over
//! `(z, y, t)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint probabilities `p(z, y, t)` over small finite alphabets. `t` takes
/// the real values in `t_values`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularDist {
    nz: usize,
    ny: usize,
    t_values: Vec<f64>,
    /// Indexed `[(z * ny + y) * nt + t]`.
    probs: Vec<f64>,
}

impl TabularDist {
    pub fn new(nz: usize, ny: usize, t_values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        let nt = t_values.len();
        if nz == 0 || ny == 0 || nt == 0 {
            return Err(Error::validation("alphabets must be nonempty"));
        }
        if probs.len() != nz * ny * nt {
            return Err(Error::Dimension {
                op: "TabularDist::new",
                left: vec![nz, ny, nt],
                right: vec![probs.len()],
            });
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || t_values.iter().any(|t| !t.is_finite()) {
            return Err(Error::validation("probabilities must be finite and >= 0"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::validation(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { nz, ny, t_values, probs })
    }

    /// Table from an unnormalized weight function, normalized to sum to one.
    pub fn from_weights(nz: usize, ny: usize, t_values: Vec<f64>, w: impl Fn(usize, usize, usize) -> f64) -> Result<Self> {
        let nt = t_values.len();
        let mut probs = Vec::with_capacity(nz * ny * nt);
        for z in 0..nz {
            for y in 0..ny {
                for t in 0..nt {
                    probs.push(w(z, y, t));
                }
            }
        }
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) {
            return Err(Error::validation("weights must have positive total"));
        }
        probs.iter_mut().for_each(|p| *p /= total);
        Self::new(nz, ny, t_values, probs)
    }

    /// Uniform-random table with `t` values drawn from `[-2, 2)`.
    pub fn random(rng: &mut impl Rng, nz: usize, ny: usize, nt: usize) -> Result<Self> {
        let t_values = (0..nt).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..nz * ny * nt).map(|_| rng.gen::<f64>()).collect();
        Self::from_weights(nz, ny, t_values, |z, y, t| w[(z * ny + y) * nt + t])
    }

    /// Random table factored as `p(z)·p(y|z)·p(t|z)`, so `t ⊥ y | z`.
    pub fn random_conditionally_independent(rng: &mut impl Rng, nz: usize, ny: usize, nt: usize) -> Result<Self> {
        let t_values = (0..nt).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let pz: Vec<f64> = (0..nz).map(|_| rng.gen_range(0.1..1.0)).collect();
        let py: Vec<f64> = (0..nz * ny).map(|_| rng.gen_range(0.1..1.0)).collect();
        let pt: Vec<f64> = (0..nz * nt).map(|_| rng.gen_range(0.1..1.0)).collect();
        let py_norm: Vec<f64> = (0..nz).map(|z| py[z * ny..(z + 1) * ny].iter().sum()).collect();
        let pt_norm: Vec<f64> = (0..nz).map(|z| pt[z * nt..(z + 1) * nt].iter().sum()).collect();
        Self::from_weights(nz, ny, t_values, |z, y, t| {
            pz[z] * (py[z * ny + y] / py_norm[z]) * (pt[z * nt + t] / pt_norm[z])
        })
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn t_values(&self) -> &[f64] {
        &self.t_values
    }

    pub fn p(&self, z: usize, y: usize, t: usize) -> f64 {
        self.probs[(z * self.ny + y) * self.t_values.len() + t]
    }

    fn cell(&self, z: usize, y: usize) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.t_values.iter().enumerate().map(move |(k, &t)| (self.p(z, y, k), t))
    }

    /// `E[(t − h(z))²]` for a tabular predictor.
    pub fn h_loss(&self, h: &[f64]) -> f64 {
        let mut total = 0.0;
        for z in 0..self.nz {
            for y in 0..self.ny {
                total += self.cell(z, y).map(|(p, t)| p * (t - h[z]).powi(2)).sum::<f64>();
            }
        }
        total
    }

    /// `E[(t − g(z, y))²]`, `g` indexed `[z * ny + y]`.
    pub fn g_loss(&self, g: &[f64]) -> f64 {
        let mut total = 0.0;
        for z in 0..self.nz {
            for y in 0..self.ny {
                let pred = g[z * self.ny + y];
                total += self.cell(z, y).map(|(p, t)| p * (t - pred).powi(2)).sum::<f64>();
            }
        }
        total
    }
}

/// `h*(z) = E[t | z]` and `g*(z, y) = E[t | z, y]`; `None` on zero-mass cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMeans {
    pub h: Vec<Option<f64>>,
    /// Indexed `[z * ny + y]`.
    pub g: Vec<Option<f64>>,
}

impl ConditionalMeans {
    /// Predictors with undefined cells filled by zero (they carry no mass).
    pub fn filled(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.h.iter().map(|v| v.unwrap_or(0.0)).collect(),
            self.g.iter().map(|v| v.unwrap_or(0.0)).collect(),
        )
    }
}

pub fn conditional_mean_oracle(dist: &TabularDist) -> ConditionalMeans {
    // Accumulate offsets from the first t value: fewer rounding steps, and a
    // constant t comes back exactly.
    let t0 = dist.t_values[0];
    let mean = |pairs: &mut dyn Iterator<Item = (f64, f64)>| {
        let (mass, first) = pairs.fold((0.0, 0.0), |(m, s), (p, t)| (m + p, s + p * (t - t0)));
        (mass > 0.0).then(|| t0 + first / mass)
    };
    let h = (0..dist.nz)
        .map(|z| mean(&mut (0..dist.ny).flat_map(|y| dist.cell(z, y))))
        .collect();
    let g = (0..dist.nz)
        .flat_map(|z| (0..dist.ny).map(move |y| (z, y)))
        .map(|(z, y)| mean(&mut dist.cell(z, y)))
        .collect();
    ConditionalMeans { h, g }
}

/// `E_z[V[t|z]] − E_{z,y}[V[t|z,y]]`, summed directly over positive-mass cells.
pub fn cil_penalty_oracle(dist: &TabularDist) -> f64 {
    let cm = conditional_mean_oracle(dist);
    let mut between = 0.0;
    for z in 0..dist.nz {
        let Some(hz) = cm.h[z] else { continue };
        for y in 0..dist.ny {
            if cm.g[z * dist.ny + y].is_some() {
                between += dist.cell(z, y).map(|(p, t)| p * (t - hz).powi(2)).sum::<f64>();
            }
        }
    }
    let mut within = 0.0;
    for z in 0..dist.nz {
        for y in 0..dist.ny {
            if let Some(gzy) = cm.g[z * dist.ny + y] {
                within += dist.cell(z, y).map(|(p, t)| p * (t - gzy).powi(2)).sum::<f64>();
            }
        }
    }
    between - within
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Two domains `t ∈ {1, 2}`, binary label, one binary feature `x` used as `z`.
    /// `x_v` agrees with `y` w.p. 0.8 everywhere; `x_s = y` in domain 1 and is a
    /// fair coin times `y` in domain 2.
    fn two_domain_example(spurious: bool) -> TabularDist {
        // z, y in {0 -> -1, 1 -> +1}
        TabularDist::from_weights(2, 2, vec![1.0, 2.0], |z, y, t| {
            let agree = z == y;
            let pt = 0.5;
            if spurious {
                // p(y) = 1/2 in both domains
                let p_x_given_y = match t {
                    0 => f64::from(u8::from(agree)),
                    _ => 0.5,
                };
                pt * 0.5 * p_x_given_y
            } else {
                let p_y_given_x = if agree { 0.8 } else { 0.2 };
                pt * 0.5 * p_y_given_x
            }
        })
        .unwrap()
    }

    #[test]
    fn worked_example_invariant_feature() {
        let cm = conditional_mean_oracle(&two_domain_example(false));
        for v in &cm.g {
            assert_eq!(v.unwrap(), 1.5);
        }
        assert!(cil_penalty_oracle(&two_domain_example(false)).abs() < 1e-15);
    }

    #[test]
    fn worked_example_spurious_feature() {
        let d = two_domain_example(true);
        let cm = conditional_mean_oracle(&d);
        let g = |z: usize, y: usize| cm.g[z * 2 + y].unwrap();
        assert!((g(1, 1) - 4.0 / 3.0).abs() < 1e-15);
        assert!((g(1, 0) - 2.0).abs() < 1e-15);
        assert!((g(0, 1) - 2.0).abs() < 1e-15);
        assert!((g(0, 0) - 4.0 / 3.0).abs() < 1e-15);
        assert!(cil_penalty_oracle(&d) > 0.0);
    }

    #[test]
    fn constant_t() {
        let d = TabularDist::from_weights(3, 2, vec![7.0], |z, y, _| (z + y + 1) as f64).unwrap();
        let cm = conditional_mean_oracle(&d);
        assert!(cm.h.iter().chain(&cm.g).all(|v| *v == Some(7.0)));
        assert_eq!(cil_penalty_oracle(&d), 0.0);
    }

    #[test]
    fn zero_mass_cells_are_undefined() {
        let d = TabularDist::from_weights(2, 2, vec![0.0, 1.0], |z, y, t| if z == 1 && y == 1 { 0.0 } else { (1 + t) as f64 }).unwrap();
        let cm = conditional_mean_oracle(&d);
        assert_eq!(cm.g[3], None);
        assert!(cm.h[1].is_some());
    }

    #[test]
    fn penalty_equals_between_group_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let d = TabularDist::random(&mut rng, 3, 2, 4).unwrap();
            let cm = conditional_mean_oracle(&d);
            let (h, g) = cm.filled();
            let direct = d.h_loss(&h) - d.g_loss(&g);
            assert!((direct - cil_penalty_oracle(&d)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_unnormalized() {
        assert!(TabularDist::new(1, 1, vec![0.0], vec![0.9]).is_err());
        assert!(TabularDist::new(1, 1, vec![0.0], vec![1.0 + 1e-13]).is_ok());
    }
}
