//! Exact conditional means and the population penalty on small discrete
//! distributions, where invariance can be checked without any training.

use cil::objectives::{cil_penalty_oracle, conditional_mean_oracle, TabularDist};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cil::Result<()> {
    // binary feature that predicts the label with the same reliability in
    // both domains
    let invariant = TabularDist::from_weights(2, 2, vec![1.0, 2.0], |z, y, _| 0.25 * if z == y { 0.8 } else { 0.2 })?;
    // binary feature that copies the label in domain 1 and is noise in domain 2
    let spurious = TabularDist::from_weights(2, 2, vec![1.0, 2.0], |z, y, t| {
        0.25 * if t == 0 { f64::from(u8::from(z == y)) } else { 0.5 }
    })?;
    for (name, d) in [("invariant", &invariant), ("spurious", &spurious)] {
        let cm = conditional_mean_oracle(d);
        println!("{name}: E[t|z] = {:?}", cm.h);
        println!("{name}: E[t|z,y] = {:?}", cm.g);
        println!("{name}: penalty {:.6}\n", cil_penalty_oracle(d));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = TabularDist::random(&mut rng, 3, 2, 4)?;
    let ci = TabularDist::random_conditionally_independent(&mut rng, 3, 2, 4)?;
    println!("random 3x2x4 distribution: penalty {:.6}", cil_penalty_oracle(&d));
    println!("t independent of y given z: penalty {:.2e}", cil_penalty_oracle(&ci));
    Ok(())
}
