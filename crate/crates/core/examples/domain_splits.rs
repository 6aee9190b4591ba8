//! Equal-width and quantile discretization of a skewed domain index.

use cil::datagen::{gen_logit, LogitConfig};
use cil::splitter::{equal_split, quantile_split};

fn main() -> cil::Result<()> {
    let mut ds = gen_logit(&LogitConfig {
        n: 1000,
        seed: 4,
        ..LogitConfig::default()
    })?;
    // square the index so most samples pile up near zero
    for v in ds.t.data_mut() {
        *v = *v * *v / 100.0;
    }
    for m in [4, 8] {
        let eq = equal_split(&ds, m)?;
        let q = quantile_split(&ds, m)?;
        println!("M = {m}");
        println!("  equal-width counts {:?} (empty bins {:?})", eq.counts(), eq.empty);
        println!("  quantile counts    {:?}", q.counts());
        let edges: Vec<String> = q.edges.iter().map(|e| format!("{e:.2}")).collect();
        println!("  quantile edges     [{}]", edges.join(", "));
    }
    Ok(())
}
