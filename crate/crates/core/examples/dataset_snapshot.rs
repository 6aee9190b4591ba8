//! Draw a logit dataset, inspect its schedule, and round-trip it through an
//! on-disk snapshot.

use cil::datagen::{gen_logit, load_snapshot, save_snapshot, LogitConfig, Schedule};

fn main() -> cil::Result<()> {
    let cfg = LogitConfig {
        n: 500,
        sigma: 0.5,
        schedule: Schedule::default_sine(),
        seed: 9,
        ..LogitConfig::default()
    };
    for t in [0.0, 12.5, 25.0, 37.5, 50.0] {
        println!("p_s({t:>4}) = {:.3}", cfg.schedule.p_s(t));
    }
    let ds = gen_logit(&cfg)?;
    println!("{} rows, {} features, schedule {}", ds.meta.n, ds.meta.d, ds.meta.schedule.as_deref().unwrap_or("-"));

    let dir = std::env::temp_dir().join(format!("cil-snapshot-{}", std::process::id()));
    save_snapshot(&ds, &dir)?;
    let back = load_snapshot(&dir)?;
    println!("snapshot at {} reloads identically: {}", dir.display(), back == ds);
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
