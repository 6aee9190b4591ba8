//! When do risk-variance penalties prefer the spurious mask?
//!
//! Runs the Monte-Carlo at the failure threshold (one sample per domain),
//! in the many-samples-per-domain regime, and fits the growth of the
//! estimation-error term in the number of domains.

use cil::theorycheck::*;

fn main() -> cil::Result<()> {
    let at = threshold_config(4096, 2000, 1);
    println!("threshold |T| = {:.1}", at.failure_threshold()?);
    let r = simulate_rex_choice(&at)?;
    println!(
        "|T| = n = 4096: failure rate {:.4} (s.e. {:.4}, 95% CI [{:.4}, {:.4}])",
        r.rate, r.std_err, r.ci_low, r.ci_high
    );

    let easy = Prop1Config {
        n: 4 * 10_000,
        envs: 4,
        sigma_r: 20.0,
        ..at.clone()
    };
    let e = simulate_rex_choice(&easy)?;
    println!("|T| = 4, 10^4 per domain: failure rate {:.4}", e.rate);

    let scaling = Prop1Config { n: 1600, trials: 4000, ..at };
    let pts = estimation_error_scaling(&scaling, &[10, 20, 40, 80])?;
    for (k, m) in &pts {
        println!("|T| = {k:>3}: mean squared estimation error {m:.5}");
    }
    let xy: Vec<(f64, f64)> = pts.iter().map(|&(k, m)| (k as f64, m)).collect();
    println!("log-log exponent {:.3}", loglog_slope(&xy)?);
    Ok(())
}
