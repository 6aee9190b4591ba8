//! Train on a CSV table with a numeric domain column, testing on later
//! domains. Pass a path and column names, or run without arguments to use a
//! generated table.
//!
//! `cargo run --release --example csv_tabular -- data.csv year label 2000 f1,f2,f3`

use std::path::PathBuf;

use cil::datagen::{gen_logit, load_csv, CsvSpec, DomainFilter, LogitConfig};
use cil::harness::ModelConfig;
use cil::models::ModelBundle;
use cil::objectives::{Method, PenaltySpec};
use cil::trainer::{evaluate, train, TrainConfig};

fn demo_table() -> cil::Result<PathBuf> {
    let ds = gen_logit(&LogitConfig {
        n: 3000,
        sigma: 0.5,
        seed: 21,
        ..LogitConfig::default()
    })?;
    let d = ds.meta.d;
    let mut text = (0..d).map(|j| format!("f{j}")).collect::<Vec<_>>().join(",");
    text.push_str(",t,label\n");
    for i in 0..ds.len() {
        for v in ds.x.row(i) {
            text.push_str(&format!("{v},"));
        }
        text.push_str(&format!("{},{}\n", ds.t_scalar(i), ds.y[i]));
    }
    let path = std::env::temp_dir().join(format!("cil-demo-{}.csv", std::process::id()));
    std::fs::write(&path, text).expect("temp dir is writable");
    Ok(path)
}

fn main() -> cil::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (path, domain, label, cut, features) = if args.len() >= 5 {
        let features = args[4].split(',').map(str::to_string).collect();
        (PathBuf::from(&args[0]), args[1].clone(), args[2].clone(), args[3].parse().unwrap_or(0.0), features)
    } else {
        let features = (0..22).map(|j| format!("f{j}")).collect();
        (demo_table()?, "t".to_string(), "label".to_string(), 50.0, features)
    };
    let spec = CsvSpec {
        features,
        label,
        domain,
        train: DomainFilter::below(cut),
        test: DomainFilter::at_least(cut),
    };
    let (tr, te) = load_csv(&path, &spec)?;
    println!("{} train rows, {} test rows, {} features", tr.len(), te.len(), tr.meta.d);
    let init = ModelBundle::init(&ModelConfig::default().bundle_spec(&tr)?, 0)?;
    let cfg = TrainConfig {
        batch_size: 256,
        ..TrainConfig::default()
    };
    for spec in [PenaltySpec::new(Method::Erm, 0.0), PenaltySpec::new(Method::Cil, 1e4)] {
        let (model, _) = train(&tr, &init, &spec, &cfg)?;
        println!(
            "{}: train {:.2}% later domains {:.2}%",
            spec.method.name(),
            100.0 * evaluate(&model, &tr)?.accuracy,
            100.0 * evaluate(&model, &te)?.accuracy
        );
    }
    Ok(())
}
