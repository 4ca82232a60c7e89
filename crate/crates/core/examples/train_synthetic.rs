//! Trains the full model on the default synthetic corpus and prints the
//! test condition matrix.
//!
//! `cargo run --release --example train_synthetic [key=value ...]`

use std::time::Instant;

use cmarr::data::{generate_synthetic, stratified_split};
use cmarr::eval::{evaluate_conditions, reconstruction_errors};
use cmarr::trainer::{train, Config};

fn main() -> cmarr::Result<()> {
    let mut cfg = Config::default();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg
            .split_once('=')
            .ok_or_else(|| cmarr::Error::Config(format!("expected key=value, got {arg:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let data = generate_synthetic(&cfg.synth, cfg.data_seed)?;
    let split = stratified_split(
        &data,
        cfg.train.val_frac,
        cfg.train.test_frac,
        cfg.data_seed,
    )?;
    let start = Instant::now();
    let out = train(&cfg, &data, &split, None)?;
    for m in &out.metrics {
        println!("{}", m.tsv_row());
    }
    let ck = &out.best;
    let report = evaluate_conditions(&ck.model()?, &ck.params, &data, &split.test)?;
    print!("{}", report.to_tsv());
    let rec = reconstruction_errors(&ck.model()?, &ck.params, &data, &split.train, &split.test)?;
    println!(
        "reconstruction error: model {:.4}, zero fill {:.4}, mean fill {:.4}",
        rec.model, rec.zero_fill, rec.mean_fill
    );
    println!(
        "best epoch {} in {:.1}s",
        ck.epoch,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
