//! Trains every ablation variant over several seeds on the default
//! synthetic corpus and prints the averaged table.
//!
//! `cargo run --release --example ablation [seeds] [key=value ...]`

use cmarr::data::{generate_synthetic, stratified_split};
use cmarr::eval::{run_ablation, Variant};
use cmarr::trainer::Config;

fn main() -> cmarr::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let mut cfg = Config::default();
    for arg in args {
        if let Some((k, v)) = arg.split_once('=') {
            cfg.set(k.trim(), v.trim())?;
        }
    }
    let data = generate_synthetic(&cfg.synth, cfg.data_seed)?;
    let split = stratified_split(
        &data,
        cfg.train.val_frac,
        cfg.train.test_frac,
        cfg.data_seed,
    )?;
    let table = run_ablation(&cfg, &data, &split, &Variant::ALL, seeds)?;
    print!("{}", table.to_tsv());
    for row in &table.rows {
        let per: Vec<String> = row
            .per_seed
            .iter()
            .map(|(_, u)| format!("{u:.3}"))
            .collect();
        println!("{}: {}", row.variant, per.join(" "));
    }
    Ok(())
}
