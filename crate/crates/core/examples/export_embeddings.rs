//! Trains briefly, then writes pooled reconstructed and real vectors of
//! the test split for external visualization.
//!
//! `cargo run --release --example export_embeddings [out.tsv]`

use cmarr::data::generate_synthetic;
use cmarr::eval::{embedding_rows, embeddings_tsv, mean_gap};
use cmarr::trainer::{train, Config};

fn main() -> cmarr::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "embeddings.tsv".into());
    let mut cfg = Config::default();
    cfg.set("epochs", "5")?;
    let data = generate_synthetic(&cfg.synth, cfg.data_seed)?;
    let split = cfg.split(&data)?;
    let run = train(&cfg, &data, &split, None)?;
    let model = run.best.model()?;
    let rows = embedding_rows(&model, &run.best.params, &data, &split.test)?;
    std::fs::write(&out, embeddings_tsv(&rows)).expect("cannot write embeddings");
    println!(
        "{} rows, mean reconstruction gap {:.4} -> {out}",
        rows.len(),
        mean_gap(&rows)?
    );
    Ok(())
}
