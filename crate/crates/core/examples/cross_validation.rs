//! Five-fold cross-validation with the condition matrix averaged over folds.
//!
//! `cargo run --release --example cross_validation [epochs]`

use cmarr::data::generate_synthetic;
use cmarr::eval::cross_validate;
use cmarr::trainer::Config;

fn main() -> cmarr::Result<()> {
    let mut cfg = Config::default();
    cfg.set("folds", "5")?;
    cfg.set(
        "epochs",
        &std::env::args().nth(1).unwrap_or_else(|| "10".into()),
    )?;
    let data = generate_synthetic(&cfg.synth, cfg.data_seed)?;
    print!("{}", cross_validate(&cfg, &data, None)?.to_tsv());
    Ok(())
}
