//! One short run per value of the reconstruction weight.
//!
//! `cargo run --release --example weight_sweep`

use cmarr::data::generate_synthetic;
use cmarr::eval::sweep;
use cmarr::trainer::Config;

fn main() -> cmarr::Result<()> {
    let mut cfg = Config::default();
    cfg.set("epochs", "10")?;
    let data = generate_synthetic(&cfg.synth, cfg.data_seed)?;
    let split = cfg.split(&data)?;
    print!(
        "{}",
        sweep(&cfg, &data, &split, "lambda", &[1.0, 5.0, 10.0])?
    );
    Ok(())
}
