//! Generates the default synthetic corpus, writes it to disk and reads it
//! back.
//!
//! `cargo run --example gen_data [out_dir]`

use cmarr::data::{generate_synthetic, load_dataset, save_dataset, SynthConfig};

fn main() -> cmarr::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "synthetic_data".into());
    let data = generate_synthetic(&SynthConfig::default(), 0)?;
    save_dataset(&data, out.as_ref())?;
    let back = load_dataset(out.as_ref())?;
    assert_eq!(back, data);
    println!(
        "{} instances, classes {:?}, widths {:?} -> {out}",
        back.len(),
        back.class_names,
        back.dims
    );
    Ok(())
}
