//! Parameter budget of the wavelet model against the ConvGRU baseline
//! built from the same channel widths.
//!
//! cargo run --example gru_baseline

use std::collections::BTreeMap;

use wstereo::config::{ModelConfig, Variant};
use wstereo::pipeline::init_params;

fn main() -> wstereo::Result<()> {
    let full = ModelConfig::default();
    let base = ModelConfig {
        variant: Variant::GruBaseline,
        ..full.clone()
    };
    for cfg in [&full, &base] {
        let p = init_params(cfg)?;
        let mut groups: BTreeMap<String, usize> = BTreeMap::new();
        for (name, t) in p.iter() {
            let top = name.split('.').next().unwrap_or(name).to_string();
            *groups.entry(top).or_default() += t.len();
        }
        println!("{:?}: {} scalars", cfg.variant, p.num_scalars());
        for (g, n) in groups {
            println!("  {g:<8} {n}");
        }
    }
    Ok(())
}
