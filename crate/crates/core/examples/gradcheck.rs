//! Finite-difference check of every parameter gradient of a small model.
//!
//! cargo run --release --example gradcheck -- [seed]

use wstereo::config::ModelConfig;
use wstereo::gradcheck::gradcheck;

fn main() -> wstereo::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut cfg = ModelConfig::default();
    cfg.channels.matching = 16;
    cfg.channels.hidden = 8;
    let report = gradcheck(&cfg, seed)?;
    for e in report.entries.iter().filter(|e| e.name.starts_with("hpu.l4")) {
        println!("{:<24} analytic {:+.6e}  numeric {:+.6e}  rel {:.1e}", e.name, e.analytic, e.numeric, e.rel_err);
    }
    println!(
        "{} tensors, max rel err {:.2e}, {}",
        report.entries.len(),
        report.max_rel_err,
        if report.passed() { "pass" } else { "FAIL" }
    );
    Ok(())
}
