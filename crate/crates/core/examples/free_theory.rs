//! Trains the CNF on the free theory (λ = 0) and compares the measured
//! susceptibility with the exact value 1/(2m²).
//!
//! `cargo run --release --example free_theory -- 20` trains for 20 epochs.

use lflow::cli::{free_check, free_check_config};
use lflow::phi4::LaplacianConvention;

fn main() -> lflow::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let cfg = free_check_config(6, 1.0, epochs, 10_000, 0);
    let report = free_check(&cfg, LaplacianConvention::DegreeMinusAdjacency)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
