//! A small symmetry ablation: every CNF variant for a few epochs over two
//! seeds, reporting the final effective sample size.
//!
//! `cargo run --release --example ablation -- 3` uses 3 epochs per run.

use lflow::cli::ablate;
use lflow::config::RunConfig;

fn main() -> lflow::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let mut cfg = RunConfig::default();
    cfg.train.steps_per_epoch = 20;
    let report = ablate(&cfg, Some(epochs), 2, false)?;
    for v in &report.variants {
        println!("{:<17} ESS {:.4} ± {:.4}  ({:?})", v.variant.name(), v.mean, v.std, v.final_ess);
    }
    Ok(())
}
