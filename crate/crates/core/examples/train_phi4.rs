//! Trains the equivariant CNF on the interacting theory and writes the
//! usual run directory (metrics, manifest, checkpoints).
//!
//! `cargo run --release --example train_phi4 -- runs/demo 30`

use lflow::cli::{run_chain, summarize_chain, train};
use lflow::config::RunConfig;

fn main() -> lflow::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::default();
    cfg.output_dir = args.next().unwrap_or_else(|| "runs/demo".into()).into();
    cfg.train.epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(30);
    let out = train(&cfg, None)?;
    for r in &out.trainer.metrics.epochs {
        println!("epoch {:>4}  loss {:.4}  ess {:.4}  lr {:.0e}", r.epoch, r.loss, r.ess, r.lr);
    }
    let action = cfg.train.action()?;
    let rec = run_chain(out.trainer.flow.as_ref(), &action, 2000, 1, 100)?;
    let s = summarize_chain(&rec, 1)?;
    println!("chain: acceptance {:.3}, proposal ESS {:.3}", s.acceptance, s.proposal_ess);
    Ok(())
}
