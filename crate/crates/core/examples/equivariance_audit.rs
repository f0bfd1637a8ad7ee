//! Writes a full symmetry audit for a checkpoint, or for a fresh random CNF
//! when no checkpoint is given.
//!
//! `cargo run --release --example equivariance_audit -- [checkpoint.lflow]`

use lflow::cli::audit;
use lflow::cnf::{Cnf, CnfConfig, Variant};
use lflow::io;
use lflow::lattice::Lattice;
use lflow::phi4::{Couplings, Phi4Action};
use rand::SeedableRng;

fn main() -> lflow::Result<()> {
    let summary = match std::env::args().nth(1) {
        Some(path) => {
            let trainer = io::load_checkpoint(path.as_ref())?;
            let action = trainer.config.action()?;
            audit(trainer.flow.as_ref(), &action, 6, 0, None)?
        }
        None => {
            let action = Phi4Action::new(Lattice::new(6)?, Couplings::new(-4.0, 6.975)?)?;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
            let mut report = Vec::new();
            for variant in Variant::ALL {
                let mut cnf = Cnf::new(CnfConfig::new(6, variant))?;
                cnf.randomize_weights(&mut rng, 0.2);
                let s = audit(&cnf, &action, 6, 0, None)?;
                report.push(format!("{:<17} max spread {:.3e}", variant.name(), s.max_spread));
            }
            println!("{}", report.join("\n"));
            return Ok(());
        }
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}
