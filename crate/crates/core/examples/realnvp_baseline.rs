//! The coupling-layer baseline: parameter count, invertibility and how far
//! its density is from translation and rotation invariant.

use lflow::flow::{audit_spread, equivariance_audit, Flow};
use lflow::lattice::Lattice;
use lflow::phi4::{Couplings, Phi4Action};
use lflow::realnvp::{CouplingConfig, CouplingStack};
use rand::SeedableRng;

fn main() -> lflow::Result<()> {
    let mut stack = CouplingStack::new(CouplingConfig::new(6))?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    stack.randomize(&mut rng, 0.1);
    println!("coupling layers: {}, parameters: {}", stack.config().layers, stack.params().count());

    let (phi, lq) = stack.sample(&mut rng, 4)?;
    let again = stack.log_prob(phi.view())?;
    println!("log q from sampling vs inverse: {:.2e}", (&lq - &again).mapv(f64::abs).sum());

    let action = Phi4Action::new(Lattice::new(6)?, Couplings::new(-4.0, 6.975)?)?;
    let rows = equivariance_audit(&stack, &action, phi.view())?;
    for (i, s) in audit_spread(&rows).iter().enumerate() {
        println!("sample {i}: spread of log q over 288 symmetry images {s:.3e}");
    }
    Ok(())
}
