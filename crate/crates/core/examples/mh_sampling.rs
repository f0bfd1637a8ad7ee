//! Independence Metropolis-Hastings on a single-site Gaussian target with a
//! deliberately mismatched Gaussian proposal.

use lflow::lattice::Lattice;
use lflow::phi4::{Couplings, Phi4Action};
use lflow::sampler::{acceptance_rate, mh_chain, GaussianProposals};

fn main() -> lflow::Result<()> {
    // S = φ², so the target is N(0, 1/2)
    let target = Phi4Action::new(Lattice::new(1)?, Couplings::new(1.0, 0.0)?)?;
    for sigma in [0.5, 0.71, 1.0, 2.0, 4.0] {
        let mut proposals = GaussianProposals::new(1, 0.3, sigma, 11);
        let rec = mh_chain(&mut proposals, &target, 100_000, 11, 1000)?;
        let x = rec.samples.column(0);
        let mean = x.mean().unwrap_or(f64::NAN);
        let var = x.mapv(|v| v * v).mean().unwrap_or(f64::NAN) - mean * mean;
        println!(
            "proposal N(0.3, {sigma}²): acceptance {:.3}, mean {mean:+.4}, variance {var:.4} (exact 0.5)",
            acceptance_rate(&rec)
        );
    }
    Ok(())
}
