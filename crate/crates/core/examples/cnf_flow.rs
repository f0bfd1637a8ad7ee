//! Pushes prior samples through a randomly initialised equivariant CNF and
//! checks the inverse.

use lflow::cnf::{Cnf, CnfConfig, Variant};
use lflow::flow::{sample_prior, Flow};
use rand::SeedableRng;

fn main() -> lflow::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    for variant in Variant::ALL {
        let mut cnf = Cnf::new(CnfConfig::new(6, variant))?;
        cnf.randomize_weights(&mut rng, 0.2);
        let z = sample_prior(&mut rng, 8, 36);
        let fwd = cnf.forward(z.view())?;
        let back = cnf.inverse(fwd.output.view())?;
        let err = (&back.output - &z).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        println!(
            "{:<17} params {:>5}  mean logdet {:+.4}  round trip {:.2e}",
            variant.name(),
            cnf.params().count(),
            fwd.logdet.mean().unwrap_or(0.0),
            err
        );
    }
    Ok(())
}
