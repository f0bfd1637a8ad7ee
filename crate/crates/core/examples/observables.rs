//! Two-point function, susceptibility and pole mass from exact free-field
//! samples, with jackknife errors.

use lflow::lattice::Lattice;
use lflow::observables::{g_c, g_hat, measure};
use lflow::phi4::{free_theory_chi2, FreeFieldSampler};
use rand::SeedableRng;

fn main() -> lflow::Result<()> {
    let m_sq = 1.0;
    let geo = Lattice::new(8)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let samples = FreeFieldSampler::new(geo, m_sq)?.sample_batch(&mut rng, 20_000);

    let est = g_hat(samples.view(), &geo)?;
    for x2 in 0..8 {
        println!("G_c({x2}) = {:.5}", g_c(&est, x2));
    }
    let r = measure(samples.view(), &geo, 50)?;
    println!("chi2 = {:.4} ± {:.4} (exact {})", r.chi2.value, r.chi2.error, free_theory_chi2(m_sq, &geo)?);
    if let Some(m) = r.pole_mass {
        println!("m_p = {:.4} ± {:.4} (exact {:.4})", m.value, m.error, (1.0 + m_sq / 2.0).acosh());
    }
    for n in &r.notes {
        println!("note: {n}");
    }
    Ok(())
}
