//! Orbit structure of the square lattice symmetry group.
//!
//! Run with `cargo run --example orbits -- 6`.

use lflow::lattice::{compute_orbits, enumerate_group, translation_classes, Lattice};

fn main() -> lflow::Result<()> {
    let side: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(6);
    let geo = Lattice::new(side)?;
    let orbits = compute_orbits(&geo);
    println!("L = {side}: group order {}", enumerate_group(&geo).len());
    println!("displacement orbits under D4: {}", orbits.orbit_count());
    println!("translation-only classes:    {}", translation_classes(&geo).orbit_count());
    println!();
    // orbit id of every displacement, laid out on the lattice
    for a in 0..side {
        let row: Vec<String> = (0..side)
            .map(|b| format!("{:>3}", orbits.orbit_id[geo.index((a, b))]))
            .collect();
        println!("{}", row.join(""));
    }
    Ok(())
}
