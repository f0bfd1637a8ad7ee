use lflow::cnf::{Cnf, CnfConfig, Variant};
use lflow::flow::{sample_prior, Flow};
use lflow::lattice::{compute_orbits, enumerate_group, GroupElement, Lattice, PointOp};
use lflow::phi4::{transform_batch, Couplings, Phi4Action};
use lflow::realnvp::{CouplingConfig, CouplingStack};
use lflow::training::ess;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn element(side: usize) -> impl Strategy<Value = GroupElement> {
    (0..side, 0..side, 0..8usize).prop_map(|(a, b, p)| GroupElement::new((a, b), PointOp::all()[p]))
}

fn field(sites: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, sites)
}

/// Action written out site by site with explicit neighbour sums.
fn action_by_hand(phi: &[f64], l: usize, m_sq: f64, lambda: f64) -> f64 {
    let at = |a: usize, b: usize| phi[(a % l) * l + b % l];
    let mut s = 0.0;
    for a in 0..l {
        for b in 0..l {
            let v = at(a, b);
            let nb = at(a + 1, b) + at(a + l - 1, b) + at(a, b + 1) + at(a, b + l - 1);
            s += v * (4.0 * v - nb) + m_sq * v * v + lambda * v.powi(4);
        }
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permutations_are_bijections(side in 1usize..9, g in (0usize..9, 0usize..9, 0usize..8)) {
        let geo = Lattice::new(side).unwrap();
        let g = GroupElement::new((g.0 % side, g.1 % side), PointOp::all()[g.2]);
        let mut p = g.permutation(&geo);
        p.sort_unstable();
        prop_assert_eq!(p, (0..side * side).collect::<Vec<_>>());
    }

    #[test]
    fn composition_matches_permutation_product(g in element(5), h in element(5)) {
        let geo = Lattice::new(5).unwrap();
        let (pg, ph) = (g.permutation(&geo), h.permutation(&geo));
        let gh = g.compose(&h, &geo).permutation(&geo);
        for x in 0..25 {
            prop_assert_eq!(gh[x], pg[ph[x]]);
        }
        let inv = g.inverse(&geo).permutation(&geo);
        for x in 0..25 {
            prop_assert_eq!(inv[pg[x]], x);
        }
    }

    #[test]
    fn action_matches_hand_sum(phi in field(25), m_sq in -5.0..5.0f64, lambda in 0.0..10.0f64) {
        let geo = Lattice::new(5).unwrap();
        let action = Phi4Action::new(geo, Couplings::new(m_sq, lambda).unwrap()).unwrap();
        let s = action.eval(&phi).unwrap();
        let r = action_by_hand(&phi, 5, m_sq, lambda);
        prop_assert!((s - r).abs() <= 1e-10 * r.abs().max(1.0));
    }

    #[test]
    fn action_is_invariant(phi in field(36), g in element(6), flip in any::<bool>()) {
        let geo = Lattice::new(6).unwrap();
        let action = Phi4Action::new(geo, Couplings::new(-4.0, 6.975).unwrap()).unwrap();
        let batch = Array2::from_shape_vec((1, 36), phi).unwrap();
        let mut moved = transform_batch(&g, batch.view(), &geo);
        if flip {
            moved.mapv_inplace(|v| -v);
        }
        let a = action.eval_batch(batch.view()).unwrap()[0];
        let b = action.eval_batch(moved.view()).unwrap()[0];
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn action_gradient_matches_differences(phi in field(16), k in 0usize..16) {
        let geo = Lattice::new(4).unwrap();
        let action = Phi4Action::new(geo, Couplings::new(-2.0, 1.5).unwrap()).unwrap();
        let g = action.gradient(&phi).unwrap();
        let h = 1e-6;
        let (mut up, mut dn) = (phi.clone(), phi.clone());
        up[k] += h;
        dn[k] -= h;
        let fd = (action.eval(&up).unwrap() - action.eval(&dn).unwrap()) / (2.0 * h);
        prop_assert!((g[k] - fd).abs() <= 1e-5 * fd.abs().max(1.0));
    }

    #[test]
    fn expanded_kernels_are_invariant(side in 1usize..8, seed in any::<u64>()) {
        let geo = Lattice::new(side).unwrap();
        let table = compute_orbits(&geo);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let free: Vec<f64> = (0..table.orbit_count()).map(|_| rand::Rng::gen(&mut rng)).collect();
        let k = table.expand_kernel(&free).unwrap();
        for g in enumerate_group(&geo) {
            let p = g.permutation(&geo);
            for x in 0..geo.sites() {
                for y in 0..geo.sites() {
                    prop_assert_eq!(k[geo.displacement(p[x], p[y])], k[geo.displacement(x, y)]);
                }
            }
        }
    }

    #[test]
    fn ess_is_bounded_and_shift_invariant(
        lp in prop::collection::vec(-30.0..30.0f64, 1..40),
        shift in -100i32..100,
    ) {
        let lp = Array1::from(lp);
        let lq = Array1::zeros(lp.len());
        let e = ess(lp.view(), lq.view()).unwrap();
        let n = lp.len() as f64;
        prop_assert!(e >= 1.0 / n - 1e-12 && e <= 1.0 + 1e-12);
        let shifted = ess((&lp + shift as f64).view(), lq.view()).unwrap();
        prop_assert!((e - shifted).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn cnf_density_is_group_invariant(g in element(4), seed in 0u64..1000, variant in 0usize..2) {
        let variant = [Variant::FullEquivariant, Variant::TranslationOnly][variant];
        let mut cfg = CnfConfig::new(4, variant);
        cfg.steps = 10;
        let mut cnf = Cnf::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        cnf.randomize_weights(&mut rng, 0.3);
        let (phi, _) = cnf.sample(&mut rng, 3).unwrap();
        let lq = cnf.log_prob(phi.view()).unwrap();
        let geo = Lattice::new(4).unwrap();
        let g = if variant == Variant::TranslationOnly {
            GroupElement::translation(g.translation)
        } else {
            g
        };
        let moved = transform_batch(&g, phi.view(), &geo);
        let lq_moved = cnf.log_prob(moved.view()).unwrap();
        for (a, b) in lq.iter().zip(lq_moved.iter()) {
            prop_assert!((a - b).abs() <= 1e-8, "{} vs {}", a, b);
        }
    }

    #[test]
    fn flows_round_trip(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cnf = Cnf::new(CnfConfig::new(4, Variant::Neither)).unwrap();
        cnf.randomize_weights(&mut rng, 0.3);
        let mut stack = CouplingStack::new(CouplingConfig::new(4)).unwrap();
        stack.randomize(&mut rng, 0.1);
        let z = sample_prior(&mut rng, 4, 16);
        for (flow, tol) in [(&cnf as &dyn Flow, 1e-4), (&stack, 1e-10)] {
            let fwd = flow.forward(z.view()).unwrap();
            let back = flow.inverse(fwd.output.view()).unwrap();
            let err = (&back.output - &z).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(err <= tol, "{:?} round trip error {}", flow.kind(), err);
            let ld = (&fwd.logdet + &back.logdet).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(ld <= tol, "{:?} logdet mismatch {}", flow.kind(), ld);
        }
    }

    #[test]
    fn sample_density_agrees_with_log_prob(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stack = CouplingStack::new(CouplingConfig::new(4)).unwrap();
        stack.randomize(&mut rng, 0.1);
        let (phi, lq) = stack.sample(&mut rng, 5).unwrap();
        let again = stack.log_prob(phi.view()).unwrap();
        for (a, b) in lq.iter().zip(again.iter()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}
