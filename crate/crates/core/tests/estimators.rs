//! Estimators and the sampler checked against exactly solvable cases.

use std::f64::consts::TAU;

use lflow::lattice::Lattice;
use lflow::observables::{g_hat, jackknife, measure};
use lflow::phi4::{free_theory_chi2, Couplings, FreeFieldSampler, Phi4Action};
use lflow::sampler::{acceptance_rate, mh_chain, GaussianProposals, ProposalSource};
use lflow::Result;
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Free propagator `G(x) = (1/V) Σ_k cos(k·x) / (2(k̂² + m²))`.
fn free_propagator(geo: &Lattice, m_sq: f64) -> Vec<f64> {
    let l = geo.side() as f64;
    (0..geo.sites())
        .map(|x| {
            let (x1, x2) = geo.coords(x);
            let mut g = 0.0;
            for k in 0..geo.sites() {
                let (k1, k2) = geo.coords(k);
                let (p1, p2) = (TAU * k1 as f64 / l, TAU * k2 as f64 / l);
                let lap = 4.0 - 2.0 * p1.cos() - 2.0 * p2.cos();
                g += (p1 * x1 as f64 + p2 * x2 as f64).cos() / (2.0 * (lap + m_sq));
            }
            g / geo.sites() as f64
        })
        .collect()
}

fn free_samples(side: usize, m_sq: f64, n: usize, seed: u64) -> (Lattice, Array2<f64>) {
    let geo = Lattice::new(side).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (geo, FreeFieldSampler::new(geo, m_sq).unwrap().sample_batch(&mut rng, n))
}

#[test]
fn free_propagator_sums_to_susceptibility() {
    let geo = Lattice::new(6).unwrap();
    let g = free_propagator(&geo, 1.0);
    assert!((g.iter().sum::<f64>() - free_theory_chi2(1.0, &geo).unwrap()).abs() < 1e-12);
}

#[test]
fn two_point_function_of_free_samples() {
    let (geo, samples) = free_samples(6, 1.0, 40_000, 1);
    let est = g_hat(samples.view(), &geo).unwrap();
    let exact = free_propagator(&geo, 1.0);
    for x in 0..geo.sites() {
        let err = jackknife(samples.view(), &geo, 40, &|e| Ok(e.g[x])).unwrap().error;
        assert!(
            (est.g[x] - exact[x]).abs() < 5.0 * err,
            "x = {x}: {} vs {} ± {err}",
            est.g[x],
            exact[x]
        );
    }
}

#[test]
fn free_susceptibility_and_pole_mass() {
    let m_sq = 1.0;
    let (geo, samples) = free_samples(6, m_sq, 40_000, 2);
    let r = measure(samples.view(), &geo, 50).unwrap();
    assert!((r.chi2.value - 0.5).abs() < 5.0 * r.chi2.error, "{:?}", r.chi2);
    // zero-momentum correlator on a periodic chain is an exact cosh with
    // cosh E = 1 + m²/2
    let e = (1.0 + m_sq / 2.0).acosh();
    let m = r.pole_mass.expect("pole mass defined");
    assert!((m.value - e).abs() < 5.0 * m.error + 1e-3, "{m:?} vs {e}");
    assert!(r.pole_mass_verbatim.is_some());
}

#[test]
fn jackknife_error_tracks_sample_size() {
    let (geo, samples) = free_samples(4, 1.0, 16_000, 3);
    let small = jackknife(samples.slice(ndarray::s![..4000, ..]), &geo, 40, &|e| Ok(e.g.sum())).unwrap();
    let large = jackknife(samples.view(), &geo, 40, &|e| Ok(e.g.sum())).unwrap();
    let ratio = small.error / large.error;
    assert!((1.4..2.8).contains(&ratio), "error ratio {ratio}, expected about 2");
}

struct Fixed(Vec<Array1<f64>>);

impl ProposalSource for Fixed {
    fn sites(&self) -> usize {
        self.0[0].len()
    }

    fn propose(&mut self, n: usize) -> Result<(Array2<f64>, Array1<f64>)> {
        let mut out = Array2::zeros((n, self.sites()));
        for (i, mut row) in out.outer_iter_mut().enumerate() {
            row.assign(&self.0[i % self.0.len()]);
        }
        Ok((out, Array1::zeros(n)))
    }
}

#[test]
fn chain_moves_only_through_accepted_proposals() {
    let geo = Lattice::new(1).unwrap();
    let target = Phi4Action::new(geo, Couplings::new(1.0, 0.0).unwrap()).unwrap();
    let mut src = GaussianProposals::new(1, 0.0, 2.0, 4);
    let rec = mh_chain(&mut src, &target, 5000, 4, 64).unwrap();
    for i in 1..rec.len() {
        if !rec.accepted[i] {
            assert_eq!(rec.samples.row(i), rec.samples.row(i - 1));
        }
    }
    let rate = acceptance_rate(&rec);
    assert!(rate > 0.2 && rate < 0.9, "{rate}");
}

#[test]
fn invalid_proposals_are_rejected_and_counted() {
    let geo = Lattice::new(1).unwrap();
    let target = Phi4Action::new(geo, Couplings::new(1.0, 0.0).unwrap()).unwrap();
    let mut src = Fixed(vec![ndarray::array![0.5], ndarray::array![f64::NAN]]);
    let rec = mh_chain(&mut src, &target, 10, 5, 4).unwrap();
    assert_eq!(rec.invalid_proposals, 5);
    assert!(rec.samples.iter().all(|v| *v == 0.5));
}

#[test]
fn gaussian_target_independence_sampler_moments() {
    // exp(-m² φ²) with m² = 2 has variance 1/4
    let geo = Lattice::new(1).unwrap();
    let target = Phi4Action::new(geo, Couplings::new(2.0, 0.0).unwrap()).unwrap();
    let mut src = GaussianProposals::new(1, -0.2, 0.8, 6);
    let rec = mh_chain(&mut src, &target, 200_000, 6, 500).unwrap();
    let x = rec.samples.column(0);
    let mean = x.mean().unwrap();
    let var = x.mapv(|v| v * v).mean().unwrap() - mean * mean;
    assert!(mean.abs() < 0.01, "{mean}");
    assert!((var - 0.25).abs() < 0.01, "{var}");
}
