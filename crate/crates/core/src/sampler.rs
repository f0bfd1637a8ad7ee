//! Independent Metropolis-Hastings with flow proposals.

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::flow::Flow;
use crate::phi4::Phi4Action;
use crate::rng::{stream, Stream};

/// Unnormalized target log-density on batches.
pub trait Target: Sync {
    fn log_density(&self, phi: ArrayView2<'_, f64>) -> Result<Array1<f64>>;
}

impl Target for Phi4Action {
    fn log_density(&self, phi: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.eval_batch(phi)?.mapv(|s| -s))
    }
}

/// A source of i.i.d. proposals with their exact log-density.
pub trait ProposalSource {
    fn sites(&self) -> usize;
    fn propose(&mut self, n: usize) -> Result<(Array2<f64>, Array1<f64>)>;
}

/// Proposals pushed through a flow from the dedicated proposal stream.
pub struct FlowProposals<'a> {
    flow: &'a dyn Flow,
    rng: ChaCha8Rng,
}

impl<'a> FlowProposals<'a> {
    pub fn new(flow: &'a dyn Flow, seed: u64) -> Self {
        Self {
            flow,
            rng: stream(seed, Stream::Proposal),
        }
    }
}

impl ProposalSource for FlowProposals<'_> {
    fn sites(&self) -> usize {
        self.flow.lattice().sites()
    }

    fn propose(&mut self, n: usize) -> Result<(Array2<f64>, Array1<f64>)> {
        self.flow.sample(&mut self.rng, n)
    }
}

/// Independent Gaussian proposals `N(mean, sigma²)` per site.
pub struct GaussianProposals {
    pub sites: usize,
    pub mean: f64,
    pub sigma: f64,
    rng: ChaCha8Rng,
}

impl GaussianProposals {
    pub fn new(sites: usize, mean: f64, sigma: f64, seed: u64) -> Self {
        Self {
            sites,
            mean,
            sigma,
            rng: stream(seed, Stream::Proposal),
        }
    }
}

impl ProposalSource for GaussianProposals {
    fn sites(&self) -> usize {
        self.sites
    }

    fn propose(&mut self, n: usize) -> Result<(Array2<f64>, Array1<f64>)> {
        let z: Array2<f64> = Array2::from_shape_simple_fn((n, self.sites), || self.rng.sample(StandardNormal));
        let norm = self.sites as f64 * (self.sigma.ln() + 0.5 * std::f64::consts::TAU.ln());
        let lq = z.outer_iter().map(|r| -0.5 * r.dot(&r) - norm).collect();
        Ok((z.mapv(|v| self.mean + self.sigma * v), lq))
    }
}

/// A Metropolis-Hastings chain. Row `i` of `samples` is the state after
/// step `i`; `log_q`/`log_p` are those of the proposal made at step `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRecord {
    pub samples: Array2<f64>,
    pub accepted: Vec<bool>,
    pub log_q: Vec<f64>,
    pub log_p: Vec<f64>,
    /// Proposals discarded for a non-finite log-density.
    pub invalid_proposals: usize,
}

impl ChainRecord {
    pub fn len(&self) -> usize {
        self.accepted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accepted.is_empty()
    }

    /// States after discarding `burn_in` steps and keeping every `thin`-th.
    pub fn states(&self, burn_in: usize, thin: usize) -> Array2<f64> {
        let start = burn_in.min(self.len());
        self.samples.slice(s![start..;thin.max(1) as isize, ..]).to_owned()
    }
}

pub fn acceptance_rate(record: &ChainRecord) -> f64 {
    if record.is_empty() {
        return 0.0;
    }
    record.accepted.iter().filter(|&&a| a).count() as f64 / record.len() as f64
}

/// Draws proposals from `source` in chunks of `chunk` and hands them out
/// one at a time.
pub struct BatchedProposals<'a> {
    source: &'a mut dyn ProposalSource,
    chunk: usize,
    buffer: (Array2<f64>, Array1<f64>),
    next: usize,
}

impl<'a> BatchedProposals<'a> {
    pub fn new(source: &'a mut dyn ProposalSource, chunk: usize) -> Self {
        let d = source.sites();
        Self {
            source,
            chunk: chunk.max(1),
            buffer: (Array2::zeros((0, d)), Array1::zeros(0)),
            next: 0,
        }
    }

    pub fn next_proposal(&mut self) -> Result<(Array1<f64>, f64)> {
        if self.next == self.buffer.1.len() {
            self.buffer = self.source.propose(self.chunk)?;
            self.next = 0;
        }
        let i = self.next;
        self.next += 1;
        Ok((self.buffer.0.row(i).to_owned(), self.buffer.1[i]))
    }
}

const MAX_INITIAL_DRAWS: usize = 1000;

/// Run `n` steps. The first valid proposal is accepted unconditionally;
/// uniforms come from the stream for `seed`.
pub fn mh_chain(
    source: &mut dyn ProposalSource,
    target: &dyn Target,
    n: usize,
    seed: u64,
    chunk: usize,
) -> Result<ChainRecord> {
    if n == 0 {
        return Err(Error::InvalidInput("chain length must be positive".into()));
    }
    let d = source.sites();
    let mut uniforms = stream(seed, Stream::Mh);
    let mut proposals = BatchedProposals::new(source, chunk);
    let mut rec = ChainRecord {
        samples: Array2::zeros((n, d)),
        accepted: Vec::with_capacity(n),
        log_q: Vec::with_capacity(n),
        log_p: Vec::with_capacity(n),
        invalid_proposals: 0,
    };
    let mut draw = |rec: &mut ChainRecord| -> Result<(Array1<f64>, f64, f64, bool)> {
        let (phi, lq) = proposals.next_proposal()?;
        let lp = if phi.iter().all(|v| v.is_finite()) {
            match target.log_density(phi.view().insert_axis(ndarray::Axis(0))) {
                Ok(v) => v[0],
                Err(e) if e.is_numeric() => f64::NAN,
                Err(e) => return Err(e),
            }
        } else {
            f64::NAN
        };
        let ok = lq.is_finite() && lp.is_finite();
        if !ok {
            rec.invalid_proposals += 1;
        }
        Ok((phi, lq, lp, ok))
    };

    let mut tries = 0;
    let (mut state, mut state_lw) = loop {
        let (phi, lq, lp, ok) = draw(&mut rec)?;
        if ok {
            rec.log_q.push(lq);
            rec.log_p.push(lp);
            break (phi, lp - lq);
        }
        tries += 1;
        if tries >= MAX_INITIAL_DRAWS {
            return Err(Error::NonFinite {
                primitive: "proposal",
                detail: format!("no finite proposal in {MAX_INITIAL_DRAWS} draws"),
            });
        }
    };
    rec.accepted.push(true);
    rec.samples.row_mut(0).assign(&state);

    for i in 1..n {
        let (phi, lq, lp, ok) = draw(&mut rec)?;
        let u: f64 = uniforms.gen();
        let lw = lp - lq;
        let accept = ok && u.ln() < lw - state_lw;
        if accept {
            state = phi;
            state_lw = lw;
        }
        rec.accepted.push(accept);
        rec.log_q.push(lq);
        rec.log_p.push(lp);
        rec.samples.row_mut(i).assign(&state);
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Lattice;
    use crate::phi4::Couplings;

    /// Replays a fixed list of proposals.
    struct Scripted {
        items: Vec<(f64, f64)>,
        at: usize,
    }

    impl ProposalSource for Scripted {
        fn sites(&self) -> usize {
            1
        }
        fn propose(&mut self, n: usize) -> Result<(Array2<f64>, Array1<f64>)> {
            let mut phi = Array2::zeros((n, 1));
            let mut lq = Array1::zeros(n);
            for i in 0..n {
                let (p, q) = self.items[self.at % self.items.len()];
                phi[[i, 0]] = p;
                lq[i] = q;
                self.at += 1;
            }
            Ok((phi, lq))
        }
    }

    /// log p̃(φ) = φ, so the scripted values set the target directly.
    struct Linear;
    impl Target for Linear {
        fn log_density(&self, phi: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
            Ok(phi.column(0).to_owned())
        }
    }

    #[test]
    fn favourable_ratio_accepts() {
        // incumbent: q = p̃ = e^0; proposal: p̃ = e^-1, q = e^-2 → ρ = e
        let mut src = Scripted {
            items: vec![(0.0, 0.0), (-1.0, -2.0)],
            at: 0,
        };
        let rec = mh_chain(&mut src, &Linear, 2, 0, 1).unwrap();
        assert_eq!(rec.accepted, vec![true, true]);
        assert_eq!(rec.samples[[1, 0]], -1.0);
    }

    #[test]
    fn rejection_duplicates_state() {
        // ρ = e^-50 on every later step
        let mut src = Scripted {
            items: vec![(0.0, 0.0), (-50.0, 0.0), (-50.0, 0.0)],
            at: 0,
        };
        let rec = mh_chain(&mut src, &Linear, 3, 1, 2).unwrap();
        assert_eq!(rec.accepted, vec![true, false, false]);
        assert_eq!(rec.samples.row(1), rec.samples.row(0));
        assert!((acceptance_rate(&rec) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_proposals_rejected() {
        let mut src = Scripted {
            items: vec![(f64::NAN, 0.0), (0.5, 0.0), (f64::INFINITY, 0.0), (0.2, f64::NAN)],
            at: 0,
        };
        let rec = mh_chain(&mut src, &Linear, 3, 0, 1).unwrap();
        assert_eq!(rec.samples[[0, 0]], 0.5);
        assert_eq!(rec.accepted, vec![true, false, false]);
        assert_eq!(rec.invalid_proposals, 3);
    }

    #[test]
    fn extreme_log_ratios_do_not_overflow() {
        let mut src = Scripted {
            items: vec![(0.0, 0.0), (700.0, -700.0), (-700.0, 700.0)],
            at: 0,
        };
        let rec = mh_chain(&mut src, &Linear, 3, 0, 1).unwrap();
        assert_eq!(rec.accepted, vec![true, true, false]);
    }

    #[test]
    fn matched_gaussian_always_accepts() {
        // one site, λ = 0, m² = 1/2: p ∝ exp(-φ²/2), the unit normal
        let action = Phi4Action::new(Lattice::new(1).unwrap(), Couplings::new(0.5, 0.0).unwrap()).unwrap();
        let mut src = GaussianProposals::new(1, 0.0, 1.0, 3);
        let rec = mh_chain(&mut src, &action, 500, 3, 64).unwrap();
        assert_eq!(acceptance_rate(&rec), 1.0);
    }

    #[test]
    fn chunking_does_not_change_chain() {
        let action = Phi4Action::new(Lattice::new(1).unwrap(), Couplings::new(1.0, 0.0).unwrap()).unwrap();
        let run = |chunk| {
            let mut src = GaussianProposals::new(1, 0.1, 1.3, 9);
            mh_chain(&mut src, &action, 300, 4, chunk).unwrap()
        };
        assert_eq!(run(1), run(100));
    }

    #[test]
    fn burn_in_and_thinning() {
        let action = Phi4Action::new(Lattice::new(1).unwrap(), Couplings::new(1.0, 0.0).unwrap()).unwrap();
        let mut src = GaussianProposals::new(1, 0.0, 1.0, 1);
        let rec = mh_chain(&mut src, &action, 10, 0, 3).unwrap();
        let kept = rec.states(4, 2);
        assert_eq!(kept.nrows(), 3);
        assert_eq!(kept.row(1), rec.samples.row(6));
    }
}
