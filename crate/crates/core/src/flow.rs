//! The interface shared by the continuous flow and the coupling-layer
//! baseline, plus the unit Gaussian prior both push forward.

use ndarray::{Array1, Array2, ArrayD, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grad::ParameterSet;
use crate::lattice::Lattice;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cnf,
    Realnvp,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Cnf => "cnf",
            ModelKind::Realnvp => "realnvp",
        })
    }
}

/// Output of a forward or inverse pass over a batch.
#[derive(Debug, Clone)]
pub struct FlowResult {
    pub output: Array2<f64>,
    /// Log-determinant of the map that was applied, per batch element.
    pub logdet: Array1<f64>,
    pub steps: usize,
}

/// Cotangent of the pushed-forward batch, computed from that batch.
pub type OutputCotangent<'a> = dyn Fn(ArrayView2<'_, f64>) -> Result<Array2<f64>> + Sync + 'a;

/// An invertible map `z -> φ` on lattice fields with tractable log-det.
pub trait Flow: Send + Sync {
    fn kind(&self) -> ModelKind;
    fn lattice(&self) -> Lattice;
    fn params(&self) -> &ParameterSet;
    fn params_mut(&mut self) -> &mut ParameterSet;
    fn boxed_clone(&self) -> Box<dyn Flow>;

    /// Push `z` (shape `(batch, sites)`) forward.
    fn forward(&self, z: ArrayView2<'_, f64>) -> Result<FlowResult>;

    /// Pull `φ` back to latent space; `logdet` is that of the inverse map.
    fn inverse(&self, phi: ArrayView2<'_, f64>) -> Result<FlowResult>;

    /// Forward pass followed by the exact reverse pass. `out_bar` maps the
    /// forward output to its cotangent; `logdet_bar` is the cotangent of the
    /// forward log-det. Returns the forward result and parameter gradients.
    fn forward_backward(
        &self,
        z: ArrayView2<'_, f64>,
        out_bar: &OutputCotangent<'_>,
        logdet_bar: ArrayView1<'_, f64>,
    ) -> Result<(FlowResult, Vec<ArrayD<f64>>)>;

    /// Model log-density of arbitrary fields via the inverse map.
    fn log_prob(&self, phi: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let inv = self.inverse(phi)?;
        Ok(prior_log_density(inv.output.view()) + &inv.logdet)
    }

    /// Draw `n` fields with their exact model log-density.
    fn sample(&self, rng: &mut dyn rand::RngCore, n: usize) -> Result<(Array2<f64>, Array1<f64>)> {
        let z = sample_prior(rng, n, self.lattice().sites());
        let fwd = self.forward(z.view())?;
        let lq = log_q(z.view(), &fwd);
        Ok((fwd.output, lq))
    }
}

const HALF_LOG_TAU: f64 = 0.918_938_533_204_672_7;

/// `log r(z)` for the unit Gaussian prior, per row.
pub fn prior_log_density(z: ArrayView2<'_, f64>) -> Array1<f64> {
    let d = z.ncols() as f64;
    z.outer_iter()
        .map(|row| -0.5 * row.dot(&row) - d * HALF_LOG_TAU)
        .collect()
}

/// `log q(φ) = log r(z) - Δlogdet` for a forward result of `z`.
pub fn log_q(z: ArrayView2<'_, f64>, result: &FlowResult) -> Array1<f64> {
    prior_log_density(z) - &result.logdet
}

pub fn sample_prior<R: Rng + ?Sized>(rng: &mut R, n: usize, sites: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, sites), || rng.sample(StandardNormal))
}

/// One audit entry: a transformed sample with its true and model
/// log-densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub sample: usize,
    /// Index into [`crate::lattice::enumerate_group`].
    pub element: usize,
    pub log_p: f64,
    pub log_q: f64,
}

/// Evaluate `log p̃` and `log q` on every symmetry image of every sample.
pub fn equivariance_audit(
    flow: &dyn Flow,
    action: &crate::phi4::Phi4Action,
    samples: ArrayView2<'_, f64>,
) -> Result<Vec<AuditRow>> {
    let geo = flow.lattice();
    let group = crate::lattice::enumerate_group(&geo);
    let mut rows = Vec::with_capacity(samples.nrows() * group.len());
    for (i, phi) in samples.outer_iter().enumerate() {
        let one = phi.insert_axis(ndarray::Axis(0));
        let mut images = Array2::zeros((group.len(), geo.sites()));
        for (k, g) in group.iter().enumerate() {
            images.row_mut(k).assign(&crate::phi4::transform_batch(g, one, &geo).row(0));
        }
        let lq = flow.log_prob(images.view())?;
        let lp = action.eval_batch(images.view())?;
        for k in 0..group.len() {
            rows.push(AuditRow {
                sample: i,
                element: k,
                log_p: -lp[k],
                log_q: lq[k],
            });
        }
    }
    Ok(rows)
}

/// Per-sample `max − min` of the model log-density over the audit.
pub fn audit_spread(rows: &[AuditRow]) -> Vec<f64> {
    let n = rows.iter().map(|r| r.sample + 1).max().unwrap_or(0);
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for r in rows {
        lo[r.sample] = lo[r.sample].min(r.log_q);
        hi[r.sample] = hi[r.sample].max(r.log_q);
    }
    hi.iter().zip(&lo).map(|(h, l)| h - l).collect()
}
