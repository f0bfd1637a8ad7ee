//! Reverse-KL training: loss and gradient, Adam, the step-indexed learning
//! rate schedule, effective sample size and the epoch loop.

use std::time::Instant;

use ndarray::{s, Array1, Array2, ArrayD, ArrayView1, ArrayView2};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cnf::{Cnf, CnfConfig, TimeKernel, Variant};
use crate::error::{Error, Result};
use crate::flow::{log_q, prior_log_density, sample_prior, Flow, ModelKind};
use crate::grad::{GradientRecord, LossProgram, ParameterSet};
use crate::phi4::{Couplings, LaplacianConvention, Phi4Action};
use crate::realnvp::{CouplingConfig, CouplingStack};
use crate::rng::{stream, Stream, StreamState};

/// Everything a training run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub side: usize,
    pub m_sq: f64,
    pub lambda: f64,
    pub convention: LaplacianConvention,
    pub model: ModelKind,
    pub variant: Variant,
    pub batch: usize,
    pub steps_per_epoch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_drop_step: usize,
    pub lr_drop_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub rk4_steps: usize,
    pub frequencies: usize,
    pub time_nodes: usize,
    pub train_omega: bool,
    pub coupling_layers: usize,
    pub coupling_hidden: usize,
    pub ess_samples: usize,
    pub checkpoint_every: usize,
    /// Rows per gradient work unit; fixed so results do not depend on the
    /// number of workers.
    pub chunk: usize,
    pub seed: u64,
    /// Stop once an epoch reaches this ESS.
    pub target_ess: Option<f64>,
    /// Stop after the first epoch that ends past this wall-clock budget.
    pub max_seconds: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            side: 6,
            m_sq: -4.0,
            lambda: 6.975,
            convention: LaplacianConvention::default(),
            model: ModelKind::Cnf,
            variant: Variant::FullEquivariant,
            batch: 100,
            steps_per_epoch: 50,
            epochs: 200,
            lr: 1e-3,
            lr_drop_step: 250,
            lr_drop_factor: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            rk4_steps: 50,
            frequencies: 9,
            time_nodes: 10,
            train_omega: true,
            coupling_layers: 16,
            coupling_hidden: 8,
            ess_samples: 1000,
            checkpoint_every: 10,
            chunk: 25,
            seed: 0,
            target_ess: None,
            max_seconds: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("side", self.side),
            ("batch", self.batch),
            ("steps_per_epoch", self.steps_per_epoch),
            ("rk4_steps", self.rk4_steps),
            ("frequencies", self.frequencies),
            ("time_nodes", self.time_nodes),
            ("coupling_layers", self.coupling_layers),
            ("coupling_hidden", self.coupling_hidden),
            ("ess_samples", self.ess_samples),
            ("chunk", self.chunk),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("lr", self.lr), ("lr_drop_factor", self.lr_drop_factor), ("eps", self.eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        self.couplings()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn couplings(&self) -> Result<Couplings> {
        Couplings::new(self.m_sq, self.lambda)
    }

    pub fn action(&self) -> Result<Phi4Action> {
        Ok(Phi4Action::new(crate::lattice::Lattice::new(self.side)?, self.couplings()?)?
            .with_convention(self.convention))
    }

    pub fn cnf_config(&self) -> Result<CnfConfig> {
        let mut c = CnfConfig::new(self.side, self.variant);
        c.kernel = TimeKernel::new(self.time_nodes, 1.0)?;
        c.frequencies = self.frequencies;
        c.steps = self.rk4_steps;
        c.omega_seed = self.seed;
        c.train_omega = self.train_omega;
        Ok(c)
    }

    pub fn coupling_config(&self) -> CouplingConfig {
        let mut c = CouplingConfig::new(self.side);
        c.layers = self.coupling_layers;
        c.hidden = self.coupling_hidden;
        c.seed = self.seed;
        c
    }
}

/// The freshly initialized model described by `config`.
pub fn build_model(config: &TrainConfig) -> Result<Box<dyn Flow>> {
    Ok(match config.model {
        ModelKind::Cnf => Box::new(Cnf::new(config.cnf_config()?)?),
        ModelKind::Realnvp => Box::new(CouplingStack::new(config.coupling_config())?),
    })
}

/// `lr` before `drop_step` optimizer steps, `lr · factor` from then on.
pub fn lr_schedule(config: &TrainConfig, step: usize) -> f64 {
    if step < config.lr_drop_step {
        config.lr
    } else {
        config.lr * config.lr_drop_factor
    }
}

/// `(mean w)² / mean w²` for `w = exp(log p̃ − log q)`.
pub fn ess(log_p: ArrayView1<'_, f64>, log_q: ArrayView1<'_, f64>) -> Result<f64> {
    if log_p.len() != log_q.len() {
        return Err(Error::shape(log_p.len(), log_q.len()));
    }
    if log_p.is_empty() {
        return Err(Error::Estimator("ESS needs at least one sample".into()));
    }
    let lw: Vec<f64> = log_p.iter().zip(log_q).map(|(p, q)| p - q).collect();
    if lw.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Estimator("log-weights contain NaN or +inf".into()));
    }
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Estimator("all importance weights are zero".into()));
    }
    let (mut s1, mut s2) = (0.0, 0.0);
    for v in &lw {
        let w = (v - max).exp();
        s1 += w;
        s2 += w * w;
    }
    Ok(s1 * s1 / (lw.len() as f64 * s2))
}

/// Per-row `log q(φ) + S(φ)` for the pushed-forward batch.
fn per_sample_loss(
    flow: &dyn Flow,
    z: ArrayView2<'_, f64>,
    action: &Phi4Action,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let fwd = flow.forward(z)?;
    let lq = log_q(z, &fwd);
    let s = action.eval_batch(fwd.output.view())?;
    Ok((fwd.output, lq + s))
}

/// Mean over the batch of `log q(φ) + S(φ)`, `φ` the push-forward of `z`.
pub fn reverse_kl_loss(flow: &dyn Flow, z: ArrayView2<'_, f64>, action: &Phi4Action) -> Result<f64> {
    let (_, l) = per_sample_loss(flow, z, action)?;
    let loss = l.mean().expect("non-empty batch");
    if !loss.is_finite() {
        return Err(non_finite_loss(&l));
    }
    Ok(loss)
}

fn non_finite_loss(per_row: &Array1<f64>) -> Error {
    let bad: Vec<usize> = per_row
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_finite())
        .map(|(i, _)| i)
        .collect();
    Error::NonFinite {
        primitive: "reverse KL loss",
        detail: format!("{} of {} rows non-finite, first rows {:?}", bad.len(), per_row.len(), &bad[..bad.len().min(8)]),
    }
}

/// Loss and parameter gradient, accumulated over fixed-size row chunks in
/// chunk order.
pub fn reverse_kl_grad(
    flow: &dyn Flow,
    z: ArrayView2<'_, f64>,
    action: &Phi4Action,
    chunk: usize,
) -> Result<GradientRecord> {
    let b = z.nrows();
    if b == 0 || chunk == 0 {
        return Err(Error::InvalidInput("empty batch or chunk".into()));
    }
    let inv_b = 1.0 / b as f64;
    let starts: Vec<usize> = (0..b).step_by(chunk).collect();
    let parts: Vec<Result<(Array1<f64>, Vec<ArrayD<f64>>)>> = starts
        .par_iter()
        .map(|&lo| {
            let zc = z.slice(s![lo..(lo + chunk).min(b), ..]);
            let n = zc.nrows();
            let out_bar = |phi: ArrayView2<'_, f64>| -> Result<Array2<f64>> {
                let (_, g) = action.eval_and_grad_batch(phi)?;
                Ok(g * inv_b)
            };
            let ld_bar = Array1::from_elem(n, -inv_b);
            let (fwd, grads) = flow.forward_backward(zc, &out_bar, ld_bar.view())?;
            let rows = prior_log_density(zc) - &fwd.logdet + action.eval_batch(fwd.output.view())?;
            Ok((rows, grads))
        })
        .collect();
    let mut rec = GradientRecord::zeros(flow.params());
    let mut rows = Vec::with_capacity(b);
    for part in parts {
        let (r, grads) = part?;
        rows.extend(r.iter().copied());
        for (acc, g) in rec.grads.iter_mut().zip(&grads) {
            *acc += g;
        }
    }
    let rows = Array1::from(rows);
    rec.loss = rows.sum() * inv_b;
    if !rec.loss.is_finite() {
        return Err(non_finite_loss(&rows));
    }
    rec.check_against(flow.params())?;
    Ok(rec)
}

/// The reverse-KL objective on a fixed latent batch, as a function of the
/// parameters.
pub struct ReverseKl<'a> {
    pub flow: &'a dyn Flow,
    pub z: ArrayView2<'a, f64>,
    pub action: &'a Phi4Action,
    pub chunk: usize,
}

impl ReverseKl<'_> {
    fn with_params(&self, params: &ParameterSet) -> Result<Box<dyn Flow>> {
        let mut f = self.flow.boxed_clone();
        let target = f.params_mut();
        if target.shapes() != params.shapes() {
            return Err(Error::InvalidInput("parameter layout does not match the model".into()));
        }
        *target = params.clone();
        Ok(f)
    }
}

impl LossProgram for ReverseKl<'_> {
    fn value(&self, params: &ParameterSet) -> Result<f64> {
        let f = self.with_params(params)?;
        reverse_kl_loss(f.as_ref(), self.z, self.action)
    }

    fn value_and_grad(&self, params: &ParameterSet) -> Result<(f64, GradientRecord)> {
        let f = self.with_params(params)?;
        let g = reverse_kl_grad(f.as_ref(), self.z, self.action, self.chunk)?;
        Ok((g.loss, g))
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<ArrayD<f64>>,
    pub v: Vec<ArrayD<f64>>,
    pub t: u64,
}

impl Adam {
    pub fn new(params: &ParameterSet, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParameterSet, grads: &[ArrayD<f64>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::shape(params.len(), grads.len()));
        }
        for (i, g) in grads.iter().enumerate() {
            let p = params.by_index(i);
            if g.shape() != p.value.shape() || self.m[i].shape() != p.value.shape() {
                return Err(Error::shape(format!("{:?}", p.value.shape()), format!("{:?}", g.shape())));
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (i, g) in grads.iter().enumerate() {
            let p = &mut params.by_index_mut(i).value;
            ndarray::Zip::from(p)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
        Ok(())
    }
}

/// One row of the metrics table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub ess: f64,
    pub lr: f64,
    /// Cumulative training wall-clock time.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub epochs: Vec<EpochRecord>,
}

impl RunMetrics {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn best_ess(&self) -> Option<f64> {
        self.epochs.iter().map(|e| e.ess).reduce(f64::max)
    }

    /// Trailing rolling mean of the ESS column.
    pub fn rolling_ess(&self, window: usize) -> Vec<f64> {
        rolling_mean(&self.epochs.iter().map(|e| e.ess).collect::<Vec<_>>(), window)
    }
}

/// Trailing mean over at most `window` entries.
pub fn rolling_mean(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// ESS of `flow` against `action` on `n` fresh samples, drawn in rows of
/// `chunk`.
pub fn evaluate_ess(
    flow: &dyn Flow,
    action: &Phi4Action,
    rng: &mut ChaCha8Rng,
    n: usize,
    chunk: usize,
) -> Result<f64> {
    let d = flow.lattice().sites();
    let z = sample_prior(rng, n, d);
    let starts: Vec<usize> = (0..n).step_by(chunk.max(1)).collect();
    let parts: Vec<Result<(Array1<f64>, Array1<f64>)>> = starts
        .par_iter()
        .map(|&lo| {
            let zc = z.slice(s![lo..(lo + chunk).min(n), ..]);
            let fwd = flow.forward(zc)?;
            let lp = action.eval_batch(fwd.output.view())?.mapv(|s| -s);
            Ok((lp, log_q(zc, &fwd)))
        })
        .collect();
    let (mut lp, mut lq) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for part in parts {
        let (p, q) = part?;
        lp.extend(p);
        lq.extend(q);
    }
    ess(Array1::from(lp).view(), Array1::from(lq).view())
}

/// What the per-epoch observer asks the loop to do next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Resumable state of a training run.
pub struct Trainer {
    pub config: TrainConfig,
    pub flow: Box<dyn Flow>,
    pub adam: Adam,
    /// Optimizer steps taken so far.
    pub step: usize,
    pub metrics: RunMetrics,
    prior_rng: ChaCha8Rng,
    eval_rng: ChaCha8Rng,
    /// Wall-clock seconds accumulated by earlier sessions.
    elapsed: f64,
}

/// Serializable scalars of a [`Trainer`]; arrays travel separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub config: TrainConfig,
    pub step: usize,
    pub adam_t: u64,
    pub metrics: RunMetrics,
    pub prior_stream: StreamState,
    pub eval_stream: StreamState,
    pub elapsed: f64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let flow = build_model(&config)?;
        let adam = Adam::new(flow.params(), config.beta1, config.beta2, config.eps);
        Ok(Self {
            prior_rng: stream(config.seed, Stream::Prior),
            eval_rng: stream(config.seed, Stream::Eval),
            config,
            flow,
            adam,
            step: 0,
            metrics: RunMetrics::default(),
            elapsed: 0.0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.metrics.epochs.len()
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            config: self.config.clone(),
            step: self.step,
            adam_t: self.adam.t,
            metrics: self.metrics.clone(),
            prior_stream: StreamState::capture(self.config.seed, Stream::Prior, &self.prior_rng),
            eval_stream: StreamState::capture(self.config.seed, Stream::Eval, &self.eval_rng),
            elapsed: self.elapsed,
        }
    }

    /// Rebuild a trainer from saved scalars, parameters and Adam moments.
    pub fn restore(
        state: TrainerState,
        params: ParameterSet,
        m: Vec<ArrayD<f64>>,
        v: Vec<ArrayD<f64>>,
    ) -> Result<Self> {
        let mut t = Self::new(state.config.clone())?;
        if t.flow.params().shapes() != params.shapes() {
            return Err(Error::Format("checkpoint parameters do not match the model".into()));
        }
        *t.flow.params_mut() = params;
        t.adam.m = m;
        t.adam.v = v;
        t.adam.t = state.adam_t;
        t.step = state.step;
        t.metrics = state.metrics;
        t.prior_rng = state.prior_stream.restore()?;
        t.eval_rng = state.eval_stream.restore()?;
        t.elapsed = state.elapsed;
        Ok(t)
    }

    /// One optimizer step on a fresh batch; returns the batch loss.
    pub fn train_step(&mut self, action: &Phi4Action) -> Result<f64> {
        let z = sample_prior(&mut self.prior_rng, self.config.batch, self.flow.lattice().sites());
        let rec = reverse_kl_grad(self.flow.as_ref(), z.view(), action, self.config.chunk)?;
        let lr = lr_schedule(&self.config, self.step);
        self.adam.step(self.flow.params_mut(), &rec.grads, lr)?;
        self.step += 1;
        Ok(rec.loss)
    }

    /// Run epochs until the configured count, budget or ESS target is hit,
    /// or `observer` returns [`Control::Stop`].
    pub fn run(
        &mut self,
        action: &Phi4Action,
        observer: &mut dyn FnMut(&Trainer, &EpochRecord) -> Result<Control>,
    ) -> Result<()> {
        while self.epochs_done() < self.config.epochs {
            let started = Instant::now();
            let mut total = 0.0;
            for _ in 0..self.config.steps_per_epoch {
                total += self.train_step(action)?;
            }
            let ess = evaluate_ess(
                self.flow.as_ref(),
                action,
                &mut self.eval_rng,
                self.config.ess_samples,
                self.config.batch,
            )?;
            self.elapsed += started.elapsed().as_secs_f64();
            let rec = EpochRecord {
                epoch: self.epochs_done(),
                loss: total / self.config.steps_per_epoch as f64,
                ess,
                lr: lr_schedule(&self.config, self.step.saturating_sub(1)),
                seconds: self.elapsed,
            };
            self.metrics.epochs.push(rec);
            let mut stop = observer(self, &rec)? == Control::Stop;
            stop |= self.config.target_ess.is_some_and(|t| ess >= t);
            stop |= self.config.max_seconds.is_some_and(|t| self.elapsed >= t);
            if stop {
                break;
            }
        }
        Ok(())
    }
}
