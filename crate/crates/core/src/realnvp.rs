//! Affine coupling-layer baseline with checkerboard partitions.
//!
//! Each layer freezes the sites of one parity and transforms the others as
//! `φ_b = z_b · exp(ŝ) + t`, where `(ŝ, t)` come from a small circular
//! convolutional network that only sees the frozen sites. `ŝ` is squashed by
//! `tanh`, so every layer is invertible and contributes `Σ ŝ` to the log-det.

use ndarray::{s, Array1, Array2, Array3, ArrayD, ArrayView1, ArrayView2, ArrayView3, ArrayViewMut3, Ix1, Ix4, IxDyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Flow, FlowResult, ModelKind, OutputCotangent};
use crate::grad::ParameterSet;
use crate::lattice::Lattice;

const LEAK: f64 = 0.01;
const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub side: usize,
    pub layers: usize,
    pub hidden: usize,
    /// Number of hidden convolutions before the output head.
    pub depth: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl CouplingConfig {
    pub fn new(side: usize) -> Self {
        Self {
            side,
            layers: 16,
            hidden: 8,
            depth: 2,
            init_scale: 1e-2,
            seed: 0,
        }
    }
}

/// Stack of coupling layers; parameters are `l{k}.conv{j}.{w,b}`.
#[derive(Debug, Clone)]
pub struct CouplingStack {
    config: CouplingConfig,
    lattice: Lattice,
    /// `neighbours[k][x]`: site at offset `k` of the 3x3 stencil around `x`.
    neighbours: Vec<Vec<usize>>,
    params: ParameterSet,
}

struct LayerTape {
    input: Array2<f64>,
    /// Pre-activations of each hidden convolution, `(batch, channels, sites)`.
    hidden: Vec<Array3<f64>>,
    s_hat: Array2<f64>,
}

impl CouplingStack {
    /// Small random hidden weights, zero output head: the identity map.
    pub fn new(config: CouplingConfig) -> Result<Self> {
        let lattice = Lattice::new(config.side)?;
        if config.layers == 0 || config.hidden == 0 || config.depth == 0 {
            return Err(Error::InvalidInput("coupling stack dimensions must be positive".into()));
        }
        let l = config.side as i64;
        let mut neighbours = Vec::with_capacity(KERNEL * KERNEL);
        for d1 in -1..=1i64 {
            for d2 in -1..=1i64 {
                neighbours.push(
                    (0..lattice.sites())
                        .map(|i| {
                            let (a, b) = lattice.coords(i);
                            lattice.index((
                                (a as i64 + d1).rem_euclid(l) as usize,
                                (b as i64 + d2).rem_euclid(l) as usize,
                            ))
                        })
                        .collect(),
                );
            }
        }
        let mut rng = crate::rng::stream(config.seed, crate::rng::Stream::Init);
        let mut params = ParameterSet::new();
        for layer in 0..config.layers {
            for (j, (cin, cout)) in Self::conv_shapes(&config).into_iter().enumerate() {
                let head = j == config.depth;
                let w = ArrayD::from_shape_simple_fn(IxDyn(&[cout, cin, KERNEL, KERNEL]), || {
                    if head {
                        0.0
                    } else {
                        config.init_scale * rng.sample::<f64, _>(StandardNormal)
                    }
                });
                params.insert(&format!("l{layer}.conv{j}.w"), w)?;
                params.insert(&format!("l{layer}.conv{j}.b"), ArrayD::zeros(IxDyn(&[cout])))?;
            }
        }
        Ok(Self {
            config,
            lattice,
            neighbours,
            params,
        })
    }

    fn conv_shapes(config: &CouplingConfig) -> Vec<(usize, usize)> {
        let mut shapes = vec![(1, config.hidden)];
        for _ in 1..config.depth {
            shapes.push((config.hidden, config.hidden));
        }
        shapes.push((config.hidden, 2));
        shapes
    }

    pub fn config(&self) -> &CouplingConfig {
        &self.config
    }

    /// Fill every weight and bias with `N(0, scale²)` draws.
    pub fn randomize<R: Rng + ?Sized>(&mut self, rng: &mut R, scale: f64) {
        for i in 0..self.params.len() {
            self.params
                .by_index_mut(i)
                .value
                .mapv_inplace(|_| scale * rng.sample::<f64, _>(StandardNormal));
        }
    }

    /// Parameter names belonging to one coupling layer.
    pub fn params_of_layer(&self, layer: usize) -> Vec<String> {
        (0..=self.config.depth)
            .flat_map(|j| [format!("l{layer}.conv{j}.w"), format!("l{layer}.conv{j}.b")])
            .collect()
    }

    /// True where the site is frozen in `layer`.
    pub fn frozen(&self, layer: usize, site: usize) -> bool {
        let (a, b) = self.lattice.coords(site);
        (a + b + layer) % 2 == 0
    }

    fn mask(&self, layer: usize) -> Array1<f64> {
        (0..self.lattice.sites())
            .map(|i| if self.frozen(layer, i) { 1.0 } else { 0.0 })
            .collect()
    }

    fn conv_weights(&self, layer: usize, j: usize) -> (ndarray::ArrayView4<'_, f64>, ArrayView1<'_, f64>) {
        let w = self.params.get(&format!("l{layer}.conv{j}.w")).expect("weight");
        let b = self.params.get(&format!("l{layer}.conv{j}.b")).expect("bias");
        (
            w.view().into_dimensionality::<Ix4>().expect("rank 4"),
            b.view().into_dimensionality::<Ix1>().expect("rank 1"),
        )
    }

    /// Circular 3x3 convolution, `(batch, cin, sites) -> (batch, cout, sites)`.
    fn conv(&self, input: ArrayView3<'_, f64>, w: ndarray::ArrayView4<'_, f64>, bias: ArrayView1<'_, f64>) -> Array3<f64> {
        let (nb, cin, d) = input.dim();
        let cout = w.shape()[0];
        let mut out = Array3::zeros((nb, cout, d));
        for bi in 0..nb {
            for co in 0..cout {
                let mut o = out.slice_mut(s![bi, co, ..]);
                o.fill(bias[co]);
                let o = o.as_slice_mut().expect("contiguous");
                for ci in 0..cin {
                    let inp = input.slice(s![bi, ci, ..]);
                    let inp = inp.as_slice().expect("contiguous");
                    for (k, nbr) in self.neighbours.iter().enumerate() {
                        let wk = w[[co, ci, k / KERNEL, k % KERNEL]];
                        if wk == 0.0 {
                            continue;
                        }
                        for (ov, &n) in o.iter_mut().zip(nbr) {
                            *ov += wk * inp[n];
                        }
                    }
                }
            }
        }
        out
    }

    /// Reverse of [`Self::conv`]: returns the input cotangent and accumulates
    /// weight and bias cotangents.
    fn conv_backward(
        &self,
        input: ArrayView3<'_, f64>,
        w: ndarray::ArrayView4<'_, f64>,
        out_bar: ArrayView3<'_, f64>,
        mut w_bar: ndarray::ArrayViewMut4<'_, f64>,
        mut b_bar: ndarray::ArrayViewMut1<'_, f64>,
        want_input: bool,
    ) -> Array3<f64> {
        let (nb, cin, d) = input.dim();
        let cout = w.shape()[0];
        let mut in_bar = Array3::zeros((nb, cin, d));
        for bi in 0..nb {
            for co in 0..cout {
                let ob = out_bar.slice(s![bi, co, ..]);
                let ob = ob.as_slice().expect("contiguous");
                b_bar[co] += ob.iter().sum::<f64>();
                for ci in 0..cin {
                    let inp = input.slice(s![bi, ci, ..]);
                    let inp = inp.as_slice().expect("contiguous");
                    for (k, nbr) in self.neighbours.iter().enumerate() {
                        let (k1, k2) = (k / KERNEL, k % KERNEL);
                        let mut acc = 0.0;
                        for (&g, &n) in ob.iter().zip(nbr) {
                            acc += g * inp[n];
                        }
                        w_bar[[co, ci, k1, k2]] += acc;
                        if want_input {
                            let wk = w[[co, ci, k1, k2]];
                            let mut ib = in_bar.slice_mut(s![bi, ci, ..]);
                            let ib = ib.as_slice_mut().expect("contiguous");
                            for (&g, &n) in ob.iter().zip(nbr) {
                                ib[n] += wk * g;
                            }
                        }
                    }
                }
            }
        }
        in_bar
    }

    /// Conditioner output `(ŝ, t)` for the masked input, plus hidden
    /// pre-activations for the reverse pass.
    fn conditioner(&self, layer: usize, masked: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Vec<Array3<f64>>) {
        let (nb, d) = masked.dim();
        let mut act = masked.clone().into_shape_with_order((nb, 1, d)).expect("reshape");
        let mut hidden = Vec::with_capacity(self.config.depth);
        for j in 0..self.config.depth {
            let (w, b) = self.conv_weights(layer, j);
            let pre = self.conv(act.view(), w, b);
            act = pre.mapv(leaky);
            hidden.push(pre);
        }
        let (w, b) = self.conv_weights(layer, self.config.depth);
        let out = self.conv(act.view(), w, b);
        let s_hat = out.slice(s![.., 0, ..]).mapv(f64::tanh);
        let t = out.slice(s![.., 1, ..]).to_owned();
        (s_hat, t, hidden)
    }

    fn layer_forward(&self, layer: usize, x: &Array2<f64>) -> (Array2<f64>, Array1<f64>, LayerTape) {
        let mask = self.mask(layer);
        let masked = x * &mask;
        let (s_hat, t, hidden) = self.conditioner(layer, &masked);
        let mut out = x.clone();
        let mut logdet = Array1::zeros(x.nrows());
        for (bi, mut row) in out.outer_iter_mut().enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                if mask[i] == 0.0 {
                    *v = *v * s_hat[[bi, i]].exp() + t[[bi, i]];
                    logdet[bi] += s_hat[[bi, i]];
                }
            }
        }
        (
            out,
            logdet,
            LayerTape {
                input: x.clone(),
                hidden,
                s_hat,
            },
        )
    }

    fn layer_inverse(&self, layer: usize, y: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
        let mask = self.mask(layer);
        // frozen sites are unchanged, so the conditioner sees the same input
        let masked = y * &mask;
        let (s_hat, t, _) = self.conditioner(layer, &masked);
        let mut out = y.clone();
        let mut logdet = Array1::zeros(y.nrows());
        for (bi, mut row) in out.outer_iter_mut().enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                if mask[i] == 0.0 {
                    *v = (*v - t[[bi, i]]) * (-s_hat[[bi, i]]).exp();
                    logdet[bi] -= s_hat[[bi, i]];
                }
            }
        }
        (out, logdet)
    }

    fn layer_backward(
        &self,
        layer: usize,
        tape: &LayerTape,
        out_bar: &Array2<f64>,
        logdet_bar: ArrayView1<'_, f64>,
        grads: &mut [ArrayD<f64>],
    ) -> Array2<f64> {
        let mask = self.mask(layer);
        let (nb, d) = tape.input.dim();
        let mut x_bar = Array2::zeros((nb, d));
        let mut head_bar = Array3::zeros((nb, 2, d));
        for bi in 0..nb {
            for i in 0..d {
                let g = out_bar[[bi, i]];
                if mask[i] == 1.0 {
                    x_bar[[bi, i]] = g;
                } else {
                    let sh = tape.s_hat[[bi, i]];
                    let e = sh.exp();
                    x_bar[[bi, i]] = g * e;
                    let sh_bar = g * tape.input[[bi, i]] * e + logdet_bar[bi];
                    head_bar[[bi, 0, i]] = sh_bar * (1.0 - sh * sh);
                    head_bar[[bi, 1, i]] = g;
                }
            }
        }
        let mut act_bar = head_bar;
        for j in (0..=self.config.depth).rev() {
            let input = if j == 0 {
                (&tape.input * &mask)
                    .into_shape_with_order((nb, 1, d))
                    .expect("reshape")
            } else {
                tape.hidden[j - 1].mapv(leaky)
            };
            let (w, _) = self.conv_weights(layer, j);
            let wi = self.params.position(&format!("l{layer}.conv{j}.w")).expect("w");
            let bi = self.params.position(&format!("l{layer}.conv{j}.b")).expect("b");
            let (lo, hi) = grads.split_at_mut(bi);
            let w_bar = lo[wi].view_mut().into_dimensionality::<Ix4>().expect("rank 4");
            let b_bar = hi[0].view_mut().into_dimensionality::<Ix1>().expect("rank 1");
            let in_bar = self.conv_backward(input.view(), w, act_bar.view(), w_bar, b_bar, true);
            act_bar = if j == 0 {
                in_bar
            } else {
                let mut ib = in_bar;
                leaky_backward(ib.view_mut(), tape.hidden[j - 1].view());
                ib
            };
        }
        // conditioner input was the masked field
        for bi in 0..nb {
            for i in 0..d {
                if mask[i] == 1.0 {
                    x_bar[[bi, i]] += act_bar[[bi, 0, i]];
                }
            }
        }
        x_bar
    }

    fn check_batch(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.lattice.sites() {
            return Err(Error::shape(
                format!("(batch, {})", self.lattice.sites()),
                format!("{:?}", x.dim()),
            ));
        }
        Ok(())
    }

    fn check_finite(x: &Array2<f64>, layer: usize) -> Result<()> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                primitive: "coupling layer",
                detail: format!("layer {layer}"),
            });
        }
        Ok(())
    }

    /// Apply one layer (forward direction).
    pub fn coupling_forward(&self, layer: usize, z: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check_batch(z)?;
        let (out, ld, _) = self.layer_forward(layer, &z.to_owned());
        Ok((out, ld))
    }

    /// Closed-form inverse of one layer.
    pub fn coupling_inverse(&self, layer: usize, phi: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check_batch(phi)?;
        Ok(self.layer_inverse(layer, &phi.to_owned()))
    }

    pub fn stack_forward(&self, z: ArrayView2<'_, f64>) -> Result<FlowResult> {
        self.check_batch(z)?;
        let mut x = z.to_owned();
        let mut logdet = Array1::zeros(x.nrows());
        for layer in 0..self.config.layers {
            let (out, ld, _) = self.layer_forward(layer, &x);
            Self::check_finite(&out, layer)?;
            logdet += &ld;
            x = out;
        }
        Ok(FlowResult {
            output: x,
            logdet,
            steps: self.config.layers,
        })
    }

    pub fn stack_inverse(&self, phi: ArrayView2<'_, f64>) -> Result<FlowResult> {
        self.check_batch(phi)?;
        let mut x = phi.to_owned();
        let mut logdet = Array1::zeros(x.nrows());
        for layer in (0..self.config.layers).rev() {
            let (out, ld) = self.layer_inverse(layer, &x);
            Self::check_finite(&out, layer)?;
            logdet += &ld;
            x = out;
        }
        Ok(FlowResult {
            output: x,
            logdet,
            steps: self.config.layers,
        })
    }
}

#[inline]
fn leaky(v: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        LEAK * v
    }
}

fn leaky_backward(mut g: ArrayViewMut3<'_, f64>, pre: ArrayView3<'_, f64>) {
    ndarray::Zip::from(&mut g).and(&pre).for_each(|g, &p| {
        if p < 0.0 {
            *g *= LEAK;
        }
    });
}

impl Flow for CouplingStack {
    fn kind(&self) -> ModelKind {
        ModelKind::Realnvp
    }

    fn lattice(&self) -> Lattice {
        self.lattice
    }

    fn params(&self) -> &ParameterSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    fn boxed_clone(&self) -> Box<dyn Flow> {
        Box::new(self.clone())
    }

    fn forward(&self, z: ArrayView2<'_, f64>) -> Result<FlowResult> {
        self.stack_forward(z)
    }

    fn inverse(&self, phi: ArrayView2<'_, f64>) -> Result<FlowResult> {
        self.stack_inverse(phi)
    }

    fn forward_backward(
        &self,
        z: ArrayView2<'_, f64>,
        out_bar: &OutputCotangent<'_>,
        logdet_bar: ArrayView1<'_, f64>,
    ) -> Result<(FlowResult, Vec<ArrayD<f64>>)> {
        self.check_batch(z)?;
        let mut x = z.to_owned();
        let mut logdet = Array1::zeros(x.nrows());
        let mut tapes = Vec::with_capacity(self.config.layers);
        for layer in 0..self.config.layers {
            let (out, ld, tape) = self.layer_forward(layer, &x);
            Self::check_finite(&out, layer)?;
            logdet += &ld;
            tapes.push(tape);
            x = out;
        }
        let mut bar = out_bar(x.view())?;
        let mut grads = self.params.zeros_like();
        for (layer, tape) in tapes.iter().enumerate().rev() {
            bar = self.layer_backward(layer, tape, &bar, logdet_bar, &mut grads);
        }
        Ok((
            FlowResult {
                output: x,
                logdet,
                steps: self.config.layers,
            },
            grads,
        ))
    }
}
