//! Equivariant continuous normalizing flow.
//!
//! The vector field is
//!
//! ```text
//! dφ(x)/dt = Σ_{y,a,f} W[class(y - x), a, f] · K_a(t) · sin(ω_f φ(y))
//! ```
//!
//! where `class` is the `D_4` orbit of the displacement (or the displacement
//! itself for the translation-only variants) and `K_a` are piecewise-linear
//! hat functions in time. Its divergence only involves the zero-displacement
//! weight, so it is computed in closed form and integrated alongside the
//! state with RK4.
//!
//! Internally a time slice of the kernel is laid out as a matrix
//! `M[(block, f, y), x] = K_block[y - x, f]`, so one velocity evaluation over a
//! batch is a single matrix product of the feature map with `M`.

use ndarray::{s, Array1, Array2, Array3, ArrayD, ArrayView1, ArrayView2, Axis, Ix2, Ix3, IxDyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Flow, FlowResult, ModelKind, OutputCotangent};
use crate::grad::ParameterSet;
use crate::lattice::{compute_orbits, translation_classes, Lattice, OrbitTable};
use crate::ode::{self, BatchedField};
use crate::spectral::Fft2;
use crate::trig;

/// Which symmetries the vector field respects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Full `C_L^2 ⋊ D_4` weight sharing and an odd (sine) basis.
    #[default]
    FullEquivariant,
    /// Weights shared over translations only.
    TranslationOnly,
    /// Orbit sharing, but the basis is `{sin, cos, 1}`.
    NoSignFlip,
    /// Translation sharing and the `{sin, cos, 1}` basis.
    Neither,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::FullEquivariant,
        Variant::TranslationOnly,
        Variant::NoSignFlip,
        Variant::Neither,
    ];

    pub fn shares_orbits(self) -> bool {
        matches!(self, Variant::FullEquivariant | Variant::NoSignFlip)
    }

    pub fn sign_flip(self) -> bool {
        matches!(self, Variant::FullEquivariant | Variant::TranslationOnly)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::FullEquivariant => "full_equivariant",
            Variant::TranslationOnly => "translation_only",
            Variant::NoSignFlip => "no_sign_flip",
            Variant::Neither => "neither",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s}")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Piecewise-linear interpolation in time with `dims` evenly spaced nodes on
/// `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeKernel {
    pub dims: usize,
    pub horizon: f64,
}

impl Default for TimeKernel {
    fn default() -> Self {
        Self {
            dims: 10,
            horizon: 1.0,
        }
    }
}

impl TimeKernel {
    pub fn new(dims: usize, horizon: f64) -> Result<Self> {
        if dims < 2 {
            return Err(Error::InvalidInput("time kernel needs at least 2 nodes".into()));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidInput("horizon must be positive".into()));
        }
        Ok(Self { dims, horizon })
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.dims)
            .map(|a| a as f64 * self.horizon / (self.dims - 1) as f64)
            .collect()
    }

    /// `K_a(t) = max(0, 1 - |t - t_a| (A-1)/T)`.
    pub fn weights(&self, t: f64) -> Result<Vec<f64>> {
        // stage times accumulate rounding; allow a few ulps past the ends
        let tol = 1e-9 * self.horizon;
        if !(t >= -tol && t <= self.horizon + tol) {
            return Err(Error::Domain(format!("t = {t} outside [0, {}]", self.horizon)));
        }
        let t = t.clamp(0.0, self.horizon);
        let scale = (self.dims - 1) as f64 / self.horizon;
        Ok(self
            .nodes()
            .iter()
            .map(|&ta| (1.0 - (t - ta).abs() * scale).max(0.0))
            .collect())
    }
}

/// Settings fixed at construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnfConfig {
    pub side: usize,
    pub variant: Variant,
    pub kernel: TimeKernel,
    pub frequencies: usize,
    pub steps: usize,
    pub omega_seed: u64,
    /// When false, ω keeps its initial draw and receives zero gradient.
    pub train_omega: bool,
    /// Evaluate velocities by FFT instead of the dense kernel matrix.
    pub fft_forward: bool,
}

impl CnfConfig {
    pub fn new(side: usize, variant: Variant) -> Self {
        Self {
            side,
            variant,
            kernel: TimeKernel::default(),
            frequencies: 9,
            steps: 50,
            omega_seed: 0,
            train_omega: true,
            fft_forward: false,
        }
    }
}

/// The continuous flow: parameters plus the weight-sharing table.
#[derive(Debug)]
pub struct Cnf {
    config: CnfConfig,
    lattice: Lattice,
    classes: OrbitTable,
    /// `disp[y * D + x] = y - x`.
    disp: Vec<u32>,
    params: ParameterSet,
    fft: Option<Fft2>,
}

impl Clone for Cnf {
    fn clone(&self) -> Self {
        Self {
            config: self.config,
            lattice: self.lattice,
            classes: self.classes.clone(),
            disp: self.disp.clone(),
            params: self.params.clone(),
            fft: self.config.fft_forward.then(|| Fft2::new(&self.lattice)),
        }
    }
}

pub const W_SIN: &str = "w_sin";
pub const OMEGA: &str = "omega";
pub const W_COS: &str = "w_cos";
pub const W_CONST: &str = "w_const";

impl Cnf {
    /// Identity flow: all weights zero, ω drawn from a standard normal.
    pub fn new(config: CnfConfig) -> Result<Self> {
        let lattice = Lattice::new(config.side)?;
        if config.frequencies == 0 {
            return Err(Error::InvalidInput("need at least one frequency".into()));
        }
        if config.steps == 0 {
            return Err(Error::InvalidInput("need at least one RK4 step".into()));
        }
        TimeKernel::new(config.kernel.dims, config.kernel.horizon)?;
        let classes = if config.variant.shares_orbits() {
            compute_orbits(&lattice)
        } else {
            translation_classes(&lattice)
        };
        let (n, a, f) = (classes.orbit_count(), config.kernel.dims, config.frequencies);
        let mut rng = crate::rng::stream(config.omega_seed, crate::rng::Stream::Omega);
        let omega: Vec<f64> = (0..f).map(|_| rng.sample(StandardNormal)).collect();
        let mut params = ParameterSet::new();
        params.insert(W_SIN, ArrayD::zeros(IxDyn(&[n, a, f])))?;
        params.insert(OMEGA, ArrayD::from_shape_vec(IxDyn(&[f]), omega).expect("len f"))?;
        if !config.variant.sign_flip() {
            params.insert(W_COS, ArrayD::zeros(IxDyn(&[n, a, f])))?;
            params.insert(W_CONST, ArrayD::zeros(IxDyn(&[n, a])))?;
        }
        Ok(Self {
            config,
            lattice,
            classes,
            disp: displacement_table(&lattice),
            params,
            fft: config.fft_forward.then(|| Fft2::new(&lattice)),
        })
    }

    pub fn config(&self) -> &CnfConfig {
        &self.config
    }

    pub fn classes(&self) -> &OrbitTable {
        &self.classes
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn set_steps(&mut self, steps: usize) {
        self.config.steps = steps.max(1);
    }

    pub fn set_fft_forward(&mut self, on: bool) {
        self.config.fft_forward = on;
        self.fft = on.then(|| Fft2::new(&self.lattice));
    }

    /// Fill every weight block with `N(0, scale²)` draws.
    pub fn randomize_weights<R: Rng + ?Sized>(&mut self, rng: &mut R, scale: f64) {
        for name in [W_SIN, W_COS, W_CONST] {
            if let Some(w) = self.params.get_mut(name) {
                w.mapv_inplace(|_| scale * rng.sample::<f64, _>(StandardNormal));
            }
        }
    }

    fn w_sin(&self) -> ndarray::ArrayView3<'_, f64> {
        self.params.get(W_SIN).expect("w_sin").view().into_dimensionality::<Ix3>().expect("rank 3")
    }

    fn w_cos(&self) -> Option<ndarray::ArrayView3<'_, f64>> {
        self.params
            .get(W_COS)
            .map(|w| w.view().into_dimensionality::<Ix3>().expect("rank 3"))
    }

    fn w_const(&self) -> Option<ndarray::ArrayView2<'_, f64>> {
        self.params
            .get(W_CONST)
            .map(|w| w.view().into_dimensionality::<Ix2>().expect("rank 2"))
    }

    pub fn omega(&self) -> ArrayView1<'_, f64> {
        self.params
            .get(OMEGA)
            .expect("omega")
            .view()
            .into_dimensionality()
            .expect("rank 1")
    }

    /// Time slice of the kernel, `(displacement, f)` per block, plus the
    /// constant velocity contributed by the constant block.
    fn time_slice(&self, t: f64) -> Result<TimeSlice> {
        let k = self.config.kernel.weights(t)?;
        let d = self.lattice.sites();
        let f = self.config.frequencies;
        let active: Vec<(usize, f64)> = k.iter().copied().enumerate().filter(|(_, w)| *w != 0.0).collect();
        let mix = |w: ndarray::ArrayView3<'_, f64>| {
            let mut per_class = Array2::<f64>::zeros((self.classes.orbit_count(), f));
            for &(a, ka) in &active {
                per_class.scaled_add(ka, &w.slice(s![.., a, ..]));
            }
            let mut out = Array2::<f64>::zeros((d, f));
            for (disp, mut row) in out.outer_iter_mut().enumerate() {
                row.assign(&per_class.row(self.classes.orbit_id[disp]));
            }
            out
        };
        let mut kernels = vec![mix(self.w_sin())];
        if let Some(wc) = self.w_cos() {
            kernels.push(mix(wc));
        }
        let constant = match self.w_const() {
            Some(w) => {
                let mut c = 0.0;
                for disp in 0..d {
                    let cls = self.classes.orbit_id[disp];
                    for &(a, ka) in &active {
                        c += ka * w[[cls, a]];
                    }
                }
                c
            }
            None => 0.0,
        };
        Ok(TimeSlice {
            weights: k,
            kernels,
            constant,
        })
    }

    /// `M[(block, f, y), x] = kernel_block[y - x, f]`.
    fn kernel_matrix(&self, slice: &TimeSlice) -> Array2<f64> {
        let d = self.lattice.sites();
        let f = self.config.frequencies;
        let mut m = Array2::zeros((slice.kernels.len() * f * d, d));
        for (blk, kern) in slice.kernels.iter().enumerate() {
            for fi in 0..f {
                for y in 0..d {
                    let mut row = m.row_mut((blk * f + fi) * d + y);
                    for x in 0..d {
                        row[x] = kern[[self.disp[y * d + x] as usize, fi]];
                    }
                }
            }
        }
        m
    }

    /// Sine (and cosine) feature maps, `(batch, f * d)` each.
    fn features(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
        let (b, d) = x.dim();
        let f = self.config.frequencies;
        let omega = self.omega();
        let mut sin = Array2::zeros((b, f * d));
        let mut cos = Array2::zeros((b, f * d));
        for bi in 0..b {
            let row = x.row(bi);
            let mut srow = sin.row_mut(bi);
            for fi in 0..f {
                let w = omega[fi];
                for y in 0..d {
                    let (sv, cv) = trig::sin_cos(w * row[y]);
                    srow[fi * d + y] = sv;
                    cos[[bi, fi * d + y]] = cv;
                }
            }
        }
        (sin, cos)
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

    fn eval_batch(&self, x: ArrayView2<'_, f64>, t: f64) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check_batch(x)?;
        let slice = self.time_slice(t)?;
        let (sin, cos) = self.features(x);
        let (b, d) = x.dim();
        let f = self.config.frequencies;
        let mut v = if let Some(fft) = &self.fft {
            self.velocity_fft(fft, &slice, &sin, &cos, b, d)
        } else {
            let m = self.kernel_matrix(&slice);
            let fd = f * d;
            let mut v = sin.dot(&m.slice(s![0..fd, ..]));
            if slice.kernels.len() > 1 {
                v += &cos.dot(&m.slice(s![fd..2 * fd, ..]));
            }
            v
        };
        if slice.constant != 0.0 {
            v += slice.constant;
        }
        let omega = self.omega();
        let origin = 0;
        let mut div = Array1::zeros(b);
        for bi in 0..b {
            let mut acc = 0.0;
            for fi in 0..f {
                let cs: f64 = cos.slice(s![bi, fi * d..(fi + 1) * d]).sum();
                acc += slice.kernels[0][[origin, fi]] * omega[fi] * cs;
                if let Some(kc) = slice.kernels.get(1) {
                    let ss: f64 = sin.slice(s![bi, fi * d..(fi + 1) * d]).sum();
                    acc -= kc[[origin, fi]] * omega[fi] * ss;
                }
            }
            div[bi] = acc;
        }
        Ok((v, div))
    }

    fn velocity_fft(
        &self,
        fft: &Fft2,
        slice: &TimeSlice,
        sin: &Array2<f64>,
        cos: &Array2<f64>,
        b: usize,
        d: usize,
    ) -> Array2<f64> {
        let f = self.config.frequencies;
        let mut v = Array2::zeros((b, d));
        for bi in 0..b {
            for (blk, feats) in [sin, cos].into_iter().enumerate().take(slice.kernels.len()) {
                for fi in 0..f {
                    let kern = slice.kernels[blk].column(fi).to_vec();
                    let sig = feats.slice(s![bi, fi * d..(fi + 1) * d]).to_vec();
                    let c = fft.correlate(&kern, &sig);
                    let mut row = v.row_mut(bi);
                    for (o, cv) in row.iter_mut().zip(c) {
                        *o += cv;
                    }
                }
            }
        }
        v
    }

    fn vjp_batch(
        &self,
        x: ArrayView2<'_, f64>,
        t: f64,
        v_bar: ArrayView2<'_, f64>,
        div_bar: ArrayView1<'_, f64>,
        grads: &mut [ArrayD<f64>],
    ) -> Result<Array2<f64>> {
        let slice = self.time_slice(t)?;
        let (sin, cos) = self.features(x);
        let (b, d) = x.dim();
        let f = self.config.frequencies;
        let fd = f * d;
        let nblk = slice.kernels.len();
        let m = self.kernel_matrix(&slice);
        let omega = self.omega();

        // feature cotangents
        let feat_bar_sin = v_bar.dot(&m.slice(s![0..fd, ..]).t());
        let feat_bar_cos = (nblk > 1).then(|| v_bar.dot(&m.slice(s![fd..2 * fd, ..]).t()));

        // kernel cotangents: Kbar[blk][disp, f]
        let mut kbar: Vec<Array2<f64>> = vec![Array2::zeros((d, f)); nblk];
        for (blk, feats) in [&sin, &cos].into_iter().enumerate().take(nblk) {
            let mbar = feats.t().dot(&v_bar); // (f*d, d)
            let kb = &mut kbar[blk];
            for fi in 0..f {
                for y in 0..d {
                    let row = mbar.row(fi * d + y);
                    for xs in 0..d {
                        kb[[self.disp[y * d + xs] as usize, fi]] += row[xs];
                    }
                }
            }
        }
        // divergence terms hit the zero displacement only
        for fi in 0..f {
            let mut cs_w = 0.0;
            let mut ss_w = 0.0;
            for bi in 0..b {
                cs_w += div_bar[bi] * cos.slice(s![bi, fi * d..(fi + 1) * d]).sum();
                ss_w += div_bar[bi] * sin.slice(s![bi, fi * d..(fi + 1) * d]).sum();
            }
            kbar[0][[0, fi]] += omega[fi] * cs_w;
            if nblk > 1 {
                kbar[1][[0, fi]] -= omega[fi] * ss_w;
            }
        }

        // scatter to free parameters
        let active: Vec<(usize, f64)> = slice
            .weights
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, w)| *w != 0.0)
            .collect();
        let names = [W_SIN, W_COS];
        for (blk, kb) in kbar.iter().enumerate() {
            let idx = self.params.position(names[blk]).expect("weight block");
            let g = grads[idx].view_mut().into_dimensionality::<Ix3>().expect("rank 3");
            scatter_kernel(g, kb, &self.classes, &active);
        }
        if let Some(idx) = self.params.position(W_CONST) {
            let total = v_bar.sum();
            let mut g = grads[idx].view_mut().into_dimensionality::<Ix2>().expect("rank 2");
            for disp in 0..d {
                let cls = self.classes.orbit_id[disp];
                for &(a, ka) in &active {
                    g[[cls, a]] += ka * total;
                }
            }
        }

        // state and frequency cotangents
        let mut x_bar = Array2::zeros((b, d));
        let mut omega_bar = Array1::<f64>::zeros(f);
        let k0_sin: Vec<f64> = (0..f).map(|fi| slice.kernels[0][[0, fi]]).collect();
        let k0_cos: Vec<f64> = (0..f)
            .map(|fi| slice.kernels.get(1).map_or(0.0, |k| k[[0, fi]]))
            .collect();
        for bi in 0..b {
            let xr = x.row(bi);
            let db = div_bar[bi];
            for fi in 0..f {
                let w = omega[fi];
                for y in 0..d {
                    let j = fi * d + y;
                    let (sv, cv) = (sin[[bi, j]], cos[[bi, j]]);
                    let mut pre = feat_bar_sin[[bi, j]] * cv;
                    if let Some(fc) = &feat_bar_cos {
                        pre -= fc[[bi, j]] * sv;
                    }
                    // d/dφ of the divergence summand
                    let ddiv = -w * w * (k0_sin[fi] * sv + k0_cos[fi] * cv);
                    x_bar[[bi, y]] += w * pre + db * ddiv;
                    let xv = xr[y];
                    omega_bar[fi] += xv * pre
                        + db * (k0_sin[fi] * (cv - w * xv * sv) - k0_cos[fi] * (sv + w * xv * cv));
                }
            }
        }
        if self.config.train_omega {
            let idx = self.params.position(OMEGA).expect("omega");
            let mut g = grads[idx].view_mut().into_dimensionality::<ndarray::Ix1>().expect("rank 1");
            g += &omega_bar;
        }
        Ok(x_bar)
    }

    /// Velocity of a single field at time `t`.
    pub fn vector_field(&self, phi: ArrayView1<'_, f64>, t: f64) -> Result<Array1<f64>> {
        let x = phi.insert_axis(Axis(0));
        Ok(self.eval_batch(x, t)?.0.row(0).to_owned())
    }

    /// Analytic divergence of the velocity at a single field.
    pub fn divergence(&self, phi: ArrayView1<'_, f64>, t: f64) -> Result<f64> {
        let x = phi.insert_axis(Axis(0));
        Ok(self.eval_batch(x, t)?.1[0])
    }

    /// Velocities and divergences for a batch.
    pub fn velocity_batch(&self, x: ArrayView2<'_, f64>, t: f64) -> Result<(Array2<f64>, Array1<f64>)> {
        self.eval_batch(x, t)
    }

    pub fn integrate_forward(&self, z: ArrayView2<'_, f64>, steps: usize) -> Result<FlowResult> {
        self.check_batch(z)?;
        let sol = ode::integrate(&CnfField(self), z, 0.0, self.config.kernel.horizon, steps, false)?;
        Ok(FlowResult {
            output: sol.state,
            logdet: sol.logdet,
            steps,
        })
    }

    /// Backward-in-time RK4 of the same field; accumulates `-∫ ∇·g dt`.
    pub fn integrate_inverse(&self, phi: ArrayView2<'_, f64>, steps: usize) -> Result<FlowResult> {
        self.check_batch(phi)?;
        let sol = ode::integrate(&CnfField(self), phi, self.config.kernel.horizon, 0.0, steps, false)?;
        Ok(FlowResult {
            output: sol.state,
            logdet: sol.logdet,
            steps,
        })
    }
}

fn displacement_table(geo: &Lattice) -> Vec<u32> {
    let d = geo.sites();
    let mut t = vec![0u32; d * d];
    for y in 0..d {
        for x in 0..d {
            t[y * d + x] = geo.displacement(x, y) as u32;
        }
    }
    t
}

struct TimeSlice {
    weights: Vec<f64>,
    kernels: Vec<Array2<f64>>,
    constant: f64,
}

fn scatter_kernel(
    mut g: ndarray::ArrayViewMut3<'_, f64>,
    kbar: &Array2<f64>,
    classes: &OrbitTable,
    active: &[(usize, f64)],
) {
    let f = kbar.ncols();
    let mut per_class = Array2::<f64>::zeros((classes.orbit_count(), f));
    for (disp, row) in kbar.outer_iter().enumerate() {
        let mut dst = per_class.row_mut(classes.orbit_id[disp]);
        dst += &row;
    }
    for &(a, ka) in active {
        let mut ga = g.slice_mut(s![.., a, ..]);
        ga.scaled_add(ka, &per_class);
    }
}

struct CnfField<'a>(&'a Cnf);

impl BatchedField for CnfField<'_> {
    fn eval(&self, x: ArrayView2<'_, f64>, t: f64) -> Result<(Array2<f64>, Array1<f64>)> {
        self.0.eval_batch(x, t)
    }

    fn vjp(
        &self,
        x: ArrayView2<'_, f64>,
        t: f64,
        v_bar: ArrayView2<'_, f64>,
        div_bar: ArrayView1<'_, f64>,
        grads: &mut [ArrayD<f64>],
    ) -> Result<Array2<f64>> {
        self.0.vjp_batch(x, t, v_bar, div_bar, grads)
    }
}

impl Flow for Cnf {
    fn kind(&self) -> ModelKind {
        ModelKind::Cnf
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
        self.integrate_forward(z, self.config.steps)
    }

    fn inverse(&self, phi: ArrayView2<'_, f64>) -> Result<FlowResult> {
        self.integrate_inverse(phi, self.config.steps)
    }

    fn forward_backward(
        &self,
        z: ArrayView2<'_, f64>,
        out_bar: &OutputCotangent<'_>,
        logdet_bar: ArrayView1<'_, f64>,
    ) -> Result<(FlowResult, Vec<ArrayD<f64>>)> {
        self.check_batch(z)?;
        // the reverse pass is always dense; keep the forward consistent with it
        let dense = if self.fft.is_some() {
            let mut c = self.clone();
            c.set_fft_forward(false);
            Some(c)
        } else {
            None
        };
        let model = dense.as_ref().unwrap_or(self);
        let field = CnfField(model);
        let steps = self.config.steps;
        let sol = ode::integrate(&field, z, 0.0, self.config.kernel.horizon, steps, true)?;
        let x_bar = out_bar(sol.state.view())?;
        let mut grads = self.params.zeros_like();
        ode::backpropagate(
            &field,
            sol.trajectory.as_ref().expect("recorded"),
            x_bar,
            logdet_bar,
            &mut grads,
        )?;
        Ok((
            FlowResult {
                output: sol.state,
                logdet: sol.logdet,
                steps,
            },
            grads,
        ))
    }
}

/// Literal `Σ_{y,a,f} W_{xyaf} K_a(t) basis(ω_f φ(y))` with the weight
/// looked up per site pair; quadratic in the volume, for cross-checks.
pub fn vector_field_reference(cnf: &Cnf, phi: ArrayView1<'_, f64>, t: f64) -> Result<Array1<f64>> {
    let geo = cnf.lattice;
    let k = cnf.config.kernel.weights(t)?;
    let omega = cnf.omega();
    let w_sin: Array3<f64> = cnf.w_sin().to_owned();
    let w_cos = cnf.w_cos().map(|w| w.to_owned());
    let w_const = cnf.w_const().map(|w| w.to_owned());
    let d = geo.sites();
    let mut out = Array1::zeros(d);
    for x in 0..d {
        let mut acc = 0.0;
        for y in 0..d {
            let cls = cnf.classes.orbit_id[geo.displacement(x, y)];
            for (a, &ka) in k.iter().enumerate() {
                if ka == 0.0 {
                    continue;
                }
                for (fi, &w) in omega.iter().enumerate() {
                    acc += w_sin[[cls, a, fi]] * ka * (w * phi[y]).sin();
                    if let Some(wc) = &w_cos {
                        acc += wc[[cls, a, fi]] * ka * (w * phi[y]).cos();
                    }
                }
                if let Some(w0) = &w_const {
                    acc += w0[[cls, a]] * ka;
                }
            }
        }
        out[x] = acc;
    }
    Ok(out)
}
