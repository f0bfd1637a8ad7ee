//! Two-dimensional FFT helpers on the periodic lattice.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::lattice::Lattice;

/// Planned forward/inverse transforms for one lattice size.
pub struct Fft2 {
    side: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("side", &self.side).finish()
    }
}

impl Fft2 {
    pub fn new(geo: &Lattice) -> Self {
        let mut planner = FftPlanner::new();
        let side = geo.side();
        Self {
            side,
            forward: planner.plan_fft_forward(side),
            inverse: planner.plan_fft_inverse(side),
        }
    }

    fn run(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let l = self.side;
        // rows are contiguous
        plan.process(data);
        let mut col = vec![Complex64::new(0.0, 0.0); l];
        for j in 0..l {
            for i in 0..l {
                col[i] = data[i * l + j];
            }
            plan.process(&mut col);
            for i in 0..l {
                data[i * l + j] = col[i];
            }
        }
    }

    /// Unnormalized forward transform, `X(k) = Σ_x x(x) e^{-2πi k·x/L}`.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.forward);
    }

    /// Inverse transform including the `1/L^2` normalization.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inverse);
        let n = (self.side * self.side) as f64;
        for v in data.iter_mut() {
            *v /= n;
        }
    }

    /// Circular convolution `out[x] = Σ_d kernel[d] · signal[x + d]`.
    pub fn correlate(&self, kernel: &[f64], signal: &[f64]) -> Vec<f64> {
        let mut k: Vec<Complex64> = kernel.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut s: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut k);
        self.forward(&mut s);
        for (a, b) in s.iter_mut().zip(&k) {
            *a *= b.conj();
        }
        self.inverse(&mut s);
        s.into_iter().map(|c| c.re).collect()
    }

    /// `out[x] = Σ_y s[y] · s[y + x]`.
    pub fn autocorrelation(&self, signal: &[f64]) -> Vec<f64> {
        let mut s: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut s);
        for a in s.iter_mut() {
            *a = Complex64::new(a.norm_sqr(), 0.0);
        }
        self.inverse(&mut s);
        s.into_iter().map(|c| c.re).collect()
    }
}
