//! The lattice φ⁴ action and its Gaussian (λ = 0) limit.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::spectral::Fft2;

/// A single real field on the lattice, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    lattice: Lattice,
    values: Array1<f64>,
}

impl Field {
    pub fn new(lattice: Lattice, values: Array1<f64>) -> Result<Self> {
        if values.len() != lattice.sites() {
            return Err(Error::shape(lattice.sites(), values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("field contains non-finite values".into()));
        }
        Ok(Self { lattice, values })
    }

    pub fn zeros(lattice: Lattice) -> Self {
        Self {
            lattice,
            values: Array1::zeros(lattice.sites()),
        }
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array1<f64> {
        self.values
    }

    pub fn at(&self, site: (usize, usize)) -> f64 {
        self.values[self.lattice.index(site)]
    }

    /// `(g φ)(x) = φ(g⁻¹ x)`.
    pub fn transformed(&self, g: &crate::lattice::GroupElement) -> Field {
        let v = crate::lattice::apply_symmetry_to_values(
            g,
            self.values.as_slice().expect("contiguous"),
            &self.lattice,
        )
        .expect("shape checked at construction");
        Field {
            lattice: self.lattice,
            values: Array1::from(v),
        }
    }
}

/// Apply a group element to every row of a `(batch, sites)` array.
pub fn transform_batch(
    g: &crate::lattice::GroupElement,
    batch: ArrayView2<'_, f64>,
    geo: &Lattice,
) -> Array2<f64> {
    let perm = g.permutation(geo);
    let mut out = Array2::zeros(batch.raw_dim());
    for (src, mut dst) in batch.outer_iter().zip(out.outer_iter_mut()) {
        for (y, &gy) in perm.iter().enumerate() {
            dst[gy] = src[y];
        }
    }
    out
}

/// Which sign the kinetic operator carries. Only the first is physical;
/// the flipped convention exists to demonstrate that validation detects it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianConvention {
    /// `Δ = degree - adjacency`, positive semidefinite.
    #[default]
    DegreeMinusAdjacency,
    AdjacencyMinusDegree,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Couplings {
    pub m_sq: f64,
    pub lambda: f64,
}

impl Couplings {
    pub fn new(m_sq: f64, lambda: f64) -> Result<Self> {
        let c = Self { m_sq, lambda };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.m_sq.is_finite() || !self.lambda.is_finite() {
            return Err(Error::InvalidInput("couplings must be finite".into()));
        }
        if self.lambda > 0.0 || (self.lambda == 0.0 && self.m_sq > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "non-normalizable couplings m_sq={}, lambda={}",
                self.m_sq, self.lambda
            )))
        }
    }
}

/// `S(φ) = φᵀΔφ + Σ_x m² φ(x)² + λ φ(x)⁴` on a periodic lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phi4Action {
    pub lattice: Lattice,
    pub couplings: Couplings,
    pub convention: LaplacianConvention,
}

impl Phi4Action {
    pub fn new(lattice: Lattice, couplings: Couplings) -> Result<Self> {
        couplings.validate()?;
        Ok(Self {
            lattice,
            couplings,
            convention: LaplacianConvention::default(),
        })
    }

    pub fn with_convention(mut self, convention: LaplacianConvention) -> Self {
        self.convention = convention;
        self
    }

    fn kinetic_sign(&self) -> f64 {
        match self.convention {
            LaplacianConvention::DegreeMinusAdjacency => 1.0,
            LaplacianConvention::AdjacencyMinusDegree => -1.0,
        }
    }

    fn check(&self, phi: &[f64]) -> Result<()> {
        if phi.len() != self.lattice.sites() {
            return Err(Error::shape(self.lattice.sites(), phi.len()));
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                primitive: "action",
                detail: "field contains non-finite values".into(),
            });
        }
        Ok(())
    }

    /// Evaluate on a row-major slice of length `L^2`.
    pub fn eval(&self, phi: &[f64]) -> Result<f64> {
        self.check(phi)?;
        let geo = &self.lattice;
        let Couplings { m_sq, lambda } = self.couplings;
        let sign = self.kinetic_sign();
        let mut s = 0.0;
        for (x, &p) in phi.iter().enumerate() {
            let nb = geo.neighbours(x);
            // forward bonds only: each unordered pair once
            let d1 = p - phi[nb[0]];
            let d2 = p - phi[nb[2]];
            let p2 = p * p;
            s += sign * (d1 * d1 + d2 * d2) + m_sq * p2 + lambda * p2 * p2;
        }
        Ok(s)
    }

    pub fn action(&self, phi: &Field) -> Result<f64> {
        self.eval(phi.values.as_slice().expect("contiguous"))
    }

    /// `-S(φ)`; `log Z` never enters density ratios.
    pub fn log_unnormalized_density(&self, phi: &Field) -> Result<f64> {
        Ok(-self.action(phi)?)
    }

    /// `∂S/∂φ(x) = 2(Δφ)(x) + 2m²φ(x) + 4λφ(x)³`.
    pub fn gradient(&self, phi: &[f64]) -> Result<Vec<f64>> {
        self.check(phi)?;
        let geo = &self.lattice;
        let Couplings { m_sq, lambda } = self.couplings;
        let sign = self.kinetic_sign();
        Ok(phi
            .iter()
            .enumerate()
            .map(|(x, &p)| {
                let nb = geo.neighbours(x);
                let lap = 4.0 * p - phi[nb[0]] - phi[nb[1]] - phi[nb[2]] - phi[nb[3]];
                2.0 * sign * lap + 2.0 * m_sq * p + 4.0 * lambda * p * p * p
            })
            .collect())
    }

    /// One action per row of a `(batch, sites)` array.
    pub fn eval_batch(&self, phi: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let mut out = Array1::zeros(phi.nrows());
        for (o, row) in out.iter_mut().zip(phi.outer_iter()) {
            *o = self.eval(row.as_slice().ok_or_else(|| Error::InvalidInput("non-contiguous row".into()))?)?;
        }
        Ok(out)
    }

    /// Actions and gradients for a batch.
    pub fn eval_and_grad_batch(&self, phi: ArrayView2<'_, f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        let mut s = Array1::zeros(phi.nrows());
        let mut g = Array2::zeros(phi.raw_dim());
        for ((o, row), mut grow) in s.iter_mut().zip(phi.outer_iter()).zip(g.axis_iter_mut(Axis(0))) {
            let r = row.to_vec();
            *o = self.eval(&r)?;
            grow.assign(&Array1::from(self.gradient(&r)?));
        }
        Ok((s, g))
    }
}

/// Two-point susceptibility of the Gaussian density `exp(-φᵀΔφ - m² Σφ²)`.
pub fn free_theory_chi2(m_sq: f64, _geo: &Lattice) -> Result<f64> {
    if !(m_sq > 0.0) {
        return Err(Error::Domain(format!("free theory needs m_sq > 0, got {m_sq}")));
    }
    Ok(1.0 / (2.0 * m_sq))
}

/// Exact sampler for the λ = 0 theory, diagonal in momentum space.
#[derive(Debug)]
pub struct FreeFieldSampler {
    lattice: Lattice,
    fft: Fft2,
    amplitude: Vec<f64>,
}

impl FreeFieldSampler {
    pub fn new(lattice: Lattice, m_sq: f64) -> Result<Self> {
        if !(m_sq > 0.0) {
            return Err(Error::Domain(format!("free theory needs m_sq > 0, got {m_sq}")));
        }
        let l = lattice.side();
        let tau = std::f64::consts::TAU;
        let amplitude = (0..lattice.sites())
            .map(|i| {
                let (k1, k2) = lattice.coords(i);
                let lap = 4.0 - 2.0 * (tau * k1 as f64 / l as f64).cos() - 2.0 * (tau * k2 as f64 / l as f64).cos();
                let var = 1.0 / (2.0 * (lap + m_sq));
                var.sqrt()
            })
            .collect();
        Ok(Self {
            lattice,
            fft: Fft2::new(&lattice),
            amplitude,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<f64> {
        let n = self.lattice.sites();
        let norm = (n as f64).sqrt();
        // Re of a complex field with spectrum c_k has covariance C.
        let mut buf: Vec<Complex64> = self
            .amplitude
            .iter()
            .map(|&a| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(re, im) * a * norm
            })
            .collect();
        self.fft.inverse(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Array2<f64> {
        let mut out = Array2::zeros((n, self.lattice.sites()));
        for mut row in out.outer_iter_mut() {
            row.assign(&self.sample(rng));
        }
        out
    }
}
