//! Connected two-point function, susceptibility and pole-mass estimators,
//! with jackknife errors.

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::spectral::Fft2;

/// `Ĝ(x)` for every displacement `x` (site index of the displacement).
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPointEstimate {
    pub lattice: Lattice,
    pub g: Array1<f64>,
    pub samples: usize,
}

/// First and second moments of a set of samples, enough to form `Ĝ`.
#[derive(Debug, Clone)]
struct Moments {
    count: usize,
    /// `Σ_i φ_i(y)`.
    sum: Array1<f64>,
    /// `Σ_i Σ_y φ_i(y) φ_i(y + x)`.
    auto: Array1<f64>,
}

impl Moments {
    fn of(samples: ArrayView2<'_, f64>, fft: &Fft2) -> Self {
        let d = samples.ncols();
        let mut sum = Array1::zeros(d);
        let mut auto = Array1::zeros(d);
        for row in samples.outer_iter() {
            sum += &row;
            let r = row.to_vec();
            for (a, v) in auto.iter_mut().zip(fft.autocorrelation(&r)) {
                *a += v;
            }
        }
        Self {
            count: samples.nrows(),
            sum,
            auto,
        }
    }

    fn minus(&self, other: &Moments) -> Moments {
        Moments {
            count: self.count - other.count,
            sum: &self.sum - &other.sum,
            auto: &self.auto - &other.auto,
        }
    }

    /// `Ĝ(x) = (1/D) Σ_y [⟨φ(y)φ(y+x)⟩ − 2 φ̄(y)φ̄(y+x) + φ̄(y)φ̄(y+x)]`, the
    /// cross terms already averaged over samples.
    fn estimate(&self, lattice: Lattice, fft: &Fft2) -> Result<TwoPointEstimate> {
        if self.count < 2 {
            return Err(Error::Estimator(format!("need at least 2 samples, got {}", self.count)));
        }
        let n = self.count as f64;
        let d = lattice.sites() as f64;
        let mean = (&self.sum / n).to_vec();
        let mm = fft.autocorrelation(&mean);
        let g = self
            .auto
            .iter()
            .zip(&mm)
            .map(|(a, m)| (a / n - 2.0 * m + m) / d)
            .collect();
        Ok(TwoPointEstimate {
            lattice,
            g,
            samples: self.count,
        })
    }
}

fn check_samples(samples: ArrayView2<'_, f64>, lattice: &Lattice) -> Result<()> {
    if samples.ncols() != lattice.sites() {
        return Err(Error::shape(
            format!("(n, {})", lattice.sites()),
            format!("{:?}", samples.dim()),
        ));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Estimator("samples contain non-finite values".into()));
    }
    Ok(())
}

/// Connected two-point function averaged over the lattice.
pub fn g_hat(samples: ArrayView2<'_, f64>, lattice: &Lattice) -> Result<TwoPointEstimate> {
    check_samples(samples, lattice)?;
    let fft = Fft2::new(lattice);
    Moments::of(samples, &fft).estimate(*lattice, &fft)
}

pub fn chi2_hat(est: &TwoPointEstimate) -> f64 {
    est.g.sum()
}

/// Row average `G_c(x₂) = (1/L) Σ_{x₁} Ĝ(x₁, x₂)`, `x₂` taken mod `L`.
pub fn g_c(est: &TwoPointEstimate, x2: i64) -> f64 {
    let l = est.lattice.side();
    let col = est.lattice.wrap(x2);
    (0..l).map(|x1| est.g[est.lattice.index((x1, col))]).sum::<f64>() / l as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoleMass {
    /// Average of `(G_c(x₂−1) + G_c(x₂+1)) / (2 G_c(x₂))`; this is `cosh m`
    /// for a pure cosh correlator.
    Verbatim,
    /// Average of `arccosh` of the same ratios: the effective mass.
    Arccosh,
}

/// Pole mass over the interior rows `x₂ = 1..L−1`.
pub fn pole_mass_hat(est: &TwoPointEstimate, variant: PoleMass) -> Result<f64> {
    let l = est.lattice.side() as i64;
    if l < 2 {
        return Err(Error::Estimator("pole mass needs L >= 2".into()));
    }
    let gc: Vec<f64> = (0..l).map(|x2| g_c(est, x2)).collect();
    let at = |x: i64| gc[x.rem_euclid(l) as usize];
    let mut acc = 0.0;
    for x2 in 1..l {
        let mid = at(x2);
        if !(mid > 0.0) {
            return Err(Error::Estimator(format!("G_c({x2}) = {mid} is not positive")));
        }
        let ratio = (at(x2 - 1) + at(x2 + 1)) / (2.0 * mid);
        acc += match variant {
            PoleMass::Verbatim => ratio,
            PoleMass::Arccosh => {
                if ratio < 1.0 {
                    return Err(Error::Estimator(format!(
                        "correlator ratio {ratio} < 1 at x2 = {x2}; effective mass undefined"
                    )));
                }
                ratio.acosh()
            }
        };
    }
    Ok(acc / (l - 1) as f64)
}

/// Value and jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// Leave-one-block-out jackknife of `stat` applied to `Ĝ`.
pub fn jackknife(
    samples: ArrayView2<'_, f64>,
    lattice: &Lattice,
    blocks: usize,
    stat: &dyn Fn(&TwoPointEstimate) -> Result<f64>,
) -> Result<Estimate> {
    check_samples(samples, lattice)?;
    let n = samples.nrows();
    if blocks < 2 || n < 2 * blocks {
        return Err(Error::Estimator(format!("{n} samples cannot form {blocks} jackknife blocks")));
    }
    let fft = Fft2::new(lattice);
    let per_block: Vec<Moments> = (0..blocks)
        .map(|b| {
            let (lo, hi) = (b * n / blocks, (b + 1) * n / blocks);
            Moments::of(samples.slice(ndarray::s![lo..hi, ..]), &fft)
        })
        .collect();
    let mut total = per_block[0].clone();
    for m in &per_block[1..] {
        total.count += m.count;
        total.sum += &m.sum;
        total.auto += &m.auto;
    }
    let value = stat(&total.estimate(*lattice, &fft)?)?;
    let leave_out: Vec<f64> = per_block
        .iter()
        .map(|m| stat(&total.minus(m).estimate(*lattice, &fft)?))
        .collect::<Result<_>>()?;
    let k = blocks as f64;
    let mean = leave_out.iter().sum::<f64>() / k;
    let var = leave_out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() * (k - 1.0) / k;
    Ok(Estimate {
        value,
        error: var.sqrt(),
    })
}

/// Summary written by the `measure` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementReport {
    pub side: usize,
    pub samples: usize,
    pub blocks: usize,
    pub chi2: Estimate,
    /// Arccosh pole mass; absent when the correlator makes it undefined.
    pub pole_mass: Option<Estimate>,
    pub pole_mass_verbatim: Option<Estimate>,
    /// `m_p · L` from the arccosh variant.
    pub mp_l: Option<Estimate>,
    pub notes: Vec<String>,
}

pub fn measure(samples: ArrayView2<'_, f64>, lattice: &Lattice, blocks: usize) -> Result<MeasurementReport> {
    let chi2 = jackknife(samples, lattice, blocks, &|e| Ok(chi2_hat(e)))?;
    let mut notes = Vec::new();
    let mut mass = |variant: PoleMass| match jackknife(samples, lattice, blocks, &|e| pole_mass_hat(e, variant)) {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("{variant:?} pole mass: {e}"));
            None
        }
    };
    let pole_mass = mass(PoleMass::Arccosh);
    let pole_mass_verbatim = mass(PoleMass::Verbatim);
    let l = lattice.side() as f64;
    Ok(MeasurementReport {
        side: lattice.side(),
        samples: samples.nrows(),
        blocks,
        chi2,
        pole_mass,
        pole_mass_verbatim,
        mp_l: pole_mass.map(|e| Estimate {
            value: e.value * l,
            error: e.error * l,
        }),
        notes,
    })
}
