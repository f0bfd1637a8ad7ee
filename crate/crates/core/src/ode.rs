//! Fixed-step classical RK4 on the augmented state `(x, ℓ)` with
//! `dx/dt = g(x, t)` and `dℓ/dt = ∇·g(x, t)`, plus the exact reverse pass
//! through the unrolled steps.

use ndarray::{Array1, Array2, ArrayD, ArrayView1, ArrayView2, Zip};

use crate::error::{Error, Result};

/// A vector field on batches of states, with its divergence.
pub trait BatchedField {
    /// Velocity `(batch, dim)` and divergence `(batch)` at time `t`.
    fn eval(&self, x: ArrayView2<'_, f64>, t: f64) -> Result<(Array2<f64>, Array1<f64>)>;

    /// Pull back cotangents `(v̄, d̄iv)` to the state, accumulating parameter
    /// cotangents into `grads`.
    fn vjp(
        &self,
        x: ArrayView2<'_, f64>,
        t: f64,
        v_bar: ArrayView2<'_, f64>,
        div_bar: ArrayView1<'_, f64>,
        grads: &mut [ArrayD<f64>],
    ) -> Result<Array2<f64>>;
}

/// Stage inputs recorded during a forward solve.
#[derive(Debug, Clone)]
pub struct Trajectory {
    t0: f64,
    h: f64,
    /// Four stage inputs per step.
    stages: Vec<[Array2<f64>; 4]>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.stages.len()
    }
}

/// Output of [`integrate`].
#[derive(Debug, Clone)]
pub struct Solution {
    pub state: Array2<f64>,
    /// `∫ ∇·g dt` along each trajectory, signed by the direction of time.
    pub logdet: Array1<f64>,
    pub trajectory: Option<Trajectory>,
}

fn axpy(x: &Array2<f64>, a: f64, k: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    out.scaled_add(a, k);
    out
}

/// Integrate from `t0` to `t1` in `steps` equal steps (`t1 < t0` runs backward).
pub fn integrate<F: BatchedField + ?Sized>(
    field: &F,
    x0: ArrayView2<'_, f64>,
    t0: f64,
    t1: f64,
    steps: usize,
    record: bool,
) -> Result<Solution> {
    if steps == 0 {
        return Err(Error::InvalidInput("RK4 needs at least one step".into()));
    }
    let h = (t1 - t0) / steps as f64;
    let mut x = x0.to_owned();
    let mut ell = Array1::zeros(x.nrows());
    let mut stages = Vec::with_capacity(if record { steps } else { 0 });
    for n in 0..steps {
        let t = t0 + n as f64 * h;
        let (k1, d1) = field.eval(x.view(), t)?;
        let y2 = axpy(&x, 0.5 * h, &k1);
        let (k2, d2) = field.eval(y2.view(), t + 0.5 * h)?;
        let y3 = axpy(&x, 0.5 * h, &k2);
        let (k3, d3) = field.eval(y3.view(), t + 0.5 * h)?;
        let y4 = axpy(&x, h, &k3);
        let (k4, d4) = field.eval(y4.view(), t + h)?;
        let next = {
            let mut nx = x.clone();
            Zip::from(&mut nx)
                .and(&k1)
                .and(&k2)
                .and(&k3)
                .and(&k4)
                .for_each(|o: &mut f64, &a, &b, &c, &d| *o += h / 6.0 * (a + 2.0 * b + 2.0 * c + d));
            nx
        };
        Zip::from(&mut ell)
            .and(&d1)
            .and(&d2)
            .and(&d3)
            .and(&d4)
            .for_each(|o: &mut f64, &a, &b, &c, &d| *o += h / 6.0 * (a + 2.0 * b + 2.0 * c + d));
        if next.iter().any(|v| !v.is_finite()) || ell.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                step: n,
                detail: format!("non-finite state at t = {:.6}", t + h),
            });
        }
        if record {
            stages.push([x, y2, y3, y4]);
        }
        x = next;
    }
    Ok(Solution {
        state: x,
        logdet: ell,
        trajectory: record.then_some(Trajectory { t0, h, stages }),
    })
}

/// Reverse pass through the recorded steps. `x_bar` and `ell_bar` are the
/// cotangents of the final state and accumulated divergence. Returns the
/// cotangent of the initial state.
pub fn backpropagate<F: BatchedField + ?Sized>(
    field: &F,
    traj: &Trajectory,
    x_bar: Array2<f64>,
    ell_bar: ArrayView1<'_, f64>,
    grads: &mut [ArrayD<f64>],
) -> Result<Array2<f64>> {
    let h = traj.h;
    let mut a = x_bar;
    let d_sixth = ell_bar.mapv(|v| v * h / 6.0);
    let d_third = ell_bar.mapv(|v| v * h / 3.0);
    for (n, [y1, y2, y3, y4]) in traj.stages.iter().enumerate().rev() {
        let t = traj.t0 + n as f64 * h;
        let mut x_acc = a.clone();

        let k4_bar = a.mapv(|v| v * h / 6.0);
        let y4_bar = field.vjp(y4.view(), t + h, k4_bar.view(), d_sixth.view(), grads)?;
        x_acc += &y4_bar;

        let mut k3_bar = a.mapv(|v| v * h / 3.0);
        k3_bar.scaled_add(h, &y4_bar);
        let y3_bar = field.vjp(y3.view(), t + 0.5 * h, k3_bar.view(), d_third.view(), grads)?;
        x_acc += &y3_bar;

        let mut k2_bar = a.mapv(|v| v * h / 3.0);
        k2_bar.scaled_add(0.5 * h, &y3_bar);
        let y2_bar = field.vjp(y2.view(), t + 0.5 * h, k2_bar.view(), d_third.view(), grads)?;
        x_acc += &y2_bar;

        let mut k1_bar = a.mapv(|v| v * h / 6.0);
        k1_bar.scaled_add(0.5 * h, &y2_bar);
        let y1_bar = field.vjp(y1.view(), t, k1_bar.view(), d_sixth.view(), grads)?;
        x_acc += &y1_bar;

        a = x_acc;
    }
    Ok(a)
}
