//! Parameter containers and the gradient contract shared by both flows.
//!
//! Gradients are computed by hand-derived backward passes through the exact
//! discrete computation (unrolled RK4 steps for the continuous flow, layer by
//! layer for the coupling stack). This module owns the containers those
//! passes fill and a central-difference checker used to validate them.

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named dense array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: ArrayD<f64>,
}

/// Ordered, uniquely named parameter arrays with fixed shapes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParameterSet {
    params: Vec<Parameter>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: ArrayD<f64>) -> Result<()> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::InvalidInput(format!("duplicate parameter {name}")));
        }
        self.params.push(Parameter {
            name: name.to_string(),
            value,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<f64>> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub fn by_index(&self, i: usize) -> &Parameter {
        &self.params[i]
    }

    pub fn by_index_mut(&mut self, i: usize) -> &mut Parameter {
        &mut self.params[i]
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.shape().to_vec()))
            .collect()
    }

    /// Zero arrays shaped like every parameter.
    pub fn zeros_like(&self) -> Vec<ArrayD<f64>> {
        self.params
            .iter()
            .map(|p| ArrayD::zeros(IxDyn(p.value.shape())))
            .collect()
    }

    /// Read the scalar at flat coordinate `k` (concatenated in storage order).
    pub fn flat_get(&self, k: usize) -> f64 {
        let (i, j) = self.locate(k);
        self.params[i].value.as_slice_memory_order().expect("contiguous")[j]
    }

    pub fn flat_set(&mut self, k: usize, v: f64) {
        let (i, j) = self.locate(k);
        self.params[i]
            .value
            .as_slice_memory_order_mut()
            .expect("contiguous")[j] = v;
    }

    fn locate(&self, mut k: usize) -> (usize, usize) {
        for (i, p) in self.params.iter().enumerate() {
            if k < p.value.len() {
                return (i, k);
            }
            k -= p.value.len();
        }
        panic!("flat index out of range");
    }
}

/// Loss value plus one gradient array per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientRecord {
    pub loss: f64,
    pub grads: Vec<ArrayD<f64>>,
}

impl GradientRecord {
    pub fn zeros(params: &ParameterSet) -> Self {
        Self {
            loss: 0.0,
            grads: params.zeros_like(),
        }
    }

    pub fn flat_get(&self, k: usize) -> f64 {
        let mut k = k;
        for g in &self.grads {
            if k < g.len() {
                return g.as_slice_memory_order().expect("contiguous")[k];
            }
            k -= g.len();
        }
        panic!("flat index out of range");
    }

    /// `self += scale * other`, array by array.
    pub fn add_scaled(&mut self, other: &GradientRecord, scale: f64) {
        self.loss += scale * other.loss;
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.scaled_add(scale, b);
        }
    }

    pub fn check_against(&self, params: &ParameterSet) -> Result<()> {
        if self.grads.len() != params.len() {
            return Err(Error::shape(params.len(), self.grads.len()));
        }
        for (g, p) in self.grads.iter().zip(params.iter()) {
            if g.shape() != p.value.shape() {
                return Err(Error::shape(
                    format!("{} {:?}", p.name, p.value.shape()),
                    format!("{:?}", g.shape()),
                ));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    primitive: "backward",
                    detail: format!("gradient of {}", p.name),
                });
            }
        }
        Ok(())
    }
}

/// A scalar loss of the parameters with an exact gradient.
pub trait LossProgram {
    fn value(&self, params: &ParameterSet) -> Result<f64>;
    fn value_and_grad(&self, params: &ParameterSet) -> Result<(f64, GradientRecord)>;
}

/// Central differences of `program` at the listed flat coordinates.
pub fn finite_difference<P: LossProgram + ?Sized>(
    program: &P,
    params: &ParameterSet,
    coords: &[usize],
    step: f64,
) -> Result<Vec<f64>> {
    let mut work = params.clone();
    coords
        .iter()
        .map(|&k| {
            let orig = work.flat_get(k);
            work.flat_set(k, orig + step);
            let up = program.value(&work)?;
            work.flat_set(k, orig - step);
            let dn = program.value(&work)?;
            work.flat_set(k, orig);
            Ok((up - dn) / (2.0 * step))
        })
        .collect()
}

/// `a · P1 + b · P2` for two programs over the same parameters.
pub struct LinearCombination<'a, A: ?Sized, B: ?Sized> {
    pub a: f64,
    pub first: &'a A,
    pub b: f64,
    pub second: &'a B,
}

impl<A: LossProgram + ?Sized, B: LossProgram + ?Sized> LossProgram for LinearCombination<'_, A, B> {
    fn value(&self, params: &ParameterSet) -> Result<f64> {
        Ok(self.a * self.first.value(params)? + self.b * self.second.value(params)?)
    }

    fn value_and_grad(&self, params: &ParameterSet) -> Result<(f64, GradientRecord)> {
        let (v1, g1) = self.first.value_and_grad(params)?;
        let (v2, g2) = self.second.value_and_grad(params)?;
        let mut g = GradientRecord::zeros(params);
        g.add_scaled(&g1, self.a);
        g.add_scaled(&g2, self.b);
        let v = self.a * v1 + self.b * v2;
        g.loss = v;
        Ok((v, g))
    }
}
