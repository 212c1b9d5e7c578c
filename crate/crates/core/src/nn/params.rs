use std::ops::{Add, Mul, Sub};

use ndarray::{Array1, Array2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LayerParams {
    pub fn zeros((rows, cols): (usize, usize)) -> Self {
        Self {
            weight: Array2::zeros((rows, cols)),
            bias: Array1::zeros(rows),
        }
    }

    pub(crate) fn he_uniform<R: Rng + ?Sized>(
        (rows, cols): (usize, usize),
        fan_in: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound));
        Self {
            weight,
            bias: Array1::zeros(rows),
        }
    }
}

/// All weights and biases of one network, in layer order.
///
/// Supports the elementwise arithmetic needed for parameter-space updates
/// such as `phi + eta * (theta - phi)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    layers: Vec<LayerParams>,
}

impl ParamSet {
    pub fn new(layers: Vec<LayerParams>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<LayerParams> {
        self.layers
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams::zeros(l.weight.dim()))
                .collect(),
        }
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.len() == b.bias.len())
    }

    fn ensure_same_shape(&self, other: &ParamSet) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape("parameter sets have different shapes".into()))
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ParamSet) -> Result<()> {
        self.ensure_same_shape(other)?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.scaled_add(alpha, &b.weight);
            a.bias.scaled_add(alpha, &b.bias);
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for l in &mut self.layers {
            l.weight *= alpha;
            l.bias *= alpha;
        }
    }

    pub fn try_add(&self, other: &ParamSet) -> Result<ParamSet> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    pub fn try_sub(&self, other: &ParamSet) -> Result<ParamSet> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn dot(&self, other: &ParamSet) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| {
                Zip::from(&a.weight).and(&b.weight).fold(0.0, |acc, x, y| acc + x * y)
                    + a.bias.dot(&b.bias)
            })
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &ParamSet) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .values()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    /// Flat iterator over every scalar, weights before biases, layer by layer.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().collect()
    }

    /// Mutable access to the scalar at position `index` of [`ParamSet::values`].
    pub fn value_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for l in &mut self.layers {
            let w = l.weight.len();
            if index < w {
                return l.weight.as_slice_mut().map(|s| &mut s[index]);
            }
            index -= w;
            let b = l.bias.len();
            if index < b {
                return Some(&mut l.bias[index]);
            }
            index -= b;
        }
        None
    }
}

impl Add for &ParamSet {
    type Output = ParamSet;

    /// Panics on shape mismatch; use [`ParamSet::try_add`] for a fallible form.
    fn add(self, rhs: &ParamSet) -> ParamSet {
        self.try_add(rhs).expect("ParamSet shapes differ")
    }
}

impl Sub for &ParamSet {
    type Output = ParamSet;

    fn sub(self, rhs: &ParamSet) -> ParamSet {
        self.try_sub(rhs).expect("ParamSet shapes differ")
    }
}

impl Mul<f64> for &ParamSet {
    type Output = ParamSet;

    fn mul(self, rhs: f64) -> ParamSet {
        let mut out = self.clone();
        out.scale(rhs);
        out
    }
}
