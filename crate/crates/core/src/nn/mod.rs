//! Small dense / 1-D convolutional network engine.
//!
//! Everything is `f64` and batched: a batch is an `Array2` with one sample per
//! row. Convolution inputs are flattened channel-major, i.e. element
//! `(channel c, time t)` of a sample lives at column `c * length + t`.

mod adam;
pub mod checkpoint;
mod layers;
mod params;
mod train;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use layers::{backward, backward_from_output, backward_with_input, forward, forward_batch, forward_trace, loss_and_gradient, Loss, Trace};
pub use params::{LayerParams, ParamSet};
pub use train::{fit, fit_with, Dataset, FitConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    #[serde(rename = "none")]
    Identity,
    /// Softmax applied independently over consecutive groups of `group` outputs.
    Softmax { group: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum LayerKind {
    Dense,
    /// Stride 1, no padding.
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        length: usize,
        kernel: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input_size: usize,
    pub output_size: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(input_size: usize, output_size: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Dense,
            input_size,
            output_size,
            activation,
        }
    }

    pub fn conv1d(
        in_channels: usize,
        out_channels: usize,
        length: usize,
        kernel: usize,
        activation: Activation,
    ) -> Self {
        let out_len = (length + 1).saturating_sub(kernel);
        Self {
            kind: LayerKind::Conv1d {
                in_channels,
                out_channels,
                length,
                kernel,
            },
            input_size: in_channels * length,
            output_size: out_channels * out_len,
            activation,
        }
    }

    /// Shape of the (weight, bias) pair this layer owns.
    pub fn weight_shape(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::Dense => (self.output_size, self.input_size),
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (out_channels, in_channels * kernel),
        }
    }

    pub fn bias_len(&self) -> usize {
        self.weight_shape().0
    }

    fn fan_in(&self) -> usize {
        self.weight_shape().1
    }

    fn validate(&self, index: usize) -> Result<()> {
        if let LayerKind::Conv1d {
            in_channels,
            out_channels,
            length,
            kernel,
        } = self.kind
        {
            if kernel == 0 || kernel > length {
                return Err(Error::Shape(format!(
                    "layer {index}: conv kernel {kernel} does not fit length {length}"
                )));
            }
            if self.input_size != in_channels * length
                || self.output_size != out_channels * (length - kernel + 1)
            {
                return Err(Error::Shape(format!(
                    "layer {index}: conv sizes inconsistent with channel layout"
                )));
            }
        }
        if let Activation::Softmax { group } = self.activation {
            if group == 0 || self.output_size % group != 0 {
                return Err(Error::Config(format!(
                    "layer {index}: softmax group {group} does not divide width {}",
                    self.output_size
                )));
            }
        }
        Ok(())
    }
}

/// Ordered layer list; adjacent layers are checked for compatible widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("architecture has no layers".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            layer.validate(i)?;
            if matches!(layer.activation, Activation::Softmax { .. }) && i + 1 != layers.len() {
                return Err(Error::Config(format!(
                    "layer {i}: softmax is only allowed on the final layer"
                )));
            }
            if i > 0 && layers[i - 1].output_size != layer.input_size {
                return Err(Error::Shape(format!(
                    "layer {i} expects {} inputs but layer {} produces {}",
                    layer.input_size,
                    i - 1,
                    layers[i - 1].output_size
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Fully connected stack `widths[0] -> widths[1] -> ...` with ReLU on every
    /// hidden layer and `last` on the output layer.
    pub fn mlp(widths: &[usize], last: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config("an MLP needs at least two widths".into()));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { last } else { Activation::Relu };
                LayerSpec::dense(widths[i], widths[i + 1], act)
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].output_size
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                let (r, c) = l.weight_shape();
                r * c + l.bias_len()
            })
            .sum()
    }

    /// He-style uniform initialisation, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`,
    /// zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        ParamSet::new(
            self.layers
                .iter()
                .map(|l| LayerParams::he_uniform(l.weight_shape(), l.fan_in(), rng))
                .collect(),
        )
    }

    pub fn zeros(&self) -> ParamSet {
        ParamSet::new(
            self.layers
                .iter()
                .map(|l| LayerParams::zeros(l.weight_shape()))
                .collect(),
        )
    }

    pub(crate) fn check_params(&self, params: &ParamSet) -> Result<()> {
        if params.layers().len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "parameter set has {} layers, architecture {}",
                params.layers().len(),
                self.layers.len()
            )));
        }
        for (i, (spec, p)) in self.layers.iter().zip(params.layers()).enumerate() {
            if p.weight.dim() != spec.weight_shape() || p.bias.len() != spec.bias_len() {
                return Err(Error::Shape(format!(
                    "layer {i}: weight {:?} / bias {} do not match spec {:?} / {}",
                    p.weight.dim(),
                    p.bias.len(),
                    spec.weight_shape(),
                    spec.bias_len()
                )));
            }
        }
        Ok(())
    }
}
