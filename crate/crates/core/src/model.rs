//! Layer graph and quantized model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::QuantMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Fc,
    /// Convolution already lowered to a matrix; the layer input is a
    /// sequence of `positions` patch vectors of length `m` each.
    Conv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Per-channel max over all output vectors of the layer.
    Max,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Weight matrix height (input features per vector).
    pub m: usize,
    /// Weight matrix width (output channels).
    pub n: usize,
    pub activation: Activation,
    pub pooling: Pooling,
    /// Input vectors per inference; always 1 for `Fc`.
    pub positions: usize,
}

impl LayerSpec {
    pub fn fc(m: usize, n: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Fc,
            m,
            n,
            activation,
            pooling: Pooling::None,
            positions: 1,
        }
    }

    pub fn conv(positions: usize, m: usize, n: usize, activation: Activation, pooling: Pooling) -> Self {
        Self {
            kind: LayerKind::Conv,
            m,
            n,
            activation,
            pooling,
            positions,
        }
    }

    pub fn input_width(&self) -> usize {
        self.positions * self.m
    }

    /// Output vectors after pooling.
    pub fn output_vectors(&self) -> usize {
        match self.pooling {
            Pooling::Max => 1,
            Pooling::None => self.positions,
        }
    }

    pub fn output_width(&self) -> usize {
        self.output_vectors() * self.n
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub layers: Vec<LayerSpec>,
}

impl ModelDescriptor {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        let d = Self { layers };
        d.validate()?;
        Ok(d)
    }

    /// Fully connected ReLU stack; the last layer has no activation.
    pub fn mlp(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("an MLP needs at least two widths".into()));
        }
        let last = dims.len() - 2;
        Self::new(
            dims.windows(2)
                .enumerate()
                .map(|(i, w)| {
                    let act = if i == last { Activation::None } else { Activation::Relu };
                    LayerSpec::fc(w[0], w[1], act)
                })
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("model must have at least one layer".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.m == 0 || l.n == 0 || l.positions == 0 {
                return Err(Error::Config(format!("layer {i}: zero-sized dimension")));
            }
            if l.kind == LayerKind::Fc && l.positions != 1 {
                return Err(Error::Config(format!("layer {i}: fc layers take one input vector")));
            }
            if !l.positions.is_power_of_two() || l.positions > 1 << 15 {
                return Err(Error::Config(format!(
                    "layer {i}: positions must be a power of two <= 32768"
                )));
            }
        }
        for (i, w) in self.layers.windows(2).enumerate() {
            if w[0].output_width() != w[1].input_width() {
                return Err(Error::Config(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    w[0].output_width(),
                    i + 1,
                    w[1].input_width()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].output_width()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantLayer {
    pub spec: LayerSpec,
    pub weights: QuantMatrix,
    /// Arithmetic right shift applied before the `u8` requantization.
    pub shift: i8,
}

/// A quantized model: descriptor plus per-layer weights and shifts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantModel {
    pub layers: Vec<QuantLayer>,
}

impl QuantModel {
    pub fn new(layers: Vec<QuantLayer>) -> Result<Self> {
        for (i, l) in layers.iter().enumerate() {
            if l.weights.rows() != l.spec.m || l.weights.cols() != l.spec.n {
                return Err(Error::Config(format!(
                    "layer {i}: weights are {}x{} but spec says {}x{}",
                    l.weights.rows(),
                    l.weights.cols(),
                    l.spec.m,
                    l.spec.n
                )));
            }
            if !(0..=31).contains(&l.shift) {
                return Err(Error::Config(format!("layer {i}: shift {} outside 0..=31", l.shift)));
            }
        }
        let model = Self { layers };
        model.descriptor().validate()?;
        Ok(model)
    }

    pub fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor {
            layers: self.layers.iter().map(|l| l.spec).collect(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].spec.input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.output_width()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Same architecture, different weights.
    pub fn with_weights(&self, weights: Vec<QuantMatrix>) -> Result<QuantModel> {
        if weights.len() != self.layers.len() {
            return Err(Error::dim(self.layers.len(), weights.len(), "layer weights"));
        }
        QuantModel::new(
            self.layers
                .iter()
                .zip(weights)
                .map(|(l, w)| QuantLayer {
                    spec: l.spec,
                    weights: w,
                    shift: l.shift,
                })
                .collect(),
        )
    }
}
