//! Network architecture descriptors.
//!
//! A [`NetworkSpec`] is a feed-forward chain of layer descriptors plus
//! an input shape. It is validated by walking the chain and composing
//! per-layer output shapes; parameter and output-size accounting is
//! derived from the same walk.

use crate::error::{Error, Result};

/// Shape of one sample flowing through the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueShape {
    /// A flat feature vector of the given width.
    Features(usize),
    /// A 1-D multichannel series.
    Series { channels: usize, len: usize },
}

impl ValueShape {
    pub fn per_sample_size(&self) -> usize {
        match *self {
            ValueShape::Features(n) => n,
            ValueShape::Series { channels, len } => channels * len,
        }
    }

    /// The tensor shape of a batch of `batch` samples.
    pub fn batch_shape(&self, batch: usize) -> Vec<usize> {
        match *self {
            ValueShape::Features(n) => vec![batch, n],
            ValueShape::Series { channels, len } => vec![batch, channels, len],
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            ValueShape::Features(n) => format!("features({n})"),
            ValueShape::Series { channels, len } => format!("series({channels}x{len})"),
        }
    }
}

/// Batch-norm defaults: the standard (eps, momentum) pair.
pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.1;

/// One layer of a feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize },
    /// Stride-1 convolution with zero "same" padding: output length
    /// equals input length. Even kernels pad (k-1)/2 left, k/2 right.
    Conv1d { in_channels: usize, out_channels: usize, kernel: usize },
    BatchNorm1d { channels: usize, eps: f64, momentum: f64 },
    Relu,
    GlobalAvgPool1d,
    Softmax,
}

impl LayerSpec {
    /// Batch norm with the default eps and momentum.
    pub fn batch_norm(channels: usize) -> Self {
        LayerSpec::BatchNorm1d { channels, eps: BATCHNORM_EPS, momentum: BATCHNORM_MOMENTUM }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::BatchNorm1d { .. } => "batchnorm1d",
            LayerSpec::Relu => "relu",
            LayerSpec::GlobalAvgPool1d => "global_avg_pool1d",
            LayerSpec::Softmax => "softmax",
        }
    }

    /// Output shape for a given input shape, or an error when the layer
    /// cannot consume that shape.
    pub fn output_shape(&self, input: ValueShape) -> Result<ValueShape> {
        let mismatch = |expected: &str| {
            Err(Error::shape(
                format!("{} layer", self.name()),
                expected.to_string(),
                input.describe(),
            ))
        };
        match *self {
            LayerSpec::Dense { inputs, outputs } => match input {
                ValueShape::Features(n) if n == inputs => Ok(ValueShape::Features(outputs)),
                _ => mismatch(&format!("features({inputs})")),
            },
            LayerSpec::Conv1d { in_channels, out_channels, kernel } => {
                if kernel == 0 || in_channels == 0 || out_channels == 0 {
                    return Err(Error::Config(format!(
                        "conv1d needs positive channels and kernel, got {in_channels}x{out_channels} k{kernel}"
                    )));
                }
                match input {
                    ValueShape::Series { channels, len } if channels == in_channels && len >= 1 => {
                        Ok(ValueShape::Series { channels: out_channels, len })
                    }
                    _ => mismatch(&format!("series({in_channels}xL), L >= 1")),
                }
            }
            LayerSpec::BatchNorm1d { channels, eps, momentum } => {
                if eps <= 0.0 || !(0.0..=1.0).contains(&momentum) {
                    return Err(Error::Config(format!(
                        "batchnorm1d needs eps > 0 and momentum in [0,1], got eps {eps}, momentum {momentum}"
                    )));
                }
                match input {
                    ValueShape::Series { channels: c, .. } if c == channels => Ok(input),
                    ValueShape::Features(n) if n == channels => Ok(input),
                    _ => mismatch(&format!("{channels} channels")),
                }
            }
            LayerSpec::Relu => Ok(input),
            LayerSpec::GlobalAvgPool1d => match input {
                ValueShape::Series { channels, .. } => Ok(ValueShape::Features(channels)),
                _ => mismatch("series input"),
            },
            LayerSpec::Softmax => match input {
                ValueShape::Features(n) if n >= 1 => Ok(input),
                _ => mismatch("features input"),
            },
        }
    }

    /// Trainable parameter count.
    pub fn trainable_param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, outputs } => outputs * inputs + outputs,
            LayerSpec::Conv1d { in_channels, out_channels, kernel } => {
                out_channels * in_channels * kernel + out_channels
            }
            LayerSpec::BatchNorm1d { channels, .. } => 2 * channels,
            _ => 0,
        }
    }

    /// Stored value count: trainable parameters plus running statistics.
    pub fn stored_value_count(&self) -> usize {
        match *self {
            LayerSpec::BatchNorm1d { channels, .. } => 4 * channels,
            _ => self.trainable_param_count(),
        }
    }
}

/// A feed-forward network architecture with a fixed input shape and,
/// for classifiers, the class count of the final scoring layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input: ValueShape,
    pub layers: Vec<LayerSpec>,
    pub class_count: usize,
}

impl NetworkSpec {
    pub fn new(input: ValueShape, layers: Vec<LayerSpec>, class_count: usize) -> Result<Self> {
        let spec = NetworkSpec { input, layers, class_count };
        spec.validate()?;
        Ok(spec)
    }

    /// Check that adjacent layers compose and that the final output is a
    /// flat vector of width `class_count`. Returns each layer's output
    /// shape in order.
    pub fn validate(&self) -> Result<Vec<ValueShape>> {
        if self.layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        if self.class_count == 0 {
            return Err(Error::Config("class_count must be positive".into()));
        }
        if self.input.per_sample_size() == 0 {
            return Err(Error::Config("input shape must be non-empty".into()));
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut current = self.input;
        for layer in &self.layers {
            current = layer.output_shape(current)?;
            shapes.push(current);
        }
        match current {
            ValueShape::Features(n) if n == self.class_count => Ok(shapes),
            other => Err(Error::Config(format!(
                "final layer must emit features({}), got {}",
                self.class_count,
                other.describe()
            ))),
        }
    }

    /// Number of layers, the L of the per-layer output accounting.
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Per-sample output size s(l) of every layer, in layer order.
    pub fn layer_output_sizes(&self) -> Result<Vec<usize>> {
        Ok(self.validate()?.iter().map(ValueShape::per_sample_size).collect())
    }

    /// Total trainable parameter dimension d.
    pub fn trainable_param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::trainable_param_count).sum()
    }

    /// Total stored values: trainable parameters plus running stats.
    pub fn stored_value_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::stored_value_count).sum()
    }

    /// Length of every stored array in canonical order: layer order,
    /// weights then bias for dense/conv, gamma, beta, running mean,
    /// running variance for batch norm. Sizes sum to
    /// `stored_value_count`.
    pub fn stored_array_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::new();
        for layer in &self.layers {
            match *layer {
                LayerSpec::Dense { inputs, outputs } => {
                    sizes.push(outputs * inputs);
                    sizes.push(outputs);
                }
                LayerSpec::Conv1d { in_channels, out_channels, kernel } => {
                    sizes.push(out_channels * in_channels * kernel);
                    sizes.push(out_channels);
                }
                LayerSpec::BatchNorm1d { channels, .. } => {
                    sizes.extend([channels; 4]);
                }
                LayerSpec::Relu | LayerSpec::GlobalAvgPool1d | LayerSpec::Softmax => {}
            }
        }
        sizes
    }
}

/// A plain MLP classifier: Dense/ReLU blocks and a softmax head.
pub fn mlp_spec(input_dim: usize, hidden: &[usize], class_count: usize) -> Result<NetworkSpec> {
    let mut layers = Vec::new();
    let mut width = input_dim;
    for &h in hidden {
        layers.push(LayerSpec::Dense { inputs: width, outputs: h });
        layers.push(LayerSpec::Relu);
        width = h;
    }
    layers.push(LayerSpec::Dense { inputs: width, outputs: class_count });
    layers.push(LayerSpec::Softmax);
    NetworkSpec::new(ValueShape::Features(input_dim), layers, class_count)
}
