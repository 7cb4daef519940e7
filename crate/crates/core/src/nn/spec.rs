//! Declarative model description, shape inference and parameter accounting.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

fn default_kernel() -> usize {
    3
}

fn default_pool() -> usize {
    2
}

/// One layer. Convolutions are "valid" with stride 1; pooling uses a square
/// window with stride equal to its size and floor rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        #[serde(default = "default_kernel")]
        kernel: usize,
        activation: Activation,
    },
    BatchNorm,
    MaxPool2d {
        #[serde(default = "default_pool")]
        pool: usize,
    },
    Dropout {
        rate: f64,
    },
    Dense {
        units: usize,
        activation: Activation,
    },
    Flatten,
    Relu,
    Sigmoid,
}

impl LayerSpec {
    fn base_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::BatchNorm => "batch_normalization",
            LayerSpec::MaxPool2d { .. } => "max_pooling2d",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Relu => "re_lu",
            LayerSpec::Sigmoid => "activation",
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "Conv2D",
            LayerSpec::BatchNorm => "BatchNormalization",
            LayerSpec::MaxPool2d { .. } => "MaxPooling2D",
            LayerSpec::Dropout { .. } => "Dropout",
            LayerSpec::Dense { .. } => "Dense",
            LayerSpec::Flatten => "Flatten",
            LayerSpec::Relu => "ReLU",
            LayerSpec::Sigmoid => "Activation",
        }
    }
}

/// Activation shape of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Spatial { h: usize, w: usize, c: usize },
    Flat(usize),
}

impl Shape {
    pub fn numel(&self) -> usize {
        match *self {
            Shape::Spatial { h, w, c } => h * w * c,
            Shape::Flat(n) => n,
        }
    }

    /// Size of the last axis, which batch normalization and dense layers act on.
    pub fn channels(&self) -> usize {
        match *self {
            Shape::Spatial { c, .. } => c,
            Shape::Flat(n) => n,
        }
    }

    pub fn batch_dims(&self, n: usize) -> Vec<usize> {
        match *self {
            Shape::Spatial { h, w, c } => vec![n, h, w, c],
            Shape::Flat(f) => vec![n, f],
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Spatial { h, w, c } => write!(f, "(None, {h}, {w}, {c})"),
            Shape::Flat(n) => write!(f, "(None, {n})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// (height, width, channels)
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// The four-convolution, two-hidden-dense network with batch
    /// normalization and 0.3 dropout, for a square `size × size × 3` input.
    pub fn simple_cnn(size: usize) -> ModelSpec {
        use LayerSpec::*;
        let drop = || Dropout { rate: 0.3 };
        let conv = |filters| Conv2d { filters, kernel: 3, activation: Activation::Relu };
        let pool = || MaxPool2d { pool: 2 };
        ModelSpec {
            name: "simple-cnn".to_string(),
            input: [size, size, 3],
            layers: vec![
                conv(16),
                BatchNorm,
                pool(),
                drop(),
                BatchNorm,
                conv(64),
                pool(),
                drop(),
                BatchNorm,
                conv(128),
                pool(),
                drop(),
                BatchNorm,
                conv(128),
                pool(),
                drop(),
                Flatten,
                BatchNorm,
                Dense { units: 256, activation: Activation::Relu },
                drop(),
                BatchNorm,
                Dense { units: 256, activation: Activation::Relu },
                drop(),
                Dense { units: 1, activation: Activation::Sigmoid },
            ],
        }
    }

    pub fn input_shape(&self) -> Shape {
        Shape::Spatial { h: self.input[0], w: self.input[1], c: self.input[2] }
    }

    /// Index of the last convolution, if any.
    pub fn last_conv(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| matches!(l, LayerSpec::Conv2d { .. }))
    }

    /// Keras-style unique layer names (`conv2d`, `conv2d_1`, ...).
    pub fn layer_names(&self) -> Vec<String> {
        let mut counts = std::collections::HashMap::new();
        self.layers
            .iter()
            .map(|l| {
                let base = l.base_name();
                let n = counts.entry(base).or_insert(0usize);
                let name = if *n == 0 { base.to_string() } else { format!("{base}_{n}") };
                *n += 1;
                name
            })
            .collect()
    }
}

/// Output shape of every layer, in order.
pub fn infer_shapes(spec: &ModelSpec) -> Result<Vec<Shape>, NnError> {
    if spec.input.contains(&0) {
        return Err(NnError::InvalidSpec(format!("input dims {:?}", spec.input)));
    }
    let mut shape = spec.input_shape();
    let mut out = Vec::with_capacity(spec.layers.len());
    for (i, layer) in spec.layers.iter().enumerate() {
        let underflow = || NnError::ShapeUnderflow { layer: i, input: shape.to_string() };
        shape = match (*layer).clone() {
            LayerSpec::Conv2d { filters, kernel, .. } => {
                if filters == 0 || kernel == 0 {
                    return Err(NnError::InvalidSpec(format!("layer {i}: zero filters or kernel")));
                }
                let Shape::Spatial { h, w, .. } = shape else {
                    return Err(NnError::InvalidSpec(format!("layer {i}: Conv2D needs a spatial input")));
                };
                if h < kernel || w < kernel {
                    return Err(underflow());
                }
                Shape::Spatial { h: h - kernel + 1, w: w - kernel + 1, c: filters }
            }
            LayerSpec::MaxPool2d { pool } => {
                let Shape::Spatial { h, w, c } = shape else {
                    return Err(NnError::InvalidSpec(format!("layer {i}: MaxPooling2D needs a spatial input")));
                };
                if pool == 0 {
                    return Err(NnError::InvalidSpec(format!("layer {i}: zero pool size")));
                }
                if h / pool == 0 || w / pool == 0 {
                    return Err(underflow());
                }
                Shape::Spatial { h: h / pool, w: w / pool, c }
            }
            LayerSpec::Dense { units, .. } => {
                let Shape::Flat(_) = shape else {
                    return Err(NnError::InvalidSpec(format!("layer {i}: Dense needs a flat input")));
                };
                if units == 0 {
                    return Err(NnError::InvalidSpec(format!("layer {i}: zero units")));
                }
                Shape::Flat(units)
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(NnError::InvalidSpec(format!("layer {i}: dropout rate {rate} outside [0, 1)")));
                }
                shape
            }
            LayerSpec::Flatten => Shape::Flat(shape.numel()),
            LayerSpec::BatchNorm | LayerSpec::Relu | LayerSpec::Sigmoid => shape,
        };
        out.push(shape);
    }
    Ok(out)
}

/// One row of a model summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub name: String,
    pub type_name: String,
    pub output: Shape,
    pub params: usize,
    pub trainable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCount {
    pub layers: Vec<LayerSummary>,
    pub total: usize,
    pub trainable: usize,
    pub non_trainable: usize,
}

pub fn count_params(spec: &ModelSpec) -> Result<ParamCount, NnError> {
    let shapes = infer_shapes(spec)?;
    let names = spec.layer_names();
    let mut input = spec.input_shape();
    let mut layers = Vec::with_capacity(shapes.len());
    for ((layer, &output), name) in spec.layers.iter().zip(&shapes).zip(names) {
        let (params, trainable) = match layer {
            LayerSpec::Conv2d { filters, kernel, .. } => {
                let p = kernel * kernel * input.channels() * filters + filters;
                (p, p)
            }
            LayerSpec::Dense { units, .. } => {
                let p = input.channels() * units + units;
                (p, p)
            }
            LayerSpec::BatchNorm => (4 * input.channels(), 2 * input.channels()),
            _ => (0, 0),
        };
        layers.push(LayerSummary { name, type_name: layer.type_name().to_string(), output, params, trainable });
        input = output;
    }
    let total = layers.iter().map(|l| l.params).sum();
    let trainable = layers.iter().map(|l| l.trainable).sum();
    Ok(ParamCount { layers, total, trainable, non_trainable: total - trainable })
}

impl ParamCount {
    pub fn render(&self) -> String {
        let mut s = format!("{:<28} {:<22} {:>10}\n", "Layer (type)", "Output Shape", "Param #");
        for l in &self.layers {
            s.push_str(&format!(
                "{:<28} {:<22} {:>10}\n",
                format!("{} ({})", l.name, l.type_name),
                l.output.to_string(),
                l.params
            ));
        }
        s.push_str(&format!(
            "Total params: {}\nTrainable params: {}\nNon-trainable params: {}\n",
            self.total, self.trainable, self.non_trainable
        ));
        s
    }
}
