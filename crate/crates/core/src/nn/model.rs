// SPDX-License-Identifier: Apache-2.0

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchitectureId {
    Mlp,
    Cnn2,
}

/// Network topology. Both variants end in `classes` raw logits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    /// flatten -> (linear -> relu)* -> linear. Empty `hidden` is a linear model.
    Mlp {
        input: usize,
        hidden: Vec<usize>,
        classes: usize,
    },
    /// conv(k x k, conv1) -> relu -> maxpool 2 -> conv(k x k, conv2) -> relu
    /// -> maxpool 2 -> linear(fc) -> relu -> linear(classes). Convolutions are
    /// stride 1 without padding.
    Cnn2 {
        channels: usize,
        height: usize,
        width: usize,
        conv1: usize,
        conv2: usize,
        kernel: usize,
        fc: usize,
        classes: usize,
    },
}

impl Architecture {
    pub fn mlp(input: usize, hidden: &[usize], classes: usize) -> Self {
        Architecture::Mlp {
            input,
            hidden: hidden.to_vec(),
            classes,
        }
    }

    /// The two-conv, two-fc image model with 5x5/32 and 5x5/64 filters and
    /// a 512-unit hidden layer.
    pub fn cnn2(channels: usize, height: usize, width: usize, classes: usize) -> Self {
        Architecture::Cnn2 {
            channels,
            height,
            width,
            conv1: 32,
            conv2: 64,
            kernel: 5,
            fc: 512,
            classes,
        }
    }

    pub fn id(&self) -> ArchitectureId {
        match self {
            Architecture::Mlp { .. } => ArchitectureId::Mlp,
            Architecture::Cnn2 { .. } => ArchitectureId::Cnn2,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Architecture::Mlp { classes, .. } | Architecture::Cnn2 { classes, .. } => *classes,
        }
    }

    /// Number of input features per example.
    pub fn input_len(&self) -> usize {
        match self {
            Architecture::Mlp { input, .. } => *input,
            Architecture::Cnn2 {
                channels,
                height,
                width,
                ..
            } => channels * height * width,
        }
    }

    /// Spatial size after the second pooling stage.
    pub(crate) fn cnn_feature_dims(&self) -> Option<[usize; 4]> {
        match *self {
            Architecture::Cnn2 {
                height, width, kernel, ..
            } => {
                let h1 = (height + 1).checked_sub(kernel)? / 2;
                let w1 = (width + 1).checked_sub(kernel)? / 2;
                let h2 = (h1 + 1).checked_sub(kernel)? / 2;
                let w2 = (w1 + 1).checked_sub(kernel)? / 2;
                (h2 > 0 && w2 > 0).then_some([h1, w1, h2, w2])
            }
            Architecture::Mlp { .. } => None,
        }
    }

    /// `(name, weight shape, bias len)` for every layer, in order.
    pub fn layer_shapes(&self) -> Result<Vec<(String, Vec<usize>, usize)>> {
        match self {
            Architecture::Mlp { input, hidden, classes } => {
                if *input == 0 || *classes == 0 || hidden.contains(&0) {
                    return Err(Error::Shape("MLP dimensions must be positive".into()));
                }
                let dims: Vec<usize> = std::iter::once(*input)
                    .chain(hidden.iter().copied())
                    .chain(std::iter::once(*classes))
                    .collect();
                Ok(dims
                    .windows(2)
                    .enumerate()
                    .map(|(i, w)| (format!("fc{}", i + 1), vec![w[1], w[0]], w[1]))
                    .collect())
            }
            Architecture::Cnn2 {
                channels,
                conv1,
                conv2,
                kernel,
                fc,
                classes,
                ..
            } => {
                let [_, _, h2, w2] = self
                    .cnn_feature_dims()
                    .ok_or_else(|| Error::Shape("image too small for two conv+pool stages".into()))?;
                if [*channels, *conv1, *conv2, *kernel, *fc, *classes].contains(&0) {
                    return Err(Error::Shape("CNN dimensions must be positive".into()));
                }
                Ok(vec![
                    ("conv1".into(), vec![*conv1, *channels, *kernel, *kernel], *conv1),
                    ("conv2".into(), vec![*conv2, *conv1, *kernel, *kernel], *conv2),
                    ("fc1".into(), vec![*fc, conv2 * h2 * w2], *fc),
                    ("fc2".into(), vec![*classes, *fc], *classes),
                ])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T = f32> {
    pub name: String,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Parameters of one model instance. Gradients and optimizer buffers use
/// the same structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T = f32> {
    arch: Architecture,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> ModelWeights<T> {
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        let layers = arch
            .layer_shapes()?
            .into_iter()
            .map(|(name, w, b)| Layer {
                name,
                weight: Tensor::zeros(w),
                bias: Tensor::zeros(vec![b]),
            })
            .collect();
        Ok(ModelWeights {
            arch: arch.clone(),
            layers,
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        for layer in &mut model.layers {
            let shape = layer.weight.shape();
            let receptive: usize = shape[2..].iter().product();
            let fan_in = shape[1] * receptive;
            let fan_out = shape[0] * receptive;
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in layer.weight.data_mut() {
                *w = T::from_f64(rng.random_range(-bound..bound));
            }
        }
        Ok(model)
    }

    /// Builds weights from explicit layers, checking them against `arch`.
    pub fn from_layers(arch: &Architecture, layers: Vec<Layer<T>>) -> Result<Self> {
        let shapes = arch.layer_shapes()?;
        if shapes.len() != layers.len() {
            return Err(Error::Shape(format!(
                "expected {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for ((name, w, b), layer) in shapes.iter().zip(&layers) {
            if layer.weight.shape() != w.as_slice() || layer.bias.shape() != [*b] {
                return Err(Error::Shape(format!("layer {name} has wrong shape")));
            }
        }
        Ok(ModelWeights {
            arch: arch.clone(),
            layers,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn zeros_like(&self) -> Self {
        ModelWeights {
            arch: self.arch.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    name: l.name.clone(),
                    weight: Tensor::zeros(l.weight.shape().to_vec()),
                    bias: Tensor::zeros(l.bias.shape().to_vec()),
                })
                .collect(),
        }
    }

    /// Parameter tensors in a fixed order: each layer's weight then bias.
    pub fn params(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn num_params(&self) -> usize {
        self.params().map(Tensor::len).sum()
    }

    /// All parameters concatenated in [`params`](Self::params) order.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for p in self.params() {
            out.extend_from_slice(p.data());
        }
        out
    }

    pub fn get_flat(&self, mut index: usize) -> T {
        for p in self.params() {
            if index < p.len() {
                return p.data()[index];
            }
            index -= p.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_flat(&mut self, mut index: usize, value: T) {
        for p in self.params_mut() {
            if index < p.len() {
                p.data_mut()[index] = value;
                return;
            }
            index -= p.len();
        }
        panic!("parameter index out of range");
    }

    /// Two models are combinable iff architecture and every shape agree.
    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.arch != other.arch {
            return Err(Error::Shape(format!(
                "architectures differ: {:?} vs {:?}",
                self.arch.id(),
                other.arch.id()
            )));
        }
        for (a, b) in self.params().zip(other.params()) {
            if a.shape() != b.shape() {
                return Err(Error::Shape(format!(
                    "parameter shapes differ: {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    /// Applies `f(self_i, other_i)` element-wise in place.
    pub fn zip_apply(&mut self, other: &Self, mut f: impl FnMut(&mut T, T)) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.params_mut().zip(other.params()) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                f(x, y);
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        ModelWeights {
            arch: self.arch.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    name: l.name.clone(),
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params().all(Tensor::all_finite)
    }

    /// Squared L2 distance, accumulated in `f64`.
    pub fn sq_distance(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .params()
            .zip(other.params())
            .flat_map(|(a, b)| a.data().iter().zip(b.data()))
            .map(|(&x, &y)| {
                let d = x.as_f64() - y.as_f64();
                d * d
            })
            .sum())
    }

    /// FNV-1a digest of the architecture and every parameter's bit pattern.
    pub fn digest(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: u64| {
            for byte in v.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(PRIME);
            }
        };
        eat(self.arch.id() as u64);
        for p in self.params() {
            eat(p.len() as u64);
            for v in p.data() {
                eat(v.to_bits_u64());
            }
        }
        h
    }
}
