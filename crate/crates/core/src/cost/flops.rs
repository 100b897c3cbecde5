use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{infer_shapes, LayerSpec};

/// A weighted layer as seen by the cost model. Layers form a flat list;
/// branches (such as residual shortcuts) are expressed by marking a layer
/// whose input activation is already counted by another layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostLayer {
    Conv {
        kernel_size: usize,
        c_in: usize,
        c_out: usize,
        in_h: usize,
        in_w: usize,
        out_h: usize,
        out_w: usize,
        #[serde(default)]
        shares_input: bool,
    },
    Linear {
        in_features: usize,
        out_features: usize,
        #[serde(default)]
        shares_input: bool,
    },
}

impl CostLayer {
    /// A square-kernel convolution on an `in_hw x in_hw` input.
    pub fn conv(kernel_size: usize, c_in: usize, c_out: usize, in_hw: usize, stride: usize, padding: usize) -> Self {
        let out = (in_hw + 2 * padding - kernel_size) / stride + 1;
        CostLayer::Conv {
            kernel_size,
            c_in,
            c_out,
            in_h: in_hw,
            in_w: in_hw,
            out_h: out,
            out_w: out,
            shares_input: false,
        }
    }

    pub fn linear(in_features: usize, out_features: usize) -> Self {
        CostLayer::Linear {
            in_features,
            out_features,
            shares_input: false,
        }
    }

    /// Marks the layer's input as already cached by another layer.
    pub fn sharing_input(mut self) -> Self {
        match &mut self {
            CostLayer::Conv { shares_input, .. } | CostLayer::Linear { shares_input, .. } => *shares_input = true,
        }
        self
    }

    /// Multiply-accumulates of one dense forward pass on one sample.
    pub fn macs(&self) -> u64 {
        match *self {
            CostLayer::Conv {
                kernel_size,
                c_in,
                c_out,
                out_h,
                out_w,
                ..
            } => (kernel_size * kernel_size * c_in * c_out * out_h * out_w) as u64,
            CostLayer::Linear {
                in_features,
                out_features,
                ..
            } => (in_features * out_features) as u64,
        }
    }

    /// Weight shape in the engine's layout.
    pub fn weight_shape(&self) -> Vec<usize> {
        match *self {
            CostLayer::Conv {
                kernel_size, c_in, c_out, ..
            } => vec![c_out, c_in, kernel_size, kernel_size],
            CostLayer::Linear {
                in_features,
                out_features,
                ..
            } => vec![out_features, in_features],
        }
    }

    pub fn weights(&self) -> usize {
        self.weight_shape().iter().product()
    }

    /// Elements of the input activation cached for the backward pass.
    pub fn input_elems(&self) -> usize {
        match *self {
            CostLayer::Conv { c_in, in_h, in_w, .. } => c_in * in_h * in_w,
            CostLayer::Linear { in_features, .. } => in_features,
        }
    }

    pub fn shares_input(&self) -> bool {
        match *self {
            CostLayer::Conv { shares_input, .. } | CostLayer::Linear { shares_input, .. } => shares_input,
        }
    }
}

/// Dense and sparse forward FLOPs of one sample, `(F_d, F_s)`, with each
/// layer's sparse cost scaled by its weight density.
pub fn flops_of_model(layers: &[CostLayer], densities: &[f64]) -> Result<(f64, f64)> {
    if layers.len() != densities.len() {
        return Err(Error::invalid(format!(
            "{} layers but {} densities",
            layers.len(),
            densities.len()
        )));
    }
    let mut dense = 0.0;
    let mut sparse = 0.0;
    for (l, &d) in layers.iter().zip(densities) {
        if !(0.0..=1.0).contains(&d) {
            return Err(Error::invalid(format!("density {d} outside [0, 1]")));
        }
        let f = 2.0 * l.macs() as f64;
        dense += f;
        sparse += d * f;
    }
    Ok((dense, sparse))
}

/// `n_theta`: weights of all layers (biases excluded).
pub fn total_weights(layers: &[CostLayer]) -> usize {
    layers.iter().map(CostLayer::weights).sum()
}

/// `n_a`: distinct activation elements cached per sample.
pub fn total_activations(layers: &[CostLayer]) -> usize {
    layers.iter().filter(|l| !l.shares_input()).map(CostLayer::input_elems).sum()
}

/// Cost layers of an engine architecture.
pub fn from_layer_specs(input_shape: &[usize], layers: &[LayerSpec]) -> Result<Vec<CostLayer>> {
    let shapes = infer_shapes(input_shape, layers)?;
    let mut out = Vec::new();
    for (i, l) in layers.iter().enumerate() {
        match l {
            LayerSpec::Conv(c) => {
                let (input, output) = (&shapes[i], &shapes[i + 1]);
                out.push(CostLayer::Conv {
                    kernel_size: c.kernel_size,
                    c_in: c.c_in,
                    c_out: c.c_out,
                    in_h: input[1],
                    in_w: input[2],
                    out_h: output[1],
                    out_w: output[2],
                    shares_input: false,
                });
            }
            LayerSpec::Linear {
                in_features,
                out_features,
            } => out.push(CostLayer::linear(*in_features, *out_features)),
            LayerSpec::Relu | LayerSpec::AvgPool { .. } | LayerSpec::Flatten => {}
        }
    }
    Ok(out)
}

/// ResNet18 for 32x32x3 inputs and 10 classes: a 3x3 stem without pooling,
/// four stages of two basic blocks (64, 128, 256, 512 channels; stride 2 and
/// a 1x1 projection shortcut on entering stages 2-4), global average pooling
/// and a linear classifier. Used only for cost reproduction.
pub fn resnet18_cifar() -> Vec<CostLayer> {
    let mut layers = vec![CostLayer::conv(3, 3, 64, 32, 1, 1)];
    let mut c_in = 64;
    let mut hw = 32;
    for (stage, c_out) in [64, 128, 256, 512].into_iter().enumerate() {
        for block in 0..2 {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            layers.push(CostLayer::conv(3, c_in, c_out, hw, stride, 1));
            if stride != 1 {
                layers.push(CostLayer::conv(1, c_in, c_out, hw, stride, 0).sharing_input());
            }
            hw /= stride;
            layers.push(CostLayer::conv(3, c_out, c_out, hw, 1, 1));
            c_in = c_out;
        }
    }
    layers.push(CostLayer::linear(512, 10));
    layers
}
