use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_one() -> usize {
    1
}

fn default_gamma() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub kernel_size: usize,
    pub c_in: usize,
    pub c_out: usize,
    #[serde(default = "default_one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    /// Standardize unpruned filter weights before every forward pass.
    #[serde(default = "default_true")]
    pub nsconv: bool,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

impl ConvSpec {
    pub fn new(kernel_size: usize, c_in: usize, c_out: usize) -> Self {
        Self {
            kernel_size,
            c_in,
            c_out,
            stride: 1,
            padding: 0,
            nsconv: true,
            gamma: 1.0,
        }
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn plain(mut self) -> Self {
        self.nsconv = false;
        self
    }

    pub fn filter_len(&self) -> usize {
        self.c_in * self.kernel_size * self.kernel_size
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.c_out, self.c_in, self.kernel_size, self.kernel_size]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let ks = self.kernel_size;
        if h + 2 * self.padding < ks || w + 2 * self.padding < ks {
            return Err(Error::invalid(format!(
                "kernel {ks} larger than padded input {h}x{w}"
            )));
        }
        Ok((
            (h + 2 * self.padding - ks) / self.stride + 1,
            (w + 2 * self.padding - ks) / self.stride + 1,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv(ConvSpec),
    Relu,
    AvgPool { window: usize },
    Flatten,
    Linear {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv(_) | LayerSpec::Linear { .. })
    }

    /// Output shape (without batch) for a given input shape (without batch).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            LayerSpec::Conv(c) => {
                let [ch, h, w] = three(input)?;
                if ch != c.c_in {
                    return Err(Error::invalid(format!(
                        "conv expects {} input channels, got {ch}",
                        c.c_in
                    )));
                }
                if c.stride == 0 || c.kernel_size == 0 || c.c_out == 0 {
                    return Err(Error::invalid("conv stride, kernel and channels must be positive"));
                }
                if c.gamma <= 0.0 || !c.gamma.is_finite() {
                    return Err(Error::invalid(format!("gamma must be positive, got {}", c.gamma)));
                }
                let (ho, wo) = c.output_hw(h, w)?;
                Ok(vec![c.c_out, ho, wo])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::AvgPool { window } => {
                let [ch, h, w] = three(input)?;
                if *window == 0 || h < *window || w < *window {
                    return Err(Error::invalid(format!("pool window {window} does not fit {h}x{w}")));
                }
                Ok(vec![ch, h / window, w / window])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                if input.len() != 1 || input[0] != *in_features {
                    return Err(Error::invalid(format!(
                        "linear expects [{in_features}] input, got {input:?}"
                    )));
                }
                Ok(vec![*out_features])
            }
        }
    }

    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match self {
            LayerSpec::Conv(c) => Some(c.weight_shape().to_vec()),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => Some(vec![*out_features, *in_features]),
            _ => None,
        }
    }
}

fn three(input: &[usize]) -> Result<[usize; 3]> {
    match input {
        [c, h, w] => Ok([*c, *h, *w]),
        _ => Err(Error::invalid(format!("expected (channels, height, width), got {input:?}"))),
    }
}

/// Per-layer output shapes for an architecture; validates the chain.
pub fn infer_shapes(input: &[usize], layers: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
    let mut shapes = Vec::with_capacity(layers.len() + 1);
    shapes.push(input.to_vec());
    for (i, l) in layers.iter().enumerate() {
        let next = l
            .output_shape(shapes.last().unwrap())
            .map_err(|e| Error::invalid(format!("layer {i}: {e}")))?;
        shapes.push(next);
    }
    Ok(shapes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_chain() {
        let layers = vec![
            LayerSpec::Conv(ConvSpec::new(3, 1, 4).with_padding(1)),
            LayerSpec::Relu,
            LayerSpec::AvgPool { window: 2 },
            LayerSpec::Flatten,
            LayerSpec::Linear {
                in_features: 64,
                out_features: 3,
            },
        ];
        let s = infer_shapes(&[1, 8, 8], &layers).unwrap();
        assert_eq!(s.last().unwrap(), &vec![3]);
        assert_eq!(s[1], vec![4, 8, 8]);
    }

    #[test]
    fn broken_chain_is_rejected() {
        let layers = vec![LayerSpec::Linear {
            in_features: 5,
            out_features: 3,
        }];
        assert!(infer_shapes(&[4], &layers).is_err());
    }
}
