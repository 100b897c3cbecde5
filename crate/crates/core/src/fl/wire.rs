//! Simulated transport: every transfer is encoded, framed, parsed back and
//! decoded, and its size is tallied.

use crate::error::{Error, Result};
use crate::nn::SparseModel;
use crate::sparse::{self, CompressionScheme, EncodedTensor, MaskedTensor};

/// Size of one or more transfers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WireCount {
    /// Bits under the codec's storage accounting (`b` bits per value plus positions).
    pub bits: u64,
    /// Bytes of the actual frames, including headers and 64-bit values.
    pub frame_bytes: u64,
}

impl WireCount {
    pub fn add(&mut self, other: WireCount) {
        self.bits += other.bits;
        self.frame_bytes += other.frame_bytes;
    }
}

impl std::ops::Add for WireCount {
    type Output = WireCount;

    fn add(mut self, rhs: WireCount) -> WireCount {
        WireCount::add(&mut self, rhs);
        self
    }
}

fn round_trip(e: &EncodedTensor) -> Result<(MaskedTensor, WireCount)> {
    let frame = sparse::to_frame(e)?;
    let (parsed, used) = sparse::from_frame(&frame)?;
    if used != frame.len() {
        return Err(Error::Protocol(format!("frame has {} trailing bytes", frame.len() - used)));
    }
    let t = sparse::decode(&parsed)?;
    Ok((
        t,
        WireCount {
            bits: parsed.total_bits,
            frame_bytes: frame.len() as u64,
        },
    ))
}

/// Sends a tensor under its density-selected scheme.
pub fn send_tensor(t: &MaskedTensor, value_bits: u32) -> Result<(MaskedTensor, WireCount)> {
    round_trip(&sparse::encode(t, value_bits)?)
}

/// Sends a tensor under an explicit scheme.
pub fn send_tensor_as(t: &MaskedTensor, value_bits: u32, scheme: CompressionScheme) -> Result<(MaskedTensor, WireCount)> {
    round_trip(&sparse::encode_with(t, value_bits, scheme)?)
}

/// Sends every weight (auto scheme) and bias (dense) of a model; returns the
/// receiver's copy.
pub fn send_model(model: &SparseModel, value_bits: u32) -> Result<(SparseModel, WireCount)> {
    let mut out = model.clone();
    let mut count = WireCount::default();
    for l in model.param_layers() {
        let p = model.params(l).unwrap();
        let (w, c) = send_tensor(&p.weight, value_bits)?;
        count.add(c);
        let bias = match &p.bias {
            Some(b) => {
                let (bt, c) = send_tensor(&MaskedTensor::dense(&[b.len()], b.clone())?, value_bits)?;
                count.add(c);
                Some(bt.into_parts().0)
            }
            None => None,
        };
        let dst = out.params_mut(l).unwrap();
        dst.weight = w;
        dst.bias = bias;
    }
    Ok((out, count))
}

/// Accounted bits of a model transfer without performing it.
pub fn model_bits(model: &SparseModel, value_bits: u32) -> Result<u64> {
    let mut bits = 0;
    for l in model.param_layers() {
        let p = model.params(l).unwrap();
        bits += sparse::auto_storage_bits(p.weight.shape(), p.weight.nnz(), value_bits)?;
        if let Some(b) = &p.bias {
            bits += b.len() as u64 * u64::from(value_bits);
        }
    }
    Ok(bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    #[test]
    fn model_transfer_is_exact_and_counted() {
        let mut m = SparseModel::new(
            &[12],
            vec![
                LayerSpec::Linear {
                    in_features: 12,
                    out_features: 10,
                },
                LayerSpec::Relu,
                LayerSpec::Linear {
                    in_features: 10,
                    out_features: 3,
                },
            ],
            1,
        )
        .unwrap();
        m.random_prune(0.8, &[], 2).unwrap();
        let (r, c) = send_model(&m, 32).unwrap();
        for l in m.param_layers() {
            assert!(r.params(l).unwrap().weight.bit_eq(&m.params(l).unwrap().weight));
            assert_eq!(r.params(l).unwrap().bias, m.params(l).unwrap().bias);
        }
        assert_eq!(c.bits, model_bits(&m, 32).unwrap());
        assert!(c.frame_bytes > 0);
    }
}
