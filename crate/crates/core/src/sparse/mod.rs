//! Masked tensors, random pruning and sparse storage codecs.

mod codec;
mod mask;
mod prune;

pub use codec::{
    auto_storage_bits, ceil_log2, decode, encode, encode_with, from_frame, matrix_dims,
    position_bits, select_scheme, select_scheme_for, storage_bits, to_frame, CompressionScheme,
    EncodedTensor, Payload, DEFAULT_VALUE_BITS,
};
pub use mask::{Mask, MaskedTensor};
pub use prune::{prune_count, random_prune, random_prune_with};
