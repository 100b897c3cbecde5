//! Density-driven sparse storage schemes with exact bit accounting.
//!
//! A tensor's storage cost is `s = o + nnz * b`, where `o` is the number of
//! bits spent on positions:
//!
//! | density `d`   | scheme  | position bits `o`                         |
//! |---------------|---------|-------------------------------------------|
//! | `[0.9, 1]`    | Dense   | none (`s = n * b`)                        |
//! | `[0.3, 0.9)`  | Bitmap  | `n`                                       |
//! | `[0.1, 0.3)`  | COO     | `nnz * ceil(log2 n)`                      |
//! | `[0, 0.1)`    | CSR/CSC | `nnz * ceil(log2 n_c) + n_r * ceil(log2 nnz)` (CSR) |
//!
//! Tensors of any rank are viewed as a matrix before compression: all leading
//! dimensions are flattened into rows and the last dimension becomes columns.
//!
//! The accounted `total_bits` is independent of the in-memory payload, which
//! always keeps values as 64-bit floats so that decoding is bit-exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{Mask, MaskedTensor};

pub const DEFAULT_VALUE_BITS: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CompressionScheme {
    Dense,
    Bitmap,
    Coo,
    Csr,
    Csc,
}

impl CompressionScheme {
    pub fn tag(self) -> u8 {
        match self {
            CompressionScheme::Dense => 0,
            CompressionScheme::Bitmap => 1,
            CompressionScheme::Coo => 2,
            CompressionScheme::Csr => 3,
            CompressionScheme::Csc => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => CompressionScheme::Dense,
            1 => CompressionScheme::Bitmap,
            2 => CompressionScheme::Coo,
            3 => CompressionScheme::Csr,
            4 => CompressionScheme::Csc,
            _ => return None,
        })
    }
}

/// Picks the scheme band for a density. The lowest band is reported as
/// [`CompressionScheme::Csr`]; use [`select_scheme_for`] to resolve CSR vs CSC
/// once the matrix shape is known.
pub fn select_scheme(density: f64) -> CompressionScheme {
    if density >= 0.9 {
        CompressionScheme::Dense
    } else if density >= 0.3 {
        CompressionScheme::Bitmap
    } else if density >= 0.1 {
        CompressionScheme::Coo
    } else {
        CompressionScheme::Csr
    }
}

/// Density band plus CSR/CSC orientation: the one with fewer position bits, CSR on ties.
pub fn select_scheme_for(n_r: usize, n_c: usize, nnz: usize) -> CompressionScheme {
    let n = n_r * n_c;
    let density = if n == 0 { 0.0 } else { nnz as f64 / n as f64 };
    match select_scheme(density) {
        CompressionScheme::Csr | CompressionScheme::Csc => {
            let csr = position_bits_csr(n_r, n_c, nnz);
            let csc = position_bits_csr(n_c, n_r, nnz);
            if csc < csr {
                CompressionScheme::Csc
            } else {
                CompressionScheme::Csr
            }
        }
        other => other,
    }
}

/// `ceil(log2 x)`, with `x <= 1` costing zero bits.
pub fn ceil_log2(x: u64) -> u64 {
    if x <= 1 {
        0
    } else {
        64 - u64::from((x - 1).leading_zeros())
    }
}

fn position_bits_csr(n_r: usize, n_c: usize, nnz: usize) -> u64 {
    nnz as u64 * ceil_log2(n_c as u64) + n_r as u64 * ceil_log2(nnz as u64)
}

/// Bits spent on positions under `scheme`.
pub fn position_bits(
    n: usize,
    nnz: usize,
    scheme: CompressionScheme,
    n_r: usize,
    n_c: usize,
) -> u64 {
    match scheme {
        CompressionScheme::Dense => 0,
        CompressionScheme::Bitmap => n as u64,
        CompressionScheme::Coo => nnz as u64 * ceil_log2(n as u64),
        CompressionScheme::Csr => position_bits_csr(n_r, n_c, nnz),
        CompressionScheme::Csc => position_bits_csr(n_c, n_r, nnz),
    }
}

/// Closed-form storage of `nnz` values of `b` bits in an `n_r x n_c` matrix.
pub fn storage_bits(
    n: usize,
    nnz: usize,
    b: u32,
    scheme: CompressionScheme,
    n_r: usize,
    n_c: usize,
) -> Result<u64> {
    if nnz > n {
        return Err(Error::invalid(format!("nnz {nnz} exceeds element count {n}")));
    }
    if n_r * n_c != n {
        return Err(Error::invalid(format!(
            "matrix view {n_r}x{n_c} does not hold {n} elements"
        )));
    }
    if b == 0 {
        return Err(Error::invalid("value bitwidth must be at least 1"));
    }
    Ok(match scheme {
        CompressionScheme::Dense => n as u64 * u64::from(b),
        _ => position_bits(n, nnz, scheme, n_r, n_c) + nnz as u64 * u64::from(b),
    })
}

/// Storage under the density-selected scheme.
pub fn auto_storage_bits(shape: &[usize], nnz: usize, b: u32) -> Result<u64> {
    let (n_r, n_c) = matrix_dims(shape);
    let scheme = select_scheme_for(n_r, n_c, nnz);
    storage_bits(n_r * n_c, nnz, b, scheme, n_r, n_c)
}

/// Matrix view used before compression: leading dims become rows, the last dim columns.
pub fn matrix_dims(shape: &[usize]) -> (usize, usize) {
    match shape.split_last() {
        None => (1, 1),
        Some((&last, lead)) => (lead.iter().product(), last),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    /// All values in order. `mask` is carried only when some positions are
    /// pruned, since a dense value stream cannot express them.
    Dense { values: Vec<f64>, mask: Option<Vec<bool>> },
    Bitmap { bitmap: Vec<bool>, values: Vec<f64> },
    Coo { indices: Vec<u32>, values: Vec<f64> },
    Csr { row_ptr: Vec<u32>, col_idx: Vec<u32>, values: Vec<f64> },
    Csc { col_ptr: Vec<u32>, row_idx: Vec<u32>, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedTensor {
    pub scheme: CompressionScheme,
    pub shape: Vec<usize>,
    pub nnz: usize,
    pub value_bits: u32,
    pub position_bits: u64,
    pub total_bits: u64,
    pub payload: Payload,
}

impl EncodedTensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn density(&self) -> f64 {
        let n = self.numel();
        if n == 0 {
            0.0
        } else {
            self.nnz as f64 / n as f64
        }
    }
}

/// Encodes under the density-selected scheme.
pub fn encode(t: &MaskedTensor, b: u32) -> Result<EncodedTensor> {
    let (n_r, n_c) = matrix_dims(t.shape());
    let scheme = select_scheme_for(n_r, n_c, t.nnz());
    encode_with(t, b, scheme)
}

/// Encodes under an explicit scheme.
pub fn encode_with(t: &MaskedTensor, b: u32, scheme: CompressionScheme) -> Result<EncodedTensor> {
    let shape = t.shape().to_vec();
    let n = t.len();
    let nnz = t.nnz();
    let (n_r, n_c) = matrix_dims(&shape);
    let total_bits = storage_bits(n, nnz, b, scheme, n_r, n_c)?;
    let position_bits = match scheme {
        CompressionScheme::Dense => 0,
        _ => total_bits - nnz as u64 * u64::from(b),
    };
    let bits = t.mask().bits();
    let vals = t.values();
    let kept_values = || -> Vec<f64> {
        bits.iter()
            .zip(vals)
            .filter_map(|(&k, &v)| k.then_some(v))
            .collect()
    };
    let to_u32 = |x: usize| -> Result<u32> {
        u32::try_from(x).map_err(|_| Error::invalid(format!("index {x} does not fit in 32 bits")))
    };

    let payload = match scheme {
        CompressionScheme::Dense => Payload::Dense {
            values: vals.to_vec(),
            mask: (nnz < n).then(|| bits.to_vec()),
        },
        CompressionScheme::Bitmap => Payload::Bitmap {
            bitmap: bits.to_vec(),
            values: kept_values(),
        },
        CompressionScheme::Coo => Payload::Coo {
            indices: t
                .mask()
                .unpruned_indices()
                .into_iter()
                .map(to_u32)
                .collect::<Result<_>>()?,
            values: kept_values(),
        },
        CompressionScheme::Csr => {
            let mut row_ptr = Vec::with_capacity(n_r + 1);
            let mut col_idx = Vec::with_capacity(nnz);
            let mut values = Vec::with_capacity(nnz);
            row_ptr.push(0);
            for r in 0..n_r {
                for c in 0..n_c {
                    let i = r * n_c + c;
                    if bits[i] {
                        col_idx.push(to_u32(c)?);
                        values.push(vals[i]);
                    }
                }
                row_ptr.push(to_u32(col_idx.len())?);
            }
            Payload::Csr {
                row_ptr,
                col_idx,
                values,
            }
        }
        CompressionScheme::Csc => {
            let mut col_ptr = Vec::with_capacity(n_c + 1);
            let mut row_idx = Vec::with_capacity(nnz);
            let mut values = Vec::with_capacity(nnz);
            col_ptr.push(0);
            for c in 0..n_c {
                for r in 0..n_r {
                    let i = r * n_c + c;
                    if bits[i] {
                        row_idx.push(to_u32(r)?);
                        values.push(vals[i]);
                    }
                }
                col_ptr.push(to_u32(row_idx.len())?);
            }
            Payload::Csc {
                col_ptr,
                row_idx,
                values,
            }
        }
    };

    Ok(EncodedTensor {
        scheme,
        shape,
        nnz,
        value_bits: b,
        position_bits,
        total_bits,
        payload,
    })
}

/// Reconstructs the masked tensor, validating the payload structure.
pub fn decode(e: &EncodedTensor) -> Result<MaskedTensor> {
    let n = e.numel();
    let (n_r, n_c) = matrix_dims(&e.shape);
    let scheme = Some(e.scheme);
    let err = |offset: usize, reason: String| Error::decode(scheme, offset, reason);
    let mut values = vec![0.0; n];
    let mut bits = vec![false; n];

    let check_len = |what: &str, got: usize, want: usize| -> Result<()> {
        if got != want {
            Err(err(0, format!("{what} holds {got} entries, expected {want}")))
        } else {
            Ok(())
        }
    };

    match (&e.payload, e.scheme) {
        (Payload::Dense { values: v, mask }, CompressionScheme::Dense) => {
            check_len("value stream", v.len(), n)?;
            values.copy_from_slice(v);
            match mask {
                Some(m) => {
                    check_len("mask", m.len(), n)?;
                    bits.copy_from_slice(m);
                }
                None => bits.fill(true),
            }
        }
        (Payload::Bitmap { bitmap, values: v }, CompressionScheme::Bitmap) => {
            check_len("bitmap", bitmap.len(), n)?;
            let ones = bitmap.iter().filter(|&&b| b).count();
            check_len("value stream", v.len(), ones)?;
            let mut it = v.iter();
            for (i, &keep) in bitmap.iter().enumerate() {
                if keep {
                    bits[i] = true;
                    values[i] = *it.next().expect("length checked");
                }
            }
        }
        (Payload::Coo { indices, values: v }, CompressionScheme::Coo) => {
            check_len("value stream", v.len(), indices.len())?;
            let mut prev: Option<u32> = None;
            for (k, (&idx, &val)) in indices.iter().zip(v).enumerate() {
                if idx as usize >= n {
                    return Err(err(k, format!("index {idx} out of range for {n} elements")));
                }
                if prev.is_some_and(|p| idx <= p) {
                    return Err(err(k, format!("indices not strictly increasing at {idx}")));
                }
                prev = Some(idx);
                bits[idx as usize] = true;
                values[idx as usize] = val;
            }
        }
        (
            Payload::Csr {
                row_ptr,
                col_idx,
                values: v,
            },
            CompressionScheme::Csr,
        ) => {
            decode_compressed(row_ptr, col_idx, v, n_r, n_c, |r, c| r * n_c + c, &mut bits, &mut values)
                .map_err(|(o, r)| err(o, r))?;
        }
        (
            Payload::Csc {
                col_ptr,
                row_idx,
                values: v,
            },
            CompressionScheme::Csc,
        ) => {
            decode_compressed(col_ptr, row_idx, v, n_c, n_r, |c, r| r * n_c + c, &mut bits, &mut values)
                .map_err(|(o, r)| err(o, r))?;
        }
        _ => return Err(err(0, "payload variant does not match scheme tag".into())),
    }

    let nnz = bits.iter().filter(|&&b| b).count();
    if nnz != e.nnz {
        return Err(err(0, format!("payload stores {nnz} entries but header says {}", e.nnz)));
    }
    let mask = Mask::from_bits(&e.shape, bits)?;
    MaskedTensor::new(values, mask)
}

#[allow(clippy::too_many_arguments)]
fn decode_compressed(
    ptr: &[u32],
    inner: &[u32],
    v: &[f64],
    outer_len: usize,
    inner_len: usize,
    flat: impl Fn(usize, usize) -> usize,
    bits: &mut [bool],
    values: &mut [f64],
) -> std::result::Result<(), (usize, String)> {
    if ptr.len() != outer_len + 1 {
        return Err((0, format!("pointer array has {} entries, expected {}", ptr.len(), outer_len + 1)));
    }
    if inner.len() != v.len() {
        return Err((0, "index and value streams differ in length".into()));
    }
    if ptr[0] != 0 || *ptr.last().unwrap() as usize != inner.len() {
        return Err((0, "pointer array does not span the index stream".into()));
    }
    for o in 0..outer_len {
        let (start, end) = (ptr[o] as usize, ptr[o + 1] as usize);
        if end < start || end > inner.len() {
            return Err((o, format!("pointer {o} is not monotone")));
        }
        let mut prev: Option<u32> = None;
        for k in start..end {
            let j = inner[k];
            if j as usize >= inner_len {
                return Err((k, format!("index {j} out of range for {inner_len}")));
            }
            if prev.is_some_and(|p| j <= p) {
                return Err((k, format!("indices not strictly increasing at {j}")));
            }
            prev = Some(j);
            let i = flat(o, j as usize);
            bits[i] = true;
            values[i] = v[k];
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Framed binary record
// ---------------------------------------------------------------------------

/// Serializes into a framed record:
/// `tag:u8 | rank:u32 | dims:u32* | nnz:u32 | b:u8 | payload`, little-endian.
///
/// Payload layouts (values are f64):
/// * Dense: `[bitmap if nnz < n] values[n]`
/// * Bitmap: `bitmap[ceil(n/8)] values[nnz]`
/// * COO: `indices:u32[nnz] values[nnz]`
/// * CSR: `row_ptr:u32[n_r+1] col:u32[nnz] values[nnz]` (CSC symmetric)
pub fn to_frame(e: &EncodedTensor) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.push(e.scheme.tag());
    put_u32(&mut out, e.shape.len())?;
    for &d in &e.shape {
        put_u32(&mut out, d)?;
    }
    put_u32(&mut out, e.nnz)?;
    let b = u8::try_from(e.value_bits)
        .map_err(|_| Error::invalid(format!("bitwidth {} does not fit the frame", e.value_bits)))?;
    out.push(b);
    match &e.payload {
        Payload::Dense { values, mask } => {
            if let Some(m) = mask {
                put_bitmap(&mut out, m);
            }
            put_f64s(&mut out, values);
        }
        Payload::Bitmap { bitmap, values } => {
            put_bitmap(&mut out, bitmap);
            put_f64s(&mut out, values);
        }
        Payload::Coo { indices, values } => {
            indices.iter().for_each(|&i| out.extend_from_slice(&i.to_le_bytes()));
            put_f64s(&mut out, values);
        }
        Payload::Csr {
            row_ptr: p,
            col_idx: ix,
            values,
        }
        | Payload::Csc {
            col_ptr: p,
            row_idx: ix,
            values,
        } => {
            p.iter().chain(ix).for_each(|&i| out.extend_from_slice(&i.to_le_bytes()));
            put_f64s(&mut out, values);
        }
    }
    Ok(out)
}

/// Parses one framed record from the front of `bytes`, returning it and the
/// number of bytes consumed. The accounting fields are recomputed from the header.
pub fn from_frame(bytes: &[u8]) -> Result<(EncodedTensor, usize)> {
    let mut r = Reader { bytes, pos: 0, scheme: None };
    let tag = r.u8()?;
    let scheme = CompressionScheme::from_tag(tag)
        .ok_or_else(|| Error::decode(None, 0, format!("unknown scheme tag {tag}")))?;
    r.scheme = Some(scheme);
    let rank = r.u32()? as usize;
    if rank > 8 {
        return Err(r.fail(format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32()? as usize);
    }
    let n: usize = shape.iter().product();
    let nnz = r.u32()? as usize;
    if nnz > n {
        return Err(r.fail(format!("nnz {nnz} exceeds {n} elements")));
    }
    let b = u32::from(r.u8()?);
    let (n_r, n_c) = matrix_dims(&shape);

    let payload = match scheme {
        CompressionScheme::Dense => {
            let mask = if nnz < n { Some(r.bitmap(n)?) } else { None };
            Payload::Dense {
                values: r.f64s(n)?,
                mask,
            }
        }
        CompressionScheme::Bitmap => Payload::Bitmap {
            bitmap: r.bitmap(n)?,
            values: r.f64s(nnz)?,
        },
        CompressionScheme::Coo => Payload::Coo {
            indices: r.u32s(nnz)?,
            values: r.f64s(nnz)?,
        },
        CompressionScheme::Csr => Payload::Csr {
            row_ptr: r.u32s(n_r + 1)?,
            col_idx: r.u32s(nnz)?,
            values: r.f64s(nnz)?,
        },
        CompressionScheme::Csc => Payload::Csc {
            col_ptr: r.u32s(n_c + 1)?,
            row_idx: r.u32s(nnz)?,
            values: r.f64s(nnz)?,
        },
    };
    let total_bits = storage_bits(n, nnz, b.max(1), scheme, n_r, n_c)?;
    let position_bits = position_bits(n, nnz, scheme, n_r, n_c);
    let e = EncodedTensor {
        scheme,
        shape,
        nnz,
        value_bits: b,
        position_bits,
        total_bits,
        payload,
    };
    Ok((e, r.pos))
}

fn put_u32(out: &mut Vec<u8>, x: usize) -> Result<()> {
    let v = u32::try_from(x).map_err(|_| Error::invalid(format!("{x} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_bitmap(out: &mut Vec<u8>, bits: &[bool]) {
    for chunk in bits.chunks(8) {
        let mut byte = 0u8;
        for (i, &b) in chunk.iter().enumerate() {
            if b {
                byte |= 1 << i;
            }
        }
        out.push(byte);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    scheme: Option<CompressionScheme>,
}

impl Reader<'_> {
    fn fail(&self, reason: String) -> Error {
        Error::decode(self.scheme, self.pos, reason)
    }

    fn take(&mut self, len: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(self.fail(format!(
                "truncated: need {len} bytes, {} remain",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let s = self.take(4)?;
        Ok(u32::from_le_bytes(s.try_into().unwrap()))
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        let s = self.take(n.checked_mul(4).ok_or_else(|| self.fail("length overflow".into()))?)?;
        Ok(s.chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let s = self.take(n.checked_mul(8).ok_or_else(|| self.fail("length overflow".into()))?)?;
        Ok(s.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn bitmap(&mut self, n: usize) -> Result<Vec<bool>> {
        let s = self.take(n.div_ceil(8))?;
        Ok((0..n).map(|i| s[i / 8] >> (i % 8) & 1 == 1).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::random_prune;

    #[test]
    fn scheme_bands() {
        assert_eq!(select_scheme(1.0), CompressionScheme::Dense);
        assert_eq!(select_scheme(0.95), CompressionScheme::Dense);
        assert_eq!(select_scheme(0.9), CompressionScheme::Dense);
        assert_eq!(select_scheme(0.89), CompressionScheme::Bitmap);
        assert_eq!(select_scheme(0.3), CompressionScheme::Bitmap);
        assert_eq!(select_scheme(0.2), CompressionScheme::Coo);
        assert_eq!(select_scheme(0.1), CompressionScheme::Coo);
        assert_eq!(select_scheme(0.05), CompressionScheme::Csr);
        assert_eq!(select_scheme(0.0), CompressionScheme::Csr);
    }

    #[test]
    fn csc_wins_on_tall_matrices() {
        // 1000x2, 10 nnz: CSR = 10*1 + 1000*4, CSC = 10*10 + 2*4.
        assert_eq!(select_scheme_for(1000, 2, 10), CompressionScheme::Csc);
        // Square: tie resolves to CSR.
        assert_eq!(select_scheme_for(32, 32, 50), CompressionScheme::Csr);
    }

    #[test]
    fn ceil_log2_edges() {
        assert_eq!(ceil_log2(0), 0);
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(3), 2);
        assert_eq!(ceil_log2(1000), 10);
        assert_eq!(ceil_log2(1024), 10);
        assert_eq!(ceil_log2(1025), 11);
    }

    #[test]
    fn storage_bit_examples() {
        assert_eq!(
            storage_bits(1000, 200, 32, CompressionScheme::Coo, 1, 1000).unwrap(),
            8400
        );
        assert_eq!(
            storage_bits(64, 64, 32, CompressionScheme::Dense, 8, 8).unwrap(),
            2048
        );
        assert_eq!(
            storage_bits(1024, 50, 32, CompressionScheme::Csr, 32, 32).unwrap(),
            2042
        );
        assert!(storage_bits(10, 11, 32, CompressionScheme::Coo, 1, 10).is_err());
    }

    #[test]
    fn all_zero_mask_encodes_as_empty_csr() {
        let t = MaskedTensor::new(vec![0.0; 12], Mask::zeros(&[3, 4])).unwrap();
        let e = encode(&t, 32).unwrap();
        assert_eq!(e.scheme, CompressionScheme::Csr);
        assert_eq!(e.nnz, 0);
        match &e.payload {
            Payload::Csr { values, .. } => assert!(values.is_empty()),
            p => panic!("unexpected payload {p:?}"),
        }
        assert!(decode(&e).unwrap().bit_eq(&t));
    }

    #[test]
    fn dense_round_trip() {
        let t = MaskedTensor::dense(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, -0.0, 7.0]).unwrap();
        let e = encode(&t, 32).unwrap();
        assert_eq!(e.scheme, CompressionScheme::Dense);
        assert_eq!(e.total_bits, 6 * 32);
        assert!(decode(&e).unwrap().bit_eq(&t));
    }

    #[test]
    fn quarter_density_uses_coo() {
        let mask = random_prune(&[8, 16], 0.75, 5).unwrap();
        let values = (0..128).map(|i| (i as f64 * 0.37).sin()).collect();
        let t = MaskedTensor::new(values, mask).unwrap();
        let e = encode(&t, 32).unwrap();
        assert_eq!(e.scheme, CompressionScheme::Coo);
        assert_eq!(e.total_bits, 32 * (7 + 32));
        let bytes = to_frame(&e).unwrap();
        let (back, used) = from_frame(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, e);
        assert!(decode(&back).unwrap().bit_eq(&t));
    }

    #[test]
    fn corrupt_payloads_are_reported() {
        let t = MaskedTensor::new(vec![1.0, 0.0, 0.0, 2.0], Mask::from_bits(&[4], vec![true, false, false, true]).unwrap()).unwrap();
        let mut e = encode_with(&t, 32, CompressionScheme::Coo).unwrap();
        if let Payload::Coo { indices, .. } = &mut e.payload {
            indices[1] = 9;
        }
        match decode(&e) {
            Err(Error::Decode { scheme, offset, .. }) => {
                assert_eq!(scheme, Some(CompressionScheme::Coo));
                assert_eq!(offset, 1);
            }
            other => panic!("expected decode error, got {other:?}"),
        }

        let bytes = to_frame(&encode(&t, 32).unwrap()).unwrap();
        assert!(matches!(
            from_frame(&bytes[..bytes.len() - 3]),
            Err(Error::Decode { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = 77;
        assert!(from_frame(&bad).is_err());
    }
}
