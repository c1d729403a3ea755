//! The `EDSM` model file layout.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "EDSM"
//!      4     4  version (u32, = 1)
//!      8     4  feat_dim (u32)
//!     12     4  n_hidden (u32)
//!     16     4  alphabet_size (u32, blank included)
//!     20     4  tensor_count (u32, = 14)
//!     24     4  CRC-32 (IEEE) of every byte from the first tensor to end of file
//!     28  24·n  offset table: name (8 bytes, NUL padded), rows (u32), cols (u32),
//!               byte_offset (u64)
//! ```
//!
//! Tensors follow in [`TENSOR_NAMES`] order as row-major little-endian `f32`,
//! each starting on a 64-byte boundary with zero padding in between. The file
//! ends at the last byte of the last tensor. All integers are little-endian.

use alloc::vec::Vec;
use core::ops::Range;

use crate::model::{ModelDims, ModelError, ModelWeights, TENSOR_NAMES};
use crate::nn::Matrix;
use crate::rng::XorShift64Star;

pub const MODEL_MAGIC: [u8; 4] = *b"EDSM";
pub const MODEL_VERSION: u32 = 1;
pub const TENSOR_ALIGN: usize = 64;
pub const HEADER_LEN: usize = 28;
pub const TABLE_ENTRY_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    VersionMismatch(u32),
    #[error("offset table inconsistency: {0}")]
    OffsetTable(&'static str),
    #[error("truncated file: need {needed} bytes, have {actual}")]
    Truncated { needed: u64, actual: u64 },
    #[error(
        "payload checksum mismatch: header says {expected:#010x}, payload hashes to {actual:#010x}"
    )]
    Checksum { expected: u32, actual: u32 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorEntry {
    pub name: [u8; 8],
    pub rows: u32,
    pub cols: u32,
    pub byte_offset: u64,
}

impl TensorEntry {
    pub fn byte_len(&self) -> u64 {
        self.rows as u64 * self.cols as u64 * 4
    }

    pub fn name_str(&self) -> &str {
        let end = self.name.iter().position(|&b| b == 0).unwrap_or(8);
        core::str::from_utf8(&self.name[..end]).unwrap_or("?")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelFileHeader {
    pub version: u32,
    pub dims: ModelDims,
    pub payload_crc32: u32,
    pub entries: Vec<TensorEntry>,
}

fn name_tag(name: &str) -> [u8; 8] {
    let mut tag = [0u8; 8];
    tag[..name.len()].copy_from_slice(name.as_bytes());
    tag
}

fn align_up(n: usize) -> usize {
    n.div_ceil(TENSOR_ALIGN) * TENSOR_ALIGN
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn read_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

impl ModelFileHeader {
    /// Lays out the header for `dims` with payload checksum zero.
    pub fn for_dims(dims: ModelDims) -> Self {
        let shapes = dims.tensor_shapes();
        let mut offset = align_up(HEADER_LEN + shapes.len() * TABLE_ENTRY_LEN);
        let entries = shapes
            .iter()
            .map(|&(name, rows, cols)| {
                let e = TensorEntry {
                    name: name_tag(name),
                    rows: rows as u32,
                    cols: cols as u32,
                    byte_offset: offset as u64,
                };
                offset = align_up(offset + rows * cols * 4);
                e
            })
            .collect();
        Self {
            version: MODEL_VERSION,
            dims,
            payload_crc32: 0,
            entries,
        }
    }

    pub fn table_end(&self) -> usize {
        HEADER_LEN + self.entries.len() * TABLE_ENTRY_LEN
    }

    pub fn payload_start(&self) -> u64 {
        self.entries
            .first()
            .map_or(self.table_end() as u64, |e| e.byte_offset)
    }

    /// One past the last tensor byte, which is also the file length.
    pub fn file_len(&self) -> u64 {
        self.entries
            .last()
            .map_or(self.table_end() as u64, |e| e.byte_offset + e.byte_len())
    }

    pub fn tensor_range(&self, i: usize) -> Range<usize> {
        let e = &self.entries[i];
        e.byte_offset as usize..(e.byte_offset + e.byte_len()) as usize
    }

    /// Parses and cross-checks the header and offset table. Only the first
    /// [`Self::table_end`] bytes of `bytes` are read; `bytes.len()` must be the
    /// whole file length so truncation is detected.
    pub fn parse(bytes: &[u8]) -> Result<Self, FormatError> {
        let actual = bytes.len() as u64;
        if bytes.len() < 4 {
            return Err(FormatError::Truncated {
                needed: HEADER_LEN as u64,
                actual,
            });
        }
        let found: [u8; 4] = bytes[..4].try_into().unwrap();
        if found != MODEL_MAGIC {
            return Err(FormatError::BadMagic {
                expected: MODEL_MAGIC,
                found,
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(FormatError::Truncated {
                needed: HEADER_LEN as u64,
                actual,
            });
        }
        let version = read_u32(bytes, 4);
        if version != MODEL_VERSION {
            return Err(FormatError::VersionMismatch(version));
        }
        let dims = ModelDims {
            feat_dim: read_u32(bytes, 8) as usize,
            n_hidden: read_u32(bytes, 12) as usize,
            alphabet_size: read_u32(bytes, 16) as usize,
        };
        dims.validate()?;
        let count = read_u32(bytes, 20) as usize;
        if count != TENSOR_NAMES.len() {
            return Err(FormatError::OffsetTable("unexpected tensor count"));
        }
        let payload_crc32 = read_u32(bytes, 24);
        let table_end = HEADER_LEN + count * TABLE_ENTRY_LEN;
        if bytes.len() < table_end {
            return Err(FormatError::Truncated {
                needed: table_end as u64,
                actual,
            });
        }
        let entries: Vec<TensorEntry> = (0..count)
            .map(|i| {
                let at = HEADER_LEN + i * TABLE_ENTRY_LEN;
                TensorEntry {
                    name: bytes[at..at + 8].try_into().unwrap(),
                    rows: read_u32(bytes, at + 8),
                    cols: read_u32(bytes, at + 12),
                    byte_offset: read_u64(bytes, at + 16),
                }
            })
            .collect();

        let mut prev_end = table_end as u64;
        for (e, (name, rows, cols)) in entries.iter().zip(dims.tensor_shapes()) {
            if e.name != name_tag(name) {
                return Err(FormatError::OffsetTable("tensor name out of order"));
            }
            if e.rows as usize != rows || e.cols as usize != cols {
                return Err(FormatError::OffsetTable(
                    "tensor shape disagrees with header dims",
                ));
            }
            if e.byte_offset % TENSOR_ALIGN as u64 != 0 {
                return Err(FormatError::OffsetTable(
                    "tensor offset not 64-byte aligned",
                ));
            }
            if e.byte_offset < prev_end {
                return Err(FormatError::OffsetTable(
                    "tensor offsets overlap or decrease",
                ));
            }
            prev_end = e.byte_offset + e.byte_len();
        }
        let header = Self {
            version,
            dims,
            payload_crc32,
            entries,
        };
        let needed = header.file_len();
        if actual < needed {
            return Err(FormatError::Truncated { needed, actual });
        }
        Ok(header)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.table_end());
        out.extend_from_slice(&MODEL_MAGIC);
        for v in [
            self.version,
            self.dims.feat_dim as u32,
            self.dims.n_hidden as u32,
            self.dims.alphabet_size as u32,
            self.entries.len() as u32,
            self.payload_crc32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for e in &self.entries {
            out.extend_from_slice(&e.name);
            out.extend_from_slice(&e.rows.to_le_bytes());
            out.extend_from_slice(&e.cols.to_le_bytes());
            out.extend_from_slice(&e.byte_offset.to_le_bytes());
        }
        out
    }
}

/// Total encoded size for `dims`.
pub fn encoded_model_len(dims: ModelDims) -> u64 {
    ModelFileHeader::for_dims(dims).file_len()
}

/// Serializes a model into a complete file image.
pub fn encode_model<S: AsRef<[f32]>>(w: &ModelWeights<S>) -> Vec<u8> {
    let mut header = ModelFileHeader::for_dims(*w.dims());
    let mut out = alloc::vec![0u8; header.file_len() as usize];
    for (i, t) in w.tensors().iter().enumerate() {
        let range = header.tensor_range(i);
        for (dst, v) in out[range].chunks_exact_mut(4).zip(t.as_slice()) {
            dst.copy_from_slice(&v.to_le_bytes());
        }
    }
    header.payload_crc32 = crc32fast::hash(&out[header.payload_start() as usize..]);
    let head = header.encode();
    out[..head.len()].copy_from_slice(&head);
    out
}

/// Checks the payload checksum against the header.
pub fn verify_payload(header: &ModelFileHeader, bytes: &[u8]) -> Result<(), FormatError> {
    let payload = &bytes[header.payload_start() as usize..header.file_len() as usize];
    let actual = crc32fast::hash(payload);
    if actual != header.payload_crc32 {
        return Err(FormatError::Checksum {
            expected: header.payload_crc32,
            actual,
        });
    }
    Ok(())
}

/// Decodes little-endian `f32` values.
pub fn decode_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Parses a full file image into owned weights after verifying the checksum.
pub fn decode_model(bytes: &[u8]) -> Result<ModelWeights, FormatError> {
    let header = ModelFileHeader::parse(bytes)?;
    verify_payload(&header, bytes)?;
    let tensors = (0..header.entries.len())
        .map(|i| {
            let e = &header.entries[i];
            Matrix::new(
                e.rows as usize,
                e.cols as usize,
                decode_f32s(&bytes[header.tensor_range(i)]),
            )
            .map_err(ModelError::from)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ModelWeights::new(header.dims, tensors)?)
}

/// Deterministic `rows×cols` matrix drawn from a fresh generator seeded with `seed`.
pub fn gen_matrix(seed: u64, rows: usize, cols: usize) -> Matrix {
    let mut rng = XorShift64Star::new(seed);
    Matrix::new(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.next_weight()).collect(),
    )
    .expect("length matches by construction")
}

/// Deterministic model: one generator seeded with `seed` fills every tensor in
/// storage order, row-major, with values in `[−0.5, 0.5)`.
///
/// Panics if `dims` is invalid.
pub fn gen_model(seed: u64, dims: ModelDims) -> ModelWeights {
    let mut rng = XorShift64Star::new(seed);
    let tensors = dims
        .tensor_shapes()
        .iter()
        .map(|&(_, rows, cols)| {
            Matrix::new(
                rows,
                cols,
                (0..rows * cols).map(|_| rng.next_weight()).collect(),
            )
            .expect("length matches by construction")
        })
        .collect();
    ModelWeights::new(dims, tensors).expect("invalid model dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: ModelDims = ModelDims {
        feat_dim: 4,
        n_hidden: 8,
        alphabet_size: 5,
    };

    #[test]
    fn round_trip_is_bitwise() {
        let w = gen_model(42, TINY);
        let bytes = encode_model(&w);
        assert_eq!(decode_model(&bytes).unwrap(), w);
        assert_eq!(encode_model(&w), bytes);
    }

    #[test]
    fn layout_is_aligned() {
        let h = ModelFileHeader::for_dims(TINY);
        assert!(h.entries.iter().all(|e| e.byte_offset % 64 == 0));
        assert_eq!(h.entries[0].byte_offset, 384);
        assert_eq!(h.entries[8].name_str(), "Wr_f");
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_model(&gen_model(42, TINY));
        bytes[..4].copy_from_slice(b"XXSM");
        let err = decode_model(&bytes).unwrap_err();
        assert!(matches!(err, FormatError::BadMagic { .. }));
        assert!(alloc::format!("{err}").starts_with("bad magic"));
    }

    #[test]
    fn version_and_table_checks() {
        let good = encode_model(&gen_model(42, TINY));
        let mut bytes = good.clone();
        bytes[4] = 2;
        assert_eq!(
            decode_model(&bytes).unwrap_err(),
            FormatError::VersionMismatch(2)
        );

        let mut bytes = good.clone();
        // Misalign W2's offset.
        let at = HEADER_LEN + 2 * TABLE_ENTRY_LEN + 16;
        bytes[at] += 4;
        assert!(matches!(
            decode_model(&bytes),
            Err(FormatError::OffsetTable(_))
        ));

        let mut bytes = good.clone();
        let at = HEADER_LEN + 12 * TABLE_ENTRY_LEN + 8;
        bytes[at] = 4;
        assert!(matches!(
            decode_model(&bytes),
            Err(FormatError::OffsetTable(_))
        ));
    }

    #[test]
    fn truncation_is_detected() {
        let good = encode_model(&gen_model(42, TINY));
        for cut in [2, 20, 100, good.len() - 1] {
            assert!(
                matches!(
                    decode_model(&good[..cut]),
                    Err(FormatError::Truncated { .. })
                ),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let mut bytes = encode_model(&gen_model(42, TINY));
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        assert!(ModelFileHeader::parse(&bytes).is_ok());
        assert!(matches!(
            decode_model(&bytes),
            Err(FormatError::Checksum { .. })
        ));
    }

    #[test]
    fn seeds_differ() {
        assert_ne!(gen_model(42, TINY), gen_model(43, TINY));
        assert_eq!(gen_model(42, TINY), gen_model(42, TINY));
    }
}
