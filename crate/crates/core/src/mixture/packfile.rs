//! Binary container for fixed-length token sequences.
//!
//! All integers are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"QCPACK\0\0"
//! 8       4     version (1)
//! 12      4     context_length
//! 16      4     separator_id
//! 20      4     pad_id (0xFFFFFFFF when unpadded)
//! 24      8     sequence count
//! 32      ...   count × context_length u32 token ids
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

pub const MAGIC: [u8; 8] = *b"QCPACK\0\0";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;
const NO_PAD: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackHeader {
    pub context_length: u32,
    pub separator_id: u32,
    pub pad_id: Option<u32>,
    pub count: u64,
}

#[derive(Debug, Error)]
pub enum PackFileError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a packed-sequence file")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("sequence {index} has length {len}, expected {expected}")]
    LengthMismatch {
        index: usize,
        len: usize,
        expected: usize,
    },
}

/// Writes the header and every sequence. Each sequence must be exactly
/// `header.context_length` long and `header.count` must match.
pub fn write_packed<W: Write, S: AsRef<[u32]>>(
    mut out: W,
    header: &PackHeader,
    sequences: &[S],
) -> Result<(), PackFileError> {
    let expected = header.context_length as usize;
    for (index, seq) in sequences.iter().enumerate() {
        let len = seq.as_ref().len();
        if len != expected {
            return Err(PackFileError::LengthMismatch { index, len, expected });
        }
    }
    if sequences.len() as u64 != header.count {
        return Err(PackFileError::Io(io::Error::new(
            io::ErrorKind::InvalidInput,
            "header count does not match sequence count",
        )));
    }
    let mut head = [0u8; HEADER_LEN];
    head[0..8].copy_from_slice(&MAGIC);
    head[8..12].copy_from_slice(&VERSION.to_le_bytes());
    head[12..16].copy_from_slice(&header.context_length.to_le_bytes());
    head[16..20].copy_from_slice(&header.separator_id.to_le_bytes());
    head[20..24].copy_from_slice(&header.pad_id.unwrap_or(NO_PAD).to_le_bytes());
    head[24..32].copy_from_slice(&header.count.to_le_bytes());
    out.write_all(&head)?;
    let mut buf = Vec::with_capacity(expected * 4);
    for seq in sequences {
        buf.clear();
        for id in seq.as_ref() {
            buf.extend_from_slice(&id.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_packed<R: Read>(mut input: R) -> Result<(PackHeader, Vec<Vec<u32>>), PackFileError> {
    let mut head = [0u8; HEADER_LEN];
    input.read_exact(&mut head)?;
    if head[0..8] != MAGIC {
        return Err(PackFileError::BadMagic);
    }
    let u32_at = |at: usize| u32::from_le_bytes(head[at..at + 4].try_into().unwrap());
    let version = u32_at(8);
    if version != VERSION {
        return Err(PackFileError::UnsupportedVersion(version));
    }
    let pad = u32_at(20);
    let header = PackHeader {
        context_length: u32_at(12),
        separator_id: u32_at(16),
        pad_id: (pad != NO_PAD).then_some(pad),
        count: u64::from_le_bytes(head[24..32].try_into().unwrap()),
    };
    let width = header.context_length as usize;
    let mut row = vec![0u8; width * 4];
    let mut sequences = Vec::with_capacity(header.count.min(1 << 20) as usize);
    for _ in 0..header.count {
        input.read_exact(&mut row)?;
        sequences.push(
            row.chunks_exact(4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        );
    }
    Ok((header, sequences))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let header = PackHeader {
            context_length: 2,
            separator_id: 7,
            pad_id: None,
            count: 1,
        };
        let mut bytes = Vec::new();
        write_packed(&mut bytes, &header, &[vec![1u32, 0x0102_0304]]).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 8);
        assert_eq!(&bytes[..8], b"QCPACK\0\0");
        assert_eq!(&bytes[12..16], &[2, 0, 0, 0]);
        assert_eq!(&bytes[20..24], &[0xff; 4]);
        assert_eq!(&bytes[36..40], &[4, 3, 2, 1]);
    }

    #[test]
    fn rejects_wrong_lengths_and_magic() {
        let header = PackHeader {
            context_length: 3,
            separator_id: 0,
            pad_id: Some(1),
            count: 1,
        };
        assert!(matches!(
            write_packed(Vec::new(), &header, &[vec![1u32, 2]]),
            Err(PackFileError::LengthMismatch { .. })
        ));
        assert!(matches!(
            read_packed(&[0u8; HEADER_LEN][..]),
            Err(PackFileError::BadMagic)
        ));
    }

    proptest! {
        #[test]
        fn round_trip(width in 1usize..16, rows in 0usize..8, pad in proptest::option::of(0u32..1000), seed in any::<u32>()) {
            let sequences: Vec<Vec<u32>> = (0..rows)
                .map(|r| (0..width).map(|c| seed.wrapping_mul(31).wrapping_add((r * width + c) as u32)).collect())
                .collect();
            let header = PackHeader { context_length: width as u32, separator_id: 5, pad_id: pad, count: rows as u64 };
            let mut bytes = Vec::new();
            write_packed(&mut bytes, &header, &sequences).unwrap();
            let (h, s) = read_packed(bytes.as_slice()).unwrap();
            prop_assert_eq!(h, header);
            prop_assert_eq!(s, sequences);
        }
    }
}
