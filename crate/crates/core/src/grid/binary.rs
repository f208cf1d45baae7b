//! Little-endian binary raster format.
//!
//! Layout: eight `u32` header words `[magic, version, H, W, d_y, flags, 0, 0]`,
//! then `H * W` row-major `f32` values, then (when `flags & 1`) the validity
//! mask as a row-major bitset, least significant bit first, padded to a byte.

use super::{Grid, InundationMap};
use crate::error::{Error, Result};

/// `b"CSPG"` read as a little-endian word.
pub const GRID_MAGIC: u32 = u32::from_le_bytes(*b"CSPG");
pub const GRID_VERSION: u32 = 1;
const FLAG_MASK: u32 = 1;
const HEADER_WORDS: usize = 8;

pub fn encode_inundation_bytes(map: &InundationMap, include_mask: bool) -> Vec<u8> {
    let (h, w) = (map.h(), map.w());
    let cells = h * w;
    let mut out = Vec::with_capacity(HEADER_WORDS * 4 + cells * 4 + cells.div_ceil(8));
    let flags = if include_mask { FLAG_MASK } else { 0 };
    let header = [
        GRID_MAGIC,
        GRID_VERSION,
        h as u32,
        w as u32,
        map.valid_count() as u32,
        flags,
        0,
        0,
    ];
    for word in header {
        out.extend_from_slice(&word.to_le_bytes());
    }
    for v in &map.depths.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if include_mask {
        let mut bits = vec![0u8; cells.div_ceil(8)];
        for (k, &m) in map.mask.data.iter().enumerate() {
            if m {
                bits[k / 8] |= 1 << (k % 8);
            }
        }
        out.extend_from_slice(&bits);
    }
    out
}

fn word(bytes: &[u8], k: usize) -> u32 {
    u32::from_le_bytes(bytes[k * 4..k * 4 + 4].try_into().expect("4 bytes"))
}

/// Decodes a raster. Without a stored mask, every non-zero cell is treated
/// as valid.
pub fn decode_inundation(bytes: &[u8]) -> Result<InundationMap> {
    let bad = |m: String| Error::Shape(format!("grid blob: {m}"));
    if bytes.len() < HEADER_WORDS * 4 {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if word(bytes, 0) != GRID_MAGIC {
        return Err(bad("bad magic".into()));
    }
    if word(bytes, 1) != GRID_VERSION {
        return Err(bad(format!("unsupported version {}", word(bytes, 1))));
    }
    let (h, w, d_y, flags) = (
        word(bytes, 2) as usize,
        word(bytes, 3) as usize,
        word(bytes, 4) as usize,
        word(bytes, 5),
    );
    let cells = h * w;
    let has_mask = flags & FLAG_MASK != 0;
    let expected = HEADER_WORDS * 4 + cells * 4 + if has_mask { cells.div_ceil(8) } else { 0 };
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes, got {}", bytes.len())));
    }
    let body = &bytes[HEADER_WORDS * 4..];
    let data: Vec<f32> = body[..cells * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let mask: Vec<bool> = if has_mask {
        let bits = &body[cells * 4..];
        (0..cells).map(|k| bits[k / 8] >> (k % 8) & 1 == 1).collect()
    } else {
        data.iter().map(|&v| v != 0.0).collect()
    };
    if has_mask && mask.iter().filter(|&&m| m).count() != d_y {
        return Err(bad(format!("mask population differs from d_y = {d_y}")));
    }
    Ok(InundationMap {
        depths: Grid { h, w, data },
        mask: Grid { h, w, data: mask },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let mut depths = Grid::filled(2, 3, 0.0f32);
        depths.set(1, 2, 2.5);
        let mut mask = Grid::filled(2, 3, false);
        mask.set(1, 2, true);
        mask.set(0, 0, true);
        let map = InundationMap { depths, mask };
        let bytes = encode_inundation_bytes(&map, true);
        assert_eq!(&bytes[0..4], b"CSPG");
        assert_eq!(word(&bytes, 2), 2);
        assert_eq!(word(&bytes, 3), 3);
        assert_eq!(word(&bytes, 4), 2);
        assert_eq!(bytes.len(), 32 + 24 + 1);
        // Cells 0 and 5 are valid.
        assert_eq!(bytes[56], 0b0010_0001);
        assert_eq!(decode_inundation(&bytes).unwrap(), map);
    }

    #[test]
    fn rejects_truncated_blobs() {
        let map = InundationMap {
            depths: Grid::filled(2, 2, 1.0),
            mask: Grid::filled(2, 2, true),
        };
        let bytes = encode_inundation_bytes(&map, false);
        assert!(decode_inundation(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_inundation(&bytes[..8]).is_err());
        assert_eq!(decode_inundation(&bytes).unwrap().valid_count(), 4);
    }
}
