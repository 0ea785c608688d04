//! Binary position frames.
//!
//! Layout, little-endian: `u32` iteration, `u32` point count `N`, `u8`
//! dimension `d`, then `N * d` `f32` coordinates in row-major order.

use tailne::Matrix;

pub const HEADER_LEN: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct PositionFrame {
    pub iteration: u32,
    pub n: u32,
    pub d: u8,
    pub coords: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("frame shorter than its header")]
    Truncated,
    #[error("frame has {found} bytes, header implies {expected}")]
    LengthMismatch { expected: usize, found: usize },
}

pub fn frame_len(n: usize, d: usize) -> usize {
    HEADER_LEN + 4 * n * d
}

/// Encodes the chosen columns of `coords` (all of them when `axes` is `None`).
pub fn encode(iteration: u64, coords: &Matrix, axes: Option<[usize; 2]>) -> Vec<u8> {
    let n = coords.rows();
    let cols: Vec<usize> = match axes {
        Some(a) => a.to_vec(),
        None => (0..coords.cols()).collect(),
    };
    let d = cols.len();
    let mut out = Vec::with_capacity(frame_len(n, d));
    out.extend_from_slice(&(iteration as u32).to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.push(d as u8);
    for i in 0..n {
        let row = coords.row(i);
        for &c in &cols {
            out.extend_from_slice(&(row[c] as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<PositionFrame, FrameError> {
    if bytes.len() < HEADER_LEN {
        return Err(FrameError::Truncated);
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let (iteration, n, d) = (word(0), word(4), bytes[8]);
    let expected = frame_len(n as usize, d as usize);
    if bytes.len() != expected {
        return Err(FrameError::LengthMismatch {
            expected,
            found: bytes.len(),
        });
    }
    let coords = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(PositionFrame {
        iteration,
        n,
        d,
        coords,
    })
}
