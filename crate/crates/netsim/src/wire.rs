//! Binary frames exchanged between the local and the central node.
//!
//! All integers are little-endian.
//!
//! ```text
//! REQUEST   A5 01 | u16 n | n x f64
//! RESPONSE  A5 02 | u8 flags | u16 count | u16 q | count x ceil(q/8) bytes
//! ERROR     A5 03 | u8 code
//! ```
//!
//! An active set travels as a `q`-bit tuple, LSB first: bit `(i-1) % 8` of
//! byte `(i-1) / 8` is set iff row `i` (one-based) is active.

use mpc_reuse_core::ActiveSet;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

pub const MAGIC: u8 = 0xA5;
pub const TYPE_REQUEST: u8 = 0x01;
pub const TYPE_RESPONSE: u8 = 0x02;
pub const TYPE_ERROR: u8 = 0x03;
/// Response flag: the stage-subset criterion applied and the sets share one law.
pub const FLAG_CRITERION: u8 = 0x01;

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("bad magic byte {0:#04x}")]
    BadMagic(u8),
    #[error("unknown frame type {0:#04x}")]
    UnknownType(u8),
    #[error("row {index} out of range for q = {q}")]
    IndexOutOfRange { index: usize, q: usize },
    #[error("bits set beyond q = {0}")]
    PaddingBits(usize),
    #[error("{0} exceeds the u16 field")]
    TooLarge(usize),
    #[error("unknown error code {0}")]
    UnknownCode(u8),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    Infeasible = 1,
    Malformed = 2,
}

impl TryFrom<u8> for ErrorCode {
    type Error = WireError;

    fn try_from(v: u8) -> Result<Self, WireError> {
        match v {
            1 => Ok(ErrorCode::Infeasible),
            2 => Ok(ErrorCode::Malformed),
            other => Err(WireError::UnknownCode(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Request { state: Vec<f64> },
    Response {
        criterion: bool,
        q: usize,
        sets: Vec<ActiveSet>,
    },
    Error(ErrorCode),
}

/// Bytes per encoded active set.
pub fn wire_len(q: usize) -> usize {
    q.div_ceil(8)
}

pub fn encode_active_set(set: &ActiveSet, q: usize) -> Result<Vec<u8>, WireError> {
    let mut bits = vec![0u8; wire_len(q)];
    for &i in set.indices() {
        if i >= q {
            return Err(WireError::IndexOutOfRange { index: i + 1, q });
        }
        bits[i / 8] |= 1 << (i % 8);
    }
    Ok(bits)
}

pub fn decode_active_set(bits: &[u8], q: usize) -> Result<ActiveSet, WireError> {
    if bits.len() != wire_len(q) {
        return Err(WireError::IndexOutOfRange {
            index: bits.len() * 8,
            q,
        });
    }
    let mut idx = Vec::new();
    for (byte, &b) in bits.iter().enumerate() {
        for bit in 0..8 {
            if b >> bit & 1 == 1 {
                let i = byte * 8 + bit;
                if i >= q {
                    return Err(WireError::PaddingBits(q));
                }
                idx.push(i);
            }
        }
    }
    Ok(ActiveSet::from_indices(idx))
}

/// Sorts by descending binary value and keeps the first `l` sets.
pub fn sort_and_truncate(mut family: Vec<ActiveSet>, l: usize) -> Vec<ActiveSet> {
    family.sort_by(|a, b| b.cmp_binary_value(a));
    family.truncate(l.max(1));
    family
}

fn u16_field(v: usize) -> Result<[u8; 2], WireError> {
    u16::try_from(v)
        .map(u16::to_le_bytes)
        .map_err(|_| WireError::TooLarge(v))
}

impl Frame {
    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let mut out = vec![MAGIC];
        match self {
            Frame::Request { state } => {
                out.push(TYPE_REQUEST);
                out.extend(u16_field(state.len())?);
                for v in state {
                    out.extend(v.to_le_bytes());
                }
            }
            Frame::Response { criterion, q, sets } => {
                out.push(TYPE_RESPONSE);
                out.push(if *criterion { FLAG_CRITERION } else { 0 });
                out.extend(u16_field(sets.len())?);
                out.extend(u16_field(*q)?);
                for s in sets {
                    out.extend(encode_active_set(s, *q)?);
                }
            }
            Frame::Error(code) => {
                out.push(TYPE_ERROR);
                out.push(*code as u8);
            }
        }
        Ok(out)
    }

    /// Decodes one frame from the front of `bytes`, returning it with the
    /// number of bytes consumed. `Ok(None)` means more bytes are needed.
    pub fn decode(bytes: &[u8]) -> Result<Option<(Frame, usize)>, WireError> {
        if bytes.len() < 2 {
            return Ok(None);
        }
        if bytes[0] != MAGIC {
            return Err(WireError::BadMagic(bytes[0]));
        }
        let u16_at = |at: usize| u16::from_le_bytes([bytes[at], bytes[at + 1]]) as usize;
        match bytes[1] {
            TYPE_REQUEST => {
                if bytes.len() < 4 {
                    return Ok(None);
                }
                let n = u16_at(2);
                let end = 4 + 8 * n;
                if bytes.len() < end {
                    return Ok(None);
                }
                let state = bytes[4..end]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect();
                Ok(Some((Frame::Request { state }, end)))
            }
            TYPE_RESPONSE => {
                if bytes.len() < 7 {
                    return Ok(None);
                }
                let criterion = bytes[2] & FLAG_CRITERION != 0;
                let count = u16_at(3);
                let q = u16_at(5);
                let w = wire_len(q);
                let end = 7 + count * w;
                if bytes.len() < end {
                    return Ok(None);
                }
                let sets = (0..count)
                    .map(|k| decode_active_set(&bytes[7 + k * w..7 + (k + 1) * w], q))
                    .collect::<Result<_, _>>()?;
                Ok(Some((Frame::Response { criterion, q, sets }, end)))
            }
            TYPE_ERROR => {
                if bytes.len() < 3 {
                    return Ok(None);
                }
                Ok(Some((Frame::Error(ErrorCode::try_from(bytes[2])?), 3)))
            }
            other => Err(WireError::UnknownType(other)),
        }
    }
}

/// Reads one frame. `Ok(None)` on a clean end of stream before the first byte.
pub async fn read_frame<R: AsyncRead + Unpin>(r: &mut R) -> Result<Option<Frame>, WireError> {
    let mut head = [0u8; 2];
    match r.read_exact(&mut head[..1]).await {
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    if head[0] != MAGIC {
        return Err(WireError::BadMagic(head[0]));
    }
    r.read_exact(&mut head[1..]).await?;
    let mut buf = head.to_vec();
    let extra = match head[1] {
        TYPE_REQUEST => {
            let mut n = [0u8; 2];
            r.read_exact(&mut n).await?;
            buf.extend(n);
            8 * u16::from_le_bytes(n) as usize
        }
        TYPE_RESPONSE => {
            let mut h = [0u8; 5];
            r.read_exact(&mut h).await?;
            buf.extend(h);
            let count = u16::from_le_bytes([h[1], h[2]]) as usize;
            let q = u16::from_le_bytes([h[3], h[4]]) as usize;
            count * wire_len(q)
        }
        TYPE_ERROR => 1,
        other => return Err(WireError::UnknownType(other)),
    };
    let start = buf.len();
    buf.resize(start + extra, 0);
    r.read_exact(&mut buf[start..]).await?;
    let (frame, used) = Frame::decode(&buf)?.expect("complete frame buffered");
    debug_assert_eq!(used, buf.len());
    Ok(Some(frame))
}

pub async fn write_frame<W: AsyncWrite + Unpin>(w: &mut W, frame: &Frame) -> Result<(), WireError> {
    w.write_all(&frame.encode()?).await?;
    w.flush().await?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(idx: &[usize]) -> ActiveSet {
        ActiveSet::from_one_based(idx)
    }

    #[test]
    fn bit_layout() {
        assert_eq!(encode_active_set(&set(&[1, 3]), 8).unwrap(), vec![0x05]);
        assert_eq!(encode_active_set(&ActiveSet::empty(), 8).unwrap(), vec![0x00]);
        assert_eq!(encode_active_set(&set(&[9]), 10).unwrap(), vec![0x00, 0x01]);
        assert!(matches!(
            encode_active_set(&set(&[9]), 8),
            Err(WireError::IndexOutOfRange { index: 9, q: 8 })
        ));
    }

    #[test]
    fn padding_bits_rejected() {
        assert!(matches!(
            decode_active_set(&[0x00, 0x04], 10),
            Err(WireError::PaddingBits(10))
        ));
    }

    #[test]
    fn truncation_keeps_largest_values() {
        let fam = vec![set(&[1, 7, 13]), set(&[1, 7]), set(&[1, 13]), set(&[1])];
        assert_eq!(
            sort_and_truncate(fam.clone(), 2),
            vec![set(&[1, 7, 13]), set(&[1, 13])]
        );
        assert_eq!(sort_and_truncate(fam, 10).len(), 4);
        assert_eq!(
            sort_and_truncate(vec![set(&[2]), set(&[1, 3])], 2),
            vec![set(&[1, 3]), set(&[2])]
        );
    }

    #[test]
    fn frame_layouts() {
        let req = Frame::Request {
            state: vec![1.0, -2.0],
        };
        let bytes = req.encode().unwrap();
        assert_eq!(&bytes[..4], &[0xA5, 0x01, 0x02, 0x00]);
        assert_eq!(&bytes[4..12], &1.0f64.to_le_bytes());
        assert_eq!(Frame::decode(&bytes).unwrap(), Some((req, 20)));

        let resp = Frame::Response {
            criterion: true,
            q: 10,
            sets: vec![set(&[1, 9]), set(&[1])],
        };
        let bytes = resp.encode().unwrap();
        assert_eq!(
            bytes,
            vec![0xA5, 0x02, 0x01, 0x02, 0x00, 0x0A, 0x00, 0x01, 0x01, 0x01, 0x00]
        );
        assert_eq!(Frame::decode(&bytes).unwrap(), Some((resp, 11)));

        let err = Frame::Error(ErrorCode::Infeasible);
        assert_eq!(err.encode().unwrap(), vec![0xA5, 0x03, 0x01]);
    }

    #[test]
    fn partial_and_bad_input() {
        let bytes = Frame::Request { state: vec![0.5] }.encode().unwrap();
        for cut in 0..bytes.len() {
            assert_eq!(Frame::decode(&bytes[..cut]).unwrap(), None);
        }
        assert!(matches!(Frame::decode(&[0x00, 0x01]), Err(WireError::BadMagic(0))));
        assert!(matches!(Frame::decode(&[0xA5, 0x09]), Err(WireError::UnknownType(9))));
        assert!(matches!(Frame::decode(&[0xA5, 0x03, 0x07]), Err(WireError::UnknownCode(7))));
    }
}
