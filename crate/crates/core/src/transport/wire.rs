//! Binary framing for the TCP backend.
//!
//! ```text
//! u32 LE   length of the body (kind through payload)
//! u8       kind: 1 Register, 2 Broadcast, 3 Report, 4 Shutdown, 5 Error
//! u32 LE   sender id (worker index, or MASTER_ID)
//! u64 LE   iteration tag (Broadcast: k, Report: k_i, Error: error code)
//! f64 LE*  payload: Broadcast x0; Report x_i followed by λ_i
//! u32 LE   CRC32C of the body
//! ```

use std::io::{ErrorKind, Read, Write};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::protocol::{Report, WireMessage};

pub const KIND_REGISTER: u8 = 1;
pub const KIND_BROADCAST: u8 = 2;
pub const KIND_REPORT: u8 = 3;
pub const KIND_SHUTDOWN: u8 = 4;
pub const KIND_ERROR: u8 = 5;

pub const MASTER_ID: u32 = u32::MAX;

pub const ERR_DUPLICATE_ID: u64 = 1;
pub const ERR_ID_OUT_OF_RANGE: u64 = 2;
pub const ERR_PROTOCOL: u64 = 3;

/// Bytes of kind + sender + tag.
const HEADER: usize = 1 + 4 + 8;
/// Upper bound on a frame body (64 MiB).
pub const MAX_BODY: usize = 64 << 20;

/// Encodes `msg` sent by `sender` into one frame.
pub fn encode(msg: &WireMessage, sender: u32) -> Vec<u8> {
    let (kind, tag, payload): (u8, u64, Vec<&DVector<f64>>) = match msg {
        WireMessage::Register { .. } => (KIND_REGISTER, 0, vec![]),
        WireMessage::Broadcast { x0, k } => (KIND_BROADCAST, *k, vec![x0]),
        WireMessage::Report(r) => (KIND_REPORT, r.tag, vec![&r.x, &r.lambda]),
        WireMessage::Shutdown => (KIND_SHUTDOWN, 0, vec![]),
        WireMessage::Error { code } => (KIND_ERROR, *code, vec![]),
    };
    let sender = match msg {
        WireMessage::Register { worker } => *worker as u32,
        WireMessage::Report(r) => r.worker as u32,
        _ => sender,
    };
    let count: usize = payload.iter().map(|v| v.len()).sum();
    let body_len = HEADER + 8 * count;
    let mut out = Vec::with_capacity(4 + body_len + 4);
    out.extend_from_slice(&(body_len as u32).to_le_bytes());
    out.push(kind);
    out.extend_from_slice(&sender.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    for v in payload {
        for x in v.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32c::crc32c(&out[4..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Decodes a frame body (without length prefix and checksum).
pub fn decode_body(body: &[u8]) -> Result<(WireMessage, u32)> {
    if body.len() < HEADER {
        return Err(Error::Transport(format!(
            "frame body of {} bytes is too short",
            body.len()
        )));
    }
    let kind = body[0];
    let sender = u32::from_le_bytes(body[1..5].try_into().expect("4 bytes"));
    let tag = u64::from_le_bytes(body[5..13].try_into().expect("8 bytes"));
    let rest = &body[HEADER..];
    if !rest.len().is_multiple_of(8) {
        return Err(Error::Transport(format!(
            "payload of {} bytes is not a whole number of f64 values",
            rest.len()
        )));
    }
    let values: Vec<f64> = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let empty = |name: &str| -> Result<()> {
        if values.is_empty() {
            Ok(())
        } else {
            Err(Error::Transport(format!(
                "{name} frame carries an unexpected payload"
            )))
        }
    };
    let msg = match kind {
        KIND_REGISTER => {
            empty("register")?;
            WireMessage::Register {
                worker: sender as usize,
            }
        }
        KIND_BROADCAST => WireMessage::Broadcast {
            x0: DVector::from_vec(values),
            k: tag,
        },
        KIND_REPORT => {
            if !values.len().is_multiple_of(2) {
                return Err(Error::Transport("report payload has odd length".into()));
            }
            let n = values.len() / 2;
            WireMessage::Report(Report {
                worker: sender as usize,
                x: DVector::from_column_slice(&values[..n]),
                lambda: DVector::from_column_slice(&values[n..]),
                tag,
            })
        }
        KIND_SHUTDOWN => {
            empty("shutdown")?;
            WireMessage::Shutdown
        }
        KIND_ERROR => {
            empty("error")?;
            WireMessage::Error { code: tag }
        }
        other => return Err(Error::Transport(format!("unknown frame kind {other}"))),
    };
    Ok((msg, sender))
}

/// Decodes one complete frame from a byte slice.
pub fn decode(frame: &[u8]) -> Result<(WireMessage, u32)> {
    let mut cursor = frame;
    let out = read_frame(&mut cursor)?.ok_or_else(|| Error::Transport("empty frame".into()))?;
    if !cursor.is_empty() {
        return Err(Error::Transport(format!(
            "{} trailing bytes after frame",
            cursor.len()
        )));
    }
    Ok(out)
}

/// Reads one frame. Returns `Ok(None)` on a clean end of stream before the
/// first byte of a frame.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<(WireMessage, u32)>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let body_len = u32::from_le_bytes(len) as usize;
    if !(HEADER..=MAX_BODY).contains(&body_len) {
        return Err(Error::Transport(format!(
            "frame length {body_len} is out of range"
        )));
    }
    let mut body = vec![0u8; body_len + 4];
    r.read_exact(&mut body)?;
    let (body, crc) = body.split_at(body_len);
    let expected = u32::from_le_bytes(crc.try_into().expect("4 bytes"));
    let computed = crc32c::crc32c(body);
    if expected != computed {
        return Err(Error::Checksum { expected, computed });
    }
    decode_body(body).map(Some)
}

pub fn write_frame<W: Write>(w: &mut W, msg: &WireMessage, sender: u32) -> Result<()> {
    w.write_all(&encode(msg, sender))?;
    w.flush()?;
    Ok(())
}
