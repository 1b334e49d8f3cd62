//! Length-prefixed binary frames shared by clients and servers.
//!
//! `len(4) | msg_type(1) | epoch_id(8) | payload`, where `len` counts
//! everything after itself. All integers are big-endian.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FRAME_HEADER_LEN: usize = 4 + 1 + 8;
/// Upper bound on a frame body accepted from the network.
pub const DEFAULT_MAX_FRAME: usize = 1 << 30;

/// Which registration/lookup pipeline a message belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Long,
    Short,
}

impl std::str::FromStr for Tier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "long" => Ok(Tier::Long),
            "short" => Ok(Tier::Short),
            other => Err(format!("unknown tier {other:?}")),
        }
    }
}

impl std::fmt::Display for Tier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Tier::Long => "long",
            Tier::Short => "short",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    RegisterLt = 0x01,
    RegisterSt = 0x02,
    DbPush = 0x03,
    Ack = 0x04,
    GetMeta = 0x10,
    PirQuery = 0x11,
    PirResponse = 0x12,
    Meta = 0x13,
    Error = 0x7f,
}

impl MsgType {
    pub fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            0x01 => MsgType::RegisterLt,
            0x02 => MsgType::RegisterSt,
            0x03 => MsgType::DbPush,
            0x04 => MsgType::Ack,
            0x10 => MsgType::GetMeta,
            0x11 => MsgType::PirQuery,
            0x12 => MsgType::PirResponse,
            0x13 => MsgType::Meta,
            0x7f => MsgType::Error,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ErrorCode {
    BadSignature = 1,
    WrongEpochWindow = 2,
    MalformedRecord = 3,
    UnknownEpoch = 4,
    BadQuery = 5,
    BadFrame = 6,
    DigestMismatch = 7,
    RateLimited = 8,
}

impl ErrorCode {
    pub fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            1 => ErrorCode::BadSignature,
            2 => ErrorCode::WrongEpochWindow,
            3 => ErrorCode::MalformedRecord,
            4 => ErrorCode::UnknownEpoch,
            5 => ErrorCode::BadQuery,
            6 => ErrorCode::BadFrame,
            7 => ErrorCode::DigestMismatch,
            8 => ErrorCode::RateLimited,
            _ => return None,
        })
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame truncated")]
    Truncated,
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
    #[error("frame length {0} out of range")]
    BadLength(usize),
    #[error("malformed error payload")]
    BadErrorPayload,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub epoch_id: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, epoch_id: u64, payload: Vec<u8>) -> Self {
        Frame {
            msg_type,
            epoch_id,
            payload,
        }
    }

    pub fn ack(epoch_id: u64) -> Self {
        Frame::new(MsgType::Ack, epoch_id, Vec::new())
    }

    pub fn error(code: ErrorCode, epoch_id: u64, detail: &str) -> Self {
        let mut payload = Vec::with_capacity(1 + detail.len());
        payload.push(code as u8);
        payload.extend_from_slice(detail.as_bytes());
        Frame::new(MsgType::Error, epoch_id, payload)
    }

    /// `(code, detail)` of an ERROR frame.
    pub fn error_parts(&self) -> Result<(ErrorCode, String), WireError> {
        let (&code, rest) = self
            .payload
            .split_first()
            .ok_or(WireError::BadErrorPayload)?;
        let code = ErrorCode::from_u8(code).ok_or(WireError::BadErrorPayload)?;
        Ok((code, String::from_utf8_lossy(rest).into_owned()))
    }

    /// Bytes on the wire for a frame carrying `payload_len` bytes.
    pub fn encoded_len_for(payload_len: usize) -> usize {
        FRAME_HEADER_LEN + payload_len
    }

    pub fn encoded_len(&self) -> usize {
        Self::encoded_len_for(self.payload.len())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&((1 + 8 + self.payload.len()) as u32).to_be_bytes());
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.epoch_id.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() < FRAME_HEADER_LEN {
            return Err(WireError::Truncated);
        }
        let len = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
        if len < 9 {
            return Err(WireError::BadLength(len));
        }
        if bytes.len() != 4 + len {
            return Err(WireError::Truncated);
        }
        Self::from_body(&bytes[4..])
    }

    fn from_body(body: &[u8]) -> Result<Self, WireError> {
        let msg_type = MsgType::from_u8(body[0]).ok_or(WireError::UnknownType(body[0]))?;
        let epoch_id = u64::from_be_bytes(body[1..9].try_into().expect("8 bytes"));
        Ok(Frame::new(msg_type, epoch_id, body[9..].to_vec()))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), WireError> {
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    /// Reads one frame; `Ok(None)` on clean EOF before the length prefix.
    pub fn read_from<R: Read>(r: &mut R, max_len: usize) -> Result<Option<Self>, WireError> {
        let mut len_buf = [0u8; 4];
        match r.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        let len = u32::from_be_bytes(len_buf) as usize;
        if len < 9 || len > max_len {
            return Err(WireError::BadLength(len));
        }
        let mut body = vec![0u8; len];
        r.read_exact(&mut body).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                WireError::Truncated
            } else {
                e.into()
            }
        })?;
        Self::from_body(&body).map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let f = Frame::new(MsgType::PirQuery, 0x0102, vec![9, 8, 7]);
        let b = f.to_bytes();
        assert_eq!(b.len(), 16);
        assert_eq!(&b[..4], &12u32.to_be_bytes());
        assert_eq!(b[4], 0x11);
        assert_eq!(&b[5..13], &0x0102u64.to_be_bytes());
        assert_eq!(Frame::from_bytes(&b).unwrap(), f);
    }

    #[test]
    fn stream_round_trip() {
        let frames = vec![
            Frame::ack(3),
            Frame::error(ErrorCode::UnknownEpoch, 7, "gone"),
            Frame::new(MsgType::DbPush, 1, vec![0; 1000]),
        ];
        let mut buf = Vec::new();
        for f in &frames {
            f.write_to(&mut buf).unwrap();
        }
        let mut cur = io::Cursor::new(buf);
        for f in &frames {
            assert_eq!(
                &Frame::read_from(&mut cur, DEFAULT_MAX_FRAME)
                    .unwrap()
                    .unwrap(),
                f
            );
        }
        assert!(Frame::read_from(&mut cur, DEFAULT_MAX_FRAME)
            .unwrap()
            .is_none());
        assert_eq!(
            frames[1].error_parts().unwrap(),
            (ErrorCode::UnknownEpoch, "gone".to_string())
        );
    }

    #[test]
    fn rejects_bad_frames() {
        let mut b = Frame::ack(1).to_bytes();
        b[4] = 0x55;
        assert!(matches!(
            Frame::from_bytes(&b),
            Err(WireError::UnknownType(0x55))
        ));
        assert!(matches!(
            Frame::from_bytes(&b[..10]),
            Err(WireError::Truncated)
        ));
        let mut cur = io::Cursor::new(vec![0, 0, 0, 3, 1, 2, 3]);
        assert!(matches!(
            Frame::read_from(&mut cur, 100),
            Err(WireError::BadLength(3))
        ));
    }
}
