//! Frame codec.
//!
//! ```text
//! offset 0  magic      C1 0D
//!        2  version    u8 (= 1)
//!        3  msg type   u8
//!        4  length     u32 LE, payload bytes, at most 16 MiB
//!        8  payload
//!   8+len   crc32      u32 LE, IEEE, over bytes [0, 8+len)
//! ```

use super::messages::Message;
use super::ProtocolError;

pub const MAGIC: [u8; 2] = [0xC1, 0x0D];
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 8;
pub const TRAILER_LEN: usize = 4;
pub const OVERHEAD: usize = HEADER_LEN + TRAILER_LEN;
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Hello = 0x01,
    ClassifyReq = 0x02,
    ClassifyResp = 0x03,
    Error = 0x04,
    Ping = 0x05,
    Pong = 0x06,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0x01 => MsgType::Hello,
            0x02 => MsgType::ClassifyReq,
            0x03 => MsgType::ClassifyResp,
            0x04 => MsgType::Error,
            0x05 => MsgType::Ping,
            0x06 => MsgType::Pong,
            _ => return None,
        })
    }
}

/// Wraps a raw payload in header and checksum.
pub fn encode_raw(msg_type: MsgType, payload: &[u8]) -> Result<Vec<u8>, ProtocolError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(ProtocolError::OversizeFrame(payload.len()));
    }
    let mut out = Vec::with_capacity(OVERHEAD + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg_type as u8);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn encode_frame(msg: &Message) -> Result<Vec<u8>, ProtocolError> {
    encode_raw(msg.msg_type(), &msg.encode_payload()?)
}

/// Validates a header prefix. Returns the message type and the total frame
/// length once at least eight bytes are available.
pub fn parse_header(bytes: &[u8]) -> Result<(MsgType, usize), ProtocolError> {
    for (i, &m) in MAGIC.iter().enumerate() {
        match bytes.get(i) {
            Some(&b) if b != m => return Err(ProtocolError::BadMagic),
            None => return Err(ProtocolError::NeedMoreBytes(HEADER_LEN - bytes.len())),
            _ => {}
        }
    }
    match bytes.get(2) {
        Some(&v) if v != VERSION => return Err(ProtocolError::UnsupportedVersion(v)),
        None => return Err(ProtocolError::NeedMoreBytes(HEADER_LEN - bytes.len())),
        _ => {}
    }
    let msg_type = match bytes.get(3) {
        Some(&t) => MsgType::from_u8(t).ok_or(ProtocolError::UnknownMsgType(t))?,
        None => return Err(ProtocolError::NeedMoreBytes(HEADER_LEN - bytes.len())),
    };
    if bytes.len() < HEADER_LEN {
        return Err(ProtocolError::NeedMoreBytes(HEADER_LEN - bytes.len()));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(ProtocolError::OversizeFrame(len));
    }
    Ok((msg_type, OVERHEAD + len))
}

/// Decodes the first frame in `bytes`, returning it with the number of bytes
/// consumed. Incomplete input yields `NeedMoreBytes` and can be retried.
pub fn decode_frame(bytes: &[u8]) -> Result<(Message, usize), ProtocolError> {
    let (msg_type, total) = parse_header(bytes)?;
    if bytes.len() < total {
        return Err(ProtocolError::NeedMoreBytes(total - bytes.len()));
    }
    let body = &bytes[..total - TRAILER_LEN];
    let stored = u32::from_le_bytes(
        bytes[total - TRAILER_LEN..total]
            .try_into()
            .expect("4 bytes"),
    );
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(ProtocolError::CorruptFrame(format!(
            "crc stored {stored:08x}, computed {computed:08x}"
        )));
    }
    let msg = Message::decode_payload(msg_type, &body[HEADER_LEN..])?;
    Ok((msg, total))
}

/// Decodes a buffer that must hold exactly one frame; a declared length that
/// disagrees with the buffer is corruption rather than a short read.
pub fn decode_exact(bytes: &[u8]) -> Result<Message, ProtocolError> {
    match decode_frame(bytes) {
        Ok((msg, used)) if used == bytes.len() => Ok(msg),
        Ok((_, used)) => Err(ProtocolError::CorruptFrame(format!(
            "frame declares {used} bytes, buffer holds {}",
            bytes.len()
        ))),
        Err(ProtocolError::NeedMoreBytes(n)) if bytes.len() >= HEADER_LEN => {
            Err(ProtocolError::CorruptFrame(format!(
                "frame declares {} bytes, buffer holds {}",
                bytes.len() + n,
                bytes.len()
            )))
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ping_is_twelve_bytes() {
        let f = encode_frame(&Message::Ping).unwrap();
        assert_eq!(f.len(), 12);
        assert_eq!(&f[..8], &[0xC1, 0x0D, 0x01, 0x05, 0, 0, 0, 0]);
        let crc = crc32fast::hash(&f[..8]);
        assert_eq!(&f[8..], &crc.to_le_bytes());
        assert_eq!(decode_exact(&f).unwrap(), Message::Ping);
    }

    #[test]
    fn crc_reference_value() {
        // IEEE CRC-32 check value
        assert_eq!(crc32fast::hash(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn prefixes_need_more_bytes() {
        let f = encode_frame(&Message::Pong).unwrap();
        for cut in 0..f.len() {
            assert!(matches!(
                decode_frame(&f[..cut]),
                Err(ProtocolError::NeedMoreBytes(_))
            ));
        }
    }

    #[test]
    fn header_errors() {
        assert!(matches!(
            decode_frame(&[0xC2]),
            Err(ProtocolError::BadMagic)
        ));
        assert!(matches!(
            decode_frame(&[0xC1, 0x0D, 0x02]),
            Err(ProtocolError::UnsupportedVersion(2))
        ));
        assert!(matches!(
            decode_frame(&[0xC1, 0x0D, 0x01, 0x7F]),
            Err(ProtocolError::UnknownMsgType(0x7F))
        ));
        let mut big = vec![0xC1, 0x0D, 0x01, 0x05];
        big.extend_from_slice(&((MAX_PAYLOAD + 1) as u32).to_le_bytes());
        assert!(matches!(
            decode_frame(&big),
            Err(ProtocolError::OversizeFrame(_))
        ));
        assert!(matches!(
            encode_raw(MsgType::Ping, &vec![0; MAX_PAYLOAD + 1]),
            Err(ProtocolError::OversizeFrame(_))
        ));
    }

    #[test]
    fn exact_decoding_rejects_trailing_bytes() {
        let mut f = encode_frame(&Message::Ping).unwrap();
        f.push(0);
        assert!(matches!(
            decode_exact(&f),
            Err(ProtocolError::CorruptFrame(_))
        ));
        let (msg, used) = decode_frame(&f).unwrap();
        assert_eq!((msg, used), (Message::Ping, 12));
    }
}
