//! Binary wire protocol between edge clients and the inference server.
//! See `docs/protocol.md` for the byte layout.

pub mod frame;
pub mod messages;
pub mod quant;
pub mod stream;

pub use frame::{
    decode_exact, decode_frame, encode_frame, MsgType, HEADER_LEN, MAGIC, MAX_PAYLOAD, OVERHEAD,
    VERSION,
};
pub use messages::{
    ClassifyRequest, ClassifyResponse, ErrorCode, ErrorMessage, Hello, ImagePayload, Message,
    PayloadKind, QuantizedFeatures, RequestBody, RoiBox,
};
pub use quant::{dequantize, quantize_features};
pub use stream::{decode_stream, write_message, FrameReader, MessageReader, StreamError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message type 0x{0:02x}")]
    UnknownMsgType(u8),
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("frame payload of {0} bytes exceeds the 16 MiB cap")]
    OversizeFrame(usize),
    #[error("corrupt frame: {0}")]
    CorruptFrame(String),
    #[error("need {0} more bytes")]
    NeedMoreBytes(usize),
    #[error("invalid features: {0}")]
    InvalidFeatures(String),
}
