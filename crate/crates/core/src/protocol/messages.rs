//! Message payloads carried inside frames.

use super::frame::MsgType;
use super::ProtocolError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum PayloadKind {
    FullImage = 0,
    Roi = 1,
    Features = 2,
}

impl PayloadKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => PayloadKind::FullImage,
            1 => PayloadKind::Roi,
            2 => PayloadKind::Features,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            PayloadKind::FullImage => "full_image",
            PayloadKind::Roi => "roi",
            PayloadKind::Features => "features",
        }
    }
}

/// Crop rectangle in the coordinates of the original capture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RoiBox {
    pub x: u16,
    pub y: u16,
    pub width: u16,
    pub height: u16,
}

/// Planar `[channels, height, width]` f32 pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePayload {
    pub width: u16,
    pub height: u16,
    pub channels: u16,
    pub pixels: Vec<f32>,
}

impl ImagePayload {
    pub fn shape(&self) -> [usize; 3] {
        [
            self.channels as usize,
            self.height as usize,
            self.width as usize,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedFeatures {
    pub scale: f32,
    pub values: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RequestBody {
    FullImage(ImagePayload),
    /// The crop travels with the box it was cut from.
    Roi {
        roi: RoiBox,
        image: ImagePayload,
    },
    Features(QuantizedFeatures),
}

impl RequestBody {
    pub fn kind(&self) -> PayloadKind {
        match self {
            RequestBody::FullImage(_) => PayloadKind::FullImage,
            RequestBody::Roi { .. } => PayloadKind::Roi,
            RequestBody::Features(_) => PayloadKind::Features,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyRequest {
    pub request_id: u64,
    pub body: RequestBody,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyResponse {
    pub request_id: u64,
    pub probabilities: Vec<f32>,
    pub server_compute_us: u32,
}

/// Sent by the server when a connection opens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hello {
    pub model_fingerprint: u64,
    pub class_count: u16,
    pub input_size: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum ErrorCode {
    Malformed = 1,
    Timeout = 2,
    BadRequest = 3,
    FeatureHeadMismatch = 4,
    Unsupported = 5,
    Internal = 6,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 6] = [
        ErrorCode::Malformed,
        ErrorCode::Timeout,
        ErrorCode::BadRequest,
        ErrorCode::FeatureHeadMismatch,
        ErrorCode::Unsupported,
        ErrorCode::Internal,
    ];

    pub fn from_u16(v: u16) -> Option<Self> {
        Self::ALL.into_iter().find(|c| *c as u16 == v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorMessage {
    /// Zero when the failure is not tied to a request.
    pub request_id: u64,
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello(Hello),
    ClassifyRequest(ClassifyRequest),
    ClassifyResponse(ClassifyResponse),
    Error(ErrorMessage),
    Ping,
    Pong,
}

pub const PROBABILITY_TOLERANCE: f64 = 1e-5;

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Hello(_) => MsgType::Hello,
            Message::ClassifyRequest(_) => MsgType::ClassifyReq,
            Message::ClassifyResponse(_) => MsgType::ClassifyResp,
            Message::Error(_) => MsgType::Error,
            Message::Ping => MsgType::Ping,
            Message::Pong => MsgType::Pong,
        }
    }

    /// Serialises the payload; counts that do not fit their length fields
    /// and images whose pixels disagree with their dimensions are rejected.
    pub fn encode_payload(&self) -> Result<Vec<u8>, ProtocolError> {
        let mut w = Vec::new();
        match self {
            Message::Hello(h) => {
                w.extend_from_slice(&h.model_fingerprint.to_le_bytes());
                w.extend_from_slice(&h.class_count.to_le_bytes());
                w.extend_from_slice(&h.input_size.to_le_bytes());
            }
            Message::ClassifyRequest(r) => {
                w.extend_from_slice(&r.request_id.to_le_bytes());
                w.push(r.body.kind() as u8);
                match &r.body {
                    RequestBody::FullImage(img) => put_image(&mut w, img, None)?,
                    RequestBody::Roi { roi, image } => put_image(&mut w, image, Some(roi))?,
                    RequestBody::Features(f) => {
                        w.extend_from_slice(&count_u16(f.values.len(), "feature")?.to_le_bytes());
                        w.extend_from_slice(&f.scale.to_le_bytes());
                        w.extend_from_slice(&f.values);
                    }
                }
            }
            Message::ClassifyResponse(r) => {
                w.extend_from_slice(&r.request_id.to_le_bytes());
                w.extend_from_slice(&count_u16(r.probabilities.len(), "class")?.to_le_bytes());
                for p in &r.probabilities {
                    w.extend_from_slice(&p.to_le_bytes());
                }
                w.extend_from_slice(&r.server_compute_us.to_le_bytes());
            }
            Message::Error(e) => {
                w.extend_from_slice(&e.request_id.to_le_bytes());
                w.extend_from_slice(&(e.code as u16).to_le_bytes());
                let text = truncate_utf8(&e.message, u16::MAX as usize);
                w.extend_from_slice(&(text.len() as u16).to_le_bytes());
                w.extend_from_slice(text.as_bytes());
            }
            Message::Ping | Message::Pong => {}
        }
        Ok(w)
    }

    pub fn decode_payload(msg_type: MsgType, payload: &[u8]) -> Result<Message, ProtocolError> {
        let mut r = Reader::new(payload);
        let msg = match msg_type {
            MsgType::Hello => Message::Hello(Hello {
                model_fingerprint: r.u64()?,
                class_count: r.u16()?,
                input_size: r.u16()?,
            }),
            MsgType::ClassifyReq => {
                let request_id = r.u64()?;
                let kind = r.u8()?;
                let kind = PayloadKind::from_u8(kind)
                    .ok_or_else(|| malformed(format!("unknown payload kind {kind}")))?;
                let body = match kind {
                    PayloadKind::FullImage => RequestBody::FullImage(get_image(&mut r, false)?.0),
                    PayloadKind::Roi => {
                        let (image, roi) = get_image(&mut r, true)?;
                        RequestBody::Roi {
                            roi: roi.expect("roi requested"),
                            image,
                        }
                    }
                    PayloadKind::Features => {
                        let n = r.u16()? as usize;
                        let scale = r.f32()?;
                        if !(scale.is_finite() && scale > 0.0) {
                            return Err(malformed(format!("feature scale {scale}")));
                        }
                        if n == 0 {
                            return Err(malformed("empty feature vector"));
                        }
                        RequestBody::Features(QuantizedFeatures {
                            scale,
                            values: r.bytes(n)?.to_vec(),
                        })
                    }
                };
                Message::ClassifyRequest(ClassifyRequest { request_id, body })
            }
            MsgType::ClassifyResp => {
                let request_id = r.u64()?;
                let n = r.u16()? as usize;
                if n == 0 {
                    return Err(malformed("response without classes"));
                }
                let raw = r.bytes(n * 4)?;
                let probabilities: Vec<f32> = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                check_probabilities(&probabilities)?;
                Message::ClassifyResponse(ClassifyResponse {
                    request_id,
                    probabilities,
                    server_compute_us: r.u32()?,
                })
            }
            MsgType::Error => {
                let request_id = r.u64()?;
                let code = r.u16()?;
                let code = ErrorCode::from_u16(code)
                    .ok_or_else(|| malformed(format!("unknown error code {code}")))?;
                let n = r.u16()? as usize;
                let message = std::str::from_utf8(r.bytes(n)?)
                    .map_err(|_| malformed("error text is not UTF-8"))?
                    .to_string();
                Message::Error(ErrorMessage {
                    request_id,
                    code,
                    message,
                })
            }
            MsgType::Ping => Message::Ping,
            MsgType::Pong => Message::Pong,
        };
        r.finish()?;
        Ok(msg)
    }
}

pub fn check_probabilities(p: &[f32]) -> Result<(), ProtocolError> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(malformed("probabilities must be finite and non-negative"));
    }
    let sum: f64 = p.iter().map(|&v| v as f64).sum();
    if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
        return Err(malformed(format!("probabilities sum to {sum}")));
    }
    Ok(())
}

fn malformed(msg: impl Into<String>) -> ProtocolError {
    ProtocolError::Malformed(msg.into())
}

fn truncate_utf8(s: &str, max: usize) -> &str {
    if s.len() <= max {
        return s;
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    &s[..end]
}

fn count_u16(n: usize, what: &str) -> Result<u16, ProtocolError> {
    match u16::try_from(n) {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(malformed(format!(
            "{what} count {n} does not fit 1..=65535"
        ))),
    }
}

fn put_image(
    w: &mut Vec<u8>,
    img: &ImagePayload,
    roi: Option<&RoiBox>,
) -> Result<(), ProtocolError> {
    let [c, h, wd] = img.shape();
    if img.pixels.len() != c * h * wd || c * h * wd == 0 {
        return Err(malformed(format!(
            "{wd}x{h}x{c} image carries {} pixels",
            img.pixels.len()
        )));
    }
    for v in [img.width, img.height, img.channels] {
        w.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(b) = roi {
        for v in [b.x, b.y, b.width, b.height] {
            w.extend_from_slice(&v.to_le_bytes());
        }
    }
    for p in &img.pixels {
        w.extend_from_slice(&p.to_le_bytes());
    }
    Ok(())
}

fn get_image(
    r: &mut Reader<'_>,
    with_roi: bool,
) -> Result<(ImagePayload, Option<RoiBox>), ProtocolError> {
    let (width, height, channels) = (r.u16()?, r.u16()?, r.u16()?);
    if width == 0 || height == 0 || channels == 0 {
        return Err(malformed(format!("image dims {width}x{height}x{channels}")));
    }
    let roi = if with_roi {
        let b = RoiBox {
            x: r.u16()?,
            y: r.u16()?,
            width: r.u16()?,
            height: r.u16()?,
        };
        if b.width == 0 || b.height == 0 {
            return Err(malformed("empty roi box"));
        }
        Some(b)
    } else {
        None
    };
    let n = width as usize * height as usize * channels as usize;
    if r.remaining() != n * 4 {
        return Err(malformed(format!(
            "{width}x{height}x{channels} image needs {} pixel bytes, payload has {}",
            n * 4,
            r.remaining()
        )));
    }
    let pixels: Vec<f32> = r
        .bytes(n * 4)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if pixels.iter().any(|p| !p.is_finite()) {
        return Err(malformed("non-finite pixel"));
    }
    Ok((
        ImagePayload {
            width,
            height,
            channels,
            pixels,
        },
        roi,
    ))
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        if self.remaining() < n {
            return Err(malformed(format!(
                "payload ends {} bytes early",
                n - self.remaining()
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.bytes(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ProtocolError> {
        Ok(u16::from_le_bytes(
            self.bytes(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(
            self.bytes(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_le_bytes(
            self.bytes(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f32(&mut self) -> Result<f32, ProtocolError> {
        Ok(f32::from_le_bytes(
            self.bytes(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn finish(&self) -> Result<(), ProtocolError> {
        if self.remaining() != 0 {
            return Err(malformed(format!(
                "{} trailing payload bytes",
                self.remaining()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{decode_exact, encode_frame, OVERHEAD};

    fn image(w: u16, h: u16) -> ImagePayload {
        ImagePayload {
            width: w,
            height: h,
            channels: 3,
            pixels: (0..w as usize * h as usize * 3)
                .map(|i| i as f32 / 7.0)
                .collect(),
        }
    }

    fn request(body: RequestBody) -> Message {
        Message::ClassifyRequest(ClassifyRequest {
            request_id: 0x0102_0304_0506_0708,
            body,
        })
    }

    #[test]
    fn request_layouts() {
        let full = request(RequestBody::FullImage(image(32, 32)));
        let payload = full.encode_payload().unwrap();
        assert_eq!(payload.len(), 8 + 1 + 6 + 32 * 32 * 3 * 4);
        assert_eq!(&payload[..9], &[8, 7, 6, 5, 4, 3, 2, 1, 0]);
        assert_eq!(&payload[9..15], &[32, 0, 32, 0, 3, 0]);

        let roi = request(RequestBody::Roi {
            roi: RoiBox {
                x: 4,
                y: 5,
                width: 8,
                height: 8,
            },
            image: image(8, 8),
        });
        let payload = roi.encode_payload().unwrap();
        assert_eq!(payload.len(), 8 + 1 + 6 + 8 + 8 * 8 * 3 * 4);
        assert_eq!(payload[8], 1);
        assert_eq!(&payload[15..23], &[4, 0, 5, 0, 8, 0, 8, 0]);

        let feats = request(RequestBody::Features(QuantizedFeatures {
            scale: 0.5,
            values: (0..128).collect(),
        }));
        let payload = feats.encode_payload().unwrap();
        assert_eq!(payload.len(), 8 + 1 + 2 + 4 + 128);
        assert_eq!(&payload[9..15], &[128, 0, 0, 0, 0, 0x3F]);
        for m in [full, roi, feats] {
            let f = encode_frame(&m).unwrap();
            assert_eq!(f.len(), OVERHEAD + m.encode_payload().unwrap().len());
            assert_eq!(decode_exact(&f).unwrap(), m);
        }
    }

    #[test]
    fn response_and_error_layouts() {
        let resp = Message::ClassifyResponse(ClassifyResponse {
            request_id: 9,
            probabilities: vec![0.25, 0.75],
            server_compute_us: 1234,
        });
        let p = resp.encode_payload().unwrap();
        assert_eq!(p.len(), 8 + 2 + 8 + 4);
        assert_eq!(&p[8..10], &[2, 0]);
        assert_eq!(&p[18..], &1234u32.to_le_bytes());
        let err = Message::Error(ErrorMessage {
            request_id: 3,
            code: ErrorCode::Timeout,
            message: "slow".into(),
        });
        let p = err.encode_payload().unwrap();
        assert_eq!(&p[8..], &[2, 0, 4, 0, b's', b'l', b'o', b'w']);
        let hello = Message::Hello(Hello {
            model_fingerprint: 77,
            class_count: 10,
            input_size: 32,
        });
        assert_eq!(hello.encode_payload().unwrap().len(), 12);
        for m in [resp, err, hello] {
            assert_eq!(decode_exact(&encode_frame(&m).unwrap()).unwrap(), m);
        }
    }

    #[test]
    fn feature_payload_is_smallest() {
        let size = |m: Message| m.encode_payload().unwrap().len();
        let feats = size(request(RequestBody::Features(QuantizedFeatures {
            scale: 1.0,
            values: vec![0; 128],
        })));
        let roi = size(request(RequestBody::Roi {
            roi: RoiBox {
                x: 0,
                y: 0,
                width: 8,
                height: 8,
            },
            image: image(8, 8),
        }));
        let full = size(request(RequestBody::FullImage(image(32, 32))));
        assert!(feats < roi && roi < full, "{feats} {roi} {full}");
    }

    #[test]
    fn semantic_violations_are_malformed() {
        let bad = |msg_type, payload: &[u8]| {
            matches!(
                Message::decode_payload(msg_type, payload),
                Err(ProtocolError::Malformed(_))
            )
        };
        assert!(bad(MsgType::Ping, &[0]));
        assert!(bad(MsgType::Hello, &[0; 11]));
        let mut req = request(RequestBody::FullImage(image(2, 2)))
            .encode_payload()
            .unwrap();
        req.pop();
        assert!(bad(MsgType::ClassifyReq, &req));
        let mut kind = request(RequestBody::FullImage(image(2, 2)))
            .encode_payload()
            .unwrap();
        kind[8] = 9;
        assert!(bad(MsgType::ClassifyReq, &kind));
        let unnormalised = Message::ClassifyResponse(ClassifyResponse {
            request_id: 1,
            probabilities: vec![0.5, 0.6],
            server_compute_us: 0,
        })
        .encode_payload()
        .unwrap();
        assert!(bad(MsgType::ClassifyResp, &unnormalised));
        let mut nan = request(RequestBody::FullImage(image(1, 1)))
            .encode_payload()
            .unwrap();
        let n = nan.len();
        nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(bad(MsgType::ClassifyReq, &nan));
        let mut code = Message::Error(ErrorMessage {
            request_id: 0,
            code: ErrorCode::Internal,
            message: String::new(),
        })
        .encode_payload()
        .unwrap();
        code[8] = 99;
        assert!(bad(MsgType::Error, &code));
    }

    #[test]
    fn long_error_text_is_truncated_on_a_char_boundary() {
        let m = Message::Error(ErrorMessage {
            request_id: 0,
            code: ErrorCode::Internal,
            message: "é".repeat(40_000),
        });
        let Message::Error(back) = decode_exact(&encode_frame(&m).unwrap()).unwrap() else {
            panic!("not an error message")
        };
        assert_eq!(back.message.len(), 65_534);
    }

    #[test]
    fn inconsistent_messages_refuse_to_encode() {
        let mut img = image(2, 2);
        img.pixels.pop();
        assert!(request(RequestBody::FullImage(img))
            .encode_payload()
            .is_err());
        let long = request(RequestBody::Features(QuantizedFeatures {
            scale: 1.0,
            values: vec![0; 70_000],
        }));
        assert!(long.encode_payload().is_err());
    }
}
