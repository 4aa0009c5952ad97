//! Incremental frame reassembly over an ordered byte stream.

use std::io::{self, Read, Write};

use super::frame::{decode_frame, encode_frame};
use super::messages::Message;
use super::ProtocolError;

/// Buffers bytes until whole frames are available. After the first corrupt
/// frame the reader stays failed; it never resynchronises.
#[derive(Debug, Default)]
pub struct FrameReader {
    buf: Vec<u8>,
    start: usize,
    failed: Option<ProtocolError>,
}

impl FrameReader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, bytes: &[u8]) {
        if self.failed.is_none() {
            self.buf.extend_from_slice(bytes);
        }
    }

    pub fn buffered(&self) -> usize {
        self.buf.len() - self.start
    }

    pub fn is_failed(&self) -> bool {
        self.failed.is_some()
    }

    /// Next complete message, or `None` until more bytes arrive.
    pub fn next_message(&mut self) -> Result<Option<Message>, ProtocolError> {
        if let Some(e) = &self.failed {
            return Err(e.clone());
        }
        match decode_frame(&self.buf[self.start..]) {
            Ok((msg, used)) => {
                self.start += used;
                if self.start == self.buf.len() {
                    self.buf.clear();
                    self.start = 0;
                } else if self.start > 64 * 1024 {
                    self.buf.drain(..self.start);
                    self.start = 0;
                }
                Ok(Some(msg))
            }
            Err(ProtocolError::NeedMoreBytes(_)) => Ok(None),
            Err(e) => {
                self.failed = Some(e.clone());
                self.buf = Vec::new();
                self.start = 0;
                Err(e)
            }
        }
    }

    /// Checks the end of stream: a partial frame left over is corruption.
    pub fn finish(&self) -> Result<(), ProtocolError> {
        if let Some(e) = &self.failed {
            return Err(e.clone());
        }
        if self.buffered() > 0 {
            return Err(ProtocolError::CorruptFrame(format!(
                "stream ended {} bytes into a frame",
                self.buffered()
            )));
        }
        Ok(())
    }
}

/// Decodes every frame of a stream delivered as `chunks`.
pub fn decode_stream<'a>(
    chunks: impl IntoIterator<Item = &'a [u8]>,
) -> (Vec<Message>, Result<(), ProtocolError>) {
    let mut reader = FrameReader::new();
    let mut out = Vec::new();
    for chunk in chunks {
        reader.feed(chunk);
        loop {
            match reader.next_message() {
                Ok(Some(m)) => out.push(m),
                Ok(None) => break,
                Err(e) => return (out, Err(e)),
            }
        }
    }
    let end = reader.finish();
    (out, end)
}

#[derive(Debug, thiserror::Error)]
pub enum StreamError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

impl StreamError {
    pub fn is_timeout(&self) -> bool {
        matches!(self, StreamError::Io(e)
            if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
    }
}

/// Blocking message reader over any `Read`. Partial frames survive read
/// timeouts, so a timed-out call may simply be retried.
pub struct MessageReader<R> {
    inner: R,
    frames: FrameReader,
    chunk: Vec<u8>,
}

impl<R: Read> MessageReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            frames: FrameReader::new(),
            chunk: vec![0; 16 * 1024],
        }
    }

    pub fn get_ref(&self) -> &R {
        &self.inner
    }

    /// `Ok(None)` on a clean end of stream.
    pub fn read_message(&mut self) -> Result<Option<Message>, StreamError> {
        loop {
            if let Some(m) = self.frames.next_message()? {
                return Ok(Some(m));
            }
            let n = match self.inner.read(&mut self.chunk) {
                Ok(n) => n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            };
            if n == 0 {
                self.frames.finish()?;
                return Ok(None);
            }
            self.frames.feed(&self.chunk[..n]);
        }
    }
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<usize, StreamError> {
    let frame = encode_frame(msg)?;
    w.write_all(&frame)?;
    w.flush()?;
    Ok(frame.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::messages::{ClassifyResponse, Hello};

    fn two_frames() -> (Vec<Message>, Vec<u8>) {
        let msgs = vec![
            Message::Hello(Hello {
                model_fingerprint: 5,
                class_count: 10,
                input_size: 32,
            }),
            Message::ClassifyResponse(ClassifyResponse {
                request_id: 42,
                probabilities: vec![0.5, 0.5],
                server_compute_us: 17,
            }),
        ];
        let bytes = msgs.iter().flat_map(|m| encode_frame(m).unwrap()).collect();
        (msgs, bytes)
    }

    #[test]
    fn byte_at_a_time_delivery() {
        let (msgs, bytes) = two_frames();
        let (got, end) = decode_stream(bytes.chunks(1));
        assert_eq!(got, msgs);
        assert!(end.is_ok());
    }

    #[test]
    fn empty_stream() {
        let (got, end) = decode_stream(std::iter::empty());
        assert!(got.is_empty());
        assert!(end.is_ok());
    }

    #[test]
    fn good_then_corrupt_frame() {
        let (msgs, mut bytes) = two_frames();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        let (got, end) = decode_stream([&bytes[..]]);
        assert_eq!(got, msgs[..1]);
        assert!(matches!(end, Err(ProtocolError::CorruptFrame(_))));
    }

    #[test]
    fn failure_is_sticky() {
        let mut r = FrameReader::new();
        r.feed(&[0xFF; 12]);
        assert!(matches!(r.next_message(), Err(ProtocolError::BadMagic)));
        r.feed(&encode_frame(&Message::Ping).unwrap());
        assert!(r.next_message().is_err());
        assert!(r.finish().is_err());
    }

    #[test]
    fn truncated_tail_reported_at_end() {
        let (_, bytes) = two_frames();
        let (got, end) = decode_stream([&bytes[..bytes.len() - 3]]);
        assert_eq!(got.len(), 1);
        assert!(matches!(end, Err(ProtocolError::CorruptFrame(_))));
    }

    #[test]
    fn blocking_reader_over_a_cursor() {
        let (msgs, bytes) = two_frames();
        let mut r = MessageReader::new(io::Cursor::new(bytes));
        assert_eq!(r.read_message().unwrap(), Some(msgs[0].clone()));
        assert_eq!(r.read_message().unwrap(), Some(msgs[1].clone()));
        assert!(r.read_message().unwrap().is_none());
        let mut out = Vec::new();
        assert_eq!(write_message(&mut out, &Message::Ping).unwrap(), 12);
    }
}
