//! How escalated requests reach a server.

use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use crate::protocol::{
    write_message, ClassifyRequest, ErrorCode, Hello, Message, MessageReader, ProtocolError,
    StreamError,
};

/// A server answer plus the cost of obtaining it.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudReply {
    pub probabilities: Vec<f32>,
    pub network_ms: f64,
    pub cloud_ms: f64,
    pub bytes_sent: usize,
    pub bytes_received: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("disconnected: {0}")]
    Disconnected(String),
    #[error("no answer within {0} ms")]
    Timeout(u64),
    #[error("server error {code:?}: {message}")]
    Remote { code: ErrorCode, message: String },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("response id {got} does not match request {expected}")]
    IdMismatch { expected: u64, got: u64 },
    #[error("unexpected {0} message")]
    Unexpected(&'static str),
}

/// A failed exchange with whatever it cost before failing.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportFailure {
    pub error: TransportError,
    pub network_ms: f64,
    pub bytes_sent: usize,
    pub bytes_received: usize,
}

impl TransportFailure {
    pub fn new(error: TransportError) -> Self {
        Self {
            error,
            network_ms: 0.0,
            bytes_sent: 0,
            bytes_received: 0,
        }
    }
}

impl From<TransportError> for TransportFailure {
    fn from(error: TransportError) -> Self {
        Self::new(error)
    }
}

pub trait Transport {
    /// Sends one request and waits at most `timeout_ms` for its answer.
    fn classify(
        &mut self,
        request: &ClassifyRequest,
        timeout_ms: u64,
    ) -> Result<CloudReply, TransportFailure>;
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn classify(&mut self, r: &ClassifyRequest, t: u64) -> Result<CloudReply, TransportFailure> {
        (**self).classify(r, t)
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn classify(&mut self, r: &ClassifyRequest, t: u64) -> Result<CloudReply, TransportFailure> {
        (**self).classify(r, t)
    }
}

/// No server at all; every escalation fails.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineTransport;

impl Transport for OfflineTransport {
    fn classify(&mut self, _: &ClassifyRequest, _: u64) -> Result<CloudReply, TransportFailure> {
        Err(TransportError::Disconnected("offline mode".into()).into())
    }
}

struct Connection {
    writer: TcpStream,
    reader: MessageReader<TcpStream>,
    hello: Hello,
}

/// One session to a server over TCP, reconnecting lazily after failures.
/// One request is in flight at a time.
pub struct TcpTransport {
    addr: String,
    connect_timeout: Duration,
    conn: Option<Connection>,
}

fn stream_error(e: StreamError, timeout_ms: u64) -> TransportError {
    if e.is_timeout() {
        return TransportError::Timeout(timeout_ms);
    }
    match e {
        StreamError::Protocol(p) => TransportError::Protocol(p),
        StreamError::Io(io) => TransportError::Disconnected(io.to_string()),
    }
}

impl TcpTransport {
    /// Does not touch the network until the first request.
    pub fn lazy(addr: impl Into<String>, connect_timeout: Duration) -> Self {
        Self {
            addr: addr.into(),
            connect_timeout,
            conn: None,
        }
    }

    /// Connects now and reads the server greeting.
    pub fn connect(
        addr: impl Into<String>,
        connect_timeout: Duration,
    ) -> Result<Self, TransportError> {
        let mut t = Self::lazy(addr, connect_timeout);
        t.ensure_connected()?;
        Ok(t)
    }

    pub fn hello(&self) -> Option<Hello> {
        self.conn.as_ref().map(|c| c.hello)
    }

    pub fn is_connected(&self) -> bool {
        self.conn.is_some()
    }

    fn ensure_connected(&mut self) -> Result<&mut Connection, TransportError> {
        if self.conn.is_none() {
            let addrs: Vec<_> = self
                .addr
                .to_socket_addrs()
                .map_err(|e| TransportError::Disconnected(format!("{}: {e}", self.addr)))?
                .collect();
            let mut last = TransportError::Disconnected(format!("{}: no address", self.addr));
            for a in addrs {
                match TcpStream::connect_timeout(&a, self.connect_timeout) {
                    Ok(stream) => match Self::greet(stream, self.connect_timeout) {
                        Ok(c) => {
                            self.conn = Some(c);
                            break;
                        }
                        Err(e) => last = e,
                    },
                    Err(e) => last = TransportError::Disconnected(format!("{a}: {e}")),
                }
            }
            if self.conn.is_none() {
                return Err(last);
            }
        }
        Ok(self.conn.as_mut().expect("connected"))
    }

    fn greet(stream: TcpStream, timeout: Duration) -> Result<Connection, TransportError> {
        let _ = stream.set_nodelay(true);
        let disconnected = |e: std::io::Error| TransportError::Disconnected(e.to_string());
        stream
            .set_read_timeout(Some(timeout.max(Duration::from_millis(1))))
            .map_err(disconnected)?;
        let writer = stream.try_clone().map_err(disconnected)?;
        let mut reader = MessageReader::new(stream);
        let ms = timeout.as_millis() as u64;
        match reader.read_message().map_err(|e| stream_error(e, ms))? {
            Some(Message::Hello(hello)) => Ok(Connection {
                writer,
                reader,
                hello,
            }),
            Some(Message::Error(e)) => Err(TransportError::Remote {
                code: e.code,
                message: e.message,
            }),
            Some(_) => Err(TransportError::Unexpected("non-greeting")),
            None => Err(TransportError::Disconnected(
                "closed before greeting".into(),
            )),
        }
    }

    fn exchange(
        conn: &mut Connection,
        request: &ClassifyRequest,
        timeout_ms: u64,
        sent: &mut usize,
        received: &mut usize,
    ) -> Result<(Vec<f32>, f64), TransportError> {
        let start = Instant::now();
        let deadline = start + Duration::from_millis(timeout_ms);
        *sent += write_message(&mut conn.writer, &Message::ClassifyRequest(request.clone()))
            .map_err(|e| stream_error(e, timeout_ms))?;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(TransportError::Timeout(timeout_ms));
            }
            conn.reader
                .get_ref()
                .set_read_timeout(Some(left))
                .map_err(|e| TransportError::Disconnected(e.to_string()))?;
            let msg = conn
                .reader
                .read_message()
                .map_err(|e| stream_error(e, timeout_ms))?
                .ok_or_else(|| {
                    TransportError::Disconnected("server closed the connection".into())
                })?;
            *received += crate::protocol::encode_frame(&msg)
                .map(|f| f.len())
                .unwrap_or(0);
            match msg {
                Message::ClassifyResponse(r) if r.request_id == request.request_id => {
                    return Ok((r.probabilities, r.server_compute_us as f64 / 1e3));
                }
                Message::ClassifyResponse(r) => {
                    return Err(TransportError::IdMismatch {
                        expected: request.request_id,
                        got: r.request_id,
                    })
                }
                Message::Error(e) if e.code == ErrorCode::Timeout => {
                    return Err(TransportError::Timeout(timeout_ms))
                }
                Message::Error(e) if e.request_id == request.request_id || e.request_id == 0 => {
                    return Err(TransportError::Remote {
                        code: e.code,
                        message: e.message,
                    })
                }
                Message::Error(e) => {
                    return Err(TransportError::IdMismatch {
                        expected: request.request_id,
                        got: e.request_id,
                    })
                }
                Message::Pong => continue,
                Message::Hello(_) => return Err(TransportError::Unexpected("HELLO")),
                Message::ClassifyRequest(_) => return Err(TransportError::Unexpected("request")),
                Message::Ping => return Err(TransportError::Unexpected("PING")),
            }
        }
    }
}

impl Transport for TcpTransport {
    fn classify(
        &mut self,
        request: &ClassifyRequest,
        timeout_ms: u64,
    ) -> Result<CloudReply, TransportFailure> {
        let start = Instant::now();
        let (mut sent, mut received) = (0, 0);
        let outcome = match self.ensure_connected() {
            Ok(conn) => Self::exchange(conn, request, timeout_ms, &mut sent, &mut received),
            Err(e) => Err(e),
        };
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        match outcome {
            Ok((probabilities, cloud_ms)) => Ok(CloudReply {
                probabilities,
                network_ms: (elapsed - cloud_ms).max(0.0),
                cloud_ms: cloud_ms.min(elapsed),
                bytes_sent: sent,
                bytes_received: received,
            }),
            Err(error) => {
                // the session state is unknown after any failure
                self.conn = None;
                Err(TransportFailure {
                    error,
                    network_ms: elapsed,
                    bytes_sent: sent,
                    bytes_received: received,
                })
            }
        }
    }
}
