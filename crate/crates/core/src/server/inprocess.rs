use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ServerCore;
use crate::cascade::{CloudReply, Transport, TransportError, TransportFailure};
use crate::protocol::{decode_exact, encode_frame, ClassifyRequest, Message, ProtocolError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CloudTiming {
    /// The compute time the server reports.
    WallClock,
    /// `overhead + MACs / rate` for the request's payload kind.
    Modeled { macs_per_ms: f64, overhead_ms: f64 },
}

/// A server in the same process. Requests and replies still go through
/// the frame codec, so byte counts are the real wire sizes.
#[derive(Debug, Clone)]
pub struct InProcessTransport {
    core: Arc<ServerCore>,
    timing: CloudTiming,
}

impl InProcessTransport {
    pub fn new(core: Arc<ServerCore>, timing: CloudTiming) -> Self {
        Self { core, timing }
    }

    pub fn core(&self) -> &ServerCore {
        &self.core
    }
}

impl Transport for InProcessTransport {
    fn classify(
        &mut self,
        request: &ClassifyRequest,
        _timeout_ms: u64,
    ) -> Result<CloudReply, TransportFailure> {
        let fail = |e: TransportError, sent: usize| TransportFailure {
            error: e,
            network_ms: 0.0,
            bytes_sent: sent,
            bytes_received: 0,
        };
        let frame = encode_frame(&Message::ClassifyRequest(request.clone()))
            .map_err(|e| fail(e.into(), 0))?;
        let sent = frame.len();
        let Message::ClassifyRequest(received) =
            decode_exact(&frame).map_err(|e| fail(e.into(), sent))?
        else {
            return Err(fail(
                ProtocolError::Malformed("request changed type".into()).into(),
                sent,
            ));
        };
        let response = match self.core.handle(&received) {
            Ok(r) => r,
            Err(e) => {
                return Err(fail(
                    TransportError::Remote {
                        code: e.code,
                        message: e.message,
                    },
                    sent,
                ))
            }
        };
        let reply =
            encode_frame(&Message::ClassifyResponse(response)).map_err(|e| fail(e.into(), sent))?;
        let Message::ClassifyResponse(response) =
            decode_exact(&reply).map_err(|e| fail(e.into(), sent))?
        else {
            return Err(fail(
                ProtocolError::Malformed("response changed type".into()).into(),
                sent,
            ));
        };
        let cloud_ms = match self.timing {
            CloudTiming::WallClock => response.server_compute_us as f64 / 1e3,
            CloudTiming::Modeled {
                macs_per_ms,
                overhead_ms,
            } => overhead_ms + self.core.macs_for(request.body.kind()) as f64 / macs_per_ms,
        };
        Ok(CloudReply {
            probabilities: response.probabilities,
            network_ms: 0.0,
            cloud_ms,
            bytes_sent: sent,
            bytes_received: reply.len(),
        })
    }
}
