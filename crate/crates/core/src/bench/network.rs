//! Deterministic network impairment around any transport.

use std::collections::HashMap;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cascade::{CloudReply, Transport, TransportError, TransportFailure};
use crate::dataset::mix_seed;
use crate::protocol::{encode_frame, ClassifyRequest, Message};

/// Bandwidth sentinel meaning "no serialization delay".
pub const UNLIMITED_BANDWIDTH: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkProfile {
    /// One-way latency is uniform in `mean ± jitter`, clamped at 0.
    pub latency_ms: f64,
    pub jitter_ms: f64,
    pub bandwidth_bytes_per_s: u64,
    pub drop_probability: f64,
    pub seed: u64,
}

impl Default for NetworkProfile {
    fn default() -> Self {
        Self {
            latency_ms: 20.0,
            jitter_ms: 5.0,
            bandwidth_bytes_per_s: 2 * 1024 * 1024,
            drop_probability: 0.0,
            seed: 0,
        }
    }
}

impl NetworkProfile {
    pub fn ideal() -> Self {
        Self {
            latency_ms: 0.0,
            jitter_ms: 0.0,
            bandwidth_bytes_per_s: UNLIMITED_BANDWIDTH,
            drop_probability: 0.0,
            seed: 0,
        }
    }

    /// `default`, `ideal`, `lossy` or `offline`.
    pub fn named(name: &str) -> Option<Self> {
        match name {
            "default" => Some(Self::default()),
            "ideal" => Some(Self::ideal()),
            "lossy" => Some(Self {
                latency_ms: 60.0,
                jitter_ms: 30.0,
                bandwidth_bytes_per_s: 256 * 1024,
                drop_probability: 0.1,
                seed: 0,
            }),
            "offline" => Some(Self {
                drop_probability: 1.0,
                ..Self::default()
            }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.latency_ms.is_finite() && self.latency_ms >= 0.0) {
            return Err(format!(
                "latency {} must be finite and >= 0",
                self.latency_ms
            ));
        }
        if !(self.jitter_ms.is_finite() && self.jitter_ms >= 0.0) {
            return Err(format!("jitter {} must be finite and >= 0", self.jitter_ms));
        }
        if self.bandwidth_bytes_per_s == 0 {
            return Err("bandwidth must be positive".into());
        }
        // 1.0 is allowed as the total-loss profile
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(format!(
                "drop probability {} outside [0, 1]",
                self.drop_probability
            ));
        }
        Ok(())
    }

    pub fn transfer_ms(&self, bytes: usize) -> f64 {
        if self.bandwidth_bytes_per_s == UNLIMITED_BANDWIDTH {
            0.0
        } else {
            bytes as f64 * 1e3 / self.bandwidth_bytes_per_s as f64
        }
    }

    fn one_way(&self, rng: &mut ChaCha8Rng, bytes: usize) -> f64 {
        let jitter = if self.jitter_ms > 0.0 {
            rng.random_range(-self.jitter_ms..=self.jitter_ms)
        } else {
            0.0
        };
        (self.latency_ms + jitter).max(0.0) + self.transfer_ms(bytes)
    }
}

/// The draws for one request: whether it is dropped and the two leg delays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegPlan {
    pub dropped: bool,
    pub up_ms: f64,
    pub down_ms: f64,
}

impl NetworkProfile {
    pub fn plan(&self, request_id: u64, up_bytes: usize, down_bytes: usize) -> LegPlan {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[self.seed, 0x4e45_5457, request_id]));
        let dropped = rng.random::<f64>() < self.drop_probability;
        let up_ms = self.one_way(&mut rng, up_bytes);
        let down_ms = self.one_way(&mut rng, down_bytes);
        LegPlan {
            dropped,
            up_ms,
            down_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayMode {
    /// Delays are added to the reported network time only.
    Virtual,
    /// Delays are also slept, so wall-clock measurements see them.
    Sleep,
}

/// Wraps a transport with latency, bandwidth and drops drawn from the
/// profile, keyed by request id.
pub struct SimulatedNetwork<T> {
    inner: T,
    profile: NetworkProfile,
    mode: DelayMode,
}

impl<T: Transport> SimulatedNetwork<T> {
    pub fn new(inner: T, profile: NetworkProfile, mode: DelayMode) -> Result<Self, String> {
        profile.validate()?;
        Ok(Self {
            inner,
            profile,
            mode,
        })
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }

    pub fn inner_mut(&mut self) -> &mut T {
        &mut self.inner
    }

    fn wait(&self, ms: f64) -> f64 {
        match self.mode {
            DelayMode::Virtual => ms,
            DelayMode::Sleep => {
                let start = Instant::now();
                thread::sleep(Duration::from_secs_f64(ms / 1e3));
                start.elapsed().as_secs_f64() * 1e3
            }
        }
    }
}

impl<T: Transport> Transport for SimulatedNetwork<T> {
    fn classify(
        &mut self,
        request: &ClassifyRequest,
        timeout_ms: u64,
    ) -> Result<CloudReply, TransportFailure> {
        let up_bytes = encode_frame(&Message::ClassifyRequest(request.clone()))
            .map(|f| f.len())
            .unwrap_or(0);
        let first = self.profile.plan(request.request_id, up_bytes, 0);
        if first.dropped {
            let waited = self.wait(first.up_ms);
            return Err(TransportFailure {
                error: TransportError::Disconnected("connection dropped by the network".into()),
                network_ms: waited,
                bytes_sent: up_bytes,
                bytes_received: 0,
            });
        }
        let up = self.wait(first.up_ms);
        let mut reply = self.inner.classify(request, timeout_ms)?;
        let plan = self
            .profile
            .plan(request.request_id, reply.bytes_sent, reply.bytes_received);
        // the up leg only depends on the draws and the request size
        let down = self.wait(plan.down_ms);
        reply.network_ms += up + down;
        if reply.network_ms + reply.cloud_ms > timeout_ms as f64 {
            return Err(TransportFailure {
                error: TransportError::Timeout(timeout_ms),
                network_ms: timeout_ms as f64,
                bytes_sent: reply.bytes_sent,
                bytes_received: 0,
            });
        }
        Ok(reply)
    }
}

/// Reuses server answers for byte-identical request bodies. Only sound
/// over a transport whose reported costs do not depend on wall-clock time.
pub struct MemoTransport<T> {
    inner: T,
    cache: HashMap<Vec<u8>, CloudReply>,
    hits: usize,
}

impl<T: Transport> MemoTransport<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            cache: HashMap::new(),
            hits: 0,
        }
    }

    pub fn hits(&self) -> usize {
        self.hits
    }

    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }
}

impl<T: Transport> Transport for MemoTransport<T> {
    fn classify(
        &mut self,
        request: &ClassifyRequest,
        timeout_ms: u64,
    ) -> Result<CloudReply, TransportFailure> {
        let key = encode_frame(&Message::ClassifyRequest(ClassifyRequest {
            request_id: 0,
            body: request.body.clone(),
        }))
        .map_err(|e| TransportFailure::new(e.into()))?;
        if let Some(r) = self.cache.get(&key) {
            self.hits += 1;
            return Ok(r.clone());
        }
        let reply = self.inner.classify(request, timeout_ms)?;
        self.cache.insert(key, reply.clone());
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{ImagePayload, RequestBody};

    struct Echo {
        calls: usize,
    }

    impl Transport for Echo {
        fn classify(
            &mut self,
            r: &ClassifyRequest,
            _: u64,
        ) -> Result<CloudReply, TransportFailure> {
            self.calls += 1;
            let sent = encode_frame(&Message::ClassifyRequest(r.clone()))
                .unwrap()
                .len();
            Ok(CloudReply {
                probabilities: vec![0.5, 0.5],
                network_ms: 0.0,
                cloud_ms: 1.0,
                bytes_sent: sent,
                bytes_received: 29,
            })
        }
    }

    fn req(id: u64, n: usize) -> ClassifyRequest {
        ClassifyRequest {
            request_id: id,
            body: RequestBody::FullImage(ImagePayload {
                width: n as u16,
                height: 1,
                channels: 1,
                pixels: vec![0.25; n],
            }),
        }
    }

    #[test]
    fn ideal_profile_is_a_passthrough() {
        let mut t =
            SimulatedNetwork::new(Echo { calls: 0 }, NetworkProfile::ideal(), DelayMode::Sleep)
                .unwrap();
        let start = Instant::now();
        let r = t.classify(&req(1, 16), 1000).unwrap();
        assert!(start.elapsed() < Duration::from_millis(1));
        assert!(r.network_ms < 1.0);
    }

    #[test]
    fn fixed_latency_arithmetic() {
        let profile = NetworkProfile {
            latency_ms: 50.0,
            jitter_ms: 0.0,
            bandwidth_bytes_per_s: 1024 * 1024,
            drop_probability: 0.0,
            seed: 3,
        };
        // 1 KiB each way
        let p = profile.plan(7, 1024, 1024);
        assert!((p.up_ms - (50.0 + 1000.0 / 1024.0)).abs() < 1e-9);
        assert_eq!(p.up_ms, p.down_ms);

        let mut t =
            SimulatedNetwork::new(Echo { calls: 0 }, profile.clone(), DelayMode::Sleep).unwrap();
        let r = req(7, 245);
        let up = encode_frame(&Message::ClassifyRequest(r.clone()))
            .unwrap()
            .len();
        let start = Instant::now();
        let reply = t.classify(&r, 5000).unwrap();
        let expected = 100.0 + profile.transfer_ms(up) + profile.transfer_ms(29);
        let measured = start.elapsed().as_secs_f64() * 1e3;
        assert!(
            measured >= expected && measured < expected + 50.0,
            "{measured} vs {expected}"
        );
        assert!(reply.network_ms >= expected && reply.network_ms < expected + 50.0);
    }

    #[test]
    fn draws_depend_only_on_seed_and_request() {
        let profile = NetworkProfile::default();
        assert_eq!(profile.plan(5, 100, 10), profile.plan(5, 100, 10));
        assert_ne!(profile.plan(5, 100, 10), profile.plan(6, 100, 10));
        for id in 0..500 {
            let p = profile.plan(id, 0, 0);
            assert!((15.0..=25.0).contains(&p.up_ms) && (15.0..=25.0).contains(&p.down_ms));
        }
        let mut a =
            SimulatedNetwork::new(Echo { calls: 0 }, profile.clone(), DelayMode::Virtual).unwrap();
        let mut b = SimulatedNetwork::new(Echo { calls: 0 }, profile, DelayMode::Virtual).unwrap();
        for id in 0..50 {
            assert_eq!(a.classify(&req(id, 8), 1000), b.classify(&req(id, 8), 1000));
        }
    }

    #[test]
    fn total_loss_drops_everything() {
        let profile = NetworkProfile::named("offline").unwrap();
        let mut t = SimulatedNetwork::new(Echo { calls: 0 }, profile, DelayMode::Virtual).unwrap();
        for id in 0..100 {
            let f = t.classify(&req(id, 8), 1000).unwrap_err();
            assert!(matches!(f.error, TransportError::Disconnected(_)));
        }
        assert_eq!(t.inner().calls, 0);
    }

    #[test]
    fn drop_rate_roughly_matches() {
        let profile = NetworkProfile {
            drop_probability: 0.25,
            ..NetworkProfile::default()
        };
        let drops = (0..4000)
            .filter(|&id| profile.plan(id, 0, 0).dropped)
            .count();
        assert!((900..1100).contains(&drops), "{drops}");
    }

    #[test]
    fn slow_network_times_out() {
        let profile = NetworkProfile {
            latency_ms: 400.0,
            jitter_ms: 0.0,
            ..NetworkProfile::default()
        };
        let mut t = SimulatedNetwork::new(Echo { calls: 0 }, profile, DelayMode::Virtual).unwrap();
        let f = t.classify(&req(1, 8), 500).unwrap_err();
        assert_eq!(f.error, TransportError::Timeout(500));
        assert_eq!(f.network_ms, 500.0);
    }

    #[test]
    fn invalid_profiles() {
        let bad = [
            NetworkProfile {
                latency_ms: -1.0,
                ..NetworkProfile::default()
            },
            NetworkProfile {
                bandwidth_bytes_per_s: 0,
                ..NetworkProfile::default()
            },
            NetworkProfile {
                drop_probability: 1.5,
                ..NetworkProfile::default()
            },
            NetworkProfile {
                jitter_ms: f64::NAN,
                ..NetworkProfile::default()
            },
        ];
        for p in bad {
            assert!(p.validate().is_err());
        }
    }

    #[test]
    fn memo_reuses_identical_bodies() {
        let mut t = MemoTransport::new(Echo { calls: 0 });
        let a = t.classify(&req(1, 8), 100).unwrap();
        let b = t.classify(&req(2, 8), 100).unwrap();
        t.classify(&req(3, 9), 100).unwrap();
        assert_eq!(a, b);
        assert_eq!((t.hits(), t.len(), t.inner.calls), (1, 2, 2));
    }
}
