//! The `CJW1` weight file.
//!
//! ```text
//! "CJW1" | version u16 | meta_len u32 | meta (canonical JSON)
//!        | layer_count u32
//!        | per layer: spec_len u32 | spec (JSON) | tensor_count u32
//!        |            per tensor: role u8 | rank u8 | dims u32 x rank | f32 x len
//!        | crc32 u32 over every preceding byte
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use cjade_nn::{LayerSpec, ModelSpec, Network, Param, ParamRole, Tensor, Weights};

use super::{ModelArtifact, ModelError, ModelMeta};

pub const MAGIC: &[u8; 4] = b"CJW1";
pub const FORMAT_VERSION: u16 = 1;

/// Canonical JSON: object keys sorted, no insignificant whitespace.
pub fn canonical_json<T: serde::Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("value serializes");
    serde_json::to_string(&v).expect("value serializes")
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<(), ModelError> {
    let v = u32::try_from(v).map_err(|_| ModelError::Format(format!("length {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(model: &ModelArtifact) -> Result<Vec<u8>, ModelError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let meta = canonical_json(&model.meta);
    put_u32(&mut out, meta.len())?;
    out.extend_from_slice(meta.as_bytes());

    let layers = &model.spec().layers;
    put_u32(&mut out, layers.len())?;
    let mut params = model.network.weights().params.iter();
    for layer in layers {
        let spec = serde_json::to_string(layer).map_err(|e| ModelError::Format(e.to_string()))?;
        put_u32(&mut out, spec.len())?;
        out.extend_from_slice(spec.as_bytes());
        let n = layer.param_tensor_count();
        put_u32(&mut out, n)?;
        for p in params.by_ref().take(n) {
            out.push(p.role.code());
            out.push(p.value.rank() as u8);
            for &d in p.value.shape() {
                put_u32(&mut out, d)?;
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        if self.buf.len() - self.pos < n {
            return Err(ModelError::Truncated(format!(
                "{what} needs {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, ModelError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize, ModelError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

struct RawParam<'a> {
    role: u8,
    dims: Vec<usize>,
    data: &'a [u8],
}

struct RawLayer<'a> {
    spec: &'a [u8],
    params: Vec<RawParam<'a>>,
}

/// Walks the length structure without interpreting JSON or floats.
fn scan(body: &[u8]) -> Result<(&[u8], Vec<RawLayer<'_>>), ModelError> {
    let mut r = Reader { buf: body, pos: 6 };
    let meta_len = r.u32("meta length")?;
    let meta = r.take(meta_len, "meta block")?;
    let count = r.u32("layer count")?;
    let mut layers = Vec::new();
    for li in 0..count {
        let spec_len = r.u32("layer spec length")?;
        let spec = r.take(spec_len, "layer spec")?;
        let tensors = r.u32("tensor count")?;
        let mut params = Vec::new();
        for ti in 0..tensors {
            let role = r.u8("tensor role")?;
            let rank = r.u8("tensor rank")? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32("tensor dim")?);
            }
            let len = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| {
                    ModelError::Format(format!("layer {li} tensor {ti}: dims {dims:?} overflow"))
                })?;
            let data = r.take(len, "tensor payload")?;
            params.push(RawParam { role, dims, data });
        }
        layers.push(RawLayer { spec, params });
    }
    if r.pos != body.len() {
        return Err(ModelError::Format(format!(
            "{} trailing bytes before checksum",
            body.len() - r.pos
        )));
    }
    Ok((meta, layers))
}

pub fn decode(bytes: &[u8]) -> Result<ModelArtifact, ModelError> {
    if bytes.len() < 4 {
        return Err(if MAGIC.starts_with(bytes) {
            ModelError::Truncated("file shorter than magic".into())
        } else {
            ModelError::BadMagic
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(ModelError::BadMagic);
    }
    if bytes.len() < 6 {
        return Err(ModelError::Truncated("missing version".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(ModelError::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    if bytes.len() < 10 {
        return Err(ModelError::Truncated("missing checksum".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    let scanned = scan(body);
    if let Err(ModelError::Truncated(m)) = scanned {
        return Err(ModelError::Truncated(m));
    }
    if stored != computed {
        return Err(ModelError::Checksum { stored, computed });
    }
    let (meta_raw, raw_layers) = scanned?;

    let meta: ModelMeta =
        serde_json::from_slice(meta_raw).map_err(|e| ModelError::Format(format!("meta: {e}")))?;
    let mut layers = Vec::with_capacity(raw_layers.len());
    let mut params = Vec::new();
    for (li, raw) in raw_layers.into_iter().enumerate() {
        let layer: LayerSpec = serde_json::from_slice(raw.spec)
            .map_err(|e| ModelError::Format(format!("layer {li} spec: {e}")))?;
        for p in raw.params {
            let role = ParamRole::from_code(p.role)
                .ok_or_else(|| ModelError::Format(format!("layer {li}: role code {}", p.role)))?;
            let data = p
                .data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let value = Tensor::new(p.dims, data)
                .map_err(|e| ModelError::Format(format!("layer {li}: {e}")))?;
            params.push(Param { role, value });
        }
        layers.push(layer);
    }
    let spec = ModelSpec::new(meta.input_shape.clone(), layers);
    let network =
        Network::new(spec, Weights { params }).map_err(|e| ModelError::Format(e.to_string()))?;
    if network.spec().output_shape()? != [meta.class_count] {
        return Err(ModelError::Format(
            "class count disagrees with final layer".into(),
        ));
    }
    Ok(ModelArtifact { network, meta })
}

pub fn save_weights(model: &ModelArtifact, path: impl AsRef<Path>) -> Result<(), ModelError> {
    std::fs::write(path, encode(model)?)?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelArtifact, ModelError> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_large, build_lightweight};

    fn sample() -> ModelArtifact {
        let mut m = build_lightweight(4, 32, 9).unwrap();
        m.meta.val_accuracy = Some(0.8125);
        m.meta.dataset_hash = "abc".into();
        // make running statistics non-trivial so they are exercised too
        for p in &mut m.network.weights_mut().params {
            if p.role == ParamRole::RunningMean {
                p.value.data_mut().iter_mut().for_each(|v| *v = 0.125);
            }
        }
        m
    }

    #[test]
    fn round_trip_is_bitwise() {
        for m in [sample(), build_large(10, 32, 2).unwrap()] {
            let bytes = encode(&m).unwrap();
            let back = decode(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(encode(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"CJW1");
        assert_eq!(&bytes[4..6], &[1, 0]);
        let meta_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let meta: serde_json::Value = serde_json::from_slice(&bytes[10..10 + meta_len]).unwrap();
        assert_eq!(meta["class_count"], 4);
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        assert_eq!(stored, crc32fast::hash(&bytes[..bytes.len() - 4]));
    }

    #[test]
    fn every_truncation_is_typed() {
        let bytes = encode(&build_lightweight(3, 32, 1).unwrap()).unwrap();
        assert!(matches!(
            decode(&bytes[..bytes.len() - 1]),
            Err(ModelError::Truncated(_))
        ));
        for cut in (0..bytes.len()).step_by(97) {
            let err = decode(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, ModelError::Truncated(_) | ModelError::Checksum { .. }),
                "cut {cut}: {err}"
            );
        }
    }

    #[test]
    fn payload_flip_is_a_checksum_error() {
        let bytes = encode(&sample()).unwrap();
        let mut bad = bytes.clone();
        let i = bytes.len() - 40;
        bad[i] ^= 0x5a;
        assert!(matches!(decode(&bad), Err(ModelError::Checksum { .. })));
    }

    #[test]
    fn magic_and_version_errors() {
        let mut bytes = encode(&sample()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(ModelError::BadMagic)));
        bytes[4] = 2;
        assert!(matches!(
            decode(&bytes),
            Err(ModelError::Version { found: 2, .. })
        ));
    }

    #[test]
    fn no_single_byte_flip_goes_unnoticed() {
        let bytes = encode(&build_lightweight(2, 32, 0).unwrap()).unwrap();
        for i in (0..bytes.len()).step_by(13) {
            let mut bad = bytes.clone();
            bad[i] ^= 0x01;
            assert!(decode(&bad).is_err(), "flip at {i} accepted");
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cjw");
        let m = sample();
        save_weights(&m, &path).unwrap();
        assert_eq!(load_weights(&path).unwrap(), m);
        assert!(matches!(
            load_weights(dir.path().join("missing.cjw")),
            Err(ModelError::Io(_))
        ));
    }
}
