//! Model checkpoint container.
//!
//! Little-endian layout: magic `SMNW`, `u16` version, `u32` descriptor
//! length, JSON descriptor, parameter blob in descriptor order, CRC32 over
//! every preceding byte.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, ModelSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SMNW";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Descriptor {
    spec: ModelSpec,
    /// Element type of the blob: `f32` or `f64`.
    dtype: String,
    param_count: usize,
    shapes: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
}

/// Write `model`'s parameters at its own precision. `meta` is stored
/// verbatim in the descriptor.
pub fn save_checkpoint<S: Scalar, W: Write>(mut w: W, model: &Model<S>, meta: Option<serde_json::Value>) -> Result<()> {
    let params = model.params();
    let desc = Descriptor {
        spec: model.spec().clone(),
        dtype: S::DTYPE.to_string(),
        param_count: model.param_count(),
        shapes: params.iter().map(|p| p.shape().to_vec()).collect(),
        meta,
    };
    let json = serde_json::to_vec(&desc)?;
    let mut buf = Vec::with_capacity(10 + json.len() + desc.param_count * 8 + 4);
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in params {
        for &v in p.values() {
            match S::DTYPE {
                "f32" => buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                _ => buf.extend_from_slice(&v.as_f64().to_le_bytes()),
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Blob element type (`f32` or `f64`) of a checkpoint, from its header.
pub fn checkpoint_dtype(buf: &[u8]) -> Result<String> {
    if buf.len() < 10 {
        return Err(Error::Truncated(format!("checkpoint is {} bytes", buf.len())));
    }
    if buf[..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: buf[..4].try_into().unwrap(),
        });
    }
    let dlen = u32::from_le_bytes(buf[6..10].try_into().unwrap()) as usize;
    let json = buf
        .get(10..10 + dlen)
        .ok_or_else(|| Error::Truncated("checkpoint descriptor".into()))?;
    Ok(serde_json::from_slice::<Descriptor>(json)?.dtype)
}

/// Read a checkpoint into a model of precision `S`, converting the blob if
/// it was written at the other precision. Returns the stored metadata.
pub fn load_checkpoint<S: Scalar, R: Read>(mut r: R) -> Result<(Model<S>, Option<serde_json::Value>)> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < 14 {
        return Err(Error::Truncated(format!("checkpoint is {} bytes", buf.len())));
    }
    if buf[..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: buf[..4].try_into().unwrap(),
        });
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let dlen = u32::from_le_bytes(buf[6..10].try_into().unwrap()) as usize;
    if buf.len() < 10 + dlen + 4 {
        return Err(Error::Truncated("checkpoint descriptor".into()));
    }
    let desc: Descriptor = serde_json::from_slice(&buf[10..10 + dlen])?;
    let width = match desc.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::invalid(format!("checkpoint dtype {other:?} is not f32 or f64"))),
    };
    let blob_start = 10 + dlen;
    let blob_len = desc
        .param_count
        .checked_mul(width)
        .ok_or_else(|| Error::invalid("checkpoint param_count overflows"))?;
    let end = blob_start + blob_len;
    if buf.len() < end + 4 {
        return Err(Error::Truncated(format!(
            "checkpoint blob: need {} bytes, have {}",
            end + 4,
            buf.len()
        )));
    }
    if buf.len() > end + 4 {
        return Err(Error::invalid(format!(
            "{} trailing bytes after checkpoint",
            buf.len() - end - 4
        )));
    }
    let stored = u32::from_le_bytes(buf[end..end + 4].try_into().unwrap());
    let computed = crc32fast::hash(&buf[..end]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    // parameters are overwritten below; the init draw only fixes the layout
    let mut model = Model::<S>::new(desc.spec.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    if model.param_count() != desc.param_count {
        return Err(Error::shape(&[model.param_count()], &[desc.param_count]));
    }
    let mut values = buf[blob_start..end].chunks_exact(width).map(|b| match width {
        4 => S::lit(f64::from(f32::from_le_bytes(b.try_into().unwrap()))),
        _ => S::lit(f64::from_le_bytes(b.try_into().unwrap())),
    });
    let params = model.params_mut();
    if params.len() != desc.shapes.len() {
        return Err(Error::invalid(format!(
            "descriptor lists {} tensors, architecture has {}",
            desc.shapes.len(),
            params.len()
        )));
    }
    for (p, shape) in params.into_iter().zip(&desc.shapes) {
        if p.shape() != &shape[..] {
            return Err(Error::shape(p.shape(), shape));
        }
        for v in p.values_mut() {
            *v = values.next().expect("blob length checked above");
        }
    }
    Ok((model, desc.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autonet::Tensor;
    use crate::model::{Arch, ExtractorConfig};
    use crate::rng::RngStream;

    fn model<S: Scalar>() -> Model<S> {
        let spec = ModelSpec::new(
            Arch::Smei,
            3,
            ExtractorConfig {
                input_len: 64,
                ..ExtractorConfig::with_width(0.125)
            },
        );
        Model::new(spec, &mut RngStream::new(4, 0).rng()).unwrap()
    }

    #[test]
    fn f64_round_trip_is_exact() {
        let m = model::<f64>();
        let mut a = Vec::new();
        save_checkpoint(&mut a, &m, Some(serde_json::json!({"epochs": 3}))).unwrap();
        let (m2, meta) = load_checkpoint::<f64, _>(&a[..]).unwrap();
        assert_eq!(meta.unwrap()["epochs"], 3);
        let x = Tensor::<f64>::filled(vec![2, 2, 64], 0.25);
        assert_eq!(m.logits(&x).unwrap(), m2.logits(&x).unwrap());
        let mut b = Vec::new();
        save_checkpoint(&mut b, &m2, Some(serde_json::json!({"epochs": 3}))).unwrap();
        assert_eq!(a, b);
        assert_eq!(checkpoint_dtype(&a).unwrap(), "f64");
    }

    #[test]
    fn f32_round_trip_is_exact() {
        let m = model::<f32>();
        let mut a = Vec::new();
        save_checkpoint(&mut a, &m, None).unwrap();
        let (m2, _) = load_checkpoint::<f32, _>(&a[..]).unwrap();
        let x = Tensor::<f32>::filled(vec![1, 2, 64], -0.5);
        assert_eq!(m.logits(&x).unwrap(), m2.logits(&x).unwrap());
    }

    #[test]
    fn corruption_is_detected() {
        let mut a = Vec::new();
        save_checkpoint(&mut a, &model::<f32>(), None).unwrap();
        let n = a.len();
        let mut flipped = a.clone();
        flipped[n - 9] ^= 1;
        assert!(matches!(
            load_checkpoint::<f32, _>(&flipped[..]),
            Err(Error::Checksum { .. })
        ));
        assert!(matches!(
            load_checkpoint::<f32, _>(&a[..n - 3]),
            Err(Error::Truncated(_))
        ));
        let mut magic = a.clone();
        magic[1] = b'X';
        assert!(matches!(
            load_checkpoint::<f32, _>(&magic[..]),
            Err(Error::BadMagic { .. })
        ));
    }
}
