//! Binary dataset container.
//!
//! Little-endian layout: magic `SMEI`, `u16` version, `u32` manifest length,
//! UTF-8 JSON manifest, then `count` records of
//! `u32 mask | f32 snr_db | 2*T f32` and a trailing CRC32 over the records.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{LabelVector, LabeledExample, ScenarioConfig, Split};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SMEI";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub seed: u64,
    pub split: Split,
    pub snr_grid_db: Vec<f64>,
    pub count_per_snr: usize,
    pub count: usize,
    pub sample_rate_hz: f64,
    #[serde(flatten)]
    pub scenario: ScenarioConfig,
    /// Fully resolved experiment configuration, if the writer had one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<serde_json::Value>,
}

impl Manifest {
    pub fn new(scenario: ScenarioConfig, seed: u64, split: Split, snr_grid_db: Vec<f64>, count_per_snr: usize) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            split,
            count: snr_grid_db.len() * count_per_snr,
            snr_grid_db,
            count_per_snr,
            sample_rate_hz: scenario.sample_rate_hz(),
            scenario,
            experiment: None,
        }
    }

    fn record_len(&self) -> usize {
        8 + 8 * self.scenario.window_len
    }
}

pub fn write_dataset<W: Write>(mut w: W, manifest: &Manifest, examples: &[LabeledExample]) -> Result<()> {
    if examples.len() != manifest.count {
        return Err(Error::shape(&[manifest.count], &[examples.len()]));
    }
    let t = manifest.scenario.window_len;
    let json = serde_json::to_vec(manifest)?;
    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(
        &u32::try_from(json.len())
            .map_err(|_| Error::invalid("manifest too large"))?
            .to_le_bytes(),
    )?;
    w.write_all(&json)?;

    let mut crc = crc32fast::Hasher::new();
    let mut rec = Vec::with_capacity(manifest.record_len());
    for ex in examples {
        if ex.window.len() != 2 * t {
            return Err(Error::shape(&[2, t], &[2, ex.window_len()]));
        }
        if ex.label.k() != manifest.scenario.k {
            return Err(Error::shape(&[manifest.scenario.k], &[ex.label.k()]));
        }
        rec.clear();
        rec.extend_from_slice(&ex.label.mask().to_le_bytes());
        rec.extend_from_slice(&ex.snr_db.to_le_bytes());
        for v in &ex.window {
            rec.extend_from_slice(&v.to_le_bytes());
        }
        crc.update(&rec);
        w.write_all(&rec)?;
    }
    w.write_all(&crc.finalize().to_le_bytes())?;
    w.flush()?;
    Ok(())
}

fn take<'a>(buf: &'a [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    let end = pos.checked_add(n).filter(|&e| e <= buf.len()).ok_or_else(|| {
        Error::Truncated(format!(
            "{what}: need {n} bytes at offset {}, file has {}",
            *pos,
            buf.len()
        ))
    })?;
    let s = &buf[*pos..end];
    *pos = end;
    Ok(s)
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<(Manifest, Vec<LabeledExample>)> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut pos = 0;

    let magic = take(&buf, &mut pos, 4, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic.try_into().unwrap(),
        });
    }
    let version = u16::from_le_bytes(take(&buf, &mut pos, 2, "version")?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let mlen = u32::from_le_bytes(take(&buf, &mut pos, 4, "manifest length")?.try_into().unwrap()) as usize;
    let manifest: Manifest = serde_json::from_slice(take(&buf, &mut pos, mlen, "manifest")?)?;
    let k = manifest.scenario.k;
    if k == 0 || k > 31 {
        return Err(Error::invalid(format!("manifest k={k} out of range")));
    }

    let body_len = manifest
        .count
        .checked_mul(manifest.record_len())
        .ok_or_else(|| Error::invalid("manifest count overflows"))?;
    let body = take(&buf, &mut pos, body_len, "records")?;
    let stored = u32::from_le_bytes(take(&buf, &mut pos, 4, "checksum")?.try_into().unwrap());
    if pos != buf.len() {
        return Err(Error::invalid(format!(
            "{} trailing bytes after checksum",
            buf.len() - pos
        )));
    }
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut examples = Vec::with_capacity(manifest.count);
    for rec in body.chunks_exact(manifest.record_len()) {
        let mask = u32::from_le_bytes(rec[0..4].try_into().unwrap());
        if mask >> k != 0 {
            return Err(Error::invalid(format!("label mask {mask:#x} has bits beyond k={k}")));
        }
        let snr_db = f32::from_le_bytes(rec[4..8].try_into().unwrap());
        let window = rec[8..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        examples.push(LabeledExample {
            window,
            label: LabelVector::from_mask(mask, k),
            snr_db,
        });
    }
    Ok((manifest, examples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelConfig;
    use crate::dataset::{generate, Overlap};
    use crate::impairment::ImpairmentRanges;

    fn small() -> (Manifest, Vec<LabeledExample>) {
        let scenario = ScenarioConfig {
            window_len: 64,
            num_symbols: 40,
            ..ScenarioConfig::with_drawn_profiles(
                3,
                Overlap::Full,
                ChannelConfig::awgn(6.0),
                &ImpairmentRanges::default(),
                2,
            )
        };
        let ex = generate(&scenario, 8, Split::Test, &[0.0, 12.0], 5).unwrap();
        (Manifest::new(scenario, 8, Split::Test, vec![0.0, 12.0], 5), ex)
    }

    fn bytes() -> Vec<u8> {
        let (m, ex) = small();
        let mut out = Vec::new();
        write_dataset(&mut out, &m, &ex).unwrap();
        out
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let (m, ex) = small();
        let a = bytes();
        let (m2, ex2) = read_dataset(&a[..]).unwrap();
        assert_eq!(m, m2);
        assert_eq!(ex, ex2);
        let mut b = Vec::new();
        write_dataset(&mut b, &m2, &ex2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn flipped_record_byte_fails_checksum() {
        let mut a = bytes();
        let n = a.len();
        a[n - 10] ^= 0x40;
        assert!(matches!(read_dataset(&a[..]), Err(Error::Checksum { .. })));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut a = bytes();
        a[0] = b'X';
        assert!(matches!(read_dataset(&a[..]), Err(Error::BadMagic { .. })));
        let mut a = bytes();
        a[4] = 9;
        assert!(matches!(
            read_dataset(&a[..]),
            Err(Error::UnsupportedVersion { found: 9, .. })
        ));
    }

    #[test]
    fn truncation_is_reported() {
        let a = bytes();
        for cut in [3, 9, 40, a.len() - 1] {
            assert!(matches!(read_dataset(&a[..cut]), Err(Error::Truncated(_))), "cut {cut}");
        }
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let (m, ex) = small();
        assert!(write_dataset(Vec::new(), &m, &ex[1..]).is_err());
    }
}
