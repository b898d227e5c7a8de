//! Binary parameter files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "AEDC" | u32 version | u8 precision (4 or 8) | u8 role
//! u32 metadata length | metadata JSON
//! u32 tensor count
//! per tensor: u32 name length | name | u32 rank | u64 dims[rank] | payload
//! u32 CRC32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Precision, Real, Tensor};
use crate::error::{Error, Result};
use crate::models::NetworkParams;
use crate::signal::NormalizationStats;

pub const MAGIC: &[u8; 4] = b"AEDC";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointRole {
    Generator,
    Predictor,
    Discriminator,
    /// A generator and predictor stored together under `generator.` and
    /// `predictor.` name prefixes.
    Model,
}

impl CheckpointRole {
    fn tag(self) -> u8 {
        match self {
            Self::Generator => 1,
            Self::Predictor => 2,
            Self::Discriminator => 3,
            Self::Model => 4,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        Some(match t {
            1 => Self::Generator,
            2 => Self::Predictor,
            3 => Self::Discriminator,
            4 => Self::Model,
            _ => return None,
        })
    }
}

/// Training context saved alongside the tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    #[serde(default)]
    pub appliance: Option<String>,
    #[serde(default)]
    pub window: Option<usize>,
    #[serde(default)]
    pub epoch: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub adversarial: Option<bool>,
    #[serde(default)]
    pub mains_stats: Option<NormalizationStats>,
    #[serde(default)]
    pub appliance_stats: Option<NormalizationStats>,
    /// Echo of the configuration that produced the file.
    #[serde(default)]
    pub config: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub role: CheckpointRole,
    pub meta: CheckpointMeta,
    pub params: NetworkParams<T>,
}

impl<T: Real> Checkpoint<T> {
    pub fn new(role: CheckpointRole, meta: CheckpointMeta, params: NetworkParams<T>) -> Self {
        Self { role, meta, params }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::with_capacity(64 + meta.len() + self.params.numel() * T::PRECISION.byte_width());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(T::PRECISION.tag());
        out.push(self.role.tag());
        out.extend_from_slice(&len_u32(meta.len(), "metadata")?.to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&len_u32(self.params.len(), "tensor count")?.to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&len_u32(name.len(), "tensor name")?.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&len_u32(t.rank(), "rank")?.to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    /// Parses a whole file image. Tensors stored at the other precision are
    /// converted.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::CorruptCheckpoint("bad magic bytes".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: VERSION,
            });
        }
        let ptag = r.take(1, "precision tag")?[0];
        let precision = Precision::from_tag(ptag)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("unknown precision tag {ptag}")))?;
        let rtag = r.take(1, "role tag")?[0];
        let role =
            CheckpointRole::from_tag(rtag).ok_or_else(|| Error::CorruptCheckpoint(format!("unknown role tag {rtag}")))?;
        let meta_len = r.u32("metadata length")? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len, "metadata")?)
            .map_err(|e| Error::CorruptCheckpoint(format!("metadata: {e}")))?;
        let count = r.u32("tensor count")?;
        let mut params = NetworkParams::new();
        for i in 0..count {
            let name_len = r.u32("tensor name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| Error::CorruptCheckpoint(format!("tensor {i} name is not UTF-8")))?
                .to_string();
            let rank = r.u32("rank")? as usize;
            if rank == 0 {
                return Err(Error::CorruptCheckpoint(format!("`{name}` has rank 0")));
            }
            let dims_bytes = rank
                .checked_mul(8)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("`{name}` rank {rank} overflows")))?;
            let dims: Vec<usize> = r
                .take(dims_bytes, "dims")?
                .chunks(8)
                .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
                .collect();
            let numel = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::CorruptCheckpoint(format!("`{name}` shape {dims:?} overflows")))?;
            let nbytes = numel
                .checked_mul(precision.byte_width())
                .ok_or_else(|| Error::CorruptCheckpoint(format!("`{name}` payload size overflows")))?;
            let payload = r.take(nbytes, "tensor payload")?;
            let data: Vec<T> = match precision {
                p if p == T::PRECISION => payload.chunks(p.byte_width()).map(T::read_le).collect(),
                Precision::F32 => payload.chunks(4).map(|c| T::of_f64(f32::read_le(c) as f64)).collect(),
                Precision::F64 => payload.chunks(8).map(|c| T::of_f64(f64::read_le(c))).collect(),
            };
            let t = Tensor::from_vec(dims, data).map_err(|e| Error::CorruptCheckpoint(format!("`{name}`: {e}")))?;
            params
                .insert(name, t)
                .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        }
        let body_end = r.pos;
        let stored = r.u32("checksum")?;
        if r.pos != bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{} trailing bytes after checksum",
                bytes.len() - r.pos
            )));
        }
        let actual = crc32fast::hash(&bytes[..body_end]);
        if stored != actual {
            return Err(Error::CorruptCheckpoint(format!(
                "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
            )));
        }
        Ok(Self { role, meta, params })
    }

    /// Checks that the file holds the expected kind of network.
    pub fn expect_role(&self, role: CheckpointRole) -> Result<()> {
        if self.role == role {
            Ok(())
        } else {
            Err(Error::config(format!("expected a {role:?} checkpoint, found {:?}", self.role)))
        }
    }
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::config(format!("{what} {n} does not fit the checkpoint format")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let left = self.bytes.len() - self.pos;
        if n > left {
            return Err(Error::TruncatedCheckpoint(format!(
                "{what} at byte {} needs {n} bytes, {left} left",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Writes to a temporary sibling and renames, so readers never observe a
/// half-written file.
pub fn save_checkpoint<T: Real>(path: impl AsRef<Path>, ckpt: &Checkpoint<T>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let bytes = ckpt.to_bytes()?;
    let mut tmp = path.as_os_str().to_os_string();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// Precision recorded in a checkpoint header.
pub fn checkpoint_precision(path: impl AsRef<Path>) -> Result<Precision> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 9 {
        return Err(Error::TruncatedCheckpoint(format!("{} bytes is shorter than the header", bytes.len())));
    }
    Precision::from_tag(bytes[8]).ok_or_else(|| Error::CorruptCheckpoint(format!("unknown precision tag {}", bytes[8])))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint<f32> {
        let mut p = NetworkParams::new();
        p.insert("conv1.weight", Tensor::from_vec([2, 1, 3], vec![1.0, -2.0, 3.5, 0.0, f32::MIN_POSITIVE, 7.0]).unwrap())
            .unwrap();
        p.insert("conv1.bias", Tensor::from_vec([2], vec![0.25, -0.0]).unwrap()).unwrap();
        let meta = CheckpointMeta {
            appliance: Some("kettle".into()),
            window: Some(27),
            epoch: 3,
            seed: 9,
            ..Default::default()
        };
        Checkpoint::new(CheckpointRole::Generator, meta, p)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let c = sample();
        let back = Checkpoint::<f32>::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert!(back.params.bit_eq(&c.params));
        assert_eq!(back.meta, c.meta);
        assert_eq!(back.role, c.role);
    }

    #[test]
    fn every_truncation_is_structured() {
        let bytes = sample().to_bytes().unwrap();
        for n in 0..bytes.len() {
            match Checkpoint::<f32>::from_bytes(&bytes[..n]) {
                Err(Error::TruncatedCheckpoint(_)) => {}
                other => panic!("prefix {n}: {other:?}"),
            }
        }
    }

    #[test]
    fn version_bump_names_both_versions() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        let err = Checkpoint::<f32>::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVersion { found: 2, expected: 1 }));
        let msg = err.to_string();
        assert!(msg.contains('2') && msg.contains('1'));
    }

    #[test]
    fn flipped_payload_bit_fails_checksum() {
        let mut bytes = sample().to_bytes().unwrap();
        let n = bytes.len();
        bytes[n - 6] ^= 0x10;
        assert!(matches!(Checkpoint::<f32>::from_bytes(&bytes), Err(Error::CorruptCheckpoint(_))));
        let mut extra = sample().to_bytes().unwrap();
        extra.push(0);
        assert!(matches!(Checkpoint::<f32>::from_bytes(&extra), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn widening_load() {
        let c = sample();
        let wide = Checkpoint::<f64>::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(wide.params.get("conv1.weight").unwrap().data()[1], -2.0);
    }
}
