//! Binary checkpoint format.
//!
//! ```text
//! "CACK"                       magic
//! u32                          format version
//! u32 + UTF-8                  config block, `key=value` lines
//! u32                          tensor count
//! per tensor:
//!   u16 + UTF-8                name
//!   u8                         rank
//!   rank × u32                 dims
//!   Π dims × f64               payload
//! ```
//!
//! All integers and floats are little-endian. The temperature is one of the
//! tensors (`log_tau`), so it is persisted in log space. The audio input
//! normalization is stored as two extra tensors.

use std::fs;
use std::path::Path;

use super::model::{AudioNorm, CaClap, CaClapConfig};
use crate::error::{Error, Result};
use crate::micrograd::{ParamSet, Tensor, MAX_RANK};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CACK";
pub const CHECKPOINT_VERSION: u32 = 1;

const NORM_MEAN: &str = "audio.norm.mean";
const NORM_STD: &str = "audio.norm.std";

fn config_block(model: &CaClap) -> String {
    let c = &model.config;
    [
        ("vocab_size", c.vocab_size.to_string()),
        ("channels", c.channels.to_string()),
        ("dim", c.dim.to_string()),
        ("audio_hidden", c.audio_hidden.to_string()),
        ("proj_dim", c.proj_dim.to_string()),
        ("tau_init", format!("{:?}", c.tau_init)),
        ("learning_rate", format!("{:?}", c.learning_rate)),
        ("epochs", c.epochs.to_string()),
        ("batch_size", c.batch_size.to_string()),
        ("seed", c.seed.to_string()),
        ("context_len", c.context_len.to_string()),
        ("same_book_batches", c.same_book_batches.to_string()),
        ("step", model.step.to_string()),
    ]
    .iter()
    .map(|(k, v)| format!("{k}={v}\n"))
    .collect()
}

fn parse_config(block: &str) -> Result<(CaClapConfig, u64)> {
    let mut map = std::collections::HashMap::new();
    for line in block.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("config line {line:?}")))?;
        map.insert(k, v);
    }
    fn field<T: std::str::FromStr>(map: &std::collections::HashMap<&str, &str>, key: &str) -> Result<T> {
        map.get(key)
            .ok_or_else(|| Error::Format(format!("config is missing {key}")))?
            .parse()
            .map_err(|_| Error::Format(format!("config field {key} is malformed")))
    }
    let config = CaClapConfig {
        vocab_size: field(&map, "vocab_size")?,
        channels: field(&map, "channels")?,
        dim: field(&map, "dim")?,
        audio_hidden: field(&map, "audio_hidden")?,
        proj_dim: field(&map, "proj_dim")?,
        tau_init: field(&map, "tau_init")?,
        learning_rate: field(&map, "learning_rate")?,
        epochs: field(&map, "epochs")?,
        batch_size: field(&map, "batch_size")?,
        seed: field(&map, "seed")?,
        context_len: field(&map, "context_len")?,
        same_book_batches: field(&map, "same_book_batches")?,
    };
    Ok((config, field(&map, "step")?))
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes a model into checkpoint bytes.
pub fn to_bytes(model: &CaClap) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let block = config_block(model);
    out.extend_from_slice(&(block.len() as u32).to_le_bytes());
    out.extend_from_slice(block.as_bytes());
    let count = model.params.len() + 2;
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for (name, t) in model.params.iter() {
        if name.len() > u16::MAX as usize {
            return Err(Error::Format(format!("tensor name {name} too long")));
        }
        put_tensor(&mut out, name, t);
    }
    put_tensor(&mut out, NORM_MEAN, &Tensor::vector(model.audio_norm.mean.clone())?);
    put_tensor(&mut out, NORM_STD, &Tensor::vector(model.audio_norm.std.clone())?);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn str(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Format("invalid UTF-8".into()))
    }
}

/// Parses checkpoint bytes. Nothing is returned unless the whole buffer is a
/// well-formed checkpoint.
pub fn from_bytes(buf: &[u8]) -> Result<CaClap> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4).map_err(|_| Error::Format("file too short".into()))? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic, not a CACK checkpoint".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let block_len = r.u32()? as usize;
    let (config, step) = parse_config(r.str(block_len)?)?;
    config.validate().map_err(|e| Error::Format(e.to_string()))?;

    let count = r.u32()? as usize;
    let mut params = ParamSet::new();
    let mut norm_mean = None;
    let mut norm_std = None;
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = r.str(name_len)?.to_string();
        let rank = r.u8()? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Format(format!("tensor {name} has rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let bytes = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::Format(format!("tensor {name}: {e}")))?;
        match name.as_str() {
            NORM_MEAN => norm_mean = Some(t.into_data()),
            NORM_STD => norm_std = Some(t.into_data()),
            _ => params.insert(name, t)?,
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last tensor",
            buf.len() - r.pos
        )));
    }
    let audio_norm = AudioNorm {
        mean: norm_mean.ok_or_else(|| Error::Format("missing audio normalization".into()))?,
        std: norm_std.ok_or_else(|| Error::Format("missing audio normalization".into()))?,
    };

    // The stored tensors must be exactly the ones this config initializes.
    let reference = CaClap::init(config.clone(), AudioNorm::identity(config.channels))?;
    let expected: Vec<(&str, &[usize])> = reference.params.iter().map(|(n, t)| (n, t.shape())).collect();
    let found: Vec<(&str, &[usize])> = params.iter().map(|(n, t)| (n, t.shape())).collect();
    if expected != found {
        return Err(Error::Format("tensor set does not match the config".into()));
    }
    if audio_norm.mean.len() != config.channels || audio_norm.std.len() != config.channels {
        return Err(Error::Format("audio normalization width".into()));
    }
    Ok(CaClap {
        config,
        params,
        audio_norm,
        step,
    })
}

pub fn save_checkpoint(model: &CaClap, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CaClap> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> CaClap {
        let config = CaClapConfig {
            vocab_size: 20,
            channels: 5,
            dim: 4,
            audio_hidden: 3,
            proj_dim: 2,
            ..CaClapConfig::default()
        };
        CaClap::init(config, AudioNorm::identity(5)).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let bytes = to_bytes(&m).unwrap();
        assert_eq!(from_bytes(&bytes).unwrap(), m);
        assert_eq!(&bytes[..4], b"CACK");
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let mut bytes = to_bytes(&model()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_and_trailing_bytes_are_rejected() {
        let bytes = to_bytes(&model()).unwrap();
        for cut in [3, 9, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(from_bytes(&long), Err(Error::Format(_))));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut bytes = to_bytes(&model()).unwrap();
        bytes[4] = 9;
        assert!(matches!(from_bytes(&bytes), Err(Error::Format(_))));
    }
}
