//! Binary checkpoint format. Every integer and float is little-endian.
//!
//! ```text
//! "RCKP"                      4 bytes magic
//! version                     u32 (currently 1)
//! value_width                 u8 (4 for f32 values, 8 for f64)
//! n_groups n_blocks n_feats   u32 ×3
//! reduction scale             u32 ×2
//! use_lsc use_ssc             u8 ×2 (0 or 1)
//! ca_kind                     u8 (0 learned, 1 constant)
//! ca_alpha                    f64 (0 when learned)
//! has_mean                    u8 (0 or 1)
//! mean                        f64 ×3 (zeros when absent)
//! tensor_count                u32
//! tensor_count × {
//!     name_len                u32
//!     name                    name_len bytes of UTF-8
//!     rank                    u32
//!     dims                    u32 × rank
//!     values                  value_width bytes × prod(dims), row-major
//! }
//! ```
//!
//! Tensors appear in the parameter visiting order. Values are written at the
//! working precision, so save then load is bitwise exact. Either width loads;
//! a 64-bit file read by a 32-bit build is rounded to nearest.

use std::fs;
use std::path::Path;

use super::{CaMode, RcanConfig, RcanParams};
use crate::error::{CheckpointError, Error, Result};
use crate::params::Params;
use crate::tensor::Real;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"RCKP";
const VALUE_WIDTH: usize = std::mem::size_of::<Real>();

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Config(format!("{what} {v} does not fit the checkpoint format")))
}

/// Serialises `params` and `config` to bytes.
pub fn write_checkpoint(params: &RcanParams, config: &RcanConfig) -> Result<Vec<u8>> {
    validate_params(params, config)?;
    let mut buf = Vec::with_capacity(64 + VALUE_WIDTH * params.num_scalars());
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    buf.push(VALUE_WIDTH as u8);
    for (v, what) in [
        (config.n_groups, "group count"),
        (config.n_blocks, "block count"),
        (config.n_feats, "feature width"),
        (config.reduction, "reduction"),
        (config.scale, "scale"),
    ] {
        put_u32(&mut buf, to_u32(v, what)?);
    }
    buf.push(config.use_lsc as u8);
    buf.push(config.use_ssc as u8);
    match config.ca_mode {
        CaMode::Learned => {
            buf.push(0);
            put_f64(&mut buf, 0.0);
        }
        CaMode::Constant(a) => {
            buf.push(1);
            put_f64(&mut buf, a as f64);
        }
    }
    buf.push(config.mean_shift.is_some() as u8);
    for m in config.mean_shift.unwrap_or([0.0; 3]) {
        put_f64(&mut buf, m as f64);
    }
    let tensors = params.named_tensors();
    put_u32(&mut buf, to_u32(tensors.len(), "tensor count")?);
    for t in tensors {
        put_u32(&mut buf, to_u32(t.name.len(), "name length")?);
        buf.extend_from_slice(t.name.as_bytes());
        put_u32(&mut buf, t.dims.len() as u32);
        for &d in &t.dims {
            put_u32(&mut buf, to_u32(d, "dimension")?);
        }
        for &v in t.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn save_checkpoint(params: &RcanParams, config: &RcanConfig, path: impl AsRef<Path>) -> Result<()> {
    let bytes = write_checkpoint(params, config)?;
    fs::write(path, bytes)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::Truncated(what)),
        }
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn flag(&mut self, what: &'static str) -> Result<bool, CheckpointError> {
        match self.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(CheckpointError::Inconsistent(format!("{what} flag has value {v}"))),
        }
    }
}

fn inconsistent(msg: impl Into<String>) -> Error {
    CheckpointError::Inconsistent(msg.into()).into()
}

/// Parses a checkpoint from bytes. Nothing is returned unless the whole
/// file is valid.
pub fn read_checkpoint(bytes: &[u8]) -> Result<(RcanParams, RcanConfig)> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    r.pos = 4;
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        }
        .into());
    }
    let width = r.u8("value width")? as usize;
    if width != 4 && width != 8 {
        return Err(inconsistent(format!("unsupported value width {width}")));
    }
    let n_groups = r.u32("config")? as usize;
    let n_blocks = r.u32("config")? as usize;
    let n_feats = r.u32("config")? as usize;
    let reduction = r.u32("config")? as usize;
    let scale = r.u32("config")? as usize;
    let use_lsc = r.flag("use_lsc")?;
    let use_ssc = r.flag("use_ssc")?;
    let ca_kind = r.u8("config")?;
    let alpha = r.f64("config")?;
    let ca_mode = match ca_kind {
        0 => CaMode::Learned,
        1 => CaMode::Constant(alpha as Real),
        k => return Err(inconsistent(format!("unknown attention kind {k}"))),
    };
    let has_mean = r.flag("has_mean")?;
    let mut mean = [0.0 as Real; 3];
    for m in &mut mean {
        *m = r.f64("config")? as Real;
    }
    let config = RcanConfig {
        n_groups,
        n_blocks,
        n_feats,
        reduction,
        scale,
        use_lsc,
        use_ssc,
        ca_mode,
        mean_shift: has_mean.then_some(mean),
    };
    config
        .validate()
        .map_err(|e| inconsistent(format!("stored configuration is invalid: {e}")))?;

    let mut params = RcanParams::zeros(&config)?;
    let expected: Vec<(String, Vec<usize>)> = params
        .named_tensors()
        .into_iter()
        .map(|t| (t.name, t.dims))
        .collect();
    let count = r.u32("tensor count")? as usize;
    if count != expected.len() {
        return Err(inconsistent(format!(
            "configuration implies {} tensors, file has {count}",
            expected.len()
        )));
    }
    let mut values: Vec<Vec<Real>> = Vec::with_capacity(count);
    for (name, dims) in &expected {
        let len = r.u32("tensor name")? as usize;
        let got_name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| inconsistent("tensor name is not UTF-8"))?;
        if got_name != name {
            return Err(inconsistent(format!("expected tensor `{name}`, found `{got_name}`")));
        }
        let rank = r.u32("tensor rank")? as usize;
        if rank != dims.len() {
            return Err(inconsistent(format!("`{name}` has rank {rank}, expected {}", dims.len())));
        }
        let mut got_dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            got_dims.push(r.u32("tensor dims")? as usize);
        }
        if &got_dims != dims {
            return Err(inconsistent(format!("`{name}` has shape {got_dims:?}, expected {dims:?}")));
        }
        let n: usize = dims.iter().product();
        let raw = r.take(n * width, "tensor values")?;
        values.push(if width == 4 {
            raw.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as Real)
                .collect()
        } else {
            raw.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()) as Real)
                .collect()
        });
    }
    if r.pos != bytes.len() {
        return Err(inconsistent(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let mut it = values.into_iter();
    params.visit_mut("", &mut |_, dst| dst.copy_from_slice(&it.next().expect("count checked")));
    Ok((params, config))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(RcanParams, RcanConfig)> {
    let bytes = fs::read(path).map_err(CheckpointError::Io)?;
    read_checkpoint(&bytes)
}

/// Checks that `params` has exactly the tensors (names and shapes) that
/// `config` implies.
pub fn validate_params(params: &RcanParams, config: &RcanConfig) -> Result<()> {
    let skeleton = RcanParams::zeros(config)?;
    let want = skeleton.named_tensors();
    let have = params.named_tensors();
    if want.len() != have.len() {
        return Err(inconsistent(format!(
            "configuration implies {} tensors, parameters have {}",
            want.len(),
            have.len()
        )));
    }
    for (w, h) in want.iter().zip(&have) {
        if w.name != h.name || w.dims != h.dims {
            return Err(inconsistent(format!(
                "expected `{}` {:?}, found `{}` {:?}",
                w.name, w.dims, h.name, h.dims
            )));
        }
    }
    if params.body.use_lsc != config.use_lsc
        || params.body.groups.iter().any(|g| g.use_ssc != config.use_ssc)
    {
        return Err(inconsistent("skip-connection flags differ from configuration"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::build;

    fn sample() -> (RcanParams, RcanConfig) {
        let cfg = RcanConfig {
            ca_mode: CaMode::Learned,
            mean_shift: Some([0.25, 0.5, 0.125]),
            ..RcanConfig::tiny(4)
        };
        (build(&cfg, 11).unwrap(), cfg)
    }

    #[test]
    fn roundtrip_bitwise() {
        let (p, cfg) = sample();
        let bytes = write_checkpoint(&p, &cfg).unwrap();
        let (q, cfg2) = read_checkpoint(&bytes).unwrap();
        assert_eq!(cfg, cfg2);
        let a: Vec<u64> = p.flatten().iter().map(|v| v.to_bits() as u64).collect();
        let b: Vec<u64> = q.flatten().iter().map(|v| v.to_bits() as u64).collect();
        assert_eq!(a, b);
        assert_eq!(write_checkpoint(&q, &cfg2).unwrap(), bytes);
    }

    #[test]
    fn arbitrary_values_roundtrip_bitwise() {
        let (mut p, cfg) = sample();
        let mut k = 0u32;
        p.visit_mut("", &mut |_, v| {
            for x in v {
                k += 1;
                *x = *x / 3.0 + (k as Real).sqrt() * 1e-9;
            }
        });
        let (q, _) = read_checkpoint(&write_checkpoint(&p, &cfg).unwrap()).unwrap();
        assert!(p.flatten().iter().zip(q.flatten()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn narrow_values_load() {
        let (p, cfg) = sample();
        let mut bytes = write_checkpoint(&p, &cfg).unwrap();
        if VALUE_WIDTH == 8 {
            // rewrite the payload at 4 bytes per value; build() draws
            // f32-representable weights, so nothing is lost
            let (head, _) = bytes.split_at(8);
            let mut narrow = head.to_vec();
            narrow.push(4);
            let mut body = Vec::new();
            let mut r = Reader { bytes: &bytes, pos: 9 };
            body.extend_from_slice(r.take(5 * 4 + 2 + 1 + 8 + 1 + 24, "cfg").unwrap());
            let count = r.u32("count").unwrap();
            body.extend_from_slice(&count.to_le_bytes());
            for t in p.named_tensors() {
                body.extend_from_slice(r.take(4 + t.name.len() + 4 + 4 * t.dims.len(), "head").unwrap());
                for _ in 0..t.values.len() {
                    let v = r.f64("value").unwrap();
                    body.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            narrow.extend_from_slice(&body);
            bytes = narrow;
        }
        let (q, _) = read_checkpoint(&bytes).unwrap();
        assert_eq!(q, p);
        bytes[8] = 3;
        assert!(matches!(read_checkpoint(&bytes), Err(Error::Checkpoint(CheckpointError::Inconsistent(_)))));
    }

    #[test]
    fn constant_attention_config_roundtrip() {
        let cfg = RcanConfig {
            ca_mode: CaMode::Constant(0.1),
            use_ssc: false,
            mean_shift: None,
            ..RcanConfig::tiny(3)
        };
        let p = build(&cfg, 1).unwrap();
        let (_, back) = read_checkpoint(&write_checkpoint(&p, &cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn header_layout() {
        let (p, cfg) = sample();
        let bytes = write_checkpoint(&p, &cfg).unwrap();
        assert_eq!(&bytes[..4], b"RCKP");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(bytes[8] as usize, VALUE_WIDTH);
        assert_eq!(&bytes[9..13], &2u32.to_le_bytes());
        // the stored scalar count equals the parameter count
        let header = 4 + 4 + 1 + 5 * 4 + 2 + 1 + 8 + 1 + 24 + 4;
        let names: usize = p.named_tensors().iter().map(|t| 4 + t.name.len() + 4 + 4 * t.dims.len()).sum();
        let scalars = (bytes.len() - header - names) / VALUE_WIDTH;
        assert_eq!(scalars as u64, crate::network::param_count(&cfg).unwrap());
    }

    #[test]
    fn bad_magic() {
        let (p, cfg) = sample();
        let mut bytes = write_checkpoint(&p, &cfg).unwrap();
        bytes[0] = b'X';
        assert!(matches!(read_checkpoint(&bytes), Err(Error::Checkpoint(CheckpointError::BadMagic))));
        assert!(matches!(read_checkpoint(b"RC"), Err(Error::Checkpoint(CheckpointError::BadMagic))));
    }

    #[test]
    fn version_mismatch() {
        let (p, cfg) = sample();
        let mut bytes = write_checkpoint(&p, &cfg).unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            read_checkpoint(&bytes),
            Err(Error::Checkpoint(CheckpointError::UnsupportedVersion { found: 2, expected: 1 }))
        ));
    }

    #[test]
    fn truncation() {
        let (p, cfg) = sample();
        let bytes = write_checkpoint(&p, &cfg).unwrap();
        for cut in [6, 20, 60, bytes.len() - 1] {
            assert!(
                matches!(read_checkpoint(&bytes[..cut]), Err(Error::Checkpoint(CheckpointError::Truncated(_)))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let (p, cfg) = sample();
        let mut bytes = write_checkpoint(&p, &cfg).unwrap();
        bytes.push(0);
        assert!(matches!(read_checkpoint(&bytes), Err(Error::Checkpoint(CheckpointError::Inconsistent(_)))));
    }

    #[test]
    fn config_mismatch_detected() {
        let (p, cfg) = sample();
        let other = RcanConfig {
            n_groups: 3,
            ..cfg.clone()
        };
        assert!(matches!(
            validate_params(&p, &other),
            Err(Error::Checkpoint(CheckpointError::Inconsistent(_)))
        ));
        assert!(validate_params(&p, &cfg).is_ok());
        assert!(write_checkpoint(&p, &other).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let (p, cfg) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.rckp");
        save_checkpoint(&p, &cfg, &path).unwrap();
        let (q, c) = load_checkpoint(&path).unwrap();
        assert_eq!((q, c), (p, cfg));
        assert!(matches!(
            load_checkpoint(dir.path().join("missing")),
            Err(Error::Checkpoint(CheckpointError::Io(_)))
        ));
    }
}
