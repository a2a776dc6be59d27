//! `CLC1` binary checkpoints.
//!
//! ```text
//! "CLC1"                      4 bytes
//! version                     u32 (= 1)
//! d_visual d_audio d_model hidden   u32 each
//! cross_propagation           u8
//! gate_normalize              u8
//! fingerprint                 16 ASCII bytes (hex; zero-padded)
//! parameter count             u32
//! per parameter, in construction order:
//!   name length u32, name (UTF-8), rows u32, cols u32,
//!   rows·cols f64 values, row-major
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::config::short_hash;
use crate::datasets::Reader;
use crate::error::{ClcError, FormatErrorKind, Result};
use crate::model::{ClcModel, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CLC1";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| ClcError::Contract(format!("{v} exceeds u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(model: &ClcModel, fingerprint: &str) -> Result<Vec<u8>> {
    let c = &model.config;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [c.d_visual, c.d_audio, c.d_model, c.hidden] {
        put_u32(&mut buf, v)?;
    }
    buf.push(u8::from(c.cross_propagation));
    buf.push(u8::from(c.gate_normalize));
    let mut fp = [b'0'; 16];
    let bytes = fingerprint.as_bytes();
    if bytes.len() > 16 || !fingerprint.is_ascii() {
        return Err(ClcError::Contract(format!("fingerprint `{fingerprint}` is not 16 ASCII bytes")));
    }
    fp[..bytes.len()].copy_from_slice(bytes);
    buf.extend_from_slice(&fp);
    put_u32(&mut buf, model.store.len())?;
    for p in model.store.iter() {
        put_u32(&mut buf, p.name.len())?;
        buf.extend_from_slice(p.name.as_bytes());
        put_u32(&mut buf, p.value.rows())?;
        put_u32(&mut buf, p.value.cols())?;
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

/// Rebuilds the model from its header and overwrites every parameter.
/// Returns the model and the stored fingerprint.
pub fn decode_checkpoint(buf: &[u8], path: &Path) -> Result<(ClcModel, String)> {
    let mut r = Reader::new(buf, path);
    let magic = r.take(4).map_err(|_| r.fail(0, FormatErrorKind::BadMagic))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(r.fail(0, FormatErrorKind::BadMagic));
    }
    let at = r.offset();
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.fail(at, FormatErrorKind::UnsupportedVersion(version)));
    }
    let dims_at = r.offset();
    let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|v| v as usize);
    if dims.contains(&0) {
        return Err(r.fail(dims_at, FormatErrorKind::ZeroDimension));
    }
    let config = ModelConfig {
        d_visual: dims[0],
        d_audio: dims[1],
        d_model: dims[2],
        hidden: dims[3],
        cross_propagation: r.flag()?,
        gate_normalize: r.flag()?,
    };
    let fp_at = r.offset();
    let fingerprint = r.string(16)?;
    if !fingerprint.is_ascii() {
        return Err(r.fail(fp_at, FormatErrorKind::InvalidUtf8));
    }
    let mut model = ClcModel::new(config, 0)?;
    let count_at = r.offset();
    let count = r.u32()? as usize;
    if count != model.store.len() {
        return Err(ClcError::Contract(format!(
            "{}: byte {count_at}: {count} parameters, model layout has {}",
            path.display(),
            model.store.len()
        )));
    }
    for p in model.store.iter_mut() {
        let name_len = r.u32()? as usize;
        let name = r.string(name_len)?;
        let shape_at = r.offset();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if name != p.name || (rows, cols) != p.value.shape() {
            return Err(ClcError::Contract(format!(
                "{}: byte {shape_at}: parameter {name} {rows}x{cols} does not match expected {} {:?}",
                path.display(),
                p.name,
                p.value.shape()
            )));
        }
        let values = r.f64_values(rows * cols)?;
        p.value.data_mut().copy_from_slice(&values);
    }
    r.finish()?;
    Ok((model, fingerprint))
}

pub fn save_checkpoint(model: &ClcModel, fingerprint: &str, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(model, fingerprint)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ClcModel, String)> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path)?, path)
}

/// Short content hash of a checkpoint file, for reports.
pub fn checkpoint_hash(path: impl AsRef<Path>) -> Result<String> {
    Ok(short_hash(&fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ClcModel {
        ClcModel::new(
            ModelConfig {
                d_visual: 5,
                d_audio: 3,
                d_model: 4,
                hidden: 2,
                cross_propagation: true,
                gate_normalize: false,
            },
            11,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let buf = encode_checkpoint(&m, "0123456789abcdef").unwrap();
        let (back, fp) = decode_checkpoint(&buf, Path::new("m")).unwrap();
        assert_eq!(fp, "0123456789abcdef");
        assert_eq!(back.config, m.config);
        assert_eq!(back.store, m.store);
        assert_eq!(encode_checkpoint(&back, &fp).unwrap(), buf);
    }

    #[test]
    fn corruption_is_reported() {
        let buf = encode_checkpoint(&model(), "x").unwrap();
        let mut bad = buf.clone();
        bad[1] = b'Z';
        assert!(matches!(
            decode_checkpoint(&bad, Path::new("m")),
            Err(ClcError::Format { kind: FormatErrorKind::BadMagic, .. })
        ));
        assert!(matches!(
            decode_checkpoint(&buf[..buf.len() - 1], Path::new("m")),
            Err(ClcError::Format { kind: FormatErrorKind::Truncated, .. })
        ));
        let mut nan = buf.clone();
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&nan, Path::new("m")),
            Err(ClcError::Format { kind: FormatErrorKind::NonFinite, .. })
        ));
    }
}
