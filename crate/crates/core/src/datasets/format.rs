//! `CLCF` feature files.
//!
//! ```text
//! "CLCF"            4 bytes
//! version           u8 (= 1)
//! video count       u32
//! per video:
//!   id length       u32, then that many UTF-8 bytes
//!   T, d_v, d_a     u32 each
//!   visual          T·d_v f32, row-major
//!   audio           T·d_a f32, row-major
//!   has labels      u8 (0 or 1)
//!   labels          T bytes (0 or 1), only when present
//! ```
//!
//! All integers and floats are little-endian. Matrices are widened to `f64`
//! on load and narrowed to `f32` on write.

use std::fs;
use std::path::{Path, PathBuf};

use super::FeatureSequence;
use crate::autodiff::Tensor;
use crate::error::{ClcError, FormatErrorKind, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"CLCF";
pub const FEATURE_VERSION: u8 = 1;

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], path: &Path) -> Self {
        Self {
            buf,
            pos: 0,
            path: path.to_path_buf(),
        }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn fail(&self, offset: usize, kind: FormatErrorKind) -> ClcError {
        ClcError::Format {
            path: self.path.clone(),
            offset: offset as u64,
            kind,
        }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| self.fail(self.buf.len(), FormatErrorKind::Truncated))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn flag(&mut self) -> Result<bool> {
        let at = self.pos;
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(self.fail(at, FormatErrorKind::InvalidFlag(b))),
        }
    }

    pub(crate) fn string(&mut self, len: usize) -> Result<String> {
        let at = self.pos;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.fail(at, FormatErrorKind::InvalidUtf8))
    }

    fn f32_matrix(&mut self, rows: usize, cols: usize) -> Result<Tensor> {
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| self.fail(self.pos, FormatErrorKind::Truncated))?;
        let start = self.pos;
        let bytes = self.take(n)?;
        let mut data = Vec::with_capacity(rows * cols);
        for (i, chunk) in bytes.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(self.fail(start + 4 * i, FormatErrorKind::NonFinite));
            }
            data.push(f64::from(v));
        }
        Tensor::from_vec(rows, cols, data)
    }

    pub(crate) fn f64_values(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| self.fail(self.pos, FormatErrorKind::Truncated))?;
        let start = self.pos;
        let bytes = self.take(len)?;
        let mut out = Vec::with_capacity(n);
        for (i, chunk) in bytes.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            if !v.is_finite() {
                return Err(self.fail(start + 8 * i, FormatErrorKind::NonFinite));
            }
            out.push(v);
        }
        Ok(out)
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.fail(self.pos, FormatErrorKind::TrailingBytes));
        }
        Ok(())
    }
}

/// Parses a complete `CLCF` image. `path` is used only in error messages.
pub fn decode_features(buf: &[u8], path: &Path) -> Result<Vec<FeatureSequence>> {
    let mut r = Reader::new(buf, path);
    let magic = r.take(4).map_err(|_| r.fail(0, FormatErrorKind::BadMagic))?;
    if magic != FEATURE_MAGIC {
        return Err(r.fail(0, FormatErrorKind::BadMagic));
    }
    let at = r.offset();
    let version = r.u8()?;
    if version != FEATURE_VERSION {
        return Err(r.fail(at, FormatErrorKind::UnsupportedVersion(version.into())));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let id_len = r.u32()? as usize;
        let id = r.string(id_len)?;
        let dims_at = r.offset();
        let t = r.u32()? as usize;
        let d_v = r.u32()? as usize;
        let d_a = r.u32()? as usize;
        if d_v == 0 || d_a == 0 {
            return Err(r.fail(dims_at, FormatErrorKind::ZeroDimension));
        }
        let visual = r.f32_matrix(t, d_v)?;
        let audio = r.f32_matrix(t, d_a)?;
        let labels = if r.flag()? {
            let at = r.offset();
            let bytes = r.take(t)?;
            if let Some(i) = bytes.iter().position(|&b| b > 1) {
                return Err(r.fail(at + i, FormatErrorKind::InvalidLabel(bytes[i])));
            }
            Some(bytes.to_vec())
        } else {
            None
        };
        out.push(FeatureSequence {
            id,
            visual,
            audio,
            labels,
            shots: None,
        });
    }
    r.finish()?;
    Ok(out)
}

fn put_u32(buf: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| ClcError::Contract(format!("{what} {v} exceeds u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serializes sequences into a `CLCF` image.
pub fn encode_features(seqs: &[FeatureSequence]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.push(FEATURE_VERSION);
    put_u32(&mut buf, seqs.len(), "video count")?;
    for s in seqs {
        s.validate()?;
        put_u32(&mut buf, s.id.len(), "id length")?;
        buf.extend_from_slice(s.id.as_bytes());
        put_u32(&mut buf, s.len(), "T")?;
        put_u32(&mut buf, s.d_visual(), "d_v")?;
        put_u32(&mut buf, s.d_audio(), "d_a")?;
        for m in [&s.visual, &s.audio] {
            for &v in m.data() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        match &s.labels {
            Some(labels) => {
                buf.push(1);
                buf.extend_from_slice(labels);
            }
            None => buf.push(0),
        }
    }
    Ok(buf)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<Vec<FeatureSequence>> {
    let path = path.as_ref();
    let buf = fs::read(path)?;
    decode_features(&buf, path)
}

pub fn write_features(seqs: &[FeatureSequence], path: impl AsRef<Path>) -> Result<()> {
    let buf = encode_features(seqs)?;
    fs::write(path, buf)?;
    Ok(())
}
