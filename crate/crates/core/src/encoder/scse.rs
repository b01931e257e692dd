//! SCSE embedding files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic            4 bytes  "SCSE"
//! version          u16      1
//! embedding_dim    u32
//! count            u32
//! descriptor_len   u32
//! descriptor       UTF-8 JSON {name, embedding_dim, preprocessing_id}
//! count records:
//!   source_id_len  u16
//!   source_id      UTF-8
//!   values         embedding_dim x f32
//! ```

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::EncoderDescriptor;
use crate::metric::EmbeddingVector;

pub const MAGIC: &[u8; 4] = b"SCSE";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum ScseError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed SCSE data at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error("cannot write SCSE: {0}")]
    Invalid(String),
}

pub fn to_bytes(
    vectors: &[EmbeddingVector],
    descriptor: &EncoderDescriptor,
) -> Result<Vec<u8>, ScseError> {
    if vectors.is_empty() {
        return Err(ScseError::Invalid("no vectors".into()));
    }
    let dim = descriptor.embedding_dim;
    if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
        return Err(ScseError::Invalid(format!(
            "`{}` has dimension {}, descriptor says {dim}",
            v.source_id(),
            v.dim()
        )));
    }
    let to_u32 = |n: usize, what: &str| {
        u32::try_from(n).map_err(|_| ScseError::Invalid(format!("{what} {n} exceeds u32")))
    };
    let desc = serde_json::to_vec(descriptor).map_err(|e| ScseError::Invalid(e.to_string()))?;

    let mut out = Vec::with_capacity(18 + desc.len() + vectors.len() * (dim * 4 + 16));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(dim, "embedding_dim")?.to_le_bytes());
    out.extend_from_slice(&to_u32(vectors.len(), "count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(desc.len(), "descriptor length")?.to_le_bytes());
    out.extend_from_slice(&desc);
    for v in vectors {
        let id = v.source_id().as_bytes();
        let len = u16::try_from(id.len()).map_err(|_| {
            ScseError::Invalid(format!("source_id of {} bytes exceeds u16", id.len()))
        })?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id);
        for x in v.values() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ScseError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(ScseError::Format {
                offset: self.pos,
                reason: format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.buf.len() - self.pos
                ),
            }),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16, ScseError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, ScseError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn format_err(offset: usize, reason: impl Into<String>) -> ScseError {
    ScseError::Format {
        offset,
        reason: reason.into(),
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<(Vec<EmbeddingVector>, EncoderDescriptor), ScseError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(format_err(0, "bad magic, expected `SCSE`"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let dim = r.u32("embedding_dim")? as usize;
    if dim == 0 {
        return Err(format_err(6, "embedding_dim is 0"));
    }
    let count = r.u32("count")? as usize;
    let desc_len = r.u32("descriptor length")? as usize;
    let desc_at = r.pos;
    let descriptor: EncoderDescriptor = serde_json::from_slice(r.take(desc_len, "descriptor")?)
        .map_err(|e| format_err(desc_at, format!("descriptor JSON: {e}")))?;
    if descriptor.embedding_dim != dim {
        return Err(format_err(
            desc_at,
            format!(
                "descriptor embedding_dim {} disagrees with header {dim}",
                descriptor.embedding_dim
            ),
        ));
    }

    // cap the preallocation by what the buffer could possibly hold
    let mut vectors = Vec::with_capacity(count.min(buf.len() / (dim * 4 + 2)));
    for _ in 0..count {
        let record_at = r.pos;
        let id_len = r.u16("source_id length")? as usize;
        let id_at = r.pos;
        let id = std::str::from_utf8(r.take(id_len, "source_id")?)
            .map_err(|e| format_err(id_at, format!("source_id is not UTF-8: {e}")))?;
        let raw = r.take(dim * 4, "embedding values")?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let v = EmbeddingVector::new(id, values).map_err(|e| format_err(record_at, e.to_string()))?;
        vectors.push(v);
    }
    if r.pos != buf.len() {
        return Err(format_err(
            r.pos,
            format!("{} trailing bytes", buf.len() - r.pos),
        ));
    }
    Ok((vectors, descriptor))
}

pub fn save_embeddings(
    vectors: &[EmbeddingVector],
    descriptor: &EncoderDescriptor,
    file: &Path,
) -> Result<(), ScseError> {
    let bytes = to_bytes(vectors, descriptor)?;
    let io = |source| ScseError::Io {
        path: file.display().to_string(),
        source,
    };
    if let Some(parent) = file.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    // write-then-rename so a crash never leaves a half-written cache behind
    let tmp = file.with_extension("scse.partial");
    let mut f = std::fs::File::create(&tmp).map_err(io)?;
    f.write_all(&bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    std::fs::rename(&tmp, file).map_err(io)
}

pub fn load_embeddings(
    file: &Path,
) -> Result<(Vec<EmbeddingVector>, EncoderDescriptor), ScseError> {
    let bytes = std::fs::read(file).map_err(|source| ScseError::Io {
        path: file.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}
