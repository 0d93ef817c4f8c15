//! Checkpoint format `GRCKPT1`: the full parameter store plus a config
//! digest, written atomically.
//!
//! Layout:
//!
//! ```text
//! GRCKPT1 v1 digest=<16 hex> params=<count> floats=<total>\n
//! repeat per parameter, in store order:
//!   name_len: u32 LE
//!   name:     name_len bytes (UTF-8)
//!   rank:     u32 LE
//!   dims:     rank x u32 LE
//!   values:   prod(dims) x f32 LE
//! ```
//!
//! The header's `params=`/`floats=` counts let the loader cross-check the
//! payload against what the header promises, so truncation and shape
//! corruption yield distinct errors instead of a silently short store.
//! Loading never mutates an existing store: it builds a fresh one and hands
//! it over only after every record validated.

use std::path::Path;

use crate::error::PersistError;
use crate::export::write_atomic;
use crate::params::ParameterStore;

const MAGIC: &str = "GRCKPT1";
const VERSION: &str = "v1";

/// 64-bit FNV-1a, used to fingerprint the run configuration.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Serializes `store` with `digest` into the checkpoint byte layout.
pub fn checkpoint_bytes(store: &ParameterStore, digest: u64) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(
        format!(
            "{MAGIC} {VERSION} digest={digest:016x} params={} floats={}\n",
            store.len(),
            store.total_len()
        )
        .as_bytes(),
    );
    for param in store.iter() {
        out.extend_from_slice(&(param.name.len() as u32).to_le_bytes());
        out.extend_from_slice(param.name.as_bytes());
        out.extend_from_slice(&(param.shape.len() as u32).to_le_bytes());
        for dim in &param.shape {
            out.extend_from_slice(&(*dim as u32).to_le_bytes());
        }
        for value in &param.values {
            out.extend_from_slice(&value.to_le_bytes());
        }
    }
    out
}

/// Writes a checkpoint atomically.
pub fn save_checkpoint(
    path: &Path,
    store: &ParameterStore,
    digest: u64,
) -> Result<(), PersistError> {
    write_atomic(path, &checkpoint_bytes(store, digest))
}

/// Byte cursor with truncation-aware reads.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, context: &str) -> Result<&'a [u8], PersistError> {
        if self.pos + n > self.bytes.len() {
            return Err(PersistError::Truncated {
                context: context.to_string(),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, context: &str) -> Result<u32, PersistError> {
        let b = self.take(4, context)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Loads a checkpoint, returning the parameter store and the config digest
/// recorded at save time.
pub fn load_checkpoint(path: &Path) -> Result<(ParameterStore, u64), PersistError> {
    let bytes = std::fs::read(path)?;
    parse_checkpoint(&bytes)
}

fn parse_checkpoint(bytes: &[u8]) -> Result<(ParameterStore, u64), PersistError> {
    let newline = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| PersistError::Truncated {
            context: "header line".to_string(),
        })?;
    let header =
        std::str::from_utf8(&bytes[..newline]).map_err(|_| PersistError::Header {
            message: "header is not UTF-8".to_string(),
        })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.first().copied() != Some(MAGIC) {
        return Err(PersistError::BadMagic {
            expected: MAGIC,
            found: fields.first().unwrap_or(&"").to_string(),
        });
    }
    if fields.len() != 5 || fields[1] != VERSION {
        return Err(PersistError::Header {
            message: format!("expected `{MAGIC} {VERSION} digest=.. params=.. floats=..`, got `{header}`"),
        });
    }
    let field = |idx: usize, key: &str| -> Result<&str, PersistError> {
        fields[idx]
            .strip_prefix(key)
            .ok_or_else(|| PersistError::Header {
                message: format!("field {idx} should start with `{key}`"),
            })
    };
    let digest = u64::from_str_radix(field(2, "digest=")?, 16).map_err(|e| {
        PersistError::Header {
            message: format!("bad digest: {e}"),
        }
    })?;
    let declared_params: usize = field(3, "params=")?
        .parse()
        .map_err(|e| PersistError::Header {
            message: format!("bad params count: {e}"),
        })?;
    let declared_floats: usize = field(4, "floats=")?
        .parse()
        .map_err(|e| PersistError::Header {
            message: format!("bad floats count: {e}"),
        })?;

    let mut reader = Reader {
        bytes,
        pos: newline + 1,
    };
    let mut store = ParameterStore::new();
    let mut floats = 0usize;
    for index in 0..declared_params {
        let context = format!("parameter record {index}");
        let name_len = reader.u32(&context)? as usize;
        let name_bytes = reader.take(name_len, &context)?;
        let name = std::str::from_utf8(name_bytes).map_err(|_| PersistError::Header {
            message: format!("parameter record {index}: name is not UTF-8"),
        })?;
        let rank = reader.u32(name)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(reader.u32(name)? as usize);
        }
        let count: usize = shape.iter().product();
        let raw = reader.take(4 * count, name)?;
        let mut values = Vec::with_capacity(count);
        for chunk in raw.chunks_exact(4) {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(PersistError::NonFinite {
                    context: name.to_string(),
                });
            }
            values.push(v);
        }
        floats += count;
        store
            .insert(name, &shape, values)
            .map_err(|e| PersistError::Header {
                message: format!("parameter record {index}: {e}"),
            })?;
    }

    if reader.pos != bytes.len() {
        return Err(PersistError::CountMismatch {
            context: "checkpoint payload bytes".to_string(),
            declared: reader.pos,
            found: bytes.len(),
        });
    }
    if floats != declared_floats {
        return Err(PersistError::CountMismatch {
            context: "checkpoint float count".to_string(),
            declared: declared_floats,
            found: floats,
        });
    }
    if store.len() != declared_params {
        return Err(PersistError::CountMismatch {
            context: "checkpoint parameter count".to_string(),
            declared: declared_params,
            found: store.len(),
        });
    }
    Ok((store, digest))
}

// ═══════════════════════════════════════════════════════════════════════
// Tests
// ═══════════════════════════════════════════════════════════════════════
