//! Dense feature grids and context pooling.
//!
//! A [`FeatureGrid`] is an `H x W x C` tensor stored row-major: channel `c`
//! of patch `(i, j)` (row `i`, column `j`) lives at flat offset
//! `(i * width + j) * channels + c`. Construction validates that every value
//! is finite, so downstream math never has to re-check.
//!
//! [`global_average_pool`] collapses the spatial axes into a single
//! [`ContextVector`] (the per-channel arithmetic mean, accumulated in `f64`);
//! [`gap_backward`] is its exact adjoint, spreading an upstream channel
//! gradient uniformly over all patches.
//!
//! Grids round-trip through the `FGRID1` file format: one text header line
//! `FGRID1 H W C\n` followed by `H*W*C` little-endian `f32` values in
//! row-major order.

use crate::error::{ModelError, PersistError};
use std::fs;
use std::io::Read;
use std::path::Path;

/// Dense `H x W x C` feature grid, row-major, all values finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f32>,
}

impl FeatureGrid {
    /// Builds a grid from a row-major value buffer.
    ///
    /// Fails if the buffer length is not `H*W*C`, any dimension is zero, or
    /// any value is non-finite.
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        values: Vec<f32>,
    ) -> Result<Self, ModelError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(ModelError::InvalidConfig {
                what: format!("grid dimensions {height}x{width}x{channels} must all be nonzero"),
            });
        }
        let expected = height * width * channels;
        if values.len() != expected {
            return Err(ModelError::LengthMismatch {
                what: "grid value buffer",
                expected,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite {
                stage: "grid construction",
            });
        }
        Ok(FeatureGrid {
            height,
            width,
            channels,
            values,
        })
    }

    /// Grid filled with a single value (handy in tests).
    pub fn constant(height: usize, width: usize, channels: usize, value: f32) -> Self {
        FeatureGrid::new(height, width, channels, vec![value; height * width * channels])
            .expect("constant grid is always valid for finite values")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of spatial patches, `H*W`.
    pub fn patches(&self) -> usize {
        self.height * self.width
    }

    /// Full row-major value buffer.
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// The `C` contiguous floats of patch `(i, j)`, bounds-checked.
    pub fn get(&self, i: usize, j: usize) -> Result<&[f32], ModelError> {
        if i >= self.height {
            return Err(ModelError::IndexOutOfRange {
                axis: "row",
                index: i,
                size: self.height,
            });
        }
        if j >= self.width {
            return Err(ModelError::IndexOutOfRange {
                axis: "column",
                index: j,
                size: self.width,
            });
        }
        Ok(self.patch(i, j))
    }

    /// Unchecked-by-`Result` patch accessor for internal hot paths; still
    /// bounds-checked by the slice indexing in debug and release.
    pub(crate) fn patch(&self, i: usize, j: usize) -> &[f32] {
        let start = (i * self.width + j) * self.channels;
        &self.values[start..start + self.channels]
    }

    /// Writes the grid to `path` in FGRID1 format.
    pub fn save(&self, path: &Path) -> Result<(), PersistError> {
        let mut bytes =
            Vec::with_capacity(32 + self.values.len() * std::mem::size_of::<f32>());
        bytes.extend_from_slice(
            format!("FGRID1 {} {} {}\n", self.height, self.width, self.channels).as_bytes(),
        );
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        crate::export::write_atomic(path, &bytes)
    }

    /// Reads a grid from an FGRID1 file.
    pub fn load(path: &Path) -> Result<Self, PersistError> {
        let mut file = fs::File::open(path)?;
        let mut header = Vec::new();
        // Read byte-by-byte up to the newline so the binary payload that
        // follows is untouched.
        let mut byte = [0u8; 1];
        loop {
            let n = file.read(&mut byte)?;
            if n == 0 {
                return Err(PersistError::Truncated {
                    context: "FGRID1 header".into(),
                });
            }
            if byte[0] == b'\n' {
                break;
            }
            header.push(byte[0]);
            if header.len() > 128 {
                return Err(PersistError::Header {
                    message: "header line longer than 128 bytes".into(),
                });
            }
        }
        let header = String::from_utf8(header).map_err(|_| PersistError::Header {
            message: "header is not UTF-8".into(),
        })?;
        let mut fields = header.split_whitespace();
        let magic = fields.next().unwrap_or("");
        if magic != "FGRID1" {
            return Err(PersistError::BadMagic {
                expected: "FGRID1",
                found: magic.to_string(),
            });
        }
        let mut dim = |name: &str| -> Result<usize, PersistError> {
            fields
                .next()
                .ok_or_else(|| PersistError::Header {
                    message: format!("missing {name}"),
                })?
                .parse::<usize>()
                .map_err(|_| PersistError::Header {
                    message: format!("{name} is not an unsigned integer"),
                })
        };
        let height = dim("height")?;
        let width = dim("width")?;
        let channels = dim("channels")?;
        let count = height
            .checked_mul(width)
            .and_then(|hw| hw.checked_mul(channels))
            .ok_or_else(|| PersistError::Header {
                message: "dimensions overflow".into(),
            })?;

        let mut payload = Vec::new();
        file.read_to_end(&mut payload)?;
        if payload.len() != count * 4 {
            return Err(PersistError::CountMismatch {
                context: "FGRID1 payload bytes".into(),
                declared: count * 4,
                found: payload.len(),
            });
        }
        let mut values = Vec::with_capacity(count);
        for chunk in payload.chunks_exact(4) {
            values.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PersistError::NonFinite {
                context: "FGRID1 payload".into(),
            });
        }
        FeatureGrid::new(height, width, channels, values).map_err(|e| PersistError::Header {
            message: e.to_string(),
        })
    }
}

/// Per-channel mean of a grid: the pooled context the coordinate predictor
/// conditions on.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextVector {
    values: Vec<f32>,
}

impl ContextVector {
    pub fn channels(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Collapses the spatial axes: `z[c] = mean over (i, j) of grid[i, j, c]`.
///
/// Sums are accumulated per channel in `f64` and divided once, so the result
/// is within one rounding step of the exact mean.
pub fn global_average_pool(grid: &FeatureGrid) -> ContextVector {
    let c = grid.channels();
    let mut acc = vec![0.0f64; c];
    for patch in grid.values().chunks_exact(c) {
        for (a, v) in acc.iter_mut().zip(patch) {
            *a += f64::from(*v);
        }
    }
    let scale = 1.0 / grid.patches() as f64;
    ContextVector {
        values: acc.iter().map(|a| (a * scale) as f32).collect(),
    }
}

/// Adjoint of [`global_average_pool`]: spreads an upstream channel gradient
/// uniformly, `dgrid[i, j, c] = upstream[c] / (H*W)`.
pub fn gap_backward(
    upstream: &[f32],
    height: usize,
    width: usize,
) -> Result<Vec<f32>, ModelError> {
    if height == 0 || width == 0 {
        return Err(ModelError::InvalidConfig {
            what: "gap_backward needs nonzero spatial dimensions".into(),
        });
    }
    let channels = upstream.len();
    let scale = 1.0 / (height * width) as f64;
    let per_patch: Vec<f32> = upstream
        .iter()
        .map(|u| (f64::from(*u) * scale) as f32)
        .collect();
    let mut out = Vec::with_capacity(height * width * channels);
    for _ in 0..height * width {
        out.extend_from_slice(&per_patch);
    }
    Ok(out)
}

// ═══════════════════════════════════════════════════════════════════════
// Tests
// ═══════════════════════════════════════════════════════════════════════
