//! Artifact writers: atomic file replacement, PGM images, CSV tables.
//!
//! Every writer goes through [`write_atomic`] (write to a sibling temp file,
//! then rename), so a failed run never leaves a partial artifact behind.

use crate::error::PersistError;
use std::fs;
use std::io::Write;
use std::path::Path;

/// Writes `bytes` to `path` via a temp file in the same directory plus an
/// atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PersistError> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Maps a value from `[-1, 1]` to an integer pixel in `[0, 255]`:
/// `round((v + 1) / 2 * 255)`, clamped. Used by every PGM export so image
/// grey levels are comparable across artifacts.
pub fn pixel_from_unit(v: f32) -> u8 {
    let scaled = (f64::from(v) + 1.0) / 2.0 * 255.0;
    scaled.round().clamp(0.0, 255.0) as u8
}

/// Renders a matrix of `[-1, 1]` values as a plain-text PGM (P2, maxval 255).
///
/// Rows are emitted in order; sample lines are wrapped at 16 values to stay
/// under the format's 70-character line guidance.
pub fn pgm_from_unit_values(
    width: usize,
    height: usize,
    values: &[f32],
) -> Result<Vec<u8>, PersistError> {
    if values.len() != width * height {
        return Err(PersistError::CountMismatch {
            context: "PGM values".into(),
            declared: width * height,
            found: values.len(),
        });
    }
    let mut out = String::with_capacity(values.len() * 4 + 32);
    out.push_str("P2\n");
    out.push_str(&format!("{width} {height}\n255\n"));
    for (idx, v) in values.iter().enumerate() {
        out.push_str(itoa(pixel_from_unit(*v)).as_str());
        let last_in_line = (idx + 1) % 16 == 0 || idx + 1 == values.len();
        out.push(if last_in_line { '\n' } else { ' ' });
    }
    Ok(out.into_bytes())
}

fn itoa(v: u8) -> String {
    v.to_string()
}

/// Writes a PGM built by [`pgm_from_unit_values`] to disk.
pub fn save_pgm(
    path: &Path,
    width: usize,
    height: usize,
    values: &[f32],
) -> Result<(), PersistError> {
    let bytes = pgm_from_unit_values(width, height, values)?;
    write_atomic(path, &bytes)
}

/// Renders a CSV with a header row; every row must have the header's arity.
pub fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>, PersistError> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        if row.len() != header.len() {
            return Err(PersistError::CountMismatch {
                context: "CSV row width".into(),
                declared: header.len(),
                found: row.len(),
            });
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out.into_bytes())
}

/// Writes a CSV built by [`csv_bytes`] to disk.
pub fn save_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), PersistError> {
    let bytes = csv_bytes(header, rows)?;
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_pixel_map_endpoints_and_midpoint() {
        assert_eq!(pixel_from_unit(-1.0), 0);
        assert_eq!(pixel_from_unit(1.0), 255);
        assert_eq!(pixel_from_unit(0.0), 128); // round(127.5) == 128
        assert_eq!(pixel_from_unit(-3.0), 0); // clamped
        assert_eq!(pixel_from_unit(3.0), 255); // clamped
    }

    #[test]
    fn pgm_shape_and_header() {
        let bytes = pgm_from_unit_values(3, 2, &[-1.0, 0.0, 1.0, 0.5, -0.5, 0.0]).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("P2"));
        assert_eq!(lines.next(), Some("3 2"));
        assert_eq!(lines.next(), Some("255"));
        let pixels: Vec<u32> = lines
            .flat_map(|l| l.split_whitespace())
            .map(|t| t.parse().unwrap())
            .collect();
        assert_eq!(pixels.len(), 6);
        assert!(pixels.iter().all(|&p| p <= 255));
    }

    #[test]
    fn pgm_rejects_wrong_count() {
        assert!(pgm_from_unit_values(2, 2, &[0.0; 3]).is_err());
    }

    #[test]
    fn csv_header_and_arity() {
        let rows = vec![vec!["1".into(), "a".into()], vec!["2".into(), "b".into()]];
        let bytes = csv_bytes(&["n", "s"], &rows).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap(), "n,s\n1,a\n2,b\n");
        assert!(csv_bytes(&["n", "s"], &[vec!["solo".into()]]).is_err());
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = std::env::temp_dir().join("grids-core-atomic");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("out.csv");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        let leftovers: Vec<_> = std::fs::read_dir(&dir)
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.path().to_string_lossy().contains(".tmp"))
            .collect();
        assert!(leftovers.is_empty());
        std::fs::remove_dir_all(&dir).ok();
    }
}
