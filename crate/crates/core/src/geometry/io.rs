//! Point-cloud files: KITTI-style `.bin` (packed little-endian f32 x, y, z,
//! intensity) and whitespace-separated text with four columns per line.

use std::fs;
use std::path::Path;

use super::{Point, PointCloud};
use crate::error::{Error, Result};

const RECORD: usize = 16;

pub fn read_bin(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % RECORD != 0 {
        return Err(Error::Data {
            path: path.into(),
            message: format!("{} bytes is not a whole number of 16-byte point records", bytes.len()),
        });
    }
    let f = |b: &[u8]| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
    Ok(bytes
        .chunks_exact(RECORD)
        .map(|r| Point::new(f(&r[0..4]), f(&r[4..8]), f(&r[8..12]), f(&r[12..16])))
        .collect())
}

/// Writes points as f32; values are rounded to single precision.
pub fn write_bin(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut bytes = Vec::with_capacity(cloud.len() * RECORD);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Blank lines and lines starting with `#` are skipped.
pub fn read_text(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.into(),
            line: n + 1,
            message,
        };
        let values = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| parse_err(format!("{t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != 4 {
            return Err(parse_err(format!("expected 4 columns, found {}", values.len())));
        }
        points.push(Point::new(values[0], values[1], values[2], values[3]));
    }
    Ok(PointCloud::new(points))
}

/// Dispatches on the extension: `.bin` is binary, anything else is text.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => read_bin(path),
        _ => read_text(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_roundtrip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.bin");
        let cloud = PointCloud::new(vec![Point::new(1.5, -2.25, 0.125, 0.5), Point::new(3.0, 4.0, -1.0, 0.0)]);
        write_bin(&path, &cloud).unwrap();
        assert_eq!(read_bin(&path).unwrap(), cloud);

        fs::write(&path, [0u8; 20]).unwrap();
        assert!(matches!(read_bin(&path), Err(Error::Data { .. })));
    }

    #[test]
    fn text_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        fs::write(&path, "# header\n1 2 3 0.5\n\n4 5 x 1\n").unwrap();
        match read_text(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        fs::write(&path, "1 2 3 0.5\n4 5 6 1\n").unwrap();
        assert_eq!(read_cloud(&path).unwrap().len(), 2);
    }
}
