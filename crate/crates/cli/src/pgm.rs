//! 8-bit binary PGM output.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Result;

/// Maps `[lo, hi]` linearly onto 0..=255, clamping outside values.
pub fn window(values: &[f64], lo: f64, hi: f64) -> Vec<u8> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    values
        .iter()
        .map(|v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    anyhow::ensure!(pixels.len() == width * height, "{} pixels for a {width}x{height} image", pixels.len());
    let mut out = Vec::with_capacity(pixels.len() + 20);
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.extend_from_slice(pixels);
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windowing_clamps() {
        assert_eq!(window(&[-1.0, 0.0, 0.5, 1.0, 2.0], 0.0, 1.0), vec![0, 0, 128, 255, 255]);
        assert_eq!(window(&[3.0], 3.0, 3.0), vec![0]);
    }

    #[test]
    fn header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        write_pgm(&p, 3, 2, &[0, 1, 2, 3, 4, 5]).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 1, 2, 3, 4, 5]);
        assert!(write_pgm(&p, 3, 3, &[0; 6]).is_err());
    }
}
