//! Classification maps as binary PPM images.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Palette entry for class `k` of `classes`: black for 0, otherwise the
/// fully saturated hue `360·(k−1)/L`, channels rounded half-up.
pub fn class_color(k: u16, classes: usize) -> [u8; 3] {
    if k == 0 {
        return [0, 0, 0];
    }
    let hue = 360.0 * (k - 1) as f64 / classes as f64;
    let h = hue / 60.0;
    let sector = h.floor();
    let f = h - sector;
    let (r, g, b) = match sector as u32 % 6 {
        0 => (1.0, f, 0.0),
        1 => (1.0 - f, 1.0, 0.0),
        2 => (0.0, 1.0, f),
        3 => (0.0, 1.0 - f, 1.0),
        4 => (f, 0.0, 1.0),
        _ => (1.0, 0.0, 1.0 - f),
    };
    let q = |c: f64| (255.0 * c + 0.5).floor() as u8;
    [q(r), q(g), q(b)]
}

/// Encodes a row-major label grid as P6 with maxval 255.
pub fn encode_class_map(
    labels: &[u16],
    height: usize,
    width: usize,
    classes: usize,
) -> Result<Vec<u8>> {
    if labels.len() != height * width {
        return Err(Error::ShapeMismatch(format!(
            "{height}×{width} map needs {} labels, got {}",
            height * width,
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&k| k as usize > classes) {
        return Err(Error::Validation(format!(
            "prediction {bad} outside 0..={classes}"
        )));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.reserve(3 * labels.len());
    for &k in labels {
        out.extend_from_slice(&class_color(k, classes));
    }
    Ok(out)
}

pub fn write_class_map(
    labels: &[u16],
    height: usize,
    width: usize,
    classes: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_class_map(labels, height, width, classes)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette() {
        assert_eq!(class_color(0, 4), [0, 0, 0]);
        assert_eq!(class_color(1, 4), [255, 0, 0]);
        assert_eq!(class_color(2, 4), [128, 255, 0]);
        assert_eq!(class_color(3, 4), [0, 255, 255]);
        assert_eq!(class_color(4, 4), [128, 0, 255]);
        assert_eq!(class_color(2, 3), [0, 255, 0]);
    }

    #[test]
    fn layout() {
        let bytes = encode_class_map(&[0; 6], 2, 3, 4).unwrap();
        assert!(bytes.starts_with(b"P6\n"));
        let header = b"P6\n3 2\n255\n".len();
        assert_eq!(bytes.len(), header + 3 * 6);
        assert!(bytes[header..].iter().all(|&b| b == 0));
        assert!(encode_class_map(&[5], 1, 1, 4).is_err());
        assert!(encode_class_map(&[1, 1], 1, 1, 4).is_err());
    }
}
