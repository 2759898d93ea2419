//! HSC containers: a JSON manifest beside a raw band-sequential `f32` cube
//! and a raw `u16` label raster, both little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{HsiCube, LabelMap};

pub const HSC_MAGIC: &str = "HSC1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HscManifest {
    pub magic: String,
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub dtype: String,
    pub layout: String,
    pub classes: Vec<String>,
    pub nodata_label: u16,
}

/// File locations of one container. By convention they share a stem:
/// `<stem>.hsc.json`, `<stem>.cube.f32` and `<stem>.labels.u16`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HscPaths {
    pub manifest: PathBuf,
    pub cube: PathBuf,
    pub labels: PathBuf,
}

impl HscPaths {
    pub fn from_stem(stem: impl AsRef<Path>) -> Self {
        let stem = stem.as_ref().as_os_str().to_owned();
        let with = |suffix: &str| {
            let mut s = stem.clone();
            s.push(suffix);
            PathBuf::from(s)
        };
        HscPaths {
            manifest: with(".hsc.json"),
            cube: with(".cube.f32"),
            labels: with(".labels.u16"),
        }
    }

    /// Paths for a cube and label file; the manifest sits beside the cube
    /// (`x.cube.f32` → `x.hsc.json`, anything else gets `.hsc.json` appended).
    pub fn from_files(cube: impl Into<PathBuf>, labels: impl Into<PathBuf>) -> Self {
        let cube = cube.into();
        let name = cube.to_string_lossy();
        let manifest = match name.strip_suffix(".cube.f32") {
            Some(stem) => PathBuf::from(format!("{stem}.hsc.json")),
            None => PathBuf::from(format!("{name}.hsc.json")),
        };
        HscPaths {
            manifest,
            cube,
            labels: labels.into(),
        }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn check_len(path: &Path, bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            path: path.into(),
            expected: expected as u64,
            actual: bytes.len() as u64,
        });
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<HscManifest> {
    let text = read_bytes(path)?;
    let manifest: HscManifest = serde_json::from_slice(&text).map_err(|e| Error::json(path, e))?;
    if manifest.magic != HSC_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: HSC_MAGIC.into(),
            found: manifest.magic,
        });
    }
    let unsupported = |field, value: &str| Error::Unsupported {
        path: path.into(),
        field,
        value: value.into(),
    };
    if manifest.dtype != "f32le" {
        return Err(unsupported("dtype", &manifest.dtype));
    }
    if manifest.layout != "BSQ" {
        return Err(unsupported("layout", &manifest.layout));
    }
    if manifest.nodata_label != 0 {
        return Err(unsupported(
            "nodata_label",
            &manifest.nodata_label.to_string(),
        ));
    }
    Ok(manifest)
}

fn read_cube_with(m: &HscManifest, cube: &Path) -> Result<HsiCube> {
    let bytes = read_bytes(cube)?;
    check_len(cube, &bytes, 4 * m.width * m.height * m.bands)?;
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    HsiCube::new(m.height, m.width, m.bands, values)
}

/// The cube alone, for inputs without a label raster.
pub fn read_hsc_cube(manifest: &Path, cube: &Path) -> Result<HsiCube> {
    read_cube_with(&read_manifest(manifest)?, cube)
}

pub fn read_hsc(paths: &HscPaths) -> Result<(HsiCube, LabelMap)> {
    let m = read_manifest(&paths.manifest)?;
    let cube = read_cube_with(&m, &paths.cube)?;
    let label_bytes = read_bytes(&paths.labels)?;
    check_len(&paths.labels, &label_bytes, 2 * m.width * m.height)?;
    let ids = label_bytes
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes(b.try_into().expect("2 bytes")))
        .collect();
    let labels = LabelMap::new(m.height, m.width, ids, m.classes).map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", paths.labels.display())),
        other => other,
    })?;
    Ok((cube, labels))
}

pub fn write_hsc(cube: &HsiCube, labels: &LabelMap, paths: &HscPaths) -> Result<()> {
    if (cube.height(), cube.width()) != (labels.height(), labels.width()) {
        return Err(Error::ShapeMismatch(format!(
            "cube is {}×{}, labels are {}×{}",
            cube.height(),
            cube.width(),
            labels.height(),
            labels.width()
        )));
    }
    let manifest = HscManifest {
        magic: HSC_MAGIC.into(),
        width: cube.width(),
        height: cube.height(),
        bands: cube.bands(),
        dtype: "f32le".into(),
        layout: "BSQ".into(),
        classes: labels.class_names().to_vec(),
        nodata_label: 0,
    };
    let text =
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&paths.manifest, e))?;
    fs::write(&paths.manifest, text + "\n").map_err(|e| Error::io(&paths.manifest, e))?;
    let cube_bytes: Vec<u8> = cube.values().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&paths.cube, cube_bytes).map_err(|e| Error::io(&paths.cube, e))?;
    let label_bytes: Vec<u8> = labels.ids().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&paths.labels, label_bytes).map_err(|e| Error::io(&paths.labels, e))
}
