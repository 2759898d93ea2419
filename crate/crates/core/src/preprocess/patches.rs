use serde::{Deserialize, Serialize};

use super::{HsiCube, LabelMap};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PadMode {
    /// Zero-pad the cube so every labeled pixel gets a window.
    ZeroPadBorder,
    /// Only centers whose whole window lies inside the cube.
    InteriorOnly,
}

impl std::str::FromStr for PadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "border" | "zero-pad-border" => Ok(PadMode::ZeroPadBorder),
            "interior" | "interior-only" => Ok(PadMode::InteriorOnly),
            other => Err(Error::InvalidArgument(format!(
                "unknown pad mode `{other}`"
            ))),
        }
    }
}

/// Per-band affine normalization `(v − mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// 1 for bands without variance, which are only centered.
    pub std: Vec<f64>,
}

/// Windows `S × S × T` around a list of centers, gathered on demand.
///
/// Patches overlap heavily, so only the (padded) cube and the centers are
/// stored; [`PatchSet::gather`] materializes a batch.
#[derive(Debug, Clone)]
pub struct PatchSet {
    padded: Vec<f32>,
    bands: usize,
    window: usize,
    padded_width: usize,
    padded_height: usize,
    mode: PadMode,
    centers: Vec<(usize, usize)>,
    labels: Vec<u16>,
    standardizer: Option<Standardizer>,
}

fn check_window(cube: &HsiCube, window: usize, mode: PadMode) -> Result<()> {
    if window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "window size must be odd, got {window}"
        )));
    }
    if mode == PadMode::InteriorOnly && window > cube.height().min(cube.width()) {
        return Err(Error::InvalidArgument(format!(
            "window {window} exceeds the {}×{} cube",
            cube.height(),
            cube.width()
        )));
    }
    Ok(())
}

/// One patch per labeled center. In [`PadMode::InteriorOnly`] centers closer
/// than `(S−1)/2` to an edge are skipped. Centers are in row-major order.
pub fn extract_patches(
    cube: &HsiCube,
    labels: &LabelMap,
    window: usize,
    mode: PadMode,
) -> Result<PatchSet> {
    if (labels.height(), labels.width()) != (cube.height(), cube.width()) {
        return Err(Error::ShapeMismatch(format!(
            "labels are {}×{}, cube is {}×{}",
            labels.height(),
            labels.width(),
            cube.height(),
            cube.width()
        )));
    }
    check_window(cube, window, mode)?;
    let half = window / 2;
    let (rows, cols) = match mode {
        PadMode::ZeroPadBorder => (0..cube.height(), 0..cube.width()),
        PadMode::InteriorOnly => (half..cube.height() - half, half..cube.width() - half),
    };
    let mut centers = Vec::new();
    let mut ids = Vec::new();
    for r in rows {
        for c in cols.clone() {
            let id = labels.get(r, c);
            if id != 0 {
                centers.push((r, c));
                ids.push(id);
            }
        }
    }
    Ok(PatchSet::build(cube, window, mode, centers, ids))
}

impl PatchSet {
    /// One zero-padded window per pixel (labeled or not), for dense maps.
    pub fn every_pixel(cube: &HsiCube, window: usize) -> Result<Self> {
        check_window(cube, window, PadMode::ZeroPadBorder)?;
        let centers: Vec<_> = (0..cube.height())
            .flat_map(|r| (0..cube.width()).map(move |c| (r, c)))
            .collect();
        let ids = vec![0; centers.len()];
        Ok(PatchSet::build(
            cube,
            window,
            PadMode::ZeroPadBorder,
            centers,
            ids,
        ))
    }

    fn build(
        cube: &HsiCube,
        window: usize,
        mode: PadMode,
        centers: Vec<(usize, usize)>,
        labels: Vec<u16>,
    ) -> Self {
        let half = window / 2;
        let (ph, pw) = (cube.height() + 2 * half, cube.width() + 2 * half);
        let mut padded = vec![0f32; cube.bands() * ph * pw];
        for b in 0..cube.bands() {
            for r in 0..cube.height() {
                let src = &cube.band(b)[r * cube.width()..(r + 1) * cube.width()];
                let start = (b * ph + r + half) * pw + half;
                padded[start..start + cube.width()].copy_from_slice(src);
            }
        }
        PatchSet {
            padded,
            bands: cube.bands(),
            window,
            padded_width: pw,
            padded_height: ph,
            mode,
            centers,
            labels,
            standardizer: None,
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn mode(&self) -> PadMode {
        self.mode
    }

    pub fn centers(&self) -> &[(usize, usize)] {
        &self.centers
    }

    /// Center labels, `1..=L`.
    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn standardizer(&self) -> Option<&Standardizer> {
        self.standardizer.as_ref()
    }

    pub fn with_standardizer(mut self, st: Standardizer) -> Result<Self> {
        if st.mean.len() != self.bands || st.std.len() != self.bands {
            return Err(Error::ShapeMismatch(format!(
                "standardizer has {} bands, patches have {}",
                st.mean.len(),
                self.bands
            )));
        }
        self.standardizer = Some(st);
        Ok(self)
    }

    fn raw_window(&self, i: usize, band: usize) -> impl Iterator<Item = f32> + '_ {
        let (r, c) = self.centers[i];
        let s = self.window;
        (0..s).flat_map(move |dr| {
            let start = (band * self.padded_height + r + dr) * self.padded_width + c;
            self.padded[start..start + s].iter().copied()
        })
    }

    /// Statistics over every voxel of the listed patches (padding included,
    /// since it is part of what the network sees).
    pub fn fit_standardizer(&self, indices: &[usize]) -> Result<Standardizer> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument(
                "standardization needs at least one patch".into(),
            ));
        }
        let count = (indices.len() * self.window * self.window) as f64;
        let mut mean = vec![0.0; self.bands];
        let mut std = vec![1.0; self.bands];
        for b in 0..self.bands {
            let m = indices
                .iter()
                .flat_map(|&i| self.raw_window(i, b))
                .map(|v| v as f64)
                .sum::<f64>()
                / count;
            let var = indices
                .iter()
                .flat_map(|&i| self.raw_window(i, b))
                .map(|v| (v as f64 - m).powi(2))
                .sum::<f64>()
                / count;
            mean[b] = m;
            if var > 0.0 {
                std[b] = var.sqrt();
            }
        }
        Ok(Standardizer { mean, std })
    }

    /// Batch `[k, 1, T, S, S]` for the listed patches, standardized when a
    /// standardizer is attached.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let s = self.window;
        let mut data = Vec::with_capacity(indices.len() * self.bands * s * s);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!(
                    "patch index {i} out of {}",
                    self.len()
                )));
            }
            for b in 0..self.bands {
                match &self.standardizer {
                    Some(st) => {
                        let (m, d) = (st.mean[b], st.std[b]);
                        data.extend(self.raw_window(i, b).map(|v| ((v as f64 - m) / d) as f32));
                    }
                    None => data.extend(self.raw_window(i, b)),
                }
            }
        }
        Tensor::from_vec(&[indices.len(), 1, self.bands, s, s], data)
    }
}
