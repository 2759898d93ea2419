//! Spectral reduction, patch extraction, standardization and splitting.

mod patches;
mod pca;
mod split;

pub use patches::{extract_patches, PadMode, PatchSet, Standardizer};
pub use pca::{jacobi_eigen, pca_reduce, Projection, ReducedCube};
pub use split::{stratified_split, train_counts, SplitPlan};

use crate::error::{Error, Result};

/// Band-sequential `f32` raster: band `b`, row `r`, column `c` lives at
/// `b·P·Q + r·Q + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    values: Vec<f32>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::InvalidArgument(format!(
                "cube extents must be positive, got {height}×{width}×{bands}"
            )));
        }
        if values.len() != height * width * bands {
            return Err(Error::ShapeMismatch(format!(
                "{height}×{width}×{bands} cube needs {} values, got {}",
                height * width * bands,
                values.len()
            )));
        }
        Ok(HsiCube {
            height,
            width,
            bands,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.pixels();
        &self.values[b * n..(b + 1) * n]
    }

    pub fn get(&self, band: usize, row: usize, col: usize) -> f32 {
        self.values[band * self.pixels() + row * self.width + col]
    }
}

/// Per-pixel class ids, row-major. `0` is unlabeled, `1..=L` are classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    ids: Vec<u16>,
    class_names: Vec<String>,
}

impl LabelMap {
    pub fn new(
        height: usize,
        width: usize,
        ids: Vec<u16>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if ids.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}×{width} label map needs {} ids, got {}",
                height * width,
                ids.len()
            )));
        }
        if let Some((pos, &id)) = ids
            .iter()
            .enumerate()
            .find(|(_, &id)| id as usize > class_names.len())
        {
            return Err(Error::Validation(format!(
                "label {id} at pixel {pos} exceeds the {} declared classes",
                class_names.len()
            )));
        }
        Ok(LabelMap {
            height,
            width,
            ids,
            class_names,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn ids(&self) -> &[u16] {
        &self.ids
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.ids[row * self.width + col]
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn labeled(&self) -> usize {
        self.ids.iter().filter(|&&id| id != 0).count()
    }

    /// Pixel count of classes `1..=L`, indexed from zero.
    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.classes()];
        for &id in &self.ids {
            if id != 0 {
                sizes[id as usize - 1] += 1;
            }
        }
        sizes
    }
}
