//! Synthetic scenes: Voronoi blobs of classes with smooth spectra.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{HsiCube, LabelMap};
use crate::rng::Rng;

const SPECTRA_STREAM: u64 = 1;
const LAYOUT_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: usize,
    /// Blobs (Voronoi cells) per class.
    pub blobs_per_class: usize,
    /// Unlabeled background cells.
    pub background_blobs: usize,
    pub noise_std: f64,
    /// Weight of the neighbouring spectrum in pixels on a blob border.
    pub mixing: f64,
    /// Smallest allowed L2 distance between two class spectra.
    pub min_separation: f64,
}

impl SyntheticSceneSpec {
    pub fn new(height: usize, width: usize, bands: usize, classes: usize) -> Self {
        SyntheticSceneSpec {
            height,
            width,
            bands,
            classes,
            blobs_per_class: 2,
            background_blobs: classes.div_ceil(2),
            noise_std: 0.05,
            mixing: 0.2,
            min_separation: 1.0,
        }
    }

    fn seeds(&self) -> usize {
        self.classes * self.blobs_per_class + self.background_blobs
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0
            || self.width == 0
            || self.bands == 0
            || self.classes == 0
            || self.blobs_per_class == 0
        {
            return Err(Error::InvalidArgument(
                "scene extents, classes and blobs must be positive".into(),
            ));
        }
        if self.classes > u16::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "{} classes do not fit u16 labels",
                self.classes
            )));
        }
        // every blob needs room for a few pixels around its seed
        if self.seeds() * 8 > self.height * self.width {
            return Err(Error::InvalidArgument(format!(
                "infeasible blob layout: {} blobs in a {}×{} scene",
                self.seeds(),
                self.height,
                self.width
            )));
        }
        if !(0.0..0.5).contains(&self.mixing) || self.noise_std < 0.0 {
            return Err(Error::InvalidArgument(
                "mixing must lie in [0, 0.5) and noise must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Sum of three random cosines over the band axis, offset to stay positive.
fn smooth_curve(bands: usize, rng: &mut Rng) -> Vec<f64> {
    let base = 1.0 + 0.5 * rng.uniform();
    let terms: Vec<(f64, f64)> = (1..=3)
        .map(|_| (0.6 * rng.normal(), std::f64::consts::TAU * rng.uniform()))
        .collect();
    let span = (bands.max(2) - 1) as f64;
    (0..bands)
        .map(|b| {
            let x = b as f64 / span;
            base + terms
                .iter()
                .enumerate()
                .map(|(j, &(a, phase))| {
                    a * (std::f64::consts::PI * (j + 1) as f64 * x + phase).cos()
                })
                .sum::<f64>()
        })
        .collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Class spectra (index 0 is the background) whose class members are
/// pairwise at least `min_separation` apart.
fn spectra(spec: &SyntheticSceneSpec, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    let mut curves = vec![smooth_curve(spec.bands, rng)];
    let mut attempts = 0;
    while curves.len() <= spec.classes {
        attempts += 1;
        if attempts > 1000 {
            return Err(Error::InvalidArgument(format!(
                "cannot place {} spectra {} apart in {} bands",
                spec.classes, spec.min_separation, spec.bands
            )));
        }
        let c = smooth_curve(spec.bands, rng);
        if curves[1..]
            .iter()
            .all(|o| distance(o, &c) >= spec.min_separation)
        {
            curves.push(c);
        }
    }
    Ok(curves)
}

/// Per-pixel (nearest seed, second-nearest seed of another label, border flag).
fn layout(spec: &SyntheticSceneSpec, rng: &mut Rng) -> (Vec<u16>, Vec<Option<u16>>) {
    let (h, w) = (spec.height, spec.width);
    let mut cells: Vec<usize> = (0..h * w).collect();
    rng.shuffle(&mut cells);
    let seeds: Vec<((f64, f64), u16)> = cells[..spec.seeds()]
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let label = if i < spec.classes * spec.blobs_per_class {
                (i % spec.classes) as u16 + 1
            } else {
                0
            };
            (((p / w) as f64, (p % w) as f64), label)
        })
        .collect();
    let mut labels = vec![0u16; h * w];
    let mut border = vec![None; h * w];
    for r in 0..h {
        for c in 0..w {
            let d = |s: &((f64, f64), u16)| {
                ((s.0 .0 - r as f64).powi(2) + (s.0 .1 - c as f64).powi(2)).sqrt()
            };
            let (mut best, mut best_d) = (0, f64::INFINITY);
            for (i, s) in seeds.iter().enumerate() {
                let di = d(s);
                if di < best_d {
                    best = i;
                    best_d = di;
                }
            }
            let label = seeds[best].1;
            let rival = seeds
                .iter()
                .filter(|s| s.1 != label)
                .map(|s| (d(s), s.1))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            labels[r * w + c] = label;
            if let Some((dr, other)) = rival {
                if dr - best_d < 1.0 {
                    border[r * w + c] = Some(other);
                }
            }
        }
    }
    (labels, border)
}

/// Deterministic scene for `(spec, seed)`. At least half the pixels are
/// labeled; border pixels mix in `mixing` of the neighbouring spectrum but
/// keep their own label.
pub fn synth_scene(spec: &SyntheticSceneSpec, seed: u64) -> Result<(HsiCube, LabelMap)> {
    spec.validate()?;
    let root = Rng::new(seed);
    let curves = spectra(spec, &mut root.split(SPECTRA_STREAM))?;
    let mut layout_rng = root.split(LAYOUT_STREAM);
    let (labels, border) = (0..64)
        .map(|_| layout(spec, &mut layout_rng))
        .find(|(labels, _)| {
            let mut present = vec![false; spec.classes + 1];
            labels.iter().for_each(|&l| present[l as usize] = true);
            2 * labels.iter().filter(|&&l| l != 0).count() >= labels.len()
                && present[1..].iter().all(|&p| p)
        })
        .ok_or_else(|| {
            Error::InvalidArgument("infeasible blob layout: could not label half the scene".into())
        })?;

    let n = spec.height * spec.width;
    let mut noise = root.split(NOISE_STREAM);
    let mut values = vec![0f32; n * spec.bands];
    for p in 0..n {
        let own = &curves[labels[p] as usize];
        for b in 0..spec.bands {
            let mut v = own[b];
            if let Some(other) = border[p] {
                v = (1.0 - spec.mixing) * v + spec.mixing * curves[other as usize][b];
            }
            if spec.noise_std > 0.0 {
                v += spec.noise_std * noise.normal();
            }
            values[b * n + p] = v as f32;
        }
    }
    let names = (1..=spec.classes).map(|k| format!("class{k}")).collect();
    Ok((
        HsiCube::new(spec.height, spec.width, spec.bands, values)?,
        LabelMap::new(spec.height, spec.width, labels, names)?,
    ))
}
