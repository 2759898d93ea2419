//! The preprocessing chain shared by the command line and the tests:
//! PCA, patch extraction, stratified split, then standardization fitted on
//! the training patches.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::{MixedSnConfig, NetworkSpec, ParamStore, Profile, Widths};
use crate::preprocess::{
    extract_patches, pca_reduce, stratified_split, HsiCube, LabelMap, PadMode, PatchSet,
    Projection, SplitPlan, Standardizer,
};
use crate::rng::Rng;
use crate::trainer::{train, AdamConfig, History, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrepareOptions {
    pub bands: usize,
    pub window: usize,
    pub pad_mode: PadMode,
    pub train_fraction: f64,
    pub seed: u64,
}

/// Everything needed to re-apply preprocessing to new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessState {
    pub projection: Projection,
    pub standardizer: Standardizer,
    pub window: usize,
    pub pad_mode: PadMode,
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub state: PreprocessState,
    pub patches: PatchSet,
    pub split: SplitPlan,
}

pub fn prepare(cube: &HsiCube, labels: &LabelMap, opts: &PrepareOptions) -> Result<Prepared> {
    let reduced = pca_reduce(cube, opts.bands)?;
    let patches = extract_patches(&reduced.cube, labels, opts.window, opts.pad_mode)?;
    if patches.is_empty() {
        return Err(Error::Validation("no labeled patch centers".into()));
    }
    let split = stratified_split(
        patches.labels(),
        labels.classes(),
        opts.train_fraction,
        opts.seed,
    )?;
    let standardizer = patches.fit_standardizer(&split.train_indices())?;
    let patches = patches.with_standardizer(standardizer.clone())?;
    Ok(Prepared {
        state: PreprocessState {
            projection: reduced.projection,
            standardizer,
            window: opts.window,
            pad_mode: opts.pad_mode,
        },
        patches,
        split,
    })
}

impl PreprocessState {
    /// Labeled patches of another cube under the stored reduction.
    pub fn labeled_patches(&self, cube: &HsiCube, labels: &LabelMap) -> Result<PatchSet> {
        let reduced = self.projection.apply(cube)?;
        extract_patches(&reduced, labels, self.window, self.pad_mode)?
            .with_standardizer(self.standardizer.clone())
    }

    /// A zero-padded patch for every pixel, for dense maps.
    pub fn dense_patches(&self, cube: &HsiCube) -> Result<PatchSet> {
        let reduced = self.projection.apply(cube)?;
        PatchSet::every_pixel(&reduced, self.window)?.with_standardizer(self.standardizer.clone())
    }
}

/// Every option that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub profile: Profile,
    pub bands: usize,
    pub window: usize,
    pub widths: Widths,
    pub cardinality: usize,
    pub dropout: f64,
    pub pad_mode: PadMode,
    pub train_fraction: f64,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub deterministic: bool,
}

impl RunOptions {
    /// Profile presets with the default training schedule. `Custom` falls
    /// back to the IP band count.
    pub fn for_profile(profile: Profile) -> Self {
        let base = MixedSnConfig::for_profile(profile);
        let adam = AdamConfig::default();
        let train = TrainConfig::default();
        RunOptions {
            profile,
            bands: profile.default_bands().unwrap_or(30),
            window: base.window,
            widths: base.widths,
            cardinality: base.cardinality,
            dropout: base.dropout,
            pad_mode: PadMode::ZeroPadBorder,
            train_fraction: 0.3,
            seed: 0,
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr: adam.lr,
            weight_decay: adam.weight_decay,
            deterministic: false,
        }
    }

    pub fn prepare_options(&self) -> PrepareOptions {
        PrepareOptions {
            bands: self.bands,
            window: self.window,
            pad_mode: self.pad_mode,
            train_fraction: self.train_fraction,
            seed: self.seed,
        }
    }

    pub fn network_config(&self, classes: usize) -> MixedSnConfig {
        MixedSnConfig {
            profile: self.profile,
            classes,
            bands: self.bands,
            window: self.window,
            cardinality: self.cardinality,
            widths: self.widths,
            dropout: self.dropout,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            adam: AdamConfig {
                lr: self.lr,
                weight_decay: self.weight_decay,
                ..AdamConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

impl InputDigest {
    pub fn of_file(role: &str, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(InputDigest {
            role: role.into(),
            path: path.into(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }

    /// Errors when the file no longer matches the recorded digest.
    pub fn verify(&self) -> Result<()> {
        let now = InputDigest::of_file(&self.role, &self.path)?;
        if now.sha256 != self.sha256 {
            return Err(Error::Validation(format!(
                "{} changed since the run was recorded (sha256 {} != {})",
                self.path.display(),
                now.sha256,
                self.sha256
            )));
        }
        Ok(())
    }
}

/// Reproducibility record written beside every training output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub classes: usize,
    pub options: RunOptions,
    pub inputs: Vec<InputDigest>,
}

impl RunManifest {
    pub fn new(options: RunOptions, classes: usize, inputs: Vec<InputDigest>) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            classes,
            options,
            inputs,
        }
    }

    pub fn input(&self, role: &str) -> Option<&InputDigest> {
        self.inputs.iter().find(|d| d.role == role)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

impl PreprocessState {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }
}

const INIT_STREAM: u64 = 0x494e_4954;

/// A trained network together with the data preparation that fed it.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub net: NetworkSpec,
    pub params: ParamStore<f32>,
    pub prepared: Prepared,
    pub history: History,
}

/// Parameters drawn for a run: Glorot-normal on a stream of the run seed.
pub fn init_params(net: &NetworkSpec, seed: u64) -> ParamStore<f32> {
    ParamStore::init(net, &mut Rng::new(seed).split(INIT_STREAM))
}

/// PCA, patches, split, standardization and training. With `track_test`
/// the test accuracy is recorded after every epoch.
pub fn train_run(
    cube: &HsiCube,
    labels: &LabelMap,
    opts: &RunOptions,
    track_test: bool,
) -> Result<TrainedRun> {
    if let Some(preset) = opts.profile.default_classes() {
        if preset != labels.classes() {
            log::warn!(
                "profile {:?} expects {preset} classes, the label map declares {}",
                opts.profile,
                labels.classes()
            );
        }
    }
    crate::kernels::set_deterministic(opts.deterministic);
    let net = NetworkSpec::mixedsn(opts.network_config(labels.classes()))?;
    let prepared = prepare(cube, labels, &opts.prepare_options())?;
    let mut params = init_params(&net, opts.seed);
    let test = prepared.split.test_indices();
    let history = train(
        &net,
        &mut params,
        &prepared.patches,
        &prepared.split.train_indices(),
        track_test.then_some(test.as_slice()),
        &opts.train_config(),
    )?;
    Ok(TrainedRun {
        net,
        params,
        prepared,
        history,
    })
}
