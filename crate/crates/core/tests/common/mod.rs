#![allow(dead_code)]

use std::time::{Duration, Instant};

use mixedsn::io::{synth_scene, SyntheticSceneSpec};
use mixedsn::network::{MixedSnConfig, NetworkSpec, ParamStore};
use mixedsn::pipeline::{prepare, PrepareOptions, Prepared};
use mixedsn::preprocess::PadMode;
use mixedsn::rng::Rng;
use mixedsn::trainer::{evaluate, train, AdamConfig, AdamState, History, TrainConfig};

pub const DESK_SEED: u64 = 1;

/// 32×32×8 scene, four classes, one blob per class.
pub fn desk_scene(seed: u64, train_fraction: f64) -> Prepared {
    let spec = SyntheticSceneSpec {
        blobs_per_class: 1,
        ..SyntheticSceneSpec::new(32, 32, 8, 4)
    };
    let (cube, labels) = synth_scene(&spec, seed).unwrap();
    let opts = PrepareOptions {
        bands: 8,
        window: 9,
        pad_mode: PadMode::ZeroPadBorder,
        train_fraction,
        seed,
    };
    prepare(&cube, &labels, &opts).unwrap()
}

pub fn tiny_net(dropout: f64) -> NetworkSpec {
    let mut config = MixedSnConfig::tiny(4, 8, 9);
    config.dropout = dropout;
    NetworkSpec::mixedsn(config).unwrap()
}

pub struct DeskRun {
    pub oa: f64,
    pub history: History,
    pub elapsed: Duration,
}

/// Tiny profile, 30 epochs, batch 32, half the labeled pixels for training.
pub fn desk_run(seed: u64) -> DeskRun {
    let start = Instant::now();
    let data = desk_scene(seed, 0.5);
    let net = tiny_net(MixedSnConfig::tiny(4, 8, 9).dropout);
    let mut params = ParamStore::init(&net, &mut Rng::new(seed));
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 32,
        seed,
        ..TrainConfig::default()
    };
    let history = train(
        &net,
        &mut params,
        &data.patches,
        &data.split.train_indices(),
        None,
        &cfg,
    )
    .unwrap();
    let (_, cm) = evaluate(&net, &params, &data.patches, &data.split.test_indices()).unwrap();
    DeskRun {
        oa: cm.trace() as f64 / cm.total() as f64,
        history,
        elapsed: start.elapsed(),
    }
}

/// Repeated steps on one fixed batch of 8 patches without dropout; returns
/// the loss after every step.
pub fn overfit_losses(steps: usize, lr: f64) -> Vec<f64> {
    let data = desk_scene(DESK_SEED, 0.5);
    let net = tiny_net(0.0);
    let mut params = ParamStore::init(&net, &mut Rng::new(DESK_SEED));
    let mut adam = AdamState::new(
        &params,
        AdamConfig {
            lr,
            ..AdamConfig::default()
        },
    );
    let idx: Vec<usize> = data
        .split
        .train_indices()
        .into_iter()
        .step_by(7)
        .take(8)
        .collect();
    let batch = data.patches.gather(&idx).unwrap();
    let labels: Vec<usize> = idx
        .iter()
        .map(|&i| data.patches.labels()[i] as usize - 1)
        .collect();
    let mut rng = Rng::new(0);
    (0..steps)
        .map(|_| {
            mixedsn::trainer::train_step(&net, &mut params, &mut adam, &batch, &labels, &mut rng)
                .unwrap()
                .loss
        })
        .collect()
}
