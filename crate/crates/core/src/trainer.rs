//! Adam optimization and the minibatch training loop.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mode};
use crate::error::{Error, Result};
use crate::metrics::{confusion, ConfusionMatrix};
use crate::network::{forward_graph, predict, NetworkSpec, ParamStore};
use crate::preprocess::PatchSet;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

const EPOCH_STREAM: u64 = 0x4550_4f43;
const DROPOUT_STREAM: u64 = 0x4452_4f50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to the gradient, `g ← g + λθ`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
        }
    }
}

/// First and second moments for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F: Scalar = f32> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
    pub t: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &ParamStore<F>, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|p| Tensor::zeros(p.shape()))
                .collect()
        };
        AdamState {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// One update. Arithmetic runs in `f64` per element, moments are stored
    /// in `F`.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &[Tensor<F>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "gradient of `{name}` is {:?}, parameter is {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of `{name}` at step {}",
                    self.t + 1
                )));
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, theta) in p.data_mut().iter_mut().enumerate() {
                let th = theta.as_f64();
                let g = grads[i].data()[j].as_f64() + weight_decay * th;
                let mj = beta1 * m[j].as_f64() + (1.0 - beta1) * g;
                let vj = beta2 * v[j].as_f64() + (1.0 - beta2) * g * g;
                m[j] = F::from_f64(mj);
                v[j] = F::from_f64(vj);
                let update = lr * (mj / c1) / ((vj / c2).sqrt() + eps);
                *theta = F::from_f64(th - update);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    /// `epoch,train_loss,train_acc[,test_acc]`, six decimals.
    pub fn to_csv(&self) -> String {
        let with_test = self.epochs.iter().any(|r| r.test_acc.is_some());
        let mut out = String::from("epoch,train_loss,train_acc");
        if with_test {
            out.push_str(",test_acc");
        }
        out.push('\n');
        for r in &self.epochs {
            let _ = write!(out, "{},{:.6},{:.6}", r.epoch, r.train_loss, r.train_acc);
            if with_test {
                let _ = write!(out, ",{:.6}", r.test_acc.unwrap_or(f64::NAN));
            }
            out.push('\n');
        }
        out
    }
}

/// Zero-based class targets for the listed patches.
fn targets(patches: &PatchSet, indices: &[usize]) -> Vec<usize> {
    indices
        .iter()
        .map(|&i| patches.labels()[i] as usize - 1)
        .collect()
}

/// Epoch order of the training indices: a pure function of `(seed, epoch)`.
pub fn epoch_order(indices: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut order = indices.to_vec();
    Rng::new(seed)
        .derive(EPOCH_STREAM, epoch as u64)
        .shuffle(&mut order);
    order
}

/// Outcome of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub loss: f64,
    pub correct: usize,
}

/// Forward, backward and Adam update on one batch. `dropout_rng` drives the
/// training-mode dropout masks.
pub fn train_step<F: Scalar>(
    net: &NetworkSpec,
    params: &mut ParamStore<F>,
    adam: &mut AdamState<F>,
    batch: &Tensor<F>,
    labels: &[usize],
    dropout_rng: &mut Rng,
) -> Result<StepResult> {
    let mut g = Graph::new();
    let ids: Vec<_> = params
        .tensors()
        .iter()
        .map(|t| g.param(t.clone()))
        .collect();
    let x = g.constant(batch.clone());
    let logits = forward_graph(net, &mut g, &ids, x, Mode::Train, dropout_rng)?;
    let (loss, probs) = g.softmax_xent_labels(logits, labels)?;
    let value = g.value(loss).data()[0].as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss {value}")));
    }
    let correct = probs
        .data()
        .chunks(net.classes())
        .zip(labels)
        .filter(|(row, &y)| crate::network::argmax_row(row) == y)
        .count();
    let mut grads = g.backward(loss)?;
    let grads: Vec<Tensor<F>> = ids
        .iter()
        .map(|&id| grads.take(id).expect("parameter gradient"))
        .collect();
    adam.step(params, &grads)?;
    Ok(StepResult {
        loss: value,
        correct,
    })
}

/// Minibatch training. Each epoch visits the training indices in the order
/// given by [`epoch_order`]; the loss is the mean of the minibatch losses.
/// When `test` is given its accuracy is recorded after every epoch.
pub fn train(
    net: &NetworkSpec,
    params: &mut ParamStore<f32>,
    patches: &PatchSet,
    train_idx: &[usize],
    test: Option<&[usize]>,
    config: &TrainConfig,
) -> Result<History> {
    if train_idx.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "epochs and batch size must be at least 1".into(),
        ));
    }
    params.check_against(net)?;
    let mut adam = AdamState::new(params, config.adam);
    let dropout_root = Rng::new(config.seed).split(DROPOUT_STREAM);
    let mut history = History::default();
    let mut step = 0u64;
    for epoch in 1..=config.epochs {
        let order = epoch_order(train_idx, config.seed, epoch);
        let (mut loss_sum, mut batches, mut correct) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch = patches.gather(chunk)?;
            let labels = targets(patches, chunk);
            let mut rng = dropout_root.derive(DROPOUT_STREAM, step);
            let r =
                train_step(net, params, &mut adam, &batch, &labels, &mut rng).map_err(
                    |e| match e {
                        Error::NonFinite(msg) => {
                            Error::NonFinite(format!("epoch {epoch}, batch {}: {msg}", batches + 1))
                        }
                        other => other,
                    },
                )?;
            loss_sum += r.loss;
            correct += r.correct;
            batches += 1;
            step += 1;
        }
        let test_acc = match test {
            Some(idx) if !idx.is_empty() => {
                let (_, cm) = evaluate(net, params, patches, idx)?;
                Some(cm.trace() as f64 / cm.total() as f64)
            }
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            train_acc: correct as f64 / train_idx.len() as f64,
            test_acc,
        };
        log::info!(
            "epoch {epoch}/{}: loss {:.6} acc {:.4}{}",
            config.epochs,
            record.train_loss,
            record.train_acc,
            test_acc
                .map(|a| format!(" test {a:.4}"))
                .unwrap_or_default()
        );
        history.epochs.push(record);
    }
    Ok(history)
}

/// Eval-mode predictions (one-based labels) for the listed patches and their
/// confusion matrix against the center labels.
pub fn evaluate<F: Scalar>(
    net: &NetworkSpec,
    params: &ParamStore<F>,
    patches: &PatchSet,
    indices: &[usize],
) -> Result<(Vec<u16>, ConfusionMatrix)> {
    let predictions = predict_labels(net, params, patches, indices)?;
    let truth: Vec<u16> = indices.iter().map(|&i| patches.labels()[i]).collect();
    let cm = confusion(&truth, &predictions, net.classes())?;
    Ok((predictions, cm))
}

/// One-based predicted labels, evaluated in chunks of 256 patches.
pub fn predict_labels<F: Scalar>(
    net: &NetworkSpec,
    params: &ParamStore<F>,
    patches: &PatchSet,
    indices: &[usize],
) -> Result<Vec<u16>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(256) {
        let batch = patches.gather(chunk)?.convert::<F>();
        out.extend(
            predict(net, params, &batch, chunk.len())?
                .into_iter()
                .map(|k| k as u16 + 1),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::MixedSnConfig;
    use crate::preprocess::{extract_patches, HsiCube, LabelMap, PadMode};
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn scalar_adam(thetas: &mut [f64], grads: &[f64], cfg: AdamConfig) {
        let (mut m, mut v) = (0.0, 0.0);
        for (t, &g0) in grads.iter().enumerate() {
            let t = t as i32 + 1;
            let g = g0 + cfg.weight_decay * thetas[0];
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t));
            let vh = v / (1.0 - cfg.beta2.powi(t));
            thetas[0] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }

    fn one(value: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_f64(&[1], &[value]).unwrap())
            .unwrap();
        s
    }

    #[test]
    fn single_step_closed_form() {
        let mut p = one(0.0);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(&p, cfg);
        st.step(&mut p, &[Tensor::from_f64(&[1], &[1.0]).unwrap()])
            .unwrap();
        assert!((p.tensors()[0].data()[0] - (-1e-3 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_and_decay() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut p = one(0.5);
        let mut st = AdamState::new(&p, cfg);
        st.step(&mut p, &[Tensor::zeros(&[1])]).unwrap();
        assert_eq!(p.tensors()[0].data()[0], 0.5);

        let mut p = one(0.5);
        let mut st = AdamState::new(&p, AdamConfig::default());
        st.step(&mut p, &[Tensor::zeros(&[1])]).unwrap();
        assert!(p.tensors()[0].data()[0] < 0.5);
    }

    #[test]
    fn bad_gradients_are_rejected() {
        let mut p = one(0.5);
        let mut st = AdamState::new(&p, AdamConfig::default());
        assert!(matches!(
            st.step(&mut p, &[Tensor::from_f64(&[1], &[f64::NAN]).unwrap()]),
            Err(Error::NonFinite(_))
        ));
        assert!(st.step(&mut p, &[Tensor::zeros(&[2])]).is_err());
        assert_eq!(st.t, 0);
    }

    proptest! {
        #[test]
        fn matches_scalar_reference(theta0 in -2.0f64..2.0, grads in proptest::collection::vec(-3.0f64..3.0, 1..40)) {
            let cfg = AdamConfig::default();
            let mut p = one(theta0);
            let mut st = AdamState::new(&p, cfg);
            for &g in &grads {
                st.step(&mut p, &[Tensor::from_f64(&[1], &[g]).unwrap()]).unwrap();
            }
            let mut reference = [theta0];
            scalar_adam(&mut reference, &grads, cfg);
            prop_assert!((p.tensors()[0].data()[0] - reference[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn epoch_order_is_reproducible() {
        let idx: Vec<usize> = (0..50).collect();
        assert_eq!(epoch_order(&idx, 3, 2), epoch_order(&idx, 3, 2));
        assert_ne!(epoch_order(&idx, 3, 2), epoch_order(&idx, 3, 3));
        let mut sorted = epoch_order(&idx, 3, 2);
        sorted.sort_unstable();
        assert_eq!(sorted, idx);
    }

    #[test]
    fn history_csv() {
        let h = History {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                train_acc: 1.0 / 3.0,
                test_acc: None,
            }],
        };
        assert_eq!(
            h.to_csv(),
            "epoch,train_loss,train_acc\n1,0.500000,0.333333\n"
        );
    }

    fn toy() -> (NetworkSpec, PatchSet) {
        let mut rng = Rng::new(2);
        let (h, w, b) = (6, 6, 8);
        let ids: Vec<u16> = (0..h * w).map(|i| (i % 3) as u16 + 1).collect();
        let mut vals = vec![0f32; h * w * b];
        for band in 0..b {
            for p in 0..h * w {
                vals[band * h * w + p] =
                    (ids[p] as f64 * (band as f64 * 0.7).cos() + 0.1 * rng.normal()) as f32;
            }
        }
        let cube = HsiCube::new(h, w, b, vals).unwrap();
        let labels = LabelMap::new(h, w, ids, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let net = NetworkSpec::mixedsn(MixedSnConfig::tiny(3, 8, 9)).unwrap();
        (
            net,
            extract_patches(&cube, &labels, 9, PadMode::ZeroPadBorder).unwrap(),
        )
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (net, patches) = toy();
        let init = ParamStore::<f32>::init(&net, &mut Rng::new(1));
        let mut params = init.clone();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 8,
            seed: 1,
            adam: AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
        };
        let idx: Vec<usize> = (0..16).collect();
        train(&net, &mut params, &patches, &idx, None, &cfg).unwrap();
        for (a, b) in init.tensors().iter().zip(params.tensors()) {
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn evaluate_is_side_effect_free() {
        let (net, patches) = toy();
        let params = ParamStore::<f32>::init(&net, &mut Rng::new(1));
        let before = params.clone();
        let idx: Vec<usize> = (0..10).collect();
        let (pred, cm) = evaluate(&net, &params, &patches, &idx).unwrap();
        assert_eq!(pred.len(), 10);
        assert_eq!(cm.total(), 10);
        assert_eq!(params, before);
    }

    #[test]
    fn zero_network_predicts_the_first_class() {
        let (net, patches) = toy();
        let params = ParamStore::<f32>::zeros(&net);
        let idx: Vec<usize> = (0..5).collect();
        let (pred, _) = evaluate(&net, &params, &patches, &idx).unwrap();
        assert!(pred.iter().all(|&p| p == 1));
    }
}
