//! Central-difference gradient checking.

use rayon::prelude::*;
use serde::Serialize;

use super::{Conv2dSpec, Conv3dSpec, Graph, Mode, NodeId, PoolSpec, Window};
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is zero are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub coordinates: usize,
    pub max_abs_error: f64,
    /// `max |analytic − numeric| / max(|analytic|, |numeric|, REL_ERROR_FLOOR)`.
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares analytic gradients of a scalar-valued graph against central
/// differences `(f(x+h) − f(x−h)) / 2h` for every coordinate of every input.
///
/// `build` receives a fresh graph and one leaf per entry of `inputs` and must
/// return a scalar node. It is called `1 + 2·N` times, so it has to be a pure
/// function of the leaf values (seed any randomness inside it).
pub fn grad_check<B>(
    name: &str,
    build: B,
    inputs: &[Tensor<f64>],
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    B: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId> + Sync,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<_> = values.iter().map(|v| g.constant(v.clone())).collect();
        let out = build(&mut g, &ids)?;
        Ok(g.value(out).data()[0])
    };

    let mut g = Graph::new();
    let ids: Vec<_> = inputs.iter().map(|v| g.param(v.clone())).collect();
    let out = build(&mut g, &ids)?;
    let grads = g.backward(out)?;

    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(slot, t)| (0..t.len()).map(move |i| (slot, i)))
        .collect();
    // each coordinate is independent, so the two extra forward passes run in parallel
    let errors: Vec<Result<(f64, f64)>> = coords
        .par_iter()
        .map(|&(slot, i)| {
            let mut work = inputs.to_vec();
            let orig = inputs[slot].data()[i];
            work[slot].data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work[slot].data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grads.get(ids[slot]).expect("leaf gradient").data()[i];
            let abs = (a - numeric).abs();
            Ok((abs, abs / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)))
        })
        .collect();
    let mut max_abs: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    for e in errors {
        let (abs, rel) = e?;
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(rel);
    }
    let coordinates = coords.len();
    Ok(GradCheckReport {
        name: name.to_string(),
        coordinates,
        max_abs_error: max_abs,
        max_rel_error: max_rel,
        tolerance,
        passed: max_rel < tolerance,
    })
}

pub(crate) fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.normal()).collect()).expect("shape")
}

/// Normal draws pushed at least `gap` away from zero.
fn away_from_zero(shape: &[usize], gap: f64, rng: &mut Rng) -> Tensor<f64> {
    random_tensor(shape, rng).map(|v| {
        if v.abs() < gap {
            v + gap.copysign(v)
        } else {
            v
        }
    })
}

/// Distinct values spaced `step` apart in random order, so no pooling window
/// has a near-tie.
fn distinct_values(shape: &[usize], step: f64, rng: &mut Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * step).collect();
    rng.shuffle(&mut vals);
    Tensor::from_vec(shape, vals).expect("shape")
}

pub const OP_NAMES: &[&str] = &[
    "conv3d",
    "conv2d",
    "maxpool3d",
    "maxpool2d",
    "relu",
    "linear",
    "residual_add",
    "depth_fold",
    "softmax_xent",
    "dropout",
];

/// Runs the per-operation check suite for the named ops.
pub fn op_suite(ops: &[&str], h: f64, tolerance: f64, seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut reports = Vec::new();
    for &op in ops {
        let mut rng =
            Rng::new(seed).split(OP_NAMES.iter().position(|&n| n == op).unwrap_or(99) as u64);
        let report = match op {
            "conv3d" => {
                let spec = Conv3dSpec::new(2, 3, 3, 3, 3);
                let x = random_tensor(&[1, 2, 3, 4, 4], &mut rng);
                let w = random_tensor(&spec.weight_shape(), &mut rng);
                let b = random_tensor(&[3], &mut rng);
                let proj = random_tensor(&[1, 3, 3, 4, 4], &mut rng);
                grad_check(
                    op,
                    |g, ids| {
                        let y = g.conv3d(ids[0], ids[1], ids[2], &spec)?;
                        g.weighted_sum(y, &proj)
                    },
                    &[x, w, b],
                    h,
                    tolerance,
                )?
            }
            "conv2d" => {
                let spec = Conv2dSpec::new(2, 3, 3, 3);
                let x = random_tensor(&[2, 2, 4, 5], &mut rng);
                let w = random_tensor(&spec.weight_shape(), &mut rng);
                let b = random_tensor(&[3], &mut rng);
                let proj = random_tensor(&[2, 3, 4, 5], &mut rng);
                grad_check(
                    op,
                    |g, ids| {
                        let y = g.conv2d(ids[0], ids[1], ids[2], &spec)?;
                        g.weighted_sum(y, &proj)
                    },
                    &[x, w, b],
                    h,
                    tolerance,
                )?
            }
            "maxpool3d" => {
                let spec = PoolSpec::max3d(
                    Window::cube(2),
                    Window {
                        height: 1,
                        width: 1,
                        depth: 2,
                    },
                );
                let x = distinct_values(&[1, 2, 5, 4, 4], 0.01, &mut rng);
                let proj = random_tensor(&[1, 2, 2, 3, 3], &mut rng);
                grad_check(
                    op,
                    |g, ids| {
                        let y = g.maxpool3d(ids[0], &spec)?;
                        g.weighted_sum(y, &proj)
                    },
                    &[x],
                    h,
                    tolerance,
                )?
            }
            "maxpool2d" => {
                let spec = PoolSpec::max2d(2, 2);
                let x = distinct_values(&[2, 2, 4, 5], 0.01, &mut rng);
                let proj = random_tensor(&[2, 2, 2, 2], &mut rng);
                grad_check(
                    op,
                    |g, ids| {
                        let y = g.maxpool2d(ids[0], &spec)?;
                        g.weighted_sum(y, &proj)
                    },
                    &[x],
                    h,
                    tolerance,
                )?
            }
            "relu" => {
                let x = away_from_zero(&[3, 7], 1e-2, &mut rng);
                let proj = random_tensor(&[3, 7], &mut rng);
                grad_check(
                    op,
                    |g, ids| {
                        let y = g.relu(ids[0]);
                        g.weighted_sum(y, &proj)
                    },
                    &[x],
                    h,
                    tolerance,
                )?
            }
            "linear" => {
                let x = random_tensor(&[3, 5], &mut rng);
                let w = random_tensor(&[4, 5], &mut rng);
                let b = random_tensor(&[4], &mut rng);
                let proj = random_tensor(&[3, 4], &mut rng);
                grad_check(
                    op,
                    |g, ids| {
                        let y = g.linear(ids[0], ids[1], ids[2])?;
                        g.weighted_sum(y, &proj)
                    },
                    &[x, w, b],
                    h,
                    tolerance,
                )?
            }
            "residual_add" => {
                let shape = [2, 3, 4];
                let inputs: Vec<_> = (0..5).map(|_| random_tensor(&shape, &mut rng)).collect();
                let proj = random_tensor(&shape, &mut rng);
                grad_check(
                    op,
                    |g, ids| {
                        let y = g.residual_add(ids[0], &ids[1..])?;
                        g.weighted_sum(y, &proj)
                    },
                    &inputs,
                    h,
                    tolerance,
                )?
            }
            "depth_fold" => {
                let x = random_tensor(&[2, 2, 3, 2, 2], &mut rng);
                let proj = random_tensor(&[2, 6, 2, 2], &mut rng);
                grad_check(
                    op,
                    |g, ids| {
                        let y = g.depth_fold(ids[0])?;
                        g.weighted_sum(y, &proj)
                    },
                    &[x],
                    h,
                    tolerance,
                )?
            }
            "softmax_xent" => {
                let logits = random_tensor(&[4, 5], &mut rng);
                let labels = [0usize, 3, 4, 1];
                grad_check(
                    op,
                    |g, ids| Ok(g.softmax_xent_labels(ids[0], &labels)?.0),
                    &[logits],
                    h,
                    tolerance,
                )?
            }
            "dropout" => {
                let x = random_tensor(&[4, 6], &mut rng);
                let proj = random_tensor(&[4, 6], &mut rng);
                let mask_seed = rng.next_u64();
                grad_check(
                    op,
                    |g, ids| {
                        let mut r = Rng::new(mask_seed);
                        let y = g.dropout(ids[0], 0.4, Mode::Train, &mut r)?;
                        g.weighted_sum(y, &proj)
                    },
                    &[x],
                    h,
                    tolerance,
                )?
            }
            other => {
                return Err(crate::Error::InvalidArgument(format!(
                    "unknown op `{other}` (known: {})",
                    OP_NAMES.join(", ")
                )))
            }
        };
        reports.push(report);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes_at_default_step() {
        let reports = op_suite(OP_NAMES, 1e-5, 1e-4, 17).unwrap();
        for r in &reports {
            assert!(r.passed, "{} max rel err {:.3e}", r.name, r.max_rel_error);
            assert!(r.coordinates > 0);
        }
    }

    #[test]
    fn relu_and_softmax_are_tighter() {
        for r in op_suite(&["relu", "softmax_xent"], 1e-5, 1e-6, 5).unwrap() {
            assert!(r.passed, "{} max rel err {:.3e}", r.name, r.max_rel_error);
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // x ↦ relu(x) is checked with an input sitting exactly on the kink: the
        // analytic subgradient (0) disagrees with the central difference (0.5).
        let x = Tensor::from_f64(&[1], &[0.0]).unwrap();
        let r = grad_check(
            "kink",
            |g, ids| {
                let y = g.relu(ids[0]);
                g.weighted_sum(y, &Tensor::fill(&[1], 1.0))
            },
            &[x],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn unknown_op_is_an_error() {
        assert!(op_suite(&["softplus"], 1e-5, 1e-4, 0).is_err());
    }
}
