use serde::{Deserialize, Serialize};

use super::{Graph, Mode, NodeId, Op};
use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeometry, PoolGeometry};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Zero padding policy for stride-1 convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// `floor((k-1)/2)` before and `ceil((k-1)/2)` after, so extents are preserved.
    Same,
    Valid,
}

impl Padding {
    fn amounts(self, k: usize) -> (usize, usize) {
        match self {
            Padding::Same => {
                let lo = (k - 1) / 2;
                (lo, k - 1 - lo)
            }
            Padding::Valid => (0, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Kernel3d {
    pub height: usize,
    pub width: usize,
    /// Spectral extent.
    pub depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Kernel2d {
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv3dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Kernel3d,
    pub padding: Padding,
}

impl Conv3dSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        height: usize,
        width: usize,
        depth: usize,
    ) -> Self {
        Conv3dSpec {
            in_channels,
            out_channels,
            kernel: Kernel3d {
                height,
                width,
                depth,
            },
            padding: Padding::Same,
        }
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    /// `(out_channels, in_channels, depth, height, width)`.
    pub fn weight_shape(&self) -> [usize; 5] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel.depth,
            self.kernel.height,
            self.kernel.width,
        ]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel.depth * self.kernel.height * self.kernel.width
    }

    pub fn geometry(&self) -> ConvGeometry {
        let k = [self.kernel.depth, self.kernel.height, self.kernel.width];
        let pads = k.map(|k| self.padding.amounts(k));
        ConvGeometry {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: k,
            pad_lo: pads.map(|p| p.0),
            pad_hi: pads.map(|p| p.1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Kernel2d,
    pub padding: Padding,
}

impl Conv2dSpec {
    pub fn new(in_channels: usize, out_channels: usize, height: usize, width: usize) -> Self {
        Conv2dSpec {
            in_channels,
            out_channels,
            kernel: Kernel2d { height, width },
            padding: Padding::Same,
        }
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    /// `(out_channels, in_channels, height, width)`.
    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel.height,
            self.kernel.width,
        ]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel.height * self.kernel.width
    }

    pub fn geometry(&self) -> ConvGeometry {
        let (hl, hh) = self.padding.amounts(self.kernel.height);
        let (wl, wh) = self.padding.amounts(self.kernel.width);
        ConvGeometry {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: [1, self.kernel.height, self.kernel.width],
            pad_lo: [0, hl, wl],
            pad_hi: [0, hh, wh],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max2d,
    Max3d,
}

/// Per-axis extents for pooling windows and strides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub height: usize,
    pub width: usize,
    pub depth: usize,
}

impl Window {
    pub fn cube(k: usize) -> Self {
        Window {
            height: k,
            width: k,
            depth: k,
        }
    }

    pub fn planar(k: usize) -> Self {
        Window {
            height: k,
            width: k,
            depth: 1,
        }
    }

    fn as_dhw(self) -> [usize; 3] {
        [self.depth, self.height, self.width]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kind: PoolKind,
    pub kernel: Window,
    pub stride: Window,
}

impl PoolSpec {
    pub fn max3d(kernel: Window, stride: Window) -> Self {
        PoolSpec {
            kind: PoolKind::Max3d,
            kernel,
            stride,
        }
    }

    pub fn max2d(kernel: usize, stride: usize) -> Self {
        PoolSpec {
            kind: PoolKind::Max2d,
            kernel: Window::planar(kernel),
            stride: Window::planar(stride),
        }
    }

    pub fn geometry(&self) -> PoolGeometry {
        PoolGeometry {
            kernel: self.kernel.as_dhw(),
            stride: self.stride.as_dhw(),
        }
    }

    /// `floor((in - kernel) / stride) + 1` per axis, `(depth, height, width)`.
    pub fn output_extent(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.geometry().output_extent(input)
    }
}

fn expect_shape(what: &str, got: &[usize], want: &[usize]) -> Result<()> {
    if got != want {
        return Err(Error::ShapeMismatch(format!(
            "{what}: expected {want:?}, got {got:?}"
        )));
    }
    Ok(())
}

impl<F: Scalar> Graph<F> {
    /// Stride-1 3D convolution of `x: [B, C, D, H, W]` (pre-activation).
    pub fn conv3d(&mut self, x: NodeId, w: NodeId, b: NodeId, spec: &Conv3dSpec) -> Result<NodeId> {
        let shape = self.value(x).shape().to_vec();
        if shape.len() != 5 {
            return Err(Error::ShapeMismatch(format!(
                "conv3d expects 5 axes, got {shape:?}"
            )));
        }
        if shape[1] != spec.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "conv3d channel mismatch: input has {}, spec expects {}",
                shape[1], spec.in_channels
            )));
        }
        expect_shape("conv3d weight", self.value(w).shape(), &spec.weight_shape())?;
        expect_shape("conv3d bias", self.value(b).shape(), &[spec.out_channels])?;
        let input = [shape[2], shape[3], shape[4]];
        self.conv_impl(x, w, b, spec.geometry(), shape[0], input, |out| {
            vec![shape[0], spec.out_channels, out[0], out[1], out[2]]
        })
    }

    /// Stride-1 2D convolution of `x: [B, C, H, W]` (pre-activation).
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, spec: &Conv2dSpec) -> Result<NodeId> {
        let shape = self.value(x).shape().to_vec();
        if shape.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "conv2d expects 4 axes, got {shape:?}"
            )));
        }
        if shape[1] != spec.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "conv2d channel mismatch: input has {}, spec expects {}",
                shape[1], spec.in_channels
            )));
        }
        expect_shape("conv2d weight", self.value(w).shape(), &spec.weight_shape())?;
        expect_shape("conv2d bias", self.value(b).shape(), &[spec.out_channels])?;
        let input = [1, shape[2], shape[3]];
        self.conv_impl(x, w, b, spec.geometry(), shape[0], input, |out| {
            vec![shape[0], spec.out_channels, out[1], out[2]]
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_impl(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geom: ConvGeometry,
        batch: usize,
        input: [usize; 3],
        out_shape: impl Fn([usize; 3]) -> Vec<usize>,
    ) -> Result<NodeId> {
        let (y, out) = kernels::conv_forward(
            self.value(x).data(),
            batch,
            input,
            self.value(w).data(),
            self.value(b).data(),
            &geom,
        )?;
        let value = Tensor::from_vec(&out_shape(out), y)?;
        Ok(self.push(
            value,
            Op::Conv {
                x,
                w,
                b,
                geom,
                batch,
                input,
            },
            false,
        ))
    }

    /// `max(0, v)`; the gradient at exactly zero is zero.
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self
            .value(x)
            .map(|v| if v > F::zero() { v } else { F::zero() });
        self.push(value, Op::Relu { x }, false)
    }

    /// Max pooling. `Max3d` takes `[B, C, D, H, W]`, `Max2d` takes `[B, C, H, W]`.
    pub fn maxpool(&mut self, x: NodeId, spec: &PoolSpec) -> Result<NodeId> {
        let shape = self.value(x).shape().to_vec();
        let (planes, input) = match (spec.kind, shape.len()) {
            (PoolKind::Max3d, 5) => (shape[0] * shape[1], [shape[2], shape[3], shape[4]]),
            (PoolKind::Max2d, 4) => {
                if spec.kernel.depth != 1 || spec.stride.depth != 1 {
                    return Err(Error::InvalidArgument(
                        "2D pooling window must have depth 1".into(),
                    ));
                }
                (shape[0] * shape[1], [1, shape[2], shape[3]])
            }
            (kind, _) => {
                return Err(Error::ShapeMismatch(format!(
                    "{kind:?} pooling on input {shape:?}"
                )));
            }
        };
        let (values, argmax, out) =
            kernels::maxpool_forward(self.value(x).data(), planes, input, &spec.geometry())?;
        let out_shape = match spec.kind {
            PoolKind::Max3d => vec![shape[0], shape[1], out[0], out[1], out[2]],
            PoolKind::Max2d => vec![shape[0], shape[1], out[1], out[2]],
        };
        let value = Tensor::from_vec(&out_shape, values)?;
        Ok(self.push(value, Op::MaxPool { x, argmax }, false))
    }

    pub fn maxpool3d(&mut self, x: NodeId, spec: &PoolSpec) -> Result<NodeId> {
        if spec.kind != PoolKind::Max3d {
            return Err(Error::InvalidArgument(
                "maxpool3d needs a Max3d spec".into(),
            ));
        }
        self.maxpool(x, spec)
    }

    pub fn maxpool2d(&mut self, x: NodeId, spec: &PoolSpec) -> Result<NodeId> {
        if spec.kind != PoolKind::Max2d {
            return Err(Error::InvalidArgument(
                "maxpool2d needs a Max2d spec".into(),
            ));
        }
        self.maxpool(x, spec)
    }

    /// Fully connected layer: `x·Wᵀ + b` with `x: [B, F]`, `W: [O, F]`, `b: [O]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::ShapeMismatch(format!(
                "linear: input {xs:?}, weights {ws:?}"
            )));
        }
        expect_shape("linear bias", self.value(b).shape(), &[ws[0]])?;
        let (batch, features, outputs) = (xs[0], xs[1], ws[0]);
        let bias = self.value(b).data();
        let mut y: Vec<F> = (0..batch).flat_map(|_| bias.iter().copied()).collect();
        crate::tensor::gemm_nt(
            batch,
            outputs,
            features,
            self.value(x).data(),
            self.value(w).data(),
            &mut y,
        );
        let value = Tensor::from_vec(&[batch, outputs], y)?;
        Ok(self.push(value, Op::Linear { x, w, b }, false))
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1-rate)`.
    pub fn dropout(&mut self, x: NodeId, rate: f64, mode: Mode, rng: &mut Rng) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        let n = self.value(x).len();
        let mask: Vec<F> = if mode == Mode::Eval || rate == 0.0 {
            vec![F::one(); n]
        } else {
            let keep = F::from_f64(1.0 / (1.0 - rate));
            (0..n)
                .map(|_| {
                    if rng.uniform() < rate {
                        F::zero()
                    } else {
                        keep
                    }
                })
                .collect()
        };
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::from_vec(xv.shape(), data)?;
        Ok(self.push(value, Op::Dropout { x, mask }, false))
    }

    /// `y = x + Σ branches`.
    pub fn residual_add(&mut self, x: NodeId, branches: &[NodeId]) -> Result<NodeId> {
        let mut acc = self.value(x).clone();
        for &b in branches {
            acc.add_assign(self.value(b))?;
        }
        Ok(self.push(
            acc,
            Op::Sum {
                x,
                branches: branches.to_vec(),
            },
            false,
        ))
    }

    /// Merges the depth axis into channels: `[B, C, D, H, W] -> [B, C·D, H, W]`.
    pub fn depth_fold(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 5 {
            return Err(Error::ShapeMismatch(format!(
                "depth_fold expects 5 axes, got {s:?}"
            )));
        }
        self.reshape(x, &[s[0], s[1] * s[2], s[3], s[4]])
    }

    /// Collapses all but the batch axis.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).shape().to_vec();
        let rest = s[1..].iter().product();
        self.reshape(x, &[s[0], rest])
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }, false))
    }

    /// Mean softmax cross-entropy over the batch. Returns the scalar loss node
    /// and the softmax probabilities.
    pub fn softmax_xent(
        &mut self,
        logits: NodeId,
        truth: &Tensor<F>,
    ) -> Result<(NodeId, Tensor<F>)> {
        let shape = self.value(logits).shape().to_vec();
        if shape.len() != 2 || truth.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "softmax_xent: logits {shape:?}, truth {:?}",
                truth.shape()
            )));
        }
        let (batch, classes) = (shape[0], shape[1]);
        for (i, row) in truth.data().chunks(classes).enumerate() {
            let ones = row.iter().filter(|&&v| v == F::one()).count();
            let zeros = row.iter().filter(|&&v| v == F::zero()).count();
            if ones != 1 || ones + zeros != classes {
                return Err(Error::InvalidArgument(format!(
                    "truth row {i} is not one-hot"
                )));
            }
        }
        let mut probs = Vec::with_capacity(batch * classes);
        let mut loss = 0.0f64;
        for (z, r) in self
            .value(logits)
            .data()
            .chunks(classes)
            .zip(truth.data().chunks(classes))
        {
            let max = z
                .iter()
                .fold(F::neg_infinity(), |m, &v| if v > m { v } else { m });
            let denom: F = z.iter().map(|&v| (v - max).exp()).sum();
            let log_denom = denom.ln();
            for (&v, &t) in z.iter().zip(r) {
                let log_q = v - max - log_denom;
                probs.push(log_q.exp());
                if t == F::one() {
                    loss -= log_q.as_f64();
                }
            }
        }
        let loss = F::from_f64(loss / batch as f64);
        let probs = Tensor::from_vec(&shape, probs)?;
        let id = self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                probs: probs.clone(),
                truth: truth.clone(),
            },
            false,
        );
        Ok((id, probs))
    }

    /// Softmax cross-entropy against zero-based class indices.
    pub fn softmax_xent_labels(
        &mut self,
        logits: NodeId,
        labels: &[usize],
    ) -> Result<(NodeId, Tensor<F>)> {
        let shape = self.value(logits).shape().to_vec();
        let classes = *shape.get(1).unwrap_or(&0);
        let mut truth = Tensor::zeros(&[labels.len(), classes]);
        for (i, &l) in labels.iter().enumerate() {
            if l >= classes {
                return Err(Error::InvalidArgument(format!(
                    "label {l} out of range for {classes} classes"
                )));
            }
            truth.data_mut()[i * classes + l] = F::one();
        }
        self.softmax_xent(logits, &truth)
    }

    /// `Σ x ⊙ weights`: projects any node onto a scalar.
    pub fn weighted_sum(&mut self, x: NodeId, weights: &Tensor<F>) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape() != weights.shape() {
            return Err(Error::ShapeMismatch(format!(
                "weighted_sum: {:?} vs {:?}",
                xv.shape(),
                weights.shape()
            )));
        }
        let s: F = xv
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &b)| a * b)
            .sum();
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                x,
                weights: weights.clone(),
            },
            false,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn conv3d_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 1, 1, 1, 1], &[5.0]));
        let w = g.param(t(&[1, 1, 1, 1, 1], &[1.0]));
        let b = g.param(t(&[1], &[0.0]));
        let y = g.conv3d(x, w, b, &Conv3dSpec::new(1, 1, 1, 1, 1)).unwrap();
        assert_eq!(g.value(y).data(), &[5.0]);

        let x = g.constant(Tensor::fill(&[1, 1, 2, 2, 2], 1.0));
        let w = g.param(Tensor::fill(&[1, 1, 2, 2, 2], 1.0));
        let spec = Conv3dSpec::new(1, 1, 2, 2, 2).with_padding(Padding::Valid);
        let y = g.conv3d(x, w, b, &spec).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 1, 1]);
        assert_eq!(g.value(y).data(), &[8.0]);

        let x = g.constant(Tensor::fill(&[1, 2, 3, 3, 3], 0.7));
        let spec = Conv3dSpec::new(2, 2, 3, 3, 3);
        let w = g.param(Tensor::zeros(&spec.weight_shape()));
        let b3 = g.param(t(&[2], &[3.0, 3.0]));
        let y = g.conv3d(x, w, b3, &spec).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 3.0));
        assert_eq!(g.value(y).shape(), &[1, 2, 3, 3, 3]);
    }

    #[test]
    fn conv3d_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 3, 3, 3]));
        let spec = Conv3dSpec::new(1, 1, 1, 1, 1);
        let w = g.param(Tensor::zeros(&spec.weight_shape()));
        let b = g.param(Tensor::zeros(&[1]));
        assert!(matches!(
            g.conv3d(x, w, b, &spec),
            Err(Error::ShapeMismatch(_))
        ));

        let x = g.constant(Tensor::zeros(&[1, 1, 2, 2, 2]));
        let spec = Conv3dSpec::new(1, 1, 3, 3, 3).with_padding(Padding::Valid);
        let w = g.param(Tensor::zeros(&spec.weight_shape()));
        assert!(g.conv3d(x, w, b, &spec).is_err());
    }

    #[test]
    fn conv2d_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 1, 2, 2], &[1., 2., 3., 4.]));
        let w = g.param(t(&[1, 1, 1, 1], &[1.]));
        let b = g.param(t(&[1], &[0.]));
        let y = g.conv2d(x, w, b, &Conv2dSpec::new(1, 1, 1, 1)).unwrap();
        assert_eq!(g.value(y).data(), &[1., 2., 3., 4.]);

        let w = g.param(Tensor::fill(&[1, 1, 2, 2], 1.0));
        let spec = Conv2dSpec::new(1, 1, 2, 2).with_padding(Padding::Valid);
        let y = g.conv2d(x, w, b, &spec).unwrap();
        assert_eq!(g.value(y).data(), &[10.]);

        let x = g.constant(Tensor::zeros(&[2, 1, 3, 3]));
        let w = g.param(Tensor::zeros(&[1, 1, 3, 3]));
        let bneg = g.param(t(&[1], &[-1.]));
        let y = g.conv2d(x, w, bneg, &Conv2dSpec::new(1, 1, 3, 3)).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == -1.0));
        let r = g.relu(y);
        assert!(g.value(r).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_padding_preserves_extents() {
        let mut g = Graph::<f32>::new();
        for (h, w, d) in [(3, 3, 7), (3, 3, 5), (1, 1, 1), (2, 4, 3)] {
            let x = g.constant(Tensor::zeros(&[1, 2, 9, 6, 5]));
            let spec = Conv3dSpec::new(2, 3, h, w, d);
            let wt = g.param(Tensor::zeros(&spec.weight_shape()));
            let b = g.param(Tensor::zeros(&[3]));
            let y = g.conv3d(x, wt, b, &spec).unwrap();
            assert_eq!(g.value(y).shape(), &[1, 3, 9, 6, 5]);
        }
    }

    #[test]
    fn conv2d_equals_depth_one_conv3d() {
        let mut rng = Rng::new(4);
        let xs: Vec<f64> = (0..2 * 3 * 5 * 6).map(|_| rng.normal()).collect();
        let ws: Vec<f64> = (0..4 * 3 * 9).map(|_| rng.normal()).collect();
        let bs: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let mut g = Graph::<f64>::new();
        let b = g.param(t(&[4], &bs));
        let x2 = g.constant(t(&[2, 3, 5, 6], &xs));
        let w2 = g.param(t(&[4, 3, 3, 3], &ws));
        let y2 = g.conv2d(x2, w2, b, &Conv2dSpec::new(3, 4, 3, 3)).unwrap();
        let x3 = g.constant(t(&[2, 3, 1, 5, 6], &xs));
        let w3 = g.param(t(&[4, 3, 1, 3, 3], &ws));
        let y3 = g
            .conv3d(x3, w3, b, &Conv3dSpec::new(3, 4, 3, 3, 1))
            .unwrap();
        assert_eq!(g.value(y2).data(), g.value(y3).data());
        let reference =
            kernels::conv2d_reference(&xs, 2, 3, [5, 6], &ws, &bs, 4, [3, 3], [1, 1], [1, 1]);
        for (a, r) in g.value(y2).data().iter().zip(&reference) {
            assert!((a - r).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[3], &[-5., 0., 7.]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0., 0., 7.]);
        let loss = g.weighted_sum(y, &Tensor::fill(&[3], 1.0)).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0., 0., 1.]);

        let x = g.param(t(&[2], &[-2., 3.]));
        let y = g.relu(x);
        let loss = g.weighted_sum(y, &Tensor::fill(&[2], 1.0)).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0., 1.]);
    }

    #[test]
    fn maxpool_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 1, 2, 2], &[1., 3., 2., 4.]));
        let y = g.maxpool2d(x, &PoolSpec::max2d(2, 2)).unwrap();
        assert_eq!(g.value(y).data(), &[4.]);

        let x = g.constant(Tensor::fill(&[1, 2, 4, 4], 1.5));
        let y = g.maxpool2d(x, &PoolSpec::max2d(2, 2)).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 1.5));

        let x = g.constant(t(&[1, 1, 4, 1, 1], &[1., 2., 3., 4.]));
        let one = Window {
            height: 1,
            width: 1,
            depth: 2,
        };
        let y = g.maxpool3d(x, &PoolSpec::max3d(one, one)).unwrap();
        assert_eq!(g.value(y).data(), &[2., 4.]);

        let x = g.constant(Tensor::zeros(&[1, 1, 1, 1]));
        assert!(g.maxpool2d(x, &PoolSpec::max2d(2, 2)).is_err());
    }

    #[test]
    fn linear_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 2], &[1., 2.]));
        let w = g.param(t(&[1, 2], &[3., 4.]));
        let b = g.param(t(&[1], &[1.]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[12.]);

        let eye = g.param(t(&[2, 2], &[1., 0., 0., 1.]));
        let zb = g.param(t(&[2], &[0., 0.]));
        let y = g.linear(x, eye, zb).unwrap();
        assert_eq!(g.value(y).data(), &[1., 2.]);

        let zx = g.constant(Tensor::zeros(&[3, 2]));
        let w = g.param(t(&[2, 2], &[1., 2., 3., 4.]));
        let bb = g.param(t(&[2], &[5., 6.]));
        let y = g.linear(zx, w, bb).unwrap();
        assert_eq!(g.value(y).data(), &[5., 6., 5., 6., 5., 6.]);

        let bad = g.param(Tensor::zeros(&[2, 3]));
        assert!(g.linear(x, bad, bb).is_err());
    }

    #[test]
    fn dropout_modes() {
        let mut g = Graph::<f64>::new();
        let mut rng = Rng::new(1);
        let x = g.constant(t(&[4], &[1., 2., 3., 4.]));
        for mode in [Mode::Train, Mode::Eval] {
            let y = g.dropout(x, 0.0, mode, &mut rng).unwrap();
            assert_eq!(g.value(y).data(), g.value(x).data());
        }
        let y = g.dropout(x, 0.4, Mode::Eval, &mut rng).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
        assert!(g.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_is_unbiased() {
        // Monte Carlo: mean of 1e5 inverted-dropout draws of x=1 at rate 0.4.
        let trials = 100_000;
        let rate = 0.4;
        let mut g = Graph::<f64>::new();
        let mut rng = Rng::new(2024);
        let x = g.constant(Tensor::fill(&[trials], 1.0));
        let y = g.dropout(x, rate, Mode::Train, &mut rng).unwrap();
        let mean = g.value(y).sum() / trials as f64;
        // each draw is 0 or 1/(1-rate); variance = rate/(1-rate)
        let sigma = (rate / (1.0 - rate) / trials as f64).sqrt();
        assert!(
            (mean - 1.0).abs() < 3.0 * sigma,
            "mean {mean}, sigma {sigma}"
        );

        let mut rng_a = Rng::new(7);
        let mut rng_b = Rng::new(7);
        let a = g.dropout(x, rate, Mode::Train, &mut rng_a).unwrap();
        let b = g.dropout(x, rate, Mode::Train, &mut rng_b).unwrap();
        assert_eq!(g.value(a).data(), g.value(b).data());
    }

    #[test]
    fn residual_add_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.5, -2.]));
        let z = g.constant(Tensor::zeros(&[2]));
        let y = g.residual_add(x, &[z, z, z, z]).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());

        let x0 = g.constant(t(&[1], &[0.]));
        let branches: Vec<_> = [1., 2., 3., 4.]
            .iter()
            .map(|&v| g.constant(t(&[1], &[v])))
            .collect();
        let y = g.residual_add(x0, &branches).unwrap();
        assert_eq!(g.value(y).data(), &[10.]);

        let neg = g.constant(t(&[2], &[-1.5, 2.]));
        let y = g.residual_add(x, &[neg]).unwrap();
        assert_eq!(g.value(y).data(), &[0., 0.]);

        let upstream = t(&[2], &[0.25, -3.0]);
        let loss = g.weighted_sum(y, &upstream).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &upstream);

        let bad = g.constant(Tensor::zeros(&[3]));
        assert!(g.residual_add(x, &[bad]).is_err());
    }

    #[test]
    fn depth_fold_orders_channels_major() {
        let mut g = Graph::<f64>::new();
        let vals: Vec<f64> = (0..2 * 3 * 2 * 2).map(|v| v as f64).collect();
        let x = g.param(t(&[1, 2, 3, 2, 2], &vals));
        let y = g.depth_fold(x).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 6, 2, 2]);
        // channel k of the fold is (c = k / 3, d = k % 3)
        for k in 0..6 {
            let (c, d) = (k / 3, k % 3);
            assert_eq!(
                g.value(y).get(&[0, k, 1, 0]),
                g.value(x).get(&[0, c, d, 1, 0])
            );
        }
        let upstream =
            Tensor::from_vec(&[1, 6, 2, 2], vals.iter().map(|v| v * 2.0).collect()).unwrap();
        let loss = g.weighted_sum(y, &upstream).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), upstream.data());
        assert_eq!(grads.get(x).unwrap().shape(), &[1, 2, 3, 2, 2]);

        let single = g.param(t(&[1, 1, 1, 1, 2], &[4., 5.]));
        let y = g.depth_fold(single).unwrap();
        assert_eq!(g.value(y).data(), &[4., 5.]);
    }

    #[test]
    fn softmax_xent_examples() {
        let mut g = Graph::<f64>::new();
        let logits = g.param(t(&[1, 3], &[50., 0., 0.]));
        let (loss, probs) = g.softmax_xent_labels(logits, &[0]).unwrap();
        assert!(g.value(loss).data()[0] < 1e-6);
        assert!((probs.sum() - 1.0).abs() < 1e-12);

        let logits = g.param(Tensor::fill(&[1, 16], 0.3));
        let (loss, _) = g.softmax_xent_labels(logits, &[5]).unwrap();
        assert!((g.value(loss).data()[0] - 16f64.ln()).abs() < 1e-12);

        let a = [0.2, -1.0, 0.7];
        let b = [1.5, 0.1, -0.4];
        let single = |g: &mut Graph<f64>, v: &[f64], l: usize| {
            let n = g.param(t(&[1, 3], v));
            let (loss, _) = g.softmax_xent_labels(n, &[l]).unwrap();
            g.value(loss).data()[0]
        };
        let la = single(&mut g, &a, 2);
        let lb = single(&mut g, &b, 0);
        let both = g.param(t(&[2, 3], &[a, b].concat()));
        let (loss, _) = g.softmax_xent_labels(both, &[2, 0]).unwrap();
        assert!((g.value(loss).data()[0] - (la + lb) / 2.0).abs() < 1e-12);

        let not_one_hot = t(&[2, 3], &[1., 1., 0., 0., 0., 1.]);
        assert!(g.softmax_xent(both, &not_one_hot).is_err());
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut g = Graph::<f64>::new();
        let z = [0.3, -2.0, 1.25, 0.0];
        let a = g.param(t(&[1, 4], &z));
        let shifted: Vec<f64> = z.iter().map(|v| v + 123.0).collect();
        let b = g.param(t(&[1, 4], &shifted));
        let (la, pa) = g.softmax_xent_labels(a, &[1]).unwrap();
        let (lb, _) = g.softmax_xent_labels(b, &[1]).unwrap();
        assert!((g.value(la).data()[0] - g.value(lb).data()[0]).abs() < 1e-9);
        assert!((pa.sum() - 1.0).abs() < 1e-6);
    }
}
