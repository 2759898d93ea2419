use super::{BlockDims, Layer, NetworkSpec, ParamStore};
use crate::autodiff::{Graph, Mode, NodeId};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Hands out parameter nodes in canonical order, checking names as it goes.
struct Cursor<'a> {
    names: Vec<String>,
    ids: &'a [NodeId],
    pos: usize,
}

impl Cursor<'_> {
    fn next(&mut self, name: &str) -> Result<NodeId> {
        match (self.names.get(self.pos), self.ids.get(self.pos)) {
            (Some(n), Some(&id)) if n == name => {
                self.pos += 1;
                Ok(id)
            }
            _ => Err(Error::ShapeMismatch(format!(
                "parameter `{name}` missing at position {}",
                self.pos
            ))),
        }
    }
}

/// Records the forward pass on `g`. `params` are leaf ids in canonical order
/// (see [`NetworkSpec::param_shapes`]); `x` is `[B, 1, T, S, S]`. Returns the
/// logits node `[B, classes]`.
pub fn forward_graph<F: Scalar>(
    net: &NetworkSpec,
    g: &mut Graph<F>,
    params: &[NodeId],
    x: NodeId,
    mode: Mode,
    rng: &mut Rng,
) -> Result<NodeId> {
    let shape = g.value(x).shape().to_vec();
    let [c, t, h, w] = net.input_shape();
    if shape.len() != 5 || shape[1..] != [c, t, h, w] {
        return Err(Error::ShapeMismatch(format!(
            "network expects input [B, {c}, {t}, {h}, {w}], got {shape:?}"
        )));
    }
    let mut cur = Cursor {
        names: net.param_shapes().into_iter().map(|(n, _)| n).collect(),
        ids: params,
        pos: 0,
    };
    if cur.names.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "network has {} parameter tensors, got {}",
            cur.names.len(),
            params.len()
        )));
    }
    let mut h = x;
    for layer in &net.layers {
        h = match layer {
            Layer::Conv3d { name, spec } => {
                let (wt, b) = (
                    cur.next(&format!("{name}.weight"))?,
                    cur.next(&format!("{name}.bias"))?,
                );
                g.conv3d(h, wt, b, spec)?
            }
            Layer::Conv2d { name, spec } => {
                let (wt, b) = (
                    cur.next(&format!("{name}.weight"))?,
                    cur.next(&format!("{name}.bias"))?,
                );
                g.conv2d(h, wt, b, spec)?
            }
            Layer::Relu => g.relu(h),
            Layer::Pool { spec, .. } => g.maxpool(h, spec)?,
            Layer::Block { name, spec } => {
                let mut paths = Vec::with_capacity(spec.cardinality);
                for p in 0..spec.cardinality {
                    let rw = cur.next(&format!("{name}.path{p}.reduce.weight"))?;
                    let rb = cur.next(&format!("{name}.path{p}.reduce.bias"))?;
                    let ew = cur.next(&format!("{name}.path{p}.expand.weight"))?;
                    let eb = cur.next(&format!("{name}.path{p}.expand.bias"))?;
                    let a = match spec.dims {
                        BlockDims::ThreeD => {
                            let a = g.conv3d(h, rw, rb, &spec.reduce_3d())?;
                            let a = g.relu(a);
                            g.conv3d(a, ew, eb, &spec.expand_3d())?
                        }
                        BlockDims::TwoD => {
                            let a = g.conv2d(h, rw, rb, &spec.reduce_2d())?;
                            let a = g.relu(a);
                            g.conv2d(a, ew, eb, &spec.expand_2d())?
                        }
                    };
                    paths.push(g.relu(a));
                }
                g.residual_add(h, &paths)?
            }
            Layer::DepthFold => g.depth_fold(h)?,
            Layer::Flatten => g.flatten(h)?,
            Layer::Linear { name, .. } => {
                let (wt, b) = (
                    cur.next(&format!("{name}.weight"))?,
                    cur.next(&format!("{name}.bias"))?,
                );
                g.linear(h, wt, b)?
            }
            Layer::Dropout { rate } => g.dropout(h, *rate, mode, rng)?,
        };
    }
    Ok(h)
}

/// Eval-mode logits `[B, classes]` for a batch `[B, 1, T, S, S]`.
pub fn forward<F: Scalar>(
    net: &NetworkSpec,
    params: &ParamStore<F>,
    x: &Tensor<F>,
) -> Result<Tensor<F>> {
    let mut g = Graph::new();
    let ids: Vec<_> = params
        .tensors()
        .iter()
        .map(|t| g.constant(t.clone()))
        .collect();
    let xin = g.constant(x.clone());
    let out = forward_graph(net, &mut g, &ids, xin, Mode::Eval, &mut Rng::new(0))?;
    let logits = g.value(out).clone();
    if !logits.all_finite() {
        return Err(Error::NonFinite(
            "forward pass produced a non-finite logit".into(),
        ));
    }
    Ok(logits)
}

/// Predicted zero-based class per sample, evaluated in chunks of `chunk`.
/// Ties go to the lowest class id.
pub fn predict<F: Scalar>(
    net: &NetworkSpec,
    params: &ParamStore<F>,
    x: &Tensor<F>,
    chunk: usize,
) -> Result<Vec<usize>> {
    let shape = x.shape();
    if shape.is_empty() {
        return Err(Error::ShapeMismatch("predict needs a batch axis".into()));
    }
    let per: usize = shape[1..].iter().product();
    let chunk = chunk.max(1);
    let mut out = Vec::with_capacity(shape[0]);
    for start in (0..shape[0]).step_by(chunk) {
        let n = chunk.min(shape[0] - start);
        let mut sub_shape = shape.to_vec();
        sub_shape[0] = n;
        let sub = Tensor::from_vec(
            &sub_shape,
            x.data()[start * per..(start + n) * per].to_vec(),
        )?;
        let logits = forward(net, params, &sub)?;
        out.extend(logits.data().chunks(net.classes()).map(argmax_row));
    }
    Ok(out)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_row<F: Scalar>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
