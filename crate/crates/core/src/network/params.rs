use serde::Serialize;

use super::{Layer, NetworkSpec};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Named parameter tensors in canonical order.
///
/// Order follows the layer list; within a layer it is weight then bias, and
/// block paths are stored path by path (reduce, then expand).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F: Scalar = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Glorot-normal weights, `std = sqrt(2 / (fan_in + fan_out))` with the
    /// receptive field counted in both fans; zero biases.
    pub fn init(net: &NetworkSpec, rng: &mut Rng) -> Self {
        let mut store = ParamStore::new();
        for (name, shape) in net.param_shapes() {
            let n: usize = shape.iter().product();
            let tensor = if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else {
                let field: usize = shape[2..].iter().product();
                let (fan_in, fan_out) = (shape[1] * field, shape[0] * field);
                let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..n).map(|_| F::from_f64(std * rng.normal())).collect();
                Tensor::from_vec(&shape, data).expect("shape")
            };
            store
                .insert(name, tensor)
                .expect("canonical names are unique");
        }
        store
    }

    /// All-zero parameters with the network's shapes.
    pub fn zeros(net: &NetworkSpec) -> Self {
        let mut store = ParamStore::new();
        for (name, shape) in net.param_shapes() {
            store
                .insert(name, Tensor::zeros(&shape))
                .expect("canonical names are unique");
        }
        store
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> Result<()> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter `{name}`"
            )));
        }
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalars.
    pub fn total(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn convert<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::convert).collect(),
        }
    }

    /// Checks names and shapes against the network's canonical list.
    pub fn check_against(&self, net: &NetworkSpec) -> Result<()> {
        let expected = net.param_shapes();
        if expected.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} parameter tensors, store has {}",
                expected.len(),
                self.len()
            )));
        }
        for ((name, shape), (have, t)) in expected.iter().zip(self.iter()) {
            if name != have || shape.as_slice() != t.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "expected parameter `{name}` {shape:?}, found `{have}` {:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        ParamStore::new()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub total: usize,
    /// `(layer, parameters)` for every parametrized layer, in order.
    pub per_layer: Vec<(String, usize)>,
}

/// Trainable parameter count of `net`, from layer shapes alone.
pub fn count_parameters(net: &NetworkSpec) -> ParamCount {
    let per_layer: Vec<(String, usize)> = net
        .layers
        .iter()
        .filter_map(|layer| {
            let n: usize = layer
                .param_shapes()
                .iter()
                .map(|(_, s)| s.iter().product::<usize>())
                .sum();
            match layer {
                Layer::Conv3d { .. }
                | Layer::Conv2d { .. }
                | Layer::Block { .. }
                | Layer::Linear { .. } => Some((layer.label(), n)),
                _ => None,
            }
        })
        .collect();
    ParamCount {
        total: per_layer.iter().map(|(_, n)| n).sum(),
        per_layer,
    }
}
