//! The MixedSN layer graph.
//!
//! A network is a flat list of [`Layer`]s executed in order. Residual
//! branching only happens inside [`ResNeXtBlockSpec`] layers, where the block
//! input is added to the sum of `cardinality` bottleneck paths.
//!
//! Default IP-profile layout (input `1 × 30 × 25 × 25`, 16 classes):
//!
//! ```text
//! stem        conv 3×3×7, 8          + ReLU      8×30×25×25
//! pool1       max 2×2×2, stride 1                8×29×24×24
//! scale_up1   conv 1×1×1, 16         + ReLU     16×29×24×24
//! block1      4 × (1×1×1,4 → 3×3×5,16)          16×29×24×24
//! pool2       max 2×2×2, stride (H1,W1,D2)      16×14×23×23
//! scale_up2   conv 1×1×1, 32         + ReLU     32×14×23×23
//! block2      4 × (1×1×1,8 → 3×3×3,32)          32×14×23×23
//! pool3       max 2×2×2, stride (H1,W1,D2)      32×7×22×22
//! fold        depth into channels              224×22×22
//! scale_down1 conv 1×1, 64           + ReLU     64×22×22
//! block3      4 × (1×1,16 → 3×3,64)             64×22×22
//! pool4       max 2×2, stride 2                 64×11×11
//! block4      4 × (1×1,16 → 3×3,64)             64×11×11
//! pool5       max 2×2, stride 2                 64×5×5
//! scale_down2 conv 1×1, 32           + ReLU     32×5×5
//! fc1 800→192 + ReLU + dropout, fc2 192→128 + ReLU + dropout, fc3 128→16
//! ```
//!
//! This layout has 321,488 trainable parameters.

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointManifest, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use forward::{argmax_row, forward, forward_graph, predict};
pub use params::{count_parameters, ParamCount, ParamStore};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Conv2dSpec, Conv3dSpec, Kernel3d, PoolSpec, Window};
use crate::error::{Error, Result};

/// Published parameter total for the IP configuration.
pub const REFERENCE_IP_PARAMETERS: usize = 332_864;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Ip,
    Pu,
    Sa,
    Bw,
    Custom,
}

impl Profile {
    /// Spectral bands kept after PCA.
    pub fn default_bands(self) -> Option<usize> {
        match self {
            Profile::Ip => Some(30),
            Profile::Pu | Profile::Sa => Some(15),
            Profile::Bw => Some(13),
            Profile::Custom => None,
        }
    }

    pub fn default_classes(self) -> Option<usize> {
        match self {
            Profile::Ip | Profile::Sa => Some(16),
            Profile::Pu => Some(9),
            Profile::Bw => Some(14),
            Profile::Custom => None,
        }
    }

    pub fn default_dropout(self) -> f64 {
        match self {
            Profile::Bw => 0.45,
            _ => 0.40,
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ip" => Ok(Profile::Ip),
            "pu" => Ok(Profile::Pu),
            "sa" => Ok(Profile::Sa),
            "bw" => Ok(Profile::Bw),
            "custom" => Ok(Profile::Custom),
            other => Err(Error::InvalidArgument(format!("unknown profile `{other}`"))),
        }
    }
}

/// Channel widths of every stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widths {
    pub stem: usize,
    pub block1: usize,
    pub block1_bottleneck: usize,
    pub block2: usize,
    pub block2_bottleneck: usize,
    pub block2d: usize,
    pub block2d_bottleneck: usize,
    pub scale_down: usize,
    pub fc1: usize,
    pub fc2: usize,
}

impl Default for Widths {
    fn default() -> Self {
        Widths {
            stem: 8,
            block1: 16,
            block1_bottleneck: 4,
            block2: 32,
            block2_bottleneck: 8,
            block2d: 64,
            block2d_bottleneck: 16,
            scale_down: 32,
            fc1: 192,
            fc2: 128,
        }
    }
}

impl Widths {
    /// Every width divided by `divisor`, floored at one.
    pub fn divided(self, divisor: usize) -> Self {
        let d = |v: usize| (v / divisor).max(1);
        Widths {
            stem: d(self.stem),
            block1: d(self.block1),
            block1_bottleneck: d(self.block1_bottleneck),
            block2: d(self.block2),
            block2_bottleneck: d(self.block2_bottleneck),
            block2d: d(self.block2d),
            block2d_bottleneck: d(self.block2d_bottleneck),
            scale_down: d(self.scale_down),
            fc1: d(self.fc1),
            fc2: d(self.fc2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockDims {
    #[serde(rename = "3d")]
    ThreeD,
    #[serde(rename = "2d")]
    TwoD,
}

/// Residual block `y = x + Σᵢ τᵢ(x)` where each path `τᵢ` is a pointwise
/// reduction to `bottleneck` channels followed by a spatial (and, in 3D,
/// spectral) convolution back to `width` channels, each with ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResNeXtBlockSpec {
    pub dims: BlockDims,
    pub cardinality: usize,
    pub width: usize,
    pub bottleneck: usize,
    /// Kernel of each path's second convolution; `depth` is 1 for 2D blocks.
    pub kernel: Kernel3d,
}

impl ResNeXtBlockSpec {
    pub fn new_3d(cardinality: usize, width: usize, bottleneck: usize, kernel: Kernel3d) -> Self {
        ResNeXtBlockSpec {
            dims: BlockDims::ThreeD,
            cardinality,
            width,
            bottleneck,
            kernel,
        }
    }

    pub fn new_2d(cardinality: usize, width: usize, bottleneck: usize, k: usize) -> Self {
        ResNeXtBlockSpec {
            dims: BlockDims::TwoD,
            cardinality,
            width,
            bottleneck,
            kernel: Kernel3d {
                height: k,
                width: k,
                depth: 1,
            },
        }
    }

    pub fn reduce_3d(&self) -> Conv3dSpec {
        Conv3dSpec::new(self.width, self.bottleneck, 1, 1, 1)
    }

    pub fn expand_3d(&self) -> Conv3dSpec {
        Conv3dSpec::new(
            self.bottleneck,
            self.width,
            self.kernel.height,
            self.kernel.width,
            self.kernel.depth,
        )
    }

    pub fn reduce_2d(&self) -> Conv2dSpec {
        Conv2dSpec::new(self.width, self.bottleneck, 1, 1)
    }

    pub fn expand_2d(&self) -> Conv2dSpec {
        Conv2dSpec::new(
            self.bottleneck,
            self.width,
            self.kernel.height,
            self.kernel.width,
        )
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.cardinality == 0 || self.width == 0 || self.bottleneck == 0 {
            return Err(Error::InvalidArgument(format!(
                "block `{name}` needs positive cardinality, width and bottleneck"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv3d {
        name: String,
        spec: Conv3dSpec,
    },
    Conv2d {
        name: String,
        spec: Conv2dSpec,
    },
    Relu,
    Pool {
        name: String,
        spec: PoolSpec,
    },
    Block {
        name: String,
        spec: ResNeXtBlockSpec,
    },
    DepthFold,
    Flatten,
    Linear {
        name: String,
        in_features: usize,
        out_features: usize,
    },
    Dropout {
        rate: f64,
    },
}

impl Layer {
    pub fn label(&self) -> String {
        match self {
            Layer::Conv3d { name, .. }
            | Layer::Conv2d { name, .. }
            | Layer::Pool { name, .. }
            | Layer::Block { name, .. }
            | Layer::Linear { name, .. } => name.clone(),
            Layer::Relu => "relu".into(),
            Layer::DepthFold => "depth_fold".into(),
            Layer::Flatten => "flatten".into(),
            Layer::Dropout { .. } => "dropout".into(),
        }
    }

    /// Parameter tensors in canonical order: `(name, shape)`.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            Layer::Conv3d { name, spec } => vec![
                (format!("{name}.weight"), spec.weight_shape().to_vec()),
                (format!("{name}.bias"), vec![spec.out_channels]),
            ],
            Layer::Conv2d { name, spec } => vec![
                (format!("{name}.weight"), spec.weight_shape().to_vec()),
                (format!("{name}.bias"), vec![spec.out_channels]),
            ],
            Layer::Block { name, spec } => (0..spec.cardinality)
                .flat_map(|p| {
                    let (rw, ew) = match spec.dims {
                        BlockDims::ThreeD => (
                            spec.reduce_3d().weight_shape().to_vec(),
                            spec.expand_3d().weight_shape().to_vec(),
                        ),
                        BlockDims::TwoD => (
                            spec.reduce_2d().weight_shape().to_vec(),
                            spec.expand_2d().weight_shape().to_vec(),
                        ),
                    };
                    vec![
                        (format!("{name}.path{p}.reduce.weight"), rw),
                        (format!("{name}.path{p}.reduce.bias"), vec![spec.bottleneck]),
                        (format!("{name}.path{p}.expand.weight"), ew),
                        (format!("{name}.path{p}.expand.bias"), vec![spec.width]),
                    ]
                })
                .collect(),
            Layer::Linear {
                name,
                in_features,
                out_features,
            } => vec![
                (format!("{name}.weight"), vec![*out_features, *in_features]),
                (format!("{name}.bias"), vec![*out_features]),
            ],
            Layer::Relu
            | Layer::Pool { .. }
            | Layer::DepthFold
            | Layer::Flatten
            | Layer::Dropout { .. } => vec![],
        }
    }
}

/// Options for assembling a MixedSN network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedSnConfig {
    pub profile: Profile,
    pub classes: usize,
    pub bands: usize,
    pub window: usize,
    pub cardinality: usize,
    pub widths: Widths,
    pub dropout: f64,
}

/// Smallest spectral depth accepted: the stem kernel's depth.
pub const MIN_BANDS: usize = 7;

impl MixedSnConfig {
    /// Preset for a dataset profile with the 25×25 window. `Custom` has no
    /// class or band preset and must be filled in by the caller.
    pub fn for_profile(profile: Profile) -> Self {
        MixedSnConfig {
            profile,
            classes: profile.default_classes().unwrap_or(2),
            bands: profile.default_bands().unwrap_or(MIN_BANDS),
            window: 25,
            cardinality: 4,
            widths: Widths::default(),
            dropout: profile.default_dropout(),
        }
    }

    /// The small configuration used for desk-scale checks: widths quartered.
    pub fn tiny(classes: usize, bands: usize, window: usize) -> Self {
        MixedSnConfig {
            profile: Profile::Custom,
            classes,
            bands,
            window,
            cardinality: 4,
            widths: Widths::default().divided(4),
            dropout: Profile::Custom.default_dropout(),
        }
    }
}

/// Declarative network: input geometry plus the ordered layer list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub config: MixedSnConfig,
    pub layers: Vec<Layer>,
}

/// One row of a [`shape_trace`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub layer: String,
    /// Per-sample output shape (batch axis omitted).
    pub shape: Vec<usize>,
    pub parameters: usize,
    /// True when the layer shrank at least one extent.
    pub reduces: bool,
}

impl NetworkSpec {
    pub fn input_shape(&self) -> [usize; 4] {
        [1, self.config.bands, self.config.window, self.config.window]
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    pub fn dropout(&self) -> f64 {
        self.config.dropout
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.layers.iter().flat_map(Layer::param_shapes).collect()
    }

    /// Assembles the MixedSN layer list for `config`.
    pub fn mixedsn(config: MixedSnConfig) -> Result<Self> {
        let MixedSnConfig {
            classes,
            bands,
            window,
            cardinality,
            widths: w,
            dropout,
            ..
        } = config;
        if window % 2 == 0 || window == 0 {
            return Err(Error::InvalidArgument(format!(
                "window size must be odd, got {window}"
            )));
        }
        if bands < MIN_BANDS {
            return Err(Error::InvalidArgument(format!(
                "{bands} bands is fewer than the stem kernel depth {MIN_BANDS}"
            )));
        }
        if classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {dropout} outside [0, 1)"
            )));
        }

        let spectral_stride = Window {
            height: 1,
            width: 1,
            depth: 2,
        };
        let pool = |name: &str, spec: PoolSpec| Layer::Pool {
            name: name.into(),
            spec,
        };
        let conv3 = |name: &str, spec: Conv3dSpec| Layer::Conv3d {
            name: name.into(),
            spec,
        };
        let conv2 = |name: &str, spec: Conv2dSpec| Layer::Conv2d {
            name: name.into(),
            spec,
        };
        let block = |name: &str, spec: ResNeXtBlockSpec| Layer::Block {
            name: name.into(),
            spec,
        };
        let mut layers = vec![
            conv3("stem", Conv3dSpec::new(1, w.stem, 3, 3, 7)),
            Layer::Relu,
            pool("pool1", PoolSpec::max3d(Window::cube(2), Window::cube(1))),
            conv3("scale_up1", Conv3dSpec::new(w.stem, w.block1, 1, 1, 1)),
            Layer::Relu,
            block(
                "block1",
                ResNeXtBlockSpec::new_3d(
                    cardinality,
                    w.block1,
                    w.block1_bottleneck,
                    Kernel3d {
                        height: 3,
                        width: 3,
                        depth: 5,
                    },
                ),
            ),
            pool("pool2", PoolSpec::max3d(Window::cube(2), spectral_stride)),
            conv3("scale_up2", Conv3dSpec::new(w.block1, w.block2, 1, 1, 1)),
            Layer::Relu,
            block(
                "block2",
                ResNeXtBlockSpec::new_3d(
                    cardinality,
                    w.block2,
                    w.block2_bottleneck,
                    Kernel3d {
                        height: 3,
                        width: 3,
                        depth: 3,
                    },
                ),
            ),
            pool("pool3", PoolSpec::max3d(Window::cube(2), spectral_stride)),
            Layer::DepthFold,
        ];

        // Channel count after the fold depends on the spectral extent left.
        let folded = trace_layers(&layers, [1, bands, window, window])?
            .last()
            .map(|r| r.shape.clone())
            .expect("non-empty");
        layers.extend([
            conv2("scale_down1", Conv2dSpec::new(folded[0], w.block2d, 1, 1)),
            Layer::Relu,
            block(
                "block3",
                ResNeXtBlockSpec::new_2d(cardinality, w.block2d, w.block2d_bottleneck, 3),
            ),
            pool("pool4", PoolSpec::max2d(2, 2)),
            block(
                "block4",
                ResNeXtBlockSpec::new_2d(cardinality, w.block2d, w.block2d_bottleneck, 3),
            ),
            pool("pool5", PoolSpec::max2d(2, 2)),
            conv2(
                "scale_down2",
                Conv2dSpec::new(w.block2d, w.scale_down, 1, 1),
            ),
            Layer::Relu,
            Layer::Flatten,
        ]);
        let flat = trace_layers(&layers, [1, bands, window, window])?
            .last()
            .map(|r| r.shape[0])
            .expect("non-empty");
        layers.extend([
            Layer::Linear {
                name: "fc1".into(),
                in_features: flat,
                out_features: w.fc1,
            },
            Layer::Relu,
            Layer::Dropout { rate: dropout },
            Layer::Linear {
                name: "fc2".into(),
                in_features: w.fc1,
                out_features: w.fc2,
            },
            Layer::Relu,
            Layer::Dropout { rate: dropout },
            Layer::Linear {
                name: "fc3".into(),
                in_features: w.fc2,
                out_features: classes,
            },
        ]);
        for layer in &layers {
            if let Layer::Block { name, spec } = layer {
                spec.validate(name)?;
            }
        }
        Ok(NetworkSpec { config, layers })
    }

    pub fn pools(&self) -> Vec<&PoolSpec> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Pool { spec, .. } => Some(spec),
                _ => None,
            })
            .collect()
    }
}

/// Assembles the network for a dataset profile and initializes parameters.
pub fn build_mixedsn(
    profile: Profile,
    classes: usize,
    bands: usize,
    window: usize,
    seed: u64,
) -> Result<(NetworkSpec, ParamStore<f32>)> {
    let config = MixedSnConfig {
        classes,
        bands,
        window,
        ..MixedSnConfig::for_profile(profile)
    };
    let net = NetworkSpec::mixedsn(config)?;
    let params = ParamStore::init(&net, &mut crate::rng::Rng::new(seed));
    Ok((net, params))
}

/// Per-layer output shapes for a per-sample input `[channels, depth, height, width]`.
pub fn shape_trace(net: &NetworkSpec, input: [usize; 4]) -> Result<Vec<TraceRow>> {
    trace_layers(&net.layers, input)
}

fn trace_layers(layers: &[Layer], input: [usize; 4]) -> Result<Vec<TraceRow>> {
    let mut shape = input.to_vec();
    let mut rows = Vec::with_capacity(layers.len());
    let mismatch = |layer: &Layer, shape: &[usize], want: String| {
        Error::ShapeMismatch(format!(
            "layer `{}` expects {want}, got {shape:?}",
            layer.label()
        ))
    };
    for layer in layers {
        let before = shape.clone();
        match layer {
            Layer::Conv3d { spec, .. } => {
                if shape.len() != 4 || shape[0] != spec.in_channels {
                    return Err(mismatch(
                        layer,
                        &shape,
                        format!("[{}, D, H, W]", spec.in_channels),
                    ));
                }
                let out = spec
                    .geometry()
                    .output_extent([shape[1], shape[2], shape[3]])?;
                shape = vec![spec.out_channels, out[0], out[1], out[2]];
            }
            Layer::Conv2d { spec, .. } => {
                if shape.len() != 3 || shape[0] != spec.in_channels {
                    return Err(mismatch(
                        layer,
                        &shape,
                        format!("[{}, H, W]", spec.in_channels),
                    ));
                }
                let out = spec.geometry().output_extent([1, shape[1], shape[2]])?;
                shape = vec![spec.out_channels, out[1], out[2]];
            }
            Layer::Block { spec, .. } => {
                let rank = match spec.dims {
                    BlockDims::ThreeD => 4,
                    BlockDims::TwoD => 3,
                };
                if shape.len() != rank || shape[0] != spec.width {
                    return Err(mismatch(layer, &shape, format!("{} channels", spec.width)));
                }
            }
            Layer::Pool { name, spec } => {
                let extents = match shape.len() {
                    4 => [shape[1], shape[2], shape[3]],
                    3 => [1, shape[1], shape[2]],
                    _ => return Err(mismatch(layer, &shape, "a feature volume".into())),
                };
                let geom = spec.geometry();
                for a in 0..3 {
                    if geom.kernel[a] > extents[a] {
                        return Err(Error::EmptyExtent {
                            layer: name.clone(),
                            detail: format!(
                                "input extents {extents:?} (depth, height, width) are smaller than the pooling window {:?}",
                                geom.kernel
                            ),
                        });
                    }
                }
                let out = geom.output_extent(extents)?;
                shape = if shape.len() == 4 {
                    vec![shape[0], out[0], out[1], out[2]]
                } else {
                    vec![shape[0], out[1], out[2]]
                };
            }
            Layer::DepthFold => {
                if shape.len() != 4 {
                    return Err(mismatch(layer, &shape, "[C, D, H, W]".into()));
                }
                shape = vec![shape[0] * shape[1], shape[2], shape[3]];
            }
            Layer::Flatten => shape = vec![shape.iter().product()],
            Layer::Linear {
                in_features,
                out_features,
                ..
            } => {
                if shape.len() != 1 || shape[0] != *in_features {
                    return Err(mismatch(layer, &shape, format!("[{in_features}]")));
                }
                shape = vec![*out_features];
            }
            Layer::Relu | Layer::Dropout { .. } => {}
        }
        if shape.contains(&0) {
            return Err(Error::EmptyExtent {
                layer: layer.label(),
                detail: format!("output shape {shape:?}"),
            });
        }
        let reduces =
            before.len() == shape.len() && before.iter().zip(&shape).skip(1).any(|(a, b)| b < a);
        rows.push(TraceRow {
            layer: layer.label(),
            shape,
            parameters: layer
                .param_shapes()
                .iter()
                .map(|(_, s)| s.iter().product::<usize>())
                .sum(),
            reduces,
        });
        shape = rows.last().expect("pushed").shape.clone();
    }
    Ok(rows)
}
